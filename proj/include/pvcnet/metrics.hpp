#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "pvcnet/tensor.hpp"

namespace pvcnet {

struct ConfusionMatrix {
  long long tp = 0, fp = 0, tn = 0, fn = 0;

  long long total() const { return tp + fp + tn + fn; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
};

// Predict PVC iff output >= threshold (ties count as positive).
inline ConfusionMatrix confusion(const std::vector<double>& outputs,
                                 const std::vector<int>& targets, double threshold = 0.5) {
  if (outputs.size() != targets.size())
    throw Error("confusion: " + std::to_string(outputs.size()) + " outputs vs " +
                std::to_string(targets.size()) + " targets");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const bool pred = outputs[i] >= threshold;
    if (targets[i] == 1)
      pred ? cm.tp++ : cm.fn++;
    else
      pred ? cm.fp++ : cm.tn++;
  }
  return cm;
}

// Fractions in [0,1]; a field is empty when its denominator is zero (the
// report renders it as "/", never as NaN).
struct MetricsReport {
  std::optional<double> accuracy, sensitivity, specificity, ppv, youden;

  static std::string cell(const std::optional<double>& v) {
    if (!v) return "/";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *v * 100.0);
    return buf;
  }

  // One CSV row: acc, se, sp, ppv, youden as percentages with 2 decimals.
  std::string csv_row() const {
    return cell(accuracy) + "," + cell(sensitivity) + "," + cell(specificity) + "," +
           cell(ppv) + "," + cell(youden);
  }

  std::string kv_block() const {
    return "accuracy: " + cell(accuracy) + "\nsensitivity: " + cell(sensitivity) +
           "\nspecificity: " + cell(specificity) + "\nppv: " + cell(ppv) +
           "\nyouden: " + cell(youden) + "\n";
  }
};

inline MetricsReport metrics(const ConfusionMatrix& cm) {
  if (cm.total() <= 0) throw Error("metrics: empty confusion matrix");
  MetricsReport r;
  r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (cm.tp + cm.fn > 0)
    r.sensitivity = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  if (cm.tn + cm.fp > 0)
    r.specificity = static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
  if (cm.tp + cm.fp > 0)
    r.ppv = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  if (r.sensitivity && r.specificity) r.youden = *r.sensitivity + *r.specificity - 1.0;
  return r;
}

}  // namespace pvcnet
