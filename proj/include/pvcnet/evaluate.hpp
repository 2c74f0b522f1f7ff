#pragma once

#include <string>
#include <vector>

#include "pvcnet/dataset.hpp"
#include "pvcnet/metrics.hpp"
#include "pvcnet/model.hpp"

namespace pvcnet {

// Inference probabilities over a whole database set, in record order.
inline std::vector<double> predict_probs(Model& model, const DatabaseSet& db,
                                         int batch_size = 100) {
  std::vector<double> probs;
  probs.reserve(db.size());
  const std::size_t bs = static_cast<std::size_t>(batch_size < 1 ? 1 : batch_size);
  for (std::size_t start = 0; start < db.size(); start += bs) {
    const std::size_t end = std::min(db.size(), start + bs);
    const int B = static_cast<int>(end - start);
    const int L = static_cast<int>(db.records[start].samples.size());
    Tensor x({B, 1, L});
    double* d = x.mutable_data();
    for (int b = 0; b < B; ++b) {
      const auto& s = db.records[start + b].samples;
      std::copy(s.begin(), s.end(), d + static_cast<std::size_t>(b) * L);
    }
    Tensor out = model.forward(nullptr, x, BatchNormMode::infer);
    for (int b = 0; b < B; ++b) probs.push_back(out[b]);
  }
  return probs;
}

struct EvalRow {
  std::string database;
  ConfusionMatrix cm;
  MetricsReport report;
};

struct EvalResult {
  std::vector<EvalRow> per_database;
  EvalRow overall;

  // Table shape: one row per database plus an Overall row.
  std::string csv() const {
    std::string out = "database,accuracy,sensitivity,specificity,ppv,youden\n";
    for (const EvalRow& r : per_database) out += r.database + "," + r.report.csv_row() + "\n";
    out += overall.database + "," + overall.report.csv_row() + "\n";
    return out;
  }
};

inline EvalResult evaluate(Model& model, const std::vector<DatabaseSet>& databases,
                           double threshold = 0.5, int batch_size = 100) {
  EvalResult res;
  ConfusionMatrix total;
  for (const DatabaseSet& db : databases) {
    if (db.empty()) throw Error("evaluate: database " + db.name + " is empty");
    const std::vector<double> probs = predict_probs(model, db, batch_size);
    std::vector<int> targets(db.size());
    for (std::size_t i = 0; i < db.size(); ++i) targets[i] = db.records[i].label;
    EvalRow row;
    row.database = db.name;
    row.cm = confusion(probs, targets, threshold);
    row.report = metrics(row.cm);
    total += row.cm;
    res.per_database.push_back(std::move(row));
  }
  res.overall.database = "Overall";
  res.overall.cm = total;
  res.overall.report = metrics(total);
  return res;
}

}  // namespace pvcnet
