#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pvcnet/tape.hpp"
#include "pvcnet/tensor.hpp"

namespace pvcnet {

// Probabilities are clamped into [kProbClamp, 1-kProbClamp] before any log;
// sigmoid outputs never reach the clamp, so a firing clamp flags bad inputs.
constexpr double kProbClamp = 1e-12;

struct LabeledBatch {
  std::vector<double> outputs;  // model probabilities
  std::vector<int> targets;     // 1 = PVC

  void validate() const {
    if (outputs.size() != targets.size())
      throw Error("labeled batch: " + std::to_string(outputs.size()) + " outputs vs " +
                  std::to_string(targets.size()) + " targets");
    if (outputs.empty()) throw Error("labeled batch: empty");
    for (int t : targets)
      if (t != 0 && t != 1) throw Error("labeled batch: targets must be 0 or 1");
  }
};

struct ClassWeights {
  double pvc = 1.0;
  double non_pvc = 1.0;
};

// Per-batch weight of each class: one minus its share of the batch. For a
// two-class batch the weights sum to 1; an absent class gets weight 1 (unused).
inline ClassWeights class_weights(const std::vector<int>& targets) {
  if (targets.empty()) throw Error("class_weights: empty batch");
  std::size_t n_pvc = 0;
  for (int t : targets) n_pvc += t == 1 ? 1 : 0;
  const double n = static_cast<double>(targets.size());
  return {1.0 - static_cast<double>(n_pvc) / n,
          1.0 - static_cast<double>(targets.size() - n_pvc) / n};
}

namespace detail {

inline double clamp_prob(double p, bool* clamped) {
  if (p < kProbClamp) {
    if (clamped) *clamped = true;
    return kProbClamp;
  }
  if (p > 1.0 - kProbClamp) {
    if (clamped) *clamped = true;
    return 1.0 - kProbClamp;
  }
  return p;
}

// Shared core: negative sum of eta * (1-p_t)^gamma * ln(p_t), left to right.
// gamma = 0 reduces to the plain weighted log loss term by term.
inline double loss_core(const LabeledBatch& b, double w_pvc, double w_non, double gamma,
                        bool* clamped) {
  b.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < b.outputs.size(); ++i) {
    const double p = clamp_prob(b.outputs[i], clamped);
    const double pt = b.targets[i] == 1 ? p : 1.0 - p;
    const double eta = b.targets[i] == 1 ? w_pvc : w_non;
    total += eta * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return -total;
}

inline std::vector<double> loss_core_grad(const LabeledBatch& b, double w_pvc, double w_non,
                                          double gamma) {
  b.validate();
  std::vector<double> grad(b.outputs.size());
  for (std::size_t i = 0; i < b.outputs.size(); ++i) {
    const double p = clamp_prob(b.outputs[i], nullptr);
    const double pt = b.targets[i] == 1 ? p : 1.0 - p;
    const double eta = b.targets[i] == 1 ? w_pvc : w_non;
    // d/dp_t of -(1-p_t)^g ln(p_t)
    double d;
    if (gamma == 0.0) {
      d = -1.0 / pt;
    } else {
      d = gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt) -
          std::pow(1.0 - pt, gamma) / pt;
    }
    grad[i] = eta * d * (b.targets[i] == 1 ? 1.0 : -1.0);
  }
  return grad;
}

}  // namespace detail

inline double weighted_bce(const LabeledBatch& b, bool* clamped = nullptr) {
  const ClassWeights w = class_weights(b.targets);
  return detail::loss_core(b, w.pvc, w.non_pvc, 0.0, clamped);
}

inline std::vector<double> weighted_bce_grad(const LabeledBatch& b) {
  const ClassWeights w = class_weights(b.targets);
  return detail::loss_core_grad(b, w.pvc, w.non_pvc, 0.0);
}

inline double unweighted_bce(const LabeledBatch& b, bool* clamped = nullptr) {
  return detail::loss_core(b, 1.0, 1.0, 0.0, clamped);
}

inline std::vector<double> unweighted_bce_grad(const LabeledBatch& b) {
  return detail::loss_core_grad(b, 1.0, 1.0, 0.0);
}

inline double focal_loss(const LabeledBatch& b, double gamma = 3.0, bool* clamped = nullptr) {
  const ClassWeights w = class_weights(b.targets);
  return detail::loss_core(b, w.pvc, w.non_pvc, gamma, clamped);
}

inline std::vector<double> focal_loss_grad(const LabeledBatch& b, double gamma = 3.0) {
  const ClassWeights w = class_weights(b.targets);
  return detail::loss_core_grad(b, w.pvc, w.non_pvc, gamma);
}

enum class LossKind { weighted, focal, unweighted };

inline std::string loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::weighted: return "weighted";
    case LossKind::focal: return "focal";
    case LossKind::unweighted: return "unweighted";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "weighted") return LossKind::weighted;
  if (s == "focal") return LossKind::focal;
  if (s == "unweighted") return LossKind::unweighted;
  throw Error("unknown loss '" + s + "' (expected weighted, focal or unweighted)");
}

// Tape-linked scalar loss over a probability vector.
inline Tensor loss_op(Tape* tape, const Tensor& outputs, const std::vector<int>& targets,
                      LossKind kind, double gamma = 3.0, bool* clamped = nullptr) {
  if (outputs.rank() != 1 || outputs.size() != targets.size())
    throw Error("loss_op: outputs " + shape_str(outputs.shape()) + " do not match " +
                std::to_string(targets.size()) + " targets");
  LabeledBatch batch{outputs.values(), targets};
  double w_pvc = 1.0, w_non = 1.0;
  if (kind != LossKind::unweighted) {
    const ClassWeights w = class_weights(targets);
    w_pvc = w.pvc;
    w_non = w.non_pvc;
  }
  const double g = kind == LossKind::focal ? gamma : 0.0;
  Tensor result = Tensor::scalar(detail::loss_core(batch, w_pvc, w_non, g, clamped));
  if (tape == nullptr || outputs.node < 0) return result;
  const int out_node = outputs.node;
  std::vector<double> grad = detail::loss_core_grad(batch, w_pvc, w_non, g);
  result.node = tape->record(1, {out_node},
                             [out_node, grad = std::move(grad)](const std::vector<double>& g0,
                                                                Tape& t) {
                               auto& go = t.grad_buf(out_node);
                               for (std::size_t i = 0; i < grad.size(); ++i)
                                 go[i] += g0[0] * grad[i];
                             });
  return result;
}

}  // namespace pvcnet
