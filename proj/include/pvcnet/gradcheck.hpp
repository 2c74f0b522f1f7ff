#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "pvcnet/ops.hpp"
#include "pvcnet/tape.hpp"
#include "pvcnet/tensor.hpp"

namespace pvcnet {

// A scalar-valued function of one tensor. Called with a tape for the analytic
// gradient and with nullptr for the plain evaluations of the central
// difference; the two paths must compute the same value.
using ScalarFn = std::function<Tensor(Tape*, const Tensor&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Central finite differences against the tape gradient. Relative error per
// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
// Coordinates with skip[i] set (e.g. tied pooling maxima) are excluded.
inline GradCheckResult grad_check(const ScalarFn& fn, const Tensor& point, double step,
                                  const std::vector<bool>& skip = {}) {
  Tape tape;
  Tensor x = tape.watch(point);
  Tensor loss = fn(&tape, x);
  tape.backward(loss);
  const std::vector<double> analytic = tape.grad(x.node);

  GradCheckResult res;
  std::vector<double> vals(point.values());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (i < skip.size() && skip[i]) {
      res.skipped++;
      continue;
    }
    const double saved = vals[i];
    vals[i] = saved + step;
    const double up = fn(nullptr, Tensor(point.shape(), vals)).value();
    vals[i] = saved - step;
    const double down = fn(nullptr, Tensor(point.shape(), vals)).value();
    vals[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_index = i;
    }
    res.checked++;
  }
  return res;
}

// Marks every input coordinate that participates in a pooling window whose
// maximum is attained at more than one position. Central differences are
// meaningless there: the forward is locally non-smooth.
inline std::vector<bool> maxpool_tie_mask(const Tensor& input, int width, int stride) {
  const int B = input.dim(0), C = input.dim(1), L = input.dim(2);
  const int Lout = (L - width) / stride + 1;
  std::vector<bool> mask(input.size(), false);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * L;
      for (int l = 0; l < Lout; ++l) {
        double best = input[off + l * stride];
        int hits = 1;
        for (int k = 1; k < width; ++k) {
          const double v = input[off + l * stride + k];
          if (v > best) {
            best = v;
            hits = 1;
          } else if (v == best) {
            hits++;
          }
        }
        if (hits > 1)
          for (int k = 0; k < width; ++k) mask[off + l * stride + k] = true;
      }
    }
  return mask;
}

}  // namespace pvcnet
