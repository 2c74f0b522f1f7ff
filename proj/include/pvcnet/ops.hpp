#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pvcnet/tape.hpp"
#include "pvcnet/tensor.hpp"

namespace pvcnet {

enum class Padding { same, valid };
enum class BatchNormMode { train, infer };

namespace detail {
inline bool tracked(Tape* tape, const Tensor& t) { return tape != nullptr && t.node >= 0; }
}  // namespace detail

// ---------------------------------------------------------------------------
// conv1d: cross-correlation plus bias.
//   input  [B, Cin, L], kernel [Cout, Cin, K], bias [Cout] -> [B, Cout, Lout]
// "same" pads with zeros, the extra sample on the right when K is even.
// Per output element the accumulation order is fixed: bias, then channels
// ascending, kernel taps ascending.
// ---------------------------------------------------------------------------
inline Tensor conv1d(Tape* tape, const Tensor& input, const Tensor& kernel,
                     const Tensor& bias, Padding padding = Padding::same,
                     int stride = 1) {
  if (input.rank() != 3)
    throw Error("conv1d: input must be [batch,channels,length], got " +
                shape_str(input.shape()));
  if (kernel.rank() != 3)
    throw Error("conv1d: kernel must be [out,in,width], got " + shape_str(kernel.shape()));
  const int B = input.dim(0), Cin = input.dim(1), L = input.dim(2);
  const int Cout = kernel.dim(0), K = kernel.dim(2);
  if (kernel.dim(1) != Cin)
    throw Error("conv1d: kernel expects " + std::to_string(kernel.dim(1)) +
                " input channels but input " + shape_str(input.shape()) + " has " +
                std::to_string(Cin));
  if (bias.rank() != 1 || bias.dim(0) != Cout)
    throw Error("conv1d: bias must be [" + std::to_string(Cout) + "], got " +
                shape_str(bias.shape()));
  if (stride < 1) throw Error("conv1d: stride must be >= 1");
  const int pad_l = padding == Padding::same ? (K - 1) / 2 : 0;
  const int pad_r = padding == Padding::same ? (K - 1) - pad_l : 0;
  if (K > L + pad_l + pad_r)
    throw Error("conv1d: kernel width " + std::to_string(K) +
                " exceeds padded input length " + std::to_string(L + pad_l + pad_r));
  const int Lp = L + pad_l + pad_r;
  const int Lout = (Lp - K) / stride + 1;

  // zero-padded copy of the input, shared with the backward pass
  std::vector<double> padded(static_cast<std::size_t>(B) * Cin * Lp, 0.0);
  for (int b = 0; b < B; ++b)
    for (int ci = 0; ci < Cin; ++ci) {
      const double* src = input.data() + (static_cast<std::size_t>(b) * Cin + ci) * L;
      double* dst = padded.data() + (static_cast<std::size_t>(b) * Cin + ci) * Lp + pad_l;
      std::copy(src, src + L, dst);
    }

  std::vector<double> out(static_cast<std::size_t>(B) * Cout * Lout);
  const double* ker = kernel.data();
  const double* bs = bias.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Cout; ++co) {
      double* orow = out.data() + (static_cast<std::size_t>(b) * Cout + co) * Lout;
      std::fill(orow, orow + Lout, bs[co]);
      for (int ci = 0; ci < Cin; ++ci) {
        const double* prow = padded.data() + (static_cast<std::size_t>(b) * Cin + ci) * Lp;
        const double* w = ker + (static_cast<std::size_t>(co) * Cin + ci) * K;
        for (int k = 0; k < K; ++k) {
          const double wk = w[k];
          const double* p = prow + k;
          if (stride == 1) {
            for (int l = 0; l < Lout; ++l) orow[l] += wk * p[l];
          } else {
            for (int l = 0; l < Lout; ++l) orow[l] += wk * p[static_cast<std::size_t>(l) * stride];
          }
        }
      }
    }

  Tensor result({B, Cout, Lout}, std::move(out));
  const bool need_in = detail::tracked(tape, input);
  const bool need_ker = detail::tracked(tape, kernel);
  const bool need_bias = detail::tracked(tape, bias);
  if (!(need_in || need_ker || need_bias)) return result;

  const int in_node = input.node, ker_node = kernel.node, bias_node = bias.node;
  std::vector<int> parents;
  if (need_in) parents.push_back(in_node);
  if (need_ker) parents.push_back(ker_node);
  if (need_bias) parents.push_back(bias_node);

  result.node = tape->record(
      result.size(), std::move(parents),
      [=, saved = std::move(padded), kernel = kernel](const std::vector<double>& g, Tape& t) {
        if (need_bias) {
          auto& gb = t.grad_buf(bias_node);
#pragma omp parallel for schedule(static)
          for (int co = 0; co < Cout; ++co) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
              const double* grow = g.data() + (static_cast<std::size_t>(b) * Cout + co) * Lout;
              for (int l = 0; l < Lout; ++l) acc += grow[l];
            }
            gb[co] += acc;
          }
        }
        if (need_ker) {
          auto& gk = t.grad_buf(ker_node);
#pragma omp parallel for schedule(static)
          for (int co = 0; co < Cout; ++co) {
            for (int ci = 0; ci < Cin; ++ci) {
              double* gkrow = gk.data() + (static_cast<std::size_t>(co) * Cin + ci) * K;
              for (int b = 0; b < B; ++b) {
                const double* grow = g.data() + (static_cast<std::size_t>(b) * Cout + co) * Lout;
                const double* prow = saved.data() + (static_cast<std::size_t>(b) * Cin + ci) * Lp;
                for (int l = 0; l < Lout; ++l) {
                  const double gv = grow[l];
                  const double* p = prow + static_cast<std::size_t>(l) * stride;
                  for (int k = 0; k < K; ++k) gkrow[k] += gv * p[k];
                }
              }
            }
          }
        }
        if (need_in) {
          auto& gi = t.grad_buf(in_node);
          const double* kd = kernel.data();
#pragma omp parallel for schedule(static)
          for (int b = 0; b < B; ++b) {
            std::vector<double> gpad(static_cast<std::size_t>(Cin) * Lp, 0.0);
            for (int co = 0; co < Cout; ++co) {
              const double* grow = g.data() + (static_cast<std::size_t>(b) * Cout + co) * Lout;
              for (int ci = 0; ci < Cin; ++ci) {
                double* gp = gpad.data() + static_cast<std::size_t>(ci) * Lp;
                const double* w = kd + (static_cast<std::size_t>(co) * Cin + ci) * K;
                for (int l = 0; l < Lout; ++l) {
                  const double gv = grow[l];
                  double* p = gp + static_cast<std::size_t>(l) * stride;
                  for (int k = 0; k < K; ++k) p[k] += gv * w[k];
                }
              }
            }
            for (int ci = 0; ci < Cin; ++ci) {
              double* dst = gi.data() + (static_cast<std::size_t>(b) * Cin + ci) * L;
              const double* src = gpad.data() + static_cast<std::size_t>(ci) * Lp + pad_l;
              for (int l = 0; l < L; ++l) dst[l] += src[l];
            }
          }
        }
      });
  return result;
}

// ---------------------------------------------------------------------------
// batchnorm1d over [B, C, L]: per-channel statistics across batch and length.
// Train mode normalizes by the biased batch variance and updates the running
// stats by EMA; infer mode uses the running stats and requires at least one
// prior train-mode update.
// ---------------------------------------------------------------------------
struct BatchNormState {
  std::vector<double> running_mean, running_var;
  long long batches_tracked = 0;

  void init(int channels) {
    running_mean.assign(channels, 0.0);
    running_var.assign(channels, 1.0);
    batches_tracked = 0;
  }
  bool initialized() const { return batches_tracked > 0; }
};

inline Tensor batchnorm1d(Tape* tape, const Tensor& input, const Tensor& gamma,
                          const Tensor& beta, BatchNormMode mode, BatchNormState& state,
                          double epsilon = 1e-5, double momentum = 0.1) {
  if (input.rank() != 3)
    throw Error("batchnorm1d: input must be [batch,channels,length], got " +
                shape_str(input.shape()));
  const int B = input.dim(0), C = input.dim(1), L = input.dim(2);
  if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
    throw Error("batchnorm1d: gamma/beta must be [" + std::to_string(C) + "]");
  if (static_cast<std::size_t>(state.running_mean.size()) != static_cast<std::size_t>(C))
    state.init(C);

  const std::size_t n = static_cast<std::size_t>(B) * L;
  std::vector<double> mean(C), inv_std(C);
  if (mode == BatchNormMode::train) {
    if (n < 2)
      throw Error("batchnorm1d: train mode needs at least 2 values per channel, got " +
                  std::to_string(n));
    for (int c = 0; c < C; ++c) {
      double m = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* row = input.data() + (static_cast<std::size_t>(b) * C + c) * L;
        for (int l = 0; l < L; ++l) m += row[l];
      }
      m /= static_cast<double>(n);
      double v = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* row = input.data() + (static_cast<std::size_t>(b) * C + c) * L;
        for (int l = 0; l < L; ++l) {
          const double d = row[l] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(n);
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + epsilon);
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * m;
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * v;
    }
    state.batches_tracked++;
  } else {
    if (!state.initialized())
      throw Error("batchnorm1d: infer mode with uninitialized running statistics");
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + epsilon);
    }
  }

  std::vector<double> xhat(input.size());
  std::vector<double> out(input.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * L;
      const double* row = input.data() + off;
      const double m = mean[c], is = inv_std[c];
      const double gm = gamma[c], bt = beta[c];
      for (int l = 0; l < L; ++l) {
        const double h = (row[l] - m) * is;
        xhat[off + l] = h;
        out[off + l] = gm * h + bt;
      }
    }

  Tensor result({B, C, L}, std::move(out));
  const bool need_in = detail::tracked(tape, input);
  const bool need_g = detail::tracked(tape, gamma);
  const bool need_b = detail::tracked(tape, beta);
  if (!(need_in || need_g || need_b)) return result;

  const int in_node = input.node, g_node = gamma.node, b_node = beta.node;
  const bool train = mode == BatchNormMode::train;
  std::vector<int> parents;
  if (need_in) parents.push_back(in_node);
  if (need_g) parents.push_back(g_node);
  if (need_b) parents.push_back(b_node);

  result.node = tape->record(
      result.size(), std::move(parents),
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std),
       gamma = gamma](const std::vector<double>& g, Tape& t) {
        const double dn = static_cast<double>(n);
        for (int c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int b = 0; b < B; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * L;
            for (int l = 0; l < L; ++l) {
              sum_g += g[off + l];
              sum_gx += g[off + l] * xhat[off + l];
            }
          }
          if (need_b) t.grad_buf(b_node)[c] += sum_g;
          if (need_g) t.grad_buf(g_node)[c] += sum_gx;
          if (need_in) {
            auto& gi = t.grad_buf(in_node);
            const double k = gamma[c] * inv_std[c];
            if (train) {
              const double mg = sum_g / dn, mgx = sum_gx / dn;
              for (int b = 0; b < B; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l)
                  gi[off + l] += k * (g[off + l] - mg - xhat[off + l] * mgx);
              }
            } else {
              for (int b = 0; b < B; ++b) {
                const std::size_t off = (static_cast<std::size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) gi[off + l] += k * g[off + l];
              }
            }
          }
        }
      });
  return result;
}

// ---------------------------------------------------------------------------
// elementwise activations
// ---------------------------------------------------------------------------
inline Tensor relu(Tape* tape, const Tensor& input) {
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  Tensor result(input.shape(), std::move(out));
  if (!detail::tracked(tape, input)) return result;
  const int in_node = input.node;
  result.node = tape->record(result.size(), {in_node},
                             [in_node, input](const std::vector<double>& g, Tape& t) {
                               auto& gi = t.grad_buf(in_node);
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 if (input[i] > 0.0) gi[i] += g[i];
                             });
  return result;
}

// Overflow-safe logistic; the result is clamped into the open interval (0,1)
// so downstream logs stay finite for any finite input.
inline double sigmoid_value(double x) {
  double v;
  if (x >= 0.0) {
    const double e = std::exp(-x);
    v = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(x);
    v = e / (1.0 + e);
  }
  if (v >= 1.0) v = std::nextafter(1.0, 0.0);
  if (v <= 0.0) v = std::numeric_limits<double>::min();
  return v;
}

inline Tensor sigmoid(Tape* tape, const Tensor& input) {
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid_value(input[i]);
  Tensor result(input.shape(), std::move(out));
  if (!detail::tracked(tape, input)) return result;
  const int in_node = input.node;
  const Tensor saved = result;
  result.node = tape->record(result.size(), {in_node},
                             [in_node, saved](const std::vector<double>& g, Tape& t) {
                               auto& gi = t.grad_buf(in_node);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 const double s = saved[i];
                                 gi[i] += g[i] * s * (1.0 - s);
                               }
                             });
  return result;
}

// ---------------------------------------------------------------------------
// pooling over [B, C, L]; window must fit inside the input.
// Max pooling routes the gradient to the first (lowest-index) maximum.
// ---------------------------------------------------------------------------
namespace detail {
inline void check_pool_args(const Tensor& input, int width, int stride, const char* name) {
  if (input.rank() != 3)
    throw Error(std::string(name) + ": input must be [batch,channels,length], got " +
                shape_str(input.shape()));
  if (width < 1 || stride < 1)
    throw Error(std::string(name) + ": width and stride must be >= 1");
  if (width > input.dim(2))
    throw Error(std::string(name) + ": window width " + std::to_string(width) +
                " exceeds input length " + std::to_string(input.dim(2)));
}
}  // namespace detail

inline Tensor maxpool1d(Tape* tape, const Tensor& input, int width, int stride) {
  detail::check_pool_args(input, width, stride, "maxpool1d");
  const int B = input.dim(0), C = input.dim(1), L = input.dim(2);
  const int Lout = (L - width) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(B) * C * Lout);
  std::vector<int> argmax(out.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* row = input.data() + (static_cast<std::size_t>(b) * C + c) * L;
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * Lout;
      for (int l = 0; l < Lout; ++l) {
        int best = l * stride;
        double bv = row[best];
        for (int k = 1; k < width; ++k) {
          const int j = l * stride + k;
          if (row[j] > bv) {
            bv = row[j];
            best = j;
          }
        }
        out[off + l] = bv;
        argmax[off + l] = best;
      }
    }
  Tensor result({B, C, Lout}, std::move(out));
  if (!detail::tracked(tape, input)) return result;
  const int in_node = input.node;
  result.node = tape->record(
      result.size(), {in_node},
      [in_node, argmax = std::move(argmax), B, C, L, Lout](const std::vector<double>& g,
                                                           Tape& t) {
        auto& gi = t.grad_buf(in_node);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * Lout;
            const std::size_t ioff = (static_cast<std::size_t>(b) * C + c) * L;
            for (int l = 0; l < Lout; ++l) gi[ioff + argmax[off + l]] += g[off + l];
          }
      });
  return result;
}

inline Tensor avgpool1d(Tape* tape, const Tensor& input, int width, int stride) {
  detail::check_pool_args(input, width, stride, "avgpool1d");
  const int B = input.dim(0), C = input.dim(1), L = input.dim(2);
  const int Lout = (L - width) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(B) * C * Lout);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* row = input.data() + (static_cast<std::size_t>(b) * C + c) * L;
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * Lout;
      for (int l = 0; l < Lout; ++l) {
        double acc = 0.0;
        for (int k = 0; k < width; ++k) acc += row[l * stride + k];
        out[off + l] = acc / width;
      }
    }
  Tensor result({B, C, Lout}, std::move(out));
  if (!detail::tracked(tape, input)) return result;
  const int in_node = input.node;
  result.node = tape->record(
      result.size(), {in_node},
      [in_node, B, C, L, Lout, width, stride](const std::vector<double>& g, Tape& t) {
        auto& gi = t.grad_buf(in_node);
        const double inv = 1.0 / width;
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * Lout;
            const std::size_t ioff = (static_cast<std::size_t>(b) * C + c) * L;
            for (int l = 0; l < Lout; ++l) {
              const double gv = g[off + l] * inv;
              for (int k = 0; k < width; ++k) gi[ioff + l * stride + k] += gv;
            }
          }
      });
  return result;
}

// ---------------------------------------------------------------------------
// channel concatenation; all parts must share batch size and length
// ---------------------------------------------------------------------------
inline Tensor concat_channels(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  const int B = parts[0].dim(0), L = parts[0].dim(2);
  int Ctot = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 3)
      throw Error("concat_channels: inputs must be [batch,channels,length], got " +
                  shape_str(p.shape()));
    if (p.dim(0) != B || p.dim(2) != L)
      throw Error("concat_channels: shape mismatch, " + shape_str(parts[0].shape()) +
                  " vs " + shape_str(p.shape()));
    Ctot += p.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(B) * Ctot * L);
  int coff = 0;
  std::vector<int> offsets(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& p = parts[i];
    const int C = p.dim(1);
    offsets[i] = coff;
    for (int b = 0; b < B; ++b) {
      const double* src = p.data() + static_cast<std::size_t>(b) * C * L;
      double* dst = out.data() + (static_cast<std::size_t>(b) * Ctot + coff) * L;
      std::copy(src, src + static_cast<std::size_t>(C) * L, dst);
    }
    coff += C;
  }
  Tensor result({B, Ctot, L}, std::move(out));
  if (tape == nullptr) return result;
  bool any = false;
  std::vector<int> parents;
  std::vector<int> nodes(parts.size());
  std::vector<int> widths(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    nodes[i] = parts[i].node;
    widths[i] = parts[i].dim(1);
    if (parts[i].node >= 0) {
      parents.push_back(parts[i].node);
      any = true;
    }
  }
  if (!any) return result;
  result.node = tape->record(
      result.size(), std::move(parents),
      [nodes = std::move(nodes), widths = std::move(widths), offsets = std::move(offsets),
       B, Ctot, L](const std::vector<double>& g, Tape& t) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i] < 0) continue;
          auto& gi = t.grad_buf(nodes[i]);
          const int C = widths[i];
          for (int b = 0; b < B; ++b) {
            const double* src = g.data() + (static_cast<std::size_t>(b) * Ctot + offsets[i]) * L;
            double* dst = gi.data() + static_cast<std::size_t>(b) * C * L;
            for (std::size_t j = 0; j < static_cast<std::size_t>(C) * L; ++j) dst[j] += src[j];
          }
        }
      });
  return result;
}

inline Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b) {
  return concat_channels(tape, std::vector<Tensor>{a, b});
}

// Forward-only view of a channel range [c0, c1); test and inspection helper.
inline Tensor slice_channels(const Tensor& x, int c0, int c1) {
  if (x.rank() != 3) throw Error("slice_channels: input must be rank 3");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (c0 < 0 || c1 > C || c0 >= c1) throw Error("slice_channels: bad channel range");
  const int Cs = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(B) * Cs * L);
  for (int b = 0; b < B; ++b) {
    const double* src = x.data() + (static_cast<std::size_t>(b) * C + c0) * L;
    double* dst = out.data() + static_cast<std::size_t>(b) * Cs * L;
    std::copy(src, src + static_cast<std::size_t>(Cs) * L, dst);
  }
  return Tensor({B, Cs, L}, std::move(out));
}

// ---------------------------------------------------------------------------
// linear: [B, N] x [M, N] + [M] -> [B, M]
// ---------------------------------------------------------------------------
inline Tensor linear(Tape* tape, const Tensor& input, const Tensor& weight,
                     const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2)
    throw Error("linear: input and weight must be rank 2, got " + shape_str(input.shape()) +
                " and " + shape_str(weight.shape()));
  const int B = input.dim(0), N = input.dim(1);
  const int M = weight.dim(0);
  if (weight.dim(1) != N)
    throw Error("linear: weight " + shape_str(weight.shape()) +
                " does not match input features " + std::to_string(N));
  if (bias.rank() != 1 || bias.dim(0) != M)
    throw Error("linear: bias must be [" + std::to_string(M) + "], got " +
                shape_str(bias.shape()));
  std::vector<double> out(static_cast<std::size_t>(B) * M);
  for (int b = 0; b < B; ++b) {
    const double* in = input.data() + static_cast<std::size_t>(b) * N;
    for (int m = 0; m < M; ++m) {
      const double* w = weight.data() + static_cast<std::size_t>(m) * N;
      double acc = bias[m];
      for (int j = 0; j < N; ++j) acc += w[j] * in[j];
      out[static_cast<std::size_t>(b) * M + m] = acc;
    }
  }
  Tensor result({B, M}, std::move(out));
  const bool need_in = detail::tracked(tape, input);
  const bool need_w = detail::tracked(tape, weight);
  const bool need_b = detail::tracked(tape, bias);
  if (!(need_in || need_w || need_b)) return result;
  const int in_node = input.node, w_node = weight.node, b_node = bias.node;
  std::vector<int> parents;
  if (need_in) parents.push_back(in_node);
  if (need_w) parents.push_back(w_node);
  if (need_b) parents.push_back(b_node);
  result.node = tape->record(
      result.size(), std::move(parents),
      [=, input = input, weight = weight](const std::vector<double>& g, Tape& t) {
        if (need_b) {
          auto& gb = t.grad_buf(b_node);
          for (int m = 0; m < M; ++m) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) acc += g[static_cast<std::size_t>(b) * M + m];
            gb[m] += acc;
          }
        }
        if (need_w) {
          auto& gw = t.grad_buf(w_node);
          for (int m = 0; m < M; ++m) {
            double* row = gw.data() + static_cast<std::size_t>(m) * N;
            for (int b = 0; b < B; ++b) {
              const double gv = g[static_cast<std::size_t>(b) * M + m];
              const double* in = input.data() + static_cast<std::size_t>(b) * N;
              for (int j = 0; j < N; ++j) row[j] += gv * in[j];
            }
          }
        }
        if (need_in) {
          auto& gi = t.grad_buf(in_node);
          for (int b = 0; b < B; ++b) {
            double* row = gi.data() + static_cast<std::size_t>(b) * N;
            for (int m = 0; m < M; ++m) {
              const double gv = g[static_cast<std::size_t>(b) * M + m];
              const double* w = weight.data() + static_cast<std::size_t>(m) * N;
              for (int j = 0; j < N; ++j) row[j] += gv * w[j];
            }
          }
        }
      });
  return result;
}

// ---------------------------------------------------------------------------
// spatial pyramid max pooling over [B, C, L].
// Level with k bins partitions positions into [floor(i*L/k), floor((i+1)*L/k));
// output is channel-major: all levels of channel 0, then channel 1, ...
// Output length C * sum(levels) regardless of L.
// ---------------------------------------------------------------------------
inline Tensor spp_pool(Tape* tape, const Tensor& features, const std::vector<int>& levels) {
  if (features.rank() != 3)
    throw Error("spp_pool: input must be [batch,channels,length], got " +
                shape_str(features.shape()));
  if (levels.empty()) throw Error("spp_pool: at least one pyramid level required");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 1) throw Error("spp_pool: levels must be >= 1");
    if (i > 0 && levels[i] <= levels[i - 1])
      throw Error("spp_pool: levels must be strictly increasing");
  }
  const int B = features.dim(0), C = features.dim(1), L = features.dim(2);
  const int max_level = levels.back();
  if (L < max_level)
    throw Error("spp_pool: input length " + std::to_string(L) +
                " below minimum admissible length " + std::to_string(max_level) +
                " for pyramid levels");
  int bins_per_channel = 0;
  for (int k : levels) bins_per_channel += k;
  const int F = C * bins_per_channel;

  std::vector<double> out(static_cast<std::size_t>(B) * F);
  std::vector<int> argmax(out.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* row = features.data() + (static_cast<std::size_t>(b) * C + c) * L;
      std::size_t o = static_cast<std::size_t>(b) * F +
                      static_cast<std::size_t>(c) * bins_per_channel;
      for (int k : levels) {
        for (int i = 0; i < k; ++i) {
          const int lo = static_cast<int>(static_cast<long long>(i) * L / k);
          const int hi = static_cast<int>(static_cast<long long>(i + 1) * L / k);
          int best = lo;
          double bv = row[lo];
          for (int j = lo + 1; j < hi; ++j)
            if (row[j] > bv) {
              bv = row[j];
              best = j;
            }
          out[o] = bv;
          argmax[o] = best;
          ++o;
        }
      }
    }
  Tensor result({B, F}, std::move(out));
  if (!detail::tracked(tape, features)) return result;
  const int in_node = features.node;
  result.node = tape->record(
      result.size(), {in_node},
      [in_node, argmax = std::move(argmax), B, C, L, F,
       bins_per_channel](const std::vector<double>& g, Tape& t) {
        auto& gi = t.grad_buf(in_node);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const std::size_t ioff = (static_cast<std::size_t>(b) * C + c) * L;
            const std::size_t o0 = static_cast<std::size_t>(b) * F +
                                   static_cast<std::size_t>(c) * bins_per_channel;
            for (int j = 0; j < bins_per_channel; ++j)
              gi[ioff + argmax[o0 + j]] += g[o0 + j];
          }
      });
  return result;
}

// Global max pooling is the single-level pyramid.
inline Tensor gmp_pool(Tape* tape, const Tensor& features) {
  return spp_pool(tape, features, {1});
}

// ---------------------------------------------------------------------------
// small elementwise / reduction ops used by losses and tests
// ---------------------------------------------------------------------------
inline Tensor reshape(Tape* tape, const Tensor& x, std::vector<int> shape) {
  Tensor result = x.reshaped(std::move(shape));
  result.node = -1;
  if (!detail::tracked(tape, x)) return result;
  const int in_node = x.node;
  result.node = tape->record(result.size(), {in_node},
                             [in_node](const std::vector<double>& g, Tape& t) {
                               auto& gi = t.grad_buf(in_node);
                               for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                             });
  return result;
}

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    throw Error("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  Tensor result(a.shape(), std::move(out));
  const bool na = detail::tracked(tape, a), nb = detail::tracked(tape, b);
  if (!(na || nb)) return result;
  const int an = a.node, bn = b.node;
  std::vector<int> parents;
  if (na) parents.push_back(an);
  if (nb) parents.push_back(bn);
  result.node = tape->record(result.size(), std::move(parents),
                             [na, nb, an, bn](const std::vector<double>& g, Tape& t) {
                               if (na) {
                                 auto& ga = t.grad_buf(an);
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               }
                               if (nb) {
                                 auto& gb = t.grad_buf(bn);
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                               }
                             });
  return result;
}

inline Tensor multiply(Tape* tape, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    throw Error("multiply: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  Tensor result(a.shape(), std::move(out));
  const bool na = detail::tracked(tape, a), nb = detail::tracked(tape, b);
  if (!(na || nb)) return result;
  const int an = a.node, bn = b.node;
  std::vector<int> parents;
  if (na) parents.push_back(an);
  if (nb) parents.push_back(bn);
  result.node = tape->record(result.size(), std::move(parents),
                             [na, nb, an, bn, a, b](const std::vector<double>& g, Tape& t) {
                               if (na) {
                                 auto& ga = t.grad_buf(an);
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                               }
                               if (nb) {
                                 auto& gb = t.grad_buf(bn);
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                               }
                             });
  return result;
}

inline Tensor scale(Tape* tape, const Tensor& x, double k) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * k;
  Tensor result(x.shape(), std::move(out));
  if (!detail::tracked(tape, x)) return result;
  const int in_node = x.node;
  result.node = tape->record(result.size(), {in_node},
                             [in_node, k](const std::vector<double>& g, Tape& t) {
                               auto& gi = t.grad_buf(in_node);
                               for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * k;
                             });
  return result;
}

// Left-to-right sum of all elements into a scalar.
inline Tensor sum(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  Tensor result = Tensor::scalar(acc);
  if (!detail::tracked(tape, x)) return result;
  const int in_node = x.node;
  const std::size_t n = x.size();
  result.node = tape->record(1, {in_node},
                             [in_node, n](const std::vector<double>& g, Tape& t) {
                               auto& gi = t.grad_buf(in_node);
                               for (std::size_t i = 0; i < n; ++i) gi[i] += g[0];
                             });
  return result;
}

}  // namespace pvcnet
