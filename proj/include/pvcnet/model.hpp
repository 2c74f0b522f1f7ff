#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "pvcnet/ops.hpp"
#include "pvcnet/params.hpp"
#include "pvcnet/random.hpp"
#include "pvcnet/tape.hpp"
#include "pvcnet/tensor.hpp"

namespace pvcnet {

enum class Variant { dense_spp, dense_gmp, plain20 };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::dense_spp: return "dense-spp";
    case Variant::dense_gmp: return "dense-gmp";
    case Variant::plain20: return "plain20";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "dense-spp") return Variant::dense_spp;
  if (s == "dense-gmp") return Variant::dense_gmp;
  if (s == "plain20") return Variant::plain20;
  throw Error("unknown model variant '" + s + "' (expected dense-spp, dense-gmp or plain20)");
}

struct NetworkConfig {
  Variant variant = Variant::dense_spp;
  int growth = 32;
  int kernel_width = 3;
  std::vector<int> block_layers{3, 6, 9};
  std::vector<int> spp_levels{1, 4};
  double transition_compression = 0.5;
  int stem_filters = 32;
  int plain_input_length = 150;  // plain20 only: the single admissible length
  std::uint64_t seed = 42;

  void validate() const {
    if (growth < 1 || kernel_width < 1 || stem_filters < 1)
      throw Error("network config: growth, kernel_width and stem_filters must be >= 1");
    if (variant != Variant::plain20) {
      if (block_layers.size() != 3)
        throw Error("network config: dense variants need exactly 3 dense blocks, got " +
                    std::to_string(block_layers.size()));
      for (int n : block_layers)
        if (n < 1) throw Error("network config: block layer counts must be >= 1");
    }
    if (spp_levels.empty()) throw Error("network config: spp_levels must be nonempty");
    for (std::size_t i = 0; i < spp_levels.size(); ++i) {
      if (spp_levels[i] < 1) throw Error("network config: spp levels must be >= 1");
      if (i > 0 && spp_levels[i] <= spp_levels[i - 1])
        throw Error("network config: spp levels must be strictly increasing");
    }
    if (!(transition_compression > 0.0 && transition_compression <= 1.0))
      throw Error("network config: transition_compression must be in (0,1]");
  }
};

// The assembled network: stem, three dense blocks joined by transitions, a
// pyramid (or global) max-pooling head and a single sigmoid output unit.
// plain20 is the fixed-length 19-conv baseline with a parameter count matched
// to the dense network.
class Model {
 public:
  static Model build(const NetworkConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    if (cfg.variant == Variant::plain20)
      m.build_plain();
    else
      m.build_dense();
    m.params_.finalize();
    m.resolve_indices();
    m.init_params();
    return m;
  }

  // batch [B, 1, L] -> probabilities [B]. With a tape, every parameter is
  // watched so gradients are collectable after backward().
  Tensor forward(Tape* tape, const Tensor& batch, BatchNormMode mode) {
    if (batch.rank() != 3 || batch.dim(1) != 1)
      throw Error("forward: expected input [batch,1,length], got " + shape_str(batch.shape()));
    const int L = batch.dim(2);
    if (cfg_.variant == Variant::plain20) {
      if (L != cfg_.plain_input_length)
        throw Error("plain20 accepts only its fixed training length " +
                    std::to_string(cfg_.plain_input_length) + ", got " + std::to_string(L));
    } else if (L < min_len_) {
      throw Error("input length " + std::to_string(L) +
                  " below minimum admissible length " + std::to_string(min_len_));
    }
    std::vector<Tensor> bound = bind(tape);
    return cfg_.variant == Variant::plain20 ? forward_plain(tape, batch, bound)
                                            : forward_dense(tape, batch, mode, bound);
  }

  // One dense block on its own; exposed for direct testing.
  Tensor dense_block_forward(Tape* tape, const Tensor& input, int block) {
    if (cfg_.variant == Variant::plain20) throw Error("plain20 has no dense blocks");
    std::vector<Tensor> bound = bind(tape);
    return block_impl(tape, input, block, bound);
  }

  // Gradients in parameter enumeration order after tape.backward().
  std::vector<std::vector<double>> collect_grads(const Tape& tape) const {
    std::vector<std::vector<double>> grads(params_.count());
    for (std::size_t i = 0; i < params_.count(); ++i) {
      if (i < param_nodes_.size() && param_nodes_[i] >= 0)
        grads[i] = tape.grad(param_nodes_[i]);
      else
        grads[i].assign(params_[static_cast<int>(i)].value.size(), 0.0);
    }
    return grads;
  }

  long long param_count() const { return params_.trainable_scalars(); }

  // Channel widths per stage: stem, block1, trans1, block2, trans2, block3.
  const std::vector<int>& channel_trace() const { return trace_; }

  int min_input_length() const {
    return cfg_.variant == Variant::plain20 ? cfg_.plain_input_length : min_len_;
  }

  int head_features() const { return head_features_; }

  const NetworkConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::vector<BatchNormState>& bn_states() { return bn_states_; }
  const std::vector<BatchNormState>& bn_states() const { return bn_states_; }

  // Raw snapshot of all parameter values in enumeration order.
  std::vector<double> snapshot_params() const {
    std::vector<double> out;
    for (const Parameter& p : params_)
      out.insert(out.end(), p.value.data(), p.value.data() + p.value.size());
    return out;
  }

  void restore_params(const std::vector<double>& blob) {
    std::size_t off = 0;
    for (Parameter& p : params_) {
      if (off + p.value.size() > blob.size())
        throw Error("parameter blob too short: expected " +
                    std::to_string(param_scalar_count()) + " values, got " +
                    std::to_string(blob.size()));
      std::copy(blob.begin() + off, blob.begin() + off + p.value.size(), p.value.mutable_data());
      off += p.value.size();
    }
    if (off != blob.size())
      throw Error("parameter blob too long: expected " + std::to_string(off) +
                  " values, got " + std::to_string(blob.size()));
  }

  std::size_t param_scalar_count() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) n += p.value.size();
    return n;
  }

 private:
  struct Conv {
    std::string prefix;
    int kernel = -1, bias = -1;
  };
  struct Bn {
    std::string prefix;
    int gamma = -1, beta = -1, state = -1;
  };

  NetworkConfig cfg_;
  ParamStore params_;
  std::vector<BatchNormState> bn_states_;
  Conv stem_;
  std::vector<std::vector<Conv>> blocks_;
  std::vector<Conv> trans_conv_;
  std::vector<Bn> trans_bn_;
  std::vector<Conv> plain_;
  std::vector<bool> plain_pool_after_;
  Conv head_;  // kernel = weight index, bias = bias index
  int min_len_ = 1;
  std::vector<int> trace_;
  int head_features_ = 0;
  int plain_flat_ = 0;
  mutable std::vector<int> param_nodes_;

  std::vector<int> head_levels() const {
    return cfg_.variant == Variant::dense_gmp ? std::vector<int>{1} : cfg_.spp_levels;
  }

  void add_conv(Conv& c, const std::string& prefix, int out_ch, int in_ch) {
    c.prefix = prefix;
    params_.add(prefix + ".kernel", Tensor({out_ch, in_ch, cfg_.kernel_width}));
    params_.add(prefix + ".bias", Tensor({out_ch}));
  }

  void build_dense() {
    const int K = cfg_.kernel_width;
    (void)K;
    add_conv(stem_, "stem.conv", cfg_.stem_filters, 1);
    trace_.push_back(cfg_.stem_filters);
    int ch = cfg_.stem_filters;
    const int nblocks = static_cast<int>(cfg_.block_layers.size());
    blocks_.resize(nblocks);
    for (int b = 0; b < nblocks; ++b) {
      for (int l = 0; l < cfg_.block_layers[b]; ++l) {
        Conv c;
        add_conv(c, "block" + std::to_string(b + 1) + ".layer" + std::to_string(l + 1) + ".conv",
                 cfg_.growth, ch + l * cfg_.growth);
        blocks_[b].push_back(c);
      }
      ch += cfg_.block_layers[b] * cfg_.growth;
      trace_.push_back(ch);
      if (b + 1 < nblocks) {
        const int out = static_cast<int>(std::llround(cfg_.transition_compression * ch));
        if (out < 1) throw Error("network config: transition collapses to zero channels");
        Conv c;
        Bn bn;
        const std::string prefix = "trans" + std::to_string(b + 1);
        add_conv(c, prefix + ".conv", out, ch);
        bn.prefix = prefix + ".bn";
        params_.add(bn.prefix + ".gamma", Tensor({out}));
        params_.add(bn.prefix + ".beta", Tensor({out}));
        bn.state = static_cast<int>(bn_states_.size());
        bn_states_.emplace_back();
        bn_states_.back().init(out);
        trans_conv_.push_back(c);
        trans_bn_.push_back(bn);
        ch = out;
        trace_.push_back(ch);
      }
    }
    const std::vector<int> levels = head_levels();
    int bins = 0;
    for (int k : levels) bins += k;
    head_features_ = ch * bins;
    head_.prefix = "head.linear";
    params_.add("head.linear.weight", Tensor({1, head_features_}));
    params_.add("head.linear.bias", Tensor({1}));
    min_len_ = compute_min_len();
  }

  int compute_min_len() const {
    const std::vector<int> levels = head_levels();
    const int need = levels.back();
    for (int L = 1; L < 16 * need + 64; ++L) {
      int l = L;
      if (l < 2) continue;  // stem max-pool
      l = (l - 2) / 2 + 1;
      bool ok = true;
      for (std::size_t t = 0; t < trans_conv_.size(); ++t) {
        if (l < 2) {
          ok = false;
          break;
        }
        l = (l - 2) / 2 + 1;
      }
      if (ok && l >= need) return L;
    }
    throw Error("no admissible input length found for this configuration");
  }

  // Matches the 19-conv baseline's parameter count to the dense network by
  // solving for a uniform filter width.
  void build_plain() {
    const int K = cfg_.kernel_width;
    plain_pool_after_.assign(19, false);
    for (int i = 2; i < 19; i += 3) plain_pool_after_[i] = true;  // after layers 3,6,...,18
    int l = cfg_.plain_input_length;
    int pools = 0;
    for (int i = 0; i < 19; ++i)
      if (plain_pool_after_[i]) {
        if (l < 2)
          throw Error("plain20 input length " + std::to_string(cfg_.plain_input_length) +
                      " too short for its pooling ladder (needs >= 64)");
        l = (l - 2) / 2 + 1;
        pools++;
      }
    (void)pools;
    const long long target = dense_param_total();
    long long best_diff = -1;
    int best_w = 1;
    for (int w = 1; w <= 4096; ++w) {
      const long long p = plain_param_total(w, K, l);
      const long long diff = std::llabs(p - target);
      if (best_diff < 0 || diff < best_diff) {
        best_diff = diff;
        best_w = w;
      }
    }
    const long long achieved = plain_param_total(best_w, K, l);
    if (std::llabs(achieved - target) * 10 > target)
      throw Error("plain20 width search cannot match the dense parameter budget");
    plain_.resize(19);
    int in_ch = 1;
    for (int i = 0; i < 19; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "plain.layer%02d.conv", i + 1);
      add_conv(plain_[i], name, best_w, in_ch);
      in_ch = best_w;
    }
    plain_flat_ = best_w * l;
    head_features_ = plain_flat_;
    params_.add("head.linear.weight", Tensor({1, plain_flat_}));
    params_.add("head.linear.bias", Tensor({1}));
    trace_.assign(1, best_w);
  }

  long long dense_param_total() const {
    const int K = cfg_.kernel_width;
    long long total = static_cast<long long>(cfg_.stem_filters) * K + cfg_.stem_filters;
    int ch = cfg_.stem_filters;
    const int nblocks = static_cast<int>(cfg_.block_layers.size());
    for (int b = 0; b < nblocks; ++b) {
      for (int l = 0; l < cfg_.block_layers[b]; ++l) {
        const int in = ch + l * cfg_.growth;
        total += static_cast<long long>(cfg_.growth) * in * K + cfg_.growth;
      }
      ch += cfg_.block_layers[b] * cfg_.growth;
      if (b + 1 < nblocks) {
        const int out = static_cast<int>(std::llround(cfg_.transition_compression * ch));
        total += static_cast<long long>(out) * ch * K + out;  // conv
        total += 2LL * out;                                   // gamma, beta
        ch = out;
      }
    }
    const std::vector<int> levels = head_levels();
    int bins = 0;
    for (int k : levels) bins += k;
    total += static_cast<long long>(ch) * bins + 1;
    return total;
  }

  static long long plain_param_total(int w, int k, int final_len) {
    long long total = static_cast<long long>(w) * k + w;               // first conv
    total += 18LL * (static_cast<long long>(w) * w * k + w);           // remaining convs
    total += static_cast<long long>(w) * final_len + 1;                // head
    return total;
  }

  void resolve_indices() {
    auto fix = [&](Conv& c) {
      c.kernel = params_.index_of(c.prefix + ".kernel");
      c.bias = params_.index_of(c.prefix + ".bias");
    };
    if (cfg_.variant == Variant::plain20) {
      for (Conv& c : plain_) fix(c);
    } else {
      fix(stem_);
      for (auto& blk : blocks_)
        for (Conv& c : blk) fix(c);
      for (Conv& c : trans_conv_) fix(c);
      for (Bn& bn : trans_bn_) {
        bn.gamma = params_.index_of(bn.prefix + ".gamma");
        bn.beta = params_.index_of(bn.prefix + ".beta");
      }
    }
    head_.kernel = params_.index_of("head.linear.weight");
    head_.bias = params_.index_of("head.linear.bias");
  }

  // Fan-in scaled uniform for kernels and weights, zeros for biases,
  // ones/zeros for the normalization scale/shift. Each parameter draws from
  // its own stream derived from the config seed and its enumeration index.
  void init_params() {
    for (std::size_t i = 0; i < params_.count(); ++i) {
      Parameter& p = params_[static_cast<int>(i)];
      const std::string& name = p.name;
      double* d = p.value.mutable_data();
      const std::size_t n = p.value.size();
      if (name.ends_with(".kernel") || name.ends_with(".weight")) {
        std::size_t fan_in = 1;
        if (p.value.rank() == 3)
          fan_in = static_cast<std::size_t>(p.value.dim(1)) * p.value.dim(2);
        else if (p.value.rank() == 2)
          fan_in = static_cast<std::size_t>(p.value.dim(1));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        RandomEngine eng(derive_seed(cfg_.seed, "init", i));
        for (std::size_t j = 0; j < n; ++j) d[j] = eng.uniform(-bound, bound);
      } else if (name.ends_with(".gamma")) {
        std::fill(d, d + n, 1.0);
      } else {
        std::fill(d, d + n, 0.0);
      }
    }
  }

  std::vector<Tensor> bind(Tape* tape) const {
    std::vector<Tensor> bound(params_.count());
    if (tape != nullptr) param_nodes_.assign(params_.count(), -1);
    for (std::size_t i = 0; i < params_.count(); ++i) {
      const Parameter& p = params_[static_cast<int>(i)];
      if (tape != nullptr) {
        bound[i] = tape->watch(p.value);
        param_nodes_[i] = bound[i].node;
      } else {
        bound[i] = p.value;
      }
    }
    return bound;
  }

  Tensor block_impl(Tape* tape, const Tensor& input, int block,
                    const std::vector<Tensor>& bound) {
    if (block < 0 || block >= static_cast<int>(blocks_.size()))
      throw Error("dense block index out of range");
    Tensor cur = input;
    for (const Conv& c : blocks_[block]) {
      Tensor y = relu(tape, conv1d(tape, cur, bound[c.kernel], bound[c.bias], Padding::same, 1));
      cur = concat_channels(tape, cur, y);
    }
    return cur;
  }

  Tensor forward_dense(Tape* tape, const Tensor& batch, BatchNormMode mode,
                       const std::vector<Tensor>& bound) {
    Tensor x = conv1d(tape, batch, bound[stem_.kernel], bound[stem_.bias], Padding::same, 1);
    x = maxpool1d(tape, x, 2, 2);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      x = block_impl(tape, x, static_cast<int>(b), bound);
      if (b + 1 < blocks_.size()) {
        const Conv& c = trans_conv_[b];
        const Bn& bn = trans_bn_[b];
        x = conv1d(tape, x, bound[c.kernel], bound[c.bias], Padding::same, 1);
        x = batchnorm1d(tape, x, bound[bn.gamma], bound[bn.beta], mode, bn_states_[bn.state]);
        x = avgpool1d(tape, x, 2, 2);
        x = relu(tape, x);
      }
    }
    Tensor head = spp_pool(tape, x, head_levels());
    Tensor logits = linear(tape, head, bound[head_.kernel], bound[head_.bias]);
    Tensor probs = sigmoid(tape, logits);
    return reshape(tape, probs, {batch.dim(0)});
  }

  Tensor forward_plain(Tape* tape, const Tensor& batch, const std::vector<Tensor>& bound) {
    Tensor x = batch;
    for (std::size_t i = 0; i < plain_.size(); ++i) {
      const Conv& c = plain_[i];
      x = relu(tape, conv1d(tape, x, bound[c.kernel], bound[c.bias], Padding::same, 1));
      if (plain_pool_after_[i]) x = maxpool1d(tape, x, 2, 2);
    }
    x = reshape(tape, x, {batch.dim(0), plain_flat_});
    Tensor logits = linear(tape, x, bound[head_.kernel], bound[head_.bias]);
    Tensor probs = sigmoid(tape, logits);
    return reshape(tape, probs, {batch.dim(0)});
  }
};

}  // namespace pvcnet
