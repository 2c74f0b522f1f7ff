#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pvcnet/dataset.hpp"
#include "pvcnet/loss.hpp"
#include "pvcnet/model.hpp"
#include "pvcnet/random.hpp"
#include "pvcnet/tape.hpp"

namespace pvcnet {

struct TrainConfig {
  double initial_lr = 1e-3;
  double decay = 0.05;  // fractional drop applied every decay_every epochs
  int decay_every = 100;
  int batch_size = 100;
  double val_fraction = 0.2;
  LossKind loss = LossKind::weighted;
  double gamma = 3.0;
  int epochs_per_round = 20;
  std::uint64_t seed = 1;
  double early_stop_tolerance = 1e-4;

  void validate() const {
    if (!(initial_lr > 0.0)) throw Error("train config: initial_lr must be positive");
    if (!(decay >= 0.0 && decay < 1.0)) throw Error("train config: decay must be in [0,1)");
    if (decay_every < 1) throw Error("train config: decay_every must be >= 1");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
      throw Error("train config: val_fraction must be in [0,1)");
    if (epochs_per_round < 1) throw Error("train config: epochs_per_round must be >= 1");
    if (!(gamma >= 0.0)) throw Error("train config: gamma must be >= 0");
    if (!(early_stop_tolerance >= 0.0))
      throw Error("train config: early_stop_tolerance must be >= 0");
  }
};

// Stepwise decay: the rate drops by the configured fraction once per
// decay_every epochs and is constant in between.
inline double lr_at(const TrainConfig& cfg, long long epoch) {
  if (epoch < 0) throw Error("lr_at: epoch must be >= 0");
  return cfg.initial_lr *
         std::pow(1.0 - cfg.decay, static_cast<double>(epoch / cfg.decay_every));
}

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long long step = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  void init_like(const ParamStore& params) {
    m.resize(params.count());
    v.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      m[i].assign(params[static_cast<int>(i)].value.size(), 0.0);
      v[i].assign(params[static_cast<int>(i)].value.size(), 0.0);
    }
    step = 0;
  }
};

// Standard Adam update with bias correction. Rejects the whole step if any
// gradient is non-finite, naming the offending parameter.
inline void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads,
                      AdamState& st, double lr) {
  if (grads.size() != params.count())
    throw Error("adam_step: gradient list does not match parameter store");
  for (std::size_t i = 0; i < params.count(); ++i) {
    const Parameter& p = params[static_cast<int>(i)];
    if (!p.trainable) continue;
    if (grads[i].size() != p.value.size())
      throw Error("adam_step: gradient size mismatch for " + p.name);
    for (double g : grads[i])
      if (!std::isfinite(g))
        throw Error("adam_step: non-finite gradient in parameter " + p.name);
  }
  st.step++;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Parameter& p = params[static_cast<int>(i)];
    if (!p.trainable) continue;
    double* w = p.value.mutable_data();
    double* mi = st.m[i].data();
    double* vi = st.v[i].data();
    const double* g = grads[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      mi[j] = st.beta1 * mi[j] + (1.0 - st.beta1) * g[j];
      vi[j] = st.beta2 * vi[j] + (1.0 - st.beta2) * g[j] * g[j];
      const double mhat = mi[j] / c1;
      const double vhat = vi[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + st.epsilon);
    }
  }
}

struct EpochRecord {
  long long epoch = 0;
  std::string db;
  double lr = 0.0;
  double train_loss = 0.0;       // mean per training sample
  double val_loss = 0.0;         // mean over this database's validation split
  double pooled_val_loss = 0.0;  // mean over all databases' validation splits
};

struct TrainResult {
  std::vector<EpochRecord> history;
  long long best_epoch = -1;
  double best_pooled_val = std::numeric_limits<double>::infinity();
  bool completed = true;  // false when interrupted by the after_epoch hook
};

struct TrainHooks {
  std::function<bool(const EpochRecord&)> after_epoch;  // return false to interrupt
  std::function<void(const std::string&)> on_abort;     // non-finite loss or gradient
};

// Everything needed to continue an interrupted run on the same trajectory.
struct TrainerState {
  AdamState adam;
  Scheduler scheduler{1};
  long long global_epoch = 0;
  int current_db = -1;  // round in progress, -1 between rounds
  int epochs_into_round = 0;
  double round_best_val = std::numeric_limits<double>::infinity();
  double pooled_best_before_round = std::numeric_limits<double>::infinity();
  long long best_epoch = -1;
  double best_pooled = std::numeric_limits<double>::infinity();
  std::vector<double> best_params;
  std::vector<BatchNormState> best_bn;
  std::vector<EpochRecord> history;
  bool finished = false;
};

// Multi-database training: rounds of epochs_per_round epochs on one database
// at a time, databases discarded once their validation loss stalls, global
// stop when the pooled validation loss stalls after every database has had at
// least one round. The model is left at the best pooled-validation epoch.
class Trainer {
 public:
  Trainer(Model& model, const std::vector<DatabaseSet>& databases, TrainConfig cfg)
      : model_(model), dbs_(databases), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (dbs_.empty()) throw Error("train: at least one database required");
    for (const DatabaseSet& db : dbs_) {
      if (db.empty()) throw Error("train: database " + db.name + " is empty");
      const int len = static_cast<int>(db.records.front().samples.size());
      if (model_.config().variant == Variant::plain20) {
        if (len != model_.config().plain_input_length)
          throw Error("plain20 accepts only its fixed training length " +
                      std::to_string(model_.config().plain_input_length) + ", database " +
                      db.name + " has length " + std::to_string(len));
      } else if (len < model_.min_input_length()) {
        throw Error("database " + db.name + " length " + std::to_string(len) +
                    " below the model's minimum admissible length " +
                    std::to_string(model_.min_input_length()));
      }
    }
    splits_.reserve(dbs_.size());
    for (std::size_t i = 0; i < dbs_.size(); ++i)
      splits_.push_back(split(dbs_[i], cfg_.val_fraction, derive_seed(cfg_.seed, "split", i)));
    state_.adam.init_like(model_.params());
    state_.scheduler = Scheduler(static_cast<int>(dbs_.size()), cfg_.early_stop_tolerance);
  }

  // Continue from a saved state (the model must already hold the saved params).
  Trainer(Model& model, const std::vector<DatabaseSet>& databases, TrainConfig cfg,
          TrainerState state)
      : Trainer(model, databases, std::move(cfg)) {
    if (state.scheduler.database_count() != static_cast<int>(dbs_.size()))
      throw Error("resume: checkpoint schedules " +
                  std::to_string(state.scheduler.database_count()) + " databases, got " +
                  std::to_string(dbs_.size()));
    state_ = std::move(state);
  }

  TrainResult run(const TrainHooks& hooks = {}) {
    while (!state_.finished) {
      if (state_.current_db < 0) {
        const auto nx = state_.scheduler.next();
        if (!nx) break;  // every database discarded
        state_.current_db = *nx;
        state_.epochs_into_round = 0;
        state_.round_best_val = std::numeric_limits<double>::infinity();
        state_.pooled_best_before_round = state_.best_pooled;
      }
      const int db = state_.current_db;
      const double lr = lr_at(cfg_, state_.global_epoch);
      const double train_loss = run_epoch(db, lr, hooks);
      const double val = validation_loss(db);
      const double pooled = pooled_validation_loss();

      EpochRecord rec{state_.global_epoch, dbs_[db].name, lr, train_loss, val, pooled};
      state_.history.push_back(rec);
      state_.global_epoch++;
      state_.epochs_into_round++;
      state_.round_best_val = std::min(state_.round_best_val, val);
      if (pooled < state_.best_pooled) {
        state_.best_pooled = pooled;
        state_.best_epoch = rec.epoch;
        state_.best_params = model_.snapshot_params();
        state_.best_bn = model_.bn_states();
      }
      if (state_.epochs_into_round >= cfg_.epochs_per_round) {
        state_.scheduler.report(db, state_.round_best_val);
        state_.current_db = -1;
        bool all_visited = true;
        for (int i = 0; i < state_.scheduler.database_count(); ++i)
          if (state_.scheduler.rounds_completed(i) < 1) all_visited = false;
        if (all_visited &&
            !(state_.pooled_best_before_round - state_.best_pooled > cfg_.early_stop_tolerance))
          state_.finished = true;
      }
      if (hooks.after_epoch && !hooks.after_epoch(rec)) return result(false);
    }
    state_.finished = true;
    if (state_.best_epoch >= 0) {
      model_.restore_params(state_.best_params);
      model_.bn_states() = state_.best_bn;
    }
    return result(true);
  }

  const TrainerState& state() const { return state_; }
  TrainerState& state() { return state_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainResult result(bool completed) const {
    TrainResult r;
    r.history = state_.history;
    r.best_epoch = state_.best_epoch;
    r.best_pooled_val = state_.best_pooled;
    r.completed = completed;
    return r;
  }

  // Stacks the given records (uniform length) into a [B, 1, L] batch.
  static Tensor make_batch(const DatabaseSet& db, const std::vector<int>& idx,
                           std::vector<int>* targets) {
    const int B = static_cast<int>(idx.size());
    const int L = static_cast<int>(db.records[idx[0]].samples.size());
    Tensor x({B, 1, L});
    double* d = x.mutable_data();
    targets->resize(B);
    for (int b = 0; b < B; ++b) {
      const BeatRecordLine& r = db.records[idx[b]];
      std::copy(r.samples.begin(), r.samples.end(), d + static_cast<std::size_t>(b) * L);
      (*targets)[b] = r.label;
    }
    return x;
  }

  double run_epoch(int db, double lr, const TrainHooks& hooks) {
    const auto batches = epoch_batches(splits_[db].train, cfg_.batch_size,
                                       derive_seed(cfg_.seed, "db", db), state_.global_epoch);
    double total = 0.0;
    std::size_t count = 0;
    for (const std::vector<int>& batch : batches) {
      std::vector<int> targets;
      Tensor x = make_batch(dbs_[db], batch, &targets);
      Tape tape;
      Tensor probs = model_.forward(&tape, x, BatchNormMode::train);
      Tensor loss = loss_op(&tape, probs, targets, cfg_.loss, cfg_.gamma);
      if (!std::isfinite(loss.value())) {
        const std::string reason = "non-finite training loss on database " + dbs_[db].name +
                                   " at epoch " + std::to_string(state_.global_epoch);
        if (hooks.on_abort) hooks.on_abort(reason);
        throw Error(reason);
      }
      tape.backward(loss);
      const auto grads = model_.collect_grads(tape);
      try {
        adam_step(model_.params(), grads, state_.adam, lr);
      } catch (const Error& e) {
        if (hooks.on_abort) hooks.on_abort(e.what());
        throw;
      }
      total += loss.value();
      count += targets.size();
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
  }

  // Fixed-order batches over a validation split, inference mode.
  double split_loss(int db, const std::vector<int>& idx, std::size_t* n_out) {
    double total = 0.0;
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(cfg_.batch_size)) {
      const std::size_t end =
          std::min(idx.size(), start + static_cast<std::size_t>(cfg_.batch_size));
      std::vector<int> chunk(idx.begin() + start, idx.begin() + end);
      std::vector<int> targets;
      Tensor x = make_batch(dbs_[db], chunk, &targets);
      Tensor probs = model_.forward(nullptr, x, BatchNormMode::infer);
      total += loss_op(nullptr, probs, targets, cfg_.loss, cfg_.gamma).value();
    }
    if (n_out) *n_out = idx.size();
    return total;
  }

  double validation_loss(int db) {
    if (splits_[db].val.empty()) return 0.0;
    std::size_t n = 0;
    const double total = split_loss(db, splits_[db].val, &n);
    return total / static_cast<double>(n);
  }

  double pooled_validation_loss() {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < dbs_.size(); ++i) {
      if (splits_[i].val.empty()) continue;
      std::size_t n = 0;
      total += split_loss(static_cast<int>(i), splits_[i].val, &n);
      count += n;
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
  }

  Model& model_;
  const std::vector<DatabaseSet>& dbs_;
  TrainConfig cfg_;
  std::vector<SplitIndices> splits_;
  TrainerState state_;
};

inline TrainResult train(Model& model, const std::vector<DatabaseSet>& databases,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  Trainer t(model, databases, cfg);
  return t.run(hooks);
}

}  // namespace pvcnet
