#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvcnet/model.hpp"
#include "pvcnet/train.hpp"

namespace pvcnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kCheckpointMagic[4] = {'P', 'V', 'C', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

// JSON cannot carry infinities; encode them explicitly so state round-trips.
inline nlohmann::json json_double(double v) {
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  return v;
}

inline double double_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error("bad numeric value '" + s + "' in checkpoint");
  }
  return j.get<double>();
}

inline nlohmann::json to_json(const NetworkConfig& c) {
  return {{"variant", variant_name(c.variant)},
          {"growth", c.growth},
          {"kernel_width", c.kernel_width},
          {"block_layers", c.block_layers},
          {"spp_levels", c.spp_levels},
          {"transition_compression", c.transition_compression},
          {"stem_filters", c.stem_filters},
          {"plain_input_length", c.plain_input_length},
          {"seed", c.seed}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.growth = j.at("growth").get<int>();
  c.kernel_width = j.at("kernel_width").get<int>();
  c.block_layers = j.at("block_layers").get<std::vector<int>>();
  c.spp_levels = j.at("spp_levels").get<std::vector<int>>();
  c.transition_compression = j.at("transition_compression").get<double>();
  c.stem_filters = j.at("stem_filters").get<int>();
  c.plain_input_length = j.at("plain_input_length").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"initial_lr", c.initial_lr},
          {"decay", c.decay},
          {"decay_every", c.decay_every},
          {"batch_size", c.batch_size},
          {"val_fraction", c.val_fraction},
          {"loss", loss_kind_name(c.loss)},
          {"gamma", c.gamma},
          {"epochs_per_round", c.epochs_per_round},
          {"seed", c.seed},
          {"early_stop_tolerance", c.early_stop_tolerance}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.initial_lr = j.at("initial_lr").get<double>();
  c.decay = j.at("decay").get<double>();
  c.decay_every = j.at("decay_every").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  c.gamma = j.at("gamma").get<double>();
  c.epochs_per_round = j.at("epochs_per_round").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.early_stop_tolerance = j.at("early_stop_tolerance").get<double>();
  return c;
}

namespace detail {

inline nlohmann::json bn_to_json(const std::vector<BatchNormState>& bn) {
  nlohmann::json arr = nlohmann::json::array();
  for (const BatchNormState& s : bn)
    arr.push_back({{"mean", s.running_mean},
                   {"var", s.running_var},
                   {"batches", s.batches_tracked}});
  return arr;
}

inline std::vector<BatchNormState> bn_from_json(const nlohmann::json& arr) {
  std::vector<BatchNormState> bn;
  for (const auto& j : arr) {
    BatchNormState s;
    s.running_mean = j.at("mean").get<std::vector<double>>();
    s.running_var = j.at("var").get<std::vector<double>>();
    s.batches_tracked = j.at("batches").get<long long>();
    bn.push_back(std::move(s));
  }
  return bn;
}

inline nlohmann::json history_to_json(const std::vector<EpochRecord>& hist) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EpochRecord& r : hist)
    arr.push_back({{"epoch", r.epoch},
                   {"db", r.db},
                   {"lr", r.lr},
                   {"train_loss", r.train_loss},
                   {"val_loss", r.val_loss},
                   {"pooled_val_loss", r.pooled_val_loss}});
  return arr;
}

inline std::vector<EpochRecord> history_from_json(const nlohmann::json& arr) {
  std::vector<EpochRecord> hist;
  for (const auto& j : arr) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<long long>();
    r.db = j.at("db").get<std::string>();
    r.lr = j.at("lr").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    r.val_loss = j.at("val_loss").get<double>();
    r.pooled_val_loss = j.at("pooled_val_loss").get<double>();
    hist.push_back(std::move(r));
  }
  return hist;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

inline void put_block(std::string& out, const std::string& payload) {
  put_u64(out, payload.size());
  out += payload;
}

inline void put_doubles(std::string& out, const std::vector<double>& v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw Error(std::string("truncated checkpoint: ") + what + " needs " +
                  std::to_string(n) + " bytes at offset " + std::to_string(pos) +
                  ", file has " + std::to_string(buf.size()));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string block(const char* what) {
    const std::uint64_t len = u64(what);
    need(len, what);
    std::string s = buf.substr(pos, len);
    pos += len;
    return s;
  }
};

inline std::vector<double> doubles_from(const std::string& blob, const char* what) {
  if (blob.size() % sizeof(double) != 0)
    throw Error(std::string("corrupt checkpoint: ") + what + " block of " +
                std::to_string(blob.size()) + " bytes is not a multiple of 8");
  std::vector<double> v(blob.size() / sizeof(double));
  std::memcpy(v.data(), blob.data(), blob.size());
  return v;
}

}  // namespace detail

struct Checkpoint {
  NetworkConfig network;
  TrainConfig train_config;
  std::vector<double> params;  // enumeration order
  std::vector<BatchNormState> bn;
  TrainerState trainer;
};

inline Checkpoint make_checkpoint(const Model& model, const TrainConfig& cfg,
                                  const TrainerState& state) {
  Checkpoint c;
  c.network = model.config();
  c.train_config = cfg;
  c.params = model.snapshot_params();
  c.bn = model.bn_states();
  c.trainer = state;
  return c;
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);

  nlohmann::json config{{"network", to_json(c.network)},
                        {"train", to_json(c.train_config)},
                        {"bn_constants", {{"epsilon", 1e-5}, {"momentum", 0.1}}}};
  detail::put_block(out, config.dump());

  std::string params;
  detail::put_doubles(params, c.params);
  detail::put_block(out, params);

  std::string adam;
  detail::put_u64(adam, static_cast<std::uint64_t>(c.trainer.adam.step));
  std::vector<double> flat;
  if (c.trainer.adam.m.empty()) {
    flat.assign(2 * c.params.size(), 0.0);
  } else {
    for (const auto& m : c.trainer.adam.m) flat.insert(flat.end(), m.begin(), m.end());
    for (const auto& v : c.trainer.adam.v) flat.insert(flat.end(), v.begin(), v.end());
  }
  detail::put_doubles(adam, flat);
  detail::put_block(out, adam);

  detail::put_block(out, detail::bn_to_json(c.bn).dump());

  nlohmann::json rng{{"seed", c.train_config.seed}};
  detail::put_block(out, rng.dump());

  nlohmann::json trainer{
      {"scheduler", c.trainer.scheduler.to_json()},
      {"global_epoch", c.trainer.global_epoch},
      {"current_db", c.trainer.current_db},
      {"epochs_into_round", c.trainer.epochs_into_round},
      {"round_best_val", json_double(c.trainer.round_best_val)},
      {"pooled_best_before_round", json_double(c.trainer.pooled_best_before_round)},
      {"best_epoch", c.trainer.best_epoch},
      {"best_pooled", json_double(c.trainer.best_pooled)},
      {"best_bn", detail::bn_to_json(c.trainer.best_bn)},
      {"finished", c.trainer.finished}};
  detail::put_block(out, trainer.dump());

  std::string best;
  detail::put_doubles(best, c.trainer.best_params);
  detail::put_block(out, best);

  detail::put_block(out, detail::history_to_json(c.trainer.history).dump());
  return out;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  const std::string blob = serialize_checkpoint(c);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw Error("write error in " + path);
}

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
  detail::Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw Error("not a checkpoint file (bad magic)");
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));

  Checkpoint c;
  const nlohmann::json config = nlohmann::json::parse(r.block("config"));
  c.network = network_config_from_json(config.at("network"));
  c.train_config = train_config_from_json(config.at("train"));

  c.params = detail::doubles_from(r.block("parameters"), "parameters");

  const std::string adam = r.block("optimizer");
  if (adam.size() < 8) throw Error("corrupt checkpoint: optimizer block too short");
  std::uint64_t step;
  std::memcpy(&step, adam.data(), 8);
  const std::vector<double> flat = detail::doubles_from(adam.substr(8), "optimizer");
  if (flat.size() != 2 * c.params.size())
    throw Error("corrupt checkpoint: optimizer holds " + std::to_string(flat.size()) +
                " values, expected " + std::to_string(2 * c.params.size()));

  c.bn = detail::bn_from_json(nlohmann::json::parse(r.block("batch-norm")));
  nlohmann::json::parse(r.block("rng"));  // seed lives in the train config

  const nlohmann::json trainer = nlohmann::json::parse(r.block("trainer"));
  c.trainer.scheduler = Scheduler::from_json(trainer.at("scheduler"));
  c.trainer.global_epoch = trainer.at("global_epoch").get<long long>();
  c.trainer.current_db = trainer.at("current_db").get<int>();
  c.trainer.epochs_into_round = trainer.at("epochs_into_round").get<int>();
  c.trainer.round_best_val = double_from_json(trainer.at("round_best_val"));
  c.trainer.pooled_best_before_round =
      double_from_json(trainer.at("pooled_best_before_round"));
  c.trainer.best_epoch = trainer.at("best_epoch").get<long long>();
  c.trainer.best_pooled = double_from_json(trainer.at("best_pooled"));
  c.trainer.best_bn = detail::bn_from_json(trainer.at("best_bn"));
  c.trainer.finished = trainer.at("finished").get<bool>();

  c.trainer.best_params = detail::doubles_from(r.block("best"), "best");
  c.trainer.history = detail::history_from_json(nlohmann::json::parse(r.block("history")));
  if (r.pos != buf.size())
    throw Error("corrupt checkpoint: " + std::to_string(buf.size() - r.pos) +
                " trailing bytes");

  // expand the optimizer into the per-parameter layout
  Model shape = Model::build(c.network);
  if (c.params.size() != shape.param_scalar_count())
    throw Error("checkpoint parameter blob holds " + std::to_string(c.params.size()) +
                " values, model expects " + std::to_string(shape.param_scalar_count()));
  const ParamStore& ps = shape.params();
  AdamState& adam_state = c.trainer.adam;
  adam_state.step = static_cast<long long>(step);
  adam_state.m.resize(ps.count());
  adam_state.v.resize(ps.count());
  std::size_t off = 0;
  for (std::size_t i = 0; i < ps.count(); ++i) {
    const std::size_t n = ps[static_cast<int>(i)].value.size();
    adam_state.m[i].assign(flat.begin() + off, flat.begin() + off + n);
    off += n;
  }
  for (std::size_t i = 0; i < ps.count(); ++i) {
    const std::size_t n = ps[static_cast<int>(i)].value.size();
    adam_state.v[i].assign(flat.begin() + off, flat.begin() + off + n);
    off += n;
  }
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return deserialize_checkpoint(os.str());
}

// Instantiates the model a checkpoint describes and restores its state.
inline Model model_from_checkpoint(const Checkpoint& c) {
  Model m = Model::build(c.network);
  m.restore_params(c.params);
  if (c.bn.size() != m.bn_states().size())
    throw Error("checkpoint batch-norm state count mismatch");
  m.bn_states() = c.bn;
  return m;
}

}  // namespace pvcnet
