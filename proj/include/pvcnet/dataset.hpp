#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pvcnet/random.hpp"
#include "pvcnet/signal.hpp"
#include "pvcnet/tensor.hpp"

namespace pvcnet {

// One labeled beat as stored on disk: a single JSON object per line.
struct BeatRecordLine {
  std::string id, db;
  double fs = 0.0;
  int label = 0;
  std::vector<double> samples;
};

struct DatabaseSet {
  std::string name;
  double fs = 0.0;
  std::vector<BeatRecordLine> records;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
};

namespace detail {

inline bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// Reads a whole text file, transparently gunzipping by extension.
inline std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::string buf;
  if (has_suffix(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw Error("cannot open " + path);
    char chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) buf.append(chunk, n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw Error("gzip read error in " + path);
  } else {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    buf = os.str();
  }
  std::size_t start = 0;
  while (start < buf.size()) {
    std::size_t end = buf.find('\n', start);
    if (end == std::string::npos) end = buf.size();
    std::string line = buf.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

inline void write_text(const std::string& path, const std::string& text) {
  if (has_suffix(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw Error("cannot open " + path + " for writing");
    const int n = gzwrite(f, text.data(), static_cast<unsigned>(text.size()));
    gzclose(f);
    if (n != static_cast<int>(text.size())) throw Error("gzip write error in " + path);
  } else {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path + " for writing");
    f << text;
    if (!f) throw Error("write error in " + path);
  }
}

}  // namespace detail

inline std::string to_json_line(const BeatRecordLine& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["db"] = r.db;
  j["fs"] = r.fs;
  j["label"] = r.label;
  j["samples"] = r.samples;
  return j.dump();
}

inline BeatRecordLine parse_json_line(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  BeatRecordLine r;
  r.id = j.at("id").get<std::string>();
  r.db = j.at("db").get<std::string>();
  r.fs = j.at("fs").get<double>();
  r.label = j.at("label").get<int>();
  r.samples = j.at("samples").get<std::vector<double>>();
  return r;
}

inline void save_beats(const std::vector<BeatRecordLine>& records, const std::string& path) {
  std::string text;
  for (const BeatRecordLine& r : records) {
    text += to_json_line(r);
    text += '\n';
  }
  detail::write_text(path, text);
}

// Loads and validates one beat file: every line must parse, the sampling rate
// must be uniform and every record length must satisfy the window relation.
inline DatabaseSet load_beats(const std::string& path,
                              std::vector<std::string>* warnings = nullptr) {
  DatabaseSet set;
  const std::vector<std::string> lines = detail::read_lines(path);
  std::size_t lineno = 0;
  for (const std::string& line : lines) {
    ++lineno;
    if (line.empty()) continue;
    BeatRecordLine r;
    try {
      r = parse_json_line(line);
    } catch (const std::exception& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
    if (r.label != 0 && r.label != 1)
      throw Error(path + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    if (!(r.fs > 0.0))
      throw Error(path + ":" + std::to_string(lineno) + ": sampling rate must be positive");
    const long long expected = window_length(r.fs);
    if (static_cast<long long>(r.samples.size()) != expected)
      throw Error(path + ":" + std::to_string(lineno) + ": " +
                  std::to_string(r.samples.size()) + " samples, but " +
                  std::to_string(expected) + " expected at " + std::to_string(r.fs) + " Hz");
    if (set.records.empty()) {
      set.fs = r.fs;
      set.name = r.db;
    } else if (r.fs != set.fs) {
      throw Error(path + ":" + std::to_string(lineno) + ": mixed sampling rates (" +
                  std::to_string(set.fs) + " then " + std::to_string(r.fs) +
                  ") in one file");
    }
    set.records.push_back(std::move(r));
  }
  if (set.records.empty() && warnings)
    warnings->push_back(path + ": no records, empty database set");
  return set;
}

// ---------------------------------------------------------------------------
// splits and batches
// ---------------------------------------------------------------------------
struct SplitIndices {
  std::vector<int> train, val;
};

// Deterministic stratified split: shuffles each class separately with the
// seed, then moves round(val_fraction * class size) records to validation.
inline SplitIndices split(const DatabaseSet& set, double val_fraction, std::uint64_t seed,
                          std::vector<std::string>* warnings = nullptr) {
  if (set.records.empty()) throw Error("split: empty database set");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw Error("split: val_fraction must be in [0,1)");
  SplitIndices out;
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < set.records.size(); ++i)
      if (set.records[i].label == cls) idx.push_back(static_cast<int>(i));
    if (idx.empty()) continue;
    RandomEngine eng(derive_seed(seed, "split", static_cast<std::uint64_t>(cls)));
    eng.shuffle(idx);
    const std::size_t n_val =
        static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_val ? out.val : out.train).push_back(idx[i]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  if (out.val.empty() && warnings)
    warnings->push_back(set.name + ": validation split is empty (too few records)");
  return out;
}

// Shuffled batches over a fixed index set; the order is reproducible from
// (seed, epoch) and the trailing short batch is kept.
inline std::vector<std::vector<int>> epoch_batches(const std::vector<int>& indices,
                                                   int batch_size, std::uint64_t seed,
                                                   long long epoch) {
  if (batch_size < 1) throw Error("epoch_batches: batch size must be >= 1");
  std::vector<int> order = indices;
  RandomEngine eng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
  eng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

// ---------------------------------------------------------------------------
// multi-database round-robin schedule: a fixed number of epochs per database
// per round; a database whose validation loss stops improving is discarded
// and never re-activated. Done when none are active.
// ---------------------------------------------------------------------------
class Scheduler {
 public:
  explicit Scheduler(int database_count, double tolerance = 1e-4)
      : dbs_(database_count), tol_(tolerance) {
    if (database_count < 1) throw Error("scheduler: need at least one database");
  }

  // Index of the database to train next, or nothing when all are discarded.
  std::optional<int> next() const {
    const int n = static_cast<int>(dbs_.size());
    for (int step = 0; step < n; ++step) {
      const int i = (cursor_ + step) % n;
      if (dbs_[i].active) return i;
    }
    return std::nullopt;
  }

  // Report the database's best validation loss over the round just finished.
  void report(int db, double round_best_val_loss) {
    Db& d = dbs_.at(db);
    d.rounds += 1;
    if (d.best - round_best_val_loss > tol_)
      d.best = round_best_val_loss;
    else
      d.active = false;
    cursor_ = (db + 1) % static_cast<int>(dbs_.size());
  }

  bool active(int db) const { return dbs_.at(db).active; }
  int rounds_completed(int db) const { return dbs_.at(db).rounds; }
  double best(int db) const { return dbs_.at(db).best; }
  bool done() const { return !next().has_value(); }
  int database_count() const { return static_cast<int>(dbs_.size()); }
  double tolerance() const { return tol_; }
  int cursor() const { return cursor_; }

  // state round trip for checkpointing
  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const Db& d : dbs_)
      arr.push_back({{"best", d.best}, {"active", d.active}, {"rounds", d.rounds}});
    return {{"databases", arr}, {"cursor", cursor_}, {"tolerance", tol_}};
  }

  static Scheduler from_json(const nlohmann::json& j) {
    const auto& arr = j.at("databases");
    Scheduler s(static_cast<int>(arr.size()), j.at("tolerance").get<double>());
    for (std::size_t i = 0; i < arr.size(); ++i) {
      s.dbs_[i].best = arr[i].at("best").get<double>();
      s.dbs_[i].active = arr[i].at("active").get<bool>();
      s.dbs_[i].rounds = arr[i].at("rounds").get<int>();
    }
    s.cursor_ = j.at("cursor").get<int>();
    return s;
  }

 private:
  struct Db {
    double best = std::numeric_limits<double>::infinity();
    bool active = true;
    int rounds = 0;
  };
  std::vector<Db> dbs_;
  int cursor_ = 0;
  double tol_;
};

// ---------------------------------------------------------------------------
// synthetic beats: a narrow upright complex with a small same-direction
// deflection after it for the normal class; a wider complex with an inverted
// deflection for the PVC class. All per-beat variation scales with the noise
// amplitude, so zero noise reproduces the class templates exactly.
// ---------------------------------------------------------------------------
struct SyntheticConfig {
  int per_class = 400;
  std::vector<double> rates{360.0, 250.0, 128.0};
  double noise = 0.1;
  std::uint64_t seed = 1;
  std::string tag = "synth";  // database name prefix, also separates streams

  // morphology (seconds / relative amplitudes)
  double qrs_sigma = 0.018;
  double pvc_width_ratio = 2.0;  // >= 1.8: the PVC complex is wider
  double t_amp = 0.30;
  double t_offset = 0.155;
  double t_sigma = 0.042;

  void validate() const {
    if (per_class < 1) throw Error("synthetic config: per_class must be >= 1");
    if (rates.empty()) throw Error("synthetic config: at least one sampling rate");
    for (double r : rates)
      if (!(r > 100.0)) throw Error("synthetic config: rates must exceed 100 Hz");
    if (noise < 0.0) throw Error("synthetic config: noise must be >= 0");
    if (pvc_width_ratio < 1.8)
      throw Error("synthetic config: pvc_width_ratio must be >= 1.8");
  }
};

namespace detail {
inline double bump(double t, double sigma) { return std::exp(-t * t / (2.0 * sigma * sigma)); }
}  // namespace detail

inline std::vector<DatabaseSet> synthesize(const SyntheticConfig& cfg) {
  cfg.validate();
  std::vector<DatabaseSet> sets;
  for (std::size_t ri = 0; ri < cfg.rates.size(); ++ri) {
    const double fs = cfg.rates[ri];
    const long long len = window_length(fs);
    const long long pre = pre_samples(fs);
    char db_name[64];
    std::snprintf(db_name, sizeof(db_name), "%s%g", cfg.tag.c_str(), fs);
    DatabaseSet set;
    set.name = db_name;
    set.fs = fs;
    RandomEngine eng(derive_seed(cfg.seed, cfg.tag, ri));
    for (int label = 0; label <= 1; ++label) {
      const double qrs_sigma = label == 1 ? cfg.qrs_sigma * cfg.pvc_width_ratio : cfg.qrs_sigma;
      const double t_amp = label == 1 ? -cfg.t_amp - 0.05 : cfg.t_amp;
      for (int i = 0; i < cfg.per_class; ++i) {
        const double qrs_gain = 1.0 + 0.3 * cfg.noise * eng.normal();
        const double t_gain = 1.0 + 0.3 * cfg.noise * eng.normal();
        std::vector<double> beat(static_cast<std::size_t>(len));
        for (long long j = 0; j < len; ++j) {
          const double t = static_cast<double>(j - pre) / fs;
          double v = qrs_gain * detail::bump(t, qrs_sigma) +
                     t_gain * t_amp * detail::bump(t - cfg.t_offset, cfg.t_sigma);
          v += cfg.noise * eng.normal();
          beat[static_cast<std::size_t>(j)] = v;
        }
        BeatRecordLine r;
        char id[96];
        std::snprintf(id, sizeof(id), "%s-%c%05d", db_name, label == 1 ? 'p' : 'n', i);
        r.id = id;
        r.db = db_name;
        r.fs = fs;
        r.label = label;
        r.samples = normalize(beat);
        set.records.push_back(std::move(r));
      }
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

}  // namespace pvcnet
