#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pvcnet/pvcnet.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace pvcnet;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const std::string& item : split_csv(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(std::string("cannot parse ") + what + " value '" + item + "'");
    }
  }
  if (out.empty()) throw Error(std::string("empty ") + what + " list");
  return out;
}

std::vector<int> parse_ints(const std::string& s, const char* what) {
  std::vector<int> out;
  for (double v : parse_doubles(s, what)) out.push_back(static_cast<int>(v));
  return out;
}

void print_config(const std::string& command, const std::vector<std::string>& kv) {
  std::cerr << "config " << command << ":";
  for (const std::string& s : kv) std::cerr << " " << s;
  std::cerr << "\n";
}

std::string kv(const std::string& k, const std::string& v) { return k + "=" + v; }
std::string kv(const std::string& k, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return k + "=" + buf;
}
std::string kv(const std::string& k, long long v) { return k + "=" + std::to_string(v); }

std::vector<DatabaseSet> load_all(const std::string& data_arg) {
  std::vector<DatabaseSet> dbs;
  for (const std::string& path : split_csv(data_arg)) {
    std::vector<std::string> warnings;
    DatabaseSet set = load_beats(path, &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
    if (set.empty()) throw Error(path + ": no records");
    dbs.push_back(std::move(set));
  }
  return dbs;
}

struct SynthArgs {
  std::string out;
  std::string rates = "360,250,128";
  int per_class = 400;
  double noise = 0.1;
  std::uint64_t seed = 1;
};

int run_synth(const SynthArgs& a) {
  print_config("synth", {kv("out", a.out), kv("rates", a.rates),
                         kv("per-class", (long long)a.per_class), kv("noise", a.noise),
                         kv("seed", (long long)a.seed)});
  std::filesystem::create_directories(a.out);
  SyntheticConfig cfg;
  cfg.per_class = a.per_class;
  cfg.rates = parse_doubles(a.rates, "rate");
  cfg.noise = a.noise;
  for (const char* part : {"train", "test"}) {
    SyntheticConfig c = cfg;
    c.seed = derive_seed(a.seed, part);
    const std::vector<DatabaseSet> sets = synthesize(c);
    for (const DatabaseSet& set : sets) {
      const std::string path = a.out + "/" + set.name + "_" + part + ".jsonl";
      save_beats(set.records, path);
      std::cout << path << ": " << set.size() << " beats (" << set.fs << " Hz, length "
                << window_length(set.fs) << ")\n";
    }
  }
  return 0;
}

struct ExtractArgs {
  std::string in, out;
};

// Input: one JSON recording per line with samples, fs, r_peaks, beat_labels,
// record_id, database_id. Output: the beat-record line format.
int run_extract(const ExtractArgs& a) {
  print_config("extract", {kv("in", a.in), kv("out", a.out)});
  std::vector<BeatRecordLine> beats;
  double fs = 0.0;
  std::size_t lineno = 0, skipped = 0;
  for (const std::string& line : detail::read_lines(a.in)) {
    ++lineno;
    if (line.empty()) continue;
    RawRecording rec;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      rec.samples = j.at("samples").get<std::vector<double>>();
      rec.fs = j.at("fs").get<double>();
      rec.r_peaks = j.at("r_peaks").get<std::vector<long long>>();
      rec.beat_labels = j.at("beat_labels").get<std::vector<int>>();
      rec.record_id = j.at("record_id").get<std::string>();
      rec.database_id = j.at("database_id").get<std::string>();
    } catch (const std::exception& e) {
      throw Error(a.in + ":" + std::to_string(lineno) + ": malformed recording: " + e.what());
    }
    rec.validate();
    if (fs == 0.0)
      fs = rec.fs;
    else if (rec.fs != fs)
      throw Error(a.in + ":" + std::to_string(lineno) +
                  ": mixed sampling rates in one extraction run; split recordings by rate");
    const std::vector<double> filtered = bandpass(rec.samples, rec.fs);
    RawRecording clean = rec;
    clean.samples = filtered;
    for (std::size_t i = 0; i < rec.r_peaks.size(); ++i) {
      std::string reason;
      auto w = extract_beat(clean, rec.r_peaks[i], rec.beat_labels[i], &reason);
      if (!w) {
        std::cerr << "skipping beat in " << rec.record_id << ": " << reason << "\n";
        skipped++;
        continue;
      }
      BeatRecordLine r;
      r.id = rec.record_id + "#" + std::to_string(rec.r_peaks[i]);
      r.db = rec.database_id;
      r.fs = rec.fs;
      r.label = w->label;
      r.samples = normalize(w->samples);
      beats.push_back(std::move(r));
    }
  }
  save_beats(beats, a.out);
  std::cout << a.out << ": " << beats.size() << " beats extracted, " << skipped
            << " skipped\n";
  return 0;
}

struct TrainArgs {
  std::string data, model = "dense-spp", loss = "weighted", ckpt, history;
  double gamma = 3.0, lr = 1e-3, val_frac = 0.2, compression = 0.5;
  int batch = 100, epochs_per_round = 20, growth = 32, stem = 32, kernel = 3;
  int plain_length = 150;
  std::string blocks = "3,6,9", levels = "1,4";
  std::uint64_t seed = 1;
};

void write_history_csv(const std::vector<EpochRecord>& hist, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << "epoch,database,lr,train_loss,val_loss,pooled_val_loss\n";
  char buf[256];
  for (const EpochRecord& r : hist) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                  r.db.c_str(), r.lr, r.train_loss, r.val_loss, r.pooled_val_loss);
    f << buf;
  }
}

int run_train(const TrainArgs& a) {
  print_config("train",
               {kv("data", a.data), kv("model", a.model), kv("loss", a.loss),
                kv("gamma", a.gamma), kv("ckpt", a.ckpt), kv("seed", (long long)a.seed),
                kv("lr", a.lr), kv("batch", (long long)a.batch),
                kv("val-frac", a.val_frac),
                kv("epochs-per-round", (long long)a.epochs_per_round),
                kv("growth", (long long)a.growth), kv("blocks", a.blocks),
                kv("levels", a.levels), kv("compression", a.compression),
                kv("stem", (long long)a.stem), kv("plain-length", (long long)a.plain_length),
                kv("history", a.history.empty() ? a.ckpt + ".history.csv" : a.history)});
  const std::vector<DatabaseSet> dbs = load_all(a.data);

  NetworkConfig ncfg;
  ncfg.variant = parse_variant(a.model);
  ncfg.growth = a.growth;
  ncfg.kernel_width = a.kernel;
  ncfg.block_layers = parse_ints(a.blocks, "block");
  ncfg.spp_levels = parse_ints(a.levels, "level");
  ncfg.transition_compression = a.compression;
  ncfg.stem_filters = a.stem;
  ncfg.plain_input_length = a.plain_length;
  ncfg.seed = a.seed;

  TrainConfig tcfg;
  tcfg.initial_lr = a.lr;
  tcfg.batch_size = a.batch;
  tcfg.val_fraction = a.val_frac;
  tcfg.loss = parse_loss_kind(a.loss);
  tcfg.gamma = a.gamma;
  tcfg.epochs_per_round = a.epochs_per_round;
  tcfg.seed = a.seed;

  Model model = Model::build(ncfg);
  std::cerr << "model " << variant_name(ncfg.variant) << ": " << model.param_count()
            << " trainable parameters\n";
  Trainer trainer(model, dbs, tcfg);
  TrainHooks hooks;
  hooks.after_epoch = [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " db " << r.db << " lr " << r.lr << " train "
              << r.train_loss << " val " << r.val_loss << " pooled " << r.pooled_val_loss
              << "\n";
    return true;
  };
  hooks.on_abort = [&](const std::string& reason) {
    const std::string diag = a.ckpt + ".diag";
    std::cerr << "aborting: " << reason << "; diagnostic checkpoint at " << diag << "\n";
    save_checkpoint(make_checkpoint(model, tcfg, trainer.state()), diag);
  };
  const TrainResult result = trainer.run(hooks);

  save_checkpoint(make_checkpoint(model, tcfg, trainer.state()), a.ckpt);
  write_history_csv(result.history, a.history.empty() ? a.ckpt + ".history.csv" : a.history);
  std::cout << "trained " << result.history.size() << " epochs, best epoch "
            << result.best_epoch << " (pooled val loss " << result.best_pooled_val
            << "), checkpoint " << a.ckpt << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, out = "-";
  double threshold = 0.5;
};

int run_eval(const EvalArgs& a) {
  print_config("eval", {kv("ckpt", a.ckpt), kv("data", a.data), kv("out", a.out),
                        kv("threshold", a.threshold)});
  const Checkpoint c = load_checkpoint(a.ckpt);
  Model model = model_from_checkpoint(c);
  const std::vector<DatabaseSet> dbs = load_all(a.data);
  const EvalResult res = evaluate(model, dbs, a.threshold, c.train_config.batch_size);
  if (a.out == "-") {
    std::cout << res.csv();
  } else {
    std::ofstream f(a.out);
    if (!f) throw Error("cannot open " + a.out + " for writing");
    f << res.csv();
  }
  return 0;
}

struct ExplainArgs {
  std::string ckpt, data, id, out;
  int window = 5;
};

int run_explain(const ExplainArgs& a) {
  print_config("explain", {kv("ckpt", a.ckpt), kv("data", a.data), kv("id", a.id),
                           kv("out", a.out), kv("window", (long long)a.window)});
  const Checkpoint c = load_checkpoint(a.ckpt);
  Model model = model_from_checkpoint(c);
  const DatabaseSet db = load_beats(a.data);
  const BeatRecordLine* beat = nullptr;
  for (const BeatRecordLine& r : db.records)
    if (r.id == a.id) {
      beat = &r;
      break;
    }
  if (!beat) throw Error("beat id '" + a.id + "' not found in " + a.data);
  const AttentionMap map = occlusion_map(model, *beat, a.window);
  std::ofstream f(a.out);
  if (!f) throw Error("cannot open " + a.out + " for writing");
  write_attention_csv(f, beat->samples, map);
  std::cout << a.out << ": attention map for " << a.id << " (window " << a.window << ")\n";
  return 0;
}

int run_gradcheck() {
  print_config("gradcheck", {});
  const bool ok = run_gradient_suite(std::cout);
  std::cout << (ok ? "gradient checks passed" : "gradient checks FAILED") << "\n";
  return ok ? 0 : 1;
}

int run_inspect(const std::string& ckpt) {
  print_config("inspect", {kv("ckpt", ckpt)});
  const Checkpoint c = load_checkpoint(ckpt);
  Model model = model_from_checkpoint(c);
  std::cout << "network: " << to_json(c.network).dump() << "\n";
  std::cout << "train: " << to_json(c.train_config).dump() << "\n";
  std::cout << "trainable parameters: " << model.param_count() << "\n";
  std::cout << "channel trace:";
  for (int ch : model.channel_trace()) std::cout << " " << ch;
  std::cout << "\n";
  std::cout << "head features: " << model.head_features() << "\n";
  if (c.network.variant == Variant::plain20)
    std::cout << "fixed input length: " << c.network.plain_input_length << "\n";
  else
    std::cout << "minimum input length: " << model.min_input_length() << "\n";
  std::cout << "epochs trained: " << c.trainer.history.size() << ", best epoch "
            << c.trainer.best_epoch << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("PVCNET_THREADS")) {
#ifdef _OPENMP
    const int n = std::atoi(threads);
    if (n > 0) omp_set_num_threads(n);
#else
    (void)threads;
#endif
  }

  CLI::App app{"PVC beat detection: synthesis, extraction, training, evaluation, attention"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate labeled synthetic beat files per rate");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--rates", synth.rates, "Sampling rates, comma separated");
  s->add_option("--per-class", synth.per_class, "Beats per class per rate per split");
  s->add_option("--noise", synth.noise, "Noise amplitude");
  s->add_option("--seed", synth.seed, "RNG seed");

  ExtractArgs extract;
  auto* x = app.add_subcommand("extract", "Filter recordings and cut labeled beat windows");
  x->add_option("--in", extract.in, "Recordings file (JSON lines)")->required();
  x->add_option("--out", extract.out, "Output beat file")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model on one or more beat files");
  t->add_option("--data", train.data, "Beat files, comma separated")->required();
  t->add_option("--model", train.model, "dense-spp | dense-gmp | plain20");
  t->add_option("--loss", train.loss, "weighted | focal | unweighted");
  t->add_option("--gamma", train.gamma, "Focal exponent");
  t->add_option("--ckpt", train.ckpt, "Checkpoint output path")->required();
  t->add_option("--seed", train.seed, "RNG seed");
  t->add_option("--lr", train.lr, "Initial learning rate");
  t->add_option("--batch", train.batch, "Batch size");
  t->add_option("--val-frac", train.val_frac, "Validation fraction");
  t->add_option("--epochs-per-round", train.epochs_per_round, "Epochs per database round");
  t->add_option("--growth", train.growth, "Filters per dense layer");
  t->add_option("--blocks", train.blocks, "Dense block layer counts");
  t->add_option("--levels", train.levels, "Pyramid levels");
  t->add_option("--compression", train.compression, "Transition compression");
  t->add_option("--stem", train.stem, "Stem filters");
  t->add_option("--kernel", train.kernel, "Kernel width");
  t->add_option("--plain-length", train.plain_length, "plain20 fixed input length");
  t->add_option("--history", train.history, "History CSV path (default <ckpt>.history.csv)");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint; one CSV row per database");
  e->add_option("--ckpt", eval.ckpt, "Checkpoint path")->required();
  e->add_option("--data", eval.data, "Beat files, comma separated")->required();
  e->add_option("--out", eval.out, "CSV output path, - for stdout");
  e->add_option("--threshold", eval.threshold, "Decision threshold");

  ExplainArgs explain;
  auto* ex = app.add_subcommand("explain", "Occlusion attention map for one beat");
  ex->add_option("--ckpt", explain.ckpt, "Checkpoint path")->required();
  ex->add_option("--data", explain.data, "Beat file")->required();
  ex->add_option("--id", explain.id, "Beat id")->required();
  ex->add_option("--out", explain.out, "CSV output path")->required();
  ex->add_option("--window", explain.window, "Occlusion window width");

  auto* g = app.add_subcommand("gradcheck", "Run the finite-difference verification suite");

  std::string inspect_ckpt;
  auto* i = app.add_subcommand("inspect", "Print a checkpoint's configuration and layout");
  i->add_option("--ckpt", inspect_ckpt, "Checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) return run_synth(synth);
    if (x->parsed()) return run_extract(extract);
    if (t->parsed()) return run_train(train);
    if (e->parsed()) return run_eval(eval);
    if (ex->parsed()) return run_explain(explain);
    if (g->parsed()) return run_gradcheck();
    if (i->parsed()) return run_inspect(inspect_ckpt);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
