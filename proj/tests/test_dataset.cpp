#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pvcnet/dataset.hpp"

using namespace pvcnet;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("pvcnet_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<BeatRecordLine> three_records() {
  std::vector<BeatRecordLine> recs;
  for (int i = 0; i < 3; ++i) {
    BeatRecordLine r;
    r.id = "b" + std::to_string(i);
    r.db = "dbA";
    r.fs = 360;
    r.label = i % 2;
    r.samples.assign(150, 0.25 * i);
    recs.push_back(r);
  }
  return recs;
}

}  // namespace

TEST_CASE("beat file round trip and validation") {
  TempDir tmp;

  SECTION("three valid lines load as three records") {
    save_beats(three_records(), tmp.file("ok.jsonl"));
    const DatabaseSet set = load_beats(tmp.file("ok.jsonl"));
    CHECK(set.size() == 3);
    CHECK(set.name == "dbA");
    CHECK(set.fs == 360.0);
    CHECK(set.records[2].samples[0] == 0.5);
  }

  SECTION("sample values survive the round trip bitwise") {
    auto recs = three_records();
    recs[0].samples[7] = 0.1 + 0.2;  // not exactly representable
    recs[0].samples[8] = 1e-17;
    save_beats(recs, tmp.file("bits.jsonl"));
    const DatabaseSet set = load_beats(tmp.file("bits.jsonl"));
    CHECK(set.records[0].samples[7] == recs[0].samples[7]);
    CHECK(set.records[0].samples[8] == recs[0].samples[8]);
  }

  SECTION("gzip by extension") {
    save_beats(three_records(), tmp.file("ok.jsonl.gz"));
    const DatabaseSet set = load_beats(tmp.file("ok.jsonl.gz"));
    CHECK(set.size() == 3);
    // really compressed: a gzip magic header, not plain text
    std::ifstream f(tmp.file("ok.jsonl.gz"), std::ios::binary);
    unsigned char magic[2];
    f.read(reinterpret_cast<char*>(magic), 2);
    CHECK(magic[0] == 0x1f);
    CHECK(magic[1] == 0x8b);
  }

  SECTION("a wrong-length record names the expected length") {
    auto recs = three_records();
    recs[1].samples.resize(149);
    save_beats(recs, tmp.file("short.jsonl"));
    CHECK_THROWS_WITH(load_beats(tmp.file("short.jsonl")),
                      Catch::Matchers::ContainsSubstring("150") &&
                          Catch::Matchers::ContainsSubstring(":2"));
  }

  SECTION("a malformed line reports its line number") {
    std::ofstream f(tmp.file("bad.jsonl"));
    f << to_json_line(three_records()[0]) << "\n";
    f << "{not json\n";
    f.close();
    CHECK_THROWS_WITH(load_beats(tmp.file("bad.jsonl")),
                      Catch::Matchers::ContainsSubstring(":2"));
  }

  SECTION("mixed sampling rates in one file are rejected") {
    auto recs = three_records();
    recs[2].fs = 250;
    recs[2].samples.resize(104);
    save_beats(recs, tmp.file("mixed.jsonl"));
    CHECK_THROWS_WITH(load_beats(tmp.file("mixed.jsonl")),
                      Catch::Matchers::ContainsSubstring("mixed"));
  }

  SECTION("an empty file yields an empty set and a warning") {
    std::ofstream(tmp.file("empty.jsonl")).close();
    std::vector<std::string> warnings;
    const DatabaseSet set = load_beats(tmp.file("empty.jsonl"), &warnings);
    CHECK(set.empty());
    CHECK(warnings.size() == 1);
  }

  SECTION("missing file") {
    CHECK_THROWS_AS(load_beats(tmp.file("nope.jsonl")), Error);
  }
}

TEST_CASE("stratified split") {
  DatabaseSet set;
  set.name = "dbA";
  set.fs = 360;
  for (int i = 0; i < 100; ++i) {
    BeatRecordLine r;
    r.id = "b" + std::to_string(i);
    r.db = "dbA";
    r.fs = 360;
    r.label = i < 20 ? 1 : 0;
    r.samples.assign(150, 0.0);
    set.records.push_back(r);
  }

  SECTION("20 of 100 records with 20 positives split 80/20 with 16/4 positives") {
    const SplitIndices s = split(set, 0.2, 7);
    CHECK(s.train.size() == 80);
    CHECK(s.val.size() == 20);
    int train_pvc = 0, val_pvc = 0;
    for (int i : s.train) train_pvc += set.records[i].label;
    for (int i : s.val) val_pvc += set.records[i].label;
    CHECK(train_pvc == 16);
    CHECK(val_pvc == 4);
  }

  SECTION("identical seeds give identical assignments") {
    const SplitIndices a = split(set, 0.2, 7);
    const SplitIndices b = split(set, 0.2, 7);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    const SplitIndices c = split(set, 0.2, 8);
    CHECK(a.val != c.val);
  }

  SECTION("splits are disjoint and exhaustive") {
    const SplitIndices s = split(set, 0.2, 7);
    std::vector<bool> seen(set.size(), false);
    for (int i : s.train) seen[i] = true;
    for (int i : s.val) {
      CHECK_FALSE(seen[i]);
      seen[i] = true;
    }
    for (bool b : seen) CHECK(b);
  }

  SECTION("a single record lands in train with an empty validation split") {
    DatabaseSet one;
    one.records.push_back(set.records[0]);
    std::vector<std::string> warnings;
    const SplitIndices s = split(one, 0.2, 7, &warnings);
    CHECK(s.train.size() == 1);
    CHECK(s.val.empty());
    CHECK_FALSE(warnings.empty());
  }

  SECTION("empty set is rejected") {
    CHECK_THROWS_AS(split(DatabaseSet{}, 0.2, 7), Error);
  }
}

TEST_CASE("epoch batches") {
  std::vector<int> idx(250);
  for (int i = 0; i < 250; ++i) idx[i] = i;

  SECTION("250 records make batches of 100, 100 and 50") {
    const auto batches = epoch_batches(idx, 100, 5, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 100);
    CHECK(batches[1].size() == 100);
    CHECK(batches[2].size() == 50);
  }

  SECTION("each epoch has a different but reproducible order") {
    const auto e0 = epoch_batches(idx, 100, 5, 0);
    const auto e0_again = epoch_batches(idx, 100, 5, 0);
    const auto e1 = epoch_batches(idx, 100, 5, 1);
    CHECK(e0 == e0_again);
    CHECK(e0 != e1);
  }

  SECTION("every index appears exactly once per epoch") {
    const auto batches = epoch_batches(idx, 64, 9, 3);
    std::vector<int> count(250, 0);
    for (const auto& b : batches)
      for (int i : b) count[i]++;
    for (int c : count) CHECK(c == 1);
  }
}

TEST_CASE("round-robin schedule with discards") {
  SECTION("two improving databases alternate") {
    Scheduler s(2);
    std::vector<int> visits;
    double loss_a = 1.0, loss_b = 1.0;
    for (int round = 0; round < 6; ++round) {
      const auto nx = s.next();
      REQUIRE(nx.has_value());
      visits.push_back(*nx);
      double& loss = *nx == 0 ? loss_a : loss_b;
      loss *= 0.5;
      s.report(*nx, loss);
    }
    CHECK(visits == std::vector<int>{0, 1, 0, 1, 0, 1});
  }

  SECTION("a stalled database is discarded and never revisited") {
    Scheduler s(2);
    REQUIRE(s.next() == 0);
    s.report(0, 1.0);
    REQUIRE(s.next() == 1);
    s.report(1, 1.0);
    REQUIRE(s.next() == 0);
    s.report(0, 0.5);
    REQUIRE(s.next() == 1);
    s.report(1, 1.0);  // no improvement over its best
    CHECK_FALSE(s.active(1));
    for (int i = 0; i < 3; ++i) {
      const auto nx = s.next();
      REQUIRE(nx.has_value());
      CHECK(*nx == 0);
      s.report(0, 0.4 - 0.1 * i);
    }
  }

  SECTION("a single database degenerates to early-stopped training") {
    Scheduler s(1);
    s.report(0, 1.0);
    CHECK(s.next() == 0);
    s.report(0, 0.99999);  // below tolerance
    CHECK(s.done());
  }

  SECTION("the schedule terminates under bounded improvement") {
    Scheduler s(3);
    double losses[3] = {1.0, 1.0, 1.0};
    int safety = 0;
    while (auto nx = s.next()) {
      REQUIRE(++safety < 10000);
      losses[*nx] = std::max(0.0, losses[*nx] - 0.01);  // improvement shrinks to zero
      s.report(*nx, losses[*nx]);
    }
    CHECK(s.done());
  }

  SECTION("state survives a json round trip") {
    Scheduler s(3);
    s.report(0, 0.5);
    s.report(1, 0.25);
    Scheduler t = Scheduler::from_json(s.to_json());
    CHECK(t.cursor() == s.cursor());
    for (int i = 0; i < 3; ++i) {
      CHECK(t.active(i) == s.active(i));
      CHECK(t.rounds_completed(i) == s.rounds_completed(i));
    }
    CHECK(t.next() == s.next());
  }
}

TEST_CASE("synthetic beats") {
  SyntheticConfig cfg;
  cfg.per_class = 5;
  cfg.seed = 11;

  SECTION("per-rate lengths follow the window relation") {
    const auto sets = synthesize(cfg);
    REQUIRE(sets.size() == 3);
    CHECK(sets[0].records[0].samples.size() == 150);
    CHECK(sets[1].records[0].samples.size() == 104);
    CHECK(sets[2].records[0].samples.size() == 53);
    for (const auto& set : sets) CHECK(set.size() == 10);
  }

  SECTION("zero noise reproduces the class templates exactly") {
    SyntheticConfig quiet = cfg;
    quiet.noise = 0.0;
    const auto sets = synthesize(quiet);
    const auto& recs = sets[0].records;
    std::vector<const BeatRecordLine*> normal, pvc;
    for (const auto& r : recs) (r.label ? pvc : normal).push_back(&r);
    for (const auto* r : normal) CHECK(r->samples == normal[0]->samples);
    for (const auto* r : pvc) CHECK(r->samples == pvc[0]->samples);

    // width at half maximum separates the classes by construction
    auto width_above = [](const std::vector<double>& s, double level) {
      int n = 0;
      for (double v : s) n += v > level ? 1 : 0;
      return n;
    };
    const int wn = width_above(normal[0]->samples, 0.0);
    const int wp = width_above(pvc[0]->samples, 0.0);
    CHECK(wp >= static_cast<int>(1.8 * wn));
  }

  SECTION("identical seeds give bitwise identical records") {
    const auto a = synthesize(cfg);
    const auto b = synthesize(cfg);
    for (std::size_t s = 0; s < a.size(); ++s)
      for (std::size_t i = 0; i < a[s].records.size(); ++i) {
        CHECK(a[s].records[i].samples == b[s].records[i].samples);
        CHECK(a[s].records[i].id == b[s].records[i].id);
      }
  }

  SECTION("all records are normalized and labeled") {
    const auto sets = synthesize(cfg);
    for (const auto& set : sets)
      for (const auto& r : set.records) {
        double lo = 1e300, hi = -1e300;
        for (double v : r.samples) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        CHECK(lo >= -1.0);
        CHECK(hi <= 1.0);
        CHECK((r.label == 0 || r.label == 1));
      }
  }

  SECTION("configuration validation") {
    SyntheticConfig bad = cfg;
    bad.rates = {90.0};
    CHECK_THROWS_AS(synthesize(bad), Error);
    bad = cfg;
    bad.per_class = 0;
    CHECK_THROWS_AS(synthesize(bad), Error);
    bad = cfg;
    bad.pvc_width_ratio = 1.2;
    CHECK_THROWS_AS(synthesize(bad), Error);
  }
}
