#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pvcnet/checkpoint.hpp"
#include "pvcnet/evaluate.hpp"
#include "pvcnet/train.hpp"

using namespace pvcnet;

namespace {

NetworkConfig tiny_net(std::uint64_t seed = 17) {
  NetworkConfig cfg;
  cfg.growth = 4;
  cfg.stem_filters = 4;
  cfg.block_layers = {1, 1, 1};
  cfg.spp_levels = {1, 4};
  cfg.seed = seed;
  return cfg;
}

std::vector<DatabaseSet> tiny_data(double noise = 0.05, int per_class = 30,
                                   std::uint64_t seed = 3,
                                   std::vector<double> rates = {360.0, 250.0, 128.0}) {
  SyntheticConfig cfg;
  cfg.per_class = per_class;
  cfg.rates = std::move(rates);
  cfg.noise = noise;
  cfg.seed = seed;
  return synthesize(cfg);
}

TrainConfig quick_train(std::uint64_t seed = 5) {
  TrainConfig cfg;
  cfg.batch_size = 20;
  cfg.epochs_per_round = 4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  CHECK(lr_at(cfg, 0) == 0.001);
  CHECK(lr_at(cfg, 99) == 0.001);
  CHECK(lr_at(cfg, 100) == Catch::Approx(0.00095).margin(1e-18));
  CHECK(lr_at(cfg, 250) == Catch::Approx(0.0009025).margin(1e-18));
  CHECK_THROWS_AS(lr_at(cfg, -1), Error);

  SECTION("non-increasing and piecewise constant with period 100") {
    double prev = lr_at(cfg, 0);
    for (long long e = 1; e < 500; ++e) {
      const double lr = lr_at(cfg, e);
      CHECK(lr <= prev);
      if (e % 100 != 0) CHECK(lr == lr_at(cfg, e - 1));
      prev = lr;
    }
  }
}

TEST_CASE("adam steps") {
  ParamStore params;
  params.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
  params.finalize();
  AdamState st;
  st.init_like(params);

  SECTION("zero gradients leave parameters unchanged but advance the step") {
    adam_step(params, {{0.0, 0.0, 0.0}}, st, 0.01);
    CHECK(st.step == 1);
    CHECK(params[0].value[0] == 1.0);
    CHECK(params[0].value[1] == -2.0);
  }

  SECTION("the first step moves by the learning rate against the gradient sign") {
    adam_step(params, {{2.0, -3.0, 0.4}}, st, 0.01);
    CHECK(params[0].value[0] == Catch::Approx(1.0 - 0.01).margin(1e-6));
    CHECK(params[0].value[1] == Catch::Approx(-2.0 + 0.01).margin(1e-6));
    CHECK(params[0].value[2] == Catch::Approx(0.5 - 0.01).margin(1e-6));
  }

  SECTION("under a constant gradient the per-step move approaches the learning rate") {
    const double lr = 0.01;
    double prev = params[0].value[0];
    for (int i = 0; i < 300; ++i) adam_step(params, {{0.7, 0.0, 0.0}}, st, lr);
    const double before = params[0].value[0];
    adam_step(params, {{0.7, 0.0, 0.0}}, st, lr);
    const double move = before - params[0].value[0];
    CHECK(move == Catch::Approx(lr).epsilon(0.05));
    CHECK(params[0].value[0] < prev);  // monotone against the gradient
  }

  SECTION("a non-finite gradient aborts the step and names the parameter") {
    const auto before = params[0].value.values();
    CHECK_THROWS_WITH(adam_step(params, {{1.0, std::nan(""), 0.0}}, st, 0.01),
                      Catch::Matchers::ContainsSubstring("w"));
    CHECK(st.step == 0);
    CHECK(params[0].value.values() == before);
  }
}

TEST_CASE("one small step on a fixed batch decreases its loss") {
  Model model = Model::build(tiny_net());
  const auto dbs = tiny_data();
  const auto& db = dbs[0];
  std::vector<int> idx;
  for (int i = 0; i < 20; ++i) idx.push_back(i);
  Tensor x({20, 1, 150});
  std::vector<int> targets(20);
  double* d = x.mutable_data();
  for (int b = 0; b < 20; ++b) {
    const auto& r = db.records[idx[b]];
    std::copy(r.samples.begin(), r.samples.end(), d + static_cast<std::size_t>(b) * 150);
    targets[b] = r.label;
  }

  AdamState st;
  st.init_like(model.params());
  for (int step = 0; step < 3; ++step) {
    Tape tape;
    Tensor probs = model.forward(&tape, x, BatchNormMode::train);
    Tensor loss = loss_op(&tape, probs, targets, LossKind::weighted);
    const double before = loss.value();
    tape.backward(loss);
    adam_step(model.params(), model.collect_grads(tape), st, 1e-5);
    const double after =
        loss_op(nullptr, model.forward(nullptr, x, BatchNormMode::train), targets,
                LossKind::weighted)
            .value();
    CHECK(after < before);
  }
}

TEST_CASE("training on separable synthetic data") {
  const auto dbs = tiny_data(0.0, 30, 9);
  Model model = Model::build(tiny_net());
  const TrainConfig cfg = quick_train();
  const TrainResult result = train(model, dbs, cfg);

  SECTION("it fits within the epoch budget and generalizes") {
    CHECK(result.history.size() <= 50);
    const auto holdout = tiny_data(0.0, 30, 10);  // fresh draw, same construction
    const EvalResult ev = evaluate(model, holdout);
    REQUIRE(ev.overall.report.accuracy.has_value());
    CHECK(*ev.overall.report.accuracy >= 0.99);
  }

  SECTION("history bookkeeping matches a scan oracle") {
    REQUIRE(!result.history.empty());
    for (std::size_t i = 0; i < result.history.size(); ++i)
      CHECK(result.history[i].epoch == static_cast<long long>(i));
    long long best = -1;
    double best_loss = std::numeric_limits<double>::infinity();
    for (const EpochRecord& r : result.history)
      if (r.pooled_val_loss < best_loss) {
        best_loss = r.pooled_val_loss;
        best = r.epoch;
      }
    CHECK(result.best_epoch == best);
    CHECK(result.best_pooled_val == best_loss);
  }

  SECTION("a dense model trained at one set of lengths evaluates at another") {
    SyntheticConfig sc;
    sc.per_class = 10;
    sc.rates = {128.0};  // length 53, absent from training rates
    sc.noise = 0.0;
    sc.seed = 12;
    auto short_beats = synthesize(sc);
    const EvalResult ev = evaluate(model, short_beats);
    REQUIRE(ev.overall.report.accuracy.has_value());
  }
}

TEST_CASE("training is deterministic in seed and data") {
  const auto dbs = tiny_data(0.05, 20, 4, {360.0, 128.0});
  TrainConfig cfg = quick_train(21);
  cfg.epochs_per_round = 3;

  Model a = Model::build(tiny_net(30));
  Model b = Model::build(tiny_net(30));
  const TrainResult ra = train(a, dbs, cfg);
  const TrainResult rb = train(b, dbs, cfg);

  CHECK(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].val_loss == rb.history[i].val_loss);
  }
  const auto pa = a.snapshot_params(), pb = b.snapshot_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("checkpoint round trips") {
  const auto dbs = tiny_data(0.05, 16, 6, {360.0});
  Model model = Model::build(tiny_net(31));
  TrainConfig cfg = quick_train(22);
  cfg.epochs_per_round = 2;
  Trainer trainer(model, dbs, cfg);
  trainer.run();
  const Checkpoint ck = make_checkpoint(model, cfg, trainer.state());

  SECTION("save, load, save is byte-identical") {
    const std::string blob1 = serialize_checkpoint(ck);
    const Checkpoint loaded = deserialize_checkpoint(blob1);
    const std::string blob2 = serialize_checkpoint(loaded);
    CHECK(blob1 == blob2);
  }

  SECTION("a loaded model reproduces the saved model's outputs bitwise") {
    const Checkpoint loaded = deserialize_checkpoint(serialize_checkpoint(ck));
    Model revived = model_from_checkpoint(loaded);
    Tensor x({2, 1, 150});
    double* d = x.mutable_data();
    RandomEngine eng(77);
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = eng.uniform(-1, 1);
    Tensor p1 = model.forward(nullptr, x, BatchNormMode::infer);
    Tensor p2 = revived.forward(nullptr, x, BatchNormMode::infer);
    CHECK(p1[0] == p2[0]);
    CHECK(p1[1] == p2[1]);
  }

  SECTION("corruption is rejected with a reason") {
    std::string blob = serialize_checkpoint(ck);
    CHECK_THROWS_WITH(deserialize_checkpoint(blob.substr(0, blob.size() / 2)),
                      Catch::Matchers::ContainsSubstring("truncated"));
    std::string bad_magic = blob;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH(deserialize_checkpoint(bad_magic),
                      Catch::Matchers::ContainsSubstring("magic"));
    std::string bad_version = blob;
    bad_version[4] = 9;
    CHECK_THROWS_WITH(deserialize_checkpoint(bad_version),
                      Catch::Matchers::ContainsSubstring("version"));
  }
}

TEST_CASE("an interrupted run resumed from its checkpoint matches the unbroken run") {
  const auto dbs = tiny_data(0.05, 20, 8, {360.0, 128.0});
  TrainConfig cfg = quick_train(23);
  cfg.epochs_per_round = 3;

  Model straight = Model::build(tiny_net(32));
  const TrainResult unbroken = train(straight, dbs, cfg);

  Model interrupted = Model::build(tiny_net(32));
  Trainer first_leg(interrupted, dbs, cfg);
  TrainHooks stopper;
  stopper.after_epoch = [](const EpochRecord& r) { return r.epoch < 3; };
  const TrainResult partial = first_leg.run(stopper);
  CHECK_FALSE(partial.completed);
  const std::string blob =
      serialize_checkpoint(make_checkpoint(interrupted, cfg, first_leg.state()));

  const Checkpoint ck = deserialize_checkpoint(blob);
  Model resumed = model_from_checkpoint(ck);
  Trainer second_leg(resumed, dbs, ck.train_config, ck.trainer);
  const TrainResult finished = second_leg.run();

  CHECK(finished.completed);
  REQUIRE(finished.history.size() == unbroken.history.size());
  for (std::size_t i = 0; i < finished.history.size(); ++i) {
    CHECK(finished.history[i].train_loss == unbroken.history[i].train_loss);
    CHECK(finished.history[i].pooled_val_loss == unbroken.history[i].pooled_val_loss);
  }
  const auto ps = straight.snapshot_params(), pr = resumed.snapshot_params();
  REQUIRE(ps.size() == pr.size());
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i] == pr[i]);
}

TEST_CASE("training rejects inadmissible pairings") {
  const auto dbs = tiny_data(0.05, 8, 6, {128.0});  // length 53
  NetworkConfig pc = tiny_net();
  pc.variant = Variant::plain20;
  pc.plain_input_length = 150;
  Model plain = Model::build(pc);
  CHECK_THROWS_WITH(train(plain, dbs, quick_train()),
                    Catch::Matchers::ContainsSubstring("150"));
}
