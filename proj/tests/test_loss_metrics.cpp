#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pvcnet/loss.hpp"
#include "pvcnet/metrics.hpp"
#include "pvcnet/random.hpp"

using namespace pvcnet;

namespace {

LabeledBatch random_batch(RandomEngine& eng, std::size_t n) {
  LabeledBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.outputs.push_back(0.02 + 0.96 * eng.uniform01());
    b.targets.push_back(eng.below(2) ? 1 : 0);
  }
  return b;
}

}  // namespace

TEST_CASE("class weights") {
  std::vector<int> imbalanced;
  for (int i = 0; i < 30; ++i) imbalanced.push_back(1);
  for (int i = 0; i < 70; ++i) imbalanced.push_back(0);
  const ClassWeights w = class_weights(imbalanced);
  CHECK(w.pvc == Catch::Approx(0.7).margin(1e-15));
  CHECK(w.non_pvc == Catch::Approx(0.3).margin(1e-15));

  const ClassWeights balanced = class_weights({1, 0, 1, 0});
  CHECK(balanced.pvc == 0.5);
  CHECK(balanced.non_pvc == 0.5);

  const ClassWeights single = class_weights(std::vector<int>(100, 0));
  CHECK(single.non_pvc == 0.0);
  CHECK(single.pvc == 1.0);

  CHECK_THROWS_AS(class_weights({}), Error);

  SECTION("weights of a two-class batch always sum to one") {
    RandomEngine eng(21);
    for (int trial = 0; trial < 300; ++trial) {
      LabeledBatch b = random_batch(eng, 2 + eng.below(60));
      bool has0 = false, has1 = false;
      for (int t : b.targets) (t ? has1 : has0) = true;
      if (!(has0 && has1)) continue;
      const ClassWeights cw = class_weights(b.targets);
      CHECK(cw.pvc + cw.non_pvc == Catch::Approx(1.0).margin(1e-12));
    }
  }
}

TEST_CASE("weighted binary cross entropy") {
  SECTION("balanced batch of coin flips has the closed form") {
    LabeledBatch b;
    const int n = 10;
    for (int i = 0; i < n; ++i) {
      b.outputs.push_back(0.5);
      b.targets.push_back(i % 2);
    }
    CHECK(weighted_bce(b) == Catch::Approx(0.5 * n * std::log(2.0)).margin(1e-12));
  }

  SECTION("perfect predictions drive the loss to zero") {
    LabeledBatch b{{1.0 - 1e-9, 1e-9}, {1, 0}};
    CHECK(weighted_bce(b) < 1e-8);
    CHECK(weighted_bce(b) >= 0.0);
  }

  SECTION("hand-evaluated two-sample batch") {
    LabeledBatch b{{0.9, 0.2}, {1, 0}};
    CHECK(weighted_bce(b) ==
          Catch::Approx(-0.5 * (std::log(0.9) + std::log(0.8))).margin(1e-15));
  }

  SECTION("boundary outputs are clamped and flagged") {
    LabeledBatch b{{1.0, 0.0}, {1, 0}};
    bool clamped = false;
    const double loss = weighted_bce(b, &clamped);
    CHECK(clamped);
    CHECK(std::isfinite(loss));
    bool untouched = false;
    weighted_bce(LabeledBatch{{0.4, 0.6}, {1, 0}}, &untouched);
    CHECK_FALSE(untouched);
  }

  SECTION("mismatched or non-binary batches are rejected") {
    CHECK_THROWS_AS(weighted_bce(LabeledBatch{{0.5}, {1, 0}}), Error);
    CHECK_THROWS_AS(weighted_bce(LabeledBatch{{0.5}, {2}}), Error);
  }
}

TEST_CASE("focal loss") {
  SECTION("gamma zero is the weighted loss, bitwise") {
    RandomEngine eng(22);
    for (int trial = 0; trial < 100; ++trial) {
      LabeledBatch b = random_batch(eng, 1 + eng.below(40));
      CHECK(focal_loss(b, 0.0) == weighted_bce(b));
    }
  }

  SECTION("modulating factor at p 0.9 gamma 3 is one thousandth") {
    const double factor = std::pow(1.0 - 0.9, 3.0);
    CHECK(std::fabs(factor - 0.001) <= 1e-17);
    // a missed detection at p 0.1 is 729x the factor of a confident one
    CHECK(std::pow(1.0 - 0.1, 3.0) / std::pow(1.0 - 0.9, 3.0) ==
          Catch::Approx(729.0).epsilon(1e-9));
  }

  SECTION("both losses decrease when a correct-class probability improves") {
    RandomEngine eng(23);
    for (int trial = 0; trial < 50; ++trial) {
      LabeledBatch b = random_batch(eng, 2 + eng.below(20));
      const std::size_t i = eng.below(b.outputs.size());
      LabeledBatch better = b;
      better.outputs[i] = b.targets[i] == 1 ? std::min(0.999, b.outputs[i] + 0.05)
                                            : std::max(0.001, b.outputs[i] - 0.05);
      if (better.outputs[i] == b.outputs[i]) continue;
      CHECK(weighted_bce(better) < weighted_bce(b));
      CHECK(focal_loss(better, 3.0) < focal_loss(b, 3.0));
      CHECK(weighted_bce(b) >= 0.0);
      CHECK(focal_loss(b, 3.0) >= 0.0);
    }
  }

  SECTION("analytic gradients match finite differences in the smooth region") {
    RandomEngine eng(24);
    LabeledBatch b = random_batch(eng, 12);
    for (double gamma : {0.0, 3.0}) {
      const auto grad =
          gamma == 0.0 ? weighted_bce_grad(b) : focal_loss_grad(b, gamma);
      for (std::size_t i = 0; i < b.outputs.size(); ++i) {
        const double h = 1e-7;
        LabeledBatch up = b, down = b;
        up.outputs[i] += h;
        down.outputs[i] -= h;
        const double fu = gamma == 0.0 ? weighted_bce(up) : focal_loss(up, gamma);
        const double fd = gamma == 0.0 ? weighted_bce(down) : focal_loss(down, gamma);
        const double numeric = (fu - fd) / (2.0 * h);
        CHECK(std::fabs(grad[i] - numeric) /
                  std::max({1.0, std::fabs(grad[i]), std::fabs(numeric)}) <=
              1e-6);
      }
    }
  }
}

TEST_CASE("confusion matrix") {
  const ConfusionMatrix cm = confusion({0.9, 0.1}, {1, 0});
  CHECK(cm.tp == 1);
  CHECK(cm.tn == 1);
  CHECK(cm.fp == 0);
  CHECK(cm.fn == 0);

  SECTION("a tie at the threshold counts as positive") {
    const ConfusionMatrix tie = confusion({0.5}, {0});
    CHECK(tie.fp == 1);
  }

  SECTION("random pairs match a per-sample scan") {
    RandomEngine eng(25);
    std::vector<double> outputs;
    std::vector<int> targets;
    for (int i = 0; i < 1000; ++i) {
      outputs.push_back(eng.uniform01());
      targets.push_back(eng.below(2) ? 1 : 0);
    }
    const ConfusionMatrix got = confusion(outputs, targets);
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    for (int i = 0; i < 1000; ++i) {
      const bool pred = outputs[i] >= 0.5;
      if (targets[i] == 1 && pred) tp++;
      if (targets[i] == 1 && !pred) fn++;
      if (targets[i] == 0 && pred) fp++;
      if (targets[i] == 0 && !pred) tn++;
    }
    CHECK(got.tp == tp);
    CHECK(got.fp == fp);
    CHECK(got.tn == tn);
    CHECK(got.fn == fn);
    CHECK(got.total() == 1000);
  }
}

TEST_CASE("metrics report") {
  SECTION("the published sensitivity/specificity pair gives the published index") {
    const ConfusionMatrix cm{9737, 61, 9939, 263};
    const MetricsReport r = metrics(cm);
    CHECK(*r.sensitivity * 100 == Catch::Approx(97.37).margin(1e-9));
    CHECK(*r.specificity * 100 == Catch::Approx(99.39).margin(1e-9));
    CHECK(*r.youden * 100 == Catch::Approx(96.76).margin(1e-9));
    CHECK(r.csv_row() == "98.38,97.37,99.39,99.38,96.76");
  }

  SECTION("hand-computed counts") {
    const ConfusionMatrix cm{90, 5, 95, 10};
    const MetricsReport r = metrics(cm);
    CHECK(*r.accuracy == Catch::Approx(0.925).margin(1e-12));
    CHECK(*r.sensitivity == Catch::Approx(0.90).margin(1e-12));
    CHECK(*r.specificity == Catch::Approx(0.95).margin(1e-12));
    CHECK(*r.ppv == Catch::Approx(90.0 / 95.0).margin(1e-12));
    CHECK(*r.youden == Catch::Approx(0.85).margin(1e-12));
  }

  SECTION("undefined values render as a slash") {
    const ConfusionMatrix cm{0, 0, 96, 4};  // no positive predictions
    const MetricsReport r = metrics(cm);
    CHECK_FALSE(r.ppv.has_value());
    CHECK(r.csv_row().find("/") != std::string::npos);
    const ConfusionMatrix neg_only{0, 3, 97, 0};
    CHECK_FALSE(metrics(neg_only).sensitivity.has_value());
    CHECK_THROWS_AS(metrics(ConfusionMatrix{}), Error);
  }

  SECTION("youden equals sensitivity plus specificity minus one") {
    RandomEngine eng(26);
    for (int trial = 0; trial < 200; ++trial) {
      ConfusionMatrix cm{static_cast<long long>(eng.below(50) + 1),
                         static_cast<long long>(eng.below(50)),
                         static_cast<long long>(eng.below(50) + 1),
                         static_cast<long long>(eng.below(50))};
      const MetricsReport r = metrics(cm);
      REQUIRE(r.youden.has_value());
      CHECK(*r.youden ==
            Catch::Approx(*r.sensitivity + *r.specificity - 1.0).margin(1e-12));
    }
  }

  SECTION("key-value block carries all five fields") {
    const MetricsReport r = metrics(ConfusionMatrix{1, 1, 1, 1});
    const std::string kv = r.kv_block();
    for (const char* key : {"accuracy", "sensitivity", "specificity", "ppv", "youden"})
      CHECK(kv.find(key) != std::string::npos);
  }
}

TEST_CASE("loss op wires weights by kind") {
  Tensor probs({4}, {0.8, 0.3, 0.6, 0.4});
  const std::vector<int> targets{1, 0, 1, 0};
  LabeledBatch b{probs.values(), targets};
  CHECK(loss_op(nullptr, probs, targets, LossKind::weighted).value() == weighted_bce(b));
  CHECK(loss_op(nullptr, probs, targets, LossKind::unweighted).value() == unweighted_bce(b));
  CHECK(loss_op(nullptr, probs, targets, LossKind::focal, 3.0).value() == focal_loss(b, 3.0));
  CHECK_THROWS_AS(parse_loss_kind("hinge"), Error);
}
