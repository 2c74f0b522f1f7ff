#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "pvcnet/gradcheck.hpp"
#include "pvcnet/loss.hpp"
#include "pvcnet/model.hpp"
#include "pvcnet/random.hpp"

namespace pvcnet {

// Finite-difference verification of every differentiable primitive plus a
// small end-to-end network. One line per check; returns false on any failure.
// All checks use 64-bit precision, step 1e-5, tolerance 1e-4 (losses 1e-6).
inline bool run_gradient_suite(std::ostream& os) {
  bool ok = true;
  RandomEngine eng(20240901);
  auto rnd = [&eng](std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    double* d = t.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) d[i] = eng.uniform(lo, hi);
    return t;
  };
  auto report = [&os, &ok](const std::string& name, double err, double tol) {
    const bool pass = err <= tol;
    ok = ok && pass;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-44s max rel err %.3e  (tol %.0e)  %s\n", name.c_str(),
                  err, tol, pass ? "ok" : "FAIL");
    os << buf;
  };

  // conv1d: input, kernel and bias paths, both paddings, stride 2
  {
    Tensor kernel = rnd({4, 3, 3}), bias = rnd({4});
    Tensor point = rnd({2, 3, 11});
    report("conv1d same (input)",
           grad_check([&](Tape* t, const Tensor& x) {
             return sum(t, conv1d(t, x, kernel, bias, Padding::same, 1));
           }, point, 1e-5).max_rel_error, 1e-4);
    report("conv1d valid stride 2 (input)",
           grad_check([&](Tape* t, const Tensor& x) {
             return sum(t, conv1d(t, x, kernel, bias, Padding::valid, 2));
           }, point, 1e-5).max_rel_error, 1e-4);
    Tensor input = rnd({2, 3, 11});
    report("conv1d same (kernel)",
           grad_check([&](Tape* t, const Tensor& k) {
             return sum(t, conv1d(t, input, k, bias, Padding::same, 1));
           }, kernel, 1e-5).max_rel_error, 1e-4);
    report("conv1d same (bias)",
           grad_check([&](Tape* t, const Tensor& b) {
             return sum(t, conv1d(t, input, kernel, b, Padding::same, 1));
           }, bias, 1e-5).max_rel_error, 1e-4);
  }

  // batch norm: train and infer modes, all three inputs
  {
    Tensor gamma = rnd({3}, 0.5, 1.5), beta = rnd({3});
    Tensor point = rnd({4, 3, 7});
    auto bn_train = [&](Tape* t, const Tensor& x) {
      BatchNormState st;
      st.init(3);
      return sum(t, multiply(t, batchnorm1d(t, x, gamma, beta, BatchNormMode::train, st), x));
    };
    report("batchnorm1d train (input)", grad_check(bn_train, point, 1e-5).max_rel_error, 1e-4);
    Tensor input = rnd({4, 3, 7});
    BatchNormState seeded;
    seeded.init(3);
    {  // one train pass to populate running stats for the infer check
      batchnorm1d(nullptr, rnd({4, 3, 7}), gamma, beta, BatchNormMode::train, seeded);
    }
    report("batchnorm1d train (gamma)",
           grad_check([&](Tape* t, const Tensor& g) {
             BatchNormState st;
             st.init(3);
             return sum(t, multiply(t, batchnorm1d(t, input, g, beta, BatchNormMode::train, st),
                                    input));
           }, gamma, 1e-5).max_rel_error, 1e-4);
    report("batchnorm1d train (beta)",
           grad_check([&](Tape* t, const Tensor& b) {
             BatchNormState st;
             st.init(3);
             return sum(t, multiply(t, batchnorm1d(t, input, gamma, b, BatchNormMode::train, st),
                                    input));
           }, beta, 1e-5).max_rel_error, 1e-4);
    report("batchnorm1d infer (input)",
           grad_check([&](Tape* t, const Tensor& x) {
             BatchNormState st = seeded;
             return sum(t, multiply(t, batchnorm1d(t, x, gamma, beta, BatchNormMode::infer, st), x));
           }, point, 1e-5).max_rel_error, 1e-4);
  }

  // activations; relu checked away from its kink, sigmoid also at +-40
  {
    Tensor point = rnd({2, 3, 5});
    for (std::size_t i = 0; i < point.size(); ++i)
      if (std::fabs(point[i]) < 0.05) point.mutable_data()[i] = 0.1;
    report("relu",
           grad_check([](Tape* t, const Tensor& x) { return sum(t, relu(t, x)); }, point,
                      1e-5).max_rel_error, 1e-4);
    report("sigmoid",
           grad_check([](Tape* t, const Tensor& x) { return sum(t, sigmoid(t, x)); }, point,
                      1e-5).max_rel_error, 1e-4);
    Tensor extremes({4}, {-40.0, -1.0, 1.0, 40.0});
    report("sigmoid saturated",
           grad_check([](Tape* t, const Tensor& x) { return sum(t, sigmoid(t, x)); }, extremes,
                      1e-5).max_rel_error, 1e-4);
  }

  // pooling; tied maxima are excluded from the max-pool check
  {
    Tensor point = rnd({2, 3, 12});
    report("maxpool1d",
           grad_check([](Tape* t, const Tensor& x) { return sum(t, maxpool1d(t, x, 3, 2)); },
                      point, 1e-5, maxpool_tie_mask(point, 3, 2)).max_rel_error, 1e-4);
    Tensor tied({1, 1, 4}, {0.5, 0.7, 0.7, 0.1});
    const auto tied_res =
        grad_check([](Tape* t, const Tensor& x) { return sum(t, maxpool1d(t, x, 4, 1)); }, tied,
                   1e-5, maxpool_tie_mask(tied, 4, 1));
    report("maxpool1d tied window (skips " + std::to_string(tied_res.skipped) + ")",
           tied_res.max_rel_error, 1e-4);
    report("avgpool1d",
           grad_check([](Tape* t, const Tensor& x) { return sum(t, avgpool1d(t, x, 3, 2)); },
                      point, 1e-5).max_rel_error, 1e-4);
  }

  // concat, linear, pyramid pooling
  {
    Tensor other = rnd({2, 2, 6});
    report("concat_channels",
           grad_check([&](Tape* t, const Tensor& x) {
             return sum(t, multiply(t, concat_channels(t, x, other),
                                    concat_channels(t, x, other)));
           }, rnd({2, 3, 6}), 1e-5).max_rel_error, 1e-4);
    Tensor weight = rnd({3, 5}), lbias = rnd({3});
    report("linear (input)",
           grad_check([&](Tape* t, const Tensor& x) {
             return sum(t, linear(t, x, weight, lbias));
           }, rnd({4, 5}), 1e-5).max_rel_error, 1e-4);
    Tensor lin_in = rnd({4, 5});
    report("linear (weight)",
           grad_check([&](Tape* t, const Tensor& w) {
             return sum(t, multiply(t, linear(t, lin_in, w, lbias), linear(t, lin_in, w, lbias)));
           }, weight, 1e-5).max_rel_error, 1e-4);
    Tensor spp_in = rnd({2, 3, 19});
    report("spp_pool [1,4]",
           grad_check([](Tape* t, const Tensor& x) {
             return sum(t, spp_pool(t, x, {1, 4}));
           }, spp_in, 1e-5).max_rel_error, 1e-4);
  }

  // losses against their analytic gradients, tighter tolerance
  {
    const std::vector<int> targets{1, 0, 1, 1, 0, 0};
    Tensor probs({6}, {0.83, 0.21, 0.64, 0.42, 0.11, 0.57});
    for (LossKind kind : {LossKind::weighted, LossKind::unweighted, LossKind::focal}) {
      report("loss " + loss_kind_name(kind),
             grad_check([&](Tape* t, const Tensor& p) {
               return loss_op(t, p, targets, kind, 3.0);
             }, probs, 1e-7).max_rel_error, 1e-6);
    }
  }

  // tiny end-to-end network: every parameter against central differences
  {
    NetworkConfig cfg;
    cfg.growth = 4;
    cfg.stem_filters = 4;
    cfg.block_layers = {1, 1, 1};
    cfg.spp_levels = {1, 2};
    cfg.seed = 7;
    Model model = Model::build(cfg);
    Tensor batch = rnd({4, 1, 16});
    const std::vector<int> targets{1, 0, 1, 0};
    auto loss_now = [&]() {
      return loss_op(nullptr, model.forward(nullptr, batch, BatchNormMode::train), targets,
                     LossKind::weighted).value();
    };
    Tape tape;
    Tensor probs = model.forward(&tape, batch, BatchNormMode::train);
    Tensor loss = loss_op(&tape, probs, targets, LossKind::weighted);
    tape.backward(loss);
    const auto grads = model.collect_grads(tape);
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t pi = 0; pi < model.params().count(); ++pi) {
      Parameter& p = model.params()[static_cast<int>(pi)];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double saved = p.value[j];
        p.value.mutable_data()[j] = saved + h;
        const double up = loss_now();
        p.value.mutable_data()[j] = saved - h;
        const double down = loss_now();
        p.value.mutable_data()[j] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = grads[pi][j];
        worst = std::max(worst,
                         std::fabs(a - numeric) /
                             std::max({1.0, std::fabs(a), std::fabs(numeric)}));
      }
    }
    report("end-to-end tiny dense-spp (all parameters)", worst, 1e-4);
  }

  return ok;
}

}  // namespace pvcnet
