#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "revlearn/models.hpp"
#include "revlearn/rng.hpp"

using namespace revlearn;

TEST_SUITE_BEGIN("models");

namespace {

std::vector<int32_t> full_batch(const Dataset& ds) {
  std::vector<int32_t> idx(static_cast<size_t>(ds.n));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::vector<double> randn(uint64_t seed, uint64_t stream, size_t n, double scale = 1.0) {
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = scale * keyed_normal(seed, stream, i);
  return out;
}

// Straight-line softmax cross-entropy, no tape, no shared code path.
double plain_logistic_loss(const Dataset& ds, const std::vector<double>& w) {
  const int64_t D = ds.d;
  const int K = ds.num_classes;
  double total = 0.0;
  for (int64_t i = 0; i < ds.n; ++i) {
    std::vector<double> logits(static_cast<size_t>(K));
    for (int c = 0; c < K; ++c) {
      double z = w[static_cast<size_t>(D * K + c)];  // bias
      for (int64_t p = 0; p < D; ++p) {
        z += ds.inputs[static_cast<size_t>(i * D + p)] * w[static_cast<size_t>(p * K + c)];
      }
      logits[static_cast<size_t>(c)] = z;
    }
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double s = 0.0;
    for (double v : logits) s += std::exp(v - m);
    total += -(logits[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])] - m - std::log(s));
  }
  return total / static_cast<double>(ds.n);
}

Dataset tiny_dataset() {
  Dataset ds;
  ds.n = 3;
  ds.d = 2;
  ds.num_classes = 2;
  ds.inputs = {0.1, 0.8, 0.9, 0.2, 0.4, 0.5};
  ds.labels = {1, 0, 1};
  return ds;
}

}  // namespace

TEST_CASE("logistic loss at w = 0 is log K") {
  const Dataset ds = synthetic_classification(1, 40, 6, 10);
  const LogisticModel model(ds, ds, {});
  const std::vector<double> w(static_cast<size_t>(model.dim()), 0.0);
  const auto lg = eval_loss_grad(model, w, {}, 1, full_batch(ds));
  CHECK(lg.loss == doctest::Approx(std::log(10.0)).epsilon(1e-13));
}

TEST_CASE("logistic loss goes to zero at infinite margin") {
  Dataset ds = tiny_dataset();
  ds = ds.take(0, 1);  // single example, label 1
  const LogisticModel model(ds, ds, {});
  std::vector<double> w(static_cast<size_t>(model.dim()), 0.0);
  w[static_cast<size_t>(ds.d * 2 + 1)] = 50.0;  // huge correct-class bias
  const auto lg = eval_loss_grad(model, w, {}, 1, full_batch(ds));
  CHECK(lg.loss < 1e-20);
}

TEST_CASE("logistic loss matches a straight-line reimplementation") {
  const Dataset ds = tiny_dataset();
  const LogisticModel model(ds, ds, {});
  const auto w = randn(7, 0, static_cast<size_t>(model.dim()), 0.7);
  const auto lg = eval_loss_grad(model, w, {}, 1, full_batch(ds));
  CHECK(lg.loss == doctest::Approx(plain_logistic_loss(ds, w)).epsilon(1e-14));
}

TEST_CASE("mlp at zero weights is log K and its gradient passes finite differences") {
  const Dataset ds = synthetic_classification(2, 30, 5, 4);
  MlpConfig mc;
  mc.widths = {5, 3};
  const MlpModel model(ds, ds, mc);
  {
    const std::vector<double> w(static_cast<size_t>(model.dim()), 0.0);
    const auto lg = eval_loss_grad(model, w, {}, 1, full_batch(ds));
    CHECK(lg.loss == doctest::Approx(std::log(4.0)).epsilon(1e-13));
  }
  const auto w = randn(8, 0, static_cast<size_t>(model.dim()), 0.4);
  const auto lg = eval_loss_grad(model, w, {}, 1, full_batch(ds));
  const double h = 1e-5;
  for (size_t i = 0; i < w.size(); i += 7) {
    std::vector<double> wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    const double fd = (eval_loss_grad(model, wp, {}, 1, full_batch(ds)).loss -
                       eval_loss_grad(model, wm, {}, 1, full_batch(ds)).loss) /
                      (2 * h);
    CHECK(std::abs(lg.grad_w[i] - fd) <= 1e-6 * std::max(0.1, std::abs(fd)));
  }
}

TEST_CASE("one-hidden-unit mlp matches a hand computation") {
  Dataset ds;
  ds.n = 1;
  ds.d = 1;
  ds.num_classes = 2;
  ds.inputs = {0.6};
  ds.labels = {1};
  MlpConfig mc;
  mc.widths = {1, 1};
  const MlpModel model(ds, ds, mc);
  REQUIRE(model.dim() == 1 + 1 + 2 + 2);  // W1, b1, W2, b2
  const std::vector<double> w{0.5, -0.2, 0.8, -0.3, 0.1, 0.4};
  const double hdn = std::tanh(0.6 * 0.5 + (-0.2));
  const double z0 = hdn * 0.8 + 0.1;
  const double z1 = hdn * (-0.3) + 0.4;
  const double m = std::max(z0, z1);
  const double expected = -(z1 - m - std::log(std::exp(z0 - m) + std::exp(z1 - m)));
  const auto lg = eval_loss_grad(model, w, {}, 1, full_batch(ds));
  CHECK(lg.loss == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("per-parameter l2 penalty") {
  ad::Tape tape;
  {
    const std::vector<double> wv{2.0};
    const std::vector<double> th{0.0};
    ad::Var w = tape.input(wv, 1, 1);
    ad::Var t = tape.input(th, 1, 1);
    CHECK(ad::value(per_param_l2(w, t))[0] == doctest::Approx(2.0).epsilon(1e-15));
  }
  {
    const std::vector<double> wv{3.0, -1.0};
    const std::vector<double> th{-40.0, -40.0};
    ad::Var w = tape.input(wv, 2, 1);
    ad::Var t = tape.input(th, 2, 1);
    CHECK(ad::value(per_param_l2(w, t))[0] < 1e-15);
  }
  // d penalty / d theta_i = 0.5 exp(theta_i) w_i^2, against finite differences
  const std::vector<double> wv = randn(9, 0, 4);
  const std::vector<double> th = randn(9, 1, 4, 0.5);
  ad::Var w = tape.input(wv, 4, 1);
  ad::Var t = tape.input(th, 4, 1);
  const std::array<ad::Var, 1> wrt{t};
  const auto g = ad::value(ad::gradients(per_param_l2(w, t), wrt)[0]);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(g[i] == doctest::Approx(0.5 * std::exp(th[i]) * wv[i] * wv[i]).epsilon(1e-12));
  }
}

TEST_CASE("tied penalty examples") {
  ad::Tape tape;
  const std::vector<double> wv{1.0, 0.0, 0.0, 1.0};  // task a = [1,0], task b = [0,1]
  ad::Var w = tape.input(wv, 4, 1);
  const std::vector<std::vector<std::pair<int64_t, int64_t>>> slices{{{0, 2}, {2, 2}}};

  SUBCASE("zero strengths give zero penalty") {
    const std::vector<std::vector<double>> A{{0.0, 0.0, 0.0, 0.0}};
    CHECK(ad::value(tied_penalty(w, A, slices))[0] == 0.0);
  }
  SUBCASE("identical weights give zero penalty regardless of strengths") {
    const std::vector<double> same{0.7, -0.3, 0.7, -0.3};
    ad::Var ws = tape.input(same, 4, 1);
    const std::vector<std::vector<double>> A{{0.0, 5.0, 5.0, 0.0}};
    CHECK(ad::value(tied_penalty(ws, A, slices))[0] == doctest::Approx(0.0));
  }
  SUBCASE("unit strength on orthogonal unit blocks gives 2") {
    const std::vector<std::vector<double>> A{{0.0, 1.0, 1.0, 0.0}};
    CHECK(ad::value(tied_penalty(w, A, slices))[0] == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("asymmetric strengths are rejected") {
    const std::vector<std::vector<double>> A{{0.0, 1.0, 0.5, 0.0}};
    CHECK_THROWS_AS(tied_penalty(w, A, slices), ContractViolation);
  }
  SUBCASE("task relabeling with a permuted matrix leaves the value unchanged") {
    const std::vector<std::vector<double>> A{{0.3, 1.2, 1.2, 0.9}};
    const double before = ad::value(tied_penalty(w, A, slices))[0];
    const std::vector<std::vector<std::pair<int64_t, int64_t>>> swapped{{{2, 2}, {0, 2}}};
    const std::vector<std::vector<double>> Ap{{0.9, 1.2, 1.2, 0.3}};
    const double after = ad::value(tied_penalty(w, Ap, swapped))[0];
    CHECK(before == doctest::Approx(after).epsilon(1e-15));
  }
}

TEST_CASE("learned-data loss: blank images and zero weights give log K") {
  const Dataset valid = synthetic_classification(3, 40, 8, 5);
  const DataHyperModel model(valid, 5);
  const std::vector<double> w(static_cast<size_t>(model.dim()), 0.0);
  const std::vector<double> pixels(static_cast<size_t>(model.hyper_layout().dim()), 0.0);
  const std::vector<int32_t> batch{0, 1, 2, 3, 4};
  const auto lg = eval_loss_grad(model, w, pixels, 1, batch);
  CHECK(lg.loss == doctest::Approx(std::log(5.0)).epsilon(1e-13));
}

TEST_CASE("learned-data pixel gradient matches the analytic one-pixel case") {
  // one example, one pixel, two classes, label 0
  Dataset valid;
  valid.n = 2;
  valid.d = 1;
  valid.num_classes = 2;
  valid.inputs = {0.3, 0.9};
  valid.labels = {0, 1};
  const DataHyperModel model(valid, 2);

  const std::vector<double> w{0.7, -0.4, 0.2, -0.1};  // W (1x2), b (2)
  const std::vector<double> pixels{-0.5, 1.25};        // negative pixels are fine
  ad::Tape tape;
  ad::Var wv = tape.input(w, 4, 1);
  ad::Var th = tape.input(pixels, 2, 1);
  const std::vector<int32_t> batch{0, 1};
  ad::Var loss = model.train_loss(tape, wv, th, 1, batch);
  const std::array<ad::Var, 1> wrt{th};
  const auto g = ad::value(ad::gradients(loss, wrt)[0]);

  // d/dx CE(softmax(xW+b), y) = sum_c (p_c - 1{c=y}) W_c
  for (int e = 0; e < 2; ++e) {
    const double x = pixels[static_cast<size_t>(e)];
    const double z0 = x * 0.7 + 0.2;
    const double z1 = x * (-0.4) + (-0.1);
    const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
    const double p0 = 1.0 - p1;
    const int y = e % 2;
    const double expect =
        ((p0 - (y == 0 ? 1.0 : 0.0)) * 0.7 + (p1 - (y == 1 ? 1.0 : 0.0)) * (-0.4)) / 2.0;
    CHECK(g[static_cast<size_t>(e)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("init_weights is deterministic with the requested scales") {
  ParamLayout layout;
  layout.groups = {{"a", 0, 10000}, {"b", 10000, 4}};
  const std::vector<double> scales{std::log(1.0 / std::sqrt(784.0)), std::log(2.0)};
  const auto w1 = init_weights(scales, layout, 99);
  const auto w2 = init_weights(scales, layout, 99);
  CHECK(w1 == w2);
  const auto w3 = init_weights(scales, layout, 100);
  CHECK(w1 != w3);

  // empirical std of a 10^4 draw group within 3% of exp(theta)
  double sq = 0.0;
  for (int i = 0; i < 10000; ++i) sq += w1[static_cast<size_t>(i)] * w1[static_cast<size_t>(i)];
  const double std_hat = std::sqrt(sq / 10000.0);
  CHECK(std_hat == doctest::Approx(1.0 / std::sqrt(784.0)).epsilon(0.03));

  // very negative scale means (near) zero init
  const std::vector<double> tiny_scales{-40.0, -40.0};
  const auto w0 = init_weights(tiny_scales, layout, 1);
  for (double v : w0) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("meta objective selects the configured split without regularization") {
  const Dataset train = synthetic_classification(4, 30, 4, 3);
  const Dataset valid = synthetic_classification(4, 12, 4, 3, 3.0, 5);
  LogisticConfig cv;
  cv.objective = Objective::Validation;
  cv.per_param_reg = true;  // regularizer must not leak into f(w)
  const LogisticModel mv(train, valid, cv);
  LogisticConfig ct;
  ct.objective = Objective::Training;
  const LogisticModel mt(train, valid, ct);

  const auto w = randn(11, 0, static_cast<size_t>(mv.dim()), 0.5);
  CHECK(eval_objective(mv, w) == doctest::Approx(plain_logistic_loss(valid, w)).epsilon(1e-13));
  CHECK(eval_objective(mt, w) == doctest::Approx(plain_logistic_loss(train, w)).epsilon(1e-13));
}

TEST_CASE("hvp_thetaw via finite differences of the gradient") {
  const Dataset ds = synthetic_classification(5, 20, 4, 3);
  LogisticConfig lc;
  lc.per_param_reg = true;
  const LogisticModel model(ds, ds, lc);
  const auto w = randn(12, 0, static_cast<size_t>(model.dim()), 0.4);
  const auto th = randn(12, 1, static_cast<size_t>(model.hyper_layout().dim()), 0.3);
  const auto vec = randn(12, 2, w.size());
  const auto batch = full_batch(ds);

  const auto hv = hvp_thetaw(model, w, th, 1, batch, vec);
  const double h = 1e-6;
  for (size_t j = 0; j < th.size(); j += 5) {
    std::vector<double> tp = th, tm = th;
    tp[j] += h;
    tm[j] -= h;
    const auto gp = eval_loss_grad(model, w, tp, 1, batch).grad_w;
    const auto gm = eval_loss_grad(model, w, tm, 1, batch).grad_w;
    double fd = 0.0;
    for (size_t i = 0; i < w.size(); ++i) fd += vec[i] * (gp[i] - gm[i]) / (2 * h);
    CHECK(std::abs(hv[j] - fd) <= 1e-6 * std::max(0.1, std::abs(fd)));
  }
}

TEST_SUITE_END();
