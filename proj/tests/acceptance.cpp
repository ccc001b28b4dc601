// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
// run them individually with -tc="criterion N*".

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "revlearn/experiments.hpp"
#include "revlearn/meta.hpp"
#include "revlearn/models.hpp"
#include "revlearn/rng.hpp"
#include "revlearn/train.hpp"

using namespace revlearn;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[criterion %d] %s -- %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  CHECK_MESSAGE(pass, "criterion ", criterion, ": ", detail);
}

std::vector<double> randn(uint64_t seed, uint64_t stream, size_t n, double scale = 1.0) {
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = scale * keyed_normal(seed, stream, i);
  return out;
}

double max_rel_err(std::span<const double> a, std::span<const double> b, double atol = 1e-12) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst,
                     std::abs(a[i] - b[i]) / (std::max(std::abs(a[i]), std::abs(b[i])) + atol));
  }
  return worst;
}

QuadraticModel noisy_quadratic(int64_t dim, uint64_t seed) {
  std::vector<double> h(static_cast<size_t>(dim));
  for (int64_t i = 0; i < dim; ++i) {
    h[static_cast<size_t>(i)] = 0.5 + keyed_uniform(seed, 0, static_cast<uint64_t>(i));
  }
  return QuadraticModel(std::move(h), 0.05, seed + 1);
}

// Mean information-buffer growth for a stream of fresh random words.
double stream_bits_per_step(const Ratio& r, int steps, int streams) {
  double acc = 0.0;
  for (int s = 0; s < streams; ++s) {
    InfoBuffer buf;
    for (int t = 0; t < steps; ++t) {
      int64_t c = static_cast<int64_t>(keyed_u64(9000 + static_cast<uint64_t>(s), 0,
                                                 static_cast<uint64_t>(t)));
      rat_mul(buf, c, r);
    }
    acc += buf.bits() / steps;
  }
  return acc / streams;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// The frozen desk-scale learning-rate-schedule experiment.
ExperimentConfig lr_schedule_config(const std::filesystem::path& out) {
  ExperimentConfig cfg;
  cfg.experiment = ExperimentId::LrSchedule;
  cfg.output_dir = out.string();
  cfg.T = 100;
  cfg.batch_size = 50;
  cfg.meta_iterations = 20;
  cfg.seeds = 3;
  cfg.meta_step = 0.04;
  cfg.alpha0 = 0.4;
  cfg.gamma0 = 0.9;
  cfg.dataset.n = 1000;
  cfg.dataset.d = 12;
  cfg.dataset.k = 3;
  cfg.dataset.separation = 8.0;
  cfg.dataset.label_noise = 0.1;
  cfg.model.type = "mlp";
  cfg.model.widths = {12, 20, 20, 20};
  return cfg;
}

}  // namespace

TEST_CASE("criterion 1: bit-exact reversibility at scale") {
  const auto t0 = Clock::now();
  const int T = 1000;
  const int64_t dim = 500;
  bool all_ok = true;
  for (int seed = 0; seed < 20 && all_ok; ++seed) {
    const auto model = noisy_quadratic(dim, 100 + static_cast<uint64_t>(seed));
    const Schedules sched = Schedules::constant(T, 1, 0.05, Ratio(9, 10));
    const BatchSchedule batches = batch_schedule(1, 1, 1, T);
    const auto w1 = randn(200 + static_cast<uint64_t>(seed), 0, static_cast<size_t>(dim));
    TrainState st = TrainState::init(w1);
    const TrainState initial = st;
    sgd_forward(st, sched, model, batches);
    const auto obj = eval_objective_grad(model, st.w.to_reals());
    sgd_reverse(st, sched, model, batches, obj.grad);
    all_ok = all_ok && st.w.raw == initial.w.raw && st.v.raw == initial.v.raw &&
             st.buffer_bits_total() == 0.0;
  }
  const double secs = seconds_since(t0);
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "T=1000 dim=500 gamma=9/10, 20 seeds recovered (w1,v1) bit-exactly, buffers "
                "empty, %.1fs (< 60s)",
                secs);
  report(1, all_ok && secs < 60.0, detail);
}

TEST_CASE("criterion 2: entropy accounting per decay") {
  const int T = 10000;
  const double r4950 = stream_bits_per_step(Ratio(49, 50), T, 8);
  const double r78 = stream_bits_per_step(Ratio(7, 8), T, 8);
  const double r12 = stream_bits_per_step(Ratio(1, 2), T, 8);
  const double r11 = stream_bits_per_step(Ratio(1, 1), T, 2);
  const bool ok_4950 = std::abs(r4950 - 0.029) <= 0.1 * 0.029;
  const bool ok_78 = std::abs(r78 - 0.19) <= 0.1 * 0.19;
  const bool ok_12 = std::abs(r12 - 1.0) <= 1e-3;
  const bool ok_11 = r11 == 0.0;
  char detail[200];
  std::snprintf(detail, sizeof detail,
                "bits/step over T=1e4: 49/50 -> %.4f (0.029 +/- 10%%), 7/8 -> %.4f (0.19 +/- "
                "10%%), 1/2 -> %.6f (1.0), 1/1 -> %.1f (0)",
                r4950, r78, r12, r11);
  report(2, ok_4950 && ok_78 && ok_12 && ok_11, detail);
}

TEST_CASE("criterion 3: memory factor about 200 at gamma 9/10") {
  const auto t0 = Clock::now();
  BenchSpec spec;
  spec.gammas = {Ratio(9, 10)};
  spec.steps = 10000;
  spec.dim = 64;
  const auto rows = memory_bench(spec);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].ratio_vs_naive.has_value());
  const double ratio = *rows[0].ratio_vs_naive;
  const double secs = seconds_since(t0);
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "measured 32T / buffer bits per element = %.1f (within [180, 230]), %.1fs (< 30s)",
                ratio, secs);
  report(3, ratio >= 180.0 && ratio <= 230.0 && secs < 30.0, detail);
}

TEST_CASE("criterion 4: hypergradient correctness chain") {
  const auto t0 = Clock::now();
  // toy logistic problem: 200 examples, 10 features, 3 classes, T=50,
  // 8 schedule groups, per-parameter regularization in theta
  Dataset all = synthetic_classification(21, 240, 10, 3);
  Dataset train = all.take(0, 200);
  Dataset valid = all.take(200, 40);
  LogisticConfig lc;
  lc.num_groups = 8;
  lc.per_param_reg = true;
  lc.objective = Objective::Validation;
  const LogisticModel model(train, valid, lc);

  const int T = 50;
  const int G = 8;
  Schedules sched;
  sched.T = T;
  sched.num_groups = G;
  const Ratio pool[] = {Ratio(1, 2), Ratio(3, 5), Ratio(2, 3), Ratio(4, 5),
                        Ratio(5, 6), Ratio(7, 8), Ratio(9, 10), Ratio(9, 11)};
  for (int i = 0; i < T * G; ++i) {
    sched.alphas.push_back(0.05 * std::exp(1.2 * keyed_uniform(22, 1, static_cast<uint64_t>(i))));
    sched.gammas.push_back(pool[keyed_u64(22, 2, static_cast<uint64_t>(i)) % 8]);
  }
  sched.theta = randn(22, 3, static_cast<size_t>(model.hyper_layout().dim()), 0.5);
  for (double& th : sched.theta) th -= 4.0;
  sched.validate();

  const BatchSchedule batches = batch_schedule(23, train.n, 50, T);
  const auto w1 = randn(24, 0, static_cast<size_t>(model.dim()), 0.3);

  // reversible pass (frac_bits 48 keeps quantization noise far below the
  // 1e-6 agreement tolerance) vs the cached-float oracle
  const RunResult rev = run_with_hypergrad(w1, sched, model, batches, 48);
  const RealSchedules rs = RealSchedules::from(sched);
  const HypergradResult naive = naive_reverse(w1, rs, model, batches);

  const double err_alpha = max_rel_err(rev.hg.d_alpha, naive.d_alpha);
  const double err_gamma = max_rel_err(rev.hg.d_gamma, naive.d_gamma);
  const double err_theta = max_rel_err(rev.hg.d_theta, naive.d_theta);
  const double err_w1 = max_rel_err(rev.hg.d_w1, naive.d_w1);
  const double err_oracle = std::max({err_alpha, err_gamma, err_theta, err_w1});

  // the oracle itself vs central finite differences on 20 random
  // hyperparameters (8 alphas, 6 gammas, 6 thetas)
  const double h = 1e-4;
  double err_fd = 0.0;
  for (int pick = 0; pick < 20; ++pick) {
    RealSchedules rp = rs, rm = rs;
    double analytic = 0.0;
    if (pick < 8) {
      const size_t idx = keyed_u64(25, 1, static_cast<uint64_t>(pick)) % rs.alphas.size();
      rp.alphas[idx] += h;
      rm.alphas[idx] -= h;
      analytic = naive.d_alpha[idx];
    } else if (pick < 14) {
      const size_t idx = keyed_u64(25, 2, static_cast<uint64_t>(pick)) % rs.gammas.size();
      rp.gammas[idx] += h;
      rm.gammas[idx] -= h;
      analytic = naive.d_gamma[idx];
    } else {
      const size_t idx = keyed_u64(25, 3, static_cast<uint64_t>(pick)) % rs.theta.size();
      rp.theta[idx] += h;
      rm.theta[idx] -= h;
      analytic = naive.d_theta[idx];
    }
    const double fd = (float_final_objective(w1, rp, model, batches) -
                       float_final_objective(w1, rm, model, batches)) /
                      (2 * h);
    err_fd = std::max(err_fd,
                      std::abs(analytic - fd) / (std::max(std::abs(analytic), std::abs(fd)) + 1e-10));
  }

  const double secs = seconds_since(t0);
  char detail[220];
  std::snprintf(detail, sizeof detail,
                "reversible vs naive-cache max rel err %.2e (<= 1e-6); naive vs central "
                "differences on 20 hyperparameters %.2e (<= 1e-5); %.1fs (< 120s)",
                err_oracle, err_fd, secs);
  report(4, err_oracle <= 1e-6 && err_fd <= 1e-5 && secs < 120.0, detail);
}

TEST_CASE("criterion 5: exact Hessian-vector products") {
  // plain logistic regression; the Hessian-vector product has a closed form
  Dataset ds = synthetic_classification(31, 20, 6, 3);
  const LogisticModel model(ds, ds, {});
  const int64_t D = ds.d;
  const int K = ds.num_classes;
  const auto w = randn(32, 0, static_cast<size_t>(model.dim()), 0.6);
  std::vector<int32_t> batch(static_cast<size_t>(ds.n));
  std::iota(batch.begin(), batch.end(), 0);

  // softmax probabilities per example, from the augmented design [x; 1]
  auto probs = [&](int64_t i) {
    std::vector<double> z(static_cast<size_t>(K));
    for (int c = 0; c < K; ++c) {
      double acc = w[static_cast<size_t>(D * K + c)];
      for (int64_t p = 0; p < D; ++p) {
        acc += ds.inputs[static_cast<size_t>(i * D + p)] * w[static_cast<size_t>(p * K + c)];
      }
      z[static_cast<size_t>(c)] = acc;
    }
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double& v : z) {
      v = std::exp(v - m);
      s += v;
    }
    for (double& v : z) v /= s;
    return z;
  };

  auto closed_form_hvp = [&](const std::vector<double>& vec) {
    std::vector<double> out(w.size(), 0.0);
    for (int64_t i = 0; i < ds.n; ++i) {
      const auto p = probs(i);
      // s_c = xtilde . V[:, c]
      std::vector<double> s(static_cast<size_t>(K), 0.0);
      for (int c = 0; c < K; ++c) {
        double acc = vec[static_cast<size_t>(D * K + c)];
        for (int64_t q = 0; q < D; ++q) {
          acc += ds.inputs[static_cast<size_t>(i * D + q)] * vec[static_cast<size_t>(q * K + c)];
        }
        s[static_cast<size_t>(c)] = acc;
      }
      double ps = 0.0;
      for (int c = 0; c < K; ++c) ps += p[static_cast<size_t>(c)] * s[static_cast<size_t>(c)];
      for (int c = 0; c < K; ++c) {
        const double coeff = p[static_cast<size_t>(c)] * (s[static_cast<size_t>(c)] - ps) / ds.n;
        for (int64_t q = 0; q < D; ++q) {
          out[static_cast<size_t>(q * K + c)] +=
              ds.inputs[static_cast<size_t>(i * D + q)] * coeff;
        }
        out[static_cast<size_t>(D * K + c)] += coeff;
      }
    }
    return out;
  };

  double err_closed = 0.0;
  double err_sym = 0.0;
  std::vector<std::vector<double>> hvps;
  for (int probe = 0; probe < 100; ++probe) {
    const auto vec = randn(33, static_cast<uint64_t>(probe), w.size());
    const auto got = hvp_ww(model, w, {}, 1, batch, vec);
    const auto expect = closed_form_hvp(vec);
    err_closed = std::max(err_closed, max_rel_err(got, expect, 1e-14));
    hvps.push_back(got);
  }
  for (int probe = 0; probe + 1 < 100; probe += 2) {
    const auto u = randn(33, static_cast<uint64_t>(probe), w.size());
    const auto v = randn(33, static_cast<uint64_t>(probe + 1), w.size());
    double uHv = 0.0, vHu = 0.0, scale = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
      uHv += u[i] * hvps[static_cast<size_t>(probe + 1)][i];
      vHu += v[i] * hvps[static_cast<size_t>(probe)][i];
      scale += std::abs(u[i] * hvps[static_cast<size_t>(probe + 1)][i]);
    }
    err_sym = std::max(err_sym, std::abs(uHv - vHu) / std::max(1.0, scale));
  }
  char detail[200];
  std::snprintf(detail, sizeof detail,
                "closed-form logistic Hessian products: max rel err %.2e (<= 1e-10) over 100 "
                "probes; symmetry defect %.2e (<= 1e-10)",
                err_closed, err_sym);
  report(5, err_closed <= 1e-10 && err_sym <= 1e-10, detail);
}

TEST_CASE("criterion 6: float-only reversal diverges") {
  const int64_t dim = 20;
  const int T = 500;
  const auto model = noisy_quadratic(dim, 41);
  // small step keeps the modes overdamped: the regime that destroys the
  // most information per step
  const Schedules sched = Schedules::constant(T, 1, 0.01, Ratio(9, 10));
  const BatchSchedule batches = batch_schedule(1, 1, 1, T);
  const auto w1 = randn(42, 0, static_cast<size_t>(dim));
  const FloatReversal fr = float_reverse_unbuffered(w1, sched, model, batches);
  double rel = 0.0;
  if (fr.finite) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < w1.size(); ++i) {
      num += (fr.recovered_w1[i] - w1[i]) * (fr.recovered_w1[i] - w1[i]);
      den += w1[i] * w1[i];
    }
    rel = std::sqrt(num / den);
  }
  char detail[160];
  if (fr.finite) {
    std::snprintf(detail, sizeof detail,
                  "recovered w1 off by relative error %.2e (> 1e-2) after T=500 at gamma=9/10",
                  rel);
  } else {
    std::snprintf(detail, sizeof detail, "float reversal overflowed (T=500, gamma=9/10)");
  }
  report(6, !fr.finite || rel > 1e-2, detail);
}

TEST_CASE("criterion 7: meta-descent with the optimized schedule shape") {
  const auto out = std::filesystem::temp_directory_path() / "revlearn_acc_lr";
  std::filesystem::remove_all(out);
  const ExperimentConfig cfg = lr_schedule_config(out);
  run_experiment(cfg);
  const nlohmann::json j = nlohmann::json::parse(slurp(out / "results.json"));
  const auto& f = j.at("final");
  const double initial = f.at("objective_initial").get<double>();
  const double final_obj = f.at("objective_final").get<double>();
  const double last10 = f.at("alpha_mean_last10pct").get<double>();
  const double mid50 = f.at("alpha_mean_mid50pct").get<double>();
  char detail[220];
  std::snprintf(detail, sizeof detail,
                "20 meta-iterations, Adam step 0.04: meta-loss %.4f -> %.4f (strict descent); "
                "mean alpha last 10%% = %.3f < middle 50%% = %.3f",
                initial, final_obj, last10, mid50);
  report(7, final_obj < initial && last10 < mid50, detail);
  std::filesystem::remove_all(out);
}

TEST_CASE("criterion 8: chaotic hypergradients at large learning rates") {
  const auto t0 = Clock::now();
  ExperimentConfig cfg;
  cfg.experiment = ExperimentId::ChaosSweep;
  cfg.batch_size = 100;
  cfg.dataset.n = 400;
  cfg.dataset.d = 16;
  cfg.dataset.k = 4;
  cfg.dataset.separation = 4.0;
  cfg.model.widths = {16, 16, 16};  // two hidden layers
  cfg.sweep.lo = 1e-2;
  cfg.sweep.hi = 1e+2;
  cfg.sweep.points = 48;
  cfg.sweep.T = 50;
  const ChaosResult res = chaos_sweep(cfg);
  const double secs = seconds_since(t0);
  char detail[200];
  std::snprintf(detail, sizeof detail,
                "gradient/loss-slope correlation: bottom decade %.3f, top decade %.3f "
                "(top < bottom); %.1fs (< 120s)",
                res.corr_bottom_decade, res.corr_top_decade, secs);
  report(8, res.corr_top_decade < res.corr_bottom_decade && secs < 120.0, detail);
}

TEST_CASE("criterion 9: reverse pass stays within 3x of forward") {
  Dataset all = synthetic_classification(7, 600, 64, 10, 4.0);
  MlpConfig mc;
  mc.widths = {64, 20, 20, 20};
  mc.objective = Objective::Training;
  const MlpModel model(all.take(0, 500), all.take(500, 100), mc);
  const int G = model.layout().num_groups();
  const std::vector<double> scales(static_cast<size_t>(G), std::log(0.1));
  const auto w1 = init_weights(scales, model.layout(), 3);

  bool ok = true;
  std::string detail;
  for (int T : {100, 1000}) {
    const Schedules sched = Schedules::constant(T, G, 0.1, Ratio(9, 10));
    const BatchSchedule batches = batch_schedule(1, model.train_size(), 50, T);
    {
      TrainState warm = TrainState::init(w1);  // touch caches once
      sgd_forward(warm, sched, model, batches);
    }
    const auto t0 = Clock::now();
    TrainState st = TrainState::init(w1);
    sgd_forward(st, sched, model, batches);
    const double fwd = seconds_since(t0);
    const auto obj = eval_objective_grad(model, st.w.to_reals());
    const auto t1 = Clock::now();
    sgd_reverse(st, sched, model, batches, obj.grad);
    const double rev = seconds_since(t1);
    const double ratio = rev / fwd;
    char buf[100];
    std::snprintf(buf, sizeof buf, "T=%d: reverse/forward = %.2f (<= 3.0); ", T, ratio);
    detail += buf;
    ok = ok && ratio <= 3.0;
  }
  report(9, ok, detail);
}

TEST_CASE("criterion 10: byte-identical reruns for every experiment") {
  bool all_ok = true;
  std::string failing;
  for (ExperimentId id :
       {ExperimentId::LrSchedule, ExperimentId::InitScales, ExperimentId::PerParamReg,
        ExperimentId::LearnData, ExperimentId::TiedReg, ExperimentId::ChaosSweep,
        ExperimentId::MemoryBench}) {
    ExperimentConfig cfg;
    cfg.experiment = id;
    cfg.T = 10;
    cfg.batch_size = 20;
    cfg.meta_iterations = 2;
    cfg.seeds = 2;
    cfg.alpha0 = 0.05;
    cfg.dataset.n = 60;
    cfg.dataset.d = 8;
    cfg.dataset.k = 3;
    cfg.model.widths = {8, 6};
    cfg.sweep.points = 6;
    cfg.sweep.T = 5;
    cfg.bench.steps = 300;
    cfg.bench.dim = 8;
    const auto out = std::filesystem::temp_directory_path() /
                     ("revlearn_acc_det_" + to_string(id));
    std::filesystem::remove_all(out);
    cfg.output_dir = out.string();

    run_experiment(cfg);
    const std::string first = slurp(out / "results.json");
    run_experiment(cfg);
    const std::string second = slurp(out / "results.json");

    const std::regex ts("\"timestamp\": \"[^\"]*\"");
    const std::string a = std::regex_replace(first, ts, "\"timestamp\": \"-\"");
    const std::string b = std::regex_replace(second, ts, "\"timestamp\": \"-\"");
    if (a != b) {
      all_ok = false;
      failing += to_string(id) + " ";
    }
    std::filesystem::remove_all(out);
  }
  report(10, all_ok,
         all_ok ? "all seven experiments rerun byte-identically (timestamp aside)"
                : "differences in: " + failing);
}
