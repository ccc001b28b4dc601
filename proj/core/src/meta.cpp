#include "revlearn/meta.hpp"

#include <cmath>

#include "revlearn/rng.hpp"

namespace revlearn {

namespace {

double apply_transform(Transform tf, double x) {
  switch (tf) {
    case Transform::Identity: return x;
    case Transform::Log: return std::exp(x);
    case Transform::Logit: return logistic(x);
  }
  return x;
}

double transform_derivative(Transform tf, double x) {
  switch (tf) {
    case Transform::Identity: return 1.0;
    case Transform::Log: return std::exp(x);
    case Transform::Logit: {
      const double s = logistic(x);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

}  // namespace

Schedules transform(const PhiLayout& layout, std::span<const double> phi) {
  if (static_cast<int64_t>(phi.size()) != layout.dim()) {
    throw ContractViolation("phi length does not match the meta layout");
  }
  Schedules s;
  s.T = layout.T;
  s.num_groups = layout.G;
  const int64_t n = layout.schedule_len();
  s.alphas.resize(static_cast<size_t>(n));
  s.gammas.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    s.alphas[static_cast<size_t>(i)] = std::exp(phi[static_cast<size_t>(layout.alpha_offset() + i)]);
    s.gammas[static_cast<size_t>(i)] =
        Ratio::nearest(logistic(phi[static_cast<size_t>(layout.gamma_offset() + i)]));
  }
  s.theta.resize(static_cast<size_t>(layout.theta_blocks.dim()));
  for (const auto& block : layout.theta_blocks.blocks) {
    for (int64_t i = 0; i < block.len; ++i) {
      s.theta[static_cast<size_t>(block.offset + i)] = apply_transform(
          block.transform, phi[static_cast<size_t>(layout.theta_offset() + block.offset + i)]);
    }
  }
  s.validate();
  return s;
}

ad::Vec chain_to_phi(const PhiLayout& layout, std::span<const double> phi,
                     const HypergradResult& hg) {
  ad::Vec g(static_cast<size_t>(layout.dim()), 0.0);
  const int64_t n = layout.schedule_len();
  for (int64_t i = 0; i < n; ++i) {
    g[static_cast<size_t>(layout.alpha_offset() + i)] =
        hg.d_alpha[static_cast<size_t>(i)] *
        std::exp(phi[static_cast<size_t>(layout.alpha_offset() + i)]);
    const double s = logistic(phi[static_cast<size_t>(layout.gamma_offset() + i)]);
    g[static_cast<size_t>(layout.gamma_offset() + i)] =
        hg.d_gamma[static_cast<size_t>(i)] * s * (1.0 - s);
  }
  for (const auto& block : layout.theta_blocks.blocks) {
    for (int64_t i = 0; i < block.len; ++i) {
      const size_t pi = static_cast<size_t>(layout.theta_offset() + block.offset + i);
      g[pi] = hg.d_theta[static_cast<size_t>(block.offset + i)] *
              transform_derivative(block.transform, phi[pi]);
    }
  }
  return g;
}

MetaState MetaState::init(ad::Vec phi0, double step) {
  MetaState st;
  st.phi = std::move(phi0);
  st.m.assign(st.phi.size(), 0.0);
  st.u.assign(st.phi.size(), 0.0);
  st.step = step;
  return st;
}

void adam_step(MetaState& state, std::span<const double> g) {
  if (g.size() != state.phi.size()) {
    throw ContractViolation("adam_step: gradient length mismatch");
  }
  if (!state.trainable.empty() && state.trainable.size() != state.phi.size()) {
    throw ContractViolation("adam_step: trainable mask length mismatch");
  }
  state.k += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.k));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.k));
  for (size_t i = 0; i < state.phi.size(); ++i) {
    if (!state.trainable.empty() && state.trainable[i] == 0) continue;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
    state.u[i] = state.beta2 * state.u[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double mhat = state.m[i] / bc1;
    const double uhat = state.u[i] / bc2;
    state.phi[i] -= state.step * mhat / (std::sqrt(uhat) + state.eps);
  }
}

HypergradAvg hypergrad_avg(const Model& model, const PhiLayout& layout,
                           std::span<const double> phi, int num_seeds, uint64_t base_seed,
                           const ElementaryRun& run) {
  if (num_seeds < 1) throw ContractViolation("hypergrad_avg: need at least one seed");
  const Schedules sched = transform(layout, phi);
  const ParamLayout& playout = model.layout();
  const HyperBlock* init_block = model.hyper_layout().find("init_scales");

  std::vector<double> log_scales(static_cast<size_t>(playout.num_groups()),
                                 run.init_log_scale);
  if (init_block != nullptr) {
    if (init_block->len != playout.num_groups()) {
      throw ContractViolation("init_scales block must hold one scale per parameter group");
    }
    for (int64_t i = 0; i < init_block->len; ++i) {
      log_scales[static_cast<size_t>(i)] = sched.theta[static_cast<size_t>(init_block->offset + i)];
    }
  }

  const int64_t n_train = model.train_size();
  const int64_t batch = run.batch_size > 0 ? run.batch_size : n_train;

  HypergradAvg avg;
  avg.g_phi.assign(static_cast<size_t>(layout.dim()), 0.0);
  avg.loss_trace.assign(static_cast<size_t>(layout.T), 0.0);

  for (int s = 0; s < num_seeds; ++s) {
    const uint64_t seed = mix64(base_seed + static_cast<uint64_t>(s));
    const std::vector<double> w1 = init_weights(log_scales, playout, seed);
    const BatchSchedule batches = batch_schedule(seed, n_train, batch, layout.T);
    const RunResult rr = run_with_hypergrad(w1, sched, model, batches, run.frac_bits);

    ad::Vec g_seed = chain_to_phi(layout, phi, rr.hg);
    if (init_block != nullptr) {
      // d log_scale[g] = sum_{i in group g} d_w1[i] * w1[i]
      for (size_t gi = 0; gi < playout.groups.size(); ++gi) {
        const auto& grp = playout.groups[gi];
        double acc = 0.0;
        for (int64_t i = 0; i < grp.len; ++i) {
          const size_t idx = static_cast<size_t>(grp.offset + i);
          acc += rr.hg.d_w1[idx] * w1[idx];
        }
        g_seed[static_cast<size_t>(layout.theta_offset() + init_block->offset +
                                   static_cast<int64_t>(gi))] += acc;
      }
    }

    for (size_t i = 0; i < g_seed.size(); ++i) avg.g_phi[i] += g_seed[i];
    avg.objective += rr.objective;
    for (size_t i = 0; i < avg.loss_trace.size(); ++i) {
      avg.loss_trace[i] += rr.hg.loss_trace[i];
    }
  }

  const double inv = 1.0 / num_seeds;
  for (double& x : avg.g_phi) x *= inv;
  avg.objective *= inv;
  for (double& x : avg.loss_trace) x *= inv;
  return avg;
}

MetaResult meta_optimize(const Model& model, const PhiLayout& layout, MetaState& state,
                         const ElementaryRun& run, const MetaOptions& opts) {
  MetaResult res;
  double g0norm = -1.0;
  for (int iter = 0; iter <= opts.meta_iterations; ++iter) {
    const HypergradAvg avg =
        hypergrad_avg(model, layout, state.phi, opts.num_seeds, opts.base_seed, run);
    double norm = 0.0;
    for (double x : avg.g_phi) norm += x * x;
    norm = std::sqrt(norm);
    res.curve.push_back({iter, avg.objective, norm});
    res.final_loss_trace = avg.loss_trace;
    if (iter == opts.meta_iterations) break;
    if (g0norm < 0.0) {
      g0norm = norm;
    } else if (norm > opts.early_stop_factor * g0norm) {
      res.early_stopped = true;  // keep the last stable phi
      break;
    }
    adam_step(state, avg.g_phi);
  }
  res.final_phi = state.phi;
  res.final_schedules = transform(layout, state.phi);
  return res;
}

}  // namespace revlearn
