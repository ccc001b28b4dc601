#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "revlearn/data.hpp"
#include "revlearn/fixed.hpp"
#include "revlearn/models.hpp"
#include "revlearn/revbuf.hpp"

namespace revlearn {

// Per-iteration, per-group learning rates and rational momentum decays,
// plus the flat hyperparameter vector theta.
struct Schedules {
  int T = 0;
  int num_groups = 0;
  std::vector<double> alphas;  // T x G row-major
  std::vector<Ratio> gammas;   // T x G
  std::vector<double> theta;

  double alpha(int t, int g) const {  // t is 1-based
    return alphas[static_cast<size_t>(t - 1) * num_groups + g];
  }
  const Ratio& gamma(int t, int g) const {
    return gammas[static_cast<size_t>(t - 1) * num_groups + g];
  }
  void validate() const;

  static Schedules constant(int T, int num_groups, double alpha, Ratio gamma,
                            std::vector<double> theta = {});
};

// Same schedules with real-valued decays, for the float-dynamics oracle and
// finite differencing (which perturbs gamma continuously).
struct RealSchedules {
  int T = 0;
  int num_groups = 0;
  std::vector<double> alphas;
  std::vector<double> gammas;
  std::vector<double> theta;

  double alpha(int t, int g) const {
    return alphas[static_cast<size_t>(t - 1) * num_groups + g];
  }
  double gamma(int t, int g) const {
    return gammas[static_cast<size_t>(t - 1) * num_groups + g];
  }

  static RealSchedules from(const Schedules& s);
};

// Fixed-point training state. (w, v, buffers) at time t uniquely determines
// the state at t-1 given schedules, model and batches.
struct TrainState {
  FixedVec w;
  FixedVec v;
  std::vector<InfoBuffer> buffers;  // one per element
  int64_t t = 1;

  static TrainState init(std::span<const double> w1, int frac_bits = kDefaultFracBits);
  double buffer_bits_total() const;
};

struct ForwardResult {
  std::vector<double> loss_trace;  // training loss per iteration
};

// SGD with momentum over fixed-point state. Iteration order, per group:
// gradient at current w (real math, quantized once), velocity decay through
// the information buffer, gradient step, then position step with the NEW
// velocity. The reverse pass inverts these in the opposite order.
ForwardResult sgd_forward(TrainState& state, const Schedules& sched, const Model& model,
                          const BatchSchedule& batches);

struct HypergradResult {
  ad::Vec d_w1;
  ad::Vec d_v1;
  std::vector<double> d_alpha;  // T x G
  std::vector<double> d_gamma;  // T x G
  ad::Vec d_theta;
  std::vector<double> loss_trace;
};

// Exactly reverses the forward pass while accumulating adjoints. On return
// the state is unwound to t=1 bit-exactly and every buffer is empty; a
// non-empty terminal buffer raises IntegrityError.
HypergradResult sgd_reverse(TrainState& state, const Schedules& sched, const Model& model,
                            const BatchSchedule& batches, std::span<const double> d_wT,
                            std::span<const double> d_vT = {});

// Oracle with the identical contract, computed from a cached float-dynamics
// trajectory (memory O(T * dim)). Small T only.
HypergradResult naive_reverse(std::span<const double> w1, const RealSchedules& sched,
                              const Model& model, const BatchSchedule& batches);

// Float forward pass alone; returns f(w_final). Finite differences of this
// function anchor the oracle chain.
double float_final_objective(std::span<const double> w1, const RealSchedules& sched,
                             const Model& model, const BatchSchedule& batches);

// Negative control: reversal by multiplying with 1/gamma in floating point,
// no buffers. Roundoff is amplified every step.
struct FloatReversal {
  std::vector<double> recovered_w1;
  bool finite = true;
};
FloatReversal float_reverse_unbuffered(std::span<const double> w1, const Schedules& sched,
                                       const Model& model, const BatchSchedule& batches);

struct MemoryReport {
  double buffer_bits_total = 0.0;
  double bits_per_step_per_element = 0.0;
  double naive_bits_per_element = 0.0;   // 32 * T
  std::optional<double> ratio;           // nullopt = unbounded (empty buffers)
};

MemoryReport memory_report(const TrainState& state, int T);

// Convenience driver: quantize w1, run forward, take the meta-objective
// gradient at w_T, reverse. Returns the hypergradients plus run statistics.
struct RunResult {
  HypergradResult hg;
  double objective = 0.0;
  std::vector<double> w_final;
  MemoryReport memory;
};
RunResult run_with_hypergrad(std::span<const double> w1, const Schedules& sched,
                             const Model& model, const BatchSchedule& batches,
                             int frac_bits = kDefaultFracBits);

// Checkpoint: raw words + buffer digits + t + config hash, little-endian,
// so forward and reverse can run in separate process invocations.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     uint64_t config_hash);
struct Checkpoint {
  TrainState state;
  uint64_t config_hash = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace revlearn
