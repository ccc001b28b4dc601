#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "revlearn/train.hpp"

namespace revlearn {

// Flat meta-space vector phi = [log alpha (T x G) | pre-logistic gamma
// (T x G) | theta blocks]. Positivity of alpha and the (0,1) range of gamma
// come from the transforms, not from constrained optimization.
struct PhiLayout {
  int T = 0;
  int G = 0;
  HyperLayout theta_blocks;

  int64_t schedule_len() const { return static_cast<int64_t>(T) * G; }
  int64_t alpha_offset() const { return 0; }
  int64_t gamma_offset() const { return schedule_len(); }
  int64_t theta_offset() const { return 2 * schedule_len(); }
  int64_t dim() const { return 2 * schedule_len() + theta_blocks.dim(); }
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// alpha = exp(phi), gamma = logistic(phi) quantized to a rational with
// denominator <= 2^16, theta mapped per block transform.
Schedules transform(const PhiLayout& layout, std::span<const double> phi);

// Chain-rule factor of `transform`, mapping a HypergradResult back into
// phi space. Gamma's rational quantization is treated as straight-through:
// the adjoint uses the continuous logistic value.
ad::Vec chain_to_phi(const PhiLayout& layout, std::span<const double> phi,
                     const HypergradResult& hg);

struct MetaState {
  ad::Vec phi;
  ad::Vec m;  // first moment
  ad::Vec u;  // second moment
  int64_t k = 0;
  double step = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<uint8_t> trainable;  // empty = all entries trainable

  static MetaState init(ad::Vec phi0, double step = 0.04);
};

// One Adam update with bias correction; entries with trainable[i] == 0 are
// left untouched.
void adam_step(MetaState& state, std::span<const double> g);

// Elementary-run knobs shared by every seed of a hypergradient evaluation.
struct ElementaryRun {
  int64_t batch_size = 0;  // 0 = full batch
  int frac_bits = kDefaultFracBits;
  // Default per-group log init scales, used when the model has no
  // init_scales block.
  double init_log_scale = std::log(0.1);
};

struct HypergradAvg {
  ad::Vec g_phi;
  double objective = 0.0;           // mean f(w_final) over seeds
  std::vector<double> loss_trace;   // mean elementary training-loss trace
};

// Mean hypergradient over seeds; each seed draws its own init weights and
// minibatch order. The init-scales chain term (d w1 -> d log scale) is
// added here since initialization happens outside L(w, theta, t).
HypergradAvg hypergrad_avg(const Model& model, const PhiLayout& layout,
                           std::span<const double> phi, int num_seeds, uint64_t base_seed,
                           const ElementaryRun& run);

struct MetaCurvePoint {
  int iter = 0;
  double objective = 0.0;
  double hypergrad_norm = 0.0;
};

struct MetaResult {
  std::vector<MetaCurvePoint> curve;  // includes a final evaluation point
  ad::Vec final_phi;
  Schedules final_schedules;
  std::vector<double> final_loss_trace;
  bool early_stopped = false;
};

struct MetaOptions {
  int meta_iterations = 20;
  int num_seeds = 3;
  uint64_t base_seed = 0;
  // Stop when the hypergradient norm grows past this multiple of its
  // initial value (meta-gradients blowing up signal chaotic dynamics).
  double early_stop_factor = 10.0;
};

MetaResult meta_optimize(const Model& model, const PhiLayout& layout, MetaState& state,
                         const ElementaryRun& run, const MetaOptions& opts);

}  // namespace revlearn
