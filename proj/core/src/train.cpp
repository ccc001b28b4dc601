#include "revlearn/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace revlearn {

void Schedules::validate() const {
  if (T < 0) throw ContractViolation("schedules: T must be nonnegative");
  if (num_groups < 1) throw ContractViolation("schedules: need at least one group");
  const size_t expect = static_cast<size_t>(T) * num_groups;
  if (alphas.size() != expect || gammas.size() != expect) {
    throw ContractViolation("schedules: alpha/gamma tables must be T x num_groups");
  }
  for (double a : alphas) {
    if (!(a > 0.0)) throw ContractViolation("schedules: learning rates must be positive");
  }
}

Schedules Schedules::constant(int T, int num_groups, double alpha, Ratio gamma,
                              std::vector<double> theta) {
  Schedules s;
  s.T = T;
  s.num_groups = num_groups;
  s.alphas.assign(static_cast<size_t>(T) * num_groups, alpha);
  s.gammas.assign(static_cast<size_t>(T) * num_groups, gamma);
  s.theta = std::move(theta);
  s.validate();
  return s;
}

RealSchedules RealSchedules::from(const Schedules& s) {
  RealSchedules r;
  r.T = s.T;
  r.num_groups = s.num_groups;
  r.alphas = s.alphas;
  r.gammas.reserve(s.gammas.size());
  for (const Ratio& g : s.gammas) r.gammas.push_back(g.value());
  r.theta = s.theta;
  return r;
}

TrainState TrainState::init(std::span<const double> w1, int frac_bits) {
  TrainState st;
  st.w = FixedVec::from_reals(w1, frac_bits);
  st.v = FixedVec::zeros(w1.size(), frac_bits);
  st.buffers.assign(w1.size(), InfoBuffer{});
  st.t = 1;
  return st;
}

double TrainState::buffer_bits_total() const {
  double total = 0.0;
  for (const auto& b : buffers) total += b.bits();
  return total;
}

namespace {

void check_run_shapes(const TrainState& st, const Schedules& sched, const Model& model,
                      const BatchSchedule& batches) {
  sched.validate();
  if (static_cast<int64_t>(st.w.size()) != model.dim()) {
    throw ContractViolation("state dimension does not match model");
  }
  if (sched.num_groups != model.layout().num_groups()) {
    throw ContractViolation("schedule groups do not match the parameter layout");
  }
  if (batches.T() != sched.T) {
    throw ContractViolation("batch schedule length does not match T");
  }
  if (static_cast<int64_t>(sched.theta.size()) != model.hyper_layout().dim()) {
    throw ContractViolation("theta length does not match the hyperparameter layout");
  }
}

[[noreturn]] void rethrow_at_iteration(const std::exception& e, int t, const char* phase) {
  const std::string msg =
      std::string(phase) + " iteration " + std::to_string(t) + ": " + e.what();
  if (dynamic_cast<const RangeError*>(&e)) throw RangeError(msg);
  throw NumericError(msg);
}

}  // namespace

ForwardResult sgd_forward(TrainState& st, const Schedules& sched, const Model& model,
                          const BatchSchedule& batches) {
  check_run_shapes(st, sched, model, batches);
  if (st.t != 1) throw ContractViolation("sgd_forward expects a state at t=1");

  const int fb = st.w.frac_bits;
  const auto eg = model.layout().element_groups();
  const size_t dim = st.w.size();

  ForwardResult out;
  out.loss_trace.reserve(static_cast<size_t>(sched.T));

  for (int t = 1; t <= sched.T; ++t) {
    std::vector<double> w_real = st.w.to_reals();
    LossGrad lg;
    try {
      lg = eval_loss_grad(model, w_real, sched.theta, t, batches.at(t));
    } catch (const NumericError& e) {
      rethrow_at_iteration(e, t, "forward");
    }
    out.loss_trace.push_back(lg.loss);

    try {
      for (size_t i = 0; i < dim; ++i) {
        const int g = eg[i];
        const Ratio& gamma = sched.gamma(t, g);
        rat_mul(st.buffers[i], st.v.raw[i], gamma);
        st.v.raw[i] = wrap_sub(st.v.raw[i], quantize(gamma.one_minus() * lg.grad_w[i], fb));
        st.w.raw[i] = wrap_add(
            st.w.raw[i], quantize(sched.alpha(t, g) * dequantize(st.v.raw[i], fb), fb));
      }
    } catch (const RangeError& e) {
      rethrow_at_iteration(e, t, "forward");
    }
    st.t = t + 1;
  }
  return out;
}

HypergradResult sgd_reverse(TrainState& st, const Schedules& sched, const Model& model,
                            const BatchSchedule& batches, std::span<const double> d_wT,
                            std::span<const double> d_vT) {
  check_run_shapes(st, sched, model, batches);
  if (st.t != sched.T + 1) {
    throw ContractViolation("sgd_reverse expects the state produced by sgd_forward (t = T+1)");
  }
  const size_t dim = st.w.size();
  if (d_wT.size() != dim || (!d_vT.empty() && d_vT.size() != dim)) {
    throw ContractViolation("adjoint seed dimension mismatch");
  }

  const int fb = st.w.frac_bits;
  const auto eg = model.layout().element_groups();
  const int G = sched.num_groups;

  HypergradResult res;
  res.d_w1.assign(d_wT.begin(), d_wT.end());
  res.d_v1 = d_vT.empty() ? ad::Vec(dim, 0.0) : ad::Vec(d_vT.begin(), d_vT.end());
  res.d_alpha.assign(static_cast<size_t>(sched.T) * G, 0.0);
  res.d_gamma.assign(static_cast<size_t>(sched.T) * G, 0.0);
  res.d_theta.assign(sched.theta.size(), 0.0);
  res.loss_trace.assign(static_cast<size_t>(sched.T), 0.0);

  auto& dw = res.d_w1;
  auto& dv = res.d_v1;
  std::vector<double> u(dim);

  for (int t = sched.T; t >= 1; --t) {
    // State holds (w_{t+1}, v_{t+1}); the velocity in hand is the one the
    // position update used.
    for (size_t i = 0; i < dim; ++i) {
      const int g = eg[i];
      const double v_next = dequantize(st.v.raw[i], fb);
      res.d_alpha[static_cast<size_t>(t - 1) * G + g] += dw[i] * v_next;
      st.w.raw[i] =
          wrap_sub(st.w.raw[i], quantize(sched.alpha(t, g) * v_next, fb));  // w_t recovered
      dv[i] += sched.alpha(t, g) * dw[i];
      u[i] = sched.gamma(t, g).one_minus() * dv[i];
    }

    std::vector<double> w_real = st.w.to_reals();
    LossGradDual lgd;
    try {
      lgd = eval_loss_grad_dual(model, w_real, sched.theta, t, batches.at(t), u);
    } catch (const NumericError& e) {
      rethrow_at_iteration(e, t, "reverse");
    }
    res.loss_trace[static_cast<size_t>(t - 1)] = lgd.loss;

    for (size_t i = 0; i < dim; ++i) {
      const int g = eg[i];
      const Ratio& gamma = sched.gamma(t, g);
      st.v.raw[i] = wrap_add(st.v.raw[i], quantize(gamma.one_minus() * lgd.grad_w[i], fb));
      rat_mul_inverse(st.buffers[i], st.v.raw[i], gamma);  // v_t recovered
      res.d_gamma[static_cast<size_t>(t - 1) * G + g] +=
          dv[i] * (dequantize(st.v.raw[i], fb) + lgd.grad_w[i]);
      dw[i] -= lgd.hvp_w[i];
      dv[i] *= gamma.value();
    }
    for (size_t j = 0; j < res.d_theta.size(); ++j) res.d_theta[j] -= lgd.hvp_theta[j];
    st.t = t;
  }

  for (size_t i = 0; i < dim; ++i) {
    if (!st.buffers[i].empty()) {
      throw IntegrityError(
          "information buffer " + std::to_string(i) +
          " not empty after full reversal; forward and reverse configurations disagree");
    }
  }
  return res;
}

namespace {

struct FloatStep {
  // One float-dynamics step in the pinned order; v and w updated in place.
  static void apply(std::vector<double>& w, std::vector<double>& v,
                    const std::vector<double>& g, const RealSchedules& sched, int t,
                    std::span<const int32_t> eg) {
    for (size_t i = 0; i < w.size(); ++i) {
      const int gi = eg[i];
      const double gamma = sched.gamma(t, gi);
      v[i] = gamma * v[i] - (1.0 - gamma) * g[i];
      w[i] += sched.alpha(t, gi) * v[i];
    }
  }
};

}  // namespace

HypergradResult naive_reverse(std::span<const double> w1, const RealSchedules& sched,
                              const Model& model, const BatchSchedule& batches) {
  const size_t dim = w1.size();
  const auto eg = model.layout().element_groups();
  const int G = sched.num_groups;

  // Forward pass caching the whole trajectory.
  std::vector<std::vector<double>> w_hist(static_cast<size_t>(sched.T) + 1);
  std::vector<std::vector<double>> v_hist(static_cast<size_t>(sched.T) + 1);
  std::vector<double> w(w1.begin(), w1.end());
  std::vector<double> v(dim, 0.0);
  w_hist[0] = w;
  v_hist[0] = v;

  HypergradResult res;
  res.loss_trace.assign(static_cast<size_t>(sched.T), 0.0);
  for (int t = 1; t <= sched.T; ++t) {
    const auto lg = eval_loss_grad(model, w, sched.theta, t, batches.at(t));
    res.loss_trace[static_cast<size_t>(t - 1)] = lg.loss;
    FloatStep::apply(w, v, lg.grad_w, sched, t, eg);
    w_hist[static_cast<size_t>(t)] = w;
    v_hist[static_cast<size_t>(t)] = v;
  }

  const auto obj = eval_objective_grad(model, w);
  res.d_w1 = obj.grad;
  res.d_v1.assign(dim, 0.0);
  res.d_alpha.assign(static_cast<size_t>(sched.T) * G, 0.0);
  res.d_gamma.assign(static_cast<size_t>(sched.T) * G, 0.0);
  res.d_theta.assign(sched.theta.size(), 0.0);

  auto& dw = res.d_w1;
  auto& dv = res.d_v1;
  std::vector<double> u(dim);

  for (int t = sched.T; t >= 1; --t) {
    const auto& w_t = w_hist[static_cast<size_t>(t - 1)];
    const auto& v_t = v_hist[static_cast<size_t>(t - 1)];
    const auto& v_next = v_hist[static_cast<size_t>(t)];
    for (size_t i = 0; i < dim; ++i) {
      const int g = eg[i];
      res.d_alpha[static_cast<size_t>(t - 1) * G + g] += dw[i] * v_next[i];
      dv[i] += sched.alpha(t, g) * dw[i];
      u[i] = (1.0 - sched.gamma(t, g)) * dv[i];
    }
    const auto lgd = eval_loss_grad_dual(model, w_t, sched.theta, t, batches.at(t), u);
    for (size_t i = 0; i < dim; ++i) {
      const int g = eg[i];
      res.d_gamma[static_cast<size_t>(t - 1) * G + g] += dv[i] * (v_t[i] + lgd.grad_w[i]);
      dw[i] -= lgd.hvp_w[i];
      dv[i] *= sched.gamma(t, g);
    }
    for (size_t j = 0; j < res.d_theta.size(); ++j) res.d_theta[j] -= lgd.hvp_theta[j];
  }
  return res;
}

double float_final_objective(std::span<const double> w1, const RealSchedules& sched,
                             const Model& model, const BatchSchedule& batches) {
  const auto eg = model.layout().element_groups();
  std::vector<double> w(w1.begin(), w1.end());
  std::vector<double> v(w1.size(), 0.0);
  for (int t = 1; t <= sched.T; ++t) {
    const auto lg = eval_loss_grad(model, w, sched.theta, t, batches.at(t));
    FloatStep::apply(w, v, lg.grad_w, sched, t, eg);
  }
  return eval_objective(model, w);
}

FloatReversal float_reverse_unbuffered(std::span<const double> w1, const Schedules& sched,
                                       const Model& model, const BatchSchedule& batches) {
  const auto eg = model.layout().element_groups();
  const RealSchedules rs = RealSchedules::from(sched);
  std::vector<double> w(w1.begin(), w1.end());
  std::vector<double> v(w1.size(), 0.0);
  for (int t = 1; t <= rs.T; ++t) {
    const auto lg = eval_loss_grad(model, w, rs.theta, t, batches.at(t));
    FloatStep::apply(w, v, lg.grad_w, rs, t, eg);
  }

  FloatReversal out;
  try {
    for (int t = rs.T; t >= 1; --t) {
      for (size_t i = 0; i < w.size(); ++i) {
        w[i] -= rs.alpha(t, eg[i]) * v[i];
      }
      const auto lg = eval_loss_grad(model, w, rs.theta, t, batches.at(t));
      for (size_t i = 0; i < w.size(); ++i) {
        const double gamma = rs.gamma(t, eg[i]);
        v[i] = (v[i] + (1.0 - gamma) * lg.grad_w[i]) / gamma;
      }
    }
  } catch (const NumericError&) {
    out.finite = false;
  }
  for (double x : w) {
    if (!std::isfinite(x)) out.finite = false;
  }
  out.recovered_w1 = std::move(w);
  return out;
}

MemoryReport memory_report(const TrainState& state, int T) {
  MemoryReport rep;
  rep.buffer_bits_total = state.buffer_bits_total();
  const double dim = static_cast<double>(state.w.size());
  rep.bits_per_step_per_element = T > 0 ? rep.buffer_bits_total / (dim * T) : 0.0;
  rep.naive_bits_per_element = 32.0 * T;
  if (rep.buffer_bits_total > 0.0) {
    rep.ratio = rep.naive_bits_per_element / (rep.buffer_bits_total / dim);
  }
  return rep;
}

RunResult run_with_hypergrad(std::span<const double> w1, const Schedules& sched,
                             const Model& model, const BatchSchedule& batches, int frac_bits) {
  RunResult out;
  TrainState st = TrainState::init(w1, frac_bits);
  sgd_forward(st, sched, model, batches);
  out.memory = memory_report(st, sched.T);
  out.w_final = st.w.to_reals();
  const auto obj = eval_objective_grad(model, out.w_final);
  out.objective = obj.value;
  out.hg = sgd_reverse(st, sched, model, batches, obj.grad);
  return out;
}

// --- checkpoint io ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'V', 'L', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& out, uint32_t v) {
  uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& in) {
  uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& in) {
  uint8_t b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated checkpoint");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create checkpoint file: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, static_cast<uint32_t>(state.w.frac_bits));
  put_u64(out, static_cast<uint64_t>(state.t));
  put_u64(out, config_hash);
  put_u64(out, state.w.size());
  for (int64_t r : state.w.raw) put_u64(out, static_cast<uint64_t>(r));
  for (int64_t r : state.v.raw) put_u64(out, static_cast<uint64_t>(r));
  for (const auto& buf : state.buffers) {
    const auto bytes = buf.to_bytes();
    put_u32(out, static_cast<uint32_t>(bytes.size()));
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint file: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("bad checkpoint magic");
  }
  Checkpoint ck;
  const int fb = static_cast<int>(get_u32(in));
  ck.state.t = static_cast<int64_t>(get_u64(in));
  ck.config_hash = get_u64(in);
  const uint64_t dim = get_u64(in);
  ck.state.w.frac_bits = fb;
  ck.state.v.frac_bits = fb;
  ck.state.w.raw.resize(dim);
  ck.state.v.raw.resize(dim);
  for (auto& r : ck.state.w.raw) r = static_cast<int64_t>(get_u64(in));
  for (auto& r : ck.state.v.raw) r = static_cast<int64_t>(get_u64(in));
  ck.state.buffers.resize(dim);
  for (auto& buf : ck.state.buffers) {
    const uint32_t len = get_u32(in);
    std::vector<uint8_t> bytes(len);
    if (len > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), len)) {
      throw DataError("truncated checkpoint buffer payload");
    }
    buf = InfoBuffer::from_bytes(bytes);
  }
  return ck;
}

}  // namespace revlearn
