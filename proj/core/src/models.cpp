#include "revlearn/models.hpp"

#include <cmath>

#include "revlearn/rng.hpp"

namespace revlearn {

using ad::Tape;
using ad::Var;

// --- shared pieces ----------------------------------------------------------

Var per_param_l2(Var w, Var theta_block) {
  if (ad::rows(w) * ad::cols(w) != ad::rows(theta_block) * ad::cols(theta_block)) {
    throw ContractViolation("per_param_l2: one penalty per parameter required");
  }
  return ad::smul(ad::sum(ad::mul(ad::exp_(theta_block), ad::mul(w, w))), 0.5);
}

Var tied_penalty(Var w, const std::vector<std::vector<double>>& A_per_layer,
                 const std::vector<std::vector<std::pair<int64_t, int64_t>>>& slices) {
  if (A_per_layer.size() != slices.size()) {
    throw ContractViolation("tied_penalty: one strength matrix per layer required");
  }
  Tape& tape = *w.tape;
  Var total = tape.scalar_const(0.0);
  for (size_t l = 0; l < A_per_layer.size(); ++l) {
    const auto& A = A_per_layer[l];
    const auto& layer_slices = slices[l];
    const size_t k = layer_slices.size();
    if (A.size() != k * k) {
      throw ContractViolation("tied_penalty: strength matrix shape mismatch at layer " +
                              std::to_string(l));
    }
    for (size_t a = 0; a < k; ++a) {
      for (size_t b = 0; b < k; ++b) {
        if (A[a * k + b] < 0.0) {
          throw ContractViolation("tied_penalty: negative strength at layer " + std::to_string(l));
        }
        if (A[a * k + b] != A[b * k + a]) {
          throw ContractViolation("tied_penalty: asymmetric strength matrix at layer " +
                                  std::to_string(l));
        }
      }
    }
    for (size_t a = 0; a < k; ++a) {
      const Var wa = ad::slice(w, layer_slices[a].first, layer_slices[a].second);
      if (A[a * k + a] != 0.0) {
        total = ad::add(total, ad::smul(ad::sum(ad::mul(wa, wa)), A[a * k + a]));
      }
      for (size_t b = a + 1; b < k; ++b) {
        const double coeff = A[a * k + b];
        if (coeff == 0.0) continue;
        const Var wb = ad::slice(w, layer_slices[b].first, layer_slices[b].second);
        const Var diff = ad::sub(wa, wb);
        total = ad::add(total, ad::smul(ad::sum(ad::mul(diff, diff)), coeff));
      }
    }
  }
  return total;
}

std::vector<double> init_weights(std::span<const double> log_scales, const ParamLayout& layout,
                                 uint64_t seed) {
  if (static_cast<int>(log_scales.size()) != layout.num_groups()) {
    throw ContractViolation("init_weights: one log scale per parameter group required");
  }
  std::vector<double> w(static_cast<size_t>(layout.dim()));
  for (size_t gi = 0; gi < layout.groups.size(); ++gi) {
    const auto& g = layout.groups[gi];
    const double scale = std::exp(log_scales[gi]);
    for (int64_t i = 0; i < g.len; ++i) {
      w[static_cast<size_t>(g.offset + i)] =
          scale * keyed_normal(seed, gi, static_cast<uint64_t>(i));
    }
  }
  return w;
}

ParamLayout split_layout(int64_t dim, int num_groups) {
  if (num_groups < 1 || num_groups > dim) {
    throw ContractViolation("split_layout: need 1 <= groups <= dim");
  }
  ParamLayout layout;
  const int64_t base = dim / num_groups;
  const int64_t extra = dim % num_groups;
  int64_t offset = 0;
  for (int g = 0; g < num_groups; ++g) {
    const int64_t len = base + (g < extra ? 1 : 0);
    layout.groups.push_back({"g" + std::to_string(g), offset, len});
    offset += len;
  }
  layout.validate();
  return layout;
}

Var batch_inputs(Tape& tape, const Dataset& ds, std::span<const int32_t> batch) {
  std::vector<double> xs;
  xs.reserve(batch.size() * static_cast<size_t>(ds.d));
  for (int32_t idx : batch) {
    const auto row = ds.row(idx);
    xs.insert(xs.end(), row.begin(), row.end());
  }
  return tape.constant(xs, static_cast<int64_t>(batch.size()), ds.d);
}

std::vector<int32_t> batch_labels(const Dataset& ds, std::span<const int32_t> batch) {
  std::vector<int32_t> ys;
  ys.reserve(batch.size());
  for (int32_t idx : batch) {
    const int32_t lab = ds.labels[static_cast<size_t>(idx)];
    if (lab < 0 || lab >= ds.num_classes) {
      throw DataError("label " + std::to_string(lab) + " out of range for " +
                      std::to_string(ds.num_classes) + " classes");
    }
    ys.push_back(lab);
  }
  return ys;
}

namespace {

std::vector<int32_t> all_indices(const Dataset& ds) {
  std::vector<int32_t> idx(static_cast<size_t>(ds.n));
  for (int64_t i = 0; i < ds.n; ++i) idx[static_cast<size_t>(i)] = static_cast<int32_t>(i);
  return idx;
}

// logits = X W + b for a flat [W, b] parameter block starting at `offset`.
Var linear_logits(Tape& tape, Var w, Var inputs, int64_t offset, int64_t d, int64_t k) {
  const Var W = ad::reshape(ad::slice(w, offset, d * k), d, k);
  const Var b = ad::reshape(ad::slice(w, offset + d * k, k), 1, k);
  return ad::add(ad::matmul(inputs, W), ad::rep_rows(b, ad::rows(inputs)));
}

Var dataset_xent(Tape& tape, Var w, const Dataset& ds, int64_t offset) {
  const auto idx = all_indices(ds);
  const Var X = batch_inputs(tape, ds, idx);
  const auto ys = batch_labels(ds, idx);
  return ad::softmax_xent(linear_logits(tape, w, X, offset, ds.d, ds.num_classes), ys);
}

}  // namespace

// --- logistic ----------------------------------------------------------------

LogisticModel::LogisticModel(Dataset train, Dataset valid, LogisticConfig cfg)
    : train_(std::move(train)), valid_(std::move(valid)), cfg_(cfg) {
  train_.validate();
  valid_.validate();
  dim_ = train_.d * train_.num_classes + train_.num_classes;
  if (cfg_.num_groups > 0) {
    layout_ = split_layout(dim_, cfg_.num_groups);
  } else {
    layout_.groups = {{"weights", 0, train_.d * train_.num_classes},
                      {"biases", train_.d * train_.num_classes, train_.num_classes}};
  }
  layout_.validate();
  int64_t hoff = 0;
  if (cfg_.per_param_reg) {
    hyper_.blocks.push_back({"l2", hoff, dim_, Transform::Identity});
    hoff += dim_;
  }
  if (cfg_.learn_init_scales) {
    hyper_.blocks.push_back({"init_scales", hoff, layout_.num_groups(), Transform::Identity});
    hoff += layout_.num_groups();
  }
  hyper_.validate();
}

Var LogisticModel::train_loss(Tape& tape, Var w, Var theta, int t,
                              std::span<const int32_t> batch) const {
  (void)t;
  const Var X = batch_inputs(tape, train_, batch);
  const auto ys = batch_labels(train_, batch);
  Var loss =
      ad::softmax_xent(linear_logits(tape, w, X, 0, train_.d, train_.num_classes), ys);
  if (const HyperBlock* l2 = hyper_.find("l2")) {
    loss = ad::add(loss, per_param_l2(w, ad::slice(theta, l2->offset, l2->len)));
  }
  return loss;
}

Var LogisticModel::meta_objective(Tape& tape, Var w) const {
  const Dataset& ds = cfg_.objective == Objective::Validation ? valid_ : train_;
  return dataset_xent(tape, w, ds, 0);
}

// --- MLP ----------------------------------------------------------------------

MlpModel::MlpModel(Dataset train, Dataset valid, MlpConfig cfg)
    : train_(std::move(train)), valid_(std::move(valid)), cfg_(std::move(cfg)) {
  train_.validate();
  valid_.validate();
  if (cfg_.widths.empty() || cfg_.widths.front() != train_.d) {
    throw ContractViolation("mlp widths must start at the input dimension");
  }
  std::vector<int64_t> full = cfg_.widths;
  full.push_back(train_.num_classes);
  int64_t offset = 0;
  for (size_t l = 0; l + 1 < full.size(); ++l) {
    const int64_t win = full[l];
    const int64_t wout = full[l + 1];
    layout_.groups.push_back({"W" + std::to_string(l + 1), offset, win * wout});
    offset += win * wout;
    layout_.groups.push_back({"b" + std::to_string(l + 1), offset, wout});
    offset += wout;
  }
  dim_ = offset;
  layout_.validate();
  int64_t hoff = 0;
  if (cfg_.per_param_reg) {
    hyper_.blocks.push_back({"l2", hoff, dim_, Transform::Identity});
    hoff += dim_;
  }
  if (cfg_.learn_init_scales) {
    hyper_.blocks.push_back({"init_scales", hoff, layout_.num_groups(), Transform::Identity});
    hoff += layout_.num_groups();
  }
  hyper_.validate();
}

Var MlpModel::logits(Tape& tape, Var w, Var inputs) const {
  std::vector<int64_t> full = cfg_.widths;
  full.push_back(train_.num_classes);
  Var a = inputs;
  int64_t offset = 0;
  for (size_t l = 0; l + 1 < full.size(); ++l) {
    const int64_t win = full[l];
    const int64_t wout = full[l + 1];
    Var z = linear_logits(tape, w, a, offset, win, wout);
    offset += win * wout + wout;
    a = (l + 2 < full.size()) ? ad::tanh_(z) : z;
  }
  return a;
}

Var MlpModel::train_loss(Tape& tape, Var w, Var theta, int t,
                         std::span<const int32_t> batch) const {
  (void)t;
  const Var X = batch_inputs(tape, train_, batch);
  const auto ys = batch_labels(train_, batch);
  Var loss = ad::softmax_xent(logits(tape, w, X), ys);
  if (const HyperBlock* l2 = hyper_.find("l2")) {
    loss = ad::add(loss, per_param_l2(w, ad::slice(theta, l2->offset, l2->len)));
  }
  return loss;
}

Var MlpModel::meta_objective(Tape& tape, Var w) const {
  const Dataset& ds = cfg_.objective == Objective::Validation ? valid_ : train_;
  const auto idx = all_indices(ds);
  const Var X = batch_inputs(tape, ds, idx);
  const auto ys = batch_labels(ds, idx);
  return ad::softmax_xent(logits(tape, w, X), ys);
}

// --- learned training data ------------------------------------------------------

DataHyperModel::DataHyperModel(Dataset valid, int num_examples)
    : valid_(std::move(valid)), num_examples_(num_examples) {
  valid_.validate();
  if (num_examples_ < 1) throw ContractViolation("need at least one learned example");
  dim_ = valid_.d * valid_.num_classes + valid_.num_classes;
  layout_.groups = {{"weights", 0, valid_.d * valid_.num_classes},
                    {"biases", valid_.d * valid_.num_classes, valid_.num_classes}};
  layout_.validate();
  hyper_.blocks = {{"pixels", 0, static_cast<int64_t>(num_examples_) * valid_.d,
                    Transform::Identity}};
  hyper_.validate();
  fixed_labels_.resize(static_cast<size_t>(num_examples_));
  for (int i = 0; i < num_examples_; ++i) {
    fixed_labels_[static_cast<size_t>(i)] = i % valid_.num_classes;
  }
}

Var DataHyperModel::train_loss(Tape& tape, Var w, Var theta, int t,
                               std::span<const int32_t> batch) const {
  (void)t;
  (void)batch;  // the whole learned set is the batch
  const Var X = ad::reshape(
      ad::slice(theta, 0, static_cast<int64_t>(num_examples_) * valid_.d), num_examples_,
      valid_.d);
  const Var z = linear_logits(tape, w, X, 0, valid_.d, valid_.num_classes);
  return ad::softmax_xent(z, fixed_labels_);
}

Var DataHyperModel::meta_objective(Tape& tape, Var w) const {
  return dataset_xent(tape, w, valid_, 0);
}

// --- tied multitask ----------------------------------------------------------

TiedMultitaskModel::TiedMultitaskModel(std::vector<Dataset> task_train,
                                       std::vector<Dataset> task_valid)
    : train_(std::move(task_train)), valid_(std::move(task_valid)) {
  if (train_.empty() || train_.size() != valid_.size()) {
    throw ContractViolation("tied multitask model needs matching train/valid sets per task");
  }
  const int64_t d = train_[0].d;
  const int k_classes = train_[0].num_classes;
  for (auto& ds : train_) {
    ds.validate();
    if (ds.d != d || ds.num_classes != k_classes) {
      throw ContractViolation("all tasks must share input dimension and class count");
    }
  }
  task_dim_ = d * k_classes + k_classes;
  dim_ = task_dim_ * static_cast<int64_t>(train_.size());
  for (size_t task = 0; task < train_.size(); ++task) {
    const int64_t base = static_cast<int64_t>(task) * task_dim_;
    layout_.groups.push_back(
        {"task" + std::to_string(task) + "_weights", base, d * k_classes});
    layout_.groups.push_back(
        {"task" + std::to_string(task) + "_biases", base + d * k_classes, k_classes});
  }
  layout_.validate();
  const int64_t pairs = static_cast<int64_t>(train_.size() * (train_.size() + 1) / 2);
  hyper_.blocks = {{"tying", 0, 2 * pairs, Transform::Identity}};
  hyper_.validate();
}

Var TiedMultitaskModel::task_loss(Tape& tape, Var w, int task, const Dataset& ds,
                                  std::span<const int32_t> batch) const {
  const Var X = batch_inputs(tape, ds, batch);
  const auto ys = batch_labels(ds, batch);
  const int64_t base = static_cast<int64_t>(task) * task_dim_;
  return ad::softmax_xent(linear_logits(tape, w, X, base, ds.d, ds.num_classes), ys);
}

Var TiedMultitaskModel::train_loss(Tape& tape, Var w, Var theta, int t,
                                   std::span<const int32_t> batch) const {
  (void)t;
  const int k = num_tasks();
  Var loss = tape.scalar_const(0.0);
  for (int task = 0; task < k; ++task) {
    loss = ad::add(loss, task_loss(tape, w, task, train_[static_cast<size_t>(task)], batch));
  }
  loss = ad::smul(loss, 1.0 / k);

  // Tying penalty: layer 0 ties weight blocks, layer 1 ties bias blocks.
  const int64_t d = train_[0].d;
  const int64_t kc = train_[0].num_classes;
  int64_t entry = 0;
  for (int layer = 0; layer < 2; ++layer) {
    const int64_t len = layer == 0 ? d * kc : kc;
    const int64_t local = layer == 0 ? 0 : d * kc;
    for (int a = 0; a < k; ++a) {
      for (int b = a; b < k; ++b, ++entry) {
        const Var strength = ad::exp_(ad::slice(theta, entry, 1));
        const Var wa = ad::slice(w, static_cast<int64_t>(a) * task_dim_ + local, len);
        Var term;
        if (a == b) {
          term = ad::sum(ad::mul(wa, wa));
        } else {
          const Var wb = ad::slice(w, static_cast<int64_t>(b) * task_dim_ + local, len);
          const Var diff = ad::sub(wa, wb);
          term = ad::sum(ad::mul(diff, diff));
        }
        loss = ad::add(loss, ad::mul(strength, term));
      }
    }
  }
  return loss;
}

Var TiedMultitaskModel::meta_objective(Tape& tape, Var w) const {
  const int k = num_tasks();
  Var loss = tape.scalar_const(0.0);
  for (int task = 0; task < k; ++task) {
    const Dataset& ds = valid_[static_cast<size_t>(task)];
    const auto idx = all_indices(ds);
    const Var X = batch_inputs(tape, ds, idx);
    const auto ys = batch_labels(ds, idx);
    const int64_t base = static_cast<int64_t>(task) * task_dim_;
    loss = ad::add(loss,
                   ad::softmax_xent(linear_logits(tape, w, X, base, ds.d, ds.num_classes), ys));
  }
  return ad::smul(loss, 1.0 / k);
}

// --- stochastic quadratic -------------------------------------------------------

QuadraticModel::QuadraticModel(std::vector<double> curvature, double noise_scale,
                               uint64_t noise_seed, int num_groups)
    : curvature_(std::move(curvature)), noise_scale_(noise_scale), noise_seed_(noise_seed) {
  dim_ = static_cast<int64_t>(curvature_.size());
  layout_ = split_layout(dim_, num_groups);
  hyper_.validate();
}

Var QuadraticModel::train_loss(Tape& tape, Var w, Var theta, int t,
                               std::span<const int32_t> batch) const {
  (void)theta;
  (void)batch;
  const Var h = tape.constant(curvature_, dim_, 1);
  Var loss = ad::smul(ad::sum(ad::mul(h, ad::mul(w, w))), 0.5);
  if (noise_scale_ != 0.0) {
    std::vector<double> c(static_cast<size_t>(dim_));
    for (int64_t i = 0; i < dim_; ++i) {
      c[static_cast<size_t>(i)] =
          noise_scale_ * keyed_normal(noise_seed_, static_cast<uint64_t>(t), static_cast<uint64_t>(i));
    }
    loss = ad::add(loss, ad::sum(ad::mul(tape.constant(c, dim_, 1), w)));
  }
  return loss;
}

Var QuadraticModel::meta_objective(Tape& tape, Var w) const {
  const Var h = tape.constant(curvature_, dim_, 1);
  return ad::smul(ad::sum(ad::mul(h, ad::mul(w, w))), 0.5);
}

// --- evaluation bridge -----------------------------------------------------------

namespace {

Var theta_input(Tape& tape, std::span<const double> theta) {
  return tape.input(theta, static_cast<int64_t>(theta.size()), 1);
}

}  // namespace

LossGrad eval_loss_grad(const Model& model, std::span<const double> w,
                        std::span<const double> theta, int t, std::span<const int32_t> batch) {
  Tape tape;
  Var wv = tape.input(w, static_cast<int64_t>(w.size()), 1);
  Var th = theta_input(tape, theta);
  Var loss = model.train_loss(tape, wv, th, t, batch);
  const std::array<Var, 1> wrt{wv};
  auto gs = ad::gradients(loss, wrt);
  return {ad::value(loss)[0], ad::value(gs[0])};
}

LossGradDual eval_loss_grad_dual(const Model& model, std::span<const double> w,
                                 std::span<const double> theta, int t,
                                 std::span<const int32_t> batch, std::span<const double> u) {
  Tape tape;
  Var wv = tape.input(w, static_cast<int64_t>(w.size()), 1);
  tape.seed_tangent(wv, u);
  Var th = theta_input(tape, theta);
  Var loss = model.train_loss(tape, wv, th, t, batch);
  const std::array<Var, 2> wrt{wv, th};
  auto gs = ad::gradients(loss, wrt);

  LossGradDual out;
  out.loss = ad::value(loss)[0];
  out.grad_w = ad::value(gs[0]);
  const auto tw = ad::tangent(gs[0]);
  out.hvp_w = tw.empty() ? ad::Vec(w.size(), 0.0) : ad::Vec(tw.begin(), tw.end());
  const auto tt = ad::tangent(gs[1]);
  out.hvp_theta = tt.empty() ? ad::Vec(theta.size(), 0.0) : ad::Vec(tt.begin(), tt.end());
  return out;
}

ObjectiveGrad eval_objective_grad(const Model& model, std::span<const double> w) {
  Tape tape;
  Var wv = tape.input(w, static_cast<int64_t>(w.size()), 1);
  Var obj = model.meta_objective(tape, wv);
  const std::array<Var, 1> wrt{wv};
  auto gs = ad::gradients(obj, wrt);
  return {ad::value(obj)[0], ad::value(gs[0])};
}

double eval_objective(const Model& model, std::span<const double> w) {
  Tape tape;
  Var wv = tape.input(w, static_cast<int64_t>(w.size()), 1);
  return ad::value(model.meta_objective(tape, wv))[0];
}

ad::Vec hvp_ww(const Model& model, std::span<const double> w, std::span<const double> theta,
               int t, std::span<const int32_t> batch, std::span<const double> vec) {
  return eval_loss_grad_dual(model, w, theta, t, batch, vec).hvp_w;
}

ad::Vec hvp_thetaw(const Model& model, std::span<const double> w, std::span<const double> theta,
                   int t, std::span<const int32_t> batch, std::span<const double> vec) {
  return eval_loss_grad_dual(model, w, theta, t, batch, vec).hvp_theta;
}

}  // namespace revlearn
