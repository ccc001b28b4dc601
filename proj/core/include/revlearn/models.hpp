#pragma once

#include <memory>
#include <span>
#include <vector>

#include "revlearn/autodiff.hpp"
#include "revlearn/data.hpp"
#include "revlearn/layout.hpp"

namespace revlearn {

// Which split the meta-objective f(w) is evaluated on. Schedule experiments
// optimize the training error; regularization experiments use held-out data.
enum class Objective { Validation, Training };

// A training loss L(w, theta, t) plus a meta-objective f(w), both recorded
// through the tape so gradients and Hessian-vector products are exact.
class Model {
 public:
  virtual ~Model() = default;

  virtual int64_t dim() const = 0;
  virtual const ParamLayout& layout() const = 0;
  virtual const HyperLayout& hyper_layout() const = 0;
  // Number of training examples batch indices address.
  virtual int64_t train_size() const = 0;

  virtual ad::Var train_loss(ad::Tape& tape, ad::Var w, ad::Var theta, int t,
                             std::span<const int32_t> batch) const = 0;
  virtual ad::Var meta_objective(ad::Tape& tape, ad::Var w) const = 0;
};

// --- shared loss pieces ---------------------------------------------------

// 0.5 * sum_i exp(theta_i) * w_i^2; log-space hyperparameters keep every
// per-parameter penalty positive.
ad::Var per_param_l2(ad::Var w, ad::Var theta_block);

// Pairwise quadratic weight-tying penalty. A_per_layer[l] is a k x k
// symmetric matrix of nonnegative strengths; slices[l][task] addresses that
// task's layer-l block inside w. Off-diagonal entries penalize
// ||w_a - w_b||^2, diagonal entries act as plain L2.
ad::Var tied_penalty(ad::Var w, const std::vector<std::vector<double>>& A_per_layer,
                     const std::vector<std::vector<std::pair<int64_t, int64_t>>>& slices);

// w[group] = exp(log_scale[group]) * standard normal draws from the
// counter generator keyed by (seed, group). Differentiable w.r.t. the
// scales by treating the draws as constants.
std::vector<double> init_weights(std::span<const double> log_scales, const ParamLayout& layout,
                                 uint64_t seed);

// Evenly split [0, dim) into `num_groups` contiguous schedule groups.
ParamLayout split_layout(int64_t dim, int num_groups);

// --- concrete models ------------------------------------------------------

struct LogisticConfig {
  Objective objective = Objective::Validation;
  bool per_param_reg = false;
  bool learn_init_scales = false;  // adds an init_scales theta block (one per group)
  int num_groups = 0;              // 0 means the natural weights/biases split
};

class LogisticModel : public Model {
 public:
  LogisticModel(Dataset train, Dataset valid, LogisticConfig cfg = {});

  int64_t dim() const override { return dim_; }
  const ParamLayout& layout() const override { return layout_; }
  const HyperLayout& hyper_layout() const override { return hyper_; }
  int64_t train_size() const override { return train_.n; }
  ad::Var train_loss(ad::Tape&, ad::Var w, ad::Var theta, int t,
                     std::span<const int32_t> batch) const override;
  ad::Var meta_objective(ad::Tape&, ad::Var w) const override;

  const Dataset& train_set() const { return train_; }
  const Dataset& valid_set() const { return valid_; }

 private:
  Dataset train_;
  Dataset valid_;
  LogisticConfig cfg_;
  int64_t dim_ = 0;
  ParamLayout layout_;
  HyperLayout hyper_;
};

struct MlpConfig {
  std::vector<int64_t> widths;  // input, hidden... (classes appended internally)
  Objective objective = Objective::Training;
  bool per_param_reg = false;
  bool learn_init_scales = false;
};

class MlpModel : public Model {
 public:
  MlpModel(Dataset train, Dataset valid, MlpConfig cfg);

  int64_t dim() const override { return dim_; }
  const ParamLayout& layout() const override { return layout_; }
  const HyperLayout& hyper_layout() const override { return hyper_; }
  int64_t train_size() const override { return train_.n; }
  ad::Var train_loss(ad::Tape&, ad::Var w, ad::Var theta, int t,
                     std::span<const int32_t> batch) const override;
  ad::Var meta_objective(ad::Tape&, ad::Var w) const override;

  const MlpConfig& config() const { return cfg_; }
  const Dataset& train_set() const { return train_; }

 private:
  ad::Var logits(ad::Tape&, ad::Var w, ad::Var inputs) const;

  Dataset train_;
  Dataset valid_;
  MlpConfig cfg_;
  int64_t dim_ = 0;
  ParamLayout layout_;
  HyperLayout hyper_;
};

// Training inputs live in theta: gradients flow into the pixels themselves.
// Labels are fixed in order 0..K-1 and the whole learned set is used each
// iteration. Pixels are unconstrained and may go negative.
class DataHyperModel : public Model {
 public:
  DataHyperModel(Dataset valid, int num_examples);

  int64_t dim() const override { return dim_; }
  const ParamLayout& layout() const override { return layout_; }
  const HyperLayout& hyper_layout() const override { return hyper_; }
  int64_t train_size() const override { return num_examples_; }
  ad::Var train_loss(ad::Tape&, ad::Var w, ad::Var theta, int t,
                     std::span<const int32_t> batch) const override;
  ad::Var meta_objective(ad::Tape&, ad::Var w) const override;

  int num_examples() const { return num_examples_; }
  const std::vector<int32_t>& fixed_labels() const { return fixed_labels_; }

 private:
  Dataset valid_;
  int num_examples_ = 0;
  std::vector<int32_t> fixed_labels_;
  int64_t dim_ = 0;
  ParamLayout layout_;
  HyperLayout hyper_;
};

// One logistic net per task with a learned pairwise tying penalty between
// same-layer blocks; tying strengths live in theta (log space, upper
// triangle incl. diagonal).
class TiedMultitaskModel : public Model {
 public:
  TiedMultitaskModel(std::vector<Dataset> task_train, std::vector<Dataset> task_valid);

  int64_t dim() const override { return dim_; }
  const ParamLayout& layout() const override { return layout_; }
  const HyperLayout& hyper_layout() const override { return hyper_; }
  int64_t train_size() const override { return train_.front().n; }
  ad::Var train_loss(ad::Tape&, ad::Var w, ad::Var theta, int t,
                     std::span<const int32_t> batch) const override;
  ad::Var meta_objective(ad::Tape&, ad::Var w) const override;

  int num_tasks() const { return static_cast<int>(train_.size()); }

 private:
  ad::Var task_loss(ad::Tape&, ad::Var w, int task, const Dataset& ds,
                    std::span<const int32_t> batch) const;

  std::vector<Dataset> train_;
  std::vector<Dataset> valid_;
  int64_t task_dim_ = 0;  // weights + biases per task
  int64_t dim_ = 0;
  ParamLayout layout_;
  HyperLayout hyper_;
};

// 0.5 * sum_i h_i w_i^2 plus an optional per-iteration random linear term,
// cheap enough for long reversibility and memory runs.
class QuadraticModel : public Model {
 public:
  QuadraticModel(std::vector<double> curvature, double noise_scale = 0.0, uint64_t noise_seed = 0,
                 int num_groups = 1);

  int64_t dim() const override { return dim_; }
  const ParamLayout& layout() const override { return layout_; }
  const HyperLayout& hyper_layout() const override { return hyper_; }
  int64_t train_size() const override { return 1; }
  ad::Var train_loss(ad::Tape&, ad::Var w, ad::Var theta, int t,
                     std::span<const int32_t> batch) const override;
  ad::Var meta_objective(ad::Tape&, ad::Var w) const override;

 private:
  std::vector<double> curvature_;
  double noise_scale_ = 0.0;
  uint64_t noise_seed_ = 0;
  int64_t dim_ = 0;
  ParamLayout layout_;
  HyperLayout hyper_;
};

// --- evaluation bridge used by the training loop ---------------------------

struct LossGrad {
  double loss = 0.0;
  ad::Vec grad_w;
};

struct LossGradDual {
  double loss = 0.0;
  ad::Vec grad_w;
  ad::Vec hvp_w;      // (d2L/dw dw) . u
  ad::Vec hvp_theta;  // (d2L/dtheta dw) . u
};

LossGrad eval_loss_grad(const Model& model, std::span<const double> w,
                        std::span<const double> theta, int t, std::span<const int32_t> batch);

// Single dual-number pass: the primal part is the training gradient, the
// tangent part carries both Hessian-vector products for direction u.
LossGradDual eval_loss_grad_dual(const Model& model, std::span<const double> w,
                                 std::span<const double> theta, int t,
                                 std::span<const int32_t> batch, std::span<const double> u);

struct ObjectiveGrad {
  double value = 0.0;
  ad::Vec grad;
};

ObjectiveGrad eval_objective_grad(const Model& model, std::span<const double> w);

double eval_objective(const Model& model, std::span<const double> w);

// (d2L/dw dw) . vec, exact.
ad::Vec hvp_ww(const Model& model, std::span<const double> w, std::span<const double> theta, int t,
               std::span<const int32_t> batch, std::span<const double> vec);

// vec^T (d2L/dtheta dw), length dim(theta), exact.
ad::Vec hvp_thetaw(const Model& model, std::span<const double> w, std::span<const double> theta,
                   int t, std::span<const int32_t> batch, std::span<const double> vec);

// Constant batch design matrix / labels for a dataset.
ad::Var batch_inputs(ad::Tape&, const Dataset& ds, std::span<const int32_t> batch);
std::vector<int32_t> batch_labels(const Dataset& ds, std::span<const int32_t> batch);

}  // namespace revlearn
