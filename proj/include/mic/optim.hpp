#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mic/layers.hpp"
#include "mic/model.hpp"
#include "mic/tensor.hpp"

namespace mic {

inline constexpr double kProbClamp = 1e-7;

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> dlogits;
};

/// Mean sparse categorical cross-entropy over softmax outputs. The gradient is
/// taken with respect to the softmax inputs: (p - onehot) / n.
template <typename T>
LossResult<T> sparse_ce_loss(const Tensor<T>& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw DimensionError("sparse_ce_loss: probs " + shape_str(probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  LossResult<T> r{0.0, probs};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || std::size_t(y) >= k)
      throw std::out_of_range("label " + std::to_string(y) + " outside [0," + std::to_string(k) +
                              ")");
    r.loss -= std::log(std::max(double(probs[i * k + y]), kProbClamp));
    r.dlogits[i * k + y] -= T(1);
  }
  r.loss /= double(n);
  for (auto& g : r.dlogits.data()) g /= static_cast<T>(n);
  return r;
}

/// Mean binary cross-entropy over sigmoid outputs [n,1]; gradient with respect
/// to the pre-sigmoid logit is (p - y) / n.
template <typename T>
LossResult<T> binary_ce_loss(const Tensor<T>& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(1) != 1 || probs.dim(0) != labels.size())
    throw DimensionError("binary_ce_loss: probs " + shape_str(probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = probs.dim(0);
  LossResult<T> r{0.0, Tensor<T>(probs.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1)
      throw std::out_of_range("binary label must be 0 or 1, got " + std::to_string(y));
    const double p = std::clamp(double(probs[i]), kProbClamp, 1.0 - kProbClamp);
    r.loss -= y ? std::log(p) : std::log(1.0 - p);
    r.dlogits[i] = static_cast<T>((double(probs[i]) - y) / double(n));
  }
  r.loss /= double(n);
  return r;
}

/// Loss matching the model's output head.
template <typename T>
LossResult<T> head_loss(bool sigmoid_head, const Tensor<T>& probs, std::span<const int> labels) {
  return sigmoid_head ? binary_ce_loss(probs, labels) : sparse_ce_loss(probs, labels);
}

/// Sum of l2 * sum(w^2) over regularized parameters. When `accumulate_grad`
/// is set each such parameter's gradient receives += 2 * l2 * w.
template <typename T>
double l2_penalty(std::span<Parameter<T>* const> params, bool accumulate_grad = true) {
  double penalty = 0.0;
  for (auto* p : params) {
    if (p->l2 == 0.0) continue;
    double sq = 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double w = double(p->value[i]);
      sq += w * w;
      if (accumulate_grad) p->grad[i] += static_cast<T>(2.0 * p->l2 * w);
    }
    penalty += p->l2 * sq;
  }
  return penalty;
}

template <typename T>
double l2_penalty(Model<T>& model, bool accumulate_grad = true) {
  const auto params = model.params();
  return l2_penalty<T>(std::span<Parameter<T>* const>(params), accumulate_grad);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// One Adam update at step t (1-based). Gradients are zeroed afterwards.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, double lr, std::int64_t t,
               const AdamConfig& cfg = {}) {
  if (t < 1) throw std::invalid_argument("adam step index must be >= 1");
  for (auto* p : params)
    for (auto g : p->grad.data())
      if (!std::isfinite(double(g)))
        throw std::domain_error("non-finite gradient in parameter '" + p->name + "'");
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = double(p->grad[i]);
      const double m = cfg.beta1 * double(p->adam_m[i]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * double(p->adam_v[i]) + (1.0 - cfg.beta2) * g * g;
      p->adam_m[i] = static_cast<T>(m);
      p->adam_v[i] = static_cast<T>(v);
      const double m_hat = m / bc1, v_hat = v / bc2;
      p->value[i] = static_cast<T>(double(p->value[i]) - lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
    p->zero_grad();
  }
}

/// Adam with its own step counter.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  template <typename T>
  void step(Model<T>& model, double lr) {
    const auto params = model.params();
    adam_step<T>(std::span<Parameter<T>* const>(params), lr, ++t_, cfg_);
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  int max_epochs = 50;
  std::size_t batch_size = 32;
  double base_lr = 1e-3;
  double lr_decay_factor = 0.5;
  int lr_decay_every = 10;
  int patience = 5;
  double min_delta = 0.0;
  std::uint64_t seed = 42;
  bool deterministic = true;

  void validate() const {
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(base_lr >= 0.0)) throw std::invalid_argument("base_lr must be >= 0");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
      throw std::invalid_argument("lr_decay_factor must lie in (0, 1]");
    if (lr_decay_every < 1) throw std::invalid_argument("lr_decay_every must be >= 1");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (!(min_delta >= 0.0)) throw std::invalid_argument("min_delta must be >= 0");
  }
};

/// Step decay: base_lr * factor^floor((epoch - 1) / every).
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 1) throw std::invalid_argument("epoch must be >= 1");
  return cfg.base_lr * std::pow(cfg.lr_decay_factor, double((epoch - 1) / cfg.lr_decay_every));
}

/// Copy of everything training mutates: values, Adam moments, running stats.
template <typename T>
struct ModelSnapshot {
  std::vector<Tensor<T>> values;
  std::vector<Tensor<T>> adam_m;
  std::vector<Tensor<T>> adam_v;
  std::vector<Tensor<T>> running;
  std::vector<bool> bn_initialized;
  std::int64_t adam_steps = 0;

  static ModelSnapshot capture(Model<T>& model, std::int64_t steps = 0) {
    ModelSnapshot s;
    for (auto* p : model.params()) {
      s.values.push_back(p->value);
      s.adam_m.push_back(p->adam_m);
      s.adam_v.push_back(p->adam_v);
    }
    for (auto* t : model.running_stats()) s.running.push_back(*t);
    for (const auto& layer : model.layers())
      if (const auto* bn = std::get_if<BatchNorm<T>>(&layer))
        s.bn_initialized.push_back(bn->stats_initialized());
    s.adam_steps = steps;
    return s;
  }

  void restore(Model<T>& model) const {
    auto params = model.params();
    auto running_stats = model.running_stats();
    if (params.size() != values.size() || running_stats.size() != running.size())
      throw std::logic_error("snapshot does not match model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i]->value = values[i];
      params[i]->adam_m = adam_m[i];
      params[i]->adam_v = adam_v[i];
    }
    for (std::size_t i = 0; i < running.size(); ++i) *running_stats[i] = running[i];
    std::size_t b = 0;
    for (auto& layer : model.layers())
      if (auto* bn = std::get_if<BatchNorm<T>>(&layer)) bn->set_stats_initialized(bn_initialized.at(b++));
  }
};

enum class StopDecision { Continue, Stop };

template <typename T>
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  }

  /// Improvement means val_loss < best - min_delta. Non-finite losses stop with
  /// the error flag set.
  StopDecision update(int epoch, double val_loss, Model<T>& model, std::int64_t adam_steps = 0) {
    if (!std::isfinite(val_loss)) {
      error_ = true;
      return StopDecision::Stop;
    }
    if (!best_ || val_loss < *best_ - min_delta_) {
      best_ = val_loss;
      best_epoch_ = epoch;
      wait_ = 0;
      snapshot_ = ModelSnapshot<T>::capture(model, adam_steps);
      return StopDecision::Continue;
    }
    return ++wait_ >= patience_ ? StopDecision::Stop : StopDecision::Continue;
  }

  /// Restores the best snapshot; returns its Adam step count.
  std::int64_t restore_best(Model<T>& model) const {
    if (!snapshot_) throw std::logic_error("no snapshot recorded");
    snapshot_->restore(model);
    return snapshot_->adam_steps;
  }

  bool has_snapshot() const { return snapshot_.has_value(); }
  std::optional<double> best_loss() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_since_improvement() const { return wait_; }
  bool error() const { return error_; }

 private:
  int patience_;
  double min_delta_;
  std::optional<double> best_;
  int best_epoch_ = 0;
  int wait_ = 0;
  bool error_ = false;
  std::optional<ModelSnapshot<T>> snapshot_;
};

}  // namespace mic
