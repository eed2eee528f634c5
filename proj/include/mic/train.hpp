#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mic/data.hpp"
#include "mic/metrics.hpp"
#include "mic/model.hpp"
#include "mic/optim.hpp"

namespace mic {

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// argmax per row for softmax heads, p > 0.5 for the sigmoid head.
template <typename T>
std::vector<int> predicted_classes(const Tensor<T>& probs, bool sigmoid_head) {
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (sigmoid_head) {
      out[i] = probs[i] > T(0.5) ? 1 : 0;
    } else {
      const T* row = probs.ptr() + i * k;
      out[i] = int(std::max_element(row, row + k) - row);
    }
  }
  return out;
}

template <typename T>
double l2_penalty_value(const Model<T>& model) {
  double penalty = 0.0;
  for (const auto* p : model.params()) {
    if (p->l2 == 0.0) continue;
    double sq = 0.0;
    for (auto w : p->value.data()) sq += double(w) * double(w);
    penalty += p->l2 * sq;
  }
  return penalty;
}

struct EvalResult {
  double data_loss = 0.0;
  double penalty = 0.0;
  double loss = 0.0;  // data_loss + penalty
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::size_t samples = 0;
};

/// Inference-mode pass over every batch of `source`.
inline EvalResult evaluate(const Model<float>& model, const BatchLoader& source, int epoch = 1) {
  if (source.empty()) throw std::invalid_argument("evaluate: empty data source");
  const std::size_t k = model.spec().num_classes;
  EvalResult r;
  r.confusion = ConfusionMatrix(k);
  double loss_sum = 0.0;
  auto stream = source.stream(epoch);
  while (auto b = stream->next()) {
    for (int y : b->labels)
      if (y < 0 || std::size_t(y) >= k)
        throw std::out_of_range("label " + std::to_string(y) + " outside model's " +
                                std::to_string(k) + " classes");
    const Tensor<float> probs = model.predict(b->inputs);
    const auto loss = head_loss(model.sigmoid_head(), probs, b->labels);
    loss_sum += loss.loss * double(b->size());
    r.confusion.merge(confusion(b->labels, predicted_classes(probs, model.sigmoid_head()), k));
    r.samples += b->size();
  }
  if (r.samples == 0) throw std::runtime_error("evaluate: every sample was skipped");
  r.data_loss = loss_sum / double(r.samples);
  r.penalty = l2_penalty_value(model);
  r.loss = r.data_loss + r.penalty;
  r.accuracy = accuracy(r.confusion);
  return r;
}

struct FitResult {
  TrainingHistory history;
  int best_epoch = 0;
  bool stopped_early = false;
};

/// One optimizer step on a batch; returns (data loss + penalty, #correct).
inline std::pair<double, std::size_t> train_step(Model<float>& model, Adam& adam, const Batch& b,
                                                 double lr, RngStream& dropout_rng) {
  auto out = model.forward(b.inputs, LayerMode::Training, dropout_rng);
  const auto loss = head_loss(model.sigmoid_head(), out.probs, b.labels);
  const double penalty = l2_penalty(model, true);
  const double total = loss.loss + penalty;
  std::size_t correct = 0;
  const auto pred = predicted_classes(out.probs, model.sigmoid_head());
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  if (!std::isfinite(total)) return {total, correct};
  model.backward(std::move(out.trace), loss.dlogits);
  adam.step(model, lr);
  return {total, correct};
}

/// Epoch loop: step-decayed lr, training pass, validation pass (loss includes
/// the L2 penalty), early stopping. The model ends with the best-epoch state.
inline FitResult fit(Model<float>& model, const BatchLoader& train, const BatchLoader& val,
                     const TrainConfig& cfg, Adam& adam,
                     const std::function<void(const HistoryRow&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("fit: empty training source");
  if (val.empty()) throw std::invalid_argument("fit: empty validation source");
  FitResult result;
  EarlyStopper<float> stopper(cfg.patience, cfg.min_delta);
  model.zero_grad();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    auto stream = train.stream(epoch);
    while (auto b = stream->next()) {
      RngStream dropout_rng(cfg.seed, stream_id(StreamPurpose::Dropout, std::uint64_t(epoch),
                                                std::uint64_t(batch_index)));
      const auto [loss, ok] = train_step(model, adam, *b, lr, dropout_rng);
      if (!std::isfinite(loss))
        throw TrainingAborted("non-finite training loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batch_index + 1));
      loss_sum += loss * double(b->size());
      correct += ok;
      seen += b->size();
      ++batch_index;
    }
    if (seen == 0) throw TrainingAborted("epoch " + std::to_string(epoch) + " produced no batches");

    const EvalResult ev = evaluate(model, val, epoch);
    HistoryRow row{epoch, lr, loss_sum / double(seen), double(correct) / double(seen), ev.loss,
                   ev.accuracy};
    result.history.rows.push_back(row);
    if (on_epoch) on_epoch(row);

    const auto decision = stopper.update(epoch, ev.loss, model, adam.steps());
    if (stopper.error())
      throw TrainingAborted("non-finite validation loss at epoch " + std::to_string(epoch));
    if (decision == StopDecision::Stop) {
      result.stopped_early = true;
      break;
    }
  }
  adam.set_steps(stopper.restore_best(model));
  result.best_epoch = stopper.best_epoch();
  return result;
}

}  // namespace mic
