#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mic/layers.hpp"
#include "mic/rng.hpp"
#include "mic/tensor.hpp"

namespace mic {

/// Declarative model description. Builders turn it into a Model.
struct ArchitectureSpec {
  std::string arch = "ccnn";  // "ccnn" | "cnn"
  std::size_t height = 180;
  std::size_t width = 180;
  std::size_t channels = 3;
  std::size_t num_classes = 3;
  std::vector<std::size_t> filters{32, 64, 128, 256};
  double block_dropout = 0.3;
  double head_dropout = 0.5;
  double l2 = 0.01;
  std::size_t dense_width = 256;

  static ArchitectureSpec ccnn(std::size_t h = 180, std::size_t w = 180, std::size_t c = 3,
                               std::size_t k = 3) {
    return {"ccnn", h, w, c, k, {32, 64, 128, 256}, 0.3, 0.5, 0.01, 256};
  }
  static ArchitectureSpec cnn(std::size_t h = 180, std::size_t w = 180, std::size_t c = 3,
                              std::size_t k = 3) {
    return {"cnn", h, w, c, k, {32, 64, 128}, 0.25, 0.5, 0.0, 256};
  }
  static ArchitectureSpec defaults_for(const std::string& arch, std::size_t h, std::size_t w,
                                       std::size_t c, std::size_t k) {
    if (arch == "ccnn") return ccnn(h, w, c, k);
    if (arch == "cnn") return cnn(h, w, c, k);
    throw std::invalid_argument("unknown architecture '" + arch + "' (expected ccnn or cnn)");
  }

  bool sigmoid_head() const { return num_classes == 2; }
  std::size_t output_units() const { return sigmoid_head() ? 1 : num_classes; }

  /// Spatial size after each pooling stage; throws naming the first stage
  /// whose input is too small.
  std::vector<std::pair<std::size_t, std::size_t>> pooled_sizes() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t h = height, w = width;
    for (std::size_t i = 0; i < filters.size(); ++i) {
      if (h < 2 || w < 2)
        throw DimensionError("block " + std::to_string(i + 1) + " (filters " +
                             std::to_string(filters[i]) + "): spatial size " + std::to_string(h) +
                             "x" + std::to_string(w) + " is too small for 2x2 max pooling");
      h /= 2;
      w /= 2;
      out.emplace_back(h, w);
    }
    return out;
  }

  void validate() const {
    if (arch != "ccnn" && arch != "cnn")
      throw std::invalid_argument("unknown architecture '" + arch + "' (expected ccnn or cnn)");
    if (height == 0 || width == 0 || channels == 0)
      throw std::invalid_argument("input shape must be positive");
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (filters.empty()) throw std::invalid_argument("filters must not be empty");
    for (auto f : filters)
      if (f == 0) throw std::invalid_argument("filter counts must be positive");
    if (dense_width == 0) throw std::invalid_argument("dense_width must be positive");
    if (!(l2 >= 0.0)) throw std::invalid_argument("l2 must be nonnegative");
    for (double r : {block_dropout, head_dropout})
      if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("dropout rates must lie in [0, 1)");
    (void)pooled_sizes();
  }

  bool operator==(const ArchitectureSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchitectureSpec& s) {
  j = nlohmann::json{{"arch", s.arch},
                     {"input_shape", {s.height, s.width, s.channels}},
                     {"num_classes", s.num_classes},
                     {"filters", s.filters},
                     {"block_dropout", s.block_dropout},
                     {"head_dropout", s.head_dropout},
                     {"l2", s.l2},
                     {"dense_width", s.dense_width}};
}

inline void from_json(const nlohmann::json& j, ArchitectureSpec& s) {
  j.at("arch").get_to(s.arch);
  const auto shape = j.at("input_shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw std::invalid_argument("input_shape must have 3 entries");
  s.height = shape[0];
  s.width = shape[1];
  s.channels = shape[2];
  j.at("num_classes").get_to(s.num_classes);
  j.at("filters").get_to(s.filters);
  j.at("block_dropout").get_to(s.block_dropout);
  j.at("head_dropout").get_to(s.head_dropout);
  j.at("l2").get_to(s.l2);
  j.at("dense_width").get_to(s.dense_width);
}

template <typename T>
class Model {
 public:
  using Trace = std::vector<LayerContext<T>>;

  struct Output {
    Tensor<T> probs;
    Trace trace;
  };

  Model(ArchitectureSpec spec, std::vector<Layer<T>> layers)
      : spec_(std::move(spec)), layers_(std::move(layers)) {}

  const ArchitectureSpec& spec() const { return spec_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Layer<T>>& layers() { return layers_; }
  bool sigmoid_head() const { return spec_.sigmoid_head(); }

  /// Full forward pass returning probabilities. Training mode keeps the trace
  /// for backward and advances BatchNorm running statistics.
  Output forward(const Tensor<T>& x, LayerMode mode, RngStream& rng) {
    validate_input(x);
    Output out;
    out.probs = head(run_layers(x, mode, rng, &out.trace));
    if (mode == LayerMode::Training) {
      for (std::size_t i = 0; i < layers_.size(); ++i)
        if (auto* bn = std::get_if<BatchNorm<T>>(&layers_[i]))
          bn->update_running_stats(std::get<typename BatchNorm<T>::Context>(out.trace[i]));
    }
    return out;
  }

  /// Inference-mode probabilities; never mutates the model.
  Tensor<T> predict(const Tensor<T>& x) const {
    validate_input(x);
    RngStream unused(0, 0);
    return head(run_layers(x, LayerMode::Inference, unused, nullptr));
  }

  /// Consumes the trace of a forward pass. `dlogits` is the loss gradient with
  /// respect to the pre-activation outputs of the final dense layer. Returns
  /// the gradient with respect to the model input.
  Tensor<T> backward(Trace&& trace, const Tensor<T>& dlogits) {
    if (trace.size() != layers_.size())
      throw std::logic_error("backward called without a matching training-mode forward");
    Tensor<T> dy = dlogits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      std::visit(
          [&](auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            dy = layer.backward(std::get<typename L::Context>(std::move(trace[i])), dy);
          },
          layers_[i]);
    }
    trace.clear();
    return dy;
  }

  /// Parameter registry in layer order; kernel before bias, gamma before beta.
  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    for (auto& layer : layers_)
      std::visit(
          [&](auto& l) {
            for (auto* p : l.params()) out.push_back(p);
          },
          layer);
    return out;
  }

  std::vector<const Parameter<T>*> params() const {
    std::vector<const Parameter<T>*> out;
    for (auto* p : const_cast<Model*>(this)->params()) out.push_back(p);
    return out;
  }

  /// BatchNorm running statistics, (mean, var) per BatchNorm in layer order.
  std::vector<Tensor<T>*> running_stats() {
    std::vector<Tensor<T>*> out;
    for (auto& layer : layers_)
      if (auto* bn = std::get_if<BatchNorm<T>>(&layer)) {
        out.push_back(&bn->running_mean());
        out.push_back(&bn->running_var());
      }
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  void validate_input(const Tensor<T>& x) const {
    const Shape want{x.rank() == 4 ? x.dim(0) : 0, spec_.height, spec_.width, spec_.channels};
    if (x.rank() != 4 || x.shape() != want)
      throw DimensionError("model input " + shape_str(x.shape()) + " does not match [n," +
                           std::to_string(spec_.height) + "," + std::to_string(spec_.width) +
                           "," + std::to_string(spec_.channels) + "]");
    for (auto v : x.data())
      if (!(v >= T(0) && v <= T(1)))
        throw std::domain_error("model input values must lie in [0, 1]");
  }

 private:
  Tensor<T> run_layers(Tensor<T> x, LayerMode mode, RngStream& rng, Trace* trace) const {
    if (trace) trace->reserve(layers_.size());
    for (const auto& layer : layers_)
      std::visit(
          [&](const auto& l) {
            auto r = l.forward(x, mode, rng);
            x = std::move(r.output);
            if (trace) trace->emplace_back(std::move(r.ctx));
          },
          layer);
    return x;
  }

  Tensor<T> head(const Tensor<T>& logits) const {
    return sigmoid_head() ? sigmoid(logits) : softmax(logits);
  }

  ArchitectureSpec spec_;
  std::vector<Layer<T>> layers_;
};

namespace detail {

template <typename T>
void init_layers(std::vector<Layer<T>>& layers, std::uint64_t seed) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    RngStream rng(seed, stream_id(StreamPurpose::Init, i));
    std::visit(
        [&](auto& l) {
          if constexpr (requires { l.init(rng); }) l.init(rng);
        },
        layers[i]);
  }
}

template <typename T>
void append_head(std::vector<Layer<T>>& layers, const ArchitectureSpec& spec, std::size_t din,
                 double l2) {
  layers.emplace_back(Dense<T>("dense_1", din, spec.dense_width, l2));
  layers.emplace_back(ReLU<T>{});
  layers.emplace_back(Dropout<T>(spec.head_dropout));
  layers.emplace_back(Dense<T>("dense_2", spec.dense_width, spec.output_units()));
}

}  // namespace detail

/// conv(3x3, same, L2) -> batchnorm -> relu -> maxpool -> dropout per filter
/// count, then global average pooling -> dense(L2) -> relu -> dropout -> head.
template <typename T>
Model<T> build_ccnn(const ArchitectureSpec& spec, std::uint64_t seed) {
  if (spec.arch != "ccnn") throw std::invalid_argument("build_ccnn requires arch 'ccnn'");
  spec.validate();
  std::vector<Layer<T>> layers;
  std::size_t cin = spec.channels;
  for (std::size_t i = 0; i < spec.filters.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    layers.emplace_back(Conv2D<T>("conv2d_" + idx, cin, spec.filters[i], spec.l2));
    layers.emplace_back(BatchNorm<T>("batchnorm_" + idx, spec.filters[i]));
    layers.emplace_back(ReLU<T>{});
    layers.emplace_back(MaxPool2D<T>{});
    layers.emplace_back(Dropout<T>(spec.block_dropout));
    cin = spec.filters[i];
  }
  layers.emplace_back(GlobalAvgPool<T>{});
  detail::append_head(layers, spec, cin, spec.l2);
  detail::init_layers(layers, seed);
  return Model<T>(spec, std::move(layers));
}

/// conv(3x3, same) -> relu -> maxpool -> dropout per filter count, then
/// flatten -> dense -> relu -> dropout -> head. L2 applies when spec.l2 > 0.
template <typename T>
Model<T> build_cnn_baseline(const ArchitectureSpec& spec, std::uint64_t seed) {
  if (spec.arch != "cnn") throw std::invalid_argument("build_cnn_baseline requires arch 'cnn'");
  spec.validate();
  std::vector<Layer<T>> layers;
  std::size_t cin = spec.channels;
  for (std::size_t i = 0; i < spec.filters.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    layers.emplace_back(Conv2D<T>("conv2d_" + idx, cin, spec.filters[i], spec.l2));
    layers.emplace_back(ReLU<T>{});
    layers.emplace_back(MaxPool2D<T>{});
    layers.emplace_back(Dropout<T>(spec.block_dropout));
    cin = spec.filters[i];
  }
  const auto [h, w] = spec.pooled_sizes().back();
  layers.emplace_back(Flatten<T>{});
  detail::append_head(layers, spec, h * w * cin, spec.l2);
  detail::init_layers(layers, seed);
  return Model<T>(spec, std::move(layers));
}

template <typename T>
Model<T> build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
  if (spec.arch == "ccnn") return build_ccnn<T>(spec, seed);
  if (spec.arch == "cnn") return build_cnn_baseline<T>(spec, seed);
  throw std::invalid_argument("unknown architecture '" + spec.arch + "'");
}

/// Trainable element count over the parameter registry.
template <typename T>
std::size_t param_count(const Model<T>& model) {
  std::size_t n = 0;
  for (const auto* p : model.params()) n += p->value.size();
  return n;
}

/// Trainable plus non-trainable (BatchNorm running statistics) element count.
template <typename T>
std::size_t total_state_count(const Model<T>& model) {
  std::size_t n = param_count(model);
  for (const auto* t : const_cast<Model<T>&>(model).running_stats()) n += t->size();
  return n;
}

template <typename T>
std::size_t count_layers(const Model<T>& model, std::string_view kind) {
  std::size_t n = 0;
  for (const auto& l : model.layers())
    if (kind == layer_kind(l)) ++n;
  return n;
}

}  // namespace mic
