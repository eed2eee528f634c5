#pragma once

// Central finite-difference checks of the analytic backward passes, in f64.

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mic/layers.hpp"
#include "mic/model.hpp"
#include "mic/optim.hpp"
#include "mic/rng.hpp"

namespace mic {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

/// max|a - n| / max(1e-8, max|a| + max|n|) over one tensor.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, amax = 0.0, nmax = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!std::isfinite(analytic[i]) || !std::isfinite(numeric[i]))
      throw std::domain_error("gradcheck encountered a non-finite gradient");
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    amax = std::max(amax, std::abs(analytic[i]));
    nmax = std::max(nmax, std::abs(numeric[i]));
  }
  return diff / std::max(1e-8, amax + nmax);
}

namespace detail {

/// Central differences of f with respect to every entry of `t`.
inline std::vector<double> numeric_grad(Tensor<double>& t, const std::function<double()>& f,
                                        double h = kGradcheckStep) {
  std::vector<double> g(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double orig = t[i];
    t[i] = orig + h;
    const double fp = f();
    t[i] = orig - h;
    const double fm = f();
    t[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::domain_error("gradcheck objective is non-finite");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace detail

/// Checks d/dx and d/dparams of sum(layer(x) * R) for a fixed random R. The
/// RNG is replayed for every evaluation, so dropout masks stay frozen.
template <typename L>
double gradcheck_layer(L& layer, Tensor<double> x, LayerMode mode, std::uint64_t seed = 7) {
  const RngStream base(seed, stream_id(StreamPurpose::Test, 1));
  auto run = [&](const Tensor<double>& in) {
    RngStream rng = base;
    return layer.forward(in, mode, rng);
  };
  RngStream proj_rng(seed, stream_id(StreamPurpose::Test, 2));
  const auto first = run(x);
  const Tensor<double> proj = rng_uniform<double>(proj_rng, -1.0, 1.0, first.output.shape());
  auto objective = [&] {
    const auto out = run(x).output;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * proj[i];
    return s;
  };

  for (auto* p : layer.params()) p->zero_grad();
  auto fwd = run(x);
  const Tensor<double> dx = layer.backward(std::move(fwd.ctx), proj);

  double worst = relative_error(dx.data(), detail::numeric_grad(x, objective));
  for (auto* p : layer.params())
    worst = std::max(worst, relative_error(p->grad.data(), detail::numeric_grad(p->value, objective)));
  return worst;
}

/// Fused softmax + sparse cross-entropy (or sigmoid + binary cross-entropy)
/// gradient with respect to the logits.
inline double gradcheck_head(bool sigmoid_head, std::size_t n, std::size_t k,
                             std::uint64_t seed = 7) {
  RngStream rng(seed, stream_id(StreamPurpose::Test, 3));
  Tensor<double> z = rng_uniform<double>(rng, -2.0, 2.0, {n, sigmoid_head ? 1 : k});
  std::vector<int> labels(n);
  for (auto& y : labels) y = int(rng.below(sigmoid_head ? 2 : k));
  auto probs = [&] { return sigmoid_head ? sigmoid(z) : softmax(z); };
  auto objective = [&] { return head_loss(sigmoid_head, probs(), labels).loss; };
  const auto analytic = head_loss(sigmoid_head, probs(), labels).dlogits;
  return relative_error(analytic.data(), detail::numeric_grad(z, objective));
}

/// Loss (data + L2) gradient of a whole model in training mode, with respect
/// to the input and every parameter. Input values must stay inside [0,1]
/// after perturbation.
inline double gradcheck_model(Model<double>& model, Tensor<double> x, const std::vector<int>& labels,
                              std::uint64_t seed = 7) {
  const RngStream base(seed, stream_id(StreamPurpose::Test, 4));
  auto objective = [&] {
    RngStream rng = base;
    const auto out = model.forward(x, LayerMode::Training, rng);
    return head_loss(model.sigmoid_head(), out.probs, labels).loss + l2_penalty(model, false);
  };
  model.zero_grad();
  RngStream rng = base;
  auto out = model.forward(x, LayerMode::Training, rng);
  const auto loss = head_loss(model.sigmoid_head(), out.probs, labels);
  const Tensor<double> dx = model.backward(std::move(out.trace), loss.dlogits);
  l2_penalty(model, true);

  // Scored as one vector: conv biases ahead of BatchNorm have an exactly zero
  // gradient, which per-tensor scoring would turn into pure rounding noise.
  std::vector<double> analytic(dx.data().begin(), dx.data().end());
  std::vector<double> numeric = detail::numeric_grad(x, objective);
  for (auto* p : model.params()) {
    analytic.insert(analytic.end(), p->grad.data().begin(), p->grad.data().end());
    const auto g = detail::numeric_grad(p->value, objective);
    numeric.insert(numeric.end(), g.begin(), g.end());
  }
  return relative_error(analytic, numeric);
}

/// Inputs kept at least `gap` away from 0 (for ReLU kinks).
inline Tensor<double> off_kink_input(RngStream& rng, Shape shape, double gap = 0.05) {
  Tensor<double> x(std::move(shape));
  for (auto& v : x.data()) {
    const double mag = rng.uniform(gap, 1.0);
    v = rng.next_double() < 0.5 ? -mag : mag;
  }
  return x;
}

/// Pairwise-distinct values (for max-pool ties): a shuffled grid plus jitter.
inline Tensor<double> distinct_input(RngStream& rng, Shape shape) {
  Tensor<double> x(std::move(shape));
  std::vector<double> vals(x.size());
  for (std::size_t i = 0; i < vals.size(); ++i)
    vals[i] = -1.0 + 2.0 * (double(i) + 0.25 + 0.5 * rng.next_double()) / double(vals.size());
  shuffle_in_place(vals, rng);
  for (std::size_t i = 0; i < vals.size(); ++i) x[i] = vals[i];
  return x;
}

/// Mini-CCNN used by the end-to-end check: 8x8x1 input, filters [2,3], dense 4.
inline ArchitectureSpec mini_ccnn_spec() {
  return {"ccnn", 8, 8, 1, 3, {2, 3}, 0.3, 0.5, 0.01, 4};
}

inline double gradcheck_mini_ccnn(std::uint64_t seed = 7) {
  Model<double> model = build_ccnn<double>(mini_ccnn_spec(), seed);
  // Non-zero biases and BN affine terms so every gradient path is exercised.
  RngStream rng(seed, stream_id(StreamPurpose::Test, 5));
  for (auto* p : model.params())
    if (p->name.ends_with("/bias") || p->name.ends_with("/beta"))
      for (auto& v : p->value.data()) v = rng.uniform(-0.1, 0.1);
    else if (p->name.ends_with("/gamma"))
      for (auto& v : p->value.data()) v = rng.uniform(0.8, 1.2);
  Tensor<double> x = rng_uniform<double>(rng, 0.1, 0.9, {4, 8, 8, 1});
  std::vector<int> labels{0, 1, 2, 1};
  return gradcheck_model(model, std::move(x), labels, seed);
}

struct GradcheckCase {
  std::string name;
  std::function<double()> run;
};

/// Every per-layer check, in a fixed order.
inline std::vector<GradcheckCase> layer_gradchecks(std::uint64_t seed = 7) {
  std::vector<GradcheckCase> cases;
  cases.push_back({"conv2d", [seed] {
                     Conv2D<double> conv("conv", 2, 3);
                     RngStream rng(seed, stream_id(StreamPurpose::Test, 10));
                     conv.init(rng);
                     for (auto& b : conv.bias().value.data()) b = rng.uniform(-0.5, 0.5);
                     return gradcheck_layer(conv, rng_uniform<double>(rng, -1, 1, {1, 6, 6, 2}),
                                            LayerMode::Training, seed);
                   }});
  cases.push_back({"batchnorm", [seed] {
                     BatchNorm<double> bn("bn", 2);
                     RngStream rng(seed, stream_id(StreamPurpose::Test, 11));
                     for (auto& g : bn.gamma().value.data()) g = rng.uniform(0.5, 1.5);
                     for (auto& b : bn.beta().value.data()) b = rng.uniform(-0.5, 0.5);
                     return gradcheck_layer(bn, rng_uniform<double>(rng, -2, 2, {4, 3, 3, 2}),
                                            LayerMode::Training, seed);
                   }});
  cases.push_back({"relu", [seed] {
                     ReLU<double> relu;
                     RngStream rng(seed, stream_id(StreamPurpose::Test, 12));
                     return gradcheck_layer(relu, off_kink_input(rng, {2, 4, 4, 3}),
                                            LayerMode::Training, seed);
                   }});
  cases.push_back({"maxpool", [seed] {
                     MaxPool2D<double> pool;
                     RngStream rng(seed, stream_id(StreamPurpose::Test, 13));
                     return gradcheck_layer(pool, distinct_input(rng, {2, 5, 4, 3}),
                                            LayerMode::Training, seed);
                   }});
  cases.push_back({"dropout", [seed] {
                     Dropout<double> drop(0.3);
                     RngStream rng(seed, stream_id(StreamPurpose::Test, 14));
                     return gradcheck_layer(drop, rng_uniform<double>(rng, -1, 1, {2, 3, 3, 2}),
                                            LayerMode::Training, seed);
                   }});
  cases.push_back({"global_avg_pool", [seed] {
                     GlobalAvgPool<double> gap;
                     RngStream rng(seed, stream_id(StreamPurpose::Test, 15));
                     return gradcheck_layer(gap, rng_uniform<double>(rng, -1, 1, {2, 3, 4, 3}),
                                            LayerMode::Training, seed);
                   }});
  cases.push_back({"flatten", [seed] {
                     Flatten<double> flat;
                     RngStream rng(seed, stream_id(StreamPurpose::Test, 16));
                     return gradcheck_layer(flat, rng_uniform<double>(rng, -1, 1, {2, 2, 3, 2}),
                                            LayerMode::Training, seed);
                   }});
  cases.push_back({"dense", [seed] {
                     Dense<double> dense("dense", 5, 3);
                     RngStream rng(seed, stream_id(StreamPurpose::Test, 17));
                     dense.init(rng);
                     for (auto& b : dense.bias().value.data()) b = rng.uniform(-0.5, 0.5);
                     return gradcheck_layer(dense, rng_uniform<double>(rng, -1, 1, {4, 5}),
                                            LayerMode::Training, seed);
                   }});
  cases.push_back({"softmax_ce", [seed] { return gradcheck_head(false, 5, 3, seed); }});
  cases.push_back({"sigmoid_bce", [seed] { return gradcheck_head(true, 6, 1, seed); }});
  return cases;
}

}  // namespace mic
