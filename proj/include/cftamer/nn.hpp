#pragma once

// Small dense feed-forward networks with analytic gradients, an Adam
// optimizer and a differentiable cosine similarity. Everything is double
// precision.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cftamer/rng.hpp"

namespace cftamer {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class Activation { relu, linear };

struct Layer {
  Matrix weights;  // out x in
  Vector biases;   // out
  Activation activation = Activation::linear;

  Eigen::Index in_size() const { return weights.cols(); }
  Eigen::Index out_size() const { return weights.rows(); }
};

struct Network {
  std::vector<Layer> layers;
  // Bumped on every parameter mutation; caches remember the value they saw.
  std::uint64_t generation = 0;

  Eigen::Index input_size() const { return layers.empty() ? 0 : layers.front().in_size(); }
  Eigen::Index output_size() const { return layers.empty() ? 0 : layers.back().out_size(); }

  void validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.biases.size() != l.out_size())
        throw ShapeError("layer " + std::to_string(k) + ": bias length != output size");
      if (k > 0 && l.in_size() != layers[k - 1].out_size())
        throw ShapeError("layer " + std::to_string(k) + ": input size does not chain");
      if (!l.weights.allFinite() || !l.biases.allFinite())
        throw NonFiniteError("layer " + std::to_string(k) + ": non-finite parameter");
    }
  }

  friend bool operator==(const Network& a, const Network& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
      const auto& x = a.layers[k];
      const auto& y = b.layers[k];
      if (x.activation != y.activation || x.weights.rows() != y.weights.rows() ||
          x.weights.cols() != y.weights.cols() || x.weights != y.weights || x.biases != y.biases)
        return false;
    }
    return true;
  }
};

// Uniform Glorot init, zero biases.
inline Layer make_layer(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng) {
  Layer l;
  l.activation = act;
  l.weights.resize(out, in);
  l.biases = Vector::Zero(out);
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  for (Eigen::Index r = 0; r < out; ++r)
    for (Eigen::Index c = 0; c < in; ++c) l.weights(r, c) = rng.uniform(-bound, bound);
  return l;
}

// Builds an MLP: `sizes` = {in, h1, ..., out}; hidden layers use relu, the
// last layer uses `output_activation`.
inline Network make_network(const std::vector<Eigen::Index>& sizes, Activation output_activation,
                            Rng& rng) {
  if (sizes.size() < 2) throw ShapeError("make_network: need at least input and output size");
  Network net;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const bool last = k + 2 == sizes.size();
    net.layers.push_back(
        make_layer(sizes[k], sizes[k + 1], last ? output_activation : Activation::relu, rng));
  }
  return net;
}

struct ForwardCache {
  std::vector<Vector> inputs;       // input of layer k
  std::vector<Vector> activations;  // post-activation of layer k
  std::uint64_t generation = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;

  const Vector& output() const { return activations.back(); }
};

struct Forward {
  Vector output;
  ForwardCache cache;
};

inline void check_input(const Network& net, const Vector& input) {
  if (net.layers.empty()) throw ShapeError("forward: empty network");
  if (input.size() != net.input_size())
    throw ShapeError("forward: input length " + std::to_string(input.size()) +
                     " != network input size " + std::to_string(net.input_size()));
}

inline ForwardCache forward_cache(const Network& net, const Vector& input) {
  check_input(net, input);
  ForwardCache cache;
  cache.generation = net.generation;
  cache.inputs.reserve(net.layers.size());
  cache.activations.reserve(net.layers.size());
  const Vector* x = &input;
  for (const auto& l : net.layers) {
    cache.inputs.push_back(*x);
    Vector z = l.weights * *x + l.biases;
    if (l.activation == Activation::relu) z = z.cwiseMax(0.0);
    cache.activations.push_back(std::move(z));
    cache.shapes.emplace_back(l.out_size(), l.in_size());
    x = &cache.activations.back();
  }
  return cache;
}

inline Forward forward(const Network& net, const Vector& input) {
  ForwardCache cache = forward_cache(net, input);
  Vector out = cache.output();
  return {std::move(out), std::move(cache)};
}

// Output only, no cache.
inline Vector evaluate(const Network& net, const Vector& input) {
  check_input(net, input);
  Vector x = input;
  for (const auto& l : net.layers) {
    Vector z = l.weights * x + l.biases;
    if (l.activation == Activation::relu) z = z.cwiseMax(0.0);
    x = std::move(z);
  }
  return x;
}

struct LayerGradient {
  Matrix weights;
  Vector biases;
};

struct Gradients {
  std::vector<LayerGradient> layers;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    g.layers.reserve(net.layers.size());
    for (const auto& l : net.layers)
      g.layers.push_back({Matrix::Zero(l.out_size(), l.in_size()), Vector::Zero(l.out_size())});
    return g;
  }

  void set_zero() {
    for (auto& l : layers) {
      l.weights.setZero();
      l.biases.setZero();
    }
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weights.allFinite() || !l.biases.allFinite()) return false;
    return true;
  }

  bool is_zero() const {
    for (const auto& l : layers)
      if (!l.weights.isZero(0.0) || !l.biases.isZero(0.0)) return false;
    return true;
  }

  Gradients& operator+=(const Gradients& o) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      layers[k].weights += o.layers[k].weights;
      layers[k].biases += o.layers[k].biases;
    }
    return *this;
  }

  Gradients& operator*=(double s) {
    for (auto& l : layers) {
      l.weights *= s;
      l.biases *= s;
    }
    return *this;
  }

  bool congruent_with(const Network& net) const {
    if (layers.size() != net.layers.size()) return false;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = net.layers[k];
      if (layers[k].weights.rows() != l.out_size() || layers[k].weights.cols() != l.in_size() ||
          layers[k].biases.size() != l.out_size())
        return false;
    }
    return true;
  }
};

inline void check_cache(const Network& net, const ForwardCache& cache) {
  if (cache.generation != net.generation || cache.shapes.size() != net.layers.size())
    throw std::invalid_argument("backward: cache is stale or from a different network");
  for (std::size_t k = 0; k < net.layers.size(); ++k)
    if (cache.shapes[k] != std::make_pair(net.layers[k].out_size(), net.layers[k].in_size()))
      throw std::invalid_argument("backward: cache shape does not match network");
}

// Backpropagates through layers [first, last) given the gradient at the output
// of layer last-1, accumulating parameter gradients into `acc`. Returns the
// gradient with respect to the input of layer `first`.
inline Vector backprop_layers(const Network& net, const ForwardCache& cache, Vector grad,
                              std::size_t first, std::size_t last, Gradients& acc) {
  check_cache(net, cache);
  if (first > last || last > net.layers.size())
    throw std::out_of_range("backprop_layers: bad layer range");
  if (static_cast<Eigen::Index>(grad.size()) !=
      (last == 0 ? net.input_size() : net.layers[last - 1].out_size()))
    throw ShapeError("backprop_layers: gradient length mismatch");
  for (std::size_t k = last; k-- > first;) {
    const auto& l = net.layers[k];
    if (l.activation == Activation::relu)
      grad = grad.cwiseProduct((cache.activations[k].array() > 0.0).cast<double>().matrix());
    acc.layers[k].weights.noalias() += grad * cache.inputs[k].transpose();
    acc.layers[k].biases += grad;
    grad = l.weights.transpose() * grad;
  }
  return grad;
}

inline Vector accumulate_backward(const Network& net, const ForwardCache& cache,
                                  const Vector& output_grad, Gradients& acc) {
  return backprop_layers(net, cache, output_grad, 0, net.layers.size(), acc);
}

struct Backward {
  Vector input_grad;
  Gradients grads;
};

inline Backward backward(const Network& net, const ForwardCache& cache, const Vector& output_grad) {
  Backward b{Vector(), Gradients::zeros_like(net)};
  b.input_grad = accumulate_backward(net, cache, output_grad, b.grads);
  return b;
}

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Gradients first_moment;
  Gradients second_moment;
  std::int64_t step = 0;

  static AdamState for_network(const Network& net, AdamConfig cfg = {}) {
    return {cfg, Gradients::zeros_like(net), Gradients::zeros_like(net), 0};
  }
};

// One bias-corrected Adam step. An all-zero gradient decays the moments and
// advances the counter but leaves the parameters untouched.
inline void adam_update(Network& net, const Gradients& grads, AdamState& state) {
  if (!grads.congruent_with(net) || !state.first_moment.congruent_with(net) ||
      !state.second_moment.congruent_with(net))
    throw ShapeError("adam_update: gradient/optimizer shapes do not match network");
  if (!grads.all_finite()) throw NonFiniteError("adam_update: non-finite gradient");

  const auto& c = state.config;
  state.step += 1;
  const bool frozen = grads.is_zero();
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    if (frozen) return;
    param.array() -= c.step_size * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  };
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    auto& l = net.layers[k];
    update(l.weights, grads.layers[k].weights, state.first_moment.layers[k].weights,
           state.second_moment.layers[k].weights);
    update(l.biases, grads.layers[k].biases, state.first_moment.layers[k].biases,
           state.second_moment.layers[k].biases);
  }
  if (!frozen) net.generation += 1;
}

inline constexpr double kNormFloor = 1e-8;

struct Cosine {
  double value;
  Vector du;
  Vector dv;
};

// cos(u, v) with exact partials; nullopt when either norm is at or below the
// floor (degenerate embedding).
inline std::optional<Cosine> cosine_similarity(const Vector& u, const Vector& v,
                                               double norm_floor = kNormFloor) {
  if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu <= norm_floor || nv <= norm_floor) return std::nullopt;
  const double dot = u.dot(v);
  const double raw = dot / (nu * nv);
  Cosine c;
  c.value = std::clamp(raw, -1.0, 1.0);
  c.du = v / (nu * nv) - raw * u / (nu * nu);
  c.dv = u / (nu * nv) - raw * v / (nv * nv);
  return c;
}

}  // namespace cftamer
