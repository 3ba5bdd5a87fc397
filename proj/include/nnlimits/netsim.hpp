#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nnlimits/rng.hpp"

namespace nnlimits::netsim {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class ArchKind { kMlp, kResNet, kShapedMlp };

inline const char* arch_name(ArchKind k) {
  switch (k) {
    case ArchKind::kMlp: return "mlp";
    case ArchKind::kResNet: return "resnet";
    case ArchKind::kShapedMlp: return "shaped_mlp";
  }
  return "?";
}

// Width-n, depth-L network acting on inputs from R^d. `seed` identifies the
// weight stream; two configs with equal seeds draw identical weights.
struct NetworkConfig {
  ArchKind kind = ArchKind::kResNet;
  int width = 1;
  int depth = 1;
  int input_dim = 1;
  std::uint64_t seed = 0;
};

inline void validate(const NetworkConfig& cfg) {
  if (cfg.width < 1) throw std::invalid_argument("network width must be >= 1");
  if (cfg.depth < 1) throw std::invalid_argument("network depth must be >= 1");
  if (cfg.input_dim < 1)
    throw std::invalid_argument("network input_dim must be >= 1");
}

struct ActivationSpec {
  enum class Base { kRelu, kShapedRelu };
  Base base = Base::kRelu;
  int shaping_depth = 0;

  static ActivationSpec relu() { return {}; }
  static ActivationSpec shaped(int depth) {
    if (depth < 1)
      throw std::invalid_argument("shaping depth must be >= 1");
    return {Base::kShapedRelu, depth};
  }
};

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& z) {
  return z.cwiseMax(typename Derived::Scalar(0));
}

// z + relu(z)/sqrt(depth): interpolates between the identity and ReLU.
template <typename Derived>
auto shaped_relu(const Eigen::MatrixBase<Derived>& z, int depth) {
  using Scalar = typename Derived::Scalar;
  const Scalar c = Scalar(1) / std::sqrt(Scalar(depth));
  return z + c * z.cwiseMax(Scalar(0));
}

inline void check_activation(const NetworkConfig& cfg,
                             const ActivationSpec& act) {
  const bool shaped_kind = cfg.kind == ArchKind::kShapedMlp;
  const bool shaped_act = act.base == ActivationSpec::Base::kShapedRelu;
  if (shaped_kind != shaped_act)
    throw std::invalid_argument(
        "shaped_mlp networks require the shaped activation and vice versa");
  if (shaped_act && act.shaping_depth < 1)
    throw std::invalid_argument("shaping depth must be >= 1");
}

// Snapshots of the pre-activation field: for each recorded time t, the layer
// floor(t*L) state of every tracked input.
struct Trajectory {
  std::vector<double> times;
  std::vector<int> layers;
  std::vector<std::vector<Eigen::VectorXd>> snapshots;
  NetworkConfig config;

  const Eigen::VectorXd& at(std::size_t time_idx, std::size_t input_idx = 0)
      const {
    return snapshots.at(time_idx).at(input_idx);
  }
};

namespace detail {

inline std::vector<int> resolve_record_layers(std::span<const double> times,
                                              int depth) {
  if (times.empty())
    throw std::invalid_argument("record_times must not be empty");
  std::vector<int> layers;
  layers.reserve(times.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (!(t >= 0.0 && t <= 1.0))
      throw std::invalid_argument("record_times must lie in [0, 1]");
    if (i > 0 && t < prev)
      throw std::invalid_argument("record_times must be ascending");
    prev = t;
    layers.push_back(static_cast<int>(std::floor(t * depth)));
  }
  return layers;
}

// Inner product accumulated in double regardless of storage precision.
template <typename Scalar, typename Col>
double dot_acc(const VectorX<Scalar>& w, int count, const Col& col) {
  if constexpr (std::is_same_v<Scalar, double>) {
    return w.head(count).dot(col);
  } else {
    double acc = 0.0;
    for (int j = 0; j < count; ++j)
      acc += static_cast<double>(w[j]) * static_cast<double>(col[j]);
    return acc;
  }
}

template <typename Scalar>
double norm_acc(const typename MatrixX<Scalar>::ColXpr& col) {
  return std::sqrt(col.template cast<double>().squaredNorm());
}

template <typename Scalar>
MatrixX<Scalar> to_storage(std::span<const Eigen::VectorXd> inputs, int d) {
  MatrixX<Scalar> a(d, static_cast<int>(inputs.size()));
  for (std::size_t c = 0; c < inputs.size(); ++c) {
    if (inputs[c].size() != d)
      throw std::invalid_argument("input dimension mismatch");
    a.col(c) = inputs[c].template cast<Scalar>();
  }
  return a;
}

template <typename Scalar>
void apply_post(const NetworkConfig& cfg, const ActivationSpec& act,
                const MatrixX<Scalar>& y, MatrixX<Scalar>& post) {
  if (act.base == ActivationSpec::Base::kShapedRelu)
    post = shaped_relu(y, act.shaping_depth);
  else
    post = relu(y);
}

// Shared entry layer: Y_0 = W_in a with W_in ~ N(0, 1/d), streamed by rows.
template <typename Scalar>
void entry_layer(const MatrixX<Scalar>& a, MatrixX<Scalar>& y,
                 VectorX<Scalar>& wrow, rng::Xoshiro256pp& g) {
  const int d = static_cast<int>(a.rows());
  const int n = static_cast<int>(y.rows());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < n; ++i) {
    rng::fill_gaussian(wrow.data(), static_cast<std::size_t>(d), g);
    for (int c = 0; c < a.cols(); ++c)
      y(i, c) = static_cast<Scalar>(scale * dot_acc<Scalar>(wrow, d, a.col(c)));
  }
}

// Core recursion with weights generated row by row and discarded. Observer is
// called as obs(layer, Y) for layer = 0..L in order; it must copy what it
// needs.
template <typename Scalar, typename Observer>
void forward_streamed(const NetworkConfig& cfg, const ActivationSpec& act,
                      std::span<const Eigen::VectorXd> inputs,
                      rng::Xoshiro256pp& g, Observer&& obs) {
  validate(cfg);
  check_activation(cfg, act);
  if (inputs.empty() || inputs.size() > 2)
    throw std::invalid_argument("forward tracks one or two inputs");
  const int n = cfg.width;
  const int k = static_cast<int>(inputs.size());
  const MatrixX<Scalar> a = to_storage<Scalar>(inputs, cfg.input_dim);

  MatrixX<Scalar> y(n, k), ynext(n, k), post(n, k);
  VectorX<Scalar> wrow(std::max(n, cfg.input_dim));
  entry_layer(a, y, wrow, g);
  obs(0, static_cast<const MatrixX<Scalar>&>(y));

  const bool residual = cfg.kind == ArchKind::kResNet;
  const double wscale = residual ? 1.0 / std::sqrt(static_cast<double>(n))
                                 : std::sqrt(2.0 / static_cast<double>(n));
  const double step = residual
                          ? 1.0 / std::sqrt(static_cast<double>(cfg.depth))
                          : 1.0;
  const double coef = wscale * step;

  for (int l = 1; l <= cfg.depth; ++l) {
    apply_post(cfg, act, y, post);
    for (int i = 0; i < n; ++i) {
      rng::fill_gaussian(wrow.data(), static_cast<std::size_t>(n), g);
      for (int c = 0; c < k; ++c) {
        const double z = coef * dot_acc<Scalar>(wrow, n, post.col(c));
        ynext(i, c) = residual ? y(i, c) + static_cast<Scalar>(z)
                               : static_cast<Scalar>(z);
      }
    }
    y.swap(ynext);
    obs(l, static_cast<const MatrixX<Scalar>&>(y));
  }
}

template <typename Scalar>
Trajectory collect(const NetworkConfig& cfg, std::span<const double> times,
                   const std::vector<int>& layers, int input_count,
                   auto&& runner) {
  Trajectory out;
  out.times.assign(times.begin(), times.end());
  out.layers = layers;
  out.snapshots.resize(times.size());
  out.config = cfg;
  runner([&](int layer, const MatrixX<Scalar>& y) {
    for (std::size_t ti = 0; ti < layers.size(); ++ti) {
      if (layers[ti] != layer) continue;
      auto& slot = out.snapshots[ti];
      slot.reserve(input_count);
      for (int c = 0; c < y.cols(); ++c)
        slot.push_back(y.col(c).template cast<double>());
    }
  });
  return out;
}

// Norm-driven recursion: the fresh-weight layer map applied to a single input
// is, conditionally on the current state, an isotropic Gaussian with scale
// ||post||/sqrt(n), so one n-vector of noise per layer reproduces the law of
// the full trajectory.
template <typename Scalar, typename Observer>
void norm_driven_streamed(const NetworkConfig& cfg, const ActivationSpec& act,
                          const Eigen::VectorXd& input, rng::Xoshiro256pp& g,
                          Observer&& obs) {
  validate(cfg);
  check_activation(cfg, act);
  const int n = cfg.width;
  const std::array<Eigen::VectorXd, 1> one{input};
  const MatrixX<Scalar> a = to_storage<Scalar>(std::span(one), cfg.input_dim);

  MatrixX<Scalar> y(n, 1);
  VectorX<Scalar> wrow(std::max(n, cfg.input_dim));
  entry_layer(a, y, wrow, g);
  obs(0, static_cast<const MatrixX<Scalar>&>(y));

  const bool residual = cfg.kind == ArchKind::kResNet;
  const double wvar = residual ? 1.0 : 2.0;
  const double step = residual
                          ? 1.0 / std::sqrt(static_cast<double>(cfg.depth))
                          : 1.0;
  MatrixX<Scalar> post(n, 1);
  for (int l = 1; l <= cfg.depth; ++l) {
    apply_post(cfg, act, y, post);
    const double nrm = std::sqrt(wvar / static_cast<double>(n)) *
                       norm_acc<Scalar>(post.col(0));
    const double coef = step * nrm;
    rng::fill_gaussian(wrow.data(), static_cast<std::size_t>(n), g);
    if (residual) {
      y.col(0) += static_cast<Scalar>(coef) * wrow.head(n);
    } else {
      y.col(0) = static_cast<Scalar>(coef) * wrow.head(n);
    }
    obs(l, static_cast<const MatrixX<Scalar>&>(y));
  }
}

// Law-exact fast path for any architecture; the public forward_norm_driven
// restricts itself to residual networks.
inline Trajectory forward_norm_driven_any(const NetworkConfig& cfg,
                                          const ActivationSpec& act,
                                          const Eigen::VectorXd& input,
                                          std::span<const double> record_times,
                                          rng::Xoshiro256pp& g) {
  const auto layers = resolve_record_layers(record_times, cfg.depth);
  return collect<double>(cfg, record_times, layers, 1, [&](auto&& obs) {
    norm_driven_streamed<double>(cfg, act, input, g, obs);
  });
}

}  // namespace detail

// Nonnegative input of squared norm d, drawn uniformly in direction from the
// positive orthant.
inline Eigen::VectorXd normalize_input(const Eigen::VectorXd& u) {
  const double nrm = u.norm();
  if (nrm < 1e-12)
    throw std::invalid_argument("input direction is numerically zero");
  return std::sqrt(static_cast<double>(u.size())) * u / nrm;
}

inline Eigen::VectorXd sample_input(int d, rng::Xoshiro256pp& g) {
  if (d < 1) throw std::invalid_argument("input dimension must be >= 1");
  Eigen::VectorXd u(d);
  for (;;) {
    for (int i = 0; i < d; ++i) u[i] = g.uniform01();
    if (u.norm() >= 1e-12) break;
  }
  return normalize_input(u);
}

template <typename Scalar = double>
Trajectory forward(const NetworkConfig& cfg, const ActivationSpec& act,
                   std::span<const Eigen::VectorXd> inputs,
                   std::span<const double> record_times,
                   rng::Xoshiro256pp& g) {
  validate(cfg);
  const auto layers = detail::resolve_record_layers(record_times, cfg.depth);
  return detail::collect<Scalar>(
      cfg, record_times, layers, static_cast<int>(inputs.size()),
      [&](auto&& obs) {
        detail::forward_streamed<Scalar>(cfg, act, inputs, g, obs);
      });
}

template <typename Scalar = double>
Trajectory forward(const NetworkConfig& cfg, const ActivationSpec& act,
                   const Eigen::VectorXd& input,
                   std::span<const double> record_times,
                   rng::Xoshiro256pp& g) {
  const std::array<Eigen::VectorXd, 1> one{input};
  return forward<Scalar>(cfg, act, std::span(one), record_times, g);
}

// Deterministic weight injection for tests. `input` is n x d; layer weights
// are n x n, one per layer, applied with the same scaling as drawn weights
// would be (i.e. they are the raw Gaussian entries before variance scaling).
struct InjectedWeights {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> layers;
};

inline Trajectory forward_with_weights(const NetworkConfig& cfg,
                                       const ActivationSpec& act,
                                       std::span<const Eigen::VectorXd> inputs,
                                       std::span<const double> record_times,
                                       const InjectedWeights& w) {
  validate(cfg);
  check_activation(cfg, act);
  if (inputs.empty() || inputs.size() > 2)
    throw std::invalid_argument("forward tracks one or two inputs");
  if (w.input.rows() != cfg.width || w.input.cols() != cfg.input_dim)
    throw std::invalid_argument("injected input weights have the wrong shape");
  if (static_cast<int>(w.layers.size()) != cfg.depth)
    throw std::invalid_argument("expected one injected matrix per layer");
  for (const auto& m : w.layers)
    if (m.rows() != cfg.width || m.cols() != cfg.width)
      throw std::invalid_argument("injected layer weights must be n x n");

  const auto layers = detail::resolve_record_layers(record_times, cfg.depth);
  const auto a = detail::to_storage<double>(inputs, cfg.input_dim);
  const bool residual = cfg.kind == ArchKind::kResNet;
  const double wscale = residual ? 1.0 / std::sqrt(double(cfg.width))
                                 : std::sqrt(2.0 / double(cfg.width));
  const double coef =
      wscale * (residual ? 1.0 / std::sqrt(double(cfg.depth)) : 1.0);

  return detail::collect<double>(
      cfg, record_times, layers, static_cast<int>(inputs.size()),
      [&](auto&& obs) {
        Eigen::MatrixXd y = (w.input * a) / std::sqrt(double(cfg.input_dim));
        Eigen::MatrixXd post;
        obs(0, y);
        for (int l = 1; l <= cfg.depth; ++l) {
          detail::apply_post<double>(cfg, act, y, post);
          if (residual)
            y += coef * (w.layers[std::size_t(l - 1)] * post);
          else
            y = coef * (w.layers[std::size_t(l - 1)] * post);
          obs(l, y);
        }
      });
}

// Single-input residual forward pass driven by the post-activation norm; the
// trajectory law coincides with forward() at O(n) memory and O(nL) work.
inline Trajectory forward_norm_driven(const NetworkConfig& cfg,
                                      const Eigen::VectorXd& input,
                                      std::span<const double> record_times,
                                      rng::Xoshiro256pp& g) {
  if (cfg.kind != ArchKind::kResNet)
    throw std::invalid_argument(
        "forward_norm_driven supports residual networks only");
  return detail::forward_norm_driven_any(cfg, ActivationSpec::relu(), input,
                                         record_times, g);
}

// Variant with injected initial state and noise columns (n x L), for exact
// single-step checks.
inline Trajectory forward_norm_driven_from(const NetworkConfig& cfg,
                                           const Eigen::VectorXd& y0,
                                           std::span<const double> record_times,
                                           const Eigen::MatrixXd& noise) {
  if (cfg.kind != ArchKind::kResNet)
    throw std::invalid_argument(
        "forward_norm_driven supports residual networks only");
  validate(cfg);
  if (y0.size() != cfg.width)
    throw std::invalid_argument("initial state must have length n");
  if (noise.rows() != cfg.width || noise.cols() != cfg.depth)
    throw std::invalid_argument("noise must be n x L");
  const auto layers = detail::resolve_record_layers(record_times, cfg.depth);
  return detail::collect<double>(cfg, record_times, layers, 1, [&](auto&& obs) {
    Eigen::MatrixXd y = y0;
    obs(0, y);
    const double invs = 1.0 / std::sqrt(double(cfg.depth) * double(cfg.width));
    for (int l = 1; l <= cfg.depth; ++l) {
      const double nrm = y.col(0).cwiseMax(0.0).norm();
      y.col(0) += invs * nrm * noise.col(l - 1);
      obs(l, y);
    }
  });
}

}  // namespace nnlimits::netsim
