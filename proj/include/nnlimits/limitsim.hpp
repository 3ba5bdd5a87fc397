#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "nnlimits/ensemble.hpp"
#include "nnlimits/netsim.hpp"
#include "nnlimits/rng.hpp"

namespace nnlimits::limitsim {

// Discretization of dX_t = (||relu(X_t)||/sqrt(n)) dB_t started from the
// random entry layer X_0 = W_in a.
struct SdeConfig {
  int width = 1;
  int steps = 1;
  Eigen::VectorXd input;
  std::uint64_t seed = 0;
};

inline void validate(const SdeConfig& cfg) {
  if (cfg.width < 1) throw std::invalid_argument("sde width must be >= 1");
  if (cfg.steps < 1) throw std::invalid_argument("sde steps must be >= 1");
  if (cfg.input.size() < 1 || cfg.input.norm() < 1e-12)
    throw std::invalid_argument("sde input must be a nonzero vector");
}

inline netsim::NetworkConfig as_network(const SdeConfig& cfg) {
  return {netsim::ArchKind::kResNet, cfg.width, cfg.steps,
          static_cast<int>(cfg.input.size()), cfg.seed};
}

// Euler scheme X_{k+1} = X_k + (||relu(X_k)||/sqrt(n)) sqrt(delta) xi_k with
// delta = 1/steps. This is the residual norm-driven recursion with depth =
// steps, so the two share one code path and agree bit for bit.
inline netsim::Trajectory euler_maruyama(const SdeConfig& cfg,
                                         std::span<const double> record_times,
                                         rng::Xoshiro256pp& g) {
  validate(cfg);
  return netsim::detail::forward_norm_driven_any(
      as_network(cfg), netsim::ActivationSpec::relu(), cfg.input, record_times,
      g);
}

// Variant with an injected initial state (the entry layer is skipped).
inline netsim::Trajectory euler_maruyama_from(
    const SdeConfig& cfg, const Eigen::VectorXd& x0,
    std::span<const double> record_times, rng::Xoshiro256pp& g) {
  validate(cfg);
  if (x0.size() != cfg.width)
    throw std::invalid_argument("initial state must have length n");
  Eigen::MatrixXd noise(cfg.width, cfg.steps);
  for (int c = 0; c < cfg.steps; ++c)
    rng::fill_gaussian(noise.col(c).data(), std::size_t(cfg.width), g);
  return netsim::forward_norm_driven_from(as_network(cfg), x0, record_times,
                                          noise);
}

// Variance of the limiting Gaussian field at layer fraction t.
inline double limit_variance(double t, const Eigen::VectorXd& input) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("layer fraction must lie in [0, 1]");
  if (input.size() < 1) throw std::invalid_argument("empty input vector");
  const double q0 = input.squaredNorm() / static_cast<double>(input.size());
  return q0 * std::exp(0.5 * t);
}

// The limiting one-neuron law: a centered Gaussian whose variance grows as
// exp(t/2), equivalently volatility sqrt(q0/2) exp(t/4).
struct LimitLaw {
  double q0 = 1.0;

  explicit LimitLaw(const Eigen::VectorXd& input)
      : q0(input.squaredNorm() / static_cast<double>(input.size())) {
    if (input.size() < 1) throw std::invalid_argument("empty input vector");
  }

  double variance(double t) const { return q0 * std::exp(0.5 * t); }
  double volatility(double t) const {
    return std::sqrt(0.5 * q0) * std::exp(0.25 * t);
  }
};

// Exact sampler of the limiting law at layer fraction t.
inline stats::SampleEnsemble mckean_vlasov_sample(double t,
                                                  const Eigen::VectorXd& input,
                                                  int count,
                                                  rng::Xoshiro256pp& g) {
  if (count < 1) throw std::invalid_argument("sample count must be >= 1");
  const double sigma = std::sqrt(limit_variance(t, input));
  stats::SampleEnsemble out;
  out.values.resize(static_cast<std::size_t>(count));
  for (auto& v : out.values) v = sigma * rng::gaussian(g);
  out.meta.source = "mckean_vlasov";
  out.meta.t = t;
  return out;
}

}  // namespace nnlimits::limitsim
