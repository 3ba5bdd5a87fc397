#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "nnlimits/ensemble.hpp"
#include "nnlimits/kernelflow.hpp"
#include "nnlimits/netsim.hpp"

namespace nnlimits::stats {

struct StatReport {
  double ks_stat = 0.0;
  double ks_pvalue = 1.0;
  double w1 = 0.0;
  std::optional<double> l2_kernel_error;
  std::optional<double> rate_slope;
};

// Survival function of the Kolmogorov distribution, evaluated by its
// alternating series. Values of lambda below 0.2 carry less than 1e-12 of
// mass, where the function returns exactly 1.
double kolmogorov_pvalue(double lambda);

// One-sample Kolmogorov-Smirnov statistic against N(0, sigma2), with the sup
// taken at both one-sided limits of the empirical CDF at every sample point.
// Returns (stat, asymptotic p-value at sqrt(N) stat).
std::pair<double, double> ks_gaussian(std::span<const double> values,
                                      double sigma2);
std::pair<double, double> ks_gaussian(const SampleEnsemble& ensemble,
                                      double sigma2);

// Exact 1-Wasserstein distance between the empirical measure of `values` and
// N(0, sigma2), via the piecewise-closed-form integral of |F_N - Phi_sigma|.
double w1_gaussian(std::span<const double> values, double sigma2);
double w1_gaussian(const SampleEnsemble& ensemble, double sigma2);

// Inverse standard normal CDF.
double probit(double p);

// Across-trial mean and dispersion of the empirical kernels
//   q_hat(u, v) = <Y(u), Y(v)>/n
// of two-input trajectories sharing one config and record grid. Trajectories
// do not carry their inputs, so the returned path's input_a/input_b are left
// empty; callers that track inputs can use the row overload below.
kernelflow::KernelPath empirical_kernel(
    std::span<const netsim::Trajectory> trajectories);

// Same aggregation from per-trial kernel rows (trials x grid size); this is
// what the trajectory overload reduces to. Input vectors may be empty.
kernelflow::KernelPath empirical_kernel_from_paths(
    const std::vector<double>& grid, const Eigen::MatrixXd& q_aa,
    const Eigen::MatrixXd& q_bb, const Eigen::MatrixXd& q_ab,
    const Eigen::VectorXd& input_a, const Eigen::VectorXd& input_b);

// sup over the empirical grid of sqrt(E_trials (q_hat_t - q_t)^2) against the
// dense output of an analytic path.
double l2_kernel_error(const kernelflow::KernelPath& empirical,
                       const kernelflow::KernelPath& analytic);

struct ProbeCorrelation {
  int i = 0;
  int j = 0;
  double corr = 0.0;
};

// Pearson correlations, across trials, of neuron pairs read from the final
// recorded snapshot of single-input trajectories.
std::vector<ProbeCorrelation> independence_probe(
    std::span<const netsim::Trajectory> trajectories,
    std::span<const std::pair<int, int>> pairs);

struct RatePoint {
  int n = 0;
  int depth = 0;
  double error = 0.0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Least-squares fit of log(error) against log(1/sqrt(n) + 1/sqrt(L)).
RateFit rate_fit(std::span<const RatePoint> points);

struct Histogram2D {
  Eigen::MatrixXi counts;  // row = x bin, col = y bin
  Eigen::VectorXd x_edges;
  Eigen::VectorXd y_edges;
};

// Joint histogram of two neurons over the final recorded snapshots.
Histogram2D histogram2d(std::span<const netsim::Trajectory> trajectories,
                        std::pair<int, int> pair, int bins);

}  // namespace nnlimits::stats
