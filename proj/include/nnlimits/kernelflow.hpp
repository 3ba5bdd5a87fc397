#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

namespace nnlimits::kernelflow {

// Dual kernel of ReLU on correlations: f(z) = (z asin(z) + sqrt(1-z^2))/pi
// + z/2. Inputs may overshoot [-1, 1] by at most 1e-12 (they are clamped);
// anything farther out is a domain error.
double dual_f(double c);

struct KernelState {
  double t = 0.0;
  double q_aa = 0.0;
  double q_bb = 0.0;
  double q_ab = 0.0;

  double corr() const;
};

enum class PathSource { kAnalytic, kReduced, kEmpirical };

// Covariance path t -> (q_aa, q_bb, q_ab) on a solver or layer grid spanning
// [0, 1]. Empirical paths additionally carry across-trial dispersion.
struct KernelPath {
  std::vector<double> grid;
  std::vector<KernelState> states;
  PathSource source = PathSource::kAnalytic;
  Eigen::VectorXd input_a;
  Eigen::VectorXd input_b;

  // populated for empirical paths only
  int trials = 0;
  std::vector<double> q_aa_std;
  std::vector<double> q_bb_std;
  std::vector<double> q_ab_std;
  std::vector<double> corr_mean;
  std::vector<double> corr_std;

  // Dense output by linear interpolation between grid points.
  KernelState query(double t) const;
  double xi() const;  // ||a|| ||b|| / d
};

// Integrates the limiting covariance flow
//   dq_aa/dt = q_aa/2,  dq_bb/dt = q_bb/2,
//   dq_ab/dt = (1/2) f(c) sqrt(q_aa q_bb),  c = q_ab / sqrt(q_aa q_bb)
// from q_0(u, v) = <u, v>/d with an embedded RK4(5) pair (abs/rel tolerance
// 1e-9) whose step never exceeds dt_max.
KernelPath solve_flow(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                      double dt_max = 1e-4);

// One-dimensional reformulation for the off-diagonal entry,
//   dq/dt = (exp(t/2)/2) xi f(exp(-t/2) q / xi),  xi = ||a|| ||b|| / d,
// with the diagonal entries filled in closed form q_0 exp(t/2).
KernelPath solve_flow_reduced(const Eigen::VectorXd& a,
                              const Eigen::VectorXd& b, double dt_max = 1e-4);

std::vector<std::pair<double, double>> correlation_path(const KernelPath& path);

}  // namespace nnlimits::kernelflow
