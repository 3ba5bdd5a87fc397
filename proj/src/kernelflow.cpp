#include "nnlimits/kernelflow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nnlimits::kernelflow {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAbsTol = 1e-9;
constexpr double kRelTol = 1e-9;
constexpr double kMinStep = 1e-12;

// Fehlberg 4(5) tableau.
constexpr double kA21 = 1.0 / 4;
constexpr double kA31 = 3.0 / 32, kA32 = 9.0 / 32;
constexpr double kA41 = 1932.0 / 2197, kA42 = -7200.0 / 2197,
                 kA43 = 7296.0 / 2197;
constexpr double kA51 = 439.0 / 216, kA52 = -8.0, kA53 = 3680.0 / 513,
                 kA54 = -845.0 / 4104;
constexpr double kA61 = -8.0 / 27, kA62 = 2.0, kA63 = -3544.0 / 2565,
                 kA64 = 1859.0 / 4104, kA65 = -11.0 / 40;
constexpr double kC2 = 1.0 / 4, kC3 = 3.0 / 8, kC4 = 12.0 / 13, kC5 = 1.0,
                 kC6 = 1.0 / 2;
constexpr double kB51 = 16.0 / 135, kB53 = 6656.0 / 12825,
                 kB54 = 28561.0 / 56430, kB55 = -9.0 / 50, kB56 = 2.0 / 55;
constexpr double kE1 = 1.0 / 360, kE3 = -128.0 / 4275, kE4 = -2197.0 / 75240,
                 kE5 = 1.0 / 50, kE6 = 2.0 / 55;

// Embedded RK4(5) over [0, 1] with step cap dt_max; calls emit(t, y) at t = 0
// and after every accepted step (the final one landing exactly on t = 1).
template <int N, typename Rhs, typename Emit>
void rkf45(Eigen::Matrix<double, N, 1> y, double dt_max, Rhs&& f,
           Emit&& emit) {
  using Vec = Eigen::Matrix<double, N, 1>;
  double t = 0.0;
  double h_prop = dt_max;
  emit(t, y);
  while (t < 1.0) {
    const double h = std::min(h_prop, 1.0 - t);
    const Vec k1 = f(t, y);
    const Vec k2 = f(t + kC2 * h, (y + h * kA21 * k1).eval());
    const Vec k3 = f(t + kC3 * h, (y + h * (kA31 * k1 + kA32 * k2)).eval());
    const Vec k4 =
        f(t + kC4 * h, (y + h * (kA41 * k1 + kA42 * k2 + kA43 * k3)).eval());
    const Vec k5 = f(t + kC5 * h,
                     (y + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4))
                         .eval());
    const Vec k6 =
        f(t + kC6 * h, (y + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 +
                                 kA64 * k4 + kA65 * k5))
                           .eval());
    const Vec y5 =
        y + h * (kB51 * k1 + kB53 * k3 + kB54 * k4 + kB55 * k5 + kB56 * k6);
    const Vec err =
        h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6);

    double scale = 0.0;
    for (int i = 0; i < N; ++i) {
      const double tol =
          kAbsTol + kRelTol * std::max(std::abs(y[i]), std::abs(y5[i]));
      scale = std::max(scale, std::abs(err[i]) / tol);
    }
    if (scale <= 1.0) {
      t = std::min(t + h, 1.0);
      y = y5;
      emit(t, y);
    }
    const double grow =
        scale > 0.0 ? 0.9 * std::pow(scale, -0.2) : 5.0;
    h_prop = std::min(h_prop * std::clamp(grow, 0.2, 5.0), dt_max);
    if (h_prop < kMinStep)
      throw std::runtime_error("covariance flow step size underflow");
  }
}

void check_inputs(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                  double dt_max) {
  if (a.size() != b.size() || a.size() == 0)
    throw std::invalid_argument("inputs must share a positive dimension");
  if (a.norm() < 1e-12 || b.norm() < 1e-12)
    throw std::invalid_argument("inputs must be nonzero");
  if (!(dt_max > 0.0 && dt_max <= 1e-3))
    throw std::invalid_argument("dt_max must lie in (0, 1e-3]");
}

}  // namespace

double dual_f(double c) {
  if (std::abs(c) > 1.0 + 1e-12)
    throw std::domain_error("correlation outside [-1, 1]");
  c = std::clamp(c, -1.0, 1.0);
  const double val =
      (c * std::asin(c) + std::sqrt(1.0 - c * c)) / kPi + 0.5 * c;
  return std::clamp(val, 0.0, 1.0);
}

double KernelState::corr() const {
  const double denom = std::sqrt(q_aa * q_bb);
  if (denom <= 0.0)
    throw std::domain_error("correlation undefined for degenerate state");
  return std::clamp(q_ab / denom, -1.0, 1.0);
}

KernelState KernelPath::query(double t) const {
  if (grid.empty()) throw std::logic_error("empty kernel path");
  if (!(t >= grid.front() && t <= grid.back()))
    throw std::invalid_argument("query time outside the path grid");
  const auto it = std::upper_bound(grid.begin(), grid.end(), t);
  if (it == grid.begin()) return states.front();
  if (it == grid.end()) return states.back();
  const std::size_t j = std::size_t(it - grid.begin());
  const double t0 = grid[j - 1], t1 = grid[j];
  const double w = t1 > t0 ? (t - t0) / (t1 - t0) : 0.0;
  const KernelState& s0 = states[j - 1];
  const KernelState& s1 = states[j];
  KernelState out;
  out.t = t;
  out.q_aa = s0.q_aa + w * (s1.q_aa - s0.q_aa);
  out.q_bb = s0.q_bb + w * (s1.q_bb - s0.q_bb);
  out.q_ab = s0.q_ab + w * (s1.q_ab - s0.q_ab);
  return out;
}

double KernelPath::xi() const {
  return input_a.norm() * input_b.norm() / double(input_a.size());
}

KernelPath solve_flow(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                      double dt_max) {
  check_inputs(a, b, dt_max);
  const double d = double(a.size());
  KernelPath path;
  path.source = PathSource::kAnalytic;
  path.input_a = a;
  path.input_b = b;

  Eigen::Vector3d y;  // (q_aa, q_bb, q_ab)
  y << a.squaredNorm() / d, b.squaredNorm() / d, a.dot(b) / d;
  rkf45<3>(
      y, dt_max,
      [](double, const Eigen::Vector3d& s) {
        const double cross = std::sqrt(s[0] * s[1]);
        Eigen::Vector3d dy;
        dy[0] = 0.5 * s[0];
        dy[1] = 0.5 * s[1];
        dy[2] = 0.5 * dual_f(s[2] / cross) * cross;
        return dy;
      },
      [&](double t, const Eigen::Vector3d& s) {
        path.grid.push_back(t);
        path.states.push_back({t, s[0], s[1], s[2]});
      });
  return path;
}

KernelPath solve_flow_reduced(const Eigen::VectorXd& a,
                              const Eigen::VectorXd& b, double dt_max) {
  check_inputs(a, b, dt_max);
  const double d = double(a.size());
  const double xi = a.norm() * b.norm() / d;
  const double qaa0 = a.squaredNorm() / d;
  const double qbb0 = b.squaredNorm() / d;

  KernelPath path;
  path.source = PathSource::kReduced;
  path.input_a = a;
  path.input_b = b;

  Eigen::Matrix<double, 1, 1> y;
  y[0] = a.dot(b) / d;
  rkf45<1>(
      y, dt_max,
      [xi](double t, const Eigen::Matrix<double, 1, 1>& s) {
        Eigen::Matrix<double, 1, 1> dy;
        dy[0] = 0.5 * std::exp(0.5 * t) * xi *
                dual_f(std::exp(-0.5 * t) * s[0] / xi);
        return dy;
      },
      [&](double t, const Eigen::Matrix<double, 1, 1>& s) {
        const double growth = std::exp(0.5 * t);
        path.grid.push_back(t);
        path.states.push_back({t, qaa0 * growth, qbb0 * growth, s[0]});
      });
  return path;
}

std::vector<std::pair<double, double>> correlation_path(
    const KernelPath& path) {
  std::vector<std::pair<double, double>> out;
  out.reserve(path.grid.size());
  if (!path.corr_mean.empty()) {
    for (std::size_t i = 0; i < path.grid.size(); ++i)
      out.emplace_back(path.grid[i], path.corr_mean[i]);
    return out;
  }
  for (const auto& s : path.states) out.emplace_back(s.t, s.corr());
  return out;
}

}  // namespace nnlimits::kernelflow
