#include "nnlimits/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nnlimits::stats {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kSqrt2Pi = 2.50662827463100050242;

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }
double normal_sf(double z) { return 0.5 * std::erfc(z * kInvSqrt2); }
double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

// Antiderivative of Phi_sigma: G(x) = x Phi(x/s) + s phi(x/s), G(-inf) = 0.
double cdf_antideriv(double x, double sigma) {
  const double z = x / sigma;
  return x * normal_cdf(z) + sigma * normal_pdf(z);
}

// Right-tail companion: H(x) = integral_x^inf (1 - Phi_sigma), H(inf) = 0,
// evaluated in a cancellation-free form.
double sf_antideriv(double x, double sigma) {
  const double z = x / sigma;
  return sigma * normal_pdf(z) - x * normal_sf(z);
}

void check_samples(std::span<const double> values, double sigma2) {
  if (values.size() < 10)
    throw std::invalid_argument("need at least 10 samples");
  if (!(sigma2 > 0.0))
    throw std::invalid_argument("variance must be positive");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite sample");
}

std::vector<double> sorted_copy(std::span<const double> values) {
  std::vector<double> x(values.begin(), values.end());
  std::sort(x.begin(), x.end());
  return x;
}

struct MeanStd {
  double mean = 0.0;
  double sd = 0.0;
};

MeanStd mean_std(const Eigen::VectorXd& v) {
  MeanStd out;
  const auto n = v.size();
  out.mean = v.mean();
  if (n > 1)
    out.sd = std::sqrt((v.array() - out.mean).square().sum() / double(n - 1));
  return out;
}

}  // namespace

double kolmogorov_pvalue(double lambda) {
  if (!(lambda >= 0.0))
    throw std::invalid_argument("kolmogorov_pvalue needs lambda >= 0");
  if (lambda <= 0.2) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * double(k) * double(k) * lambda * lambda);
    sum += sign * term;
    sign = -sign;
    if (term < 1e-15 && k >= 5) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

std::pair<double, double> ks_gaussian(std::span<const double> values,
                                      double sigma2) {
  check_samples(values, sigma2);
  const auto x = sorted_copy(values);
  const double sigma = std::sqrt(sigma2);
  const double n = double(x.size());
  double stat = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = normal_cdf(x[i] / sigma);
    stat = std::max(stat, (double(i) + 1.0) / n - f);  // just after the jump
    stat = std::max(stat, f - double(i) / n);          // just before it
  }
  return {stat, kolmogorov_pvalue(std::sqrt(n) * stat)};
}

std::pair<double, double> ks_gaussian(const SampleEnsemble& ensemble,
                                      double sigma2) {
  return ks_gaussian(std::span<const double>(ensemble.values), sigma2);
}

double probit(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("probit needs p in (0, 1)");
  // Acklam's rational approximation, then Halley refinement with erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    const double e = normal_cdf(x) - p;
    const double u = e * kSqrt2Pi * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

double w1_gaussian(std::span<const double> values, double sigma2) {
  check_samples(values, sigma2);
  const auto x = sorted_copy(values);
  const double sigma = std::sqrt(sigma2);
  const std::size_t n = x.size();

  // integral over [lo, hi] of (Phi_sigma - c), valid where Phi >= c
  const auto over = [&](double lo, double hi, double c) {
    return cdf_antideriv(hi, sigma) - cdf_antideriv(lo, sigma) -
           c * (hi - lo);
  };

  double total = cdf_antideriv(x.front(), sigma)   // (-inf, x_0], F_N = 0
                 + sf_antideriv(x.back(), sigma);  // [x_{N-1}, inf), F_N = 1
  for (std::size_t i = 1; i < n; ++i) {
    const double lo = x[i - 1], hi = x[i];
    if (hi <= lo) continue;
    const double c = double(i) / double(n);
    const double cross = sigma * probit(c);
    if (cross <= lo) {
      total += over(lo, hi, c);
    } else if (cross >= hi) {
      total += -over(lo, hi, c);
    } else {
      total += -over(lo, cross, c) + over(cross, hi, c);
    }
  }
  return total;
}

double w1_gaussian(const SampleEnsemble& ensemble, double sigma2) {
  return w1_gaussian(std::span<const double>(ensemble.values), sigma2);
}

kernelflow::KernelPath empirical_kernel_from_paths(
    const std::vector<double>& grid, const Eigen::MatrixXd& q_aa,
    const Eigen::MatrixXd& q_bb, const Eigen::MatrixXd& q_ab,
    const Eigen::VectorXd& input_a, const Eigen::VectorXd& input_b) {
  const auto trials = q_aa.rows();
  const auto ticks = q_aa.cols();
  if (grid.empty() || ticks != Eigen::Index(grid.size()))
    throw std::invalid_argument("kernel rows do not match the grid");
  if (trials < 1) throw std::invalid_argument("need at least one trial");
  if (q_bb.rows() != trials || q_bb.cols() != ticks || q_ab.rows() != trials ||
      q_ab.cols() != ticks)
    throw std::invalid_argument("kernel row blocks must share one shape");

  kernelflow::KernelPath path;
  path.source = kernelflow::PathSource::kEmpirical;
  path.grid = grid;
  path.input_a = input_a;
  path.input_b = input_b;
  path.trials = int(trials);
  path.states.resize(std::size_t(ticks));
  path.q_aa_std.resize(std::size_t(ticks));
  path.q_bb_std.resize(std::size_t(ticks));
  path.q_ab_std.resize(std::size_t(ticks));
  path.corr_mean.resize(std::size_t(ticks));
  path.corr_std.resize(std::size_t(ticks));

  Eigen::VectorXd corr(trials);
  for (Eigen::Index ti = 0; ti < ticks; ++ti) {
    for (Eigen::Index k = 0; k < trials; ++k) {
      kernelflow::KernelState s{grid[std::size_t(ti)], q_aa(k, ti),
                                q_bb(k, ti), q_ab(k, ti)};
      corr[k] = s.corr();
    }
    const auto maa = mean_std(q_aa.col(ti));
    const auto mbb = mean_std(q_bb.col(ti));
    const auto mab = mean_std(q_ab.col(ti));
    const auto mc = mean_std(corr);
    path.states[std::size_t(ti)] = {grid[std::size_t(ti)], maa.mean, mbb.mean,
                                    mab.mean};
    path.q_aa_std[std::size_t(ti)] = maa.sd;
    path.q_bb_std[std::size_t(ti)] = mbb.sd;
    path.q_ab_std[std::size_t(ti)] = mab.sd;
    path.corr_mean[std::size_t(ti)] = mc.mean;
    path.corr_std[std::size_t(ti)] = mc.sd;
  }
  return path;
}

kernelflow::KernelPath empirical_kernel(
    std::span<const netsim::Trajectory> trajectories) {
  if (trajectories.empty())
    throw std::invalid_argument("need at least one trajectory");
  const auto& first = trajectories.front();
  const auto& cfg = first.config;
  const int n = cfg.width;
  const auto ticks = Eigen::Index(first.times.size());
  const auto trials = Eigen::Index(trajectories.size());

  Eigen::MatrixXd q_aa(trials, ticks), q_bb(trials, ticks), q_ab(trials, ticks);
  for (Eigen::Index k = 0; k < trials; ++k) {
    const auto& tr = trajectories[std::size_t(k)];
    if (tr.times != first.times)
      throw std::invalid_argument("trajectories must share one record grid");
    if (tr.config.kind != cfg.kind || tr.config.width != cfg.width ||
        tr.config.depth != cfg.depth || tr.config.input_dim != cfg.input_dim)
      throw std::invalid_argument("trajectories must share one config");
    for (Eigen::Index ti = 0; ti < ticks; ++ti) {
      if (tr.snapshots[std::size_t(ti)].size() != 2)
        throw std::invalid_argument("empirical_kernel needs two-input runs");
      const auto& ya = tr.at(std::size_t(ti), 0);
      const auto& yb = tr.at(std::size_t(ti), 1);
      q_aa(k, ti) = ya.squaredNorm() / double(n);
      q_bb(k, ti) = yb.squaredNorm() / double(n);
      q_ab(k, ti) = ya.dot(yb) / double(n);
    }
  }
  return empirical_kernel_from_paths(first.times, q_aa, q_bb, q_ab,
                                     Eigen::VectorXd(), Eigen::VectorXd());
}

double l2_kernel_error(const kernelflow::KernelPath& empirical,
                       const kernelflow::KernelPath& analytic) {
  if (empirical.source != kernelflow::PathSource::kEmpirical ||
      empirical.trials < 1)
    throw std::invalid_argument("first argument must be an empirical path");
  if (analytic.source == kernelflow::PathSource::kEmpirical)
    throw std::invalid_argument("second argument must be an analytic path");
  if (analytic.grid.empty()) throw std::invalid_argument("empty analytic path");
  const double lo = analytic.grid.front();
  const double hi = analytic.grid.back();
  const double nn = double(empirical.trials);

  double sup = 0.0;
  for (std::size_t i = 0; i < empirical.grid.size(); ++i) {
    double t = empirical.grid[i];
    if (t < lo || t > hi) {
      if (std::min(std::abs(t - lo), std::abs(t - hi)) > 1e-9)
        throw std::invalid_argument(
            "empirical grid leaves the analytic path's domain");
      t = std::clamp(t, lo, hi);
    }
    const double q = analytic.query(t).q_ab;
    const double m = empirical.states[i].q_ab;
    const double s = empirical.q_ab_std[i];
    const double mse = (m - q) * (m - q) + s * s * (nn - 1.0) / nn;
    sup = std::max(sup, std::sqrt(mse));
  }
  return sup;
}

std::vector<ProbeCorrelation> independence_probe(
    std::span<const netsim::Trajectory> trajectories,
    std::span<const std::pair<int, int>> pairs) {
  if (trajectories.size() < 100)
    throw std::invalid_argument("independence probe needs >= 100 trials");
  if (pairs.empty()) throw std::invalid_argument("no neuron pairs given");
  const auto& first = trajectories.front();
  const int n = first.config.width;
  const auto last = first.times.size() - 1;

  int lowest = pairs.front().first, highest = lowest;
  for (const auto& [i, j] : pairs) {
    lowest = std::min({lowest, i, j});
    highest = std::max({highest, i, j});
  }
  if (lowest < 0 || highest >= n)
    throw std::invalid_argument("neuron index out of range");
  bool two_distinct = false;
  for (const auto& [i, j] : pairs)
    two_distinct |= (i != lowest || j != lowest);
  if (!two_distinct)
    throw std::invalid_argument("need at least two distinct neuron indices");

  const auto trials = Eigen::Index(trajectories.size());
  Eigen::MatrixXd y(trials, n);
  for (Eigen::Index k = 0; k < trials; ++k) {
    const auto& tr = trajectories[std::size_t(k)];
    if (tr.times != first.times || tr.config.width != n)
      throw std::invalid_argument("trajectories must share config and grid");
    if (tr.snapshots[last].size() != 1)
      throw std::invalid_argument("independence probe needs single-input runs");
    y.row(k) = tr.at(last, 0).transpose();
  }
  const Eigen::RowVectorXd mean = y.colwise().mean();
  const Eigen::MatrixXd centered = y.rowwise() - mean;
  const Eigen::VectorXd ss = centered.colwise().squaredNorm();

  std::vector<ProbeCorrelation> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    if (ss[i] <= 0.0 || ss[j] <= 0.0)
      throw std::domain_error("zero-variance neuron marginal");
    double corr = 1.0;  // Pearson correlation of a column with itself
    if (i != j)
      corr = centered.col(i).dot(centered.col(j)) / std::sqrt(ss[i] * ss[j]);
    out.push_back({i, j, corr});
  }
  return out;
}

RateFit rate_fit(std::span<const RatePoint> points) {
  if (points.size() < 3)
    throw std::invalid_argument("rate fit needs at least 3 points");
  Eigen::VectorXd x(points.size()), y(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& p = points[k];
    if (p.n < 1 || p.depth < 1)
      throw std::invalid_argument("rate point needs n >= 1 and L >= 1");
    if (!(p.error > 0.0))
      throw std::invalid_argument("rate fit needs positive errors");
    x[Eigen::Index(k)] =
        std::log(1.0 / std::sqrt(double(p.n)) + 1.0 / std::sqrt(double(p.depth)));
    y[Eigen::Index(k)] = std::log(p.error);
  }
  const double xm = x.mean(), ym = y.mean();
  const double sxx = (x.array() - xm).square().sum();
  if (sxx <= 0.0)
    throw std::invalid_argument("rate fit needs at least two distinct (n, L)");
  const double sxy = ((x.array() - xm) * (y.array() - ym)).sum();
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = ym - fit.slope * xm;
  const double ss_tot = (y.array() - ym).square().sum();
  const double ss_res =
      (y.array() - fit.intercept - fit.slope * x.array()).square().sum();
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

Histogram2D histogram2d(std::span<const netsim::Trajectory> trajectories,
                        std::pair<int, int> pair, int bins) {
  if (bins < 2) throw std::invalid_argument("need at least 2 bins per axis");
  if (trajectories.empty())
    throw std::invalid_argument("need at least one trajectory");
  const auto& first = trajectories.front();
  const int n = first.config.width;
  if (pair.first < 0 || pair.first >= n || pair.second < 0 || pair.second >= n)
    throw std::invalid_argument("neuron index out of range");
  const auto last = first.times.size() - 1;

  const auto trials = Eigen::Index(trajectories.size());
  Eigen::VectorXd xs(trials), ys(trials);
  for (Eigen::Index k = 0; k < trials; ++k) {
    const auto& snap = trajectories[std::size_t(k)].at(last, 0);
    xs[k] = snap[pair.first];
    ys[k] = snap[pair.second];
  }

  const auto edges = [bins](double lo, double hi) {
    if (!(hi > lo)) hi = lo + 1.0;  // all samples equal: one occupied cell
    Eigen::VectorXd e(bins + 1);
    for (int k = 0; k <= bins; ++k)
      e[k] = lo + (hi - lo) * double(k) / double(bins);
    return e;
  };
  Histogram2D h;
  h.x_edges = edges(xs.minCoeff(), xs.maxCoeff());
  h.y_edges = edges(ys.minCoeff(), ys.maxCoeff());
  h.counts = Eigen::MatrixXi::Zero(bins, bins);

  const auto locate = [bins](const Eigen::VectorXd& e, double v) {
    const double lo = e[0], hi = e[bins];
    const int k = int(std::floor((v - lo) / (hi - lo) * double(bins)));
    return std::clamp(k, 0, bins - 1);  // closes the last bin on the right
  };
  for (Eigen::Index k = 0; k < trials; ++k)
    ++h.counts(locate(h.x_edges, xs[k]), locate(h.y_edges, ys[k]));
  return h;
}

}  // namespace nnlimits::stats
