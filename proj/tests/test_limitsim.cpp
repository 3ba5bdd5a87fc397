#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nnlimits/limitsim.hpp"

using namespace nnlimits;

TEST_CASE("sde config validation") {
  limitsim::SdeConfig bad;
  bad.width = 0;
  bad.steps = 5;
  bad.input = Eigen::VectorXd::Ones(3);
  const std::vector<double> t1{1.0};
  auto g = rng::Xoshiro256pp(0);
  CHECK_THROWS_AS(limitsim::euler_maruyama(bad, t1, g), std::invalid_argument);
  bad.width = 4;
  bad.steps = 0;
  CHECK_THROWS_AS(limitsim::euler_maruyama(bad, t1, g), std::invalid_argument);
  bad.steps = 5;
  bad.input = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(limitsim::euler_maruyama(bad, t1, g), std::invalid_argument);
}

TEST_CASE("euler scheme coincides with the norm-driven network pass") {
  limitsim::SdeConfig cfg;
  cfg.width = 37;
  cfg.steps = 23;
  cfg.seed = 4711;
  auto gi = rng::make_stream(11, 1, 0);
  cfg.input = netsim::sample_input(30, gi);
  const std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};

  auto g1 = rng::Xoshiro256pp(cfg.seed);
  const auto em = limitsim::euler_maruyama(cfg, times, g1);

  netsim::NetworkConfig net{netsim::ArchKind::kResNet, cfg.width, cfg.steps,
                            30, cfg.seed};
  auto g2 = rng::Xoshiro256pp(cfg.seed);
  const auto nd = netsim::forward_norm_driven(net, cfg.input, times, g2);

  REQUIRE(em.snapshots.size() == nd.snapshots.size());
  for (std::size_t ti = 0; ti < times.size(); ++ti)
    CHECK(em.at(ti) == nd.at(ti));
}

TEST_CASE("nonpositive initial states are absorbing") {
  limitsim::SdeConfig cfg;
  cfg.width = 3;
  cfg.steps = 8;
  cfg.input = Eigen::VectorXd::Ones(2);
  Eigen::VectorXd x0(3);
  x0 << -1.0, 0.0, -0.25;
  const std::vector<double> times{0.0, 0.5, 1.0};
  auto g = rng::Xoshiro256pp(9);
  const auto t = limitsim::euler_maruyama_from(cfg, x0, times, g);
  for (std::size_t ti = 0; ti < times.size(); ++ti) CHECK(t.at(ti) == x0);
}

TEST_CASE("terminal variance of the discretized flow approaches exp(1/2)") {
  limitsim::SdeConfig cfg;
  cfg.width = 500;
  cfg.steps = 500;
  auto gi = rng::make_stream(21, 1, 0);
  cfg.input = netsim::sample_input(30, gi);
  const std::vector<double> times{1.0};
  const int trials = 10000;
  double s1 = 0, s2 = 0, s4 = 0;
  std::vector<double> xs(trials);
  for (int k = 0; k < trials; ++k) {
    auto g = rng::make_stream(21, 0, std::uint64_t(k));
    xs[k] = limitsim::euler_maruyama(cfg, times, g).at(0)[0];
    s1 += xs[k];
  }
  const double mean = s1 / trials;
  for (double x : xs) s2 += (x - mean) * (x - mean);
  const double var = s2 / trials;
  for (double x : xs) {
    const double c = (x - mean) * (x - mean) - var;
    s4 += c * c;
  }
  const double se_var = std::sqrt(s4 / trials / trials);
  CHECK(std::abs(var - std::exp(0.5)) < 3.0 * se_var);
  CHECK(std::abs(mean) < 3.0 * std::sqrt(var / trials));
}

TEST_CASE("limit_variance evaluates the closed form") {
  Eigen::VectorXd a(30);
  a.setConstant(1.0);  // ||a||^2 = d
  CHECK(limitsim::limit_variance(0.0, a) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(limitsim::limit_variance(1.0, a) ==
        doctest::Approx(1.6487212707001282).epsilon(1e-14));
  CHECK(limitsim::limit_variance(0.5, a) ==
        doctest::Approx(1.2840254166877414).epsilon(1e-14));
  Eigen::VectorXd b = std::sqrt(2.0) * a;  // ||b||^2 = 2d
  CHECK(limitsim::limit_variance(0.5, b) ==
        doctest::Approx(2.568050833375483).epsilon(1e-14));
  CHECK_THROWS_AS(limitsim::limit_variance(-0.1, a), std::invalid_argument);
  CHECK_THROWS_AS(limitsim::limit_variance(1.1, a), std::invalid_argument);
}

TEST_CASE("volatility squared equals the variance growth rate") {
  auto gi = rng::make_stream(22, 1, 0);
  const auto a = netsim::sample_input(30, gi);
  const limitsim::LimitLaw law(a);
  for (int k = 0; k <= 20; ++k) {
    const double t = k / 20.0;
    const double vol2 = law.volatility(t) * law.volatility(t);
    const double rate = 0.5 * law.variance(t);
    CHECK(vol2 == doctest::Approx(rate).epsilon(1e-12));
  }
  const double h = 0.3;
  CHECK(law.variance(0.4 + h) / law.variance(0.4) ==
        doctest::Approx(std::exp(0.5 * h)).epsilon(1e-12));
}

TEST_CASE("mckean-vlasov samples follow the limiting Gaussian") {
  auto gi = rng::make_stream(23, 1, 0);
  const auto a = netsim::sample_input(30, gi);
  auto g = rng::make_stream(23, 0, 0);
  const int n = 200000;

  for (double t : {0.0, 1.0}) {
    const auto ens = limitsim::mckean_vlasov_sample(t, a, n, g);
    REQUIRE(int(ens.values.size()) == n);
    CHECK(ens.meta.source == "mckean_vlasov");
    CHECK(ens.meta.t == t);
    double s1 = 0, s2 = 0, s3 = 0;
    for (double v : ens.values) {
      s1 += v;
      s2 += v * v;
      s3 += v * v * v;
    }
    const double target = limitsim::limit_variance(t, a);
    const double mean = s1 / n, var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 4.0 * std::sqrt(target / n));
    CHECK(std::abs(var - target) < 4.0 * target * std::sqrt(2.0 / n));
    const double skew = (s3 / n) / std::pow(var, 1.5);
    CHECK(std::abs(skew) < 4.0 * std::sqrt(6.0 / n));
  }
}

TEST_CASE("discretized coordinates are exchangeable") {
  limitsim::SdeConfig cfg;
  cfg.width = 50;
  cfg.steps = 50;
  auto gi = rng::make_stream(24, 1, 0);
  cfg.input = netsim::sample_input(30, gi);
  const std::vector<double> times{1.0};
  const int trials = 4000;
  double v0 = 0, vj = 0;
  for (int k = 0; k < trials; ++k) {
    auto g = rng::make_stream(24, 0, std::uint64_t(k));
    const auto x = limitsim::euler_maruyama(cfg, times, g).at(0);
    v0 += x[0] * x[0];
    vj += x[37] * x[37];
  }
  v0 /= trials;
  vj /= trials;
  // each coordinate variance carries ~sqrt(2/trials) relative noise
  CHECK(std::abs(v0 - vj) < 4.0 * std::hypot(v0, vj) * std::sqrt(2.0 / trials));
}
