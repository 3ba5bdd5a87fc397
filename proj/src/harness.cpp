#include "nnlimits/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nnlimits/kernelflow.hpp"
#include "nnlimits/limitsim.hpp"
#include "nnlimits/rng.hpp"
#include "nnlimits/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nnlimits::harness {

namespace {

// trial-stream tags (tag 1 is reserved for input sampling)
constexpr std::uint64_t kTagTrials = 0;
constexpr std::uint64_t kTagInputs = 1;
constexpr std::uint64_t kTagNormLeg = 2;
constexpr std::uint64_t kTagEulerLeg = 3;

void logline(const RunOptions& options, const std::string& line) {
  if (options.log) *options.log << line << '\n';
}

std::string point_tag(int n, int depth) {
  return std::to_string(n) + "x" + std::to_string(depth);
}

std::string key_hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", (unsigned long long)v);
  return buf;
}

std::string iso_utc_now() {
  const std::time_t tt =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool single_input_kind(ExperimentKind kind) {
  return kind == ExperimentKind::kHistogram ||
         kind == ExperimentKind::kJointHistogram ||
         kind == ExperimentKind::kLayerwiseDensity ||
         kind == ExperimentKind::kSdeCrosscheck;
}

bool wants_report(ExperimentKind kind) {
  return kind == ExperimentKind::kHistogram ||
         kind == ExperimentKind::kLayerwiseDensity;
}

netsim::ActivationSpec activation_for(const ExperimentSpec& spec, int depth) {
  return spec.arch == netsim::ArchKind::kShapedMlp
             ? netsim::ActivationSpec::shaped(depth)
             : netsim::ActivationSpec::relu();
}

// Gaussian target variance for one pre-activation coordinate: residual nets
// follow the exponential flow, critical MLPs preserve the input scale.
double theory_variance(const ExperimentSpec& spec, const Eigen::VectorXd& a,
                       double t) {
  if (spec.arch == netsim::ArchKind::kResNet)
    return limitsim::limit_variance(t, a);
  return a.squaredNorm() / double(a.size());
}

// Dynamic scheduling over trial indices with per-index result slots; the
// reduction order downstream never depends on the worker count.
template <typename Body>
void run_trials(int total, int threads, Body&& body) {
  threads = std::clamp(threads, 1, total);
  if (threads <= 1) {
    for (int k = 0; k < total; ++k) body(k);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::exception_ptr first;
  auto worker = [&] {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= total || failed.load()) return;
      try {
        body(k);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(threads));
  for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

[[noreturn]] void trial_failure(int trial, std::uint64_t key,
                                const std::exception& e) {
  throw std::runtime_error("trial " + std::to_string(trial) + " (stream key " +
                           key_hex(key) + ") failed: " + e.what());
}

struct RunContext {
  const ExperimentSpec& spec;
  const RunOptions& options;
  std::uint64_t seed = 0;
  Eigen::VectorXd a, b;
  fs::path dir;
  json artifact_digests = json::object();
  std::vector<fs::path> artifacts;
  std::vector<std::uint64_t> trial_keys;

  void write_table(const std::string& filename, const Table& table) {
    const fs::path file = dir / filename;
    emit_csv(file, table);
    artifact_digests[filename] = "fnv1a64:" + key_hex(fnv1a64_file(file));
    artifacts.push_back(file);
  }
  void write_report(const std::string& filename, const json& j) {
    const fs::path file = dir / filename;
    emit_json(file, j);
    artifact_digests[filename] = "fnv1a64:" + key_hex(fnv1a64_file(file));
    artifacts.push_back(file);
  }
  std::uint64_t note_key(std::uint64_t key) {
    trial_keys.push_back(key);
    return key;
  }
};

// One single-input trajectory; "norm" swaps in the law-exact O(nL) sampler.
netsim::Trajectory single_run(const ExperimentSpec& spec, int n, int depth,
                              const Eigen::VectorXd& a,
                              std::span<const double> times,
                              std::uint64_t key) {
  const netsim::NetworkConfig cfg{spec.arch, n, depth, int(a.size()), key};
  const auto act = activation_for(spec, depth);
  rng::Xoshiro256pp g(key);
  if (spec.method == "norm")
    return netsim::detail::forward_norm_driven_any(cfg, act, a, times, g);
  return netsim::forward<double>(cfg, act, a, times, g);
}

json stat_report(const std::vector<double>& values, double sigma2) {
  const auto [ks, pvalue] = stats::ks_gaussian(values, sigma2);
  return {{"ks_stat", ks},
          {"ks_pvalue", pvalue},
          {"w1", stats::w1_gaussian(values, sigma2)},
          {"sigma2_theory", sigma2}};
}

void run_histogram(RunContext& c,
                   const std::vector<std::pair<int, int>>& points) {
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const auto [n, depth] = points[pi];
    std::vector<double> values(std::size_t(c.spec.trials));
    const std::array<double, 1> times{c.spec.time};
    std::vector<std::uint64_t> keys(values.size());
    for (int k = 0; k < c.spec.trials; ++k)
      keys[std::size_t(k)] =
          c.note_key(detail::trial_key(c.seed, int(pi), c.spec.trials, k));
    run_trials(c.spec.trials, c.options.threads, [&](int k) {
      const std::uint64_t key = keys[std::size_t(k)];
      try {
        const auto tr = single_run(c.spec, n, depth, c.a, times, key);
        values[std::size_t(k)] = tr.at(0, 0)[c.spec.neuron];
      } catch (const std::exception& e) {
        trial_failure(k, key, e);
      }
    });
    Table table{{"trial", "value"}, {}};
    table.rows.reserve(values.size());
    for (std::size_t k = 0; k < values.size(); ++k)
      table.rows.push_back({std::int64_t(k), values[k]});
    const std::string tag = point_tag(n, depth);
    c.write_table(c.spec.name + "_" + tag + ".csv", table);
    c.write_report(c.spec.name + "_" + tag + "_report.json",
                   stat_report(values, theory_variance(c.spec, c.a,
                                                       c.spec.time)));
  }
}

void run_joint_histogram(RunContext& c,
                         const std::vector<std::pair<int, int>>& points) {
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const auto [n, depth] = points[pi];
    const auto [i, j] = c.spec.neuron_pair;
    std::vector<std::pair<double, double>> slots(std::size_t(c.spec.trials));
    const std::array<double, 1> times{c.spec.time};
    std::vector<std::uint64_t> keys(slots.size());
    for (int k = 0; k < c.spec.trials; ++k)
      keys[std::size_t(k)] =
          c.note_key(detail::trial_key(c.seed, int(pi), c.spec.trials, k));
    run_trials(c.spec.trials, c.options.threads, [&](int k) {
      const std::uint64_t key = keys[std::size_t(k)];
      try {
        const auto tr = single_run(c.spec, n, depth, c.a, times, key);
        slots[std::size_t(k)] = {tr.at(0, 0)[i], tr.at(0, 0)[j]};
      } catch (const std::exception& e) {
        trial_failure(k, key, e);
      }
    });

    Table samples{{"trial", "y_i", "y_j"}, {}};
    samples.rows.reserve(slots.size());
    std::vector<netsim::Trajectory> pairs;
    pairs.reserve(slots.size());
    for (std::size_t k = 0; k < slots.size(); ++k) {
      samples.rows.push_back({std::int64_t(k), slots[k].first,
                              slots[k].second});
      netsim::Trajectory tr;
      tr.times = {c.spec.time};
      tr.layers = {depth};
      tr.snapshots = {{Eigen::Vector2d(slots[k].first, slots[k].second)}};
      tr.config.width = 2;
      pairs.push_back(std::move(tr));
    }
    const auto hist = stats::histogram2d(pairs, {0, 1}, c.spec.bins);
    Table counts{{"x_bin", "y_bin", "count"}, {}};
    for (int bx = 0; bx < c.spec.bins; ++bx)
      for (int by = 0; by < c.spec.bins; ++by)
        counts.rows.push_back({std::int64_t(bx), std::int64_t(by),
                               std::int64_t(hist.counts(bx, by))});

    Eigen::ArrayXd vx(c.spec.trials), vy(c.spec.trials);
    for (int k = 0; k < c.spec.trials; ++k) {
      vx[k] = slots[std::size_t(k)].first;
      vy[k] = slots[std::size_t(k)].second;
    }
    const Eigen::ArrayXd dx = vx - vx.mean();
    const Eigen::ArrayXd dy = vy - vy.mean();
    const double denom = std::sqrt(dx.square().sum() * dy.square().sum());
    json report{{"bins", c.spec.bins},
                {"neuron_i", i},
                {"neuron_j", j},
                {"corr", denom > 0.0 ? (dx * dy).sum() / denom : 0.0}};
    json xe = json::array(), ye = json::array();
    for (int k = 0; k <= c.spec.bins; ++k) {
      xe.push_back(hist.x_edges[k]);
      ye.push_back(hist.y_edges[k]);
    }
    report["x_edges"] = xe;
    report["y_edges"] = ye;

    const std::string tag = point_tag(n, depth);
    c.write_table(c.spec.name + "_" + tag + ".csv", samples);
    c.write_table(c.spec.name + "_" + tag + "_counts.csv", counts);
    c.write_report(c.spec.name + "_" + tag + "_report.json", report);
  }
}

void run_layerwise(RunContext& c,
                   const std::vector<std::pair<int, int>>& points) {
  const std::vector<double>& times = c.spec.record_times;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const auto [n, depth] = points[pi];
    Eigen::MatrixXd values(c.spec.trials, Eigen::Index(times.size()));
    std::vector<std::uint64_t> keys(std::size_t(c.spec.trials));
    for (int k = 0; k < c.spec.trials; ++k)
      keys[std::size_t(k)] =
          c.note_key(detail::trial_key(c.seed, int(pi), c.spec.trials, k));
    run_trials(c.spec.trials, c.options.threads, [&](int k) {
      const std::uint64_t key = keys[std::size_t(k)];
      try {
        const auto tr = single_run(c.spec, n, depth, c.a, times, key);
        for (std::size_t ti = 0; ti < times.size(); ++ti)
          values(k, Eigen::Index(ti)) = tr.at(ti, 0)[c.spec.neuron];
      } catch (const std::exception& e) {
        trial_failure(k, key, e);
      }
    });

    Table table{{"trial", "t", "value"}, {}};
    table.rows.reserve(std::size_t(c.spec.trials) * times.size());
    for (int k = 0; k < c.spec.trials; ++k)
      for (std::size_t ti = 0; ti < times.size(); ++ti)
        table.rows.push_back(
            {std::int64_t(k), times[ti], values(k, Eigen::Index(ti))});

    json reports = json::object();
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      std::vector<double> column(std::size_t(c.spec.trials));
      for (int k = 0; k < c.spec.trials; ++k)
        column[std::size_t(k)] = values(k, Eigen::Index(ti));
      reports[format_float(times[ti])] =
          stat_report(column, theory_variance(c.spec, c.a, times[ti]));
    }
    const std::string tag = point_tag(n, depth);
    c.write_table(c.spec.name + "_" + tag + ".csv", table);
    c.write_report(c.spec.name + "_" + tag + "_report.json",
                   json{{"reports", reports}});
  }
}

struct KernelPointResult {
  kernelflow::KernelPath empirical;
  double l2_error = 0.0;
};

KernelPointResult kernel_point(RunContext& c, std::size_t pi, int n, int depth,
                               const kernelflow::KernelPath& analytic) {
  const bool thin = !c.spec.record_times.empty();
  const std::vector<double> rec =
      thin ? c.spec.record_times : detail::layer_record_times(depth);
  const std::vector<double> canon =
      thin ? c.spec.record_times : detail::layer_grid(depth);
  const auto ticks = Eigen::Index(rec.size());
  Eigen::MatrixXd qaa(c.spec.trials, ticks), qbb(c.spec.trials, ticks),
      qab(c.spec.trials, ticks);

  const netsim::NetworkConfig base{c.spec.arch, n, depth, int(c.a.size()), 0};
  const auto act = activation_for(c.spec, depth);
  const std::vector<Eigen::VectorXd> inputs{c.a, c.b};
  std::vector<std::uint64_t> keys(std::size_t(c.spec.trials));
  for (int k = 0; k < c.spec.trials; ++k)
    keys[std::size_t(k)] =
        c.note_key(detail::trial_key(c.seed, int(pi), c.spec.trials, k));
  run_trials(c.spec.trials, c.options.threads, [&](int k) {
    const std::uint64_t key = keys[std::size_t(k)];
    try {
      netsim::NetworkConfig cfg = base;
      cfg.seed = key;
      rng::Xoshiro256pp g(key);
      const auto tr = netsim::forward<double>(cfg, act, inputs, rec, g);
      for (Eigen::Index ti = 0; ti < ticks; ++ti) {
        const auto& ya = tr.at(std::size_t(ti), 0);
        const auto& yb = tr.at(std::size_t(ti), 1);
        qaa(k, ti) = ya.squaredNorm() / double(n);
        qbb(k, ti) = yb.squaredNorm() / double(n);
        qab(k, ti) = ya.dot(yb) / double(n);
      }
    } catch (const std::exception& e) {
      trial_failure(k, key, e);
    }
  });

  KernelPointResult out;
  out.empirical = stats::empirical_kernel_from_paths(canon, qaa, qbb, qab,
                                                     c.a, c.b);
  out.l2_error = stats::l2_kernel_error(out.empirical, analytic);
  return out;
}

void run_covariance_path(RunContext& c,
                         const std::vector<std::pair<int, int>>& points) {
  const auto analytic = kernelflow::solve_flow(c.a, c.b);
  Table table{{"t", "q_hat_mean", "q_hat_std", "q_analytic", "n", "L",
               "trials"},
              {}};
  json errors = json::object();
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const auto [n, depth] = points[pi];
    const auto res = kernel_point(c, pi, n, depth, analytic);
    const auto& emp = res.empirical;
    for (std::size_t ti = 0; ti < emp.grid.size(); ++ti) {
      const double t = emp.grid[ti];
      table.rows.push_back({t, emp.states[ti].q_ab, emp.q_ab_std[ti],
                            analytic.query(t).q_ab, std::int64_t(n),
                            std::int64_t(depth), std::int64_t(c.spec.trials)});
    }
    errors[point_tag(n, depth)] = res.l2_error;
  }
  c.write_table(c.spec.name + ".csv", table);
  c.write_report(c.spec.name + "_report.json", json{{"l2_error", errors}});
}

void run_convergence_sweep(RunContext& c,
                           const std::vector<std::pair<int, int>>& points) {
  const auto analytic = kernelflow::solve_flow(c.a, c.b);
  Table table{{"n", "L", "trials", "l2_error"}, {}};
  std::vector<stats::RatePoint> rate_points;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const auto [n, depth] = points[pi];
    const auto res = kernel_point(c, pi, n, depth, analytic);
    table.rows.push_back({std::int64_t(n), std::int64_t(depth),
                          std::int64_t(c.spec.trials), res.l2_error});
    rate_points.push_back({n, depth, res.l2_error});
  }
  c.write_table(c.spec.name + ".csv", table);
  json report = json::object();
  if (rate_points.size() >= 3) {
    const auto fit = stats::rate_fit(rate_points);
    report["rate_fit"] = {{"slope", fit.slope},
                          {"intercept", fit.intercept},
                          {"r2", fit.r2}};
  } else {
    logline(c.options, "convergence sweep: fewer than 3 points ran, "
                       "skipping the rate fit");
  }
  c.write_report(c.spec.name + "_report.json", report);
}

void run_sde_crosscheck(RunContext& c,
                        const std::vector<std::pair<int, int>>& points) {
  const auto [n, depth] = points.front();
  const std::array<double, 1> times{c.spec.time};
  const netsim::NetworkConfig cfg{c.spec.arch, n, depth, int(c.a.size()), 0};

  const auto ensemble = [&](std::uint64_t tag, auto&& one_trial) {
    std::vector<double> values(std::size_t(c.spec.trials));
    std::vector<std::uint64_t> keys(values.size());
    for (int k = 0; k < c.spec.trials; ++k)
      keys[std::size_t(k)] = c.note_key(rng::stream_key(c.seed, tag, k));
    run_trials(c.spec.trials, c.options.threads, [&](int k) {
      const std::uint64_t key = keys[std::size_t(k)];
      try {
        values[std::size_t(k)] = one_trial(key);
      } catch (const std::exception& e) {
        trial_failure(k, key, e);
      }
    });
    return values;
  };

  const auto weights = ensemble(kTagTrials, [&](std::uint64_t key) {
    rng::Xoshiro256pp g(key);
    const auto tr = netsim::forward<double>(
        cfg, netsim::ActivationSpec::relu(), c.a, times, g);
    return tr.at(0, 0)[c.spec.neuron];
  });
  const auto norm = ensemble(kTagNormLeg, [&](std::uint64_t key) {
    rng::Xoshiro256pp g(key);
    const auto tr = netsim::forward_norm_driven(cfg, c.a, times, g);
    return tr.at(0, 0)[c.spec.neuron];
  });
  const auto euler = ensemble(kTagEulerLeg, [&](std::uint64_t key) {
    rng::Xoshiro256pp g(key);
    const limitsim::SdeConfig sde{n, depth, c.a, key};
    const auto tr = limitsim::euler_maruyama(sde, times, g);
    return tr.at(0, 0)[c.spec.neuron];
  });

  Table table{{"source", "trials", "m1", "se1", "m2", "se2", "m3", "se3",
               "m4", "se4"},
              {}};
  const auto add_row = [&](const std::string& source,
                           const std::vector<double>& v) {
    std::vector<Cell> row{source, std::int64_t(v.size())};
    Eigen::Map<const Eigen::ArrayXd> x(v.data(), Eigen::Index(v.size()));
    Eigen::ArrayXd p = Eigen::ArrayXd::Ones(x.size());
    for (int power = 1; power <= 4; ++power) {
      p *= x;
      const double m = p.mean();
      const double var = (p - m).square().sum() / double(p.size() - 1);
      row.push_back(m);
      row.push_back(std::sqrt(var / double(p.size())));
    }
    table.rows.push_back(std::move(row));
  };
  add_row("weights", weights);
  add_row("norm", norm);
  add_row("euler", euler);
  c.write_table(c.spec.name + ".csv", table);
}

}  // namespace

const char* kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kHistogram: return "histogram";
    case ExperimentKind::kJointHistogram: return "joint_histogram";
    case ExperimentKind::kLayerwiseDensity: return "layerwise_density";
    case ExperimentKind::kCovariancePath: return "covariance_path";
    case ExperimentKind::kConvergenceSweep: return "convergence_sweep";
    case ExperimentKind::kSdeCrosscheck: return "sde_crosscheck";
  }
  return "?";
}

ExperimentKind kind_from_name(const std::string& name) {
  for (auto kind :
       {ExperimentKind::kHistogram, ExperimentKind::kJointHistogram,
        ExperimentKind::kLayerwiseDensity, ExperimentKind::kCovariancePath,
        ExperimentKind::kConvergenceSweep, ExperimentKind::kSdeCrosscheck})
    if (name == kind_name(kind)) return kind;
  throw std::invalid_argument("unknown experiment kind: " + name);
}

void validate(const ExperimentSpec& spec) {
  if (spec.name.empty()) throw std::invalid_argument("experiment needs a name");
  for (char ch : spec.name)
    if (!(std::islower(static_cast<unsigned char>(ch)) ||
          std::isdigit(static_cast<unsigned char>(ch)) || ch == '_'))
      throw std::invalid_argument(
          "experiment names use lowercase letters, digits, and underscores");
  if (spec.grid.empty()) throw std::invalid_argument("empty (n, L) grid");
  int min_width = spec.grid.front().first;
  for (const auto& [n, depth] : spec.grid) {
    if (n < 1 || depth < 1)
      throw std::invalid_argument("grid entries must be positive");
    min_width = std::min(min_width, n);
  }
  if (spec.trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (!(spec.time >= 0.0 && spec.time <= 1.0))
    throw std::invalid_argument("snapshot time must lie in [0, 1]");

  if (spec.input.mode == InputPolicy::Mode::kSample) {
    if (spec.input.dim < 1)
      throw std::invalid_argument("sampled inputs need dim >= 1");
  } else {
    if (spec.input.a.size() < 1 || spec.input.a.norm() < 1e-12)
      throw std::invalid_argument("explicit input a must be nonzero");
    if (!single_input_kind(spec.kind)) {
      if (spec.input.b.size() != spec.input.a.size() ||
          spec.input.b.norm() < 1e-12)
        throw std::invalid_argument(
            "two-input experiments need a nonzero b of matching dimension");
    }
  }

  double prev = 0.0;
  for (std::size_t i = 0; i < spec.record_times.size(); ++i) {
    const double t = spec.record_times[i];
    if (!(t >= 0.0 && t <= 1.0))
      throw std::invalid_argument("record times must lie in [0, 1]");
    if (i > 0 && t < prev)
      throw std::invalid_argument("record times must be ascending");
    prev = t;
  }

  if (spec.method != "weights" && spec.method != "norm")
    throw std::invalid_argument("method must be \"weights\" or \"norm\"");
  if (spec.method == "norm" && !single_input_kind(spec.kind))
    throw std::invalid_argument(
        "the norm method applies to single-input experiments only");

  if (spec.neuron < 0 || spec.neuron >= min_width)
    throw std::invalid_argument("neuron index outside the narrowest width");
  switch (spec.kind) {
    case ExperimentKind::kHistogram:
    case ExperimentKind::kLayerwiseDensity:
      if (spec.arch == netsim::ArchKind::kShapedMlp)
        throw std::invalid_argument(
            "density reports need a Gaussian target variance, which shaped "
            "networks do not have; use histogram-free kinds");
      if (spec.trials < 10)
        throw std::invalid_argument("density reports need >= 10 trials");
      break;
    case ExperimentKind::kJointHistogram: {
      const auto [i, j] = spec.neuron_pair;
      if (i < 0 || j < 0 || i >= min_width || j >= min_width)
        throw std::invalid_argument("neuron pair outside the narrowest width");
      if (spec.bins < 2) throw std::invalid_argument("need >= 2 bins");
      break;
    }
    case ExperimentKind::kSdeCrosscheck:
      if (spec.arch != netsim::ArchKind::kResNet)
        throw std::invalid_argument(
            "the SDE crosscheck is defined for residual networks");
      if (spec.grid.size() != 1)
        throw std::invalid_argument(
            "the SDE crosscheck runs at a single (n, L)");
      if (spec.trials < 2)
        throw std::invalid_argument("moment errors need >= 2 trials");
      break;
    case ExperimentKind::kCovariancePath:
    case ExperimentKind::kConvergenceSweep:
      break;
  }
  if (spec.kind == ExperimentKind::kLayerwiseDensity &&
      spec.record_times.empty())
    throw std::invalid_argument("layerwise experiments need record times");
}

namespace {

netsim::ArchKind arch_from_name(const std::string& name) {
  for (auto kind : {netsim::ArchKind::kMlp, netsim::ArchKind::kResNet,
                    netsim::ArchKind::kShapedMlp})
    if (name == netsim::arch_name(kind)) return kind;
  throw std::invalid_argument("unknown architecture: " + name);
}

Eigen::VectorXd vector_from_json(const json& arr) {
  if (!arr.is_array() || arr.empty())
    throw std::invalid_argument("input vectors are nonempty arrays");
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i)
    v[Eigen::Index(i)] = arr[i].get<double>();
  return v;
}

}  // namespace

ExperimentSpec parse_spec(const json& j) {
  static const std::vector<std::string> known{
      "name",   "kind",        "arch",   "grid",        "trials",
      "input",  "record_times", "time",  "neuron",      "neuron_pair",
      "bins",   "method",      "master_seed", "out_dir"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("unknown spec field: " + key);

  ExperimentSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.kind = kind_from_name(j.at("kind").get<std::string>());
  if (j.contains("arch"))
    spec.arch = arch_from_name(j.at("arch").get<std::string>());
  for (const auto& entry : j.at("grid")) {
    if (!entry.is_array() || entry.size() != 2)
      throw std::invalid_argument("grid entries are [n, L] pairs");
    spec.grid.emplace_back(entry[0].get<int>(), entry[1].get<int>());
  }
  spec.trials = j.at("trials").get<int>();
  spec.master_seed = j.at("master_seed").get<std::uint64_t>();

  const json& in = j.at("input");
  const std::string mode = in.at("mode").get<std::string>();
  if (mode == "sample") {
    spec.input.mode = InputPolicy::Mode::kSample;
    spec.input.dim = in.at("dim").get<int>();
  } else if (mode == "explicit") {
    spec.input.mode = InputPolicy::Mode::kExplicit;
    spec.input.a = vector_from_json(in.at("a"));
    if (in.contains("b")) spec.input.b = vector_from_json(in.at("b"));
  } else {
    throw std::invalid_argument("input mode must be \"sample\" or "
                                "\"explicit\"");
  }

  if (j.contains("record_times"))
    spec.record_times = j.at("record_times").get<std::vector<double>>();
  if (j.contains("time")) spec.time = j.at("time").get<double>();
  if (j.contains("neuron")) spec.neuron = j.at("neuron").get<int>();
  if (j.contains("neuron_pair")) {
    const auto& p = j.at("neuron_pair");
    if (!p.is_array() || p.size() != 2)
      throw std::invalid_argument("neuron_pair is an [i, j] pair");
    spec.neuron_pair = {p[0].get<int>(), p[1].get<int>()};
  }
  if (j.contains("bins")) spec.bins = j.at("bins").get<int>();
  if (j.contains("method")) spec.method = j.at("method").get<std::string>();
  if (j.contains("out_dir")) spec.out_dir = j.at("out_dir").get<std::string>();
  validate(spec);
  return spec;
}

ExperimentSpec load_spec(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open spec file " + file.string());
  json j;
  in >> j;
  return parse_spec(j);
}

json spec_to_json(const ExperimentSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["kind"] = kind_name(spec.kind);
  j["arch"] = netsim::arch_name(spec.arch);
  json grid = json::array();
  for (const auto& [n, depth] : spec.grid)
    grid.push_back(json::array({n, depth}));
  j["grid"] = grid;
  j["trials"] = spec.trials;
  if (spec.input.mode == InputPolicy::Mode::kSample) {
    j["input"] = {{"mode", "sample"}, {"dim", spec.input.dim}};
  } else {
    json a = json::array(), b = json::array();
    for (Eigen::Index i = 0; i < spec.input.a.size(); ++i)
      a.push_back(spec.input.a[i]);
    j["input"] = {{"mode", "explicit"}, {"a", a}};
    if (spec.input.b.size() > 0) {
      for (Eigen::Index i = 0; i < spec.input.b.size(); ++i)
        b.push_back(spec.input.b[i]);
      j["input"]["b"] = b;
    }
  }
  if (!spec.record_times.empty()) j["record_times"] = spec.record_times;
  j["time"] = spec.time;
  j["neuron"] = spec.neuron;
  j["neuron_pair"] = json::array({spec.neuron_pair.first,
                                  spec.neuron_pair.second});
  j["bins"] = spec.bins;
  j["method"] = spec.method;
  j["master_seed"] = spec.master_seed;
  if (!spec.out_dir.empty()) j["out_dir"] = spec.out_dir;
  return j;
}

std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit_csv(const fs::path& file, const Table& table) {
  if (table.header.empty() || table.rows.empty())
    throw std::invalid_argument("refusing to write an empty table");
  for (const auto& row : table.rows)
    if (row.size() != table.header.size())
      throw std::invalid_argument("ragged table row");

  std::string out;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out += ',';
    out += table.header[i];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      std::visit(
          [&out](const auto& cell) {
            using T = std::decay_t<decltype(cell)>;
            if constexpr (std::is_same_v<T, std::int64_t>)
              out += std::to_string(cell);
            else if constexpr (std::is_same_v<T, double>)
              out += format_float(cell);
            else
              out += cell;
          },
          row[i]);
    }
    out += '\n';
  }
  std::ofstream stream(file, std::ios::binary | std::ios::trunc);
  if (!stream) throw std::runtime_error("cannot open " + file.string());
  stream.write(out.data(), std::streamsize(out.size()));
  if (!stream) throw std::runtime_error("short write to " + file.string());
}

void emit_json(const fs::path& file, const json& j) {
  std::ofstream stream(file, std::ios::binary | std::ios::trunc);
  if (!stream) throw std::runtime_error("cannot open " + file.string());
  const std::string out = j.dump(2) + "\n";
  stream.write(out.data(), std::streamsize(out.size()));
  if (!stream) throw std::runtime_error("short write to " + file.string());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  return fnv1a64(bytes);
}

namespace detail {

std::uint64_t trial_key(std::uint64_t master_seed, int point_index, int trials,
                        int trial) {
  const std::uint64_t index =
      std::uint64_t(point_index) * std::uint64_t(trials) + std::uint64_t(trial);
  return rng::stream_key(master_seed, kTagTrials, index);
}

std::vector<double> layer_record_times(int depth) {
  std::vector<double> times;
  times.reserve(std::size_t(depth) + 1);
  times.push_back(0.0);
  // (l + 1/2)/L floors to layer l even when l/L * L rounds below l
  for (int l = 1; l < depth; ++l)
    times.push_back((double(l) + 0.5) / double(depth));
  times.push_back(1.0);
  return times;
}

std::vector<double> layer_grid(int depth) {
  std::vector<double> grid;
  grid.reserve(std::size_t(depth) + 1);
  for (int l = 0; l <= depth; ++l)
    grid.push_back(double(l) / double(depth));
  return grid;
}

}  // namespace detail

ResultBundle run(const ExperimentSpec& spec, const RunOptions& options) {
  validate(spec);
  const auto start = std::chrono::steady_clock::now();
  const std::string started_at = iso_utc_now();

  RunContext ctx{spec, options};
  ctx.seed = options.seed_override.value_or(spec.master_seed);

  if (spec.input.mode == InputPolicy::Mode::kSample) {
    auto g = rng::make_stream(ctx.seed, kTagInputs, 0);
    ctx.a = netsim::sample_input(spec.input.dim, g);
    if (!single_input_kind(spec.kind))
      ctx.b = netsim::sample_input(spec.input.dim, g);
  } else {
    ctx.a = spec.input.a;
    ctx.b = spec.input.b;
  }

  std::string base = options.out_dir;
  if (base.empty()) base = spec.out_dir;
  if (base.empty())
    if (const char* env = std::getenv("NNLIMITS_OUT_DIR")) base = env;
  if (base.empty()) base = "out";
  ctx.dir = fs::path(base) / spec.name;
  fs::create_directories(ctx.dir);

  std::vector<std::pair<int, int>> kept;
  json skipped = json::array();
  for (const auto& [n, depth] : spec.grid) {
    if (!options.heavy && std::max(n, depth) > kHeavyCap) {
      skipped.push_back(json::array({n, depth}));
      logline(options, "skipping (" + std::to_string(n) + ", " +
                           std::to_string(depth) +
                           "): beyond the default scale cap " +
                           std::to_string(kHeavyCap) + "; pass --heavy");
      continue;
    }
    kept.emplace_back(n, depth);
  }
  if (kept.empty())
    throw std::invalid_argument(
        "every grid point exceeds the default scale cap; pass --heavy");

  switch (spec.kind) {
    case ExperimentKind::kHistogram: run_histogram(ctx, kept); break;
    case ExperimentKind::kJointHistogram: run_joint_histogram(ctx, kept); break;
    case ExperimentKind::kLayerwiseDensity: run_layerwise(ctx, kept); break;
    case ExperimentKind::kCovariancePath: run_covariance_path(ctx, kept); break;
    case ExperimentKind::kConvergenceSweep:
      run_convergence_sweep(ctx, kept);
      break;
    case ExperimentKind::kSdeCrosscheck: run_sde_crosscheck(ctx, kept); break;
  }

  std::string key_bytes;
  key_bytes.reserve(ctx.trial_keys.size() * 8);
  for (std::uint64_t key : ctx.trial_keys)
    for (int byte = 0; byte < 8; ++byte)
      key_bytes.push_back(char((key >> (8 * byte)) & 0xff));

  ExperimentSpec echoed = spec;
  echoed.master_seed = ctx.seed;
  json grid_effective = json::array();
  for (const auto& [n, depth] : kept)
    grid_effective.push_back(json::array({n, depth}));

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  json manifest{{"artifacts", ctx.artifact_digests},
                {"grid_effective", grid_effective},
                {"grid_skipped", skipped},
                {"heavy", options.heavy},
                {"master_seed", ctx.seed},
                {"per_trial_seeds_digest",
                 "fnv1a64:" + key_hex(fnv1a64(key_bytes))},
                {"spec", spec_to_json(echoed)},
                {"started_at", started_at},
                {"version", std::string(kVersion)},
                {"wall_seconds", wall}};

  ResultBundle bundle;
  bundle.dir = ctx.dir;
  bundle.manifest_path = ctx.dir / "manifest.json";
  bundle.manifest = manifest;
  bundle.artifacts = std::move(ctx.artifacts);
  emit_json(bundle.manifest_path, manifest);
  return bundle;
}

VerifyReport verify(const fs::path& manifest_path, const RunOptions& options) {
  VerifyReport report;
  std::ifstream in(manifest_path);
  if (!in) {
    report.message = "cannot open manifest " + manifest_path.string();
    return report;
  }
  json manifest;
  in >> manifest;

  ExperimentSpec spec = parse_spec(manifest.at("spec"));
  RunOptions rerun = options;
  rerun.heavy = manifest.at("heavy").get<bool>();
  rerun.seed_override = manifest.at("master_seed").get<std::uint64_t>();
  const auto nonce =
      std::chrono::steady_clock::now().time_since_epoch().count();
  const fs::path scratch =
      fs::temp_directory_path() /
      ("nnlimits-verify-" + spec.name + "-" + std::to_string(nonce));
  rerun.out_dir = scratch.string();

  bool all_ok = true;
  try {
    const ResultBundle bundle = run(spec, rerun);
    const json& want = manifest.at("artifacts");
    const json& got = bundle.manifest.at("artifacts");
    for (const auto& [file, digest] : want.items()) {
      const bool ok = got.contains(file) && got.at(file) == digest;
      report.artifacts.emplace_back(file, ok);
      all_ok = all_ok && ok;
    }
    for (const auto& [file, digest] : got.items())
      if (!want.contains(file)) {
        report.artifacts.emplace_back(file + " (unexpected)", false);
        all_ok = false;
      }
    report.message = all_ok ? "all artifacts reproduced bit-identically"
                            : "artifact digests diverged";
  } catch (const std::exception& e) {
    all_ok = false;
    report.message = std::string("re-run failed: ") + e.what();
  }
  std::error_code ec;
  fs::remove_all(scratch, ec);
  report.ok = all_ok;
  return report;
}

std::vector<fs::path> discover_specs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace nnlimits::harness
