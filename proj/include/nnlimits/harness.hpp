#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nnlimits/netsim.hpp"

namespace nnlimits::harness {

inline constexpr std::string_view kVersion = "nnlimits 0.1.0";

// Grid points with max(n, L) above this cap are skipped unless the run is
// invoked with heavy=true.
inline constexpr int kHeavyCap = 800;

enum class ExperimentKind {
  kHistogram,         // one neuron at one time, N values + normality report
  kJointHistogram,    // two neurons at one time, samples + 2-D counts
  kLayerwiseDensity,  // one neuron across several times
  kCovariancePath,    // two-input kernel path vs the analytic flow
  kConvergenceSweep,  // kernel sup-error across a grid of (n, L)
  kSdeCrosscheck,     // terminal moments: weights vs norm-driven vs Euler
};

const char* kind_name(ExperimentKind kind);
ExperimentKind kind_from_name(const std::string& name);

struct InputPolicy {
  enum class Mode { kSample, kExplicit };
  Mode mode = Mode::kSample;
  int dim = 0;             // sample mode
  Eigen::VectorXd a, b;    // explicit mode; b only for two-input kinds
};

struct ExperimentSpec {
  std::string name;
  ExperimentKind kind = ExperimentKind::kHistogram;
  netsim::ArchKind arch = netsim::ArchKind::kResNet;
  std::vector<std::pair<int, int>> grid;  // (n, L)
  int trials = 1;
  InputPolicy input;
  std::vector<double> record_times;  // layerwise grid; covariance thinning
  double time = 1.0;                 // histogram/joint/crosscheck snapshot
  int neuron = 0;
  std::pair<int, int> neuron_pair{0, 1};
  int bins = 50;
  std::string method = "weights";  // "weights" or "norm" (single-input kinds)
  std::uint64_t master_seed = 0;
  std::string out_dir;  // optional; flags and environment may override
};

void validate(const ExperimentSpec& spec);
ExperimentSpec parse_spec(const nlohmann::json& j);
ExperimentSpec load_spec(const std::filesystem::path& file);
nlohmann::json spec_to_json(const ExperimentSpec& spec);

struct RunOptions {
  int threads = 1;
  std::string out_dir;  // overrides spec.out_dir and the environment
  bool heavy = false;
  std::optional<std::uint64_t> seed_override;
  std::ostream* log = nullptr;  // skip warnings etc.; silent when null
};

struct ResultBundle {
  std::filesystem::path dir;
  std::filesystem::path manifest_path;
  nlohmann::json manifest;
  std::vector<std::filesystem::path> artifacts;
};

// Runs the experiment, writes one artifact set plus manifest.json under
// <out>/<name>/, and returns the manifest. Per-trial failures are reported
// with the offending trial's stream key.
ResultBundle run(const ExperimentSpec& spec, const RunOptions& options = {});

// Re-runs the experiment recorded in a manifest into a scratch directory and
// compares artifact digests.
struct VerifyReport {
  bool ok = false;
  std::vector<std::pair<std::string, bool>> artifacts;
  std::string message;
};
VerifyReport verify(const std::filesystem::path& manifest_path,
                    const RunOptions& options = {});

std::vector<std::filesystem::path> discover_specs(
    const std::filesystem::path& dir);

// --- tabular emission ---

using Cell = std::variant<std::int64_t, double, std::string>;

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;
};

// 17 significant digits: decimal round-trips reproduce the double bit for bit.
std::string format_float(double v);

// Refuses empty tables before touching the filesystem.
void emit_csv(const std::filesystem::path& file, const Table& table);
void emit_json(const std::filesystem::path& file, const nlohmann::json& j);

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64_file(const std::filesystem::path& file);

namespace detail {

// Stream key of one Monte Carlo trial: grid points get disjoint index blocks.
std::uint64_t trial_key(std::uint64_t master_seed, int point_index, int trials,
                        int trial);

// Record times that are safe against floor(t*L) landing one layer short; the
// canonical grid value for layer l stays l/L.
std::vector<double> layer_record_times(int depth);
std::vector<double> layer_grid(int depth);

}  // namespace detail

}  // namespace nnlimits::harness
