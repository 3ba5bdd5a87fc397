#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "nnlimits/harness.hpp"
#include "nnlimits/netsim.hpp"
#include "nnlimits/rng.hpp"
#include "nnlimits/stats.hpp"

namespace fs = std::filesystem;
using namespace nnlimits;
using nlohmann::json;

namespace {

fs::path scratch_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "nnl_harness_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

json base_histogram_json() {
  return json{{"name", "unit_hist"},
              {"kind", "histogram"},
              {"arch", "resnet"},
              {"grid", json::array({json::array({30, 20})})},
              {"trials", 64},
              {"input", {{"mode", "sample"}, {"dim", 6}}},
              {"time", 1.0},
              {"method", "norm"},
              {"master_seed", 424242}};
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& file) {
  std::ifstream in(file);
  REQUIRE(bool(in));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::size_t pos = 0;
    for (;;) {
      const auto comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

bool same_bits(double x, double y) {
  return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
}

}  // namespace

TEST_CASE("spec json round trips through parse and echo") {
  const auto spec = harness::parse_spec(base_histogram_json());
  CHECK(spec.kind == harness::ExperimentKind::kHistogram);
  CHECK(spec.arch == netsim::ArchKind::kResNet);
  CHECK(spec.grid.size() == 1);
  CHECK(spec.trials == 64);
  CHECK(spec.method == "norm");

  const auto again = harness::parse_spec(harness::spec_to_json(spec));
  CHECK(again.name == spec.name);
  CHECK(again.kind == spec.kind);
  CHECK(again.grid == spec.grid);
  CHECK(again.master_seed == spec.master_seed);
  CHECK(again.method == spec.method);
  CHECK(again.input.dim == spec.input.dim);
}

TEST_CASE("spec validation rejects malformed experiments") {
  auto j = base_histogram_json();
  j["typo_field"] = 1;
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["kind"] = "scatterplot";
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["method"] = "fast";
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["arch"] = "shaped_mlp";  // no Gaussian variance target for the report
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["neuron"] = 30;
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["grid"] = json::array({json::array({0, 20})});
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["kind"] = "covariance_path";  // norm method is single-input only
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["kind"] = "sde_crosscheck";
  j["method"] = "weights";
  j["grid"] = json::array({json::array({10, 5}), json::array({20, 5})});
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["kind"] = "layerwise_density";
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);

  j = base_histogram_json();
  j["input"] = {{"mode", "explicit"}, {"a", json::array({0.0, 0.0})}};
  CHECK_THROWS_AS(harness::parse_spec(j), std::invalid_argument);
}

TEST_CASE("float formatting round trips doubles bit for bit") {
  std::vector<double> values{0.0,    -0.0,   0.1,       1.0 / 3.0,
                             1e-300, 1e300,  M_PI,      std::exp(0.5),
                             -2.5,   1e17,   123456.75, 5e-324};
  auto g = rng::make_stream(77, 0, 0);
  for (int k = 0; k < 20000; ++k) {
    const double mag = std::ldexp(1.0, int(g.next() % 600) - 300);
    values.push_back(rng::gaussian(g) * mag);
  }
  for (double v : values) {
    const std::string s = harness::format_float(v);
    const double back = std::strtod(s.c_str(), nullptr);
    CHECK(same_bits(back, v));
  }
}

TEST_CASE("fnv1a64 matches the reference vectors") {
  CHECK(harness::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(harness::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(harness::fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("csv emission refuses empty or ragged tables") {
  const fs::path dir = scratch_root() / "csv";
  fs::create_directories(dir);

  harness::Table empty{{"a", "b"}, {}};
  CHECK_THROWS_AS(harness::emit_csv(dir / "empty.csv", empty),
                  std::invalid_argument);
  CHECK_FALSE(fs::exists(dir / "empty.csv"));

  harness::Table ragged{{"a", "b"}, {{std::int64_t(1)}}};
  CHECK_THROWS_AS(harness::emit_csv(dir / "ragged.csv", ragged),
                  std::invalid_argument);
  CHECK_FALSE(fs::exists(dir / "ragged.csv"));

  harness::Table table{{"trial", "value", "tag"},
                       {{std::int64_t(0), 0.1, std::string("x")},
                        {std::int64_t(1), std::exp(0.5), std::string("y")}}};
  harness::emit_csv(dir / "ok.csv", table);
  const auto rows = read_csv(dir / "ok.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"trial", "value", "tag"});
  CHECK(same_bits(std::strtod(rows[1][1].c_str(), nullptr), 0.1));
  CHECK(same_bits(std::strtod(rows[2][1].c_str(), nullptr), std::exp(0.5)));
}

TEST_CASE("json emission sorts keys and round trips numbers") {
  const fs::path file = scratch_root() / "sorted.json";
  json j;
  j["zeta"] = 1;
  j["alpha"] = 0.1;
  j["mid"] = std::exp(0.5);
  harness::emit_json(file, j);
  const std::string text = slurp(file);
  CHECK(text.find("alpha") < text.find("mid"));
  CHECK(text.find("mid") < text.find("zeta"));
  const json back = json::parse(text);
  CHECK(same_bits(back.at("alpha").get<double>(), 0.1));
  CHECK(same_bits(back.at("mid").get<double>(), std::exp(0.5)));
}

TEST_CASE("layer record times land on every layer exactly") {
  for (int depth : {1, 2, 3, 5, 7, 13, 100, 333}) {
    const auto times = harness::detail::layer_record_times(depth);
    const auto grid = harness::detail::layer_grid(depth);
    REQUIRE(times.size() == std::size_t(depth) + 1);
    REQUIRE(grid.size() == std::size_t(depth) + 1);
    for (int l = 0; l <= depth; ++l) {
      CHECK(int(std::floor(times[std::size_t(l)] * depth)) == l);
      CHECK(grid[std::size_t(l)] == double(l) / double(depth));
    }
  }
}

TEST_CASE("runs are byte-identical across worker counts") {
  auto spec = harness::parse_spec(base_histogram_json());

  harness::RunOptions serial;
  serial.threads = 1;
  serial.out_dir = (scratch_root() / "serial").string();
  const auto a = harness::run(spec, serial);

  harness::RunOptions parallel;
  parallel.threads = 4;
  parallel.out_dir = (scratch_root() / "parallel").string();
  const auto b = harness::run(spec, parallel);

  REQUIRE(a.artifacts.size() == b.artifacts.size());
  for (std::size_t i = 0; i < a.artifacts.size(); ++i)
    CHECK(slurp(a.artifacts[i]) == slurp(b.artifacts[i]));
  CHECK(a.manifest.at("artifacts") == b.manifest.at("artifacts"));
  CHECK(a.manifest.at("per_trial_seeds_digest") ==
        b.manifest.at("per_trial_seeds_digest"));
}

TEST_CASE("histogram rows are pure functions of their trial keys") {
  auto j = base_histogram_json();
  j["name"] = "unit_isolation";
  j["input"] = {{"mode", "explicit"},
                {"a", json::array({1.0, -2.0, 0.5, 3.0, -1.0, 0.25})}};
  j["trials"] = 12;
  const auto spec = harness::parse_spec(j);

  harness::RunOptions opts;
  opts.out_dir = (scratch_root() / "isolation").string();
  const auto bundle = harness::run(spec, opts);

  const auto rows = read_csv(bundle.dir / "unit_isolation_30x20.csv");
  REQUIRE(rows.size() == std::size_t(spec.trials) + 1);

  const netsim::NetworkConfig cfg{netsim::ArchKind::kResNet, 30, 20, 6, 0};
  const std::vector<double> times{1.0};
  for (int k = 0; k < spec.trials; ++k) {
    const auto key =
        harness::detail::trial_key(spec.master_seed, 0, spec.trials, k);
    rng::Xoshiro256pp g(key);
    const auto tr = netsim::forward_norm_driven(cfg, spec.input.a, times, g);
    const double from_csv =
        std::strtod(rows[std::size_t(k) + 1][1].c_str(), nullptr);
    CHECK(same_bits(from_csv, tr.at(0, 0)[0]));
  }
}

TEST_CASE("histogram report matches direct statistics on the emitted values") {
  auto j = base_histogram_json();
  j["name"] = "unit_report";
  const auto spec = harness::parse_spec(j);
  harness::RunOptions opts;
  opts.out_dir = (scratch_root() / "report").string();
  const auto bundle = harness::run(spec, opts);

  const auto rows = read_csv(bundle.dir / "unit_report_30x20.csv");
  std::vector<double> values;
  for (std::size_t r = 1; r < rows.size(); ++r)
    values.push_back(std::strtod(rows[r][1].c_str(), nullptr));

  const json report =
      json::parse(slurp(bundle.dir / "unit_report_30x20_report.json"));
  const double sigma2 = report.at("sigma2_theory").get<double>();
  const auto [ks, pvalue] = stats::ks_gaussian(values, sigma2);
  CHECK(same_bits(report.at("ks_stat").get<double>(), ks));
  CHECK(same_bits(report.at("ks_pvalue").get<double>(), pvalue));
  CHECK(same_bits(report.at("w1").get<double>(),
                  stats::w1_gaussian(values, sigma2)));
}

TEST_CASE("verify accepts faithful manifests and flags doctored ones") {
  auto j = base_histogram_json();
  j["name"] = "unit_verify";
  j["trials"] = 32;
  const auto spec = harness::parse_spec(j);
  harness::RunOptions opts;
  opts.out_dir = (scratch_root() / "verify").string();
  const auto bundle = harness::run(spec, opts);

  const auto good = harness::verify(bundle.manifest_path, opts);
  CHECK(good.ok);
  CHECK(good.artifacts.size() == bundle.artifacts.size());

  json doctored = bundle.manifest;
  doctored["artifacts"]["unit_verify_30x20.csv"] = "fnv1a64:0x0000000000000000";
  const fs::path tampered = bundle.dir / "tampered_manifest.json";
  harness::emit_json(tampered, doctored);
  const auto bad = harness::verify(tampered, opts);
  CHECK_FALSE(bad.ok);
}

TEST_CASE("oversized grid points are skipped unless heavy") {
  json j{{"name", "unit_heavy"},
         {"kind", "covariance_path"},
         {"arch", "resnet"},
         {"grid", json::array({json::array({5, 5}), json::array({900, 900})})},
         {"trials", 1},
         {"input", {{"mode", "sample"}, {"dim", 4}}},
         {"master_seed", 5}};
  const auto spec = harness::parse_spec(j);

  std::ostringstream log;
  harness::RunOptions opts;
  opts.out_dir = (scratch_root() / "heavy").string();
  opts.log = &log;
  const auto bundle = harness::run(spec, opts);
  CHECK(bundle.manifest.at("grid_effective") ==
        json::array({json::array({5, 5})}));
  CHECK(bundle.manifest.at("grid_skipped") ==
        json::array({json::array({900, 900})}));
  CHECK(log.str().find("skipping") != std::string::npos);
  const auto rows = read_csv(bundle.dir / "unit_heavy.csv");
  CHECK(rows.size() == 7);  // header + L+1 kernel ticks for (5, 5)

  json all_big = j;
  all_big["grid"] = json::array({json::array({900, 900})});
  CHECK_THROWS_AS(harness::run(harness::parse_spec(all_big), opts),
                  std::invalid_argument);
}

TEST_CASE("seed override changes artifacts and is recorded in the manifest") {
  auto j = base_histogram_json();
  j["name"] = "unit_seed";
  j["trials"] = 16;
  const auto spec = harness::parse_spec(j);

  harness::RunOptions opts;
  opts.out_dir = (scratch_root() / "seed_a").string();
  const auto a = harness::run(spec, opts);

  harness::RunOptions opts2;
  opts2.out_dir = (scratch_root() / "seed_b").string();
  opts2.seed_override = 31337;
  const auto b = harness::run(spec, opts2);

  CHECK(b.manifest.at("master_seed").get<std::uint64_t>() == 31337);
  CHECK(b.manifest.at("spec").at("master_seed").get<std::uint64_t>() == 31337);
  CHECK(a.manifest.at("artifacts") != b.manifest.at("artifacts"));

  // a verify of the overridden run must reproduce with the overridden seed
  const auto report = harness::verify(b.manifest_path, harness::RunOptions{});
  CHECK(report.ok);
}

TEST_CASE("crosscheck moments agree across the three formulations") {
  json j{{"name", "unit_cross"},
         {"kind", "sde_crosscheck"},
         {"arch", "resnet"},
         {"grid", json::array({json::array({60, 40})})},
         {"trials", 2000},
         {"input", {{"mode", "sample"}, {"dim", 6}}},
         {"master_seed", 2718}};
  const auto spec = harness::parse_spec(j);
  harness::RunOptions opts;
  opts.threads = 2;
  opts.out_dir = (scratch_root() / "cross").string();
  const auto bundle = harness::run(spec, opts);

  const auto rows = read_csv(bundle.dir / "unit_cross.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[1][0] == "weights");
  CHECK(rows[2][0] == "norm");
  CHECK(rows[3][0] == "euler");
  for (int mom = 1; mom <= 4; ++mom) {
    const int mcol = 2 * mom, scol = 2 * mom + 1;
    for (int lhs = 1; lhs <= 3; ++lhs) {
      for (int rhs = lhs + 1; rhs <= 3; ++rhs) {
        const double m1 = std::strtod(rows[lhs][mcol].c_str(), nullptr);
        const double s1 = std::strtod(rows[lhs][scol].c_str(), nullptr);
        const double m2 = std::strtod(rows[rhs][mcol].c_str(), nullptr);
        const double s2 = std::strtod(rows[rhs][scol].c_str(), nullptr);
        const double se = std::sqrt(s1 * s1 + s2 * s2);
        CHECK(std::abs(m1 - m2) < 5.0 * se);
      }
    }
  }
}

TEST_CASE("discover lists spec files in sorted order") {
  const fs::path dir = scratch_root() / "specs";
  fs::create_directories(dir);
  for (const char* name : {"b_two.json", "a_one.json", "notes.txt"}) {
    std::ofstream out(dir / name);
    out << "{}";
  }
  const auto found = harness::discover_specs(dir);
  REQUIRE(found.size() == 2);
  CHECK(found[0].filename() == "a_one.json");
  CHECK(found[1].filename() == "b_two.json");
  CHECK(harness::discover_specs(dir / "missing").empty());
}
