#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "nnlimits/harness.hpp"

namespace fs = std::filesystem;
using namespace nnlimits;

namespace {

int cmd_run(const std::string& spec_file, const harness::RunOptions& options) {
  const auto spec = harness::load_spec(spec_file);
  const auto bundle = harness::run(spec, options);
  std::cout << "experiment " << spec.name << " -> " << bundle.dir.string()
            << "\n";
  for (const auto& artifact : bundle.artifacts)
    std::cout << "  " << artifact.filename().string() << "\n";
  std::cout << "  manifest.json  (wall "
            << bundle.manifest.at("wall_seconds").get<double>() << " s)\n";
  return 0;
}

int cmd_list(const std::string& dir) {
  const auto specs = harness::discover_specs(dir);
  if (specs.empty()) {
    std::cout << "no experiment specs under " << dir << "\n";
    return 0;
  }
  for (const auto& file : specs) {
    try {
      const auto spec = harness::load_spec(file);
      std::cout << spec.name << "  [" << harness::kind_name(spec.kind) << ", "
                << netsim::arch_name(spec.arch) << ", trials "
                << spec.trials << ", grid";
      for (const auto& [n, depth] : spec.grid)
        std::cout << " " << n << "x" << depth;
      std::cout << "]  " << file.string() << "\n";
    } catch (const std::exception& e) {
      std::cout << file.string() << "  [invalid: " << e.what() << "]\n";
    }
  }
  return 0;
}

int cmd_verify(const std::string& manifest,
               const harness::RunOptions& options) {
  const auto report = harness::verify(manifest, options);
  for (const auto& [artifact, ok] : report.artifacts)
    std::cout << (ok ? "  ok       " : "  MISMATCH ") << artifact << "\n";
  std::cout << report.message << "\n";
  return report.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo laboratory for wide and deep network limits"};
  app.require_subcommand(1);

  harness::RunOptions options;
  options.log = &std::cerr;
  std::uint64_t seed_override = 0;

  std::string spec_file;
  auto* run = app.add_subcommand("run", "run an experiment spec");
  run->add_option("spec", spec_file, "experiment JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--threads", options.threads, "worker threads")
      ->check(CLI::PositiveNumber);
  run->add_option("--out-dir", options.out_dir,
                  "output root (default: spec, then $NNLIMITS_OUT_DIR, then "
                  "./out)");
  run->add_flag("--heavy", options.heavy,
                "run grid points beyond the default 800 cap");
  auto* seed_opt = run->add_option("--seed-override", seed_override,
                                   "replace the spec's master seed");

  std::string list_dir = "experiments";
  auto* list = app.add_subcommand("list", "list experiment specs");
  list->add_option("dir", list_dir, "spec directory (default: experiments)");

  std::string manifest;
  auto* verify = app.add_subcommand("verify",
                                    "re-run a manifest and compare digests");
  verify->add_option("manifest", manifest, "manifest.json of a finished run")
      ->required()
      ->check(CLI::ExistingFile);
  verify->add_option("--threads", options.threads, "worker threads")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) options.seed_override = seed_override;

  try {
    if (run->parsed()) return cmd_run(spec_file, options);
    if (list->parsed()) return cmd_list(list_dir);
    return cmd_verify(manifest, options);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
