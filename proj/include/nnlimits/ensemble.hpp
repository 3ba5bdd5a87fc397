#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nnlimits::stats {

struct EnsembleMeta {
  std::string source;
  int width = 0;
  int depth = 0;
  double t = 1.0;
  int neuron = 0;
  std::uint64_t seed = 0;
};

// Scalar observations of one statistic across independent trials.
struct SampleEnsemble {
  std::vector<double> values;
  EnsembleMeta meta;
};

}  // namespace nnlimits::stats
