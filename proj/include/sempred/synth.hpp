#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sempred/core.hpp"

namespace sempred {

// Two Gaussian clusters in R^D whose mean directions sit `separation` noise
// standard deviations apart; the query embedding is the positive mean
// direction.
struct SynthSpec {
  std::size_t n_docs = 10000;
  int dim = 64;
  double positive_fraction = 0.5;
  double separation = 4.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  double accuracy_target = 0.9;
  std::string query_text = "synthetic positive-cluster membership";

  void validate() const;
};

std::pair<Workload, LabelSet> generate(const SynthSpec& spec);

// One workload per positive fraction, seeds derived from the base seed.
std::vector<std::pair<Workload, LabelSet>> selectivity_sweep(const SynthSpec& base,
                                                             std::span<const double> fractions);

}  // namespace sempred
