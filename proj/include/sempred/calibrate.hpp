#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sempred/core.hpp"
#include "sempred/proxy.hpp"

namespace sempred {

// Uniform discretization of [0, 1]; bin i covers [edge_i, edge_{i+1}) with the
// last bin closed.
struct BinGrid {
  int n_bins = 0;
  std::vector<double> edges;  // n_bins + 1, edges[0] = 0, edges[n_bins] = 1

  static BinGrid uniform(int n_bins);
  int bin_of(double s) const;
  double width(int i) const { return edges[static_cast<std::size_t>(i) + 1] - edges[static_cast<std::size_t>(i)]; }
  bool operator==(const BinGrid& other) const = default;
};

std::pair<BinGrid, std::vector<int>> discretize(const ScoreSet& scores, int n_bins);

// Per-bin proportional draw: round(rate * count) docs from each bin, uniformly
// without replacement.
std::vector<std::string> stratified_sample(const ScoreSet& scores, const BinGrid& grid, double rate,
                                           std::uint64_t seed);

struct CalibrationSample {
  struct Entry {
    std::string doc_id;
    double score = 0.0;
    bool label = false;
  };
  std::vector<Entry> entries;
};

struct WeightedScore {
  double score = 0.0;
  double weight = 1.0;
};

// Inserts one fractionally weighted pseudo-sample (w = 1 / (2 * sample_count))
// into each bin that is empty in the class sample but populated in the global
// score set.
std::vector<WeightedScore> jitter(const std::vector<double>& class_scores, const BinGrid& grid,
                                  const std::vector<int>& global_counts, std::uint64_t seed);

// Piecewise-linear density over [0, 1], anchored at grid edges, normalized to
// integrate to one.
class Distribution {
 public:
  Distribution(BinGrid grid, std::vector<double> edge_density, int sample_count);

  const BinGrid& grid() const { return grid_; }
  const std::vector<double>& density() const { return density_; }
  int sample_count() const { return sample_count_; }

  double pdf_at(double s) const;
  double cdf(double s) const;
  double mass_between(double a, double b) const;
  std::vector<double> bin_masses() const;

 private:
  BinGrid grid_;
  std::vector<double> density_;
  int sample_count_ = 0;
};

// Weighted histogram -> midpoint-anchored linear interpolation (constant
// extension at the ends) -> normalize.
Distribution density_estimate(const std::vector<WeightedScore>& samples, const BinGrid& grid);

// Moving average over the edge densities with edge replication; renormalized.
Distribution smooth(const Distribution& dist, int window);

struct ClassPriors {
  double positive = 0.0;
  double negative = 0.0;
};

struct CalibrationResult {
  Distribution pdf_p;
  Distribution pdf_n;
  ClassPriors priors;
  CalibrationSample sample;
};

// Algorithm: split the labeled sample by class, then per class run
// jitter -> density_estimate -> smooth. Priors are sample class fractions.
CalibrationResult calibrate(const ScoreSet& scores, const LabelSet& sampled_labels, const BinGrid& grid,
                            std::uint64_t seed, int smoothing_window = 3);

// Jensen-Shannon distance (sqrt of the base-2 divergence) on per-bin masses.
double jsd(const Distribution& p, const Distribution& q);
double jsd_from_masses(std::span<const double> p, std::span<const double> q);

}  // namespace sempred
