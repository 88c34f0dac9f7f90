#pragma once

// Shared test utilities. Oracles here (finite differences, Monte-Carlo
// simulation, rank statistics) are deliberately independent of the library
// code paths they check.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "sempred/calibrate.hpp"
#include "sempred/common.hpp"
#include "sempred/core.hpp"
#include "sempred/proxy.hpp"

namespace testsupport {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sempred_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline sempred::EmbeddingStore random_store(std::size_t n, int dim, std::uint64_t seed) {
  sempred::Rng rng(seed);
  sempred::EmbeddingStore store(dim);
  std::vector<float> row(static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : row) v = static_cast<float>(rng.normal());
    store.add("doc_" + std::to_string(i), row);
  }
  return store;
}

// Area under the ROC curve from scores and boolean labels (rank statistic
// with midrank tie handling).
inline double auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum_pos += midrank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return 0.5;
  return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Overlap coefficient of two normalized score histograms on a shared uniform
// grid: sum of per-bin minima, in [0, 1].
inline double overlap_coefficient(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores,
                                  int n_bins) {
  std::vector<double> hp(static_cast<std::size_t>(n_bins), 0.0), hn(static_cast<std::size_t>(n_bins), 0.0);
  auto bin_of = [&](double s) {
    int b = static_cast<int>(s * n_bins);
    return std::clamp(b, 0, n_bins - 1);
  };
  for (double s : pos_scores) hp[static_cast<std::size_t>(bin_of(s))] += 1.0;
  for (double s : neg_scores) hn[static_cast<std::size_t>(bin_of(s))] += 1.0;
  double overlap = 0.0;
  for (int b = 0; b < n_bins; ++b)
    overlap += std::min(hp[static_cast<std::size_t>(b)] / static_cast<double>(pos_scores.size()),
                        hn[static_cast<std::size_t>(b)] / static_cast<double>(neg_scores.size()));
  return overlap;
}

// Central finite differences over every parameter: relative error between the
// analytic and numeric gradient as ||ga - gn|| / max(||ga||, ||gn||, floor).
// The floor keeps saturated batches (both gradients ~ 0, difference pure
// roundoff) from dividing noise by a vanishing norm.
inline double gradient_relative_error(sempred::EncoderParams& params,
                                      const std::function<double()>& loss_fn,
                                      const std::vector<double>& analytic, double h = 1e-6,
                                      double norm_floor = 1e-4) {
  std::vector<double> numeric(analytic.size(), 0.0);
  auto& values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss_fn();
    values[i] = saved - h;
    const double down = loss_fn();
    values[i] = saved;
    numeric[i] = (up - down) / (2.0 * h);
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), norm_floor});
  return std::sqrt(diff) / denom;
}

// Random batch in the gradient-check configuration (labels guarantee at
// least one positive and one negative).
inline sempred::MiniBatch random_batch(int n, int dim, std::uint64_t seed) {
  sempred::Rng rng(seed);
  sempred::MiniBatch batch;
  batch.query.resize(static_cast<std::size_t>(dim));
  for (auto& v : batch.query) v = static_cast<float>(rng.normal());
  batch.docs.resize(static_cast<std::size_t>(n));
  batch.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    batch.docs[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(dim));
    for (auto& v : batch.docs[static_cast<std::size_t>(i)]) v = static_cast<float>(rng.normal());
    batch.labels[static_cast<std::size_t>(i)] = i < n / 2 ? 1 : 0;
  }
  return batch;
}

inline sempred::EncoderParams random_params(int dim, std::uint64_t seed, int h1 = 12, int h2 = 10, int latent = 8,
                                            int proj_hidden = 6, int proj = 4) {
  sempred::TrainingConfig cfg;
  cfg.hidden1 = h1;
  cfg.hidden2 = h2;
  cfg.latent_dim = latent;
  cfg.projector_hidden = proj_hidden;
  cfg.projector_dim = proj;
  return sempred::EncoderParams::init(dim, cfg, seed);
}

// Strictly positive random piecewise-linear density on the grid edges.
inline sempred::Distribution random_distribution(const sempred::BinGrid& grid, std::uint64_t seed,
                                                 double floor = 0.05) {
  sempred::Rng rng(seed);
  std::vector<double> v(grid.edges.size());
  // Mixture of a few random bumps over a constant floor.
  const int bumps = 1 + static_cast<int>(rng.bounded(3));
  std::vector<double> center(static_cast<std::size_t>(bumps)), width(static_cast<std::size_t>(bumps)),
      height(static_cast<std::size_t>(bumps));
  for (int b = 0; b < bumps; ++b) {
    center[static_cast<std::size_t>(b)] = rng.uniform();
    width[static_cast<std::size_t>(b)] = 0.02 + 0.2 * rng.uniform();
    height[static_cast<std::size_t>(b)] = 0.5 + 4.0 * rng.uniform();
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = grid.edges[i];
    double y = floor;
    for (int b = 0; b < bumps; ++b) {
      const double d = (x - center[static_cast<std::size_t>(b)]) / width[static_cast<std::size_t>(b)];
      y += height[static_cast<std::size_t>(b)] * std::exp(-0.5 * d * d);
    }
    v[i] = y;
  }
  return sempred::Distribution(grid, std::move(v), 0);
}

// Draws one score from a piecewise-linear density via per-bin inverse CDF
// (quadratic inversion on the chosen segment).
class PdfSampler {
 public:
  explicit PdfSampler(const sempred::Distribution& dist) : grid_(dist.grid()), density_(dist.density()) {
    masses_.resize(static_cast<std::size_t>(grid_.n_bins));
    double acc = 0.0;
    for (int i = 0; i < grid_.n_bins; ++i) {
      const double m = grid_.width(i) * 0.5 *
                       (density_[static_cast<std::size_t>(i)] + density_[static_cast<std::size_t>(i) + 1]);
      acc += m;
      masses_[static_cast<std::size_t>(i)] = acc;
    }
    total_ = acc;
  }

  double draw(sempred::Rng& rng) const {
    const double u = rng.uniform() * total_;
    std::size_t lo = 0, hi = masses_.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (masses_[mid] < u)
        lo = mid + 1;
      else
        hi = mid;
    }
    const int b = static_cast<int>(lo);
    const double prev = b == 0 ? 0.0 : masses_[static_cast<std::size_t>(b) - 1];
    const double rem = u - prev;  // mass inside the segment
    const double w = grid_.width(b);
    const double v0 = density_[static_cast<std::size_t>(b)];
    const double v1 = density_[static_cast<std::size_t>(b) + 1];
    const double a = 0.5 * (v1 - v0) / w;
    double t;
    if (std::abs(a) < 1e-14) {
      t = v0 > 0.0 ? rem / v0 : 0.5 * w;
    } else {
      // Solve a t^2 + v0 t - rem = 0 for t in [0, w].
      const double disc = std::max(0.0, v0 * v0 + 4.0 * a * rem);
      t = (-v0 + std::sqrt(disc)) / (2.0 * a);
    }
    t = std::clamp(t, 0.0, w);
    return grid_.edges[static_cast<std::size_t>(b)] + t;
  }

 private:
  sempred::BinGrid grid_;
  std::vector<double> density_;
  std::vector<double> masses_;
  double total_ = 0.0;
};

}  // namespace testsupport
