#include "sempred/calibrate.hpp"

#include <algorithm>
#include <cmath>

namespace sempred {

BinGrid BinGrid::uniform(int n_bins) {
  if (n_bins < 2) fail(ErrorCode::invalid_argument, "n_bins must be >= 2");
  BinGrid g;
  g.n_bins = n_bins;
  g.edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (int i = 0; i <= n_bins; ++i)
    g.edges[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(n_bins);
  g.edges.front() = 0.0;
  g.edges.back() = 1.0;
  return g;
}

int BinGrid::bin_of(double s) const {
  if (s <= edges.front()) return 0;
  if (s >= edges.back()) return n_bins - 1;  // last bin closed
  const auto it = std::upper_bound(edges.begin(), edges.end(), s);
  return static_cast<int>(it - edges.begin()) - 1;
}

std::pair<BinGrid, std::vector<int>> discretize(const ScoreSet& scores, int n_bins) {
  BinGrid grid = BinGrid::uniform(n_bins);
  std::vector<int> counts(static_cast<std::size_t>(n_bins), 0);
  for (double s : scores.values()) counts[static_cast<std::size_t>(grid.bin_of(s))]++;
  return {std::move(grid), std::move(counts)};
}

std::vector<std::string> stratified_sample(const ScoreSet& scores, const BinGrid& grid, double rate,
                                           std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) fail(ErrorCode::invalid_argument, "sample rate must be in (0, 1]");

  std::vector<std::vector<std::size_t>> bins(static_cast<std::size_t>(grid.n_bins));
  for (std::size_t i = 0; i < scores.size(); ++i)
    bins[static_cast<std::size_t>(grid.bin_of(scores.values()[i]))].push_back(i);

  Rng rng(derive_seed(seed, 31));
  std::vector<std::string> out;
  for (auto& bin : bins) {
    const auto c = bin.size();
    if (c == 0) continue;
    auto k = static_cast<std::size_t>(std::lround(rate * static_cast<double>(c)));
    if (k == 0) continue;
    if (k > c) k = c;
    // Partial Fisher-Yates: the first k entries become a uniform draw
    // without replacement.
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.bounded(c - i));
      std::swap(bin[i], bin[j]);
    }
    for (std::size_t i = 0; i < k; ++i) out.push_back(scores.ids()[bin[i]]);
  }
  return out;
}

std::vector<WeightedScore> jitter(const std::vector<double>& class_scores, const BinGrid& grid,
                                  const std::vector<int>& global_counts, std::uint64_t seed) {
  if (static_cast<int>(global_counts.size()) != grid.n_bins)
    fail(ErrorCode::invalid_argument, "global_counts length must equal n_bins");
  if (class_scores.empty()) fail(ErrorCode::degenerate, "jitter: empty class sample");

  std::vector<int> counts(static_cast<std::size_t>(grid.n_bins), 0);
  for (double s : class_scores) counts[static_cast<std::size_t>(grid.bin_of(s))]++;

  std::vector<WeightedScore> out;
  out.reserve(class_scores.size());
  for (double s : class_scores) out.push_back({s, 1.0});

  const double w = 1.0 / (2.0 * static_cast<double>(class_scores.size()));
  Rng rng(derive_seed(seed, 32));
  for (int b = 0; b < grid.n_bins; ++b) {
    if (counts[static_cast<std::size_t>(b)] != 0) continue;
    if (global_counts[static_cast<std::size_t>(b)] == 0) continue;  // no documents score here at all
    const double lo = grid.edges[static_cast<std::size_t>(b)];
    const double hi = grid.edges[static_cast<std::size_t>(b) + 1];
    out.push_back({rng.uniform(lo, hi), w});
  }
  return out;
}

Distribution::Distribution(BinGrid grid, std::vector<double> edge_density, int sample_count)
    : grid_(std::move(grid)), density_(std::move(edge_density)), sample_count_(sample_count) {
  if (density_.size() != grid_.edges.size())
    fail(ErrorCode::invalid_argument, "density must have one value per grid edge");
  for (auto& v : density_) {
    if (!std::isfinite(v)) fail(ErrorCode::invalid_argument, "non-finite density value");
    if (v < 0.0) {
      if (v < -1e-12) fail(ErrorCode::invalid_argument, "negative density value");
      v = 0.0;
    }
  }
  double integral = 0.0;
  for (int i = 0; i < grid_.n_bins; ++i)
    integral += grid_.width(i) * 0.5 *
                (density_[static_cast<std::size_t>(i)] + density_[static_cast<std::size_t>(i) + 1]);
  if (!(integral > 0.0)) fail(ErrorCode::degenerate, "density integrates to zero");
  for (auto& v : density_) v /= integral;
}

double Distribution::pdf_at(double s) const {
  if (s <= 0.0) return density_.front();
  if (s >= 1.0) return density_.back();
  const int b = grid_.bin_of(s);
  const double lo = grid_.edges[static_cast<std::size_t>(b)];
  const double t = (s - lo) / grid_.width(b);
  return density_[static_cast<std::size_t>(b)] +
         t * (density_[static_cast<std::size_t>(b) + 1] - density_[static_cast<std::size_t>(b)]);
}

double Distribution::cdf(double s) const {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;  // normalized by construction
  double acc = 0.0;
  for (int i = 0; i < grid_.n_bins; ++i) {
    const double lo = grid_.edges[static_cast<std::size_t>(i)];
    const double hi = grid_.edges[static_cast<std::size_t>(i) + 1];
    const double v0 = density_[static_cast<std::size_t>(i)];
    const double v1 = density_[static_cast<std::size_t>(i) + 1];
    if (s >= hi) {
      acc += (hi - lo) * 0.5 * (v0 + v1);
      continue;
    }
    const double w = hi - lo;
    const double t = s - lo;
    acc += v0 * t + (v1 - v0) * t * t / (2.0 * w);
    return std::min(acc, 1.0);
  }
  return std::min(acc, 1.0);
}

double Distribution::mass_between(double a, double b) const {
  if (b <= a) return 0.0;
  return std::max(0.0, cdf(b) - cdf(a));
}

std::vector<double> Distribution::bin_masses() const {
  std::vector<double> masses(static_cast<std::size_t>(grid_.n_bins));
  for (int i = 0; i < grid_.n_bins; ++i)
    masses[static_cast<std::size_t>(i)] = grid_.width(i) * 0.5 *
                                          (density_[static_cast<std::size_t>(i)] +
                                           density_[static_cast<std::size_t>(i) + 1]);
  return masses;
}

Distribution density_estimate(const std::vector<WeightedScore>& samples, const BinGrid& grid) {
  double total = 0.0;
  for (const auto& s : samples) total += s.weight;
  if (!(total > 0.0)) fail(ErrorCode::degenerate, "density_estimate: zero total weight");

  std::vector<double> hist(static_cast<std::size_t>(grid.n_bins), 0.0);
  for (const auto& s : samples) hist[static_cast<std::size_t>(grid.bin_of(s.score))] += s.weight;

  std::vector<double> mid(static_cast<std::size_t>(grid.n_bins));
  std::vector<double> mid_pos(static_cast<std::size_t>(grid.n_bins));
  for (int i = 0; i < grid.n_bins; ++i) {
    mid[static_cast<std::size_t>(i)] = hist[static_cast<std::size_t>(i)] / (total * grid.width(i));
    mid_pos[static_cast<std::size_t>(i)] =
        0.5 * (grid.edges[static_cast<std::size_t>(i)] + grid.edges[static_cast<std::size_t>(i) + 1]);
  }

  // Sample the midpoint-anchored polyline at the grid edges; the ends extend
  // the first/last midpoint values.
  std::vector<double> v(grid.edges.size());
  v.front() = mid.front();
  v.back() = mid.back();
  for (int i = 1; i < grid.n_bins; ++i) {
    const double x = grid.edges[static_cast<std::size_t>(i)];
    const double x0 = mid_pos[static_cast<std::size_t>(i) - 1];
    const double x1 = mid_pos[static_cast<std::size_t>(i)];
    const double t = (x - x0) / (x1 - x0);
    v[static_cast<std::size_t>(i)] = mid[static_cast<std::size_t>(i) - 1] +
                                     t * (mid[static_cast<std::size_t>(i)] - mid[static_cast<std::size_t>(i) - 1]);
  }
  return Distribution(grid, std::move(v), static_cast<int>(samples.size()));
}

Distribution smooth(const Distribution& dist, int window) {
  if (window < 1 || window % 2 == 0) fail(ErrorCode::invalid_argument, "smoothing window must be odd and >= 1");
  const auto& v = dist.density();
  if (window == 1) return dist;

  const int n = static_cast<int>(v.size());
  const int half = window / 2;
  std::vector<double> out(v.size());
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = i - half; j <= i + half; ++j) {
      const int k = std::clamp(j, 0, n - 1);  // edge replication
      acc += v[static_cast<std::size_t>(k)];
    }
    out[static_cast<std::size_t>(i)] = acc / static_cast<double>(window);
  }
  return Distribution(dist.grid(), std::move(out), dist.sample_count());
}

CalibrationResult calibrate(const ScoreSet& scores, const LabelSet& sampled_labels, const BinGrid& grid,
                            std::uint64_t seed, int smoothing_window) {
  if (sampled_labels.size() == 0) fail(ErrorCode::invalid_argument, "calibrate: empty calibration sample");

  CalibrationSample sample;
  std::vector<double> pos_scores, neg_scores;
  for (const auto& [id, label] : sampled_labels.entries()) {
    const double s = scores.at(id);
    sample.entries.push_back({id, s, label});
    (label ? pos_scores : neg_scores).push_back(s);
  }
  if (pos_scores.empty() || neg_scores.empty())
    fail(ErrorCode::degenerate, "calibrate: calibration sample has a single class (" +
                                    std::to_string(pos_scores.size()) + " positives, " +
                                    std::to_string(neg_scores.size()) + " negatives)");

  std::vector<int> global_counts(static_cast<std::size_t>(grid.n_bins), 0);
  for (double s : scores.values()) global_counts[static_cast<std::size_t>(grid.bin_of(s))]++;

  Distribution pdf_p =
      smooth(density_estimate(jitter(pos_scores, grid, global_counts, derive_seed(seed, 41)), grid), smoothing_window);
  Distribution pdf_n =
      smooth(density_estimate(jitter(neg_scores, grid, global_counts, derive_seed(seed, 42)), grid), smoothing_window);

  ClassPriors priors;
  priors.positive = static_cast<double>(pos_scores.size()) /
                    static_cast<double>(pos_scores.size() + neg_scores.size());
  priors.negative = 1.0 - priors.positive;
  return {std::move(pdf_p), std::move(pdf_n), priors, std::move(sample)};
}

double jsd_from_masses(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) fail(ErrorCode::invalid_argument, "jsd: mass vectors differ in length");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) fail(ErrorCode::invalid_argument, "jsd: negative mass");
    sp += p[i];
    sq += q[i];
  }
  if (!(sp > 0.0) || !(sq > 0.0)) fail(ErrorCode::invalid_argument, "jsd: zero total mass");

  double div = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i] / sp;
    const double qi = q[i] / sq;
    const double mi = 0.5 * (pi + qi);
    const double tp = pi > 0.0 ? 0.5 * pi * std::log2(pi / mi) : 0.0;
    const double tq = qi > 0.0 ? 0.5 * qi * std::log2(qi / mi) : 0.0;
    div += tp + tq;  // the pairwise sum keeps jsd exactly symmetric
  }
  div = std::clamp(div, 0.0, 1.0);
  return std::sqrt(div);
}

double jsd(const Distribution& p, const Distribution& q) {
  if (!(p.grid() == q.grid())) fail(ErrorCode::invalid_argument, "jsd: distributions use different grids");
  const auto mp = p.bin_masses();
  const auto mq = q.bin_masses();
  return jsd_from_masses(mp, mq);
}

}  // namespace sempred
