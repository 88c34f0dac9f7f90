#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "sempred/calibrate.hpp"
#include "support/helpers.hpp"

using namespace sempred;
using testsupport::random_distribution;

namespace {

ScoreSet scores_from(const std::vector<double>& values) {
  ScoreSet s;
  for (std::size_t i = 0; i < values.size(); ++i) s.add("doc_" + std::to_string(i), values[i]);
  return s;
}

double integral_of(const Distribution& d) {
  double acc = 0.0;
  const auto& grid = d.grid();
  for (int i = 0; i < grid.n_bins; ++i)
    acc += grid.width(i) * 0.5 *
           (d.density()[static_cast<std::size_t>(i)] + d.density()[static_cast<std::size_t>(i) + 1]);
  return acc;
}

}  // namespace

TEST_CASE("BinGrid: uniform edges and boundary convention") {
  const BinGrid g = BinGrid::uniform(64);
  CHECK(g.n_bins == 64);
  CHECK(g.edges.front() == 0.0);
  CHECK(g.edges.back() == 1.0);
  for (int i = 0; i < 64; ++i) CHECK(g.edges[static_cast<std::size_t>(i)] < g.edges[static_cast<std::size_t>(i) + 1]);

  CHECK(g.bin_of(0.0) == 0);
  CHECK(g.bin_of(1.0) == 63);        // last bin closed
  CHECK(g.bin_of(1.0 / 64.0) == 1);  // bins are [lo, hi)
  CHECK(g.bin_of(0.999999) == 63);
  CHECK_THROWS_AS(BinGrid::uniform(1), Error);
}

TEST_CASE("discretize splits boundary scores per convention") {
  const auto [grid, counts] = discretize(scores_from({0.0, 1.0}), 2);
  CHECK(counts == std::vector<int>{1, 1});
}

TEST_CASE("discretize counts sum to the population and spread uniformly") {
  Rng rng(71);
  std::vector<double> values(10000);
  for (auto& v : values) v = rng.uniform();
  const auto [grid, counts] = discretize(scores_from(values), 64);

  int total = 0;
  for (int c : counts) total += c;
  CHECK(total == 10000);

  // Binomial bound: each count within 5 sigma of N/n_bins.
  const double expected = 10000.0 / 64.0;
  const double sigma = std::sqrt(10000.0 * (1.0 / 64.0) * (63.0 / 64.0));
  for (int c : counts) CHECK(std::abs(c - expected) <= 5.0 * sigma);
}

TEST_CASE("stratified_sample: full rate returns everything, proportionality per bin") {
  Rng rng(13);
  std::vector<double> values(10000);
  for (auto& v : values) v = std::clamp(0.5 + 0.25 * rng.normal(), 0.0, 1.0);
  const ScoreSet scores = scores_from(values);
  const auto [grid, counts] = discretize(scores, 64);

  SUBCASE("rate 1.0 draws all ids") {
    const auto ids = stratified_sample(scores, grid, 1.0, 3);
    CHECK(ids.size() == scores.size());
  }

  SUBCASE("rate 0.05: totals and per-bin proportionality") {
    const auto ids = stratified_sample(scores, grid, 0.05, 3);
    CHECK(std::abs(static_cast<double>(ids.size()) - 500.0) <= 32.0);  // +- n_bins/2

    std::vector<int> sampled(64, 0);
    for (const auto& id : ids) sampled[static_cast<std::size_t>(grid.bin_of(scores.at(id)))]++;
    for (int b = 0; b < 64; ++b)
      CHECK(std::abs(sampled[static_cast<std::size_t>(b)] - 0.05 * counts[static_cast<std::size_t>(b)]) < 1.0);
  }

  SUBCASE("deterministic per seed, distinct ids") {
    const auto a = stratified_sample(scores, grid, 0.1, 9);
    const auto b = stratified_sample(scores, grid, 0.1, 9);
    CHECK(a == b);
    std::set<std::string> uniq(a.begin(), a.end());
    CHECK(uniq.size() == a.size());
  }

  SUBCASE("rate bounds") {
    CHECK_THROWS_AS(stratified_sample(scores, grid, 0.0, 1), Error);
    CHECK_THROWS_AS(stratified_sample(scores, grid, 1.5, 1), Error);
  }
}

TEST_CASE("jitter") {
  const BinGrid grid = BinGrid::uniform(8);
  const std::vector<int> global_all(8, 10);

  SUBCASE("no empty bins: identity with unit weights") {
    std::vector<double> class_scores;
    for (int b = 0; b < 8; ++b) class_scores.push_back((b + 0.5) / 8.0);
    const auto out = jitter(class_scores, grid, global_all, 1);
    REQUIRE(out.size() == class_scores.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i].score == class_scores[i]);
      CHECK(out[i].weight == 1.0);
    }
  }

  SUBCASE("single occupied bin: n_bins - 1 pseudo-samples in empty bins") {
    const std::vector<double> class_scores{0.51, 0.52, 0.53};
    const auto out = jitter(class_scores, grid, global_all, 1);
    REQUIRE(out.size() == class_scores.size() + 7);
    const double w = 1.0 / (2.0 * 3.0);
    double mass = 0.0;
    for (const auto& s : out) mass += s.weight;
    CHECK(mass == doctest::Approx(3.0 + 7.0 * w).epsilon(1e-12));
    // pseudo-samples land inside their bins
    for (std::size_t i = class_scores.size(); i < out.size(); ++i) {
      CHECK(out[i].weight == doctest::Approx(w));
      const int b = grid.bin_of(out[i].score);
      CHECK(out[i].score >= grid.edges[static_cast<std::size_t>(b)]);
      CHECK(out[i].score < grid.edges[static_cast<std::size_t>(b) + 1]);
    }
  }

  SUBCASE("bins empty in the global score set receive no pseudo-mass") {
    std::vector<int> global(8, 0);
    global[4] = 5;
    const std::vector<double> class_scores{0.95};  // bin 7, globally empty
    const auto out = jitter(class_scores, grid, global, 1);
    // only bin 4 is globally populated and sample-empty
    REQUIRE(out.size() == 2);
    CHECK(grid.bin_of(out[1].score) == 4);
  }

  SUBCASE("empty class sample is a degenerate error") {
    CHECK_THROWS_AS(jitter({}, grid, global_all, 1), Error);
  }
}

TEST_CASE("density_estimate") {
  const BinGrid grid = BinGrid::uniform(16);

  SUBCASE("all mass in one bin peaks at that bin and integrates to 1") {
    std::vector<WeightedScore> samples;
    for (int i = 0; i < 50; ++i) samples.push_back({0.53125, 1.0});  // bin 8 midpoint
    const Distribution d = density_estimate(samples, grid);
    CHECK(integral_of(d) == doctest::Approx(1.0).epsilon(1e-9));
    const auto peak = std::max_element(d.density().begin(), d.density().end()) - d.density().begin();
    CHECK((peak == 8 || peak == 9));  // edges bounding bin 8
    CHECK(d.pdf_at(0.53125) > d.pdf_at(0.1));
  }

  SUBCASE("uniform samples approach the flat density") {
    Rng rng(5);
    std::vector<WeightedScore> samples;
    for (int i = 0; i < 200000; ++i) samples.push_back({rng.uniform(), 1.0});
    const Distribution d = density_estimate(samples, grid);
    for (std::size_t i = 1; i + 1 < d.density().size(); ++i) CHECK(std::abs(d.density()[i] - 1.0) < 0.1);
  }

  SUBCASE("pdf_at is finite and non-negative everywhere") {
    Rng rng(6);
    std::vector<WeightedScore> samples;
    for (int i = 0; i < 37; ++i) samples.push_back({rng.uniform(), 0.5 + rng.uniform()});
    const Distribution d = density_estimate(samples, grid);
    for (double s : {0.0, 0.111, 0.5, 0.77777, 1.0}) {
      CHECK(std::isfinite(d.pdf_at(s)));
      CHECK(d.pdf_at(s) >= 0.0);
    }
  }

  SUBCASE("zero total weight is an error") {
    CHECK_THROWS_AS(density_estimate({}, grid), Error);
  }
}

TEST_CASE("smooth") {
  const BinGrid grid = BinGrid::uniform(16);

  SUBCASE("window 1 is the identity") {
    const Distribution d = random_distribution(grid, 4);
    const Distribution s = smooth(d, 1);
    CHECK(s.density() == d.density());
  }

  SUBCASE("delta spike spreads over the window and keeps integral 1") {
    std::vector<double> v(grid.edges.size(), 0.0);
    v[8] = 16.0;
    const Distribution d(grid, v, 1);
    const Distribution s = smooth(d, 3);
    CHECK(integral_of(s) == doctest::Approx(1.0).epsilon(1e-9));
    // mean pooling spreads the spike evenly over the window
    CHECK(s.density()[7] > 0.0);
    CHECK(s.density()[8] == s.density()[7]);
    CHECK(s.density()[9] == s.density()[7]);
    CHECK(s.density()[6] == 0.0);
    CHECK(s.density()[10] == 0.0);
  }

  SUBCASE("smoothing never increases the maximum density") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const Distribution d = random_distribution(grid, 100 + seed, 0.0);
      for (int window : {3, 5, 7}) {
        const Distribution s = smooth(d, window);
        const double max_before = *std::max_element(d.density().begin(), d.density().end());
        const double max_after = *std::max_element(s.density().begin(), s.density().end());
        CHECK(max_after <= max_before * (1.0 + 1e-9));
      }
    }
  }

  SUBCASE("even windows are rejected") {
    const Distribution d = random_distribution(grid, 4);
    CHECK_THROWS_AS(smooth(d, 2), Error);
    CHECK_THROWS_AS(smooth(d, 0), Error);
  }
}

TEST_CASE("calibrate splits classes and reconstructs bimodal structure") {
  Rng rng(42);
  ScoreSet scores;
  LabelSet labels;
  // positives near 1, negatives near 0
  for (int i = 0; i < 400; ++i) {
    const bool pos = i % 2 == 0;
    const double s = std::clamp(pos ? 0.85 + 0.05 * rng.normal() : 0.15 + 0.05 * rng.normal(), 0.0, 1.0);
    const std::string id = "doc_" + std::to_string(i);
    scores.add(id, s);
    if (i % 4 < 2) labels.set(id, pos);  // half the docs are "sampled"
  }
  const BinGrid grid = BinGrid::uniform(64);
  const CalibrationResult cal = calibrate(scores, labels, grid, 7);

  CHECK(cal.priors.positive + cal.priors.negative == 1.0);
  CHECK(cal.priors.positive == doctest::Approx(0.5).epsilon(0.05));

  CHECK(cal.pdf_p.mass_between(0.5, 1.0) > 0.9);
  CHECK(cal.pdf_n.mass_between(0.0, 0.5) > 0.9);
  CHECK(integral_of(cal.pdf_p) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(integral_of(cal.pdf_n) == doctest::Approx(1.0).epsilon(1e-9));

  SUBCASE("deterministic for fixed seed") {
    const CalibrationResult again = calibrate(scores, labels, grid, 7);
    CHECK(again.pdf_p.density() == cal.pdf_p.density());
    CHECK(again.pdf_n.density() == cal.pdf_n.density());
  }
  SUBCASE("single-class sample degenerates") {
    LabelSet all_pos;
    for (const auto& [id, l] : labels.entries()) all_pos.set(id, true);
    CHECK_THROWS_AS(calibrate(scores, all_pos, grid, 7), Error);
    try {
      calibrate(scores, all_pos, grid, 7);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::degenerate);
    }
  }
  SUBCASE("empty sample is invalid") {
    CHECK_THROWS_AS(calibrate(scores, LabelSet{}, grid, 7), Error);
  }
}

TEST_CASE("reconstruction JSD against the generator shrinks with the sample rate") {
  const BinGrid grid = BinGrid::uniform(64);
  std::map<double, double> mean_jsd{{0.01, 0.0}, {0.05, 0.0}, {0.20, 0.0}};
  const std::uint64_t kSeeds = 5;

  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const Distribution gen_p = random_distribution(grid, 900 + seed);
    const Distribution gen_n = random_distribution(grid, 950 + seed);
    testsupport::PdfSampler sampler_p(gen_p), sampler_n(gen_n);
    Rng rng(37 + seed);

    ScoreSet scores;
    LabelSet truth;
    for (int i = 0; i < 8000; ++i) {
      const bool pos = i % 2 == 0;
      const double s = pos ? sampler_p.draw(rng) : sampler_n.draw(rng);
      const std::string id = "doc_" + std::to_string(i);
      scores.add(id, s);
      truth.set(id, pos);
    }

    for (auto& [rate, acc] : mean_jsd) {
      const auto ids = stratified_sample(scores, grid, rate, 11 + seed);
      LabelSet sampled;
      for (const auto& id : ids) sampled.set(id, truth.at(id));
      const CalibrationResult cal = calibrate(scores, sampled, grid, 13 + seed);
      acc += jsd(cal.pdf_p, gen_p) / static_cast<double>(kSeeds);
    }
  }
  CHECK(mean_jsd[0.01] > mean_jsd[0.05]);
  CHECK(mean_jsd[0.05] > mean_jsd[0.20]);
}

TEST_CASE("jsd properties") {
  const BinGrid grid = BinGrid::uniform(32);

  SUBCASE("identical distributions -> 0") {
    const Distribution d = random_distribution(grid, 3);
    CHECK(jsd(d, d) == 0.0);
  }
  SUBCASE("disjoint supports -> 1") {
    std::vector<double> left(grid.edges.size(), 0.0), right(grid.edges.size(), 0.0);
    for (std::size_t i = 0; i < 16; ++i) left[i] = 1.0;
    for (std::size_t i = 17; i < grid.edges.size(); ++i) right[i] = 1.0;
    const Distribution dl(grid, left, 0), dr(grid, right, 0);
    CHECK(jsd(dl, dr) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("symmetric and bounded") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Distribution a = random_distribution(grid, 100 + seed);
      const Distribution b = random_distribution(grid, 200 + seed);
      const double ab = jsd(a, b);
      CHECK(ab == jsd(b, a));
      CHECK(ab >= 0.0);
      CHECK(ab <= 1.0);
    }
  }
  SUBCASE("grid mismatch is an error") {
    const Distribution a = random_distribution(BinGrid::uniform(32), 1);
    const Distribution b = random_distribution(BinGrid::uniform(64), 1);
    CHECK_THROWS_AS(jsd(a, b), Error);
  }
}
