#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "sempred/cascade.hpp"
#include "support/helpers.hpp"

using namespace sempred;
using testsupport::random_distribution;

namespace {

ScoreSet scores_from(const std::vector<double>& values) {
  ScoreSet s;
  for (std::size_t i = 0; i < values.size(); ++i) s.add("doc_" + std::to_string(i), values[i]);
  return s;
}

// Exactly representable separated triangles on a 16-bin grid: negative mass
// on [1/16, 3/16], positive mass on [13/16, 15/16]. All trapezoid masses are
// dyadic, so accuracy integrals are float-exact.
std::pair<Distribution, Distribution> separated_pair() {
  const BinGrid grid = BinGrid::uniform(16);
  std::vector<double> p(grid.edges.size(), 0.0), n(grid.edges.size(), 0.0);
  n[2] = 16.0;
  p[14] = 16.0;
  return {Distribution(grid, p, 0), Distribution(grid, n, 0)};
}

// Monte-Carlo simulation of the cascade rule, independent of the library's
// integration code.
double mc_accuracy(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors, ThresholdPair t,
                   std::size_t draws, std::uint64_t seed) {
  testsupport::PdfSampler sp(pdf_p), sn(pdf_n);
  Rng rng(seed);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < draws; ++i) {
    const bool is_positive = rng.uniform() < priors.positive;
    const double s = is_positive ? sp.draw(rng) : sn.draw(rng);
    if (s > t.rb)
      correct += is_positive;
    else if (s < t.lb)
      correct += !is_positive;
    else
      correct += 1;  // oracle decides, always right
  }
  return static_cast<double>(correct) / static_cast<double>(draws);
}

}  // namespace

TEST_CASE("unfiltered_rate follows the inclusive-interval definition") {
  const ScoreSet s = scores_from({0.1, 0.5, 0.9});
  CHECK(unfiltered_rate(s, {0.0, 1.0}) == 1.0);
  CHECK(unfiltered_rate(s, {0.2, 0.8}) == doctest::Approx(1.0 / 3.0));
  CHECK(unfiltered_rate(s, {0.5, 0.5}) == doctest::Approx(1.0 / 3.0));  // closed bounds
  CHECK(unfiltered_rate(s, {0.95, 1.0}) == 0.0);
  CHECK_THROWS_AS(unfiltered_rate(ScoreSet{}, {0.0, 1.0}), Error);
  CHECK_THROWS_AS(unfiltered_rate(s, {0.8, 0.2}), Error);
}

TEST_CASE("estimate_accuracy") {
  const BinGrid grid = BinGrid::uniform(64);

  SUBCASE("everything oracle-served is exactly 1") {
    const Distribution p = random_distribution(grid, 1), n = random_distribution(grid, 2);
    CHECK(estimate_accuracy(p, n, {0.4, 0.6}, {0.0, 1.0}) == 1.0);
  }

  SUBCASE("perfectly separated classes need no oracle") {
    auto [p, n] = separated_pair();
    CHECK(estimate_accuracy(p, n, {0.5, 0.5}, {0.5, 0.5}) == 1.0);  // lb = rb mid-gap
  }

  SUBCASE("agrees with a Monte-Carlo simulation of the cascade rule") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Distribution p = random_distribution(grid, 300 + seed);
      const Distribution n = random_distribution(grid, 400 + seed);
      Rng rng(500 + seed);
      const double pi_p = 0.2 + 0.6 * rng.uniform();
      const ClassPriors priors{pi_p, 1.0 - pi_p};
      const double a = rng.uniform(), b = rng.uniform();
      const ThresholdPair t{std::min(a, b), std::max(a, b)};
      const double est = estimate_accuracy(p, n, priors, t);
      const double sim = mc_accuracy(p, n, priors, t, 400000, 600 + seed);
      CHECK(est == doctest::Approx(sim).epsilon(0.01));
      CHECK(std::abs(est - sim) < 4e-3);
    }
  }

  SUBCASE("grid mismatch and bad priors are errors") {
    const Distribution p = random_distribution(BinGrid::uniform(64), 1);
    const Distribution n32 = random_distribution(BinGrid::uniform(32), 2);
    CHECK_THROWS_AS(estimate_accuracy(p, n32, {0.5, 0.5}, {0.2, 0.8}), Error);
    const Distribution n = random_distribution(BinGrid::uniform(64), 2);
    CHECK_THROWS_AS(estimate_accuracy(p, n, {0.7, 0.7}, {0.2, 0.8}), Error);
  }
}

TEST_CASE("select_thresholds") {
  const BinGrid grid = BinGrid::uniform(64);

  SUBCASE("separated classes collapse the oracle interval") {
    auto [p, n] = separated_pair();
    const BinGrid g16 = p.grid();
    const ClassPriors priors{0.5, 0.5};
    // At alpha = 1 only gap points stay feasible when collapsed.
    const ThresholdPair t = select_thresholds(p, n, priors, g16, 1.0);
    CHECK(t.lb == t.rb);
    CHECK(t.lb >= 3.0 / 16.0);
    CHECK(t.rb <= 13.0 / 16.0);
    CHECK(estimated_unfiltered_mass(p, n, priors, t) == 0.0);
    CHECK(estimate_accuracy(p, n, priors, t) == 1.0);
    // Looser targets remain feasible with zero estimated mass as well.
    const ThresholdPair t9 = select_thresholds(p, n, priors, g16, 0.9);
    CHECK(estimate_accuracy(p, n, priors, t9) >= 0.9);
    CHECK(estimated_unfiltered_mass(p, n, priors, t9) == 0.0);
  }

  SUBCASE("identical overlapping classes at alpha 1 send everything to the oracle") {
    const Distribution p = random_distribution(grid, 77);
    const ClassPriors priors{0.5, 0.5};
    const ThresholdPair t = select_thresholds(p, p, priors, grid, 1.0);
    CHECK(t.lb == 0.0);
    CHECK(t.rb == 1.0);
    CHECK(estimated_unfiltered_mass(p, p, priors, t) == doctest::Approx(1.0).epsilon(1e-9));
  }

  SUBCASE("feasible and brute-force-optimal on random instances") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const Distribution p = random_distribution(grid, 1000 + seed);
      const Distribution n = random_distribution(grid, 2000 + seed);
      Rng rng(3000 + seed);
      const double pi_p = 0.1 + 0.8 * rng.uniform();
      const ClassPriors priors{pi_p, 1.0 - pi_p};
      const double alpha = 0.85 + 0.1 * rng.uniform();

      const ThresholdPair greedy = select_thresholds(p, n, priors, grid, alpha);
      const ThresholdPair brute = brute_force_thresholds(p, n, priors, grid, alpha);
      CHECK(estimate_accuracy(p, n, priors, greedy) >= alpha);
      CHECK(estimated_unfiltered_mass(p, n, priors, greedy) ==
            estimated_unfiltered_mass(p, n, priors, brute));
    }
  }

  SUBCASE("alpha bounds") {
    const Distribution p = random_distribution(grid, 5);
    CHECK_THROWS_AS(select_thresholds(p, p, {0.5, 0.5}, grid, 0.0), Error);
    CHECK_THROWS_AS(select_thresholds(p, p, {0.5, 0.5}, grid, 1.1), Error);
  }
}

TEST_CASE("brute_force_thresholds on the smallest grid") {
  const BinGrid grid = BinGrid::uniform(2);  // edges {0, 0.5, 1}: six ordered pairs
  std::vector<double> pv{0.0, 1.0, 3.0}, nv{3.0, 1.0, 0.0};
  const Distribution p(grid, pv, 0), n(grid, nv, 0);
  const ClassPriors priors{0.5, 0.5};

  const ThresholdPair t = brute_force_thresholds(p, n, priors, grid, 0.8);
  CHECK(estimate_accuracy(p, n, priors, t) >= 0.8);
  // exhaustively confirm optimality by hand over the six pairs
  double best = HUGE_VAL;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i; j < 3; ++j) {
      const ThresholdPair cand{grid.edges[i], grid.edges[j]};
      if (estimate_accuracy(p, n, priors, cand) < 0.8) continue;
      best = std::min(best, estimated_unfiltered_mass(p, n, priors, cand));
    }
  CHECK(estimated_unfiltered_mass(p, n, priors, t) == best);
}

TEST_CASE("monotonicity under interval widening") {
  const BinGrid grid = BinGrid::uniform(64);
  Rng rng(17);

  SUBCASE("empirical unfiltered rate") {
    std::vector<double> values(500);
    for (auto& v : values) v = rng.uniform();
    const ScoreSet scores = scores_from(values);
    for (int trial = 0; trial < 200; ++trial) {
      const double a = rng.uniform(), b = rng.uniform();
      ThresholdPair inner{std::min(a, b), std::max(a, b)};
      ThresholdPair outer{inner.lb * (1.0 - rng.uniform() * 0.9),
                          inner.rb + (1.0 - inner.rb) * rng.uniform() * 0.9};
      CHECK(unfiltered_rate(scores, outer) >= unfiltered_rate(scores, inner));
    }
  }

  SUBCASE("estimated accuracy") {
    const Distribution p = random_distribution(grid, 21);
    const Distribution n = random_distribution(grid, 22);
    const ClassPriors priors{0.35, 0.65};
    for (int trial = 0; trial < 200; ++trial) {
      const double a = rng.uniform(), b = rng.uniform();
      ThresholdPair inner{std::min(a, b), std::max(a, b)};
      ThresholdPair outer{inner.lb * (1.0 - rng.uniform() * 0.9),
                          inner.rb + (1.0 - inner.rb) * rng.uniform() * 0.9};
      CHECK(estimate_accuracy(p, n, priors, outer) >= estimate_accuracy(p, n, priors, inner) - 1e-12);
    }
  }
}

TEST_CASE("execute_cascade") {
  LabelSet truth;
  std::vector<double> values{0.05, 0.2, 0.45, 0.55, 0.8, 0.95};
  for (std::size_t i = 0; i < values.size(); ++i) truth.set("doc_" + std::to_string(i), i >= 3);
  const ScoreSet scores = scores_from(values);
  Workload workload;
  workload.query_text = "predicate";

  SUBCASE("everything to the oracle at (0, 1)") {
    MockOracle oracle(truth);
    const CascadeResult r = execute_cascade(scores, {0.0, 1.0}, oracle, workload);
    CHECK(r.ids == scores.ids());
    CHECK(r.count(Provenance::oracle) == scores.size());
    CHECK(r.unfiltered_rate == 1.0);
    CHECK(oracle.invocation_count() == scores.size());
    for (std::size_t i = 0; i < r.ids.size(); ++i) CHECK((r.labels[i] != 0) == truth.at(r.ids[i]));
  }

  SUBCASE("all scores above rb=0 classify positive with zero oracle calls") {
    MockOracle oracle(truth);
    const CascadeResult r = execute_cascade(scores, {0.0, 0.0}, oracle, workload);
    CHECK(r.count(Provenance::proxy_positive) == scores.size());
    CHECK(r.count(Provenance::oracle) == 0);
    CHECK(oracle.invocation_count() == 0);
  }

  SUBCASE("splits by provenance and conserves the document count") {
    MockOracle oracle(truth);
    const CascadeResult r = execute_cascade(scores, {0.3, 0.7}, oracle, workload);
    CHECK(r.count(Provenance::proxy_negative) == 2);  // 0.05, 0.2
    CHECK(r.count(Provenance::oracle) == 2);          // 0.45, 0.55
    CHECK(r.count(Provenance::proxy_positive) == 2);  // 0.8, 0.95
    CHECK(r.count(Provenance::proxy_positive) + r.count(Provenance::proxy_negative) +
              r.count(Provenance::oracle) ==
          scores.size());
    CHECK(r.unfiltered_rate == doctest::Approx(2.0 / 6.0));
    // boundary scores exactly at lb or rb go to the oracle
    const CascadeResult rb = execute_cascade(scores, {0.2, 0.8}, oracle, workload);
    CHECK(rb.count(Provenance::oracle) == 4);
  }

  SUBCASE("oracle failure carries completed decisions") {
    LabelSet partial_truth;  // missing doc_3 (score 0.55, inside [0.3, 0.7])
    for (std::size_t i = 0; i < values.size(); ++i)
      if (i != 3) partial_truth.set("doc_" + std::to_string(i), i >= 3);
    MockOracle oracle(partial_truth);
    CHECK_THROWS_AS(execute_cascade(scores, {0.3, 0.7}, oracle, workload), PartialResultError);
    try {
      execute_cascade(scores, {0.3, 0.7}, oracle, workload);
    } catch (const PartialResultError& e) {
      CHECK(e.partial().ids.size() == scores.size() - 1);  // everything but the failed doc
      CHECK(e.partial().count(Provenance::oracle) == 1);   // doc_2 succeeded
      CHECK(std::find(e.partial().ids.begin(), e.partial().ids.end(), "doc_3") == e.partial().ids.end());
    }
  }
}

TEST_CASE("cascade decisions JSONL round trip") {
  testsupport::TempDir dir("cascade");
  CascadeResult r;
  r.ids = {"a", "b", "c"};
  r.labels = {1, 0, 1};
  r.provenance = {Provenance::proxy_positive, Provenance::proxy_negative, Provenance::oracle};
  r.thresholds = {0.25, 0.75};
  r.unfiltered_rate = 1.0 / 3.0;
  r.save_jsonl(dir.path() / "d.jsonl");

  const CascadeResult loaded = CascadeResult::load_jsonl(dir.path() / "d.jsonl");
  CHECK(loaded.ids == r.ids);
  CHECK(loaded.labels == r.labels);
  CHECK(loaded.provenance == r.provenance);
  CHECK(loaded.oracle_calls == 1);
}
