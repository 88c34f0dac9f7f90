#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sempred/calibrate.hpp"
#include "sempred/oracle.hpp"
#include "sempred/proxy.hpp"

namespace sempred {

struct ThresholdPair {
  double lb = 0.0;
  double rb = 1.0;

  void validate() const {
    if (!(lb >= 0.0 && lb <= rb && rb <= 1.0))
      fail(ErrorCode::invalid_argument, "thresholds must satisfy 0 <= lb <= rb <= 1");
  }
};

// Fraction of scores inside the closed interval [lb, rb].
double unfiltered_rate(const ScoreSet& scores, ThresholdPair t);

// Acc(lb, rb): proxy-correct mass in the filtered regions plus the full
// oracle-served mass, under the reconstructed class densities and priors.
double estimate_accuracy(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors,
                         ThresholdPair t);

// PDF-estimated mass of the oracle interval; the quantity threshold selection
// minimizes.
double estimated_unfiltered_mass(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors,
                                 ThresholdPair t);

// Frontier-walk selection over grid edges: boundary identification, greedy
// traversal tightening lb when feasible, then the path point with minimal
// estimated unfiltered mass. Always returns a pair with accuracy >= alpha.
ThresholdPair select_thresholds(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors,
                                const BinGrid& grid, double alpha);

// Exhaustive O(E^2) reference: minimal estimated unfiltered mass over all
// feasible edge pairs; ties broken toward the smallest lb, then smallest rb.
ThresholdPair brute_force_thresholds(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors,
                                     const BinGrid& grid, double alpha);

enum class Provenance { proxy_positive, proxy_negative, oracle };

const char* provenance_name(Provenance p);

struct CascadeResult {
  std::vector<std::string> ids;  // collection order
  std::vector<std::uint8_t> labels;
  std::vector<Provenance> provenance;
  ThresholdPair thresholds;
  double unfiltered_rate = 0.0;
  double estimated_accuracy = 1.0;
  std::size_t oracle_calls = 0;

  std::size_t count(Provenance p) const;
  void save_jsonl(const std::filesystem::path& path) const;
  static CascadeResult load_jsonl(const std::filesystem::path& path);
};

// Thrown when the oracle fails mid-cascade; carries every decision completed
// before the failure.
class PartialResultError : public Error {
 public:
  PartialResultError(std::string msg, CascadeResult partial)
      : Error(ErrorCode::oracle, std::move(msg)), partial_(std::move(partial)) {}
  const CascadeResult& partial() const { return partial_; }

 private:
  CascadeResult partial_;
};

// Scores > rb are proxy positives, scores < lb proxy negatives, and the
// closed ambiguous interval goes to the oracle.
CascadeResult execute_cascade(const ScoreSet& scores, ThresholdPair t, Oracle& oracle, const Workload& workload);

}  // namespace sempred
