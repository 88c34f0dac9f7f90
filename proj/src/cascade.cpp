#include "sempred/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace sempred {

namespace {

using ordered_json = nlohmann::ordered_json;

void check_same_grid(const Distribution& pdf_p, const Distribution& pdf_n) {
  if (!(pdf_p.grid() == pdf_n.grid()))
    fail(ErrorCode::invalid_argument, "class distributions use different grids");
}

void check_priors(ClassPriors priors) {
  if (!(priors.positive >= 0.0 && priors.negative >= 0.0 &&
        std::abs(priors.positive + priors.negative - 1.0) < 1e-9))
    fail(ErrorCode::invalid_argument, "class priors must be non-negative and sum to 1");
}

}  // namespace

double unfiltered_rate(const ScoreSet& scores, ThresholdPair t) {
  t.validate();
  if (scores.size() == 0) fail(ErrorCode::invalid_argument, "unfiltered_rate: empty score set");
  std::size_t inside = 0;
  for (double s : scores.values()) inside += (s >= t.lb && s <= t.rb);
  return static_cast<double>(inside) / static_cast<double>(scores.size());
}

double estimate_accuracy(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors,
                         ThresholdPair t) {
  t.validate();
  check_same_grid(pdf_p, pdf_n);
  check_priors(priors);
  if (t.lb <= 0.0 && t.rb >= 1.0) return 1.0;  // everything oracle-served
  const double proxy_pos = priors.positive * pdf_p.mass_between(t.rb, 1.0);  // true positives above rb
  const double proxy_neg = priors.negative * pdf_n.mass_between(0.0, t.lb);  // true negatives below lb
  const double oracle_mass = priors.positive * pdf_p.mass_between(t.lb, t.rb) +
                             priors.negative * pdf_n.mass_between(t.lb, t.rb);
  return std::clamp(proxy_pos + proxy_neg + oracle_mass, 0.0, 1.0);
}

double estimated_unfiltered_mass(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors,
                                 ThresholdPair t) {
  t.validate();
  check_same_grid(pdf_p, pdf_n);
  check_priors(priors);
  return std::clamp(priors.positive * pdf_p.mass_between(t.lb, t.rb) +
                        priors.negative * pdf_n.mass_between(t.lb, t.rb),
                    0.0, 1.0);
}

ThresholdPair select_thresholds(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors,
                                const BinGrid& grid, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorCode::invalid_argument, "alpha must be in (0, 1]");
  check_same_grid(pdf_p, pdf_n);
  if (!(pdf_p.grid() == grid)) fail(ErrorCode::invalid_argument, "selection grid differs from distribution grid");

  const auto& edges = grid.edges;
  const int last = static_cast<int>(edges.size()) - 1;
  auto feasible = [&](int li, int ri) {
    return estimate_accuracy(pdf_p, pdf_n, priors,
                             {edges[static_cast<std::size_t>(li)], edges[static_cast<std::size_t>(ri)]}) >= alpha;
  };

  // Boundary identification: tightest lb against the most conservative rb,
  // and tightest rb against the most conservative lb. Accuracy is monotone in
  // each coordinate, so both scans stop at the first failure.
  int l0 = 0;
  for (int i = 0; i <= last; ++i) {
    if (feasible(i, last))
      l0 = i;
    else
      break;
  }
  int r0 = last;
  for (int j = last; j >= 0; --j) {
    if (feasible(0, j))
      r0 = j;
    else
      break;
  }

  // Frontier traversal between the extreme points (l_s, r0) and (l0, r_s),
  // stepping one edge at a time and preferring to tighten lb while that
  // preserves feasibility. Every visited pair is feasible, and for each rb
  // the walk reaches the tightest feasible lb, so the whole frontier is on
  // the path.
  int li = 0, ri = r0;
  std::vector<std::pair<int, int>> path{{li, ri}};
  while (li != l0 || ri != last) {
    if (li + 1 <= ri && feasible(li + 1, ri)) {
      ++li;
    } else {
      ++ri;
    }
    path.emplace_back(li, ri);
  }

  // Optimal point: minimal estimated unfiltered mass; first along the path on
  // ties.
  ThresholdPair best{edges[static_cast<std::size_t>(path[0].first)], edges[static_cast<std::size_t>(path[0].second)]};
  double best_u = estimated_unfiltered_mass(pdf_p, pdf_n, priors, best);
  for (std::size_t k = 1; k < path.size(); ++k) {
    ThresholdPair cand{edges[static_cast<std::size_t>(path[k].first)],
                       edges[static_cast<std::size_t>(path[k].second)]};
    const double u = estimated_unfiltered_mass(pdf_p, pdf_n, priors, cand);
    if (u < best_u) {
      best_u = u;
      best = cand;
    }
  }
  return best;
}

ThresholdPair brute_force_thresholds(const Distribution& pdf_p, const Distribution& pdf_n, ClassPriors priors,
                                     const BinGrid& grid, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorCode::invalid_argument, "alpha must be in (0, 1]");
  check_same_grid(pdf_p, pdf_n);
  if (!(pdf_p.grid() == grid)) fail(ErrorCode::invalid_argument, "selection grid differs from distribution grid");

  const auto& edges = grid.edges;
  bool found = false;
  ThresholdPair best{0.0, 1.0};
  double best_u = HUGE_VAL;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    for (std::size_t j = i; j < edges.size(); ++j) {
      const ThresholdPair cand{edges[i], edges[j]};
      if (estimate_accuracy(pdf_p, pdf_n, priors, cand) < alpha) continue;
      const double u = estimated_unfiltered_mass(pdf_p, pdf_n, priors, cand);
      if (!found || u < best_u) {
        found = true;
        best_u = u;
        best = cand;
      }
    }
  }
  // (0, 1) is always feasible: everything oracle-served is exactly correct.
  if (!found) best = {0.0, 1.0};
  return best;
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::proxy_positive:
      return "proxy_positive";
    case Provenance::proxy_negative:
      return "proxy_negative";
    case Provenance::oracle:
      return "oracle";
  }
  return "unknown";
}

std::size_t CascadeResult::count(Provenance p) const {
  std::size_t n = 0;
  for (auto pr : provenance) n += pr == p;
  return n;
}

void CascadeResult::save_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write decisions: " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ordered_json j;
    j["doc_id"] = ids[i];
    j["label"] = labels[i] != 0;
    j["provenance"] = provenance_name(provenance[i]);
    out << j.dump() << '\n';
  }
  if (!out) fail(ErrorCode::io, "write failure: " + path.string());
}

CascadeResult CascadeResult::load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open decisions: " + path.string());
  CascadeResult r;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("doc_id") || !j.contains("label") || !j.contains("provenance"))
      fail(ErrorCode::format, path.string() + ":" + std::to_string(lineno) + ": malformed decision line");
    r.ids.push_back(j["doc_id"].get<std::string>());
    r.labels.push_back(j["label"].get<bool>() ? 1 : 0);
    const std::string p = j["provenance"].get<std::string>();
    if (p == "proxy_positive")
      r.provenance.push_back(Provenance::proxy_positive);
    else if (p == "proxy_negative")
      r.provenance.push_back(Provenance::proxy_negative);
    else if (p == "oracle")
      r.provenance.push_back(Provenance::oracle);
    else
      fail(ErrorCode::format, path.string() + ":" + std::to_string(lineno) + ": unknown provenance " + p);
  }
  r.oracle_calls = r.count(Provenance::oracle);
  return r;
}

CascadeResult execute_cascade(const ScoreSet& scores, ThresholdPair t, Oracle& oracle, const Workload& workload) {
  t.validate();
  if (scores.size() == 0) fail(ErrorCode::invalid_argument, "execute_cascade: empty score set");

  CascadeResult result;
  result.thresholds = t;
  result.unfiltered_rate = unfiltered_rate(scores, t);
  result.ids = scores.ids();
  result.labels.assign(scores.size(), 0);
  result.provenance.assign(scores.size(), Provenance::oracle);

  std::vector<std::string> ambiguous;
  std::vector<std::size_t> ambiguous_index;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores.values()[i];
    if (s > t.rb) {
      result.labels[i] = 1;
      result.provenance[i] = Provenance::proxy_positive;
    } else if (s < t.lb) {
      result.labels[i] = 0;
      result.provenance[i] = Provenance::proxy_negative;
    } else {
      ambiguous.push_back(scores.ids()[i]);
      ambiguous_index.push_back(i);
    }
  }

  result.oracle_calls = ambiguous.size();
  if (!ambiguous.empty()) {
    Oracle::BatchLabelResult batch = oracle.try_label_batch(workload.query_text, ambiguous);
    if (!batch.all_ok) {
      // Keep what completed: drop undecided documents from the partial
      // result before reporting the failure.
      CascadeResult partial;
      partial.thresholds = t;
      partial.unfiltered_rate = result.unfiltered_rate;
      for (std::size_t i = 0, a = 0; i < result.ids.size(); ++i) {
        if (result.provenance[i] == Provenance::oracle) {
          const std::size_t k = a++;
          if (batch.ok[k] == 0) continue;
          partial.ids.push_back(result.ids[i]);
          partial.labels.push_back(batch.labels[k]);
          partial.provenance.push_back(Provenance::oracle);
        } else {
          partial.ids.push_back(result.ids[i]);
          partial.labels.push_back(result.labels[i]);
          partial.provenance.push_back(result.provenance[i]);
        }
      }
      partial.oracle_calls = partial.count(Provenance::oracle);
      throw PartialResultError("oracle failure during cascade: " + batch.first_error, std::move(partial));
    }
    for (std::size_t k = 0; k < ambiguous_index.size(); ++k) result.labels[ambiguous_index[k]] = batch.labels[k];
  }
  return result;
}

}  // namespace sempred
