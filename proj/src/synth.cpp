#include "sempred/synth.hpp"

#include <cmath>

namespace sempred {

void SynthSpec::validate() const {
  if (n_docs < 10) fail(ErrorCode::invalid_argument, "n_docs must be >= 10");
  if (dim < 2) fail(ErrorCode::invalid_argument, "dim must be >= 2");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
    fail(ErrorCode::invalid_argument, "positive_fraction must be in (0, 1)");
  if (!(separation >= 0.0)) fail(ErrorCode::invalid_argument, "separation must be >= 0");
  if (!(noise_sigma > 0.0)) fail(ErrorCode::invalid_argument, "noise_sigma must be positive");
  if (!(accuracy_target > 0.0 && accuracy_target <= 1.0))
    fail(ErrorCode::invalid_argument, "accuracy_target must be in (0, 1]");
}

std::pair<Workload, LabelSet> generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 51));
  const auto dim = static_cast<std::size_t>(spec.dim);

  auto unit_vector = [&]() {
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (auto& x : v) x /= norm;
    return v;
  };

  const std::vector<double> mean_pos = unit_vector();
  const std::vector<double> offset_dir = unit_vector();
  std::vector<double> mean_neg(dim);
  for (std::size_t d = 0; d < dim; ++d)
    mean_neg[d] = mean_pos[d] + spec.separation * spec.noise_sigma * offset_dir[d];

  const auto n_pos = static_cast<std::size_t>(std::lround(spec.positive_fraction * static_cast<double>(spec.n_docs)));
  std::vector<std::uint8_t> is_positive(spec.n_docs, 0);
  for (std::size_t i = 0; i < n_pos; ++i) is_positive[i] = 1;
  rng.shuffle(is_positive);

  int id_width = 1;
  for (std::size_t v = spec.n_docs; v >= 10; v /= 10) ++id_width;

  EmbeddingStore store(spec.dim);
  LabelSet labels;
  std::vector<float> row(dim);
  for (std::size_t i = 0; i < spec.n_docs; ++i) {
    const auto& mean = is_positive[i] ? mean_pos : mean_neg;
    for (std::size_t d = 0; d < dim; ++d)
      row[d] = static_cast<float>(mean[d] + spec.noise_sigma * rng.normal());
    std::string id = std::to_string(i);
    if (static_cast<int>(id.size()) < id_width) id.insert(0, static_cast<std::size_t>(id_width) - id.size(), '0');
    id = "doc_" + id;
    store.add(id, row);
    labels.set(id, is_positive[i] != 0);
  }

  Workload workload;
  workload.query_text = spec.query_text;
  workload.query_embedding.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) workload.query_embedding[d] = static_cast<float>(mean_pos[d]);
  workload.collection = std::move(store);
  workload.accuracy_target = spec.accuracy_target;
  workload.validate();
  return {std::move(workload), std::move(labels)};
}

std::vector<std::pair<Workload, LabelSet>> selectivity_sweep(const SynthSpec& base,
                                                             std::span<const double> fractions) {
  std::vector<std::pair<Workload, LabelSet>> out;
  out.reserve(fractions.size());
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    SynthSpec spec = base;
    spec.positive_fraction = fractions[i];
    spec.seed = derive_seed(base.seed, 61 + i);
    out.push_back(generate(spec));
  }
  return out;
}

}  // namespace sempred
