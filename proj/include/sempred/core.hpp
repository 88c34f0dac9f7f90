#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sempred/common.hpp"

namespace sempred {

// Immutable collection of D-dimensional embeddings keyed by document id.
// Row-major f32 storage matches the on-disk payload exactly.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(int dim) : dim_(dim) {}

  void add(std::string doc_id, std::vector<float> embedding);

  int dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> embedding(std::size_t i) const {
    return {data_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  std::optional<std::size_t> index_of(std::string_view doc_id) const;
  std::span<const float> embedding_of(std::string_view doc_id) const;
  const std::vector<float>& raw() const { return data_; }

 private:
  int dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Boolean predicate labels, insertion-ordered for deterministic output.
class LabelSet {
 public:
  void set(const std::string& doc_id, bool label);
  bool contains(std::string_view doc_id) const;
  bool at(std::string_view doc_id) const;
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, bool>>& entries() const { return entries_; }

  static LabelSet load_jsonl(const std::filesystem::path& path);
  void save_jsonl(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, bool>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Workload {
  std::string query_text;
  std::vector<float> query_embedding;
  EmbeddingStore collection;
  double accuracy_target = 0.9;

  void validate() const;
};

EmbeddingStore load_embeddings(const std::filesystem::path& manifest_path);
void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& manifest_path);

// Loads a single-row store and returns its embedding (query vectors reuse the
// embedding file format).
std::vector<float> load_query_embedding(const std::filesystem::path& manifest_path);

// Uniform disjoint split: |train| = round(train_fraction * N). Both lists are
// returned in store order.
std::pair<std::vector<std::string>, std::vector<std::string>> split_sample(
    const EmbeddingStore& store, double train_fraction, std::uint64_t seed);

}  // namespace sempred
