#include "sempred/core.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace sempred {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open file: " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) fail(ErrorCode::io, "short read: " + path.string());
  return bytes;
}

float f32_from_le(const std::uint8_t* p) {
  std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                    (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

void f32_to_le(float f, std::uint8_t* p) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  p[0] = static_cast<std::uint8_t>(u & 0xff);
  p[1] = static_cast<std::uint8_t>((u >> 8) & 0xff);
  p[2] = static_cast<std::uint8_t>((u >> 16) & 0xff);
  p[3] = static_cast<std::uint8_t>((u >> 24) & 0xff);
}

ordered_json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open file: " + path.string());
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::format, "invalid JSON in " + path.string());
  return j;
}

}  // namespace

void EmbeddingStore::add(std::string doc_id, std::vector<float> embedding) {
  if (static_cast<int>(embedding.size()) != dim_)
    fail(ErrorCode::invalid_argument,
         "embedding for '" + doc_id + "' has dimension " + std::to_string(embedding.size()) +
             ", store expects " + std::to_string(dim_));
  for (float v : embedding)
    if (!std::isfinite(v)) fail(ErrorCode::invalid_argument, "non-finite value in embedding '" + doc_id + "'");
  if (index_.contains(doc_id)) fail(ErrorCode::invalid_argument, "duplicate doc_id: " + doc_id);
  index_.emplace(doc_id, ids_.size());
  ids_.push_back(std::move(doc_id));
  data_.insert(data_.end(), embedding.begin(), embedding.end());
}

std::optional<std::size_t> EmbeddingStore::index_of(std::string_view doc_id) const {
  auto it = index_.find(std::string(doc_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> EmbeddingStore::embedding_of(std::string_view doc_id) const {
  auto idx = index_of(doc_id);
  if (!idx) fail(ErrorCode::invalid_argument, "unknown doc_id: " + std::string(doc_id));
  return embedding(*idx);
}

void LabelSet::set(const std::string& doc_id, bool label) {
  auto it = index_.find(doc_id);
  if (it != index_.end()) {
    entries_[it->second].second = label;
    return;
  }
  index_.emplace(doc_id, entries_.size());
  entries_.emplace_back(doc_id, label);
}

bool LabelSet::contains(std::string_view doc_id) const { return index_.contains(std::string(doc_id)); }

bool LabelSet::at(std::string_view doc_id) const {
  auto it = index_.find(std::string(doc_id));
  if (it == index_.end()) fail(ErrorCode::invalid_argument, "no label for doc_id: " + std::string(doc_id));
  return entries_[it->second].second;
}

LabelSet LabelSet::load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open label file: " + path.string());
  LabelSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("doc_id") || !j.contains("label") || !j["label"].is_boolean())
      fail(ErrorCode::format, path.string() + ":" + std::to_string(lineno) + ": expected {\"doc_id\",\"label\"}");
    out.set(j["doc_id"].get<std::string>(), j["label"].get<bool>());
  }
  return out;
}

void LabelSet::save_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write label file: " + path.string());
  for (const auto& [id, label] : entries_) {
    ordered_json j;
    j["doc_id"] = id;
    j["label"] = label;
    out << j.dump() << '\n';
  }
  if (!out) fail(ErrorCode::io, "write failure: " + path.string());
}

void Workload::validate() const {
  if (static_cast<int>(query_embedding.size()) != collection.dim())
    fail(ErrorCode::invalid_argument, "query embedding dimension does not match collection");
  if (!(accuracy_target > 0.0 && accuracy_target <= 1.0))
    fail(ErrorCode::invalid_argument, "accuracy_target must be in (0, 1]");
}

EmbeddingStore load_embeddings(const std::filesystem::path& manifest_path) {
  const ordered_json m = parse_json_file(manifest_path);
  for (const char* key : {"version", "count", "dim", "payload", "dtype", "doc_ids"})
    if (!m.contains(key)) fail(ErrorCode::format, "manifest missing field '" + std::string(key) + "'");
  if (m["version"].get<int>() != 1) fail(ErrorCode::format, "unsupported manifest version");
  if (m["dtype"].get<std::string>() != "f32le") fail(ErrorCode::format, "unsupported dtype (expected f32le)");
  const auto count = m["count"].get<std::size_t>();
  const int dim = m["dim"].get<int>();
  if (dim <= 0) fail(ErrorCode::format, "manifest dim must be positive");
  const auto& doc_ids = m["doc_ids"];
  if (doc_ids.size() != count) fail(ErrorCode::format, "doc_ids length does not match count");

  const auto payload_path = manifest_path.parent_path() / m["payload"].get<std::string>();
  const auto bytes = read_file_bytes(payload_path);
  const std::size_t expected = count * static_cast<std::size_t>(dim) * 4;
  if (bytes.size() != expected)
    fail(ErrorCode::format, "payload size mismatch: expected " + std::to_string(expected) + " bytes for " +
                                std::to_string(count) + "x" + std::to_string(dim) + ", got " +
                                std::to_string(bytes.size()));

  EmbeddingStore store(dim);
  std::vector<float> row(static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* base = bytes.data() + i * static_cast<std::size_t>(dim) * 4;
    for (int d = 0; d < dim; ++d) row[static_cast<std::size_t>(d)] = f32_from_le(base + d * 4);
    store.add(doc_ids[i].get<std::string>(), row);
  }
  return store;
}

void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& manifest_path) {
  std::filesystem::path payload_name = manifest_path.filename();
  payload_name.replace_extension(".f32");
  const auto payload_path = manifest_path.parent_path() / payload_name;

  std::vector<std::uint8_t> bytes(store.size() * static_cast<std::size_t>(store.dim()) * 4);
  const auto& raw = store.raw();
  for (std::size_t i = 0; i < raw.size(); ++i) f32_to_le(raw[i], bytes.data() + i * 4);
  {
    std::ofstream out(payload_path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write payload: " + payload_path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "write failure: " + payload_path.string());
  }

  ordered_json m;
  m["version"] = 1;
  m["count"] = store.size();
  m["dim"] = store.dim();
  m["payload"] = payload_name.string();
  m["dtype"] = "f32le";
  m["doc_ids"] = store.ids();
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write manifest: " + manifest_path.string());
  out << m.dump(2) << '\n';
  if (!out) fail(ErrorCode::io, "write failure: " + manifest_path.string());
}

std::vector<float> load_query_embedding(const std::filesystem::path& manifest_path) {
  EmbeddingStore store = load_embeddings(manifest_path);
  if (store.size() != 1)
    fail(ErrorCode::format, "query manifest must contain exactly one row, got " + std::to_string(store.size()));
  auto e = store.embedding(0);
  return {e.begin(), e.end()};
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_sample(const EmbeddingStore& store,
                                                                           double train_fraction,
                                                                           std::uint64_t seed) {
  if (store.size() == 0) fail(ErrorCode::invalid_argument, "split_sample: empty store");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail(ErrorCode::invalid_argument, "split_sample: train_fraction must be in (0, 1)");
  const std::size_t n = store.size();
  const auto k = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 11));
  rng.shuffle(order);

  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < k; ++i) in_train[order[i]] = true;

  std::vector<std::string> train, rest;
  train.reserve(k);
  rest.reserve(n - k);
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? train : rest).push_back(store.id(i));
  return {std::move(train), std::move(rest)};
}

}  // namespace sempred
