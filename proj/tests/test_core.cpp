#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "sempred/core.hpp"
#include "support/helpers.hpp"

using namespace sempred;
using testsupport::TempDir;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string payload_of_floats(const std::vector<float>& values) {
  std::string bytes;
  for (float f : values) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    bytes.push_back(static_cast<char>(u & 0xff));
    bytes.push_back(static_cast<char>((u >> 8) & 0xff));
    bytes.push_back(static_cast<char>((u >> 16) & 0xff));
    bytes.push_back(static_cast<char>((u >> 24) & 0xff));
  }
  return bytes;
}

std::string manifest_3x4(const std::string& payload_name) {
  nlohmann::json m;
  m["version"] = 1;
  m["count"] = 3;
  m["dim"] = 4;
  m["payload"] = payload_name;
  m["dtype"] = "f32le";
  m["doc_ids"] = {"a", "b", "c"};
  return m.dump();
}

}  // namespace

TEST_CASE("load_embeddings reads a declared 3x4 store") {
  TempDir dir("core");
  write_file(dir.path() / "m.json", manifest_3x4("m.f32"));
  std::vector<float> values(12);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(i) * 0.5f;
  write_file(dir.path() / "m.f32", payload_of_floats(values));

  const EmbeddingStore store = load_embeddings(dir.path() / "m.json");
  CHECK(store.size() == 3);
  CHECK(store.dim() == 4);
  CHECK(store.id(1) == "b");
  CHECK(store.embedding(2)[3] == doctest::Approx(5.5f));
}

TEST_CASE("load_embeddings rejects a short payload") {
  TempDir dir("core");
  write_file(dir.path() / "m.json", manifest_3x4("m.f32"));
  write_file(dir.path() / "m.f32", payload_of_floats(std::vector<float>(11, 1.0f)));
  CHECK_THROWS_WITH_AS(load_embeddings(dir.path() / "m.json"), doctest::Contains("payload size mismatch"), Error);
}

TEST_CASE("load_embeddings rejects non-finite values and duplicate ids") {
  TempDir dir("core");
  SUBCASE("non-finite") {
    write_file(dir.path() / "m.json", manifest_3x4("m.f32"));
    std::vector<float> values(12, 1.0f);
    values[5] = std::numeric_limits<float>::infinity();
    write_file(dir.path() / "m.f32", payload_of_floats(values));
    CHECK_THROWS_WITH_AS(load_embeddings(dir.path() / "m.json"), doctest::Contains("non-finite"), Error);
  }
  SUBCASE("duplicate doc_id") {
    nlohmann::json m = nlohmann::json::parse(manifest_3x4("m.f32"));
    m["doc_ids"] = {"a", "a", "c"};
    write_file(dir.path() / "m.json", m.dump());
    write_file(dir.path() / "m.f32", payload_of_floats(std::vector<float>(12, 1.0f)));
    CHECK_THROWS_WITH_AS(load_embeddings(dir.path() / "m.json"), doctest::Contains("duplicate doc_id"), Error);
  }
}

TEST_CASE("load_embeddings reports a missing file") {
  TempDir dir("core");
  CHECK_THROWS_AS(load_embeddings(dir.path() / "nope.json"), Error);
}

TEST_CASE("save/load round trip is bit-exact on random data") {
  TempDir dir("core");
  const EmbeddingStore store = testsupport::random_store(1000, 8, 99);
  save_embeddings(store, dir.path() / "store.json");
  const EmbeddingStore loaded = load_embeddings(dir.path() / "store.json");

  REQUIRE(loaded.size() == store.size());
  REQUIRE(loaded.dim() == store.dim());
  CHECK(loaded.raw() == store.raw());  // identical f32 bit patterns
  CHECK(loaded.ids() == store.ids());
}

TEST_CASE("save_embeddings emits count 0 for an empty store and 4*D bytes per doc") {
  TempDir dir("core");
  SUBCASE("empty store") {
    EmbeddingStore empty(5);
    save_embeddings(empty, dir.path() / "empty.json");
    const auto loaded = load_embeddings(dir.path() / "empty.json");
    CHECK(loaded.size() == 0);
    CHECK(std::filesystem::file_size(dir.path() / "empty.f32") == 0);
  }
  SUBCASE("one doc") {
    EmbeddingStore one(7);
    one.add("d", std::vector<float>(7, 1.5f));
    save_embeddings(one, dir.path() / "one.json");
    CHECK(std::filesystem::file_size(dir.path() / "one.f32") == 4 * 7);
  }
}

TEST_CASE("split_sample sizes and determinism") {
  const EmbeddingStore store = testsupport::random_store(10000, 4, 7);
  auto [train, rest] = split_sample(store, 0.10, 42);
  CHECK(train.size() == 1000);
  CHECK(rest.size() == 9000);

  auto [train2, rest2] = split_sample(store, 0.10, 42);
  CHECK(train == train2);
  CHECK(rest == rest2);

  auto [train3, rest3] = split_sample(store, 0.10, 43);
  CHECK(train != train3);
}

TEST_CASE("split_sample partitions the store") {
  const EmbeddingStore store = testsupport::random_store(257, 3, 1);
  auto [it_train, it_rest] = split_sample(store, 0.37, 5);
  std::set<std::string> all(it_train.begin(), it_train.end());
  for (const auto& id : it_rest) CHECK(all.insert(id).second);  // disjoint
  CHECK(all.size() == store.size());
}

TEST_CASE("split_sample edge cases") {
  const EmbeddingStore store2 = testsupport::random_store(2, 3, 1);
  auto [train, rest] = split_sample(store2, 0.5, 9);
  CHECK(train.size() == 1);
  CHECK(rest.size() == 1);

  CHECK_THROWS_AS(split_sample(store2, 0.0, 1), Error);
  CHECK_THROWS_AS(split_sample(store2, 1.0, 1), Error);
  EmbeddingStore empty(3);
  CHECK_THROWS_AS(split_sample(empty, 0.5, 1), Error);
}

TEST_CASE("LabelSet JSONL round trip and lookups") {
  TempDir dir("core");
  LabelSet labels;
  labels.set("x", true);
  labels.set("y", false);
  labels.set("z", true);
  labels.save_jsonl(dir.path() / "labels.jsonl");
  const LabelSet loaded = LabelSet::load_jsonl(dir.path() / "labels.jsonl");
  CHECK(loaded.size() == 3);
  CHECK(loaded.at("x"));
  CHECK_FALSE(loaded.at("y"));
  CHECK(loaded.entries() == labels.entries());
  CHECK_THROWS_AS(loaded.at("missing"), Error);
}

TEST_CASE("workload validation") {
  Workload w;
  w.query_text = "q";
  w.collection = testsupport::random_store(10, 4, 3);
  w.query_embedding = {1.0f, 2.0f, 3.0f};  // wrong dimension
  w.accuracy_target = 0.9;
  CHECK_THROWS_AS(w.validate(), Error);
  w.query_embedding = {1.0f, 2.0f, 3.0f, 4.0f};
  CHECK_NOTHROW(w.validate());
  w.accuracy_target = 0.0;
  CHECK_THROWS_AS(w.validate(), Error);
  w.accuracy_target = 1.5;
  CHECK_THROWS_AS(w.validate(), Error);
}
