#include <doctest.h>

#include <cstring>
#include <fstream>

#include "muse/checksum.hpp"
#include "muse/embedding_store.hpp"
#include "muse/error.hpp"
#include "test_util.hpp"

using namespace muse;
using muse::test::TempDir;

namespace {

EmbeddingTable make_table(uint32_t dim, const std::vector<std::pair<uint64_t, std::vector<float>>> &rows) {
  EmbeddingTable t(dim);
  for (const auto &[id, v] : rows) t.insert(id, v);
  return t;
}

}  // namespace

TEST_SUITE("embedding_store") {

TEST_CASE("save/load round trip preserves content") {
  TempDir dir("emb");
  EmbeddingTable t = make_table(2, {{1, {1.f, 0.f}}, {7, {3.f, 4.f}}, {42, {0.5f, 0.5f}}});
  const std::string path = dir.file("t.museemb");
  t.save(path);

  EmbeddingTable back = EmbeddingTable::load(path, 2);
  CHECK(back == t);
  CHECK(back.size() == 3);
  CHECK(back.dim() == 2);

  // sidecar manifest exists and records the right counts
  std::ifstream mf(path + ".manifest.json");
  REQUIRE(mf.good());
  std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"count\": 3") != std::string::npos);
  CHECK(text.find("\"dim\": 2") != std::string::npos);
}

TEST_CASE("declared dim mismatch is a schema error") {
  TempDir dir("emb");
  EmbeddingTable t = make_table(127, {{1, std::vector<float>(127, 0.1f)}});
  const std::string path = dir.file("t.museemb");
  t.save(path);
  CHECK_THROWS_WITH_AS(EmbeddingTable::load(path, 128),
                       doctest::Contains("schema error"), MuseError);
}

TEST_CASE("duplicate id on load is an integrity error naming the id") {
  TempDir dir("emb");
  const std::string path = dir.file("dup.museemb");
  {
    std::ofstream out(path, std::ios::binary);
    out.write("MUSEEMB1", 8);
    uint32_t dim = 2;
    uint64_t count = 2;
    out.write(reinterpret_cast<char *>(&dim), 4);
    out.write(reinterpret_cast<char *>(&count), 8);
    for (int rep = 0; rep < 2; ++rep) {
      uint64_t id = 7;
      float v[2] = {1.f, 0.f};
      out.write(reinterpret_cast<char *>(&id), 8);
      out.write(reinterpret_cast<char *>(v), 8);
    }
  }
  CHECK_THROWS_WITH_AS(EmbeddingTable::load(path, 2), doctest::Contains("7"), MuseError);
}

TEST_CASE("truncated file reports a parse error with byte offset") {
  TempDir dir("emb");
  const std::string path = dir.file("trunc.museemb");
  {
    std::ofstream out(path, std::ios::binary);
    out.write("MUSEEMB1", 8);
    uint32_t dim = 2;
    uint64_t count = 2;
    out.write(reinterpret_cast<char *>(&dim), 4);
    out.write(reinterpret_cast<char *>(&count), 8);
    uint64_t id = 1;
    float v[2] = {1.f, 0.f};
    out.write(reinterpret_cast<char *>(&id), 8);
    out.write(reinterpret_cast<char *>(v), 8);
    // second record cut short
    id = 2;
    out.write(reinterpret_cast<char *>(&id), 8);
    out.write(reinterpret_cast<char *>(v), 4);
  }
  CHECK_THROWS_WITH_AS(EmbeddingTable::load(path, 2),
                       doctest::Contains("parse error at byte"), MuseError);
}

TEST_CASE("bad magic is rejected") {
  TempDir dir("emb");
  const std::string path = dir.file("bad.museemb");
  std::ofstream(path, std::ios::binary) << "NOTMAGIC and rubbish";
  CHECK_THROWS_WITH_AS(EmbeddingTable::load(path, 2), doctest::Contains("bad magic"),
                       MuseError);
}

TEST_CASE("normalize scales to unit norm") {
  EmbeddingTable t = make_table(2, {{1, {3.f, 4.f}}, {2, {1.f, 0.f}}});
  t.normalize();
  auto v1 = t.lookup(1, LookupMode::strict);
  CHECK(v1[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(v1[1] == doctest::Approx(0.8).epsilon(1e-6));
  auto v2 = t.lookup(2, LookupMode::strict);  // already unit: unchanged
  CHECK(v2[0] == 1.0f);
  CHECK(v2[1] == 0.0f);
  CHECK(t.normalized());
}

TEST_CASE("normalize is idempotent to 1e-12") {
  Rng rng(3);
  EmbeddingTable t(16);
  std::vector<float> v(16);
  for (uint64_t id = 1; id <= 50; ++id) {
    for (auto &x : v) x = float(rng.uniform(-2, 2));
    t.insert(id, v);
  }
  t.normalize();
  EmbeddingTable once = t;
  t.normalize();
  for (uint64_t id = 1; id <= 50; ++id) {
    auto a = once.lookup(id, LookupMode::strict);
    auto b = t.lookup(id, LookupMode::strict);
    for (size_t d = 0; d < 16; ++d) CHECK(std::abs(double(a[d]) - double(b[d])) < 1e-12);
  }
}

TEST_CASE("zero vector fails normalization naming the item") {
  EmbeddingTable t = make_table(2, {{9, {0.f, 0.f}}});
  CHECK_THROWS_WITH_AS(t.normalize(), doctest::Contains("9"), MuseError);
}

TEST_CASE("strict lookup of missing id throws; permissive returns zeros and counts") {
  EmbeddingTable t = make_table(3, {{1, {1.f, 0.f, 0.f}}});
  CHECK_THROWS_WITH_AS(t.lookup(99, LookupMode::strict),
                       doctest::Contains("missing embedding"), MuseError);
  CHECK(t.miss_count() == 0);
  auto z = t.lookup(99, LookupMode::permissive);
  REQUIRE(z.size() == 3);
  CHECK(z[0] == 0.0f);
  CHECK(z[1] == 0.0f);
  CHECK(z[2] == 0.0f);
  CHECK(t.miss_count() == 1);
}

TEST_CASE("repeated lookups return bit-identical vectors") {
  EmbeddingTable t = make_table(2, {{5, {0.123456f, -0.9f}}});
  auto a = t.lookup(5, LookupMode::strict);
  auto b = t.lookup(5, LookupMode::strict);
  CHECK(std::memcmp(a.data(), b.data(), 2 * sizeof(float)) == 0);
  CHECK(a.data() == b.data());
}

TEST_CASE("load is insertion-order independent") {
  std::vector<std::pair<uint64_t, std::vector<float>>> rows = {
      {3, {0.1f, 0.2f}}, {1, {0.3f, 0.4f}}, {2, {0.5f, 0.6f}}};
  EmbeddingTable a = make_table(2, rows);
  std::reverse(rows.begin(), rows.end());
  EmbeddingTable b = make_table(2, rows);
  CHECK(a == b);
  CHECK(a.content_checksum() == b.content_checksum());
}

}  // TEST_SUITE
