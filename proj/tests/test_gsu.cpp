#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "muse/error.hpp"
#include "muse/gsu.hpp"
#include "test_util.hpp"

using namespace muse;

namespace {

// independent oracle: stable sort of (score, index) pairs under the tie rule
std::vector<uint32_t> sort_oracle(const std::vector<float> &scores, size_t k) {
  std::vector<uint32_t> idx(scores.size());
  for (uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](uint32_t a, uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a > b;
  });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

EmbeddingTable table_from_rows(uint32_t dim,
                               const std::vector<std::vector<float>> &rows) {
  EmbeddingTable t(dim);
  for (size_t i = 0; i < rows.size(); ++i) t.insert(i + 1, rows[i]);
  return t;
}

}  // namespace

TEST_SUITE("gsu") {

TEST_CASE("similarity_scores hand examples") {
  std::vector<float> target = {1.f, 0.f};
  std::vector<float> b0 = {1.f, 0.f};
  std::vector<float> b1 = {0.f, 1.f};
  std::vector<float> b2 = {0.6f, 0.8f};
  std::vector<std::span<const float>> behaviors = {b0, b1, b2};
  auto scores = similarity_scores(target, behaviors);
  REQUIRE(scores.size() == 3);
  CHECK(scores[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(scores[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(scores[2] == doctest::Approx(0.6).epsilon(1e-6));
}

TEST_CASE("similarity_scores rejects dimension mismatch") {
  std::vector<float> target = {1.f, 0.f};
  std::vector<float> bad = {1.f, 0.f, 0.f};
  std::vector<std::span<const float>> behaviors = {bad};
  CHECK_THROWS_AS(similarity_scores(target, behaviors), MuseError);
}

TEST_CASE("top_k_select hand examples") {
  auto r = top_k_select(std::vector<float>{0.1f, 0.9f, 0.5f}, 2);
  CHECK(r.indices == std::vector<uint32_t>{1, 2});
  CHECK(r.scores == std::vector<float>{0.9f, 0.5f});

  // k >= L selects everything sorted by score
  r = top_k_select(std::vector<float>{0.1f, 0.9f, 0.5f}, 10);
  CHECK(r.indices == std::vector<uint32_t>{1, 2, 0});

  // recency tie-break: equal best scores pick the larger index
  r = top_k_select(std::vector<float>{0.5f, 0.5f, 0.1f}, 1);
  CHECK(r.indices == std::vector<uint32_t>{1});

  // empty input is an empty result, not an error
  r = top_k_select(std::vector<float>{}, 3);
  CHECK(r.empty());
}

TEST_CASE("heap and full-sort paths agree exactly; oracle equivalence") {
  Rng rng(11);
  for (int iter = 0; iter < 1000; ++iter) {
    const size_t n = rng.uniform_int(200);
    std::vector<float> scores(n);
    for (auto &s : scores)
      s = float(rng.uniform(-1, 1));
    // force ties frequently
    if (n > 4 && iter % 3 == 0)
      for (size_t i = 0; i < n; i += 2) scores[i] = scores[0];
    const size_t k = 1 + rng.uniform_int(20);

    auto heap = top_k_select(scores, k, TopKAlgo::heap);
    auto sort = top_k_select(scores, k, TopKAlgo::full_sort);
    CHECK(heap.indices == sort.indices);
    CHECK(heap.scores == sort.scores);
    CHECK(heap.indices == sort_oracle(scores, k));
  }
}

TEST_CASE("monotone k: result for k is a prefix of k+1") {
  Rng rng(12);
  for (int iter = 0; iter < 200; ++iter) {
    const size_t n = 1 + rng.uniform_int(100);
    std::vector<float> scores(n);
    for (auto &s : scores) s = float(rng.uniform(-1, 1));
    const size_t k = 1 + rng.uniform_int(n);
    auto a = top_k_select(scores, k);
    auto b = top_k_select(scores, k + 1);
    REQUIRE(a.indices.size() <= b.indices.size());
    for (size_t i = 0; i < a.indices.size(); ++i) CHECK(a.indices[i] == b.indices[i]);
  }
}

TEST_CASE("permutation consistency: same (item, score) multiset") {
  Rng rng(13);
  const size_t n = 60, k = 10;
  std::vector<float> scores(n);
  for (auto &s : scores) s = float(rng.uniform(-1, 1));
  scores[5] = scores[17] = scores[33];  // plant exact ties

  std::vector<uint32_t> perm(n);
  for (uint32_t i = 0; i < n; ++i) perm[i] = i;
  for (size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  std::vector<float> permuted(n);
  for (uint32_t i = 0; i < n; ++i) permuted[perm[i]] = scores[i];

  auto base = top_k_select(scores, k);
  auto shuf = top_k_select(permuted, k);

  std::multiset<float> base_scores(base.scores.begin(), base.scores.end());
  std::multiset<float> shuf_scores(shuf.scores.begin(), shuf.scores.end());
  CHECK(base_scores == shuf_scores);
}

TEST_CASE("gsu_retrieve composes lookup, scoring and selection") {
  Rng rng(14);
  const uint32_t dim = 16;
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 40; ++i) rows.push_back(muse::test::unit_vec(rng, dim));
  EmbeddingTable table = table_from_rows(dim, rows);

  BehaviorSequence seq;
  for (uint64_t id = 1; id <= 40; ++id) seq.items.push_back(id);

  SUBCASE("empty history yields empty subsequence") {
    BehaviorSequence empty;
    CHECK(gsu_retrieve(1, empty, table, 5).empty());
  }

  SUBCASE("the target itself ranks first with score 1") {
    auto r = gsu_retrieve(7, seq, table, 3);
    REQUIRE(r.size() == 3);
    CHECK(r.indices[0] == 6);
    CHECK(r.scores[0] == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("identical to the sort oracle on a random 1000-length sequence") {
    std::vector<std::vector<float>> big;
    for (int i = 0; i < 1000; ++i) big.push_back(muse::test::unit_vec(rng, dim));
    EmbeddingTable bt = table_from_rows(dim, big);
    BehaviorSequence bseq;
    for (uint64_t id = 1; id <= 1000; ++id) bseq.items.push_back(id);
    auto got = gsu_retrieve(500, bseq, bt, 50);
    auto scores = score_sequence(bt.lookup(500, LookupMode::strict), bseq, bt,
                                 LookupMode::strict);
    auto want = sort_oracle(scores, 50);
    CHECK(got.indices == want);
  }

  SUBCASE("scores stay within [-1-1e-6, 1+1e-6] for unit inputs") {
    auto scores = score_sequence(table.lookup(3, LookupMode::strict), seq, table,
                                 LookupMode::strict);
    for (float s : scores) {
      CHECK(s >= -1.0f - 1e-6f);
      CHECK(s <= 1.0f + 1e-6f);
    }
  }
}

TEST_CASE("recent baseline takes the suffix in chronological order") {
  BehaviorSequence seq;
  seq.items = {10, 11, 12, 13, 14};
  auto r = baseline_retrieve(BaselineStrategy::recent, 99, 0, seq, nullptr, 2);
  CHECK(r.indices == std::vector<uint32_t>{3, 4});
  CHECK(r.scores == std::vector<float>{0.f, 0.f});
}

TEST_CASE("category baseline filters by target category, most recent first") {
  BehaviorSequence seq;
  seq.items = {1, 2, 3, 4};
  seq.categories = {9, 2, 9, 5};
  auto r = baseline_retrieve(BaselineStrategy::category, 99, 9, seq, nullptr, 2);
  CHECK(r.indices == std::vector<uint32_t>{2, 0});

  SUBCASE("no matches yields an empty subsequence") {
    auto none = baseline_retrieve(BaselineStrategy::category, 99, 77, seq, nullptr, 2);
    CHECK(none.empty());
  }

  SUBCASE("missing categories is a configuration error") {
    BehaviorSequence plain;
    plain.items = {1, 2, 3};
    CHECK_THROWS_AS(baseline_retrieve(BaselineStrategy::category, 99, 9, plain, nullptr, 2),
                    MuseError);
  }
}

TEST_CASE("id_similarity baseline ranks by ID-embedding cosine") {
  std::unordered_map<uint64_t, std::vector<double>> ids;
  ids[100] = {1.0, 0.0};   // target
  ids[1] = {2.0, 0.0};     // cosine 1 (magnitude must not matter)
  ids[2] = {0.0, 3.0};     // cosine 0
  ids[3] = {-1.0, 0.0};    // cosine -1
  BehaviorSequence seq;
  seq.items = {3, 2, 1};
  auto r = baseline_retrieve(BaselineStrategy::id_similarity, 100, 0, seq, &ids, 2);
  REQUIRE(r.size() == 2);
  CHECK(r.indices[0] == 2);  // item 1
  CHECK(r.indices[1] == 1);  // item 2
  CHECK(r.scores[0] == doctest::Approx(1.0));
  CHECK(r.scores[1] == doctest::Approx(0.0));

  CHECK_THROWS_AS(baseline_retrieve(BaselineStrategy::id_similarity, 100, 0, seq, nullptr, 2),
                  MuseError);
}

TEST_CASE("truncate_most_recent keeps the suffix") {
  BehaviorSequence seq;
  seq.items = {1, 2, 3, 4, 5};
  seq.categories = {10, 20, 30, 40, 50};
  auto t = truncate_most_recent(seq, 2);
  CHECK(t.items == std::vector<uint64_t>{4, 5});
  CHECK(t.categories == std::vector<int32_t>{40, 50});
  auto same = truncate_most_recent(seq, 10);
  CHECK(same.items == seq.items);
}

TEST_CASE("determinism: identical inputs give identical outputs") {
  Rng rng(15);
  std::vector<float> scores(500);
  for (auto &s : scores) s = float(rng.uniform(-1, 1));
  auto a = top_k_select(scores, 50);
  auto b = top_k_select(scores, 50);
  CHECK(a.indices == b.indices);
  CHECK(a.scores == b.scores);
}

}  // TEST_SUITE
