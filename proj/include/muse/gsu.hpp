#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "muse/embedding_store.hpp"

namespace muse {

// Ordered lifelong behavior list, index 0 = oldest. categories is either
// empty or aligned with items.
struct BehaviorSequence {
  uint64_t user = 0;
  std::vector<uint64_t> items;
  std::vector<int32_t> categories;

  size_t length() const { return items.size(); }
  bool has_categories() const { return !categories.empty(); }
};

// Top-K result: positions into the scored sequence plus their scores, scores
// non-increasing, ties resolved toward the larger (more recent) index.
struct RetrievedSubsequence {
  std::vector<uint32_t> indices;
  std::vector<float> scores;

  size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

enum class TopKAlgo { heap, full_sort };

enum class BaselineStrategy { recent, category, id_similarity };

inline float dot_f32(const float *a, const float *b, uint32_t dim) {
  float s = 0.0f;
  for (uint32_t i = 0; i < dim; ++i) s += a[i] * b[i];
  return s;
}

// scores[i] = <target, behaviors[i]>; with unit-norm inputs this is the
// cosine similarity.
std::vector<float> similarity_scores(std::span<const float> target,
                                     const std::vector<std::span<const float>> &behaviors);

// Exact selection of the min(k, L) highest-scoring positions. heap and
// full_sort produce identical output.
RetrievedSubsequence top_k_select(std::span<const float> scores, size_t k,
                                  TopKAlgo algo = TopKAlgo::heap);

// Scores every behavior of seq against the target item's embedding.
std::vector<float> score_sequence(std::span<const float> target_vec,
                                  const BehaviorSequence &seq, const EmbeddingTable &table,
                                  LookupMode mode);

RetrievedSubsequence gsu_retrieve(uint64_t target_item, const BehaviorSequence &seq,
                                  const EmbeddingTable &table, size_t k,
                                  LookupMode mode = LookupMode::strict,
                                  TopKAlgo algo = TopKAlgo::heap);

// Ablation retrieval strategies.
//   recent        last k behaviors, chronological order, scores zero
//   category      most recent k behaviors matching target_category, most
//                 recent first, scores zero; requires seq.categories
//   id_similarity top-k by ID-embedding cosine; rows must be present in
//                 id_embeddings for the target and every behavior
RetrievedSubsequence baseline_retrieve(
    BaselineStrategy strategy, uint64_t target_item, int32_t target_category,
    const BehaviorSequence &seq,
    const std::unordered_map<uint64_t, std::vector<double>> *id_embeddings, size_t k);

// take-most-recent truncation to at most cap behaviors
BehaviorSequence truncate_most_recent(const BehaviorSequence &seq, size_t cap);

}  // namespace muse
