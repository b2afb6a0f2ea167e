#include "muse/gsu.hpp"

#include <algorithm>
#include <cmath>

#include "muse/error.hpp"
#include "muse/linalg.hpp"

namespace muse {

namespace {

// total order used everywhere: higher score first, then larger index
inline bool better(float score_a, uint32_t idx_a, float score_b, uint32_t idx_b) {
  if (score_a != score_b) return score_a > score_b;
  return idx_a > idx_b;
}

RetrievedSubsequence select_full_sort(std::span<const float> scores, size_t k) {
  std::vector<uint32_t> order(scores.size());
  for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    return better(scores[a], a, scores[b], b);
  });
  const size_t take = std::min(k, order.size());
  RetrievedSubsequence out;
  out.indices.assign(order.begin(), order.begin() + std::ptrdiff_t(take));
  out.scores.reserve(take);
  for (uint32_t i : out.indices) out.scores.push_back(scores[i]);
  return out;
}

RetrievedSubsequence select_heap(std::span<const float> scores, size_t k) {
  const size_t take = std::min(k, scores.size());
  RetrievedSubsequence out;
  if (take == 0) return out;

  // heap front = worst kept entry ("max" under the better-than comparator)
  struct Node {
    float score;
    uint32_t idx;
  };
  auto better_node = [](const Node &a, const Node &b) {
    return better(a.score, a.idx, b.score, b.idx);
  };
  std::vector<Node> heap;
  heap.reserve(take);
  for (uint32_t i = 0; i < scores.size(); ++i) {
    if (heap.size() < take) {
      heap.push_back({scores[i], i});
      std::push_heap(heap.begin(), heap.end(), better_node);
    } else if (better(scores[i], i, heap.front().score, heap.front().idx)) {
      std::pop_heap(heap.begin(), heap.end(), better_node);
      heap.back() = {scores[i], i};
      std::push_heap(heap.begin(), heap.end(), better_node);
    }
  }
  std::sort(heap.begin(), heap.end(),
            [](const Node &a, const Node &b) { return better(a.score, a.idx, b.score, b.idx); });
  out.indices.reserve(take);
  out.scores.reserve(take);
  for (const Node &n : heap) {
    out.indices.push_back(n.idx);
    out.scores.push_back(n.score);
  }
  return out;
}

}  // namespace

std::vector<float> similarity_scores(std::span<const float> target,
                                     const std::vector<std::span<const float>> &behaviors) {
  std::vector<float> scores(behaviors.size());
  for (size_t i = 0; i < behaviors.size(); ++i) {
    if (behaviors[i].size() != target.size())
      throw internal_error("similarity_scores: dim mismatch at behavior " + std::to_string(i));
    scores[i] = dot_f32(target.data(), behaviors[i].data(), uint32_t(target.size()));
  }
  return scores;
}

RetrievedSubsequence top_k_select(std::span<const float> scores, size_t k, TopKAlgo algo) {
  if (k == 0) throw internal_error("top_k_select: k must be >= 1");
  return algo == TopKAlgo::heap ? select_heap(scores, k) : select_full_sort(scores, k);
}

std::vector<float> score_sequence(std::span<const float> target_vec,
                                  const BehaviorSequence &seq, const EmbeddingTable &table,
                                  LookupMode mode) {
  std::vector<float> scores(seq.items.size());
  const uint32_t dim = uint32_t(target_vec.size());
  for (size_t i = 0; i < seq.items.size(); ++i) {
    std::span<const float> v = table.lookup(seq.items[i], mode);
    scores[i] = dot_f32(target_vec.data(), v.data(), dim);
  }
  return scores;
}

RetrievedSubsequence gsu_retrieve(uint64_t target_item, const BehaviorSequence &seq,
                                  const EmbeddingTable &table, size_t k, LookupMode mode,
                                  TopKAlgo algo) {
  if (seq.items.empty()) return {};
  std::span<const float> target_vec = table.lookup(target_item, mode);
  std::vector<float> scores = score_sequence(target_vec, seq, table, mode);
  return top_k_select(scores, k, algo);
}

RetrievedSubsequence baseline_retrieve(
    BaselineStrategy strategy, uint64_t target_item, int32_t target_category,
    const BehaviorSequence &seq,
    const std::unordered_map<uint64_t, std::vector<double>> *id_embeddings, size_t k) {
  const size_t n = seq.items.size();
  RetrievedSubsequence out;
  switch (strategy) {
    case BaselineStrategy::recent: {
      const size_t take = std::min(k, n);
      out.indices.reserve(take);
      for (size_t i = n - take; i < n; ++i) out.indices.push_back(uint32_t(i));
      out.scores.assign(take, 0.0f);
      return out;
    }
    case BaselineStrategy::category: {
      if (n > 0 && !seq.has_categories())
        throw config_error("category retrieval requires per-item categories");
      for (size_t j = 0; j < n && out.indices.size() < k; ++j) {
        const size_t i = n - 1 - j;  // most recent matches first
        if (seq.categories[i] == target_category) out.indices.push_back(uint32_t(i));
      }
      out.scores.assign(out.indices.size(), 0.0f);
      return out;
    }
    case BaselineStrategy::id_similarity: {
      if (!id_embeddings)
        throw config_error("id_similarity retrieval requires an ID-embedding table");
      if (n == 0) return out;
      auto row = [&](uint64_t id) -> const std::vector<double> & {
        auto it = id_embeddings->find(id);
        if (it == id_embeddings->end())
          throw internal_error("id_similarity: missing ID embedding for item " +
                               std::to_string(id));
        return it->second;
      };
      const std::vector<double> &t = row(target_item);
      double tnorm = std::sqrt(dot(t, t));
      std::vector<float> scores(n, 0.0f);
      for (size_t i = 0; i < n; ++i) {
        const std::vector<double> &b = row(seq.items[i]);
        const double bnorm = std::sqrt(dot(b, b));
        if (tnorm > 1e-12 && bnorm > 1e-12)
          scores[i] = float(dot(t, b) / (tnorm * bnorm));
      }
      return top_k_select(scores, k);
    }
  }
  throw internal_error("unknown retrieval strategy");
}

BehaviorSequence truncate_most_recent(const BehaviorSequence &seq, size_t cap) {
  if (seq.items.size() <= cap) return seq;
  BehaviorSequence out;
  out.user = seq.user;
  const size_t start = seq.items.size() - cap;
  out.items.assign(seq.items.begin() + std::ptrdiff_t(start), seq.items.end());
  if (seq.has_categories())
    out.categories.assign(seq.categories.begin() + std::ptrdiff_t(start), seq.categories.end());
  return out;
}

}  // namespace muse
