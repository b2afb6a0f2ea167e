#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace muse {

enum class LookupMode { strict, permissive };

// Frozen item-id -> dense vector map. Vectors live in one contiguous block;
// the table is immutable after load/normalize, so concurrent readers are fine.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(uint32_t dim) : dim_(dim) {}

  // the atomic miss counter deletes the defaults
  EmbeddingTable(const EmbeddingTable &o) { *this = o; }
  EmbeddingTable(EmbeddingTable &&o) noexcept { *this = std::move(o); }
  EmbeddingTable &operator=(const EmbeddingTable &o) {
    if (this != &o) {
      dim_ = o.dim_;
      normalized_ = o.normalized_;
      data_ = o.data_;
      index_ = o.index_;
      zero_ = o.zero_;
      misses_.store(o.misses_.load(std::memory_order_relaxed), std::memory_order_relaxed);
    }
    return *this;
  }
  EmbeddingTable &operator=(EmbeddingTable &&o) noexcept {
    if (this != &o) {
      dim_ = o.dim_;
      normalized_ = o.normalized_;
      data_ = std::move(o.data_);
      index_ = std::move(o.index_);
      zero_ = std::move(o.zero_);
      misses_.store(o.misses_.load(std::memory_order_relaxed), std::memory_order_relaxed);
    }
    return *this;
  }

  // Binary layout (little-endian): "MUSEEMB1" | u32 dim | u64 count |
  // count * (u64 item_id, dim * f32). A JSON sidecar "<path>.manifest.json"
  // records dim, count, normalization status and the file checksum.
  static EmbeddingTable load(const std::string &path, uint32_t expected_dim);

  void save(const std::string &path) const;

  // id must be new; vector length must equal dim
  void insert(uint64_t id, std::span<const float> values);

  // Divides every vector by its Euclidean norm. A vector with norm < 1e-12 is
  // a data error naming the item id.
  void normalize();

  // strict: missing id throws. permissive: returns the zero vector and bumps
  // the miss counter.
  std::span<const float> lookup(uint64_t id, LookupMode mode) const;

  bool contains(uint64_t id) const { return index_.count(id) != 0; }
  size_t size() const { return index_.size(); }
  uint32_t dim() const { return dim_; }
  bool normalized() const { return normalized_; }
  uint64_t miss_count() const { return misses_.load(std::memory_order_relaxed); }

  // checksum over (id, payload) pairs in ascending id order; insertion-order
  // independent
  uint64_t content_checksum() const;

  std::vector<uint64_t> ids_sorted() const;

  bool operator==(const EmbeddingTable &o) const;

 private:
  uint32_t dim_ = 0;
  bool normalized_ = false;
  std::vector<float> data_;
  std::unordered_map<uint64_t, uint64_t> index_;  // id -> row
  std::vector<float> zero_;
  mutable std::atomic<uint64_t> misses_{0};
};

}  // namespace muse
