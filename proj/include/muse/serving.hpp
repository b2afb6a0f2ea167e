#pragma once

#include <cstdint>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "muse/rng.hpp"

namespace muse {
namespace serving {

// Stage latency model: constant or a seeded distribution, milliseconds.
struct LatencyDist {
  enum class Kind { constant, uniform, exponential, lognormal, spike };
  Kind kind = Kind::constant;
  double value = 0.0;   // constant
  double lo = 0.0, hi = 0.0;  // uniform
  double mean = 0.0;    // exponential
  double mu = 0.0, sigma = 0.0;  // lognormal
  // spike: base latency plus `extra` with probability `prob`
  double base = 0.0, extra = 0.0, prob = 0.0;

  double sample(Rng &rng) const;
  static LatencyDist constant_of(double v);
  static LatencyDist from_json_string(const std::string &text);
  std::string to_json_string() const;
};

struct StageLatencies {
  LatencyDist matching, prefetch, topk, esu, other_ranking;
};

// One concrete set of stage durations for a request.
struct StageDraw {
  double matching = 0.0, prefetch = 0.0, topk = 0.0, esu = 0.0, other_ranking = 0.0;
};

enum class PipelineMode { async_prefetch, sync_serial };

// Logical-clock trace of one request through the pipeline.
struct PipelineTrace {
  PipelineMode mode = PipelineMode::async_prefetch;
  bool cache_hit = false;
  double matching_start = 0, matching_end = 0;
  double prefetch_start = 0, prefetch_end = 0;
  double topk_start = 0, topk_end = 0;
  double other_start = 0, other_end = 0;
  double esu_start = 0, esu_end = 0;
  double total = 0;
  double exposed_prefetch = 0;  // prefetch time not hidden behind matching
};

// Bounded LRU keyed by user. Values are opaque here (the simulator caches a
// token standing in for the fetched behavior embeddings).
template <typename K, typename V>
class LruCache {
 public:
  explicit LruCache(size_t capacity) : capacity_(capacity) {}

  std::optional<V> get(const K &key) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it == map_.end()) {
      ++misses_;
      return std::nullopt;
    }
    order_.splice(order_.begin(), order_, it->second);
    ++hits_;
    return it->second->second;
  }

  void put(const K &key, V value) {
    std::lock_guard<std::mutex> lock(mu_);
    if (capacity_ == 0) return;
    auto it = map_.find(key);
    if (it != map_.end()) {
      it->second->second = std::move(value);
      order_.splice(order_.begin(), order_, it->second);
      return;
    }
    if (map_.size() >= capacity_) {
      map_.erase(order_.back().first);
      order_.pop_back();
    }
    order_.emplace_front(key, std::move(value));
    map_[key] = order_.begin();
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return map_.size();
  }
  size_t capacity() const { return capacity_; }
  uint64_t hits() const { return hits_; }
  uint64_t misses() const { return misses_; }

 private:
  size_t capacity_;
  mutable std::mutex mu_;
  std::list<std::pair<K, V>> order_;  // front = most recent
  std::unordered_map<K, typename std::list<std::pair<K, V>>::iterator> map_;
  uint64_t hits_ = 0, misses_ = 0;
};

using UserCache = LruCache<uint64_t, uint64_t>;

// async: total = max(matching, prefetch') + max(topk, other) + esu
// sync:  total = matching + prefetch' + topk + other + esu
// where prefetch' = 0 on cache hit. The cache is populated when the fetch
// completes; a miss with capacity > 0 inserts the user.
PipelineTrace simulate_request(const StageDraw &draw, PipelineMode mode, UserCache &cache,
                               uint64_t user);

struct ScenarioConfig {
  uint64_t seed = 1;
  uint64_t requests = 10000;
  uint64_t users = 1000;
  bool zipf_users = false;   // false: uniform user draw
  double zipf_s = 1.1;
  size_t cache_capacity = 256;
  StageLatencies latencies;

  static ScenarioConfig from_json_string(const std::string &text);
  std::string to_json_string() const;
  // fast_fetch, slow_fetch, bursty
  static ScenarioConfig named(const std::string &name);
};

struct ModeStats {
  double p50 = 0, p95 = 0, p99 = 0, mean = 0;
  double hit_rate = 0;
  double mean_exposed_prefetch = 0;
};

struct ScenarioReport {
  uint64_t requests = 0;
  ModeStats async_stats, sync_stats;
  std::string to_json_string() const;
};

// Plays the same seeded request stream through both pipeline modes with a
// fresh cache each. Optionally dumps per-request traces as CSV.
ScenarioReport run_scenario(const ScenarioConfig &cfg, const std::string &trace_csv_path = "");

struct BenchReport {
  uint64_t seq_len = 0;
  uint32_t dim = 0;
  uint64_t k = 0;
  uint64_t repetitions = 0;
  double mean_ms = 0, stddev_ms = 0, median_ms = 0, min_ms = 0;
  double scans_per_sec = 0;
  double gb_per_sec = 0;
  bool oracle_ok = false;
  std::string to_json_string() const;
};

// Times gsu_retrieve over random unit-norm data; one result per configuration
// is verified against a full-sort oracle and a mismatch aborts the benchmark.
BenchReport bench_retrieval(uint64_t seq_len, uint32_t dim, uint64_t k, uint64_t repetitions,
                            uint64_t seed = 42);

}  // namespace serving
}  // namespace muse
