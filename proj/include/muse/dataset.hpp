#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "muse/embedding_store.hpp"

namespace muse {

enum class Mode { academic, production };

inline size_t mode_cap(Mode m) { return m == Mode::academic ? 1000 : 100000; }

struct SampleRecord {
  uint64_t user_id = 0;
  int32_t age = 0, gender = 0, city = 0, province = 0;
  uint64_t item_id = 0;
  int32_t category = 0, item_city = 0, item_province = 0;
  std::shared_ptr<const std::vector<uint64_t>> behaviors;
  int32_t label = 0;
  int64_t ts = 0;
  bool has_ts = false;

  const std::vector<uint64_t> &behavior_items() const {
    static const std::vector<uint64_t> empty;
    return behaviors ? *behaviors : empty;
  }
};

struct DatasetManifest {
  uint64_t samples = 0;
  uint64_t users = 0;
  uint64_t distinct_items = 0;
  uint64_t max_behavior_length = 0;
  uint32_t dim = 0;
  uint64_t embedding_misses = 0;
  std::string data_checksum;
  std::string embeddings_checksum;

  std::string to_json_string() const;
};

struct Dataset {
  std::vector<SampleRecord> samples;
  // item id -> category, loaded from item metadata; required by the
  // category retrieval strategy
  std::unordered_map<uint64_t, int32_t> item_categories;
  bool has_item_categories = false;
  uint64_t embedding_misses = 0;  // permissive ingest only

  size_t size() const { return samples.size(); }
  DatasetManifest manifest(uint32_t dim) const;
};

// JSON-lines ingestion. Every referenced item id must resolve in the table
// under strict mode; under permissive mode unresolved ids are counted into
// the manifest. Sequences longer than the mode cap are an integrity error.
Dataset ingest(const std::string &data_path, const EmbeddingTable &table, Mode mode,
               LookupMode lookup_mode, const std::string &item_meta_path = "");

void write_jsonl(const Dataset &ds, const std::string &path);
void write_item_meta(const std::unordered_map<uint64_t, int32_t> &item_categories,
                     const std::string &path);

struct SyntheticConfig {
  uint64_t seed = 1;
  uint32_t n_users = 2000;
  uint32_t n_items = 4000;
  uint32_t dim = 128;
  uint32_t n_clusters = 16;
  uint32_t subclusters_per_cluster = 8;
  uint32_t user_subclusters_per_core = 3;
  double signal_strength = 0.8;  // in [0, 1]; label slope = max_slope * strength
  uint32_t seq_len_min = 100;
  uint32_t seq_len_max = 500;
  bool long_range_signal = false;  // informative behaviors only before the last 50
  uint32_t samples_per_user = 20;
  double base_ctr = 0.05;
  uint32_t core_clusters_per_user = 3;
  uint32_t background_clusters_per_user = 5;
  double core_behavior_frac = 0.7;
  double target_core_frac = 0.6;
  double subcluster_scale = 0.6;
  double item_noise = 0.3;
  double max_slope = 12.0;
  Mode mode = Mode::academic;

  void validate() const;
  static SyntheticConfig from_json_string(const std::string &text);
  std::string to_json_string() const;
};

struct SyntheticData {
  Dataset dataset;
  EmbeddingTable table;
  // per-sample max similarity between target and history, in sample order;
  // kept in memory for diagnostics, never written to files
  std::vector<double> planted_max_sim;
};

// Cluster-structured items, per-user interest mixtures, click labels drawn
// from sigmoid(a + slope * maxSim) with a calibrated to base_ctr. Fully
// reproducible from the seed.
SyntheticData synthesize(const SyntheticConfig &cfg);

struct SyntheticFiles {
  std::string data_path;
  std::string embeddings_path;
  std::string item_meta_path;
  std::string manifest_path;
};

SyntheticFiles synthesize_to_dir(const SyntheticConfig &cfg, const std::string &dir);

enum class SplitPolicy { by_fraction, by_time };

// by_fraction: first round(f*n) records train, rest test (record order).
// by_time: ts < boundary -> train, ts >= boundary -> test; records without
// timestamps are a configuration error.
std::pair<Dataset, Dataset> split(const Dataset &ds, SplitPolicy policy, double fraction,
                                  int64_t time_boundary);

}  // namespace muse
