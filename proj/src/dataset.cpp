#include "muse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "muse/checksum.hpp"
#include "muse/error.hpp"
#include "muse/gsu.hpp"
#include "muse/rng.hpp"

namespace muse {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json &j, const std::vector<std::string> &allowed,
                         const std::string &what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw config_error(what + ": unknown key '" + it.key() + "'");
  }
}

int64_t require_int(const json &j, const char *key, size_t record_idx) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer())
    throw data_error("parse error at record " + std::to_string(record_idx) +
                     ": missing or non-integer field '" + key + "'");
  return it->get<int64_t>();
}

}  // namespace

std::string DatasetManifest::to_json_string() const {
  json j = {
      {"samples", samples},
      {"users", users},
      {"distinct_items", distinct_items},
      {"max_behavior_length", max_behavior_length},
      {"dim", dim},
      {"embedding_misses", embedding_misses},
  };
  if (!data_checksum.empty()) j["data_checksum"] = data_checksum;
  if (!embeddings_checksum.empty()) j["embeddings_checksum"] = embeddings_checksum;
  return j.dump(2);
}

DatasetManifest Dataset::manifest(uint32_t dim) const {
  DatasetManifest m;
  m.samples = samples.size();
  m.dim = dim;
  std::unordered_set<uint64_t> users;
  std::unordered_set<uint64_t> items;
  std::unordered_set<const std::vector<uint64_t> *> seen_seqs;
  for (const SampleRecord &s : samples) {
    users.insert(s.user_id);
    items.insert(s.item_id);
    m.max_behavior_length = std::max<uint64_t>(m.max_behavior_length, s.behavior_items().size());
    const std::vector<uint64_t> *seq = &s.behavior_items();
    if (seen_seqs.insert(seq).second)
      for (uint64_t id : *seq) items.insert(id);
  }
  m.users = users.size();
  m.distinct_items = items.size();
  m.embedding_misses = embedding_misses;
  return m;
}

Dataset ingest(const std::string &data_path, const EmbeddingTable &table, Mode mode,
               LookupMode lookup_mode, const std::string &item_meta_path) {
  std::ifstream in(data_path);
  if (!in) throw data_error("dataset file not found: " + data_path);

  Dataset ds;
  const size_t cap = mode_cap(mode);
  uint64_t misses = 0;

  // identical sequences (same user across samples) share one vector
  std::unordered_map<uint64_t, std::vector<std::shared_ptr<const std::vector<uint64_t>>>> pool;
  auto intern = [&](std::vector<uint64_t> &&seq) {
    const uint64_t h = fnv1a64(seq.data(), seq.size() * sizeof(uint64_t));
    auto &bucket = pool[h];
    for (const auto &p : bucket)
      if (*p == seq) return p;
    auto p = std::make_shared<const std::vector<uint64_t>>(std::move(seq));
    bucket.push_back(p);
    return bucket.back();
  };

  auto check_item = [&](uint64_t id) {
    if (table.contains(id)) return;
    if (lookup_mode == LookupMode::strict)
      throw data_error("missing embedding for item " + std::to_string(id));
    ++misses;
  };

  static const std::vector<std::string> allowed = {
      "user_id", "age",      "gender",        "city",      "province", "item_id",
      "category", "item_city", "item_province", "behaviors", "label",    "ts"};

  std::string line;
  size_t idx = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception &e) {
      throw data_error("parse error at record " + std::to_string(idx) + ": " + e.what());
    }
    if (!j.is_object())
      throw data_error("parse error at record " + std::to_string(idx) + ": not an object");
    reject_unknown_keys(j, allowed, "record " + std::to_string(idx));

    SampleRecord s;
    s.user_id = uint64_t(require_int(j, "user_id", idx));
    s.age = int32_t(require_int(j, "age", idx));
    s.gender = int32_t(require_int(j, "gender", idx));
    s.city = int32_t(require_int(j, "city", idx));
    s.province = int32_t(require_int(j, "province", idx));
    s.item_id = uint64_t(require_int(j, "item_id", idx));
    s.category = int32_t(require_int(j, "category", idx));
    s.item_city = int32_t(require_int(j, "item_city", idx));
    s.item_province = int32_t(require_int(j, "item_province", idx));
    s.label = int32_t(require_int(j, "label", idx));
    if (s.label != 0 && s.label != 1)
      throw data_error("parse error at record " + std::to_string(idx) + ": non-binary label");
    if (auto it = j.find("ts"); it != j.end()) {
      if (!it->is_number_integer())
        throw data_error("parse error at record " + std::to_string(idx) + ": non-integer ts");
      s.ts = it->get<int64_t>();
      s.has_ts = true;
    }

    auto bit = j.find("behaviors");
    if (bit == j.end() || !bit->is_array())
      throw data_error("parse error at record " + std::to_string(idx) +
                       ": missing or non-array field 'behaviors'");
    std::vector<uint64_t> behaviors;
    behaviors.reserve(bit->size());
    for (const auto &v : *bit) {
      if (!v.is_number_integer())
        throw data_error("parse error at record " + std::to_string(idx) +
                         ": non-integer behavior item id");
      behaviors.push_back(v.get<uint64_t>());
    }
    if (behaviors.size() > cap)
      throw data_error("integrity error at record " + std::to_string(idx) + ": " +
                       std::to_string(behaviors.size()) + " behaviors exceed cap " +
                       std::to_string(cap));
    for (uint64_t id : behaviors) check_item(id);
    check_item(s.item_id);
    s.behaviors = intern(std::move(behaviors));
    ds.samples.push_back(std::move(s));
    ++idx;
  }

  if (!item_meta_path.empty()) {
    std::ifstream mi(item_meta_path);
    if (!mi) throw data_error("item meta file not found: " + item_meta_path);
    std::string mline;
    size_t midx = 0;
    while (std::getline(mi, mline)) {
      if (mline.empty()) continue;
      json j;
      try {
        j = json::parse(mline);
      } catch (const json::exception &e) {
        throw data_error("parse error in item meta record " + std::to_string(midx) + ": " +
                         e.what());
      }
      ds.item_categories[uint64_t(require_int(j, "item_id", midx))] =
          int32_t(require_int(j, "category", midx));
      ++midx;
    }
    ds.has_item_categories = true;
  }

  ds.samples.shrink_to_fit();
  ds.embedding_misses = misses;
  return ds;
}

void write_jsonl(const Dataset &ds, const std::string &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw data_error("cannot open for write: " + path);
  for (const SampleRecord &s : ds.samples) {
    json j = {
        {"user_id", s.user_id},
        {"age", s.age},
        {"gender", s.gender},
        {"city", s.city},
        {"province", s.province},
        {"item_id", s.item_id},
        {"category", s.category},
        {"item_city", s.item_city},
        {"item_province", s.item_province},
        {"behaviors", s.behavior_items()},
        {"label", s.label},
    };
    if (s.has_ts) j["ts"] = s.ts;
    out << j.dump() << "\n";
  }
  if (!out) throw data_error("write failed: " + path);
}

void write_item_meta(const std::unordered_map<uint64_t, int32_t> &item_categories,
                     const std::string &path) {
  std::vector<uint64_t> ids;
  ids.reserve(item_categories.size());
  for (const auto &[id, _] : item_categories) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw data_error("cannot open for write: " + path);
  for (uint64_t id : ids) {
    json j = {{"item_id", id}, {"category", item_categories.at(id)}};
    out << j.dump() << "\n";
  }
}

void SyntheticConfig::validate() const {
  if (signal_strength < 0.0 || signal_strength > 1.0)
    throw config_error("synthetic: signal_strength must be in [0, 1]");
  if (n_users == 0 || n_items == 0 || dim == 0 || n_clusters == 0)
    throw config_error("synthetic: counts must be positive");
  if (seq_len_min > seq_len_max)
    throw config_error("synthetic: seq_len_min > seq_len_max");
  if (seq_len_max > mode_cap(mode))
    throw config_error("synthetic: seq_len_max exceeds mode cap");
  if (long_range_signal && seq_len_min <= 50)
    throw config_error("synthetic: long_range_signal requires seq_len_min > 50");
  if (base_ctr <= 0.0 || base_ctr >= 1.0)
    throw config_error("synthetic: base_ctr must be in (0, 1)");
  if (core_clusters_per_user + background_clusters_per_user > n_clusters)
    throw config_error("synthetic: core + background clusters exceed n_clusters");
}

SyntheticConfig SyntheticConfig::from_json_string(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw config_error(std::string("synthetic config: ") + e.what());
  }
  static const std::vector<std::string> allowed = {
      "seed",          "n_users",          "n_items",
      "dim",           "n_clusters",       "subclusters_per_cluster",
      "user_subclusters_per_core", "signal_strength", "seq_len_min",
      "seq_len_max",   "long_range_signal", "samples_per_user",
      "base_ctr",      "core_clusters_per_user", "background_clusters_per_user",
      "core_behavior_frac", "target_core_frac", "subcluster_scale",
      "item_noise",    "max_slope",        "mode"};
  reject_unknown_keys(j, allowed, "synthetic config");
  SyntheticConfig c;
  auto get = [&](const char *k, auto &field) {
    if (auto it = j.find(k); it != j.end()) field = it->get<std::decay_t<decltype(field)>>();
  };
  get("seed", c.seed);
  get("n_users", c.n_users);
  get("n_items", c.n_items);
  get("dim", c.dim);
  get("n_clusters", c.n_clusters);
  get("subclusters_per_cluster", c.subclusters_per_cluster);
  get("user_subclusters_per_core", c.user_subclusters_per_core);
  get("signal_strength", c.signal_strength);
  get("seq_len_min", c.seq_len_min);
  get("seq_len_max", c.seq_len_max);
  get("long_range_signal", c.long_range_signal);
  get("samples_per_user", c.samples_per_user);
  get("base_ctr", c.base_ctr);
  get("core_clusters_per_user", c.core_clusters_per_user);
  get("background_clusters_per_user", c.background_clusters_per_user);
  get("core_behavior_frac", c.core_behavior_frac);
  get("target_core_frac", c.target_core_frac);
  get("subcluster_scale", c.subcluster_scale);
  get("item_noise", c.item_noise);
  get("max_slope", c.max_slope);
  if (auto it = j.find("mode"); it != j.end()) {
    const std::string m = it->get<std::string>();
    if (m == "academic")
      c.mode = Mode::academic;
    else if (m == "production")
      c.mode = Mode::production;
    else
      throw config_error("synthetic config: bad mode '" + m + "'");
  }
  c.validate();
  return c;
}

std::string SyntheticConfig::to_json_string() const {
  json j = {
      {"seed", seed},
      {"n_users", n_users},
      {"n_items", n_items},
      {"dim", dim},
      {"n_clusters", n_clusters},
      {"subclusters_per_cluster", subclusters_per_cluster},
      {"user_subclusters_per_core", user_subclusters_per_core},
      {"signal_strength", signal_strength},
      {"seq_len_min", seq_len_min},
      {"seq_len_max", seq_len_max},
      {"long_range_signal", long_range_signal},
      {"samples_per_user", samples_per_user},
      {"base_ctr", base_ctr},
      {"core_clusters_per_user", core_clusters_per_user},
      {"background_clusters_per_user", background_clusters_per_user},
      {"core_behavior_frac", core_behavior_frac},
      {"target_core_frac", target_core_frac},
      {"subcluster_scale", subcluster_scale},
      {"item_noise", item_noise},
      {"max_slope", max_slope},
      {"mode", mode == Mode::academic ? "academic" : "production"},
  };
  return j.dump(2);
}

namespace {

std::vector<float> random_unit_vec(Rng &rng, uint32_t dim) {
  std::vector<float> v(dim);
  double sq = 0.0;
  for (uint32_t d = 0; d < dim; ++d) {
    v[d] = float(rng.normal());
    sq += double(v[d]) * double(v[d]);
  }
  const float inv = float(1.0 / std::sqrt(std::max(sq, 1e-30)));
  for (float &x : v) x *= inv;
  return v;
}

// distinct sample of k values from [0, n) excluding `exclude`
std::vector<uint32_t> sample_distinct(Rng &rng, uint32_t n, uint32_t k,
                                      const std::vector<uint32_t> &exclude) {
  std::vector<uint32_t> out;
  std::unordered_set<uint32_t> used(exclude.begin(), exclude.end());
  while (out.size() < k && used.size() < n) {
    uint32_t v = uint32_t(rng.uniform_int(n));
    if (used.insert(v).second) out.push_back(v);
  }
  return out;
}

}  // namespace

SyntheticData synthesize(const SyntheticConfig &cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng geo = root.fork(1);     // item geometry
  Rng users_rng = root.fork(2);
  Rng label_rng = root.fork(3);
  Rng shuffle_rng = root.fork(4);

  const uint32_t n_sub = std::max(1u, cfg.subclusters_per_cluster);

  // cluster centers and subcluster offsets
  std::vector<std::vector<float>> centers(cfg.n_clusters);
  std::vector<std::vector<std::vector<float>>> subdirs(cfg.n_clusters);
  for (uint32_t c = 0; c < cfg.n_clusters; ++c) {
    centers[c] = random_unit_vec(geo, cfg.dim);
    subdirs[c].resize(n_sub);
    for (uint32_t s = 0; s < n_sub; ++s) subdirs[c][s] = random_unit_vec(geo, cfg.dim);
  }

  // items: id 1..n_items, assigned round-robin-free (uniform) to clusters
  SyntheticData out;
  out.table = EmbeddingTable(cfg.dim);
  std::vector<int32_t> item_cluster(cfg.n_items);
  std::vector<std::vector<std::vector<uint32_t>>> members(
      cfg.n_clusters, std::vector<std::vector<uint32_t>>(n_sub));
  std::vector<float> vec(cfg.dim);
  for (uint32_t i = 0; i < cfg.n_items; ++i) {
    const uint32_t c = uint32_t(geo.uniform_int(cfg.n_clusters));
    const uint32_t s = uint32_t(geo.uniform_int(n_sub));
    item_cluster[i] = int32_t(c);
    members[c][s].push_back(i);
    double sq = 0.0;
    for (uint32_t d = 0; d < cfg.dim; ++d) {
      const double x = centers[c][d] + cfg.subcluster_scale * subdirs[c][s][d] +
                       cfg.item_noise * geo.normal() / std::sqrt(double(cfg.dim));
      vec[d] = float(x);
      sq += x * x;
    }
    const float inv = float(1.0 / std::sqrt(std::max(sq, 1e-30)));
    for (float &x : vec) x *= inv;
    const uint64_t item_id = i + 1;
    out.table.insert(item_id, vec);
    out.dataset.item_categories[item_id] = int32_t(c);
  }
  out.dataset.has_item_categories = true;
  out.table.normalize();  // unit within fp error already; make the flag true

  // flatten per-(cluster, subset) pools the user draws from
  auto draw_from = [&](Rng &rng, const std::vector<uint32_t> &pool) -> uint64_t {
    if (pool.empty()) return 1 + rng.uniform_int(cfg.n_items);  // degenerate cluster
    return 1 + uint64_t(pool[rng.uniform_int(pool.size())]);
  };

  struct UserState {
    std::vector<uint32_t> core;        // core cluster ids
    std::vector<uint32_t> background;  // background cluster ids
    std::vector<std::vector<uint32_t>> core_subs;  // chosen subclusters per core
    std::shared_ptr<const std::vector<uint64_t>> seq;
    int32_t age, gender, city, province;
  };

  std::vector<UserState> users(cfg.n_users);
  for (uint32_t u = 0; u < cfg.n_users; ++u) {
    UserState &us = users[u];
    us.core = sample_distinct(users_rng, cfg.n_clusters, cfg.core_clusters_per_user, {});
    us.background =
        sample_distinct(users_rng, cfg.n_clusters, cfg.background_clusters_per_user, us.core);
    us.core_subs.resize(us.core.size());
    for (size_t c = 0; c < us.core.size(); ++c) {
      const uint32_t k = std::min(cfg.user_subclusters_per_core, n_sub);
      us.core_subs[c] = sample_distinct(users_rng, n_sub, k, {});
    }
    us.age = int32_t(18 + users_rng.uniform_int(60));
    us.gender = int32_t(users_rng.uniform_int(3));
    us.city = int32_t(users_rng.uniform_int(400));
    us.province = int32_t(users_rng.uniform_int(34));

    const uint32_t len = cfg.seq_len_min +
                         uint32_t(users_rng.uniform_int(cfg.seq_len_max - cfg.seq_len_min + 1));
    auto draw_core = [&]() {
      const size_t ci = users_rng.uniform_int(us.core.size());
      const uint32_t cluster = us.core[ci];
      const auto &subs = us.core_subs[ci];
      const uint32_t sub = subs[users_rng.uniform_int(subs.size())];
      return draw_from(users_rng, members[cluster][sub]);
    };
    auto draw_background = [&]() {
      const uint32_t cluster = us.background[users_rng.uniform_int(us.background.size())];
      const uint32_t sub = uint32_t(users_rng.uniform_int(n_sub));
      return draw_from(users_rng, members[cluster][sub]);
    };

    std::vector<uint64_t> seq(len);
    if (cfg.long_range_signal) {
      // informative items only in the prefix; the recent-50 window sees
      // background noise exclusively
      const uint32_t prefix = len - 50;
      const uint32_t n_core = std::min<uint32_t>(
          prefix, uint32_t(std::llround(cfg.core_behavior_frac * double(len))));
      for (uint32_t i = 0; i < prefix; ++i)
        seq[i] = i < n_core ? draw_core() : draw_background();
      // shuffle the prefix so informative items spread over old positions
      for (uint32_t i = prefix; i > 1; --i) {
        const uint32_t j = uint32_t(users_rng.uniform_int(i));
        std::swap(seq[i - 1], seq[j]);
      }
      for (uint32_t i = prefix; i < len; ++i) seq[i] = draw_background();
    } else {
      for (uint32_t i = 0; i < len; ++i)
        seq[i] = users_rng.uniform01() < cfg.core_behavior_frac ? draw_core() : draw_background();
    }
    us.seq = std::make_shared<const std::vector<uint64_t>>(std::move(seq));
  }

  // samples: targets from core clusters or from clusters absent from the
  // user's history, so every informative match lives in the stored sequence
  std::vector<SampleRecord> samples;
  samples.reserve(size_t(cfg.n_users) * cfg.samples_per_user);
  std::vector<double> max_sims;
  max_sims.reserve(samples.capacity());

  for (uint32_t u = 0; u < cfg.n_users; ++u) {
    UserState &us = users[u];
    std::vector<uint32_t> seen = us.core;
    seen.insert(seen.end(), us.background.begin(), us.background.end());
    for (uint32_t s = 0; s < cfg.samples_per_user; ++s) {
      uint64_t target;
      if (users_rng.uniform01() < cfg.target_core_frac) {
        const size_t ci = users_rng.uniform_int(us.core.size());
        const uint32_t cluster = us.core[ci];
        const uint32_t sub = uint32_t(users_rng.uniform_int(n_sub));
        target = draw_from(users_rng, members[cluster][sub]);
      } else {
        auto away = sample_distinct(users_rng, cfg.n_clusters, 1, seen);
        const uint32_t cluster = away.empty() ? us.background[0] : away[0];
        const uint32_t sub = uint32_t(users_rng.uniform_int(n_sub));
        target = draw_from(users_rng, members[cluster][sub]);
      }

      SampleRecord rec;
      rec.user_id = u + 1;
      rec.age = us.age;
      rec.gender = us.gender;
      rec.city = us.city;
      rec.province = us.province;
      rec.item_id = target;
      rec.category = item_cluster[target - 1];
      rec.item_city = int32_t(users_rng.uniform_int(400));
      rec.item_province = int32_t(users_rng.uniform_int(34));
      rec.behaviors = us.seq;

      std::span<const float> tv = out.table.lookup(target, LookupMode::strict);
      float best = -2.0f;
      for (uint64_t b : *us.seq) {
        std::span<const float> bv = out.table.lookup(b, LookupMode::strict);
        best = std::max(best, dot_f32(tv.data(), bv.data(), cfg.dim));
      }
      max_sims.push_back(double(best));
      samples.push_back(std::move(rec));
    }
  }

  // calibrate intercept so the mean click probability hits base_ctr
  const double slope = cfg.max_slope * cfg.signal_strength;
  double lo = -40.0, hi = 10.0;
  for (int it = 0; it < 80; ++it) {
    const double a = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double m : max_sims) mean += 1.0 / (1.0 + std::exp(-(a + slope * m)));
    mean /= double(max_sims.size());
    (mean > cfg.base_ctr ? hi : lo) = a;
  }
  const double intercept = 0.5 * (lo + hi);

  for (size_t i = 0; i < samples.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-(intercept + slope * max_sims[i])));
    samples[i].label = label_rng.bernoulli(p) ? 1 : 0;
  }

  // deterministic shuffle; ts = final position
  std::vector<uint32_t> order(samples.size());
  for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

  out.dataset.samples.reserve(samples.size());
  out.planted_max_sim.reserve(samples.size());
  for (size_t pos = 0; pos < order.size(); ++pos) {
    SampleRecord rec = std::move(samples[order[pos]]);
    rec.ts = int64_t(pos);
    rec.has_ts = true;
    out.dataset.samples.push_back(std::move(rec));
    out.planted_max_sim.push_back(max_sims[order[pos]]);
  }
  return out;
}

SyntheticFiles synthesize_to_dir(const SyntheticConfig &cfg, const std::string &dir) {
  std::filesystem::create_directories(dir);
  SyntheticData data = synthesize(cfg);
  SyntheticFiles files;
  files.data_path = dir + "/data.jsonl";
  files.embeddings_path = dir + "/embeddings.museemb";
  files.item_meta_path = dir + "/item_meta.jsonl";
  files.manifest_path = dir + "/dataset_manifest.json";

  write_jsonl(data.dataset, files.data_path);
  data.table.save(files.embeddings_path);
  write_item_meta(data.dataset.item_categories, files.item_meta_path);

  DatasetManifest m = data.dataset.manifest(cfg.dim);
  m.data_checksum = file_checksum_hex(files.data_path);
  m.embeddings_checksum = file_checksum_hex(files.embeddings_path);
  std::ofstream mf(files.manifest_path, std::ios::trunc);
  mf << m.to_json_string() << "\n";
  return files;
}

std::pair<Dataset, Dataset> split(const Dataset &ds, SplitPolicy policy, double fraction,
                                  int64_t time_boundary) {
  Dataset train, test;
  train.item_categories = ds.item_categories;
  test.item_categories = ds.item_categories;
  train.has_item_categories = test.has_item_categories = ds.has_item_categories;

  if (policy == SplitPolicy::by_fraction) {
    if (fraction < 0.0 || fraction > 1.0)
      throw config_error("split: fraction must be in [0, 1]");
    const size_t n_train = size_t(std::llround(fraction * double(ds.samples.size())));
    train.samples.assign(ds.samples.begin(), ds.samples.begin() + std::ptrdiff_t(n_train));
    test.samples.assign(ds.samples.begin() + std::ptrdiff_t(n_train), ds.samples.end());
  } else {
    for (const SampleRecord &s : ds.samples) {
      if (!s.has_ts) throw config_error("split by_time requires timestamps on every record");
      (s.ts < time_boundary ? train : test).samples.push_back(s);
    }
  }
  return {std::move(train), std::move(test)};
}

}  // namespace muse
