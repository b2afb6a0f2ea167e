#include "muse/serving.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "muse/embedding_store.hpp"
#include "muse/error.hpp"
#include "muse/gsu.hpp"

namespace muse {
namespace serving {

using nlohmann::json;

double LatencyDist::sample(Rng &rng) const {
  switch (kind) {
    case Kind::constant: return value;
    case Kind::uniform: return rng.uniform(lo, hi);
    case Kind::exponential: return rng.exponential(mean);
    case Kind::lognormal: return rng.lognormal(mu, sigma);
    case Kind::spike: return base + (rng.uniform01() < prob ? extra : 0.0);
  }
  return 0.0;
}

LatencyDist LatencyDist::constant_of(double v) {
  LatencyDist d;
  d.kind = Kind::constant;
  d.value = v;
  return d;
}

LatencyDist LatencyDist::from_json_string(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw config_error(std::string("latency distribution: ") + e.what());
  }
  LatencyDist d;
  const std::string kind = j.at("kind").get<std::string>();
  auto need = [&](const char *k) {
    if (!j.contains(k))
      throw config_error("latency distribution '" + kind + "' missing field '" + k + "'");
    return j.at(k).get<double>();
  };
  if (kind == "constant") {
    d.kind = Kind::constant;
    d.value = need("value");
    if (d.value < 0) throw config_error("latency must be non-negative");
  } else if (kind == "uniform") {
    d.kind = Kind::uniform;
    d.lo = need("lo");
    d.hi = need("hi");
    if (d.lo < 0 || d.hi < d.lo) throw config_error("bad uniform latency range");
  } else if (kind == "exponential") {
    d.kind = Kind::exponential;
    d.mean = need("mean");
    if (d.mean < 0) throw config_error("latency must be non-negative");
  } else if (kind == "lognormal") {
    d.kind = Kind::lognormal;
    d.mu = need("mu");
    d.sigma = need("sigma");
  } else if (kind == "spike") {
    d.kind = Kind::spike;
    d.base = need("base");
    d.extra = need("extra");
    d.prob = need("prob");
    if (d.base < 0 || d.extra < 0 || d.prob < 0 || d.prob > 1)
      throw config_error("bad spike latency parameters");
  } else {
    throw config_error("unknown latency distribution kind '" + kind + "'");
  }
  return d;
}

std::string LatencyDist::to_json_string() const {
  json j;
  switch (kind) {
    case Kind::constant: j = {{"kind", "constant"}, {"value", value}}; break;
    case Kind::uniform: j = {{"kind", "uniform"}, {"lo", lo}, {"hi", hi}}; break;
    case Kind::exponential: j = {{"kind", "exponential"}, {"mean", mean}}; break;
    case Kind::lognormal: j = {{"kind", "lognormal"}, {"mu", mu}, {"sigma", sigma}}; break;
    case Kind::spike:
      j = {{"kind", "spike"}, {"base", base}, {"extra", extra}, {"prob", prob}};
      break;
  }
  return j.dump();
}

PipelineTrace simulate_request(const StageDraw &draw, PipelineMode mode, UserCache &cache,
                               uint64_t user) {
  PipelineTrace t;
  t.mode = mode;
  t.cache_hit = cache.get(user).has_value();
  const double prefetch = t.cache_hit ? 0.0 : draw.prefetch;

  if (mode == PipelineMode::async_prefetch) {
    // prefetch runs alongside matching; top-k alongside other ranking work
    t.matching_start = 0;
    t.matching_end = draw.matching;
    t.prefetch_start = 0;
    t.prefetch_end = prefetch;
    const double ranking_begin = std::max(t.matching_end, t.prefetch_end);
    t.topk_start = t.other_start = ranking_begin;
    t.topk_end = ranking_begin + draw.topk;
    t.other_end = ranking_begin + draw.other_ranking;
    t.esu_start = std::max(t.topk_end, t.other_end);
    t.esu_end = t.esu_start + draw.esu;
    t.exposed_prefetch = std::max(0.0, prefetch - draw.matching);
  } else {
    t.matching_start = 0;
    t.matching_end = draw.matching;
    t.prefetch_start = t.matching_end;
    t.prefetch_end = t.prefetch_start + prefetch;
    t.topk_start = t.prefetch_end;
    t.topk_end = t.topk_start + draw.topk;
    t.other_start = t.topk_end;
    t.other_end = t.other_start + draw.other_ranking;
    t.esu_start = t.other_end;
    t.esu_end = t.esu_start + draw.esu;
    t.exposed_prefetch = prefetch;
  }
  t.total = t.esu_end;
  if (!t.cache_hit) cache.put(user, 1);  // populated at fetch completion
  return t;
}

ScenarioConfig ScenarioConfig::from_json_string(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw config_error(std::string("scenario config: ") + e.what());
  }
  static const std::vector<std::string> allowed = {
      "seed", "requests", "users", "zipf_users", "zipf_s", "cache_capacity", "latencies"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw config_error("scenario config: unknown key '" + it.key() + "'");
  ScenarioConfig c;
  auto get = [&](const char *k, auto &field) {
    if (auto it = j.find(k); it != j.end()) field = it->get<std::decay_t<decltype(field)>>();
  };
  get("seed", c.seed);
  get("requests", c.requests);
  get("users", c.users);
  get("zipf_users", c.zipf_users);
  get("zipf_s", c.zipf_s);
  get("cache_capacity", c.cache_capacity);
  if (auto it = j.find("latencies"); it != j.end()) {
    static const std::vector<std::string> stages = {"matching", "prefetch", "topk", "esu",
                                                    "other_ranking"};
    for (auto s = it->begin(); s != it->end(); ++s)
      if (std::find(stages.begin(), stages.end(), s.key()) == stages.end())
        throw config_error("scenario config: unknown stage '" + s.key() + "'");
    auto stage = [&](const char *k, LatencyDist &d) {
      if (it->contains(k)) d = LatencyDist::from_json_string(it->at(k).dump());
    };
    stage("matching", c.latencies.matching);
    stage("prefetch", c.latencies.prefetch);
    stage("topk", c.latencies.topk);
    stage("esu", c.latencies.esu);
    stage("other_ranking", c.latencies.other_ranking);
  }
  if (c.users == 0) throw config_error("scenario config: users must be positive");
  return c;
}

std::string ScenarioConfig::to_json_string() const {
  json j = {
      {"seed", seed},
      {"requests", requests},
      {"users", users},
      {"zipf_users", zipf_users},
      {"zipf_s", zipf_s},
      {"cache_capacity", cache_capacity},
      {"latencies",
       {{"matching", json::parse(latencies.matching.to_json_string())},
        {"prefetch", json::parse(latencies.prefetch.to_json_string())},
        {"topk", json::parse(latencies.topk.to_json_string())},
        {"esu", json::parse(latencies.esu.to_json_string())},
        {"other_ranking", json::parse(latencies.other_ranking.to_json_string())}}},
  };
  return j.dump(2);
}

ScenarioConfig ScenarioConfig::named(const std::string &name) {
  ScenarioConfig c;
  auto uniform = [](double lo, double hi) {
    LatencyDist d;
    d.kind = LatencyDist::Kind::uniform;
    d.lo = lo;
    d.hi = hi;
    return d;
  };
  if (name == "fast_fetch") {
    // prefetch dominated by matching: its latency should vanish entirely
    c.latencies.matching = uniform(25, 40);
    c.latencies.prefetch = uniform(5, 20);
    c.latencies.topk = LatencyDist::constant_of(2);
    c.latencies.other_ranking = uniform(4, 8);
    c.latencies.esu = uniform(30, 45);
  } else if (name == "slow_fetch") {
    c.latencies.matching = uniform(25, 40);
    c.latencies.prefetch = uniform(20, 80);
    c.latencies.topk = LatencyDist::constant_of(2);
    c.latencies.other_ranking = uniform(4, 8);
    c.latencies.esu = uniform(30, 45);
  } else if (name == "bursty") {
    LatencyDist spike;
    spike.kind = LatencyDist::Kind::spike;
    spike.base = 12;
    spike.extra = 120;
    spike.prob = 0.05;
    c.latencies.matching = uniform(25, 40);
    c.latencies.prefetch = spike;
    c.latencies.topk = LatencyDist::constant_of(2);
    c.latencies.other_ranking = uniform(4, 8);
    c.latencies.esu = uniform(30, 45);
    c.zipf_users = true;
  } else {
    throw config_error("unknown scenario '" + name + "' (fast_fetch, slow_fetch, bursty)");
  }
  return c;
}

namespace {

double percentile(std::vector<double> sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double x = p * double(sorted.size() - 1);
  const size_t i = size_t(x);
  const size_t j = std::min(i + 1, sorted.size() - 1);
  const double frac = x - double(i);
  return sorted[i] * (1.0 - frac) + sorted[j] * frac;
}

ModeStats stats_of(const std::vector<PipelineTrace> &traces) {
  ModeStats s;
  if (traces.empty()) return s;
  std::vector<double> totals;
  totals.reserve(traces.size());
  double sum = 0, exposed = 0;
  uint64_t hits = 0;
  for (const PipelineTrace &t : traces) {
    totals.push_back(t.total);
    sum += t.total;
    exposed += t.exposed_prefetch;
    hits += t.cache_hit ? 1 : 0;
  }
  std::sort(totals.begin(), totals.end());
  s.p50 = percentile(totals, 0.50);
  s.p95 = percentile(totals, 0.95);
  s.p99 = percentile(totals, 0.99);
  s.mean = sum / double(traces.size());
  s.hit_rate = double(hits) / double(traces.size());
  s.mean_exposed_prefetch = exposed / double(traces.size());
  return s;
}

json stats_json(const ModeStats &s) {
  return {{"p50_ms", s.p50},
          {"p95_ms", s.p95},
          {"p99_ms", s.p99},
          {"mean_ms", s.mean},
          {"cache_hit_rate", s.hit_rate},
          {"mean_exposed_prefetch_ms", s.mean_exposed_prefetch}};
}

}  // namespace

std::string ScenarioReport::to_json_string() const {
  json j = {{"requests", requests},
            {"async", stats_json(async_stats)},
            {"sync", stats_json(sync_stats)}};
  return j.dump(2);
}

ScenarioReport run_scenario(const ScenarioConfig &cfg, const std::string &trace_csv_path) {
  Rng rng(cfg.seed);

  // zipf over ranks 1..users via inverse-cdf on precomputed weights
  std::vector<double> zipf_cdf;
  if (cfg.zipf_users) {
    zipf_cdf.resize(cfg.users);
    double acc = 0;
    for (uint64_t r = 0; r < cfg.users; ++r) {
      acc += 1.0 / std::pow(double(r + 1), cfg.zipf_s);
      zipf_cdf[r] = acc;
    }
    for (double &v : zipf_cdf) v /= acc;
  }

  struct Request {
    uint64_t user;
    StageDraw draw;
  };
  std::vector<Request> stream;
  stream.reserve(cfg.requests);
  for (uint64_t i = 0; i < cfg.requests; ++i) {
    Request req;
    if (cfg.zipf_users) {
      const double u = rng.uniform01();
      req.user = uint64_t(std::lower_bound(zipf_cdf.begin(), zipf_cdf.end(), u) -
                          zipf_cdf.begin());
    } else {
      req.user = rng.uniform_int(cfg.users);
    }
    req.draw.matching = cfg.latencies.matching.sample(rng);
    req.draw.prefetch = cfg.latencies.prefetch.sample(rng);
    req.draw.topk = cfg.latencies.topk.sample(rng);
    req.draw.esu = cfg.latencies.esu.sample(rng);
    req.draw.other_ranking = cfg.latencies.other_ranking.sample(rng);
    stream.push_back(req);
  }

  // identical stream through each mode, fresh cache per mode
  std::vector<PipelineTrace> async_traces, sync_traces;
  async_traces.reserve(stream.size());
  sync_traces.reserve(stream.size());
  {
    UserCache cache(cfg.cache_capacity);
    for (const Request &req : stream)
      async_traces.push_back(
          simulate_request(req.draw, PipelineMode::async_prefetch, cache, req.user));
  }
  {
    UserCache cache(cfg.cache_capacity);
    for (const Request &req : stream)
      sync_traces.push_back(
          simulate_request(req.draw, PipelineMode::sync_serial, cache, req.user));
  }

  if (!trace_csv_path.empty()) {
    std::ofstream csv(trace_csv_path, std::ios::trunc);
    if (!csv) throw data_error("cannot open for write: " + trace_csv_path);
    csv << "request,mode,user,cache_hit,matching_ms,prefetch_ms,topk_ms,other_ms,esu_ms,"
           "exposed_prefetch_ms,total_ms\n";
    auto dump = [&](const std::vector<PipelineTrace> &traces, const char *mode) {
      for (size_t i = 0; i < traces.size(); ++i) {
        const PipelineTrace &t = traces[i];
        csv << i << ',' << mode << ',' << stream[i].user << ',' << (t.cache_hit ? 1 : 0) << ','
            << (t.matching_end - t.matching_start) << ',' << (t.prefetch_end - t.prefetch_start)
            << ',' << (t.topk_end - t.topk_start) << ',' << (t.other_end - t.other_start) << ','
            << (t.esu_end - t.esu_start) << ',' << t.exposed_prefetch << ',' << t.total << "\n";
      }
    };
    dump(async_traces, "async");
    dump(sync_traces, "sync");
  }

  ScenarioReport report;
  report.requests = cfg.requests;
  report.async_stats = stats_of(async_traces);
  report.sync_stats = stats_of(sync_traces);
  return report;
}

std::string BenchReport::to_json_string() const {
  json j = {
      {"seq_len", seq_len},
      {"dim", dim},
      {"k", k},
      {"repetitions", repetitions},
      {"mean_ms", mean_ms},
      {"stddev_ms", stddev_ms},
      {"median_ms", median_ms},
      {"min_ms", min_ms},
      {"scans_per_sec", scans_per_sec},
      {"gb_per_sec", gb_per_sec},
      {"oracle_ok", oracle_ok},
  };
  return j.dump(2);
}

BenchReport bench_retrieval(uint64_t seq_len, uint32_t dim, uint64_t k, uint64_t repetitions,
                            uint64_t seed) {
  if (dim == 0 || k == 0 || repetitions == 0)
    throw config_error("bench: dim, k and repetitions must be positive");

  BenchReport rep;
  rep.seq_len = seq_len;
  rep.dim = dim;
  rep.k = k;
  rep.repetitions = repetitions;

  if (seq_len == 0) {  // zero-work report
    rep.oracle_ok = true;
    return rep;
  }

  Rng rng(seed);
  EmbeddingTable table(dim);
  std::vector<float> vec(dim);
  auto fill_unit = [&]() {
    double sq = 0;
    for (uint32_t d = 0; d < dim; ++d) {
      vec[d] = float(rng.normal());
      sq += double(vec[d]) * double(vec[d]);
    }
    const float inv = float(1.0 / std::sqrt(std::max(sq, 1e-30)));
    for (float &x : vec) x *= inv;
  };
  BehaviorSequence seq;
  seq.items.resize(seq_len);
  for (uint64_t i = 0; i < seq_len; ++i) {
    fill_unit();
    table.insert(i + 1, vec);
    seq.items[i] = i + 1;
  }
  const uint64_t target = seq_len;  // reuse the last inserted item as target

  // correctness gate against the full-sort path
  RetrievedSubsequence got = gsu_retrieve(target, seq, table, k, LookupMode::strict,
                                          TopKAlgo::heap);
  RetrievedSubsequence want = gsu_retrieve(target, seq, table, k, LookupMode::strict,
                                           TopKAlgo::full_sort);
  rep.oracle_ok = got.indices == want.indices && got.scores == want.scores;
  if (!rep.oracle_ok)
    throw internal_error("bench: top-k result disagrees with the sort oracle");

  std::vector<double> times_ms;
  times_ms.reserve(repetitions);
  volatile float sink = 0.0f;
  for (uint64_t r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RetrievedSubsequence res = gsu_retrieve(target, seq, table, k);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + (res.scores.empty() ? 0.0f : res.scores[0]);
    times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  (void)sink;

  double sum = 0;
  rep.min_ms = times_ms[0];
  for (double t : times_ms) {
    sum += t;
    rep.min_ms = std::min(rep.min_ms, t);
  }
  rep.mean_ms = sum / double(times_ms.size());
  double var = 0;
  for (double t : times_ms) var += (t - rep.mean_ms) * (t - rep.mean_ms);
  rep.stddev_ms = std::sqrt(var / double(times_ms.size()));
  std::vector<double> sorted = times_ms;
  std::sort(sorted.begin(), sorted.end());
  rep.median_ms = sorted[sorted.size() / 2];
  rep.scans_per_sec = 1000.0 / rep.mean_ms;
  rep.gb_per_sec = (double(seq_len) * dim * 4.0) / (rep.mean_ms * 1e-3) / 1e9;
  return rep;
}

}  // namespace serving
}  // namespace muse
