#include "muse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "muse/error.hpp"

namespace muse {

std::optional<double> auc(std::span<const EvalRecord> records) {
  size_t positives = 0;
  for (const EvalRecord &r : records) {
    if (r.label != 0 && r.label != 1) throw data_error("auc: non-binary label");
    if (!std::isfinite(r.score)) throw data_error("auc: non-finite score");
    positives += size_t(r.label);
  }
  const size_t negatives = records.size() - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<uint32_t> order(records.size());
  for (uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](uint32_t a, uint32_t b) { return records[a].score < records[b].score; });

  // midranks over tied score runs; sum ranks of positives
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && records[order[j]].score == records[order[i]].score) ++j;
    const double midrank = (double(i + 1) + double(j)) / 2.0;  // ranks are 1-based
    for (size_t t = i; t < j; ++t)
      if (records[order[t]].label == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double p = double(positives), n = double(negatives);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

std::optional<double> gauc(std::span<const EvalRecord> records, GaucWeighting weighting) {
  std::unordered_map<uint64_t, std::vector<EvalRecord>> groups;
  for (const EvalRecord &r : records) groups[r.group].push_back(r);

  // deterministic reduction order
  std::vector<uint64_t> keys;
  keys.reserve(groups.size());
  for (const auto &[k, _] : groups) keys.push_back(k);
  std::sort(keys.begin(), keys.end());

  double num = 0.0, den = 0.0;
  for (uint64_t k : keys) {
    const auto &recs = groups[k];
    std::optional<double> a = auc(recs);
    if (!a) continue;  // single-class group
    const double w = weighting == GaucWeighting::impressions ? double(recs.size()) : 1.0;
    num += w * *a;
    den += w;
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace muse
