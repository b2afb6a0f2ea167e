#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace muse {

struct EvalRecord {
  uint64_t group = 0;  // user id
  double score = 0.0;
  int label = 0;  // 0 or 1
};

// Rank-sum (Mann-Whitney) AUC; ties count 1/2 via midranks. Single-class
// input is undefined, signalled as nullopt rather than a sentinel value.
std::optional<double> auc(std::span<const EvalRecord> records);

enum class GaucWeighting { impressions, uniform };

// Per-group AUC averaged with the chosen weights; groups with a single class
// are excluded from numerator and denominator. No valid group -> nullopt.
std::optional<double> gauc(std::span<const EvalRecord> records,
                           GaucWeighting weighting = GaucWeighting::impressions);

}  // namespace muse
