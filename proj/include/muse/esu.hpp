#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "muse/linalg.hpp"

namespace muse {

// N-bin count vector over the similarity range [-1, 1].
struct TierHistogram {
  std::vector<uint64_t> counts;

  size_t tiers() const { return counts.size(); }
  uint64_t total() const;

  // counts cast to reals; normalized divides by the total (zero-safe)
  std::vector<double> as_reals(bool normalized = false) const;
};

// bin(r) = min(floor((r+1)/2 * N), N-1) after clamping r into [-1, 1].
// Scores outside [-1-1e-6, 1+1e-6] or non-finite are a data error.
TierHistogram simtier(std::span<const float> scores, size_t n_tiers);

// merge adjacent bin pairs: 2N tiers -> N tiers (exact under the clamp rule)
TierHistogram merge_adjacent_tiers(const TierHistogram &h);

struct AttentionParams {
  Mat w_q;  // D_id x D_att
  Mat w_k;  // D_id x D_att
  Mat w_v;  // D_id x D_out
  double gamma1 = 1.0;  // warm start at standard target attention
  double gamma2 = 0.0;
  double gamma3 = 0.0;

  size_t d_id() const { return w_q.rows; }
  size_t d_att() const { return w_q.cols; }
  size_t d_out() const { return w_v.cols; }
  void validate() const;
};

struct AttentionScores {
  std::vector<double> values;
  std::vector<uint8_t> mask;  // 1 = real position, 0 = excluded from softmax

  size_t size() const { return values.size(); }
};

// alpha[i] = <E_u[i] W_k, e_a W_q> / sqrt(D_att); mask all-ones
AttentionScores id_attention_scores(std::span<const double> e_a, const Mat &e_u,
                                    const AttentionParams &params);

// out[i] = g1*alpha[i] + g2*r[i] + g3*alpha[i]*r[i]; mask carried over
AttentionScores fuse_scores(const AttentionScores &alpha_id, std::span<const float> r,
                            double gamma1, double gamma2, double gamma3);

// softmax over unmasked positions; masked weights are exactly zero. All
// positions masked (with size > 0) is a degenerate-mask error.
std::vector<double> softmax_masked(std::span<const double> values,
                                   std::span<const uint8_t> mask);

// Forward pass with the intermediates the backward pass needs.
struct SaTaForward {
  std::vector<double> query;    // e_a W_q
  Mat keys;                     // E_u W_k, K' x D_att
  AttentionScores alpha;        // ID attention scores
  AttentionScores fused;        // after gamma fusion
  std::vector<double> weights;  // softmax, zero at masked positions
  std::vector<double> u_id;     // weights^T (E_u W_v), length D_out
};

SaTaForward sa_ta_forward(std::span<const double> e_a, const Mat &e_u,
                          std::span<const float> r, const AttentionParams &params,
                          std::span<const uint8_t> mask);

// Convenience wrapper returning just u_id (K' = 0 yields the zero vector).
std::vector<double> sa_ta(std::span<const double> e_a, const Mat &e_u,
                          std::span<const float> r, const AttentionParams &params,
                          std::span<const uint8_t> mask);

// Gradients of a scalar loss w.r.t. every SA-TA input, given d(loss)/d(u_id).
// Accumulates (+=) into the outputs; d_e_u rows cover keys and values paths.
struct SaTaGrads {
  std::vector<double> d_e_a;
  Mat d_e_u;
  Mat d_w_q, d_w_k, d_w_v;
  double d_gamma1 = 0.0, d_gamma2 = 0.0, d_gamma3 = 0.0;
};

void sa_ta_backward(const SaTaForward &fwd, std::span<const double> e_a, const Mat &e_u,
                    std::span<const float> r, const AttentionParams &params,
                    std::span<const double> d_u_id, SaTaGrads &grads);

// u_l = [histogram reals, u_id]
std::vector<double> lifelong_rep(std::span<const double> hist_reals,
                                 std::span<const double> u_id);

}  // namespace muse
