#include "muse/esu.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "muse/error.hpp"

namespace muse {

uint64_t TierHistogram::total() const {
  uint64_t s = 0;
  for (uint64_t c : counts) s += c;
  return s;
}

std::vector<double> TierHistogram::as_reals(bool normalized) const {
  std::vector<double> out(counts.size());
  const double denom = normalized ? std::max<uint64_t>(total(), 1) : 1;
  for (size_t i = 0; i < counts.size(); ++i) out[i] = double(counts[i]) / denom;
  return out;
}

TierHistogram simtier(std::span<const float> scores, size_t n_tiers) {
  if (n_tiers == 0) throw internal_error("simtier: n_tiers must be >= 1");
  TierHistogram h;
  h.counts.assign(n_tiers, 0);
  for (size_t i = 0; i < scores.size(); ++i) {
    const double r = scores[i];
    if (!std::isfinite(r))
      throw data_error("simtier: non-finite similarity at position " + std::to_string(i));
    if (r < -1.0 - 1e-6 || r > 1.0 + 1e-6)
      throw data_error("simtier: similarity out of [-1,1] at position " + std::to_string(i));
    const double clamped = std::clamp(r, -1.0, 1.0);
    const size_t bin = std::min(size_t(std::floor((clamped + 1.0) / 2.0 * double(n_tiers))),
                                n_tiers - 1);
    ++h.counts[bin];
  }
  return h;
}

TierHistogram merge_adjacent_tiers(const TierHistogram &h) {
  if (h.tiers() % 2 != 0) throw internal_error("merge_adjacent_tiers: odd tier count");
  TierHistogram out;
  out.counts.assign(h.tiers() / 2, 0);
  for (size_t i = 0; i < h.tiers(); ++i) out.counts[i / 2] += h.counts[i];
  return out;
}

void AttentionParams::validate() const {
  if (w_q.rows != w_k.rows || w_q.cols != w_k.cols)
    throw internal_error("attention params: w_q and w_k shapes differ");
  if (w_v.rows != w_q.rows)
    throw internal_error("attention params: w_v input dim differs from w_q");
  for (const Mat *m : {&w_q, &w_k, &w_v})
    for (double v : m->a)
      if (!std::isfinite(v)) throw data_error("attention params: non-finite entry");
  if (!std::isfinite(gamma1) || !std::isfinite(gamma2) || !std::isfinite(gamma3))
    throw data_error("attention params: non-finite gamma");
}

AttentionScores id_attention_scores(std::span<const double> e_a, const Mat &e_u,
                                    const AttentionParams &params) {
  if (e_a.size() != params.d_id() || (e_u.rows > 0 && e_u.cols != params.d_id()))
    throw internal_error("id_attention_scores: shape mismatch");
  AttentionScores out;
  const size_t n = e_u.rows;
  out.values.resize(n);
  out.mask.assign(n, 1);
  if (n == 0) return out;

  std::vector<double> q(params.d_att());
  vecmat(e_a, params.w_q, q);
  const double inv_sqrt_d = 1.0 / std::sqrt(double(params.d_att()));
  std::vector<double> key(params.d_att());
  for (size_t i = 0; i < n; ++i) {
    vecmat(e_u.row(i), params.w_k, key);
    out.values[i] = dot(key, q) * inv_sqrt_d;
  }
  return out;
}

AttentionScores fuse_scores(const AttentionScores &alpha_id, std::span<const float> r,
                            double gamma1, double gamma2, double gamma3) {
  if (alpha_id.size() != r.size())
    throw internal_error("fuse_scores: length mismatch " + std::to_string(alpha_id.size()) +
                         " vs " + std::to_string(r.size()));
  AttentionScores out;
  out.values.resize(alpha_id.size());
  out.mask = alpha_id.mask;
  for (size_t i = 0; i < alpha_id.size(); ++i) {
    const double a = alpha_id.values[i];
    const double ri = r[i];
    out.values[i] = gamma1 * a + gamma2 * ri + gamma3 * a * ri;
  }
  return out;
}

std::vector<double> softmax_masked(std::span<const double> values,
                                   std::span<const uint8_t> mask) {
  if (values.size() != mask.size()) throw internal_error("softmax_masked: length mismatch");
  std::vector<double> w(values.size(), 0.0);
  if (values.empty()) return w;

  double vmax = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < values.size(); ++i)
    if (mask[i]) vmax = std::max(vmax, values[i]);
  if (!std::isfinite(vmax))
    throw data_error("softmax: all positions masked");

  double z = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    if (!mask[i]) continue;
    w[i] = std::exp(values[i] - vmax);
    z += w[i];
  }
  for (size_t i = 0; i < values.size(); ++i) w[i] /= z;
  return w;
}

SaTaForward sa_ta_forward(std::span<const double> e_a, const Mat &e_u,
                          std::span<const float> r, const AttentionParams &params,
                          std::span<const uint8_t> mask) {
  const size_t n = e_u.rows;
  if (!mask.empty() && mask.size() != n) throw internal_error("sa_ta: mask length mismatch");

  SaTaForward f;
  f.query.resize(params.d_att());
  vecmat(e_a, params.w_q, f.query);
  f.alpha = id_attention_scores(e_a, e_u, params);
  if (!mask.empty()) f.alpha.mask.assign(mask.begin(), mask.end());

  f.keys = Mat(n, params.d_att());
  for (size_t i = 0; i < n; ++i) {
    auto row = f.keys.row(i);
    vecmat(e_u.row(i), params.w_k, row);
  }

  f.fused = fuse_scores(f.alpha, r, params.gamma1, params.gamma2, params.gamma3);
  f.u_id.assign(params.d_out(), 0.0);
  if (n == 0) {
    return f;  // empty history contributes the zero vector
  }
  f.weights = softmax_masked(f.fused.values, f.fused.mask);

  std::vector<double> value(params.d_out());
  for (size_t i = 0; i < n; ++i) {
    if (f.weights[i] == 0.0) continue;
    vecmat(e_u.row(i), params.w_v, value);
    axpy(f.weights[i], value, f.u_id);
  }
  return f;
}

std::vector<double> sa_ta(std::span<const double> e_a, const Mat &e_u,
                          std::span<const float> r, const AttentionParams &params,
                          std::span<const uint8_t> mask) {
  return sa_ta_forward(e_a, e_u, r, params, mask).u_id;
}

void sa_ta_backward(const SaTaForward &fwd, std::span<const double> e_a, const Mat &e_u,
                    std::span<const float> r, const AttentionParams &params,
                    std::span<const double> d_u_id, SaTaGrads &grads) {
  const size_t n = e_u.rows;
  if (n == 0) return;

  const double inv_sqrt_d = 1.0 / std::sqrt(double(params.d_att()));

  // value path: u_id = sum_i w_i * (E_u[i] W_v)
  std::vector<double> d_w(n, 0.0);  // d loss / d weights
  std::vector<double> value(params.d_out());
  std::vector<double> tmp_did(params.d_id());
  for (size_t i = 0; i < n; ++i) {
    if (fwd.fused.mask[i]) {
      vecmat(e_u.row(i), params.w_v, value);
      d_w[i] = dot(d_u_id, value);
    }
    if (fwd.weights.empty() || fwd.weights[i] == 0.0) continue;
    // d W_v += w_i * outer(E_u[i], d_u_id); d E_u[i] += w_i * W_v d_u_id
    add_outer(grads.d_w_v, fwd.weights[i], e_u.row(i), d_u_id);
    matvec(params.w_v, d_u_id, tmp_did);
    axpy(fwd.weights[i], tmp_did, grads.d_e_u.row(i));
  }

  // softmax backward over unmasked positions
  double wd = 0.0;
  for (size_t i = 0; i < n; ++i) wd += fwd.weights[i] * d_w[i];
  std::vector<double> d_fused(n, 0.0);
  for (size_t i = 0; i < n; ++i) d_fused[i] = fwd.weights[i] * (d_w[i] - wd);

  // fusion: fused_i = g1*a_i + g2*r_i + g3*a_i*r_i
  std::vector<double> d_alpha(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (!fwd.fused.mask[i]) continue;
    const double a = fwd.alpha.values[i];
    const double ri = r[i];
    grads.d_gamma1 += d_fused[i] * a;
    grads.d_gamma2 += d_fused[i] * ri;
    grads.d_gamma3 += d_fused[i] * a * ri;
    d_alpha[i] = d_fused[i] * (params.gamma1 + params.gamma3 * ri);
  }

  // attention scores: a_i = <k_i, q> / sqrt(d)
  std::vector<double> d_q(params.d_att(), 0.0);
  std::vector<double> d_k(params.d_att());
  for (size_t i = 0; i < n; ++i) {
    if (d_alpha[i] == 0.0) continue;
    axpy(d_alpha[i] * inv_sqrt_d, fwd.keys.row(i), d_q);
    for (size_t c = 0; c < params.d_att(); ++c) d_k[c] = d_alpha[i] * inv_sqrt_d * fwd.query[c];
    add_outer(grads.d_w_k, 1.0, e_u.row(i), d_k);
    matvec(params.w_k, d_k, tmp_did);
    axpy(1.0, tmp_did, grads.d_e_u.row(i));
  }
  add_outer(grads.d_w_q, 1.0, e_a, d_q);
  matvec(params.w_q, d_q, tmp_did);
  axpy(1.0, tmp_did, grads.d_e_a);
}

std::vector<double> lifelong_rep(std::span<const double> hist_reals,
                                 std::span<const double> u_id) {
  std::vector<double> out;
  out.reserve(hist_reals.size() + u_id.size());
  out.insert(out.end(), hist_reals.begin(), hist_reals.end());
  out.insert(out.end(), u_id.begin(), u_id.end());
  return out;
}

}  // namespace muse
