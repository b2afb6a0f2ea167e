#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "muse/dataset.hpp"
#include "muse/embedding_store.hpp"
#include "muse/esu.hpp"
#include "muse/gsu.hpp"
#include "muse/linalg.hpp"

namespace muse {

enum class GsuStrategy { muse, recent, category, id_similarity };
enum class EsuVariant { sa_ta_simtier, ta_only, simtier_only, ta_simtier };

std::string to_string(GsuStrategy s);
std::string to_string(EsuVariant v);
GsuStrategy gsu_strategy_from_string(const std::string &s);
EsuVariant esu_variant_from_string(const std::string &s);

// context features, in tower-input order
constexpr size_t kContextFeatures = 7;
extern const char *const kContextFeatureNames[kContextFeatures];

struct ModelConfig {
  GsuStrategy gsu_strategy = GsuStrategy::muse;
  uint32_t top_k = 50;
  uint32_t max_seq_len = 1000;

  EsuVariant esu_variant = EsuVariant::sa_ta_simtier;
  uint32_t n_tiers = 16;
  bool normalize_histogram = false;

  uint32_t d_id = 16;
  uint32_t d_att = 16;
  uint32_t d_out = 16;
  uint32_t d_ctx = 8;
  std::vector<uint32_t> tower = {128, 64};

  double lr_embedding = 2.0e-3;
  double lr_dnn = 2.0e-4;
  uint32_t batch_size = 256;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double logit_clamp = 30.0;
  uint64_t seed = 1;
  LookupMode embedding_mode = LookupMode::strict;

  // age, gender, city, province, category, item_city, item_province
  std::array<uint32_t, kContextFeatures> context_vocab = {128, 8, 512, 64, 2048, 512, 64};

  bool uses_attention() const { return esu_variant != EsuVariant::simtier_only; }
  bool uses_simtier() const { return esu_variant != EsuVariant::ta_only; }
  bool trains_gammas() const { return esu_variant == EsuVariant::sa_ta_simtier; }
  uint32_t tower_input_width() const {
    return n_tiers + d_out + uint32_t(kContextFeatures) * d_ctx;
  }

  void validate() const;
  static ModelConfig from_json_string(const std::string &text);
  std::string to_json_string() const;
};

struct DenseLayer {
  Mat w;  // out x in
  std::vector<double> b;
};

struct ModelParams {
  ModelConfig cfg;
  AttentionParams attention;
  std::vector<DenseLayer> tower;  // hidden layers then the scalar output layer
  std::array<Mat, kContextFeatures> context;
  std::unordered_map<uint64_t, std::vector<double>> id_embeddings;
  uint64_t step_count = 0;

  static ModelParams init(const ModelConfig &cfg);

  // Deterministic lazy row: the value depends only on (cfg.seed, id), never
  // on touch order, so forward results are batch-order invariant.
  const std::vector<double> &id_row(uint64_t id);
};

struct ForwardTrace {
  RetrievedSubsequence retrieved;
  std::vector<uint64_t> retrieved_items;
  std::vector<float> r;       // multimodal similarities of retrieved behaviors
  std::vector<double> hist;   // tier histogram as reals (zeros when unused)
  Mat e_u;                    // K' x d_id
  std::vector<double> e_a;    // d_id
  SaTaForward sata;
  bool attention_used = false;
  std::array<uint32_t, kContextFeatures> ctx_idx{};
  std::vector<std::vector<double>> acts;  // acts[0] = tower input, then post-ReLU
  std::vector<std::vector<double>> pre;   // pre-activations per layer
  double logit = 0.0;
  double p = 0.0;
};

// p_hat = sigmoid(tower([hist, u_id, context])), logit clamped to
// +-cfg.logit_clamp. `item_categories` is needed only by the category
// strategy. params is non-const for lazy ID-embedding materialization.
double forward(const SampleRecord &sample, ModelParams &params, const EmbeddingTable &table,
               const std::unordered_map<uint64_t, int32_t> *item_categories,
               ForwardTrace *trace = nullptr);

double bce_loss(double p_hat, int label);

struct Gradients {
  Mat d_w_q, d_w_k, d_w_v;
  double d_gamma1 = 0.0, d_gamma2 = 0.0, d_gamma3 = 0.0;
  std::vector<DenseLayer> tower;  // same shapes as params.tower
  std::array<Mat, kContextFeatures> context;
  std::unordered_map<uint64_t, std::vector<double>> id_rows;

  static Gradients zeros_like(const ModelParams &params);
};

// Mean-batch-loss gradients for every trainable parameter. The multimodal
// table is frozen and receives none.
Gradients gradients(std::span<const SampleRecord> batch, ModelParams &params,
                    const EmbeddingTable &table,
                    const std::unordered_map<uint64_t, int32_t> *item_categories,
                    double *mean_loss = nullptr);

struct TrainLog {
  struct Step {
    uint64_t step;
    double loss;
    uint64_t samples;
  };
  std::vector<Step> steps;
  uint64_t total_samples = 0;

  std::string to_json_string() const;
};

// One epoch over the samples in order, Adam updates with two parameter
// groups (embedding lr / dnn lr). Reproducible from cfg.seed.
std::pair<ModelParams, TrainLog> train(const Dataset &data, const EmbeddingTable &table,
                                       const ModelConfig &cfg);

struct PredictionBatch {
  std::vector<double> probabilities;
  std::vector<uint64_t> users;
  std::vector<int32_t> labels;
};

PredictionBatch predict_batch(std::span<const SampleRecord> samples, ModelParams &params,
                              const EmbeddingTable &table,
                              const std::unordered_map<uint64_t, int32_t> *item_categories);

// Checkpoint: "MUSECKP1" | u64 json_len | metadata JSON (config, seed, step
// count, id list) | u32 tensor count | per tensor: name, shape, fnv1a64
// checksum, f32 payload.
void save_checkpoint(const ModelParams &params, const std::string &path);
ModelParams load_checkpoint(const std::string &path);

}  // namespace muse
