#include "muse/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "muse/checksum.hpp"
#include "muse/error.hpp"
#include "muse/rng.hpp"

namespace muse {

using nlohmann::json;

const char *const kContextFeatureNames[kContextFeatures] = {
    "age", "gender", "city", "province", "category", "item_city", "item_province"};

std::string to_string(GsuStrategy s) {
  switch (s) {
    case GsuStrategy::muse: return "muse";
    case GsuStrategy::recent: return "recent";
    case GsuStrategy::category: return "category";
    case GsuStrategy::id_similarity: return "id_similarity";
  }
  return "?";
}

std::string to_string(EsuVariant v) {
  switch (v) {
    case EsuVariant::sa_ta_simtier: return "sa_ta+simtier";
    case EsuVariant::ta_only: return "ta_only";
    case EsuVariant::simtier_only: return "simtier_only";
    case EsuVariant::ta_simtier: return "ta+simtier";
  }
  return "?";
}

GsuStrategy gsu_strategy_from_string(const std::string &s) {
  if (s == "muse") return GsuStrategy::muse;
  if (s == "recent") return GsuStrategy::recent;
  if (s == "category") return GsuStrategy::category;
  if (s == "id_similarity") return GsuStrategy::id_similarity;
  throw config_error("unknown GSU strategy '" + s + "'");
}

EsuVariant esu_variant_from_string(const std::string &s) {
  if (s == "sa_ta+simtier") return EsuVariant::sa_ta_simtier;
  if (s == "ta_only") return EsuVariant::ta_only;
  if (s == "simtier_only") return EsuVariant::simtier_only;
  if (s == "ta+simtier") return EsuVariant::ta_simtier;
  throw config_error("unknown ESU variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (top_k == 0) throw config_error("model: top_k must be >= 1");
  if (n_tiers == 0) throw config_error("model: n_tiers must be >= 1");
  if (d_id == 0 || d_att == 0 || d_out == 0 || d_ctx == 0)
    throw config_error("model: embedding dims must be positive");
  if (batch_size == 0) throw config_error("model: batch_size must be >= 1");
  if (logit_clamp <= 0) throw config_error("model: logit_clamp must be positive");
  if (lr_embedding <= 0 || lr_dnn <= 0) throw config_error("model: learning rates must be positive");
  for (uint32_t v : context_vocab)
    if (v == 0) throw config_error("model: context vocab sizes must be positive");
}

ModelConfig ModelConfig::from_json_string(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw config_error(std::string("model config: ") + e.what());
  }
  static const std::vector<std::string> allowed = {
      "gsu_strategy", "top_k",      "max_seq_len", "esu_variant", "n_tiers",
      "normalize_histogram", "d_id", "d_att",      "d_out",       "d_ctx",
      "tower",        "lr_embedding", "lr_dnn",    "batch_size",  "adam_beta1",
      "adam_beta2",   "adam_eps",   "logit_clamp", "seed",        "embedding_mode",
      "context_vocab"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw config_error("model config: unknown key '" + it.key() + "'");

  ModelConfig c;
  auto get = [&](const char *k, auto &field) {
    if (auto it = j.find(k); it != j.end()) field = it->get<std::decay_t<decltype(field)>>();
  };
  if (auto it = j.find("gsu_strategy"); it != j.end())
    c.gsu_strategy = gsu_strategy_from_string(it->get<std::string>());
  if (auto it = j.find("esu_variant"); it != j.end())
    c.esu_variant = esu_variant_from_string(it->get<std::string>());
  if (auto it = j.find("embedding_mode"); it != j.end()) {
    const std::string m = it->get<std::string>();
    if (m == "strict")
      c.embedding_mode = LookupMode::strict;
    else if (m == "permissive")
      c.embedding_mode = LookupMode::permissive;
    else
      throw config_error("model config: bad embedding_mode '" + m + "'");
  }
  get("top_k", c.top_k);
  get("max_seq_len", c.max_seq_len);
  get("n_tiers", c.n_tiers);
  get("normalize_histogram", c.normalize_histogram);
  get("d_id", c.d_id);
  get("d_att", c.d_att);
  get("d_out", c.d_out);
  get("d_ctx", c.d_ctx);
  get("tower", c.tower);
  get("lr_embedding", c.lr_embedding);
  get("lr_dnn", c.lr_dnn);
  get("batch_size", c.batch_size);
  get("adam_beta1", c.adam_beta1);
  get("adam_beta2", c.adam_beta2);
  get("adam_eps", c.adam_eps);
  get("logit_clamp", c.logit_clamp);
  get("seed", c.seed);
  if (auto it = j.find("context_vocab"); it != j.end()) {
    auto v = it->get<std::vector<uint32_t>>();
    if (v.size() != kContextFeatures)
      throw config_error("model config: context_vocab must list " +
                         std::to_string(kContextFeatures) + " sizes");
    std::copy(v.begin(), v.end(), c.context_vocab.begin());
  }
  c.validate();
  return c;
}

std::string ModelConfig::to_json_string() const {
  json j = {
      {"gsu_strategy", to_string(gsu_strategy)},
      {"top_k", top_k},
      {"max_seq_len", max_seq_len},
      {"esu_variant", to_string(esu_variant)},
      {"n_tiers", n_tiers},
      {"normalize_histogram", normalize_histogram},
      {"d_id", d_id},
      {"d_att", d_att},
      {"d_out", d_out},
      {"d_ctx", d_ctx},
      {"tower", tower},
      {"lr_embedding", lr_embedding},
      {"lr_dnn", lr_dnn},
      {"batch_size", batch_size},
      {"adam_beta1", adam_beta1},
      {"adam_beta2", adam_beta2},
      {"adam_eps", adam_eps},
      {"logit_clamp", logit_clamp},
      {"seed", seed},
      {"embedding_mode", embedding_mode == LookupMode::strict ? "strict" : "permissive"},
      {"context_vocab", std::vector<uint32_t>(context_vocab.begin(), context_vocab.end())},
  };
  return j.dump(2);
}

namespace {

// tensor tags for deterministic parameter init
enum : uint64_t {
  kTagWq = 0x51,
  kTagWk = 0x4b,
  kTagWv = 0x56,
  kTagTower = 0x1000,
  kTagContext = 0x2000,
  kTagIdRow = 0x3000,
};

void fill_uniform(Mat &m, Rng rng, double bound) {
  for (double &v : m.a) v = rng.uniform(-bound, bound);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ModelParams ModelParams::init(const ModelConfig &cfg) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  Rng root(cfg.seed);

  p.attention.w_q = Mat(cfg.d_id, cfg.d_att);
  p.attention.w_k = Mat(cfg.d_id, cfg.d_att);
  p.attention.w_v = Mat(cfg.d_id, cfg.d_out);
  const double att_bound = 1.0 / std::sqrt(double(cfg.d_id));
  fill_uniform(p.attention.w_q, root.fork(kTagWq), att_bound);
  fill_uniform(p.attention.w_k, root.fork(kTagWk), att_bound);
  fill_uniform(p.attention.w_v, root.fork(kTagWv), att_bound);
  p.attention.gamma1 = 1.0;  // starts as standard target attention
  p.attention.gamma2 = 0.0;
  p.attention.gamma3 = 0.0;

  uint32_t in_w = cfg.tower_input_width();
  for (size_t l = 0; l < cfg.tower.size() + 1; ++l) {
    const uint32_t out_w = l < cfg.tower.size() ? cfg.tower[l] : 1;
    DenseLayer layer;
    layer.w = Mat(out_w, in_w);
    layer.b.assign(out_w, 0.0);
    fill_uniform(layer.w, root.fork(kTagTower + l), 1.0 / std::sqrt(double(in_w)));
    p.tower.push_back(std::move(layer));
    in_w = out_w;
  }

  for (size_t f = 0; f < kContextFeatures; ++f) {
    p.context[f] = Mat(cfg.context_vocab[f], cfg.d_ctx);
    fill_uniform(p.context[f], root.fork(kTagContext + f), 1.0 / std::sqrt(double(cfg.d_ctx)));
  }
  return p;
}

const std::vector<double> &ModelParams::id_row(uint64_t id) {
  auto it = id_embeddings.find(id);
  if (it != id_embeddings.end()) return it->second;
  Rng rng(mix64(mix64(cfg.seed, kTagIdRow), id));
  std::vector<double> row(cfg.d_id);
  const double bound = 1.0 / std::sqrt(double(cfg.d_id));
  for (double &v : row) v = rng.uniform(-bound, bound);
  return id_embeddings.emplace(id, std::move(row)).first->second;
}

namespace {

uint32_t context_index(int64_t value, uint32_t vocab) {
  int64_t m = value % int64_t(vocab);
  if (m < 0) m += vocab;
  return uint32_t(m);
}

std::array<int64_t, kContextFeatures> context_values(const SampleRecord &s) {
  return {s.age, s.gender, s.city, s.province, s.category, s.item_city, s.item_province};
}

// strategy-dependent retrieval + multimodal similarity of the selected items
void run_gsu(const SampleRecord &sample, ModelParams &params, const EmbeddingTable &table,
             const std::unordered_map<uint64_t, int32_t> *item_categories, ForwardTrace &t) {
  const ModelConfig &cfg = params.cfg;
  BehaviorSequence seq;
  seq.user = sample.user_id;
  const auto &items = sample.behavior_items();
  const size_t start = items.size() > cfg.max_seq_len ? items.size() - cfg.max_seq_len : 0;
  seq.items.assign(items.begin() + std::ptrdiff_t(start), items.end());

  switch (cfg.gsu_strategy) {
    case GsuStrategy::muse:
      t.retrieved = gsu_retrieve(sample.item_id, seq, table, cfg.top_k, cfg.embedding_mode);
      t.r = t.retrieved.scores;
      break;
    case GsuStrategy::recent:
      t.retrieved = baseline_retrieve(BaselineStrategy::recent, sample.item_id, sample.category,
                                      seq, nullptr, cfg.top_k);
      break;
    case GsuStrategy::category: {
      if (!item_categories)
        throw config_error("category retrieval requires item metadata");
      seq.categories.resize(seq.items.size());
      for (size_t i = 0; i < seq.items.size(); ++i) {
        auto it = item_categories->find(seq.items[i]);
        seq.categories[i] = it == item_categories->end() ? -1 : it->second;
      }
      t.retrieved = baseline_retrieve(BaselineStrategy::category, sample.item_id,
                                      sample.category, seq, nullptr, cfg.top_k);
      break;
    }
    case GsuStrategy::id_similarity: {
      params.id_row(sample.item_id);
      for (uint64_t id : seq.items) params.id_row(id);
      t.retrieved = baseline_retrieve(BaselineStrategy::id_similarity, sample.item_id,
                                      sample.category, seq, &params.id_embeddings, cfg.top_k);
      break;
    }
  }

  t.retrieved_items.resize(t.retrieved.size());
  for (size_t i = 0; i < t.retrieved.size(); ++i)
    t.retrieved_items[i] = seq.items[t.retrieved.indices[i]];

  if (cfg.gsu_strategy != GsuStrategy::muse) {
    // similarity of the selected behaviors under the frozen multimodal table
    t.r.resize(t.retrieved.size());
    std::span<const float> tv = table.lookup(sample.item_id, cfg.embedding_mode);
    for (size_t i = 0; i < t.retrieved_items.size(); ++i) {
      std::span<const float> bv = table.lookup(t.retrieved_items[i], cfg.embedding_mode);
      t.r[i] = dot_f32(tv.data(), bv.data(), table.dim());
    }
  }
}

}  // namespace

double forward(const SampleRecord &sample, ModelParams &params, const EmbeddingTable &table,
               const std::unordered_map<uint64_t, int32_t> *item_categories,
               ForwardTrace *trace) {
  const ModelConfig &cfg = params.cfg;
  ForwardTrace local;
  ForwardTrace &t = trace ? *trace : local;

  run_gsu(sample, params, table, item_categories, t);

  if (cfg.uses_simtier()) {
    t.hist = simtier(t.r, cfg.n_tiers).as_reals(cfg.normalize_histogram);
  } else {
    t.hist.assign(cfg.n_tiers, 0.0);
  }

  t.attention_used = cfg.uses_attention();
  std::vector<double> u_id;
  if (t.attention_used) {
    const size_t n = t.retrieved_items.size();
    t.e_a = params.id_row(sample.item_id);
    t.e_u = Mat(n, cfg.d_id);
    for (size_t i = 0; i < n; ++i) {
      const std::vector<double> &row = params.id_row(t.retrieved_items[i]);
      std::copy(row.begin(), row.end(), t.e_u.row(i).begin());
    }
    t.sata = sa_ta_forward(t.e_a, t.e_u, t.r, params.attention, {});
    u_id = t.sata.u_id;
  } else {
    u_id.assign(cfg.d_out, 0.0);
  }

  // tower input: [histogram, u_id, context embeddings]
  std::vector<double> x = lifelong_rep(t.hist, u_id);
  const auto vals = context_values(sample);
  for (size_t f = 0; f < kContextFeatures; ++f) {
    t.ctx_idx[f] = context_index(vals[f], cfg.context_vocab[f]);
    auto row = params.context[f].row(t.ctx_idx[f]);
    x.insert(x.end(), row.begin(), row.end());
  }

  t.acts.clear();
  t.pre.clear();
  t.acts.push_back(std::move(x));
  for (size_t l = 0; l < params.tower.size(); ++l) {
    const DenseLayer &layer = params.tower[l];
    std::vector<double> z(layer.w.rows);
    matvec(layer.w, t.acts.back(), z);
    for (size_t i = 0; i < z.size(); ++i) z[i] += layer.b[i];
    t.pre.push_back(z);
    if (l + 1 < params.tower.size())
      for (double &v : z) v = relu(v);
    t.acts.push_back(std::move(z));
  }

  double logit = t.acts.back()[0];
  logit = std::clamp(logit, -cfg.logit_clamp, cfg.logit_clamp);
  t.logit = logit;
  t.p = sigmoid(logit);
  return t.p;
}

double bce_loss(double p_hat, int label) {
  if (p_hat <= 0.0 || p_hat >= 1.0) throw internal_error("bce_loss: p_hat must be in (0,1)");
  return label == 1 ? -std::log(p_hat) : -std::log(1.0 - p_hat);
}

Gradients Gradients::zeros_like(const ModelParams &params) {
  Gradients g;
  g.d_w_q = Mat(params.attention.w_q.rows, params.attention.w_q.cols);
  g.d_w_k = Mat(params.attention.w_k.rows, params.attention.w_k.cols);
  g.d_w_v = Mat(params.attention.w_v.rows, params.attention.w_v.cols);
  for (const DenseLayer &l : params.tower) {
    DenseLayer gl;
    gl.w = Mat(l.w.rows, l.w.cols);
    gl.b.assign(l.b.size(), 0.0);
    g.tower.push_back(std::move(gl));
  }
  for (size_t f = 0; f < kContextFeatures; ++f)
    g.context[f] = Mat(params.context[f].rows, params.context[f].cols);
  return g;
}

Gradients gradients(std::span<const SampleRecord> batch, ModelParams &params,
                    const EmbeddingTable &table,
                    const std::unordered_map<uint64_t, int32_t> *item_categories,
                    double *mean_loss) {
  const ModelConfig &cfg = params.cfg;
  Gradients g = Gradients::zeros_like(params);
  double loss_sum = 0.0;
  const double inv_b = batch.empty() ? 0.0 : 1.0 / double(batch.size());

  ForwardTrace t;
  SaTaGrads sg;
  for (const SampleRecord &sample : batch) {
    forward(sample, params, table, item_categories, &t);
    loss_sum += bce_loss(t.p, sample.label);

    // clamped logits sit on a flat segment of the loss surface
    double d_logit = (t.p - double(sample.label)) * inv_b;
    if (t.logit >= cfg.logit_clamp || t.logit <= -cfg.logit_clamp) d_logit = 0.0;

    // tower backward
    const size_t n_layers = params.tower.size();
    std::vector<double> d_out_vec = {d_logit};
    for (size_t li = n_layers; li-- > 0;) {
      const DenseLayer &layer = params.tower[li];
      DenseLayer &gl = g.tower[li];
      const std::vector<double> &input = t.acts[li];
      add_outer(gl.w, 1.0, d_out_vec, input);
      for (size_t i = 0; i < d_out_vec.size(); ++i) gl.b[i] += d_out_vec[i];
      if (li == 0) {
        // propagate into the tower input
        std::vector<double> d_x(layer.w.cols, 0.0);
        vecmat(d_out_vec, layer.w, d_x);
        // slices: [hist | u_id | context rows]; histogram counts carry no
        // gradient (integer counts, frozen similarities)
        const size_t u_off = cfg.n_tiers;
        if (t.attention_used) {
          std::span<const double> d_u_id{d_x.data() + u_off, cfg.d_out};
          sg.d_e_a.assign(cfg.d_id, 0.0);
          sg.d_e_u = Mat(t.e_u.rows, cfg.d_id);
          sg.d_w_q = Mat(g.d_w_q.rows, g.d_w_q.cols);
          sg.d_w_k = Mat(g.d_w_k.rows, g.d_w_k.cols);
          sg.d_w_v = Mat(g.d_w_v.rows, g.d_w_v.cols);
          sg.d_gamma1 = sg.d_gamma2 = sg.d_gamma3 = 0.0;
          sa_ta_backward(t.sata, t.e_a, t.e_u, t.r, params.attention, d_u_id, sg);

          for (size_t i = 0; i < g.d_w_q.size(); ++i) g.d_w_q.a[i] += sg.d_w_q.a[i];
          for (size_t i = 0; i < g.d_w_k.size(); ++i) g.d_w_k.a[i] += sg.d_w_k.a[i];
          for (size_t i = 0; i < g.d_w_v.size(); ++i) g.d_w_v.a[i] += sg.d_w_v.a[i];
          if (cfg.trains_gammas()) {
            g.d_gamma1 += sg.d_gamma1;
            g.d_gamma2 += sg.d_gamma2;
            g.d_gamma3 += sg.d_gamma3;
          }
          auto accum_row = [&](uint64_t id, std::span<const double> dr) {
            auto [it, inserted] = g.id_rows.try_emplace(id);
            if (inserted) it->second.assign(cfg.d_id, 0.0);
            axpy(1.0, dr, it->second);
          };
          accum_row(sample.item_id, sg.d_e_a);
          for (size_t i = 0; i < t.retrieved_items.size(); ++i)
            accum_row(t.retrieved_items[i], sg.d_e_u.row(i));
        }
        size_t off = u_off + cfg.d_out;
        for (size_t f = 0; f < kContextFeatures; ++f) {
          auto grow = g.context[f].row(t.ctx_idx[f]);
          for (size_t c = 0; c < cfg.d_ctx; ++c) grow[c] += d_x[off + c];
          off += cfg.d_ctx;
        }
      } else {
        std::vector<double> d_h(layer.w.cols, 0.0);
        vecmat(d_out_vec, layer.w, d_h);
        // ReLU mask from the previous layer's pre-activation
        const std::vector<double> &z_prev = t.pre[li - 1];
        for (size_t i = 0; i < d_h.size(); ++i)
          if (z_prev[i] <= 0.0) d_h[i] = 0.0;
        d_out_vec = std::move(d_h);
      }
    }
  }

  if (mean_loss) *mean_loss = batch.empty() ? 0.0 : loss_sum * inv_b;
  return g;
}

namespace {

struct AdamTensor {
  std::vector<double> m, v;
  explicit AdamTensor(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamState {
  AdamTensor w_q, w_k, w_v, gammas;
  std::vector<AdamTensor> tower_w, tower_b;
  std::array<AdamTensor, kContextFeatures> context;
  std::unordered_map<uint64_t, AdamTensor> id_rows;

  explicit AdamState(const ModelParams &p)
      : w_q(p.attention.w_q.size()),
        w_k(p.attention.w_k.size()),
        w_v(p.attention.w_v.size()),
        gammas(3) {
    for (const DenseLayer &l : p.tower) {
      tower_w.emplace_back(l.w.size());
      tower_b.emplace_back(l.b.size());
    }
    for (size_t f = 0; f < kContextFeatures; ++f)
      context[f] = AdamTensor(p.context[f].size());
  }
};

void adam_update(std::span<double> param, std::span<const double> grad, AdamTensor &st,
                 double lr, double b1, double b2, double eps, uint64_t t) {
  const double bc1 = 1.0 - std::pow(b1, double(t));
  const double bc2 = 1.0 - std::pow(b2, double(t));
  for (size_t i = 0; i < param.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

std::pair<ModelParams, TrainLog> train(const Dataset &data, const EmbeddingTable &table,
                                       const ModelConfig &cfg) {
  cfg.validate();
  ModelParams params = ModelParams::init(cfg);
  AdamState opt(params);
  TrainLog log;

  const auto *cats = data.has_item_categories ? &data.item_categories : nullptr;
  const size_t n = data.samples.size();
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2, eps = cfg.adam_eps;

  for (size_t start = 0; start < n; start += cfg.batch_size) {
    const size_t len = std::min<size_t>(cfg.batch_size, n - start);
    std::span<const SampleRecord> batch{data.samples.data() + start, len};
    double loss = 0.0;
    Gradients g = gradients(batch, params, table, cats, &loss);
    const uint64_t t = ++params.step_count;
    if (!std::isfinite(loss))
      throw data_error("training diverged (non-finite loss) at step " + std::to_string(t));

    adam_update(params.attention.w_q.a, g.d_w_q.a, opt.w_q, cfg.lr_dnn, b1, b2, eps, t);
    adam_update(params.attention.w_k.a, g.d_w_k.a, opt.w_k, cfg.lr_dnn, b1, b2, eps, t);
    adam_update(params.attention.w_v.a, g.d_w_v.a, opt.w_v, cfg.lr_dnn, b1, b2, eps, t);
    if (cfg.trains_gammas()) {
      double gam[3] = {params.attention.gamma1, params.attention.gamma2,
                       params.attention.gamma3};
      const double dgam[3] = {g.d_gamma1, g.d_gamma2, g.d_gamma3};
      adam_update({gam, 3}, {dgam, 3}, opt.gammas, cfg.lr_dnn, b1, b2, eps, t);
      params.attention.gamma1 = gam[0];
      params.attention.gamma2 = gam[1];
      params.attention.gamma3 = gam[2];
    }
    for (size_t l = 0; l < params.tower.size(); ++l) {
      adam_update(params.tower[l].w.a, g.tower[l].w.a, opt.tower_w[l], cfg.lr_dnn, b1, b2, eps, t);
      adam_update(params.tower[l].b, g.tower[l].b, opt.tower_b[l], cfg.lr_dnn, b1, b2, eps, t);
    }
    for (size_t f = 0; f < kContextFeatures; ++f)
      adam_update(params.context[f].a, g.context[f].a, opt.context[f], cfg.lr_embedding, b1, b2,
                  eps, t);
    for (auto &[id, grad] : g.id_rows) {
      auto [it, inserted] = opt.id_rows.try_emplace(id, AdamTensor(cfg.d_id));
      adam_update(params.id_embeddings.at(id), grad, it->second, cfg.lr_embedding, b1, b2, eps,
                  t);
    }

    log.steps.push_back({t, loss, len});
    log.total_samples += len;
  }
  return {std::move(params), std::move(log)};
}

std::string TrainLog::to_json_string() const {
  json steps_json = json::array();
  for (const Step &s : steps)
    steps_json.push_back({{"step", s.step}, {"loss", s.loss}, {"samples", s.samples}});
  json j = {{"steps", steps_json}, {"total_samples", total_samples}};
  if (!steps.empty()) {
    j["first_loss"] = steps.front().loss;
    j["final_loss"] = steps.back().loss;
  }
  return j.dump(2);
}

PredictionBatch predict_batch(std::span<const SampleRecord> samples, ModelParams &params,
                              const EmbeddingTable &table,
                              const std::unordered_map<uint64_t, int32_t> *item_categories) {
  PredictionBatch out;
  out.probabilities.reserve(samples.size());
  out.users.reserve(samples.size());
  out.labels.reserve(samples.size());
  for (const SampleRecord &s : samples) {
    out.probabilities.push_back(forward(s, params, table, item_categories));
    out.users.push_back(s.user_id);
    out.labels.push_back(s.label);
  }
  return out;
}

// ---- checkpoint io ----

namespace {

constexpr char kCkptMagic[8] = {'M', 'U', 'S', 'E', 'C', 'K', 'P', '1'};

struct TensorRef {
  std::string name;
  std::vector<uint64_t> shape;
  std::vector<float> data;
};

void collect_tensors(const ModelParams &p, std::vector<TensorRef> &tensors,
                     std::vector<uint64_t> &id_order) {
  auto push = [&](std::string name, std::vector<uint64_t> shape, const double *v, size_t n) {
    TensorRef t;
    t.name = std::move(name);
    t.shape = std::move(shape);
    t.data.resize(n);
    for (size_t i = 0; i < n; ++i) t.data[i] = float(v[i]);
    tensors.push_back(std::move(t));
  };
  const double gam[3] = {p.attention.gamma1, p.attention.gamma2, p.attention.gamma3};
  push("gammas", {3}, gam, 3);
  push("w_q", {p.attention.w_q.rows, p.attention.w_q.cols}, p.attention.w_q.a.data(),
       p.attention.w_q.size());
  push("w_k", {p.attention.w_k.rows, p.attention.w_k.cols}, p.attention.w_k.a.data(),
       p.attention.w_k.size());
  push("w_v", {p.attention.w_v.rows, p.attention.w_v.cols}, p.attention.w_v.a.data(),
       p.attention.w_v.size());
  for (size_t l = 0; l < p.tower.size(); ++l) {
    push("tower." + std::to_string(l) + ".w", {p.tower[l].w.rows, p.tower[l].w.cols},
         p.tower[l].w.a.data(), p.tower[l].w.size());
    push("tower." + std::to_string(l) + ".b", {p.tower[l].b.size()}, p.tower[l].b.data(),
         p.tower[l].b.size());
  }
  for (size_t f = 0; f < kContextFeatures; ++f)
    push(std::string("context.") + kContextFeatureNames[f],
         {p.context[f].rows, p.context[f].cols}, p.context[f].a.data(), p.context[f].size());

  id_order.clear();
  id_order.reserve(p.id_embeddings.size());
  for (const auto &[id, _] : p.id_embeddings) id_order.push_back(id);
  std::sort(id_order.begin(), id_order.end());
  TensorRef t;
  t.name = "id_embeddings";
  t.shape = {id_order.size(), p.cfg.d_id};
  t.data.reserve(id_order.size() * p.cfg.d_id);
  for (uint64_t id : id_order)
    for (double v : p.id_embeddings.at(id)) t.data.push_back(float(v));
  tensors.push_back(std::move(t));
}

}  // namespace

void save_checkpoint(const ModelParams &params, const std::string &path) {
  std::vector<TensorRef> tensors;
  std::vector<uint64_t> id_order;
  collect_tensors(params, tensors, id_order);

  json meta = {
      {"config", json::parse(params.cfg.to_json_string())},
      {"seed", params.cfg.seed},
      {"step_count", params.step_count},
      {"id_embedding_ids", id_order},
  };
  const std::string meta_str = meta.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open for write: " + path);
  out.write(kCkptMagic, 8);
  const uint64_t meta_len = meta_str.size();
  out.write(reinterpret_cast<const char *>(&meta_len), 8);
  out.write(meta_str.data(), std::streamsize(meta_str.size()));
  const uint32_t n_tensors = uint32_t(tensors.size());
  out.write(reinterpret_cast<const char *>(&n_tensors), 4);
  for (const TensorRef &t : tensors) {
    const uint32_t name_len = uint32_t(t.name.size());
    out.write(reinterpret_cast<const char *>(&name_len), 4);
    out.write(t.name.data(), name_len);
    const uint32_t ndim = uint32_t(t.shape.size());
    out.write(reinterpret_cast<const char *>(&ndim), 4);
    for (uint64_t d : t.shape) out.write(reinterpret_cast<const char *>(&d), 8);
    const uint64_t checksum = fnv1a64(t.data.data(), t.data.size() * 4);
    out.write(reinterpret_cast<const char *>(&checksum), 8);
    out.write(reinterpret_cast<const char *>(t.data.data()), std::streamsize(t.data.size() * 4));
  }
  if (!out) throw data_error("write failed: " + path);
}

ModelParams load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("checkpoint not found: " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw data_error("bad checkpoint magic in " + path);
  uint64_t meta_len = 0;
  in.read(reinterpret_cast<char *>(&meta_len), 8);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), std::streamsize(meta_len));
  if (uint64_t(in.gcount()) != meta_len) throw data_error("truncated checkpoint metadata");

  json meta;
  try {
    meta = json::parse(meta_str);
  } catch (const json::exception &e) {
    throw data_error(std::string("checkpoint metadata: ") + e.what());
  }
  ModelConfig cfg = ModelConfig::from_json_string(meta.at("config").dump());
  ModelParams params = ModelParams::init(cfg);
  params.step_count = meta.at("step_count").get<uint64_t>();
  std::vector<uint64_t> id_order = meta.at("id_embedding_ids").get<std::vector<uint64_t>>();

  uint32_t n_tensors = 0;
  in.read(reinterpret_cast<char *>(&n_tensors), 4);
  std::unordered_map<std::string, TensorRef> loaded;
  for (uint32_t ti = 0; ti < n_tensors; ++ti) {
    TensorRef t;
    uint32_t name_len = 0, ndim = 0;
    in.read(reinterpret_cast<char *>(&name_len), 4);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    in.read(reinterpret_cast<char *>(&ndim), 4);
    t.shape.resize(ndim);
    uint64_t total = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      in.read(reinterpret_cast<char *>(&t.shape[d]), 8);
      total *= t.shape[d];
    }
    uint64_t checksum = 0;
    in.read(reinterpret_cast<char *>(&checksum), 8);
    t.data.resize(total);
    in.read(reinterpret_cast<char *>(t.data.data()), std::streamsize(total * 4));
    if (uint64_t(in.gcount()) != total * 4)
      throw data_error("truncated tensor '" + t.name + "' in " + path);
    if (fnv1a64(t.data.data(), t.data.size() * 4) != checksum)
      throw data_error("checksum mismatch for tensor '" + t.name + "' in " + path);
    loaded.emplace(t.name, std::move(t));
  }

  auto restore = [&](const std::string &name, double *dst, size_t n) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw data_error("checkpoint missing tensor '" + name + "'");
    if (it->second.data.size() != n)
      throw data_error("checkpoint tensor '" + name + "' has wrong size");
    for (size_t i = 0; i < n; ++i) dst[i] = double(it->second.data[i]);
  };

  double gam[3];
  restore("gammas", gam, 3);
  params.attention.gamma1 = gam[0];
  params.attention.gamma2 = gam[1];
  params.attention.gamma3 = gam[2];
  restore("w_q", params.attention.w_q.a.data(), params.attention.w_q.size());
  restore("w_k", params.attention.w_k.a.data(), params.attention.w_k.size());
  restore("w_v", params.attention.w_v.a.data(), params.attention.w_v.size());
  for (size_t l = 0; l < params.tower.size(); ++l) {
    restore("tower." + std::to_string(l) + ".w", params.tower[l].w.a.data(),
            params.tower[l].w.size());
    restore("tower." + std::to_string(l) + ".b", params.tower[l].b.data(),
            params.tower[l].b.size());
  }
  for (size_t f = 0; f < kContextFeatures; ++f)
    restore(std::string("context.") + kContextFeatureNames[f], params.context[f].a.data(),
            params.context[f].size());

  auto it = loaded.find("id_embeddings");
  if (it == loaded.end()) throw data_error("checkpoint missing tensor 'id_embeddings'");
  if (it->second.data.size() != id_order.size() * cfg.d_id)
    throw data_error("checkpoint id_embeddings size mismatch");
  for (size_t i = 0; i < id_order.size(); ++i) {
    std::vector<double> row(cfg.d_id);
    for (size_t d = 0; d < cfg.d_id; ++d) row[d] = double(it->second.data[i * cfg.d_id + d]);
    params.id_embeddings[id_order[i]] = std::move(row);
  }
  return params;
}

}  // namespace muse
