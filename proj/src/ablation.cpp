#include "muse/ablation.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "muse/error.hpp"
#include "muse/metrics.hpp"

namespace muse {

using nlohmann::json;

AblateConfig AblateConfig::from_json_string(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw config_error(std::string("ablate config: ") + e.what());
  }
  static const std::vector<std::string> allowed = {"synthetic", "model", "cells", "seeds",
                                                   "train_fraction"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw config_error("ablate config: unknown key '" + it.key() + "'");

  AblateConfig c;
  if (j.contains("synthetic"))
    c.synth = SyntheticConfig::from_json_string(j.at("synthetic").dump());
  if (j.contains("model")) c.model = ModelConfig::from_json_string(j.at("model").dump());
  if (j.contains("cells")) {
    c.cells.clear();
    for (const auto &cell : j.at("cells")) {
      AblateCell ac;
      ac.gsu = gsu_strategy_from_string(cell.at("gsu").get<std::string>());
      ac.esu = esu_variant_from_string(cell.at("esu").get<std::string>());
      c.cells.push_back(ac);
    }
  }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (j.contains("train_fraction")) c.train_fraction = j.at("train_fraction").get<double>();
  if (c.cells.empty()) throw config_error("ablate config: no cells");
  if (c.seeds.empty()) throw config_error("ablate config: no seeds");
  if (c.train_fraction <= 0.0 || c.train_fraction >= 1.0)
    throw config_error("ablate config: train_fraction must be in (0, 1)");
  return c;
}

std::string AblateConfig::to_json_string() const {
  json cells_json = json::array();
  for (const AblateCell &c : cells)
    cells_json.push_back({{"gsu", to_string(c.gsu)}, {"esu", to_string(c.esu)}});
  json j = {
      {"synthetic", json::parse(synth.to_json_string())},
      {"model", json::parse(model.to_json_string())},
      {"cells", cells_json},
      {"seeds", seeds},
      {"train_fraction", train_fraction},
  };
  return j.dump(2);
}

double AblateReport::mean_gauc(const AblateCell &cell) const {
  double sum = 0.0;
  size_t n = 0;
  for (const CellResult &r : results) {
    if (r.cell.gsu == cell.gsu && r.cell.esu == cell.esu) {
      sum += r.gauc;
      ++n;
    }
  }
  if (n == 0) throw internal_error("ablate report: cell not found");
  return sum / double(n);
}

std::vector<const CellResult *> AblateReport::for_seed(uint64_t seed) const {
  std::vector<const CellResult *> out;
  for (const CellResult &r : results)
    if (r.seed == seed) out.push_back(&r);
  return out;
}

std::string AblateReport::to_json_string() const {
  json arr = json::array();
  for (const CellResult &r : results) {
    arr.push_back({
        {"seed", r.seed},
        {"gsu", to_string(r.cell.gsu)},
        {"esu", to_string(r.cell.esu)},
        {"gauc", r.gauc},
        {"auc", r.auc},
        {"first_loss", r.first_loss},
        {"final_loss", r.final_loss},
        {"train_samples", r.train_samples},
        {"test_samples", r.test_samples},
    });
  }
  return json{{"results", arr}}.dump(2);
}

std::string AblateReport::to_table() const {
  std::ostringstream os;
  os << "seed  gsu            esu            gauc      auc       final_loss\n";
  for (const CellResult &r : results) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-5llu %-14s %-14s %.6f  %.6f  %.6f\n",
                  (unsigned long long)r.seed, to_string(r.cell.gsu).c_str(),
                  to_string(r.cell.esu).c_str(), r.gauc, r.auc, r.final_loss);
    os << line;
  }
  return os.str();
}

AblateReport run_ablate(const AblateConfig &cfg) {
  AblateReport report;
  for (uint64_t seed : cfg.seeds) {
    SyntheticConfig synth = cfg.synth;
    synth.seed = seed;
    SyntheticData data = synthesize(synth);
    auto [train_ds, test_ds] = split(data.dataset, SplitPolicy::by_fraction,
                                     cfg.train_fraction, 0);

    for (const AblateCell &cell : cfg.cells) {
      ModelConfig mc = cfg.model;
      mc.gsu_strategy = cell.gsu;
      mc.esu_variant = cell.esu;
      mc.seed = seed;
      auto [params, log] = train(train_ds, data.table, mc);

      const auto *cats = test_ds.has_item_categories ? &test_ds.item_categories : nullptr;
      PredictionBatch pred = predict_batch(test_ds.samples, params, data.table, cats);
      std::vector<EvalRecord> recs(pred.probabilities.size());
      for (size_t i = 0; i < recs.size(); ++i)
        recs[i] = {pred.users[i], pred.probabilities[i], pred.labels[i]};

      CellResult r;
      r.seed = seed;
      r.cell = cell;
      r.gauc = gauc(recs).value_or(0.5);
      r.auc = auc(recs).value_or(0.5);
      r.first_loss = log.steps.empty() ? 0.0 : log.steps.front().loss;
      r.final_loss = log.steps.empty() ? 0.0 : log.steps.back().loss;
      r.train_samples = train_ds.samples.size();
      r.test_samples = test_ds.samples.size();
      report.results.push_back(r);
    }
  }
  return report;
}

}  // namespace muse
