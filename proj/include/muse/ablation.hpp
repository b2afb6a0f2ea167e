#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muse/dataset.hpp"
#include "muse/model.hpp"

namespace muse {

struct AblateCell {
  GsuStrategy gsu = GsuStrategy::muse;
  EsuVariant esu = EsuVariant::sa_ta_simtier;
};

struct AblateConfig {
  SyntheticConfig synth;
  ModelConfig model;  // base; each cell overrides gsu_strategy/esu_variant
  std::vector<AblateCell> cells = {
      {GsuStrategy::muse, EsuVariant::sa_ta_simtier},
      {GsuStrategy::muse, EsuVariant::simtier_only},
      {GsuStrategy::recent, EsuVariant::ta_only},
  };
  std::vector<uint64_t> seeds = {1};
  double train_fraction = 0.8;

  static AblateConfig from_json_string(const std::string &text);
  std::string to_json_string() const;
};

struct CellResult {
  uint64_t seed = 0;
  AblateCell cell;
  double gauc = 0.0;
  double auc = 0.0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  uint64_t train_samples = 0;
  uint64_t test_samples = 0;
};

struct AblateReport {
  std::vector<CellResult> results;

  // mean test GAUC of a cell across seeds; throws if the cell is absent
  double mean_gauc(const AblateCell &cell) const;
  std::vector<const CellResult *> for_seed(uint64_t seed) const;

  std::string to_json_string() const;
  std::string to_table() const;
};

// Synthesizes one dataset per seed, trains every cell on the identical train
// split, and evaluates test-set GAUC. Fully deterministic from the config.
AblateReport run_ablate(const AblateConfig &cfg);

}  // namespace muse
