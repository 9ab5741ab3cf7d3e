#pragma once

#include <string>
#include <vector>

#include "owvis/dataset.hpp"
#include "owvis/model.hpp"

namespace owvis {

struct StepLosses {
  int step = 0;
  double ow = 0.0, cw = 0.0, cont = 0.0, cap = 0.0, total = 0.0;
};

struct TrainStats {
  std::vector<StepLosses> history;
};

// Runs cfg.train_steps optimizer steps over randomly sampled clips of the
// train split, deterministic in cfg.seed. When loss_csv_path is nonempty a
// per-step log is written with columns step, L_ow, L_cw, L_cont, L_cap,
// L_total. A non-finite loss aborts with Error("non-finite-loss") carrying
// the step and component values.
TrainStats train_model(Model& model, const Dataset& data, const std::string& loss_csv_path);

}  // namespace owvis
