#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cdon/checkpoint.hpp"
#include "cdon/network.hpp"
#include "cdon/scene.hpp"

namespace cdon {

struct TrainLogRow {
  int step = 0;
  real lr = 0;
  real cls = 0;
  real reg = 0;
  real total = 0;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const TrainLogRow& row);

struct TrainOptions {
  /// Receives "step,lr,cls_loss,reg_loss,total" rows when set.
  std::ostream* log = nullptr;
  /// Periodic checkpoints go to "<checkpoint_prefix>.step<N>" every
  /// cfg.train.checkpoint_every steps (disabled when empty or 0).
  std::string checkpoint_prefix;
  /// Diagnostic written when a step produces a non-finite value.
  std::string nan_dump_path;
};

struct TrainResult {
  Network net;
  OptimState optim;
  std::vector<TrainLogRow> log;
  int steps = 0;
};

/// One image per step in a seeded per-epoch shuffle; each step runs
/// train_forward, backward and sgd_step. A non-finite loss or gradient writes
/// the diagnostic dump and rethrows NumericError.
TrainResult train(const RunConfig& cfg, std::span<const Sample> data, const TrainOptions& options = {});

/// Freshly initialized network for `cfg` (the step-0 state of train()).
Network initial_network(const TrainConfig& cfg);

/// Mean of log[first, last) totals (0-based, clamped to the log).
real mean_total(std::span<const TrainLogRow> log, std::size_t first, std::size_t last);

}  // namespace cdon
