#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spaen/data.hpp"
#include "spaen/nets.hpp"
#include "spaen/objectives.hpp"

namespace spaen {

// Raised when a loss term becomes non-finite; the message lists every term.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRow {
  int epoch = 0;  // 1-based
  LossBreakdown loss;
  double val_h = 0.0;
  double lr = 0.0;
};

struct TrainState {
  ModelBundle bundle;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  int epoch = 0;  // epochs completed
  double lr = 0.0;
  // Plateau monitor.
  double best_val = -1.0;
  int best_epoch = 0;
  int since_improvement = 0;
  std::optional<ModelBundle> best_bundle;
  BundleGrads velocity;
  std::vector<EpochRow> history;

  static TrainState fresh(ModelBundle bundle, const HyperParams& hyper, std::uint64_t seed);
};

// Which parameter groups the generator-side update may move.
struct UpdateMask {
  bool e_head = true;
  bool f = true;
  bool g = true;
  bool merge = true;
};

struct StepOptions {
  ObjectiveTerms terms;
  UpdateMask mask;
  // Called after every critic update (after clipping).
  std::function<void(const ParamMap& critic)> on_critic_update;
};

// n_critic critic updates (spaen variant only, each followed by clipping for the
// WGAN form) then one generator-side SGD-momentum update.
LossBreakdown train_step(TrainState& state, const Batch& batch,
                         const ClassEmbeddings& targets, const HyperParams& hyper,
                         const StepOptions& options = {});

// Metric driving the plateau rule and the best snapshot.
enum class Monitor {
  kValidationH,
  kTrainingLoss,  // lower epoch-mean total loss is better
};

struct TrainOptions {
  HyperParams hyper;
  Monitor monitor = Monitor::kValidationH;
  int epochs = 300;
  std::uint64_t seed = 0;
  StepOptions step;
  // Replace the bundle with the best-validation snapshot at the end.
  bool restore_best = true;
  // When set, train_log.csv, state/ (resumable) and checkpoint/ go here.
  std::filesystem::path out_dir;
  AccessLog* access_log = nullptr;
  std::function<void(const TrainState&, const EpochRow&)> on_epoch;
};

struct TrainReport {
  std::vector<EpochRow> rows;  // epochs trained in this call
  double wall_seconds = 0.0;
  double best_val_h = -1.0;  // best value of the monitored metric
  int best_epoch = 0;
  std::filesystem::path checkpoint;
};

struct TrainResult {
  ModelBundle bundle;
  TrainReport report;
};

// Trains until state.epoch == options.epochs. Training reads the dataset
// only through a DatasetAccessor (logged to options.access_log), and only
// seen-class training images and seen-class embeddings.
TrainReport train(TrainState& state, const Dataset& dataset, const SplitSpec& splits,
                  const TrainOptions& options);

TrainResult train(const Dataset& dataset, const SplitSpec& splits, const NetConfig& net,
                  const TrainOptions& options);

// Pseudo-GZSL harmonic mean on the training side: val classes act as unseen.
// Without val classes, pseudo-seen accuracy is returned.
double validation_h(const ModelBundle& bundle, const DatasetAccessor& data,
                    const SplitSpec& splits);

void write_train_log(const std::filesystem::path& path, const std::vector<EpochRow>& rows);

// Full resumable state: bundle, momentum buffers, plateau monitor, history.
void save_train_state(const TrainState& state, const std::filesystem::path& dir);
TrainState load_train_state(const std::filesystem::path& dir);

struct GridCell {
  double alpha = 0.0;
  double beta = 0.0;
  double val_h = 0.0;
  bool diverged = false;
  std::string error;
};

struct GridResult {
  double alpha = 0.0;
  double beta = 0.0;
  double val_h = 0.0;
  std::vector<GridCell> cells;  // sorted by (alpha, beta)
};

// One training run per (alpha, beta) cell with options.epochs each. Diverged
// cells are excluded; ties go to the lexicographically smaller (alpha, beta).
// Throws std::runtime_error if every cell diverges.
GridResult grid_search(const Dataset& dataset, const SplitSpec& splits, const NetConfig& net,
                       const TrainOptions& options, std::vector<double> alpha_grid,
                       std::vector<double> beta_grid);

}  // namespace spaen
