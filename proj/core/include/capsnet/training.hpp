#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "capsnet/augment.hpp"
#include "capsnet/checkpoint.hpp"
#include "capsnet/dataset.hpp"
#include "capsnet/decoder.hpp"
#include "capsnet/losses.hpp"
#include "capsnet/model.hpp"
#include "capsnet/optimizer.hpp"

namespace capsnet {

struct TrainConfig {
  std::size_t batch_size = 50;
  std::size_t epochs = 1;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  LossConfig loss;
  /// Save a checkpoint every this many steps (0: only the final one).
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  bool augment = false;
  AugmentConfig augment_config;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  /// Samples per forward/backward pass inside a step. Bounds the memory held
  /// by the prediction vectors; the step gradient is the same full-batch mean.
  std::size_t micro_batch = 10;
  /// Stop after this many global steps (0: run all epochs).
  std::size_t max_steps = 0;

  void validate() const;
};

struct StepMetrics {
  std::uint64_t step = 0;
  double margin_loss = 0.0;
  double recon_loss = 0.0;
  double final_loss = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct TrainMetrics {
  std::vector<StepMetrics> steps;
  std::vector<EpochMetrics> epochs;
};

/// Raised when a step produces a non-finite loss; the message carries the
/// step index and the loss components.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only CSV: a `step,margin_loss,recon_loss,final_loss` header, one
/// row per step, and `epoch,<n>,train_accuracy,<acc>` summary rows. Wall
/// time is left out so that identical runs produce identical files.
class MetricsCsv {
 public:
  explicit MetricsCsv(const std::filesystem::path& path);
  void write_step(const StepMetrics& m);
  void write_epoch(const EpochMetrics& m);

 private:
  std::ofstream out_;
};

class Trainer {
 public:
  Trainer(CapsNetModel& model, Decoder& decoder, TrainConfig config);

  /// Continue from a checkpoint's optimizer state and step counter. The
  /// caller is expected to have loaded the checkpoint's model and decoder
  /// into the objects this trainer references.
  void resume(const Checkpoint& checkpoint);

  using StepCallback = std::function<void(const StepMetrics&)>;
  using EpochCallback = std::function<void(const EpochMetrics&)>;

  TrainMetrics train(const Dataset& dataset, const StepCallback& on_step = {},
                     const EpochCallback& on_epoch = {});

  /// One optimizer update on the given batch. Returns the loss components
  /// evaluated before the update.
  StepMetrics step(const Tensor& batch, std::span<const int> labels, std::vector<int>* predictions = nullptr);

  std::uint64_t global_step() const noexcept { return step_; }
  const Optimizer& optimizer() const noexcept { return optimizer_; }
  void save(const std::filesystem::path& path) const;

 private:
  CapsNetModel& model_;
  Decoder& decoder_;
  TrainConfig config_;
  Optimizer optimizer_;
  std::uint64_t step_ = 0;
};

/// Convenience wrapper: trains in place and returns the metrics.
TrainMetrics train(CapsNetModel& model, Decoder& decoder, const Dataset& dataset, const TrainConfig& config);

/// Fisher-Yates permutation of [0, n) for the given epoch, derived from seed.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch);

}  // namespace capsnet
