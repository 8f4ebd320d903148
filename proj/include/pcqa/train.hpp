#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pcqa/config.hpp"
#include "pcqa/datapack.hpp"
#include "pcqa/evalkit.hpp"
#include "pcqa/model.hpp"

namespace pcqa {

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;  // mean batch total
  double reg = 0.0, dis = 0.0, rank = 0.0;
  double lr_pretrained = 0.0, lr_rest = 0.0;

  bool operator==(const EpochLog&) const = default;
};

struct TrainOptions {
  std::filesystem::path checkpoint;  // written after every epoch when set
  bool resume = false;               // continue from `checkpoint` if it exists
  int stop_after = -1;               // stop once this many epochs are done (testing)
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  QualityNet model;  // weights of the epoch with minimal training loss
  int best_epoch = -1;
  double best_loss = 0.0;
  std::vector<EpochLog> log;
};

/// Thrown when a batch produces a non-finite loss.
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainResult train(const TrainConfig& cfg, const std::vector<LabeledViews>& train_set, const TrainOptions& options = {});

QualityNet build_model(const TrainConfig& cfg);

/// Single-file checkpoint: magic "PCQACKPT", format version, JSON metadata
/// (config text and hash, epoch, RNG state, log), then a tensor archive with
/// current weights, best weights and optimizer moments.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::string config_text;
  std::uint64_t config_hash = 0;
  int epochs_done = 0;
  int best_epoch = -1;
  double best_loss = 0.0;
  std::string rng_state;
  std::vector<EpochLog> log;
  TensorArchive tensors;  // "param.*", "best.*", "adam.*"
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Rebuilds the selected (best) model stored in a checkpoint.
QualityNet model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out = nullptr);

/// Scorer for evaluate(): q_f of the crop.
CropScorer model_scorer(const QualityNet& net);

/// Trains on one fold's training samples and returns a scorer for its test
/// samples.
using FoldTrainer = std::function<CropScorer(int fold, const std::vector<LabeledViews>& train_set)>;

struct CvResult {
  std::vector<MetricReport> folds;
  MetricReport average;
};

/// `samples` is aligned with the manifest entries.
CvResult run_cv(const Manifest& manifest, const std::vector<LabeledViews>& samples, const FoldPlan& plan,
                const FoldTrainer& trainer, int crop_size, int crops, std::uint64_t seed);

FoldTrainer default_trainer(const TrainConfig& cfg);

}  // namespace pcqa
