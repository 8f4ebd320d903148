#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pcqa/feedback.hpp"
#include "pcqa/globalenc.hpp"
#include "pcqa/localenc.hpp"
#include "pcqa/objective.hpp"
#include "pcqa/projector.hpp"

namespace pcqa {

struct ModelConfig {
  EncoderConfig encoder;
  FeedbackConfig feedback;
  LocalConfig local;

  /// Copies the shared widths (heads, D_o) into the sub-configs and checks
  /// them.
  void sync();
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 8;
  double lr_pretrained = 2e-5;
  double lr_rest = 2e-4;
  double lr_decay = 0.9;
  int decay_every = 5;
  double weight_decay = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int crop_size = 224;
  int eval_crops = 10;
  std::uint64_t seed = 0;
  std::string pretrained;  // optional tensor archive with ViT weights

  RenderSettings render;
  ModelConfig model;
  ObjectiveConfig objective;

  /// Sorted key=value lines; the basis of hash().
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  std::uint64_t hash() const;
  void validate() const;

  void set(const std::string& key, const std::string& value);
  /// Applies "key=value" strings in order.
  void apply(const std::vector<std::string>& overrides);

  /// Applies the `key = value` lines of a config file ('#' starts a comment).
  void merge_text(const std::string& text, const std::string& origin = "<config>");
  void merge_file(const std::filesystem::path& path);
  static TrainConfig from_text(const std::string& text, const std::string& origin = "<config>");
  /// Desk-scale settings used by the overfitting check and the CLI's
  /// `--tiny` switch.
  static TrainConfig tiny();
};

}  // namespace pcqa
