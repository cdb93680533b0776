#pragma once

// Supervised source-domain training of the segmenter, IoU head included.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "samtta/metrics.hpp"
#include "samtta/model.hpp"
#include "samtta/synthdata.hpp"

namespace samtta {

struct PretrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  double w_dice = 1.0;
  double w_bce = 1.0;
  double w_low = 1.0;
  double w_iou = 1.0;
  // Uniform per-side perturbation of training box prompts, in pixels.
  double box_jitter = 0.0;
  ModelConfig model;

  void validate() const;

  // Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  // Assigns one key; throws DomainError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();
};

// key=value lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_key_values(const std::string& text);
PretrainConfig parse_pretrain_config(const std::string& text);

struct PretrainLoss {
  Tensor total;
  double dice_high = 0;
  double bce_high = 0;
  double dice_low = 0;
  double iou = 0;
};

// Target mask [H,W] average-pooled to the low-res grid.
Tensor downsample_mask(const Tensor& gt, std::size_t size);

PretrainLoss pretrain_loss(const SegOutputs& out, const Tensor& gt, const PretrainConfig& config);

// Input tensor the model sees for an image without SBCT: grayscale is
// replicated to three channels, colour passes through.
Tensor plain_input(const Image& image);

// Frozen inference on every sample, scored with the stream metrics.
std::vector<MetricsRow> frozen_rows(const SegModel& model, const std::vector<StreamSample>& samples);
MetricsSummary validate(const SegModel& model, const std::vector<StreamSample>& samples);

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_dice = 0;
  bool improved = false;
};

struct PretrainResult {
  SegModel model;
  std::size_t best_epoch = 0;
  double best_val_dice = 0;
  std::vector<EpochReport> epochs;
};

// Training and held-out validation sets implied by the config seed.
std::vector<StreamSample> pretrain_train_set(const PretrainConfig& config);
std::vector<StreamSample> pretrain_val_set(const PretrainConfig& config);

// Returns the weights with the best validation Dice, in Frozen mode.
PretrainResult pretrain(const PretrainConfig& config,
                        const std::function<void(const EpochReport&)>& on_epoch = {});

}  // namespace samtta
