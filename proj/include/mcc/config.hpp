#pragma once

#include <cstdint>
#include <string>

#include "mcc/encoder.hpp"
#include "mcc/losses.hpp"

namespace mcc {

// Full training configuration. Serialized as flat key=value lines; unknown
// keys are rejected on parse.
struct TrainConfig {
  EncoderConfig enc;
  int proj_dim = 128;
  int decoder_hidden = 64;

  double mask_ratio = 0.95;
  int mask_scale = 4;
  double mu = 0.5;
  int views = 4;  // K local views per image

  double beta_bg = 0.25;
  double beta_fg = 0.7;
  double tau = 0.5;
  double contrast_eps = 1e-8;
  double momentum = 0.9;

  LossWeights weights;

  int batch_size = 8;
  int total_iters = 3000;
  int warmup_iters = 150;
  double lr_init = 1e-6;
  double lr_peak = 6e-5;
  double poly_power = 0.9;

  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::uint64_t seed = 42;
  int crop_size = 64;
  int train_n = 500;
  int val_n = 100;

  bool cross_image_negatives = false;
  std::string seg_label_source = "final";  // or "aux"
  int save_every = 0;  // 0 = final checkpoint only

  void validate() const;
  std::string serialize() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load_file(const std::string& path);
};

// FNV-1a 64-bit over the canonical serialization.
std::uint64_t config_digest(const TrainConfig& cfg);

}  // namespace mcc
