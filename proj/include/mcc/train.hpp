#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "mcc/checkpoint.hpp"
#include "mcc/config.hpp"
#include "mcc/dataset.hpp"
#include "mcc/encoder.hpp"
#include "mcc/losses.hpp"
#include "mcc/metrics.hpp"
#include "mcc/pseudo.hpp"

namespace mcc {

// Two pointwise (1x1) conv layers over the final patch grid with a GELU in
// between, bilinearly upsampled to pixel resolution.
struct DecoderParams {
  Tensor w1, b1;  // [D×hidden], [1×hidden]
  Tensor w2, b2;  // [hidden×(C+1)], [1×(C+1)]
};

struct Model {
  TrainConfig cfg;
  EncoderParams enc;
  DecoderParams dec;
  Projector proj_local;
  Projector proj_global;  // EMA copy, never receives gradients
};

// Deterministic under cfg.seed; proj_global starts as a copy of proj_local.
Model init_model(const TrainConfig& cfg);

// Fixed-order traversal of every trainable tensor under a stable name.
// Optimizer state and checkpoints key off this order.
void visit_params(Model& m, const std::function<void(const std::string&, Tensor&)>& fn);

// Patch-token logits [H·W×(C+1)]; tokens is the post-norm encoder output.
Tensor decoder_forward(const Model& m, const Tensor& final_tokens);

// Linear warmup lr_init→lr_peak, then polynomial decay of lr_peak.
double lr_at(int step, const TrainConfig& cfg);

struct AdamState {
  std::vector<std::vector<double>> m, v;  // one slot per visit_params tensor
  std::int64_t t = 0;
};

struct StepBreakdown {
  double cls = 0, cls_aux = 0, aff = 0, mcc = 0, seg = 0, reg = 0, total = 0;
  double lr = 0;
  int n_pos_views = 0, n_neg_views = 0;
};

struct TrainState {
  Model model;
  AdamState adam;
  Rng mask_rng{0};
  std::int64_t step = 0;
};

TrainState init_train_state(const TrainConfig& cfg);

// One optimizer step over a batch: per image one unmasked forward plus (when
// the contrast weight is nonzero) K masked forwards, all six losses, backward
// with 1/B scaling, decoupled-weight-decay Adam update, then one EMA update.
StepBreakdown train_step(TrainState& st, const std::vector<const SyntheticSample*>& batch);

std::string breakdown_json(std::int64_t step, const StepBreakdown& b);

struct TrainResult {
  TrainState state;
  std::vector<StepBreakdown> history;
};

// Full loop: batches drawn from a dedicated index stream, JSON-lines log per
// step, optional periodic + final checkpoints. A non-finite loss dumps state
// to out_dir (when given) and rethrows.
TrainResult train_run(const TrainConfig& cfg, const std::vector<SyntheticSample>& train_data,
                      std::ostream* log = nullptr, const std::string& out_dir = "");

struct EvalReport {
  MiouReport pseudo;  // thresholded CAM vs ground truth; 255 scored as wrong
  MiouReport seg;     // decoder argmax vs ground truth
};

EvalReport evaluate(const Model& m, const std::vector<SyntheticSample>& data);

// Pixel-resolution pseudo label for one sample: final-layer CAM, bilinearly
// upsampled, three-way thresholded.
ReliableLabel pseudo_label_for(const Model& m, const ForwardResult& fwd,
                               const std::vector<std::uint8_t>& labels);

Checkpoint to_checkpoint(const TrainState& st);
TrainState from_checkpoint(const Checkpoint& ckpt);

// One short training run per (ratio, scale) cell; rows sorted by (ratio,
// scale). Returns CSV with header ratio,scale,pseudo_miou,seg_miou.
std::string mask_sweep(const std::vector<double>& ratios, const std::vector<int>& scales,
                       const TrainConfig& base_cfg, std::ostream* progress = nullptr);

}  // namespace mcc
