#pragma once

#include <cstdint>
#include <vector>

#include "mcc/pseudo.hpp"
#include "mcc/tensor.hpp"

namespace mcc {

// Linear projection head D → D_proj. The global head is updated only by
// ema_update and never receives gradients.
struct Projector {
  Tensor w;
};

Projector make_projector(int d, int d_proj, Rng& rng, bool trainable);

// theta_g ← m·theta_g + (1−m)·theta_l, element-wise, in place on global.
void ema_update(Projector& global, const Projector& local, double m);

struct LossWeights {
  double aff = 0.2;
  double mcc = 0.5;
  double seg = 0.1;
  double reg = 0.05;
};

// Multi-label soft margin over C classes: mean of
// −[y·log σ(x) + (1−y)·log(1−σ(x))], softplus-stabilized.
Tensor cls_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels);

// InfoNCE over precomputed similarities q·k (one per view, [K×1] or [K]):
// −(1/N⁺)·Σ_pos log[exp(s⁺/τ) / (exp(s⁺/τ) + Σ_neg exp(s⁻/τ) + ε)].
// Each positive's denominator excludes the other positives.
Tensor mcc_loss_from_sims(const Tensor& sims, const std::vector<std::uint8_t>& positive,
                          double tau, double eps);

// Cosine-similarity affinity over ordered token pairs:
// (1/N⁺)Σ_pos(1−cos) + (1/N⁻)Σ_neg cos; ignore pairs skipped; pairs with a
// zero-norm endpoint are skipped and counted into *skipped_pairs.
Tensor affinity_loss(const Tensor& tokens, const PairAffinityLabel& pairs,
                     int* skipped_pairs = nullptr);

// Softmax cross-entropy over C+1 channels, pixels labeled 255 excluded;
// all-ignored targets yield 0 and set *all_ignored.
Tensor seg_loss(const Tensor& logits, const std::vector<int>& target,
                bool* all_ignored = nullptr);

// Mean anisotropic total variation of per-pixel probability maps laid out as
// [H*W × channels].
Tensor reg_loss(const Tensor& probs, int h, int w);

struct LossParts {
  Tensor cls;
  Tensor cls_aux;
  Tensor aff;
  Tensor mcc;
  Tensor seg;
  Tensor reg;
};

// L_cls + L_cls_aux + λ₁L_aff + λ₂L_mcc + λ₃L_seg + λ₄L_reg; throws naming
// the offending part if any is non-finite.
Tensor total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace mcc
