#pragma once

#include <vector>

#include "mcc/masking.hpp"
#include "mcc/tensor.hpp"

namespace mcc {

struct EncoderConfig {
  int image_size = 64;
  int patch_size = 8;
  int depth = 4;
  int heads = 2;
  int dim = 64;
  int aux_layer = 3;  // 1-based, in [1, depth-1]
  int num_classes = 3;

  int grid() const { return image_size / patch_size; }
  int tokens() const { return grid() * grid(); }
  int head_dim() const { return dim / heads; }
  int patch_dim() const { return 3 * patch_size * patch_size; }
  void validate() const;
};

struct AttnLayerParams {
  Tensor ln1_g, ln1_b;
  std::vector<Tensor> wq, bq, wk, bk, wv, bv;  // one entry per head
  Tensor wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct EncoderParams {
  Tensor patch_w, patch_b;  // [3P²×D], [1×D]
  Tensor cls_token;         // [1×D]
  Tensor pos;               // [(N+1)×D], learnable, sincos-initialized patch rows
  std::vector<AttnLayerParams> layers;
  Tensor ln_f_g, ln_f_b;
  Tensor head_w, head_aux_w;  // [D×C], bias-free, shared with CAM generation
};

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng);

// Row i is the flattened patch at grid position (i div W', i mod W').
Tensor patchify(const std::vector<double>& image, int h, int w, int p);

struct ForwardResult {
  std::vector<Tensor> layer_tokens;  // raw block outputs, each [(N+1)×D]
  Tensor final_tokens;               // after the final layer norm, [(N+1)×D]
  Tensor cls_logits;                 // [1×C]
  Tensor aux_logits;                 // [1×C]
  // Attention weights captured per layer and head, each (N+1)² row-major.
  std::vector<std::vector<std::vector<double>>> attn;
};

// Runs the maskable-attention encoder. The key mask (if any) is applied in
// every layer; the class token is always kept as a key.
ForwardResult encoder_forward(const EncoderParams& params, const EncoderConfig& cfg,
                              const Tensor& patches, const KeyMask* mask);

// 2-D fixed sin-cos table, [grid² × dim]; dim must be divisible by 4.
std::vector<double> sincos_pos_embed(int dim, int grid);

}  // namespace mcc
