#include "mcc/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace mcc {

namespace {
constexpr double kLnEps = 1e-6;
}

void EncoderConfig::validate() const {
  if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
    throw std::invalid_argument("encoder config: image_size must be a positive multiple of patch_size");
  if (depth < 2) throw std::invalid_argument("encoder config: depth must be at least 2");
  if (heads < 1 || dim % heads != 0)
    throw std::invalid_argument("encoder config: dim must be divisible by heads");
  if (dim % 4 != 0) throw std::invalid_argument("encoder config: dim must be divisible by 4");
  if (aux_layer < 1 || aux_layer > depth - 1)
    throw std::invalid_argument("encoder config: aux_layer must be in [1, depth-1]");
  if (num_classes < 1) throw std::invalid_argument("encoder config: need at least one class");
}

std::vector<double> sincos_pos_embed(int dim, int grid) {
  if (dim % 4 != 0) throw std::invalid_argument("sincos_pos_embed: dim must be divisible by 4");
  const int half = dim / 2;     // per axis
  const int quarter = dim / 4;  // frequencies per axis
  std::vector<double> table(static_cast<std::size_t>(grid) * grid * dim);
  for (int y = 0; y < grid; ++y) {
    for (int x = 0; x < grid; ++x) {
      double* row = table.data() + (static_cast<std::size_t>(y) * grid + x) * dim;
      for (int i = 0; i < quarter; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / quarter);
        row[i] = std::sin(y * omega);
        row[quarter + i] = std::cos(y * omega);
        row[half + i] = std::sin(x * omega);
        row[half + quarter + i] = std::cos(x * omega);
      }
    }
  }
  return table;
}

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.dim;
  const int dh = cfg.head_dim();
  const int n = cfg.tokens();
  const double w_std = 0.02;

  EncoderParams p;
  p.patch_w = Tensor::randn({cfg.patch_dim(), d}, rng, w_std, true);
  p.patch_b = Tensor::zeros({1, d}, true);
  p.cls_token = Tensor::randn({1, d}, rng, w_std, true);

  std::vector<double> pos_data(static_cast<std::size_t>(n + 1) * d, 0.0);
  const std::vector<double> table = sincos_pos_embed(d, cfg.grid());
  std::copy(table.begin(), table.end(), pos_data.begin() + d);
  p.pos = Tensor::from({n + 1, d}, std::move(pos_data), true);

  p.layers.resize(static_cast<std::size_t>(cfg.depth));
  for (AttnLayerParams& l : p.layers) {
    l.ln1_g = Tensor::full({1, d}, 1.0, true);
    l.ln1_b = Tensor::zeros({1, d}, true);
    for (int h = 0; h < cfg.heads; ++h) {
      l.wq.push_back(Tensor::randn({d, dh}, rng, w_std, true));
      l.bq.push_back(Tensor::zeros({1, dh}, true));
      l.wk.push_back(Tensor::randn({d, dh}, rng, w_std, true));
      l.bk.push_back(Tensor::zeros({1, dh}, true));
      l.wv.push_back(Tensor::randn({d, dh}, rng, w_std, true));
      l.bv.push_back(Tensor::zeros({1, dh}, true));
    }
    l.wo = Tensor::randn({d, d}, rng, w_std, true);
    l.bo = Tensor::zeros({1, d}, true);
    l.ln2_g = Tensor::full({1, d}, 1.0, true);
    l.ln2_b = Tensor::zeros({1, d}, true);
    l.mlp_w1 = Tensor::randn({d, 4 * d}, rng, w_std, true);
    l.mlp_b1 = Tensor::zeros({1, 4 * d}, true);
    l.mlp_w2 = Tensor::randn({4 * d, d}, rng, w_std, true);
    l.mlp_b2 = Tensor::zeros({1, d}, true);
  }
  p.ln_f_g = Tensor::full({1, d}, 1.0, true);
  p.ln_f_b = Tensor::zeros({1, d}, true);
  p.head_w = Tensor::randn({d, cfg.num_classes}, rng, w_std, true);
  p.head_aux_w = Tensor::randn({d, cfg.num_classes}, rng, w_std, true);
  return p;
}

Tensor patchify(const std::vector<double>& image, int h, int w, int p) {
  if (p < 1 || h % p != 0 || w % p != 0)
    throw std::invalid_argument("patchify: image dimensions must be divisible by the patch size");
  if (image.size() != static_cast<std::size_t>(h) * w * 3)
    throw std::invalid_argument("patchify: image buffer does not match H×W×3");
  const int gh = h / p, gw = w / p;
  const int row_len = 3 * p * p;
  std::vector<double> out(static_cast<std::size_t>(gh) * gw * row_len);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      double* row = out.data() + (static_cast<std::size_t>(gy) * gw + gx) * row_len;
      int t = 0;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int c = 0; c < 3; ++c)
            row[t++] = image[(static_cast<std::size_t>(gy * p + dy) * w + gx * p + dx) * 3 + c];
    }
  return Tensor::from({gh * gw, row_len}, std::move(out));
}

ForwardResult encoder_forward(const EncoderParams& params, const EncoderConfig& cfg,
                              const Tensor& patches, const KeyMask* mask) {
  const int n = cfg.tokens();
  const int d = cfg.dim;
  if (patches.rows() != n || patches.cols() != cfg.patch_dim())
    throw std::runtime_error("encoder_forward: patch tensor does not match config");
  std::vector<std::uint8_t> keep;
  if (mask) {
    if (static_cast<int>(mask->keep.size()) != n)
      throw std::runtime_error("encoder_forward: key mask must have N entries");
    if (mask->num_kept() == 0)
      throw std::domain_error("encoder_forward: key mask keeps no patch tokens");
    keep.assign(static_cast<std::size_t>(n) + 1, 1);
    for (int i = 0; i < n; ++i) keep[static_cast<std::size_t>(i) + 1] = mask->keep[i];
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

  Tensor x = add_row_vector(matmul(patches, params.patch_w), params.patch_b);
  Tensor t = add(concat_rows({params.cls_token, x}), params.pos);

  ForwardResult res;
  res.layer_tokens.reserve(static_cast<std::size_t>(cfg.depth));
  res.attn.resize(static_cast<std::size_t>(cfg.depth));

  for (int l = 0; l < cfg.depth; ++l) {
    const AttnLayerParams& lp = params.layers[static_cast<std::size_t>(l)];
    Tensor h1 = layer_norm(t, lp.ln1_g, lp.ln1_b, kLnEps);
    std::vector<Tensor> heads;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      Tensor q = add_row_vector(matmul(h1, lp.wq[hd]), lp.bq[hd]);
      Tensor k = add_row_vector(matmul(h1, lp.wk[hd]), lp.bk[hd]);
      Tensor v = add_row_vector(matmul(h1, lp.wv[hd]), lp.bv[hd]);
      Tensor s = scale(matmul_nt(q, k), inv_sqrt_dk);
      Tensor a = mask ? masked_softmax_rows(s, keep) : softmax_rows(s);
      res.attn[static_cast<std::size_t>(l)].push_back(*a.data);
      heads.push_back(matmul(a, v));
    }
    Tensor ctx = cfg.heads == 1 ? heads[0] : concat_cols(heads);
    Tensor o = add_row_vector(matmul(ctx, lp.wo), lp.bo);
    t = add(t, o);
    Tensor h2 = layer_norm(t, lp.ln2_g, lp.ln2_b, kLnEps);
    Tensor m = add_row_vector(
        matmul(gelu(add_row_vector(matmul(h2, lp.mlp_w1), lp.mlp_b1)), lp.mlp_w2), lp.mlp_b2);
    t = add(t, m);
    res.layer_tokens.push_back(t);
  }

  res.final_tokens = layer_norm(t, params.ln_f_g, params.ln_f_b, kLnEps);
  res.cls_logits = matmul(gmp_rows(slice_rows(res.final_tokens, 1, n + 1)), params.head_w);
  const Tensor& aux_src = res.layer_tokens[static_cast<std::size_t>(cfg.aux_layer - 1)];
  res.aux_logits = matmul(gmp_rows(slice_rows(aux_src, 1, n + 1)), params.head_aux_w);
  (void)d;
  return res;
}

}  // namespace mcc
