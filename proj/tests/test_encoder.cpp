#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mcc/encoder.hpp"

using namespace mcc;

namespace {

std::vector<double> random_image(int h, int w, Rng& rng) {
  std::vector<double> img(static_cast<std::size_t>(h) * w * 3);
  for (double& v : img) v = rng.uniform();
  return img;
}

// Plain-loop re-implementation of the forward pass, used as an independent
// oracle for a small configuration.
struct NaiveRef {
  const EncoderParams& p;
  const EncoderConfig& cfg;

  std::vector<double> layer_norm1d(const std::vector<double>& x, int rows, int cols,
                                   const Tensor& g, const Tensor& b) const {
    std::vector<double> out(x.size());
    for (int i = 0; i < rows; ++i) {
      double mean = 0;
      for (int j = 0; j < cols; ++j) mean += x[i * cols + j];
      mean /= cols;
      double var = 0;
      for (int j = 0; j < cols; ++j) {
        double d = x[i * cols + j] - mean;
        var += d * d;
      }
      var /= cols;
      const double inv = 1.0 / std::sqrt(var + 1e-6);
      for (int j = 0; j < cols; ++j)
        out[i * cols + j] = (x[i * cols + j] - mean) * inv * (*g.data)[j] + (*b.data)[j];
    }
    return out;
  }

  std::vector<double> linear(const std::vector<double>& x, int rows, int in, const Tensor& w,
                             const Tensor* b) const {
    const int out_d = w.cols();
    std::vector<double> out(static_cast<std::size_t>(rows) * out_d, 0.0);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < out_d; ++j) {
        double acc = b ? (*b->data)[j] : 0.0;
        for (int k = 0; k < in; ++k) acc += x[i * in + k] * w.at(k, j);
        out[i * out_d + j] = acc;
      }
    return out;
  }

  std::vector<double> forward_tokens(const Tensor& patches, const KeyMask* mask,
                                     std::vector<std::vector<double>>* layer_out) const {
    const int n = cfg.tokens();
    const int d = cfg.dim;
    const int nt = n + 1;
    std::vector<double> x = linear(*patches.data, n, cfg.patch_dim(), p.patch_w, &p.patch_b);
    std::vector<double> t(static_cast<std::size_t>(nt) * d);
    for (int j = 0; j < d; ++j) t[j] = (*p.cls_token.data)[j] + (*p.pos.data)[j];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        t[(i + 1) * d + j] = x[i * d + j] + (*p.pos.data)[(i + 1) * d + j];

    std::vector<std::uint8_t> keep(static_cast<std::size_t>(nt), 1);
    if (mask)
      for (int i = 0; i < n; ++i) keep[i + 1] = mask->keep[i];

    for (int l = 0; l < cfg.depth; ++l) {
      const AttnLayerParams& lp = p.layers[l];
      std::vector<double> h = layer_norm1d(t, nt, d, lp.ln1_g, lp.ln1_b);
      const int dh = cfg.head_dim();
      std::vector<double> q = linear(h, nt, d, lp.wq[0], &lp.bq[0]);
      std::vector<double> k = linear(h, nt, d, lp.wk[0], &lp.bk[0]);
      std::vector<double> v = linear(h, nt, d, lp.wv[0], &lp.bv[0]);
      std::vector<double> ctx(static_cast<std::size_t>(nt) * dh, 0.0);
      for (int i = 0; i < nt; ++i) {
        std::vector<double> s(nt);
        double mx = -1e300;
        for (int j = 0; j < nt; ++j) {
          double acc = 0;
          for (int c = 0; c < dh; ++c) acc += q[i * dh + c] * k[j * dh + c];
          s[j] = acc / std::sqrt(static_cast<double>(dh));
          if (keep[j]) mx = std::max(mx, s[j]);
        }
        double denom = 0;
        std::vector<double> a(nt, 0.0);
        for (int j = 0; j < nt; ++j)
          if (keep[j]) {
            a[j] = std::exp(s[j] - mx);
            denom += a[j];
          }
        for (int j = 0; j < nt; ++j)
          if (keep[j])
            for (int c = 0; c < dh; ++c) ctx[i * dh + c] += (a[j] / denom) * v[j * dh + c];
      }
      std::vector<double> o = linear(ctx, nt, dh, lp.wo, &lp.bo);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += o[i];
      std::vector<double> h2 = layer_norm1d(t, nt, d, lp.ln2_g, lp.ln2_b);
      std::vector<double> m1 = linear(h2, nt, d, lp.mlp_w1, &lp.mlp_b1);
      for (double& u : m1) u = 0.5 * u * (1.0 + std::erf(u * 0.7071067811865476));
      std::vector<double> m2 = linear(m1, nt, 4 * d, lp.mlp_w2, &lp.mlp_b2);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += m2[i];
      if (layer_out) layer_out->push_back(t);
    }
    return layer_norm1d(t, nt, d, p.ln_f_g, p.ln_f_b);
  }
};

}  // namespace

TEST_CASE("patchify a single-patch image gives one row of 192 values") {
  Rng rng(2);
  auto img = random_image(8, 8, rng);
  Tensor p = patchify(img, 8, 8, 8);
  REQUIRE(p.rows() == 1);
  REQUIRE(p.cols() == 192);
  for (int i = 0; i < 192; ++i) CHECK((*p.data)[i] == img[i]);
}

TEST_CASE("patchify of a constant image has identical rows") {
  std::vector<double> img(16 * 16 * 3, 0.25);
  Tensor p = patchify(img, 16, 16, 8);
  REQUIRE(p.rows() == 4);
  for (int r = 1; r < 4; ++r)
    for (int c = 0; c < p.cols(); ++c) CHECK(p.at(r, c) == p.at(0, c));
}

TEST_CASE("patchify row order matches direct indexing") {
  Rng rng(3);
  auto img = random_image(16, 16, rng);
  Tensor p = patchify(img, 16, 16, 8);
  for (int gy = 0; gy < 2; ++gy)
    for (int gx = 0; gx < 2; ++gx) {
      const int row = gy * 2 + gx;
      int t = 0;
      for (int dy = 0; dy < 8; ++dy)
        for (int dx = 0; dx < 8; ++dx)
          for (int c = 0; c < 3; ++c)
            CHECK(p.at(row, t++) == img[((gy * 8 + dy) * 16 + gx * 8 + dx) * 3 + c]);
    }
}

TEST_CASE("patchify rejects indivisible dimensions") {
  std::vector<double> img(10 * 10 * 3, 0.0);
  CHECK_THROWS_AS(patchify(img, 10, 10, 8), std::invalid_argument);
}

TEST_CASE("forward shape contract") {
  EncoderConfig cfg;
  Rng rng(5);
  EncoderParams params = init_encoder(cfg, rng);
  auto img = random_image(64, 64, rng);
  NoGrad ng;
  ForwardResult res = encoder_forward(params, cfg, patchify(img, 64, 64, 8), nullptr);
  REQUIRE(static_cast<int>(res.layer_tokens.size()) == cfg.depth);
  for (const Tensor& t : res.layer_tokens) {
    CHECK(t.rows() == cfg.tokens() + 1);
    CHECK(t.cols() == cfg.dim);
  }
  CHECK(res.cls_logits.numel() == cfg.num_classes);
  CHECK(res.aux_logits.numel() == cfg.num_classes);
  REQUIRE(static_cast<int>(res.attn.size()) == cfg.depth);
  for (const auto& layer : res.attn) REQUIRE(static_cast<int>(layer.size()) == cfg.heads);
}

TEST_CASE("all-keep mask is bit-equal to the unmasked forward") {
  EncoderConfig cfg;
  Rng rng(7);
  EncoderParams params = init_encoder(cfg, rng);
  auto img = random_image(64, 64, rng);
  Tensor patches = patchify(img, 64, 64, 8);
  KeyMask all_keep;
  all_keep.h = all_keep.w = cfg.grid();
  all_keep.scale = 1;
  all_keep.keep.assign(static_cast<std::size_t>(cfg.tokens()), 1);
  NoGrad ng;
  ForwardResult a = encoder_forward(params, cfg, patches, &all_keep);
  ForwardResult b = encoder_forward(params, cfg, patches, nullptr);
  for (std::int64_t i = 0; i < a.final_tokens.numel(); ++i)
    CHECK((*a.final_tokens.data)[i] == (*b.final_tokens.data)[i]);
  for (std::int64_t i = 0; i < a.cls_logits.numel(); ++i)
    CHECK((*a.cls_logits.data)[i] == (*b.cls_logits.data)[i]);
}

TEST_CASE("dropped keys carry exactly zero attention in every layer") {
  EncoderConfig cfg;
  Rng rng(11);
  EncoderParams params = init_encoder(cfg, rng);
  auto img = random_image(64, 64, rng);
  Tensor patches = patchify(img, 64, 64, 8);
  NoGrad ng;
  for (int trial = 0; trial < 20; ++trial) {
    KeyMask mask = sample_key_mask(cfg.grid(), cfg.grid(), 0.95, 4, rng);
    ForwardResult res = encoder_forward(params, cfg, patches, &mask);
    const int nt = cfg.tokens() + 1;
    for (const auto& layer : res.attn)
      for (const auto& a : layer)
        for (int i = 0; i < nt; ++i) {
          double sum = 0.0;
          for (int j = 0; j < nt; ++j) {
            const double w = a[static_cast<std::size_t>(i) * nt + j];
            if (j > 0 && !mask.keep[j - 1]) CHECK(w == 0.0);
            sum += w;
          }
          CHECK(std::fabs(sum - 1.0) <= 1e-9);
        }
  }
}

TEST_CASE("a mask dropping every patch key propagates a domain error") {
  EncoderConfig cfg;
  Rng rng(13);
  EncoderParams params = init_encoder(cfg, rng);
  auto img = random_image(64, 64, rng);
  Tensor patches = patchify(img, 64, 64, 8);
  KeyMask mask;
  mask.h = mask.w = cfg.grid();
  mask.scale = 1;
  mask.keep.assign(static_cast<std::size_t>(cfg.tokens()), 0);
  NoGrad ng;
  CHECK_THROWS_AS(encoder_forward(params, cfg, patches, &mask), std::domain_error);
}

TEST_CASE("kept-token outputs are independent of dropped-token content") {
  EncoderConfig cfg;
  Rng rng(17);
  EncoderParams params = init_encoder(cfg, rng);
  auto img = random_image(64, 64, rng);
  Tensor patches = patchify(img, 64, 64, 8);
  NoGrad ng;
  KeyMask mask = sample_key_mask(cfg.grid(), cfg.grid(), 0.8, 2, rng);
  ForwardResult before = encoder_forward(params, cfg, patches, &mask);

  Tensor mutated = Tensor::from(patches.shape, *patches.data);
  for (int i = 0; i < cfg.tokens(); ++i)
    if (!mask.keep[i])
      for (int c = 0; c < patches.cols(); ++c) mutated.at(i, c) = rng.uniform(-5, 5);
  ForwardResult after = encoder_forward(params, cfg, mutated, &mask);

  const int d = cfg.dim;
  for (int j = 0; j < d; ++j)
    CHECK((*before.final_tokens.data)[j] == (*after.final_tokens.data)[j]);  // cls row
  for (int i = 0; i < cfg.tokens(); ++i) {
    if (!mask.keep[i]) continue;
    for (int j = 0; j < d; ++j)
      CHECK(before.final_tokens.at(i + 1, j) == after.final_tokens.at(i + 1, j));
  }
}

TEST_CASE("permuting dropped keys leaves the attention context unchanged") {
  Rng rng(19);
  Tensor s = Tensor::zeros({5, 5});
  Tensor v = Tensor::zeros({5, 3});
  for (double& x : *s.data) x = rng.uniform(-2, 2);
  for (double& x : *v.data) x = rng.uniform(-2, 2);
  std::vector<std::uint8_t> keep = {1, 0, 1, 0, 0};
  Tensor ctx = matmul(masked_softmax_rows(s, keep), v);

  // swap the dropped key slots 1, 3, 4 cyclically in both S columns and V rows
  Tensor s2 = Tensor::from(s.shape, *s.data);
  Tensor v2 = Tensor::from(v.shape, *v.data);
  const int perm[5] = {0, 3, 2, 4, 1};
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) s2.at(i, j) = s.at(i, perm[j]);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) v2.at(i, j) = v.at(perm[i], j);
  Tensor ctx2 = matmul(masked_softmax_rows(s2, keep), v2);
  for (std::int64_t i = 0; i < ctx.numel(); ++i) CHECK((*ctx.data)[i] == (*ctx2.data)[i]);
}

TEST_CASE("forward matches a plain-loop oracle on a small config") {
  EncoderConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.depth = 2;
  cfg.heads = 1;
  cfg.dim = 4;
  cfg.aux_layer = 1;
  cfg.num_classes = 2;
  Rng rng(23);
  EncoderParams params = init_encoder(cfg, rng);
  // move parameters off their zero/identity initializations
  for (AttnLayerParams& l : params.layers) {
    for (Tensor* t : {&l.ln1_g, &l.ln1_b, &l.ln2_g, &l.ln2_b, &l.bo, &l.mlp_b1, &l.mlp_b2})
      for (double& x : *t->data) x += rng.uniform(-0.3, 0.3);
    for (Tensor* t : {&l.bq[0], &l.bk[0], &l.bv[0]})
      for (double& x : *t->data) x += rng.uniform(-0.3, 0.3);
  }
  for (double& x : *params.patch_b.data) x += rng.uniform(-0.3, 0.3);
  auto img = random_image(16, 16, rng);
  Tensor patches = patchify(img, 16, 16, 8);
  NaiveRef ref{params, cfg};
  NoGrad ng;

  SUBCASE("unmasked") {
    ForwardResult res = encoder_forward(params, cfg, patches, nullptr);
    std::vector<std::vector<double>> layers;
    std::vector<double> fin = ref.forward_tokens(patches, nullptr, &layers);
    REQUIRE(layers.size() == 2);
    for (int l = 0; l < 2; ++l)
      for (std::size_t i = 0; i < layers[l].size(); ++i)
        CHECK(std::fabs((*res.layer_tokens[l].data)[i] - layers[l][i]) <= 1e-12);
    for (std::size_t i = 0; i < fin.size(); ++i)
      CHECK(std::fabs((*res.final_tokens.data)[i] - fin[i]) <= 1e-12);
    // classifier heads against a scan + linear map
    const int n = cfg.tokens(), d = cfg.dim;
    for (int cls = 0; cls < cfg.num_classes; ++cls) {
      double expect = 0.0;
      for (int j = 0; j < d; ++j) {
        double mx = fin[(1) * d + j];
        for (int i = 2; i <= n; ++i) mx = std::max(mx, fin[i * d + j]);
        expect += mx * params.head_w.at(j, cls);
      }
      CHECK(std::fabs((*res.cls_logits.data)[cls] - expect) <= 1e-12);
    }
  }

  SUBCASE("masked") {
    KeyMask mask;
    mask.h = mask.w = 2;
    mask.scale = 1;
    mask.keep = {1, 0, 0, 1};
    ForwardResult res = encoder_forward(params, cfg, patches, &mask);
    std::vector<double> fin = ref.forward_tokens(patches, &mask, nullptr);
    for (std::size_t i = 0; i < fin.size(); ++i)
      CHECK(std::fabs((*res.final_tokens.data)[i] - fin[i]) <= 1e-12);
  }
}

TEST_CASE("encoder initialization is deterministic under seed") {
  EncoderConfig cfg;
  Rng a(101), b(101);
  EncoderParams pa = init_encoder(cfg, a);
  EncoderParams pb = init_encoder(cfg, b);
  for (std::int64_t i = 0; i < pa.patch_w.numel(); ++i)
    CHECK((*pa.patch_w.data)[i] == (*pb.patch_w.data)[i]);
  for (std::int64_t i = 0; i < pa.head_w.numel(); ++i)
    CHECK((*pa.head_w.data)[i] == (*pb.head_w.data)[i]);
  CHECK((*pa.layers[2].mlp_w1.data) == (*pb.layers[2].mlp_w1.data));
}

TEST_CASE("config validation rejects bad settings") {
  EncoderConfig cfg;
  cfg.image_size = 60;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = EncoderConfig{};
  cfg.aux_layer = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = EncoderConfig{};
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
