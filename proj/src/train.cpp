#include "mcc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace mcc {

namespace {

constexpr double kNormEps = 1e-12;

bool any_label(const std::vector<std::uint8_t>& labels) {
  for (std::uint8_t b : labels)
    if (b) return true;
  return false;
}

Tensor zero_part() { return Tensor::from({1}, {0.0}); }

}  // namespace

Model init_model(const TrainConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng = derive_stream(cfg.seed, 0);
  m.enc = init_encoder(cfg.enc, rng);
  const int d = cfg.enc.dim;
  const int out = cfg.enc.num_classes + 1;
  m.dec.w1 = Tensor::randn({d, cfg.decoder_hidden}, rng, 0.02, true);
  m.dec.b1 = Tensor::zeros({1, cfg.decoder_hidden}, true);
  m.dec.w2 = Tensor::randn({cfg.decoder_hidden, out}, rng, 0.02, true);
  m.dec.b2 = Tensor::zeros({1, out}, true);
  m.proj_local = make_projector(d, cfg.proj_dim, rng, true);
  m.proj_global.w = Tensor::from(m.proj_local.w.shape, *m.proj_local.w.data, false);
  return m;
}

void visit_params(Model& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("enc.patch_w", m.enc.patch_w);
  fn("enc.patch_b", m.enc.patch_b);
  fn("enc.cls_token", m.enc.cls_token);
  fn("enc.pos", m.enc.pos);
  for (std::size_t l = 0; l < m.enc.layers.size(); ++l) {
    AttnLayerParams& lay = m.enc.layers[l];
    const std::string p = "enc.l" + std::to_string(l) + ".";
    fn(p + "ln1_g", lay.ln1_g);
    fn(p + "ln1_b", lay.ln1_b);
    for (std::size_t h = 0; h < lay.wq.size(); ++h) {
      const std::string q = p + "h" + std::to_string(h) + ".";
      fn(q + "wq", lay.wq[h]);
      fn(q + "bq", lay.bq[h]);
      fn(q + "wk", lay.wk[h]);
      fn(q + "bk", lay.bk[h]);
      fn(q + "wv", lay.wv[h]);
      fn(q + "bv", lay.bv[h]);
    }
    fn(p + "wo", lay.wo);
    fn(p + "bo", lay.bo);
    fn(p + "ln2_g", lay.ln2_g);
    fn(p + "ln2_b", lay.ln2_b);
    fn(p + "mlp_w1", lay.mlp_w1);
    fn(p + "mlp_b1", lay.mlp_b1);
    fn(p + "mlp_w2", lay.mlp_w2);
    fn(p + "mlp_b2", lay.mlp_b2);
  }
  fn("enc.ln_f_g", m.enc.ln_f_g);
  fn("enc.ln_f_b", m.enc.ln_f_b);
  fn("enc.head_w", m.enc.head_w);
  fn("enc.head_aux_w", m.enc.head_aux_w);
  fn("dec.w1", m.dec.w1);
  fn("dec.b1", m.dec.b1);
  fn("dec.w2", m.dec.w2);
  fn("dec.b2", m.dec.b2);
  fn("proj_local.w", m.proj_local.w);
}

Tensor decoder_forward(const Model& m, const Tensor& final_tokens) {
  const EncoderConfig& e = m.cfg.enc;
  Tensor patches = slice_rows(final_tokens, 1, e.tokens() + 1);
  Tensor hidden = gelu(add_row_vector(matmul(patches, m.dec.w1), m.dec.b1));
  Tensor logits = add_row_vector(matmul(hidden, m.dec.w2), m.dec.b2);
  return bilinear_upsample_grid(logits, e.grid(), e.grid(), e.image_size, e.image_size);
}

double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_iters) throw std::invalid_argument("lr_at: step out of range");
  if (step <= cfg.warmup_iters && cfg.warmup_iters > 0)
    return cfg.lr_init +
           (cfg.lr_peak - cfg.lr_init) * static_cast<double>(step) / cfg.warmup_iters;
  const double prog = static_cast<double>(step - cfg.warmup_iters) /
                      static_cast<double>(cfg.total_iters - cfg.warmup_iters);
  return cfg.lr_peak * std::pow(1.0 - prog, cfg.poly_power);
}

TrainState init_train_state(const TrainConfig& cfg) {
  TrainState st;
  st.model = init_model(cfg);
  visit_params(st.model, [&st](const std::string&, Tensor& p) {
    st.adam.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    st.adam.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  });
  st.mask_rng = derive_stream(cfg.seed, 2);
  return st;
}

namespace {

struct ImageOutcome {
  LossParts parts;
  Tensor total;
  int n_pos = 0;
  int n_neg = 0;
};

// All losses for one image. The mask list is empty when the contrast term is
// switched off; bank collects detached keys for cross-image negatives.
ImageOutcome image_losses(Model& m, const SyntheticSample& s, const std::vector<KeyMask>& masks,
                          std::vector<std::vector<double>>* bank) {
  const TrainConfig& c = m.cfg;
  const EncoderConfig& e = c.enc;
  const int n = e.tokens();
  const int grid = e.grid();

  ImageOutcome out;
  Tensor patches = patchify(s.image, e.image_size, e.image_size, e.patch_size);
  ForwardResult g = encoder_forward(m.enc, e, patches, nullptr);

  out.parts.cls = cls_loss(g.cls_logits, s.labels);
  out.parts.cls_aux = cls_loss(g.aux_logits, s.labels);
  out.parts.aff = zero_part();
  out.parts.mcc = zero_part();
  out.parts.seg = zero_part();
  out.parts.reg = zero_part();

  if (any_label(s.labels)) {
    Cam cam_aux, cam_fin;
    {
      NoGrad ng;
      Tensor aux_p = slice_rows(g.layer_tokens[static_cast<std::size_t>(e.aux_layer) - 1], 1, n + 1);
      Tensor fin_p = slice_rows(g.final_tokens, 1, n + 1);
      cam_aux = compute_cam(aux_p, m.enc.head_aux_w, s.labels, grid, grid, e.aux_layer);
      cam_fin = compute_cam(fin_p, m.enc.head_w, s.labels, grid, grid, e.depth);
    }

    // pairwise affinity of final-layer tokens, supervised by the aux CAM
    ReliableLabel rel_aux = partition(cam_aux, c.beta_bg, c.beta_fg);
    PairAffinityLabel pairs = affinity_pairs(rel_aux);
    Tensor aff_tokens = slice_rows(g.layer_tokens.back(), 1, n + 1);
    out.parts.aff = affinity_loss(aff_tokens, pairs);

    // decoder supervised by a pixel-resolution thresholded CAM
    const Cam& seg_cam = c.seg_label_source == "aux" ? cam_aux : cam_fin;
    ReliableLabel seg_target =
        partition(upsample_cam_bilinear(seg_cam, e.patch_size), c.beta_bg, c.beta_fg);
    Tensor dec_logits = decoder_forward(m, g.final_tokens);
    out.parts.seg = seg_loss(dec_logits, seg_target);
    out.parts.reg = reg_loss(softmax_rows(dec_logits), e.image_size, e.image_size);

    if (!masks.empty()) {
      const std::vector<std::uint8_t> tok_lab = token_label(cam_aux, c.beta_fg);
      std::vector<std::uint8_t> verdict;
      verdict.reserve(masks.size());
      for (const KeyMask& mask : masks) {
        const bool pos = positiveness(tok_lab, mask, c.mu);
        verdict.push_back(pos ? 1 : 0);
        (pos ? out.n_pos : out.n_neg) += 1;
      }
      // with no positive view the contrast term is defined as zero and the
      // local passes would carry no gradient, so they are skipped
      if (out.n_pos > 0) {
        Tensor q;
        {
          NoGrad ng;
          Tensor cls_g = slice_rows(g.final_tokens, 0, 1);
          q = l2_normalize_rows(matmul(cls_g, m.proj_global.w), kNormEps);
        }
        std::vector<Tensor> keys;
        keys.reserve(masks.size());
        for (const KeyMask& mask : masks) {
          ForwardResult lv = encoder_forward(m.enc, e, patches, &mask);
          Tensor cls_l = slice_rows(lv.final_tokens, 0, 1);
          keys.push_back(l2_normalize_rows(matmul(cls_l, m.proj_local.w), kNormEps));
        }
        Tensor sims = matmul_nt(concat_rows(keys), q);
        if (bank && !bank->empty()) {
          std::vector<double> extra;
          extra.reserve(bank->size());
          for (const std::vector<double>& kv : *bank) {
            double dot = 0.0;
            for (std::size_t i = 0; i < kv.size(); ++i) dot += kv[i] * (*q.data)[i];
            extra.push_back(dot);
          }
          Tensor extra_t = Tensor::from({static_cast<int>(extra.size()), 1}, extra);
          sims = concat_rows({sims, extra_t});
          verdict.resize(verdict.size() + extra.size(), 0);
        }
        out.parts.mcc = mcc_loss_from_sims(sims, verdict, c.tau, c.contrast_eps);
        if (bank)
          for (const Tensor& k : keys) bank->push_back(*k.data);
      }
    }
  }

  out.total = total_loss(out.parts, c.weights);
  return out;
}

void adam_step(Model& m, AdamState& a, double lr) {
  const TrainConfig& c = m.cfg;
  a.t += 1;
  const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(a.t));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(a.t));
  std::size_t idx = 0;
  visit_params(m, [&](const std::string&, Tensor& p) {
    std::vector<double>& mm = a.m[idx];
    std::vector<double>& vv = a.v[idx];
    ++idx;
    for (std::size_t i = 0; i < mm.size(); ++i) {
      const double gi = (*p.grad)[i];
      mm[i] = c.adam_beta1 * mm[i] + (1.0 - c.adam_beta1) * gi;
      vv[i] = c.adam_beta2 * vv[i] + (1.0 - c.adam_beta2) * gi * gi;
      const double mhat = mm[i] / bc1;
      const double vhat = vv[i] / bc2;
      (*p.data)[i] -= lr * (mhat / (std::sqrt(vhat) + c.adam_eps) + c.weight_decay * (*p.data)[i]);
    }
  });
}

}  // namespace

StepBreakdown train_step(TrainState& st, const std::vector<const SyntheticSample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  Model& m = st.model;
  const TrainConfig& c = m.cfg;
  const bool contrast = c.weights.mcc != 0.0;

  StepBreakdown bd;
  bd.lr = lr_at(static_cast<int>(st.step), c);

  visit_params(m, [](const std::string&, Tensor& p) { p.zero_grad(); });

  std::vector<std::vector<double>> bank;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const SyntheticSample* s : batch) {
    std::vector<KeyMask> masks;
    if (contrast) {
      masks.reserve(static_cast<std::size_t>(c.views));
      for (int v = 0; v < c.views; ++v)
        masks.push_back(
            sample_key_mask(c.enc.grid(), c.enc.grid(), c.mask_ratio, c.mask_scale, st.mask_rng));
    }
    ImageOutcome res =
        image_losses(m, *s, masks, c.cross_image_negatives && contrast ? &bank : nullptr);
    bd.cls += (*res.parts.cls.data)[0] * inv_b;
    bd.cls_aux += (*res.parts.cls_aux.data)[0] * inv_b;
    bd.aff += (*res.parts.aff.data)[0] * inv_b;
    bd.mcc += (*res.parts.mcc.data)[0] * inv_b;
    bd.seg += (*res.parts.seg.data)[0] * inv_b;
    bd.reg += (*res.parts.reg.data)[0] * inv_b;
    bd.total += (*res.total.data)[0] * inv_b;
    bd.n_pos_views += res.n_pos;
    bd.n_neg_views += res.n_neg;

    Tensor scaled = scale(res.total, inv_b);
    backward(scaled);
  }

  adam_step(m, st.adam, bd.lr);
  ema_update(m.proj_global, m.proj_local, c.momentum);
  st.step += 1;
  return bd;
}

std::string breakdown_json(std::int64_t step, const StepBreakdown& b) {
  char buf[768];
  std::snprintf(buf, sizeof buf,
                "{\"step\":%lld,\"cls\":%.17g,\"cls_aux\":%.17g,\"aff\":%.17g,\"mcc\":%.17g,"
                "\"seg\":%.17g,\"reg\":%.17g,\"total\":%.17g,\"lr\":%.17g,"
                "\"n_pos_views\":%d,\"n_neg_views\":%d}",
                static_cast<long long>(step), b.cls, b.cls_aux, b.aff, b.mcc, b.seg, b.reg,
                b.total, b.lr, b.n_pos_views, b.n_neg_views);
  return std::string(buf);
}

TrainResult train_run(const TrainConfig& cfg, const std::vector<SyntheticSample>& train_data,
                      std::ostream* log, const std::string& out_dir) {
  cfg.validate();
  if (train_data.empty()) throw std::invalid_argument("train_run: empty training set");

  TrainResult res;
  res.state = init_train_state(cfg);
  Rng batch_rng = derive_stream(cfg.seed, 1);
  res.history.reserve(static_cast<std::size_t>(cfg.total_iters));

  for (int step = 0; step < cfg.total_iters; ++step) {
    std::vector<const SyntheticSample*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b)
      batch.push_back(&train_data[batch_rng.index(train_data.size())]);

    StepBreakdown bd;
    try {
      bd = train_step(res.state, batch);
    } catch (...) {
      // non-finite losses and other faults dump state for post-mortem
      if (!out_dir.empty())
        save_checkpoint(out_dir + "/statedump.ckpt", to_checkpoint(res.state));
      throw;
    }
    if (log) (*log) << breakdown_json(step, bd) << "\n";
    res.history.push_back(bd);
    if (cfg.save_every > 0 && (step + 1) % cfg.save_every == 0 && !out_dir.empty())
      save_checkpoint(out_dir + "/step_" + std::to_string(step + 1) + ".ckpt",
                      to_checkpoint(res.state));
  }
  if (!out_dir.empty()) save_checkpoint(out_dir + "/final.ckpt", to_checkpoint(res.state));
  return res;
}

ReliableLabel pseudo_label_for(const Model& m, const ForwardResult& fwd,
                               const std::vector<std::uint8_t>& labels) {
  const EncoderConfig& e = m.cfg.enc;
  if (!any_label(labels))
    return ReliableLabel(static_cast<std::size_t>(e.image_size) * e.image_size, 0);
  NoGrad ng;
  Tensor fin_p = slice_rows(fwd.final_tokens, 1, e.tokens() + 1);
  Cam cam = compute_cam(fin_p, m.enc.head_w, labels, e.grid(), e.grid(), e.depth);
  return partition(upsample_cam_bilinear(cam, e.patch_size), m.cfg.beta_bg, m.cfg.beta_fg);
}

EvalReport evaluate(const Model& m, const std::vector<SyntheticSample>& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const EncoderConfig& e = m.cfg.enc;
  const int k = e.num_classes + 1;
  ConfusionAccumulator acc_pseudo(k);
  ConfusionAccumulator acc_seg(k);
  NoGrad ng;
  for (const SyntheticSample& s : data) {
    Tensor patches = patchify(s.image, e.image_size, e.image_size, e.patch_size);
    ForwardResult fwd = encoder_forward(m.enc, e, patches, nullptr);
    acc_pseudo.add(s.gt_mask, pseudo_label_for(m, fwd, s.labels));

    Tensor logits = decoder_forward(m, fwd.final_tokens);
    std::vector<int> pred(static_cast<std::size_t>(logits.rows()));
    for (int i = 0; i < logits.rows(); ++i) {
      int arg = 0;
      double best = logits.at(i, 0);
      for (int cls = 1; cls < k; ++cls)
        if (logits.at(i, cls) > best) {
          best = logits.at(i, cls);
          arg = cls;
        }
      pred[static_cast<std::size_t>(i)] = arg;
    }
    acc_seg.add(s.gt_mask, pred);
  }
  return {acc_pseudo.report(), acc_seg.report()};
}

Checkpoint to_checkpoint(const TrainState& st) {
  Checkpoint ckpt;
  ckpt.config_text = st.model.cfg.serialize();
  ckpt.config_digest = config_digest(st.model.cfg);
  ckpt.step = static_cast<std::uint64_t>(st.step);

  auto push = [&ckpt](const std::string& name, const std::vector<int>& shape,
                      const std::vector<double>& values) {
    NamedArray a;
    a.name = name;
    for (int d : shape) a.dims.push_back(static_cast<std::size_t>(d));
    a.values = values;
    ckpt.arrays.push_back(std::move(a));
  };

  Model shared = st.model;  // tensor copies share the underlying buffers
  std::size_t idx = 0;
  visit_params(shared, [&](const std::string& name, Tensor& p) {
    push(name, p.shape, *p.data);
    push("adam.m/" + name, p.shape, st.adam.m[idx]);
    push("adam.v/" + name, p.shape, st.adam.v[idx]);
    ++idx;
  });
  push("proj_global.w", st.model.proj_global.w.shape, *st.model.proj_global.w.data);
  return ckpt;
}

TrainState from_checkpoint(const Checkpoint& ckpt) {
  TrainConfig cfg = TrainConfig::parse(ckpt.config_text);
  if (config_digest(cfg) != ckpt.config_digest)
    throw std::runtime_error("from_checkpoint: config digest mismatch");
  TrainState st = init_train_state(cfg);
  st.step = static_cast<std::int64_t>(ckpt.step);
  st.adam.t = st.step;

  auto fetch = [&ckpt](const std::string& name, std::size_t numel) -> const NamedArray& {
    const NamedArray* a = ckpt.find(name);
    if (!a) throw std::runtime_error("from_checkpoint: missing array " + name);
    if (a->values.size() != numel)
      throw std::runtime_error("from_checkpoint: size mismatch for " + name);
    return *a;
  };

  std::size_t idx = 0;
  visit_params(st.model, [&](const std::string& name, Tensor& p) {
    const std::size_t n = static_cast<std::size_t>(p.numel());
    *p.data = fetch(name, n).values;
    st.adam.m[idx] = fetch("adam.m/" + name, n).values;
    st.adam.v[idx] = fetch("adam.v/" + name, n).values;
    ++idx;
  });
  Tensor& pg = st.model.proj_global.w;
  *pg.data = fetch("proj_global.w", static_cast<std::size_t>(pg.numel())).values;
  return st;
}

std::string mask_sweep(const std::vector<double>& ratios, const std::vector<int>& scales,
                       const TrainConfig& base_cfg, std::ostream* progress) {
  if (ratios.empty() || scales.empty()) throw std::invalid_argument("mask_sweep: empty grid");
  std::vector<double> rs = ratios;
  std::vector<int> ss = scales;
  std::sort(rs.begin(), rs.end());
  std::sort(ss.begin(), ss.end());

  const TrainConfig& c = base_cfg;
  std::vector<SyntheticSample> train =
      generate_dataset(c.train_n, c.enc.num_classes, c.crop_size, c.seed, 0);
  std::vector<SyntheticSample> val =
      generate_dataset(c.val_n, c.enc.num_classes, c.crop_size, c.seed, 1);

  std::string csv = "ratio,scale,pseudo_miou,seg_miou\n";
  for (double r : rs)
    for (int s : ss) {
      TrainConfig cell = base_cfg;
      cell.mask_ratio = r;
      cell.mask_scale = s;
      cell.validate();
      if (progress) (*progress) << "sweep cell ratio=" << r << " scale=" << s << "\n";
      TrainResult res = train_run(cell, train);
      EvalReport ev = evaluate(res.state.model, val);
      char line[128];
      std::snprintf(line, sizeof line, "%g,%d,%.6f,%.6f\n", r, s, ev.pseudo.mean, ev.seg.mean);
      csv += line;
    }
  return csv;
}

}  // namespace mcc
