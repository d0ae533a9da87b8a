#include "mcc/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mcc {

namespace {

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::fabs(t))); }

double sigmoid(double t) { return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

std::shared_ptr<std::vector<double>> scalar_buf(double v) {
  return std::make_shared<std::vector<double>>(1, v);
}

}  // namespace

Projector make_projector(int d, int d_proj, Rng& rng, bool trainable) {
  Projector p;
  p.w = Tensor::randn({d, d_proj}, rng, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
  return p;
}

void ema_update(Projector& global, const Projector& local, double m) {
  if (global.w.shape != local.w.shape) throw std::runtime_error("ema_update: shape mismatch");
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("ema_update: momentum must be in [0,1]");
  double* g = global.w.data->data();
  const double* l = local.w.data->data();
  for (std::int64_t i = 0; i < global.w.numel(); ++i) g[i] = m * g[i] + (1.0 - m) * l[i];
}

Tensor cls_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels) {
  const std::int64_t c = logits.numel();
  if (c != static_cast<std::int64_t>(labels.size()))
    throw std::runtime_error("cls_loss: logits and labels disagree on C");
  const double* x = logits.data->data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < c; ++i)
    acc += labels[i] ? softplus(-x[i]) : softplus(x[i]);
  Tensor out = make_op({1}, scalar_buf(acc / static_cast<double>(c)), "cls_loss", {&logits});
  if (out.node) {
    auto og = out.grad;
    auto od = out.data;
    Tensor lg = logits;
    std::vector<std::uint8_t> y = labels;
    out.node->backward = [og, od, lg, y, c]() {
      if (!lg.requires_grad || !lg.grad) return;
      const double g = (*og)[0];
      const double* x2 = lg.data->data();
      double* dx = lg.grad->data();
      for (std::int64_t i = 0; i < c; ++i)
        dx[i] += g * (sigmoid(x2[i]) - (y[i] ? 1.0 : 0.0)) / static_cast<double>(c);
    };
  }
  return out;
}

Tensor mcc_loss_from_sims(const Tensor& sims, const std::vector<std::uint8_t>& positive,
                          double tau, double eps) {
  const std::int64_t k = sims.numel();
  if (k != static_cast<std::int64_t>(positive.size()))
    throw std::runtime_error("mcc_loss: sims and verdicts disagree on view count");
  if (!(tau > 0.0)) throw std::invalid_argument("mcc_loss: tau must be positive");
  if (eps < 0.0) throw std::invalid_argument("mcc_loss: eps must be nonnegative");
  int n_pos = 0;
  for (std::uint8_t p : positive) n_pos += p ? 1 : 0;
  if (n_pos == 0) throw std::invalid_argument("mcc_loss: no positive views");

  const double* s = sims.data->data();
  double s_neg = 0.0;
  for (std::int64_t i = 0; i < k; ++i)
    if (!positive[i]) s_neg += std::exp(s[i] / tau);
  double acc = 0.0;
  for (std::int64_t i = 0; i < k; ++i) {
    if (!positive[i]) continue;
    const double a = std::exp(s[i] / tau);
    acc += std::log(a + s_neg + eps) - s[i] / tau;
  }
  Tensor out = make_op({1}, scalar_buf(acc / n_pos), "mcc_loss", {&sims});
  if (out.node) {
    auto og = out.grad;
    auto od = out.data;
    Tensor sm = sims;
    std::vector<std::uint8_t> pos = positive;
    out.node->backward = [og, od, sm, pos, tau, eps, k, n_pos]() {
      if (!sm.requires_grad || !sm.grad) return;
      const double g = (*og)[0];
      const double* s2 = sm.data->data();
      double* ds = sm.grad->data();
      double sn = 0.0;
      for (std::int64_t i = 0; i < k; ++i)
        if (!pos[i]) sn += std::exp(s2[i] / tau);
      double inv_denom_sum = 0.0;
      for (std::int64_t i = 0; i < k; ++i) {
        if (!pos[i]) continue;
        const double a = std::exp(s2[i] / tau);
        const double denom = a + sn + eps;
        inv_denom_sum += 1.0 / denom;
        ds[i] += g * (a / denom - 1.0) / (n_pos * tau);
      }
      for (std::int64_t i = 0; i < k; ++i) {
        if (pos[i]) continue;
        const double a = std::exp(s2[i] / tau);
        ds[i] += g * a * inv_denom_sum / (n_pos * tau);
      }
    };
  }
  return out;
}

Tensor affinity_loss(const Tensor& tokens, const PairAffinityLabel& pairs, int* skipped_pairs) {
  const int n = tokens.rows();
  const int d = tokens.cols();
  if (static_cast<std::size_t>(n) * n != pairs.size())
    throw std::runtime_error("affinity_loss: pair table must be N×N");
  const double* t = tokens.data->data();

  std::vector<double> norm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double ss = 0.0;
    const double* ti = t + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) ss += ti[j] * ti[j];
    norm[i] = std::sqrt(ss);
  }

  std::int64_t n_pos = 0, n_neg = 0;
  int skipped = 0;
  double sum_pos = 0.0, sum_neg = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::int8_t lab = pairs[static_cast<std::size_t>(i) * n + j];
      if (lab == 0) continue;
      if (norm[i] == 0.0 || norm[j] == 0.0) {
        ++skipped;
        continue;
      }
      double dot = 0.0;
      const double* ti = t + static_cast<std::size_t>(i) * d;
      const double* tj = t + static_cast<std::size_t>(j) * d;
      for (int p = 0; p < d; ++p) dot += ti[p] * tj[p];
      const double cos = dot / (norm[i] * norm[j]);
      if (lab > 0) {
        sum_pos += 1.0 - cos;
        ++n_pos;
      } else {
        sum_neg += cos;
        ++n_neg;
      }
    }
  }
  if (skipped_pairs) *skipped_pairs = skipped;
  double value = 0.0;
  if (n_pos > 0) value += sum_pos / static_cast<double>(n_pos);
  if (n_neg > 0) value += sum_neg / static_cast<double>(n_neg);
  if (n_pos == 0 && n_neg == 0) return Tensor::from({1}, {0.0});

  Tensor out = make_op({1}, scalar_buf(value), "affinity_loss", {&tokens});
  if (out.node) {
    auto og = out.grad;
    auto od = out.data;
    Tensor tk = tokens;
    PairAffinityLabel pr = pairs;
    std::vector<double> nm = norm;
    out.node->backward = [og, od, tk, pr, nm, n, d, n_pos, n_neg]() {
      if (!tk.requires_grad || !tk.grad) return;
      const double g = (*og)[0];
      const double* t2 = tk.data->data();
      double* dt = tk.grad->data();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (i == j) continue;  // cos(t,t) is constant 1, zero gradient
          const std::int8_t lab = pr[static_cast<std::size_t>(i) * n + j];
          if (lab == 0) continue;
          if (nm[i] == 0.0 || nm[j] == 0.0) continue;
          const double w =
              lab > 0 ? -g / static_cast<double>(n_pos) : g / static_cast<double>(n_neg);
          const double* ti = t2 + static_cast<std::size_t>(i) * d;
          const double* tj = t2 + static_cast<std::size_t>(j) * d;
          double dot = 0.0;
          for (int p = 0; p < d; ++p) dot += ti[p] * tj[p];
          const double inv_ij = 1.0 / (nm[i] * nm[j]);
          const double cos = dot * inv_ij;
          double* di = dt + static_cast<std::size_t>(i) * d;
          double* dj = dt + static_cast<std::size_t>(j) * d;
          const double ci = cos / (nm[i] * nm[i]);
          const double cj = cos / (nm[j] * nm[j]);
          for (int p = 0; p < d; ++p) {
            di[p] += w * (tj[p] * inv_ij - ci * ti[p]);
            dj[p] += w * (ti[p] * inv_ij - cj * tj[p]);
          }
        }
      }
    };
  }
  return out;
}

Tensor seg_loss(const Tensor& logits, const std::vector<int>& target, bool* all_ignored) {
  const int p = logits.rows();
  const int k = logits.cols();
  if (p != static_cast<int>(target.size()))
    throw std::runtime_error("seg_loss: target must have one entry per pixel");
  for (int v : target)
    if (v != kIgnore && (v < 0 || v >= k))
      throw std::runtime_error("seg_loss: target value out of range");
  if (all_ignored) *all_ignored = false;

  const double* x = logits.data->data();
  std::int64_t valid = 0;
  double acc = 0.0;
  for (int i = 0; i < p; ++i) {
    if (target[i] == kIgnore) continue;
    ++valid;
    const double* xr = x + static_cast<std::size_t>(i) * k;
    double mx = xr[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
    double se = 0.0;
    for (int j = 0; j < k; ++j) se += std::exp(xr[j] - mx);
    acc += mx + std::log(se) - xr[target[i]];
  }
  if (valid == 0) {
    if (all_ignored) *all_ignored = true;
    return Tensor::from({1}, {0.0});
  }
  Tensor out = make_op({1}, scalar_buf(acc / static_cast<double>(valid)), "seg_loss", {&logits});
  if (out.node) {
    auto og = out.grad;
    auto od = out.data;
    Tensor lg = logits;
    std::vector<int> tg = target;
    out.node->backward = [og, od, lg, tg, p, k, valid]() {
      if (!lg.requires_grad || !lg.grad) return;
      const double g = (*og)[0] / static_cast<double>(valid);
      const double* x2 = lg.data->data();
      double* dx = lg.grad->data();
      for (int i = 0; i < p; ++i) {
        if (tg[i] == kIgnore) continue;
        const double* xr = x2 + static_cast<std::size_t>(i) * k;
        double mx = xr[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
        double se = 0.0;
        for (int j = 0; j < k; ++j) se += std::exp(xr[j] - mx);
        double* dr = dx + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
          const double prob = std::exp(xr[j] - mx) / se;
          dr[j] += g * (prob - (j == tg[i] ? 1.0 : 0.0));
        }
      }
    };
  }
  return out;
}

Tensor reg_loss(const Tensor& probs, int h, int w) {
  const int p = probs.rows();
  const int c = probs.cols();
  if (p != h * w) throw std::runtime_error("reg_loss: rows must equal h*w");
  const std::int64_t count =
      static_cast<std::int64_t>(c) * (static_cast<std::int64_t>(h) * (w - 1) + static_cast<std::int64_t>(h - 1) * w);
  if (count == 0) return Tensor::from({1}, {0.0});
  const double* x = probs.data->data();
  auto idx = [w, c](int y, int xx) { return (static_cast<std::size_t>(y) * w + xx) * c; };
  double acc = 0.0;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx + 1 < w; ++xx) {
      const double* a = x + idx(y, xx);
      const double* b = x + idx(y, xx + 1);
      for (int ch = 0; ch < c; ++ch) acc += std::fabs(b[ch] - a[ch]);
    }
  for (int y = 0; y + 1 < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      const double* a = x + idx(y, xx);
      const double* b = x + idx(y + 1, xx);
      for (int ch = 0; ch < c; ++ch) acc += std::fabs(b[ch] - a[ch]);
    }
  Tensor out = make_op({1}, scalar_buf(acc / static_cast<double>(count)), "reg_loss", {&probs});
  if (out.node) {
    auto og = out.grad;
    auto od = out.data;
    Tensor pb = probs;
    out.node->backward = [og, od, pb, h, w, c, count, idx]() {
      if (!pb.requires_grad || !pb.grad) return;
      const double g = (*og)[0] / static_cast<double>(count);
      const double* x2 = pb.data->data();
      double* dx = pb.grad->data();
      auto step = [&](std::size_t ia, std::size_t ib) {
        for (int ch = 0; ch < c; ++ch) {
          const double diff = x2[ib + ch] - x2[ia + ch];
          const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          dx[ib + ch] += g * s;
          dx[ia + ch] -= g * s;
        }
      };
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx + 1 < w; ++xx) step(idx(y, xx), idx(y, xx + 1));
      for (int y = 0; y + 1 < h; ++y)
        for (int xx = 0; xx < w; ++xx) step(idx(y, xx), idx(y + 1, xx));
    };
  }
  return out;
}

Tensor total_loss(const LossParts& parts, const LossWeights& weights) {
  if (weights.aff < 0 || weights.mcc < 0 || weights.seg < 0 || weights.reg < 0)
    throw std::invalid_argument("total_loss: weights must be nonnegative");
  struct Named {
    const Tensor* t;
    const char* name;
  };
  const Named named[] = {{&parts.cls, "cls"},  {&parts.cls_aux, "cls_aux"}, {&parts.aff, "aff"},
                         {&parts.mcc, "mcc"},  {&parts.seg, "seg"},         {&parts.reg, "reg"}};
  for (const Named& nb : named) {
    if (nb.t->numel() != 1) throw std::runtime_error(std::string("total_loss: ") + nb.name + " is not scalar");
    if (!std::isfinite((*nb.t->data)[0]))
      throw std::runtime_error(std::string("total_loss: non-finite ") + nb.name + " loss");
  }
  Tensor acc = add(parts.cls, parts.cls_aux);
  acc = add(acc, scale(parts.aff, weights.aff));
  acc = add(acc, scale(parts.mcc, weights.mcc));
  acc = add(acc, scale(parts.seg, weights.seg));
  acc = add(acc, scale(parts.reg, weights.reg));
  return acc;
}

}  // namespace mcc
