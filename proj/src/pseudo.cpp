#include "mcc/pseudo.hpp"

#include <algorithm>
#include <stdexcept>

namespace mcc {

Cam compute_cam(const Tensor& patches, const Tensor& w,
                const std::vector<std::uint8_t>& present, int grid_h, int grid_w,
                int source_layer) {
  const int n = patches.rows();
  const int d = patches.cols();
  const int c = w.cols();
  if (w.rows() != d) throw std::runtime_error("compute_cam: weight rows must match token dim");
  if (n != grid_h * grid_w) throw std::runtime_error("compute_cam: token count must match grid");
  if (static_cast<int>(present.size()) != c)
    throw std::runtime_error("compute_cam: present vector must have C entries");
  bool any = false;
  for (std::uint8_t b : present) any = any || (b != 0);
  if (!any) throw std::runtime_error("compute_cam: no present class");

  Cam cam;
  cam.c = c;
  cam.h = grid_h;
  cam.w = grid_w;
  cam.source_layer = source_layer;
  cam.f.assign(static_cast<std::size_t>(c) * n, 0.0);

  std::vector<double> raw(static_cast<std::size_t>(n));
  for (int cls = 0; cls < c; ++cls) {
    if (!present[cls]) continue;
    double lo = 0.0, hi = 0.0;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      const double* pr = patches.data->data() + static_cast<std::size_t>(i) * d;
      for (int k = 0; k < d; ++k) acc += pr[k] * w.at(k, cls);
      raw[i] = acc;
      if (i == 0) {
        lo = hi = acc;
      } else {
        lo = std::min(lo, acc);
        hi = std::max(hi, acc);
      }
    }
    if (hi == lo) continue;  // degenerate channel stays zero
    const double inv = 1.0 / (hi - lo);
    for (int i = 0; i < n; ++i)
      cam.f[static_cast<std::size_t>(cls) * n + i] = (raw[i] - lo) * inv;
  }
  return cam;
}

ReliableLabel partition(const Cam& cam, double beta_bg, double beta_fg) {
  if (!(beta_bg > 0.0 && beta_bg < beta_fg && beta_fg < 1.0))
    throw std::invalid_argument("partition: need 0 < beta_bg < beta_fg < 1");
  const int n = cam.h * cam.w;
  ReliableLabel label(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double best = cam.f[i];
    int arg = 0;
    for (int cls = 1; cls < cam.c; ++cls) {
      const double v = cam.f[static_cast<std::size_t>(cls) * n + i];
      if (v > best) {  // strict, so ties keep the lowest class id
        best = v;
        arg = cls;
      }
    }
    if (best >= beta_fg)
      label[i] = arg + 1;
    else if (best <= beta_bg)
      label[i] = 0;
    else
      label[i] = kIgnore;
  }
  return label;
}

PairAffinityLabel affinity_pairs(const ReliableLabel& label) {
  const std::size_t n = label.size();
  PairAffinityLabel pairs(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] == kIgnore) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (label[j] == kIgnore) continue;
      pairs[i * n + j] = label[i] == label[j] ? 1 : -1;
    }
  }
  return pairs;
}

std::vector<std::uint8_t> token_label(const Cam& cam, double beta_fg) {
  const int n = cam.h * cam.w;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    double best = 0.0;
    for (int cls = 0; cls < cam.c; ++cls)
      best = std::max(best, cam.f[static_cast<std::size_t>(cls) * n + i]);
    out[i] = best >= beta_fg ? 1 : 0;
  }
  return out;
}

bool positiveness(const std::vector<std::uint8_t>& tok_label, const KeyMask& mask, double mu) {
  if (tok_label.size() != mask.keep.size())
    throw std::invalid_argument("positiveness: label and mask sizes differ");
  if (!(mu > 0.0 && mu < 1.0)) throw std::invalid_argument("positiveness: mu must be in (0,1)");
  long fg_kept = 0, kept = 0;
  for (std::size_t i = 0; i < mask.keep.size(); ++i) {
    if (mask.keep[i]) {
      ++kept;
      fg_kept += tok_label[i] ? 1 : 0;
    }
  }
  if (kept == 0) throw std::domain_error("positiveness: no kept tokens");
  return static_cast<double>(fg_kept) > mu * static_cast<double>(kept);
}

Cam upsample_cam_bilinear(const Cam& cam, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample_cam_bilinear: factor must be >= 1");
  const int n = cam.h * cam.w;
  Tensor grid = Tensor::zeros({n, cam.c});
  for (int cls = 0; cls < cam.c; ++cls)
    for (int i = 0; i < n; ++i)
      grid.at(i, cls) = cam.f[static_cast<std::size_t>(cls) * n + i];

  Cam up;
  up.c = cam.c;
  up.h = cam.h * factor;
  up.w = cam.w * factor;
  up.source_layer = cam.source_layer;
  const int m = up.h * up.w;
  up.f.assign(static_cast<std::size_t>(cam.c) * m, 0.0);

  NoGrad ng;
  Tensor big = bilinear_upsample_grid(grid, cam.h, cam.w, up.h, up.w);
  for (int cls = 0; cls < cam.c; ++cls) {
    double lo = big.at(0, cls), hi = big.at(0, cls);
    for (int i = 1; i < m; ++i) {
      lo = std::min(lo, big.at(i, cls));
      hi = std::max(hi, big.at(i, cls));
    }
    if (hi == lo) continue;
    const double inv = 1.0 / (hi - lo);
    for (int i = 0; i < m; ++i)
      up.f[static_cast<std::size_t>(cls) * m + i] = (big.at(i, cls) - lo) * inv;
  }
  return up;
}

ReliableLabel upsample_label_nearest(const ReliableLabel& label, int h, int w, int factor) {
  ReliableLabel out(static_cast<std::size_t>(h) * factor * w * factor);
  for (int y = 0; y < h * factor; ++y)
    for (int x = 0; x < w * factor; ++x)
      out[static_cast<std::size_t>(y) * w * factor + x] =
          label[static_cast<std::size_t>(y / factor) * w + x / factor];
  return out;
}

}  // namespace mcc
