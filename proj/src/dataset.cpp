#include "mcc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mcc {

namespace {

struct Shape {
  int cls;  // 1-based
  double cx, cy, r;
};

constexpr double kHues[6][3] = {
    {0.85, 0.12, 0.12},  // red
    {0.10, 0.75, 0.15},  // green
    {0.12, 0.25, 0.85},  // blue
    {0.85, 0.80, 0.10},  // yellow
    {0.80, 0.10, 0.80},  // magenta
    {0.10, 0.78, 0.80},  // cyan
};

bool inside(const Shape& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  const int kind = (s.cls - 1) % 3;
  switch (kind) {
    case 0:  // circle
      return dx * dx + dy * dy <= s.r * s.r;
    case 1:  // square
      return std::fabs(dx) <= 0.85 * s.r && std::fabs(dy) <= 0.85 * s.r;
    default: {  // upward triangle inscribed in the radius
      const double x0 = s.cx, y0 = s.cy - s.r;
      const double x1 = s.cx - 0.9 * s.r, y1 = s.cy + 0.75 * s.r;
      const double x2 = s.cx + 0.9 * s.r, y2 = s.cy + 0.75 * s.r;
      auto edge = [x, y](double ax, double ay, double bx, double by) {
        return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
      };
      const double e0 = edge(x0, y0, x1, y1);
      const double e1 = edge(x1, y1, x2, y2);
      const double e2 = edge(x2, y2, x0, y0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
}

}  // namespace

void class_hue(int cls, double rgb[3]) {
  if (cls < 1 || cls > 6) throw std::invalid_argument("class_hue: class id out of range");
  for (int ch = 0; ch < 3; ++ch) rgb[ch] = kHues[cls - 1][ch];
}

SyntheticSample generate_sample(int c, int image_size, std::uint64_t seed) {
  if (c < 1 || c > 6) throw std::invalid_argument("generate_sample: C must be in [1,6]");
  if (image_size < 32) throw std::invalid_argument("generate_sample: image too small");
  Rng rng(seed);
  const int s = image_size;

  SyntheticSample out;
  out.image.assign(static_cast<std::size_t>(s) * s * 3, 0.0);
  out.labels.assign(static_cast<std::size_t>(c), 0);
  out.gt_mask.assign(static_cast<std::size_t>(s) * s, 0);

  // textured background: per-image tinted gray plus per-pixel noise
  double base[3];
  const double gray = rng.uniform(0.20, 0.40);
  for (double& b : base) b = gray + rng.uniform(-0.03, 0.03);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.image[(static_cast<std::size_t>(y) * s + x) * 3 + ch] =
            std::clamp(base[ch] + rng.uniform(-0.05, 0.05), 0.0, 1.0);

  const int want = 1 + static_cast<int>(rng.index(3));
  std::vector<int> classes(static_cast<std::size_t>(c));
  std::iota(classes.begin(), classes.end(), 1);
  rng.shuffle(classes);

  std::vector<Shape> placed;
  for (int k = 0; k < want && k < c; ++k) {
    Shape sh;
    sh.cls = classes[static_cast<std::size_t>(k)];
    bool ok = false;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      sh.r = rng.uniform(0.25 * s, 0.36 * s);
      sh.cx = rng.uniform(sh.r + 2.0, s - sh.r - 2.0);
      sh.cy = rng.uniform(sh.r + 2.0, s - sh.r - 2.0);
      ok = true;
      for (const Shape& other : placed) {
        const double dx = sh.cx - other.cx, dy = sh.cy - other.cy;
        const double min_dist = sh.r + other.r + 3.0;
        if (dx * dx + dy * dy <= min_dist * min_dist) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    placed.push_back(sh);
    out.labels[static_cast<std::size_t>(sh.cls - 1)] = 1;

    double color[3];
    for (int ch = 0; ch < 3; ++ch)
      color[ch] = std::clamp(kHues[sh.cls - 1][ch] + rng.uniform(-0.04, 0.04), 0.0, 1.0);
    const bool striped = sh.cls > 3;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        if (!inside(sh, x + 0.5, y + 0.5)) continue;
        out.gt_mask[static_cast<std::size_t>(y) * s + x] = sh.cls;
        const double dim = striped && ((x + y) / 3) % 2 == 1 ? 0.55 : 1.0;
        for (int ch = 0; ch < 3; ++ch)
          out.image[(static_cast<std::size_t>(y) * s + x) * 3 + ch] =
              std::clamp(color[ch] * dim + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      }
  }
  return out;
}

std::vector<SyntheticSample> generate_dataset(int n, int c, int image_size, std::uint64_t seed,
                                              int split_id) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::uint64_t sample_seed =
        mix64(mix64(seed) ^ mix64((static_cast<std::uint64_t>(split_id) << 32) | static_cast<std::uint64_t>(i)));
    out.push_back(generate_sample(c, image_size, sample_seed));
  }
  return out;
}

}  // namespace mcc
