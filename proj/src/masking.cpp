#include "mcc/masking.hpp"

#include <algorithm>
#include <stdexcept>

namespace mcc {

KeyMask sample_key_mask(int h, int w, double p, int s, Rng& rng) {
  if (h < 1 || w < 1) throw std::invalid_argument("sample_key_mask: empty grid");
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("sample_key_mask: ratio must be in [0,1)");
  if (s < 1 || s > std::min(h, w)) throw std::invalid_argument("sample_key_mask: scale out of range");
  const int by = (h + s - 1) / s;
  const int bx = (w + s - 1) / s;
  const int nb = by * bx;
  std::vector<std::uint8_t> block_drop(static_cast<std::size_t>(nb));
  int dropped = 0;
  for (int b = 0; b < nb; ++b) {
    block_drop[b] = rng.uniform() < p ? 1 : 0;
    dropped += block_drop[b];
  }
  KeyMask m;
  m.h = h;
  m.w = w;
  m.ratio = p;
  m.scale = s;
  if (dropped == nb) {
    block_drop[rng.index(static_cast<std::size_t>(nb))] = 0;
    m.forced_keep = true;
  }
  m.keep.assign(static_cast<std::size_t>(h) * w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int b = (y / s) * bx + (x / s);
      if (block_drop[b]) m.keep[static_cast<std::size_t>(y) * w + x] = 0;
    }
  return m;
}

std::vector<std::uint8_t> expand(const KeyMask& mask) {
  const std::size_t n = mask.keep.size();
  std::vector<std::uint8_t> aff(n * n);
  for (std::size_t x = 0; x < n; ++x)
    std::copy(mask.keep.begin(), mask.keep.end(), aff.begin() + x * n);
  return aff;
}

bool blocks_aligned(const KeyMask& mask) {
  const int s = mask.scale;
  const int bx = (mask.w + s - 1) / s;
  const int by = (mask.h + s - 1) / s;
  for (int b_y = 0; b_y < by; ++b_y)
    for (int b_x = 0; b_x < bx; ++b_x) {
      int seen = -1;
      for (int y = b_y * s; y < std::min((b_y + 1) * s, mask.h); ++y)
        for (int x = b_x * s; x < std::min((b_x + 1) * s, mask.w); ++x) {
          const int v = mask.keep[static_cast<std::size_t>(y) * mask.w + x];
          if (seen < 0) seen = v;
          if (v != seen) return false;
        }
    }
  return true;
}

MaskStats mask_stats(double p, int s, int h, int w, int trials, Rng& rng) {
  if (trials < 1) throw std::invalid_argument("mask_stats: trials must be >= 1");
  MaskStats st;
  st.min_kept = h * w;
  double drop_sum = 0.0;
  int forced = 0;
  for (int t = 0; t < trials; ++t) {
    KeyMask m = sample_key_mask(h, w, p, s, rng);
    const int kept = m.num_kept();
    drop_sum += 1.0 - static_cast<double>(kept) / (h * w);
    st.min_kept = std::min(st.min_kept, kept);
    forced += m.forced_keep ? 1 : 0;
    st.block_alignment_ok = st.block_alignment_ok && blocks_aligned(m);
  }
  st.mean_drop_fraction = drop_sum / trials;
  st.forced_keep_rate = static_cast<double>(forced) / trials;
  return st;
}

}  // namespace mcc
