#pragma once

#include <cstdint>
#include <vector>

#include "mcc/rng.hpp"

namespace mcc {

// Keep/drop vector over the H'×W' token grid. keep=1 means the key is
// attended; the positiveness rule reads drop = 1 - keep at its call site.
struct KeyMask {
  std::vector<std::uint8_t> keep;  // row-major H'×W'
  int h = 0;
  int w = 0;
  double ratio = 0.0;
  int scale = 1;
  bool forced_keep = false;  // all blocks were dropped and one was revived

  int num_kept() const {
    int n = 0;
    for (std::uint8_t k : keep) n += k;
    return n;
  }
};

struct MaskStats {
  double mean_drop_fraction = 0.0;
  int min_kept = 0;
  bool block_alignment_ok = true;
  double forced_keep_rate = 0.0;
};

// Tiles the grid into ceil(h/s)·ceil(w/s) blocks (boundary blocks clipped),
// drops each independently with probability p; if every block is dropped one
// uniformly chosen block is forced kept.
KeyMask sample_key_mask(int h, int w, double p, int s, Rng& rng);

// Column expansion: M(x, y) = keep(y) for every row x, flattened row-major.
std::vector<std::uint8_t> expand(const KeyMask& mask);

MaskStats mask_stats(double p, int s, int h, int w, int trials, Rng& rng);

// True iff every dropped cell lies inside a fully dropped aligned block.
bool blocks_aligned(const KeyMask& mask);

}  // namespace mcc
