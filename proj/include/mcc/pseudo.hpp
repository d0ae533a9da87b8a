#pragma once

#include <cstdint>
#include <vector>

#include "mcc/masking.hpp"
#include "mcc/tensor.hpp"

namespace mcc {

// Per-class activation maps, channel-major [C][H'*W'], min-max normalized to
// [0,1] per present channel; absent and degenerate channels are all zeros.
struct Cam {
  std::vector<double> f;
  int c = 0;
  int h = 0;
  int w = 0;
  int source_layer = 0;

  double at(int cls, int y, int x) const {
    return f[(static_cast<std::size_t>(cls) * h + y) * w + x];
  }
};

// Three-way pseudo segmentation map: 0 = background, 1..C = class ids,
// 255 = uncertain.
using ReliableLabel = std::vector<int>;
constexpr int kIgnore = 255;

// Ordered pairwise verdicts over grid cells: +1 positive, -1 negative,
// 0 ignore (a 255 endpoint).
using PairAffinityLabel = std::vector<std::int8_t>;

// patches is the token grid [N×D] (data only; no gradient flows through
// pseudo-label computation), w the classifier weights [D×C].
Cam compute_cam(const Tensor& patches, const Tensor& w,
                const std::vector<std::uint8_t>& present, int grid_h, int grid_w,
                int source_layer);

ReliableLabel partition(const Cam& cam, double beta_bg, double beta_fg);

PairAffinityLabel affinity_pairs(const ReliableLabel& label);

// Foreground bit per token: max over channels >= beta_fg.
std::vector<std::uint8_t> token_label(const Cam& cam, double beta_fg);

// Eq.-6 verdict for a masked view: sum(label & keep) > mu * sum(keep),
// strict, so a tie is negative.
bool positiveness(const std::vector<std::uint8_t>& tok_label, const KeyMask& mask, double mu);

// Nearest-neighbor upsample of a grid label map by an integer factor.
ReliableLabel upsample_label_nearest(const ReliableLabel& label, int h, int w, int factor);

// Bilinear upsample of every channel by an integer factor, followed by the
// same per-channel min-max renormalization as compute_cam; all-zero channels
// stay zero. Used to threshold CAMs at pixel resolution.
Cam upsample_cam_bilinear(const Cam& cam, int factor);

}  // namespace mcc
