#pragma once

#include <cstdint>
#include <vector>

#include "mcc/rng.hpp"

namespace mcc {

// One synthetic image: 1-3 non-overlapping colored shapes on a textured
// background. gt_mask is held out from training and used only for evaluation.
struct SyntheticSample {
  std::vector<double> image;        // H×W×3 row-major, values in [0,1]
  std::vector<std::uint8_t> labels; // image-level bits, one per class
  std::vector<int> gt_mask;         // H×W, 0 = background, 1..C = class ids
};

// Shape vocabulary: class id → {circle,square,triangle} × {solid,striped},
// each with a distinct hue. C may be at most 6.
SyntheticSample generate_sample(int c, int image_size, std::uint64_t seed);

// Nominal hue of a class (1-based, before per-sample jitter), as RGB in [0,1].
void class_hue(int cls, double rgb[3]);

// Deterministic under (seed, split_id); per-sample seeds are derived so any
// sample can be regenerated independently.
std::vector<SyntheticSample> generate_dataset(int n, int c, int image_size, std::uint64_t seed,
                                              int split_id);

}  // namespace mcc
