#pragma once

#include <cstdint>
#include <vector>

namespace mcc {

struct MiouReport {
  std::vector<double> iou;                // per class, NaN when union is empty
  double mean = 0.0;                      // over classes with nonzero union
  std::vector<std::int64_t> confusion;    // (C+1)×(C+1), rows = gt, cols = pred
  std::vector<std::int64_t> ignored_pred; // per gt class: pixels predicted 255
};

// Accumulates confusion counts over (gt, pred) pixel streams. Predictions of
// 255 (possible in pseudo labels) are wrong by definition: they count toward
// the gt class's false negatives and no class's false positives.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int num_classes_with_bg);
  void add(const std::vector<int>& gt, const std::vector<int>& pred);
  MiouReport report() const;

 private:
  int k_;
  std::vector<std::int64_t> confusion_;
  std::vector<std::int64_t> ignored_pred_;
};

}  // namespace mcc
