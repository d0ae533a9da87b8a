#include "mcc/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mcc {

ConfusionAccumulator::ConfusionAccumulator(int num_classes_with_bg)
    : k_(num_classes_with_bg),
      confusion_(static_cast<std::size_t>(num_classes_with_bg) * num_classes_with_bg, 0),
      ignored_pred_(num_classes_with_bg, 0) {
  if (num_classes_with_bg < 1) throw std::invalid_argument("ConfusionAccumulator: need at least one class");
}

void ConfusionAccumulator::add(const std::vector<int>& gt, const std::vector<int>& pred) {
  if (gt.size() != pred.size()) throw std::invalid_argument("ConfusionAccumulator::add: size mismatch");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    int g = gt[i];
    int p = pred[i];
    if (g < 0 || g >= k_) throw std::invalid_argument("ConfusionAccumulator::add: gt label out of range");
    if (p == 255) {
      ignored_pred_[g] += 1;
      continue;
    }
    if (p < 0 || p >= k_) throw std::invalid_argument("ConfusionAccumulator::add: pred label out of range");
    confusion_[static_cast<std::size_t>(g) * k_ + p] += 1;
  }
}

MiouReport ConfusionAccumulator::report() const {
  MiouReport r;
  r.confusion = confusion_;
  r.ignored_pred = ignored_pred_;
  r.iou.assign(k_, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < k_; ++c) {
    std::int64_t tp = confusion_[static_cast<std::size_t>(c) * k_ + c];
    std::int64_t fn = ignored_pred_[c];
    std::int64_t fp = 0;
    for (int o = 0; o < k_; ++o) {
      if (o == c) continue;
      fn += confusion_[static_cast<std::size_t>(c) * k_ + o];
      fp += confusion_[static_cast<std::size_t>(o) * k_ + c];
    }
    std::int64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    r.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += r.iou[c];
    counted += 1;
  }
  r.mean = counted > 0 ? sum / counted : 0.0;
  return r;
}

}  // namespace mcc
