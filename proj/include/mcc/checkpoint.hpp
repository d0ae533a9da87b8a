#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mcc {

struct NamedArray {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

// On-disk snapshot of a training run. Arrays carry model parameters and
// optimizer state under stable names; values round-trip bit-exactly.
struct Checkpoint {
  std::string config_text;       // canonical serialization of the run config
  std::uint64_t config_digest = 0;
  std::uint64_t step = 0;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mcc
