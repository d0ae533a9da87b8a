#include "mcc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mcc {

namespace {

constexpr char kMagic[8] = {'M', 'C', 'C', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& f, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  f.write(buf, 8);
}

std::uint64_t get_u64(std::istream& f) {
  unsigned char buf[8];
  f.read(reinterpret_cast<char*>(buf), 8);
  if (!f) throw std::runtime_error("load_checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_bytes(std::ostream& f, const std::string& s) {
  put_u64(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_bytes(std::istream& f) {
  const std::uint64_t n = get_u64(f);
  std::string s(n, '\0');
  f.read(s.data(), static_cast<std::streamsize>(n));
  if (!f) throw std::runtime_error("load_checkpoint: truncated string");
  return s;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const NamedArray& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  put_u64(f, 1);  // format version
  put_u64(f, ckpt.config_digest);
  put_bytes(f, ckpt.config_text);
  put_u64(f, ckpt.step);
  put_u64(f, ckpt.arrays.size());
  for (const NamedArray& a : ckpt.arrays) {
    put_bytes(f, a.name);
    put_u64(f, a.dims.size());
    std::size_t numel = 1;
    for (std::size_t d : a.dims) {
      put_u64(f, d);
      numel *= d;
    }
    if (a.values.size() != numel)
      throw std::invalid_argument("save_checkpoint: dims/value mismatch for " + a.name);
    for (double v : a.values) put_u64(f, std::bit_cast<std::uint64_t>(v));
  }
  if (!f) throw std::runtime_error("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
  const std::uint64_t version = get_u64(f);
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported format version");
  Checkpoint ckpt;
  ckpt.config_digest = get_u64(f);
  ckpt.config_text = get_bytes(f);
  ckpt.step = get_u64(f);
  const std::uint64_t count = get_u64(f);
  ckpt.arrays.resize(count);
  for (NamedArray& a : ckpt.arrays) {
    a.name = get_bytes(f);
    const std::uint64_t ndim = get_u64(f);
    a.dims.resize(ndim);
    std::size_t numel = 1;
    for (std::size_t& d : a.dims) {
      d = static_cast<std::size_t>(get_u64(f));
      numel *= d;
    }
    a.values.resize(numel);
    for (double& v : a.values) v = std::bit_cast<double>(get_u64(f));
  }
  return ckpt;
}

}  // namespace mcc
