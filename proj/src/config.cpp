#include "mcc/config.hpp"

#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mcc {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  enum Kind { kInt, kDouble, kU64, kBool, kString } kind;
  void* ptr;
};

// Binds every config key to its member; one table drives parse and serialize
// so the two cannot drift apart.
std::map<std::string, Field> field_table(TrainConfig& c) {
  return {
      {"image_size", {Field::kInt, &c.enc.image_size}},
      {"patch_size", {Field::kInt, &c.enc.patch_size}},
      {"depth", {Field::kInt, &c.enc.depth}},
      {"heads", {Field::kInt, &c.enc.heads}},
      {"dim", {Field::kInt, &c.enc.dim}},
      {"aux_layer", {Field::kInt, &c.enc.aux_layer}},
      {"num_classes", {Field::kInt, &c.enc.num_classes}},
      {"proj_dim", {Field::kInt, &c.proj_dim}},
      {"decoder_hidden", {Field::kInt, &c.decoder_hidden}},
      {"mask_ratio", {Field::kDouble, &c.mask_ratio}},
      {"mask_scale", {Field::kInt, &c.mask_scale}},
      {"mu", {Field::kDouble, &c.mu}},
      {"views", {Field::kInt, &c.views}},
      {"beta_bg", {Field::kDouble, &c.beta_bg}},
      {"beta_fg", {Field::kDouble, &c.beta_fg}},
      {"tau", {Field::kDouble, &c.tau}},
      {"contrast_eps", {Field::kDouble, &c.contrast_eps}},
      {"momentum", {Field::kDouble, &c.momentum}},
      {"lambda_aff", {Field::kDouble, &c.weights.aff}},
      {"lambda_mcc", {Field::kDouble, &c.weights.mcc}},
      {"lambda_seg", {Field::kDouble, &c.weights.seg}},
      {"lambda_reg", {Field::kDouble, &c.weights.reg}},
      {"batch_size", {Field::kInt, &c.batch_size}},
      {"total_iters", {Field::kInt, &c.total_iters}},
      {"warmup_iters", {Field::kInt, &c.warmup_iters}},
      {"lr_init", {Field::kDouble, &c.lr_init}},
      {"lr_peak", {Field::kDouble, &c.lr_peak}},
      {"poly_power", {Field::kDouble, &c.poly_power}},
      {"weight_decay", {Field::kDouble, &c.weight_decay}},
      {"adam_beta1", {Field::kDouble, &c.adam_beta1}},
      {"adam_beta2", {Field::kDouble, &c.adam_beta2}},
      {"adam_eps", {Field::kDouble, &c.adam_eps}},
      {"seed", {Field::kU64, &c.seed}},
      {"crop_size", {Field::kInt, &c.crop_size}},
      {"train_n", {Field::kInt, &c.train_n}},
      {"val_n", {Field::kInt, &c.val_n}},
      {"cross_image_negatives", {Field::kBool, &c.cross_image_negatives}},
      {"seg_label_source", {Field::kString, &c.seg_label_source}},
      {"save_every", {Field::kInt, &c.save_every}},
  };
}

}  // namespace

void TrainConfig::validate() const {
  enc.validate();
  if (crop_size != enc.image_size)
    throw std::invalid_argument("config: crop_size must equal image_size in this artifact");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
    throw std::invalid_argument("config: mask_ratio must be in [0,1)");
  if (mask_scale < 1 || mask_scale > enc.grid())
    throw std::invalid_argument("config: mask_scale out of range for the token grid");
  if (!(mu > 0.0 && mu < 1.0)) throw std::invalid_argument("config: mu must be in (0,1)");
  if (views < 1) throw std::invalid_argument("config: views must be >= 1");
  if (!(beta_bg > 0.0 && beta_bg < beta_fg && beta_fg < 1.0))
    throw std::invalid_argument("config: need 0 < beta_bg < beta_fg < 1");
  if (!(tau > 0.0)) throw std::invalid_argument("config: tau must be positive");
  if (contrast_eps < 0.0) throw std::invalid_argument("config: contrast_eps must be nonnegative");
  if (!(momentum >= 0.0 && momentum <= 1.0))
    throw std::invalid_argument("config: momentum must be in [0,1]");
  if (weights.aff < 0 || weights.mcc < 0 || weights.seg < 0 || weights.reg < 0)
    throw std::invalid_argument("config: loss weights must be nonnegative");
  if (batch_size < 1 || total_iters < 1 || warmup_iters < 0 || warmup_iters > total_iters)
    throw std::invalid_argument("config: bad schedule lengths");
  if (!(lr_init >= 0.0 && lr_peak > 0.0 && poly_power > 0.0))
    throw std::invalid_argument("config: bad learning-rate settings");
  if (proj_dim < 1 || decoder_hidden < 1)
    throw std::invalid_argument("config: projector and decoder widths must be positive");
  if (train_n < 1 || val_n < 1) throw std::invalid_argument("config: dataset sizes must be >= 1");
  if (seg_label_source != "final" && seg_label_source != "aux")
    throw std::invalid_argument("config: seg_label_source must be 'final' or 'aux'");
  if (save_every < 0) throw std::invalid_argument("config: save_every must be >= 0");
}

std::string TrainConfig::serialize() const {
  TrainConfig self = *this;
  std::ostringstream out;
  for (const auto& [key, f] : field_table(self)) {
    out << key << "=";
    switch (f.kind) {
      case Field::kInt: out << *static_cast<int*>(f.ptr); break;
      case Field::kDouble: out << fmt_double(*static_cast<double*>(f.ptr)); break;
      case Field::kU64: out << *static_cast<std::uint64_t*>(f.ptr); break;
      case Field::kBool: out << (*static_cast<bool*>(f.ptr) ? 1 : 0); break;
      case Field::kString: out << *static_cast<std::string*>(f.ptr); break;
    }
    out << "\n";
  }
  return out.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  auto table = field_table(cfg);
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string trimmed;
    for (char ch : line) {
      if (ch == '#') break;
      trimmed.push_back(ch);
    }
    while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.back())))
      trimmed.pop_back();
    std::size_t start = 0;
    while (start < trimmed.size() && std::isspace(static_cast<unsigned char>(trimmed[start])))
      ++start;
    trimmed = trimmed.substr(start);
    if (trimmed.empty()) continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = trimmed.substr(0, eq);
    std::string value = trimmed.substr(eq + 1);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.pop_back();
    std::size_t vs = 0;
    while (vs < value.size() && std::isspace(static_cast<unsigned char>(value[vs]))) ++vs;
    value = value.substr(vs);
    auto it = table.find(key);
    if (it == table.end())
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    try {
      switch (it->second.kind) {
        case Field::kInt: *static_cast<int*>(it->second.ptr) = std::stoi(value); break;
        case Field::kDouble: *static_cast<double*>(it->second.ptr) = std::stod(value); break;
        case Field::kU64: *static_cast<std::uint64_t*>(it->second.ptr) = std::stoull(value); break;
        case Field::kBool: {
          if (value == "1" || value == "true")
            *static_cast<bool*>(it->second.ptr) = true;
          else if (value == "0" || value == "false")
            *static_cast<bool*>(it->second.ptr) = false;
          else
            throw std::invalid_argument("not a boolean");
          break;
        }
        case Field::kString: *static_cast<std::string*>(it->second.ptr) = value; break;
      }
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": bad value for '" +
                                  key + "'");
    }
  }
  return cfg;
}

TrainConfig TrainConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t config_digest(const TrainConfig& cfg) {
  const std::string text = cfg.serialize();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mcc
