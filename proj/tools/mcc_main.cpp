#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mcc/checkpoint.hpp"
#include "mcc/config.hpp"
#include "mcc/dataset.hpp"
#include "mcc/imageio.hpp"
#include "mcc/masking.hpp"
#include "mcc/train.hpp"

namespace {

void print_report(const char* title, const mcc::MiouReport& r) {
  std::printf("%s: mIoU %.4f\n", title, r.mean);
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    if (std::isnan(r.iou[c])) continue;
    std::printf("  class %zu IoU %.4f\n", c, r.iou[c]);
  }
}

std::vector<double> to_unit_image(const mcc::RgbImage& img) {
  std::vector<double> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.pixels[i] / 255.0;
  return out;
}

int cmd_train(const std::string& config_path, std::uint64_t seed_override, bool has_seed,
              const std::string& out_dir) {
  mcc::TrainConfig cfg =
      config_path.empty() ? mcc::TrainConfig{} : mcc::TrainConfig::load_file(config_path);
  if (has_seed) cfg.seed = seed_override;
  cfg.validate();

  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/config.txt") << cfg.serialize();
    log.open(out_dir + "/log.jsonl");
    if (!log) throw std::runtime_error("train: cannot open log file in " + out_dir);
  }

  std::printf("generating %d train / %d val samples (C=%d, %dx%d)\n", cfg.train_n, cfg.val_n,
              cfg.enc.num_classes, cfg.crop_size, cfg.crop_size);
  auto train = mcc::generate_dataset(cfg.train_n, cfg.enc.num_classes, cfg.crop_size, cfg.seed, 0);
  auto val = mcc::generate_dataset(cfg.val_n, cfg.enc.num_classes, cfg.crop_size, cfg.seed, 1);

  mcc::TrainResult res = mcc::train_run(cfg, train, log.is_open() ? &log : nullptr, out_dir);
  const mcc::StepBreakdown& last = res.history.back();
  std::printf("final step: %s\n", mcc::breakdown_json(res.state.step - 1, last).c_str());

  mcc::EvalReport ev = mcc::evaluate(res.state.model, val);
  print_report("pseudo labels (val)", ev.pseudo);
  print_report("segmentation (val)", ev.seg);
  if (!out_dir.empty()) {
    std::ofstream metrics(out_dir + "/metrics.txt");
    metrics << "pseudo_miou=" << ev.pseudo.mean << "\nseg_miou=" << ev.seg.mean << "\n";
    std::printf("artifacts written to %s\n", out_dir.c_str());
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split) {
  mcc::TrainState st = mcc::from_checkpoint(mcc::load_checkpoint(ckpt_path));
  const mcc::TrainConfig& cfg = st.model.cfg;
  const int n = split == "train" ? cfg.train_n : cfg.val_n;
  const int split_id = split == "train" ? 0 : 1;
  auto data = mcc::generate_dataset(n, cfg.enc.num_classes, cfg.crop_size, cfg.seed, split_id);
  mcc::EvalReport ev = mcc::evaluate(st.model, data);
  std::printf("checkpoint %s @ step %lld, split %s (%d samples)\n", ckpt_path.c_str(),
              static_cast<long long>(st.step), split.c_str(), n);
  print_report("pseudo labels", ev.pseudo);
  print_report("segmentation", ev.seg);
  return 0;
}

int cmd_cam(const std::string& ckpt_path, const std::string& image_path,
            const std::string& out_prefix) {
  mcc::TrainState st = mcc::from_checkpoint(mcc::load_checkpoint(ckpt_path));
  const mcc::Model& m = st.model;
  const mcc::EncoderConfig& e = m.cfg.enc;

  mcc::RgbImage img = mcc::read_ppm(image_path);
  if (img.width != e.image_size || img.height != e.image_size)
    throw std::runtime_error("cam: image must be " + std::to_string(e.image_size) + "x" +
                             std::to_string(e.image_size));

  mcc::NoGrad ng;
  mcc::Tensor patches = mcc::patchify(to_unit_image(img), e.image_size, e.image_size, e.patch_size);
  mcc::ForwardResult fwd = mcc::encoder_forward(m.enc, e, patches, nullptr);

  // image labels are unknown at inference: take classes the classifier fires
  // on, falling back to its single best guess
  std::vector<std::uint8_t> present(static_cast<std::size_t>(e.num_classes), 0);
  int best = 0;
  for (int c = 0; c < e.num_classes; ++c) {
    if (fwd.cls_logits.at(0, c) > 0.0) present[static_cast<std::size_t>(c)] = 1;  // sigmoid > 0.5
    if (fwd.cls_logits.at(0, c) > fwd.cls_logits.at(0, best)) best = c;
  }
  bool any = false;
  for (std::uint8_t b : present) any = any || b;
  if (!any) present[static_cast<std::size_t>(best)] = 1;
  std::printf("predicted classes:");
  for (int c = 0; c < e.num_classes; ++c)
    if (present[static_cast<std::size_t>(c)]) std::printf(" %d", c + 1);
  std::printf("\n");

  mcc::Tensor fin_p = mcc::slice_rows(fwd.final_tokens, 1, e.tokens() + 1);
  mcc::Cam cam = mcc::compute_cam(fin_p, m.enc.head_w, present, e.grid(), e.grid(), e.depth);
  mcc::Cam up = mcc::upsample_cam_bilinear(cam, e.patch_size);

  const int hw = up.h * up.w;
  for (int c = 0; c < e.num_classes; ++c) {
    if (!present[static_cast<std::size_t>(c)]) continue;
    std::vector<std::uint8_t> gray(static_cast<std::size_t>(hw));
    for (int i = 0; i < hw; ++i)
      gray[static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>(up.f[static_cast<std::size_t>(c) * hw + i] * 255.0 + 0.5);
    const std::string path = out_prefix + "_cam_c" + std::to_string(c + 1) + ".png";
    mcc::write_png_gray(path, up.w, up.h, gray);
    std::printf("wrote %s\n", path.c_str());
  }

  mcc::ReliableLabel label = mcc::partition(up, m.cfg.beta_bg, m.cfg.beta_fg);
  std::vector<std::uint8_t> idx(label.size());
  for (std::size_t i = 0; i < label.size(); ++i) idx[i] = static_cast<std::uint8_t>(label[i]);
  const std::string lab_path = out_prefix + "_pseudo.png";
  mcc::write_png_indexed(lab_path, up.w, up.h, idx, mcc::label_palette(e.num_classes));
  std::printf("wrote %s\n", lab_path.c_str());
  return 0;
}

int cmd_mask_stats(const std::vector<double>& ratios, const std::vector<int>& scales, int grid,
                   int trials, std::uint64_t seed) {
  std::printf("ratio,scale,mean_drop,min_kept,forced_keep_rate\n");
  for (double p : ratios)
    for (int s : scales) {
      mcc::Rng rng = mcc::derive_stream(seed, static_cast<std::uint64_t>(s) * 1000003 +
                                                  static_cast<std::uint64_t>(p * 1e6));
      mcc::MaskStats st = mcc::mask_stats(p, s, grid, grid, trials, rng);
      std::printf("%g,%d,%.6f,%d,%.6f\n", p, s, st.mean_drop_fraction, st.min_kept,
                  st.forced_keep_rate);
    }
  return 0;
}

int cmd_sweep(const std::vector<double>& ratios, const std::vector<int>& scales,
              const std::string& config_path, int iters, const std::string& out_path) {
  mcc::TrainConfig cfg =
      config_path.empty() ? mcc::TrainConfig{} : mcc::TrainConfig::load_file(config_path);
  if (iters > 0) {
    cfg.total_iters = iters;
    cfg.warmup_iters = std::min(cfg.warmup_iters, iters / 10);
  }
  cfg.validate();
  std::string csv = mcc::mask_sweep(ratios, scales, cfg, &std::cerr);
  if (out_path.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream f(out_path);
    f << csv;
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked collaborative contrast on a synthetic weakly supervised corpus"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, split = "val", image_path, out_prefix = "cam_out";
  std::string sweep_out;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::vector<double> ratios{0.95};
  std::vector<int> scales{4};
  int grid = 8, trials = 10000, iters = 300;

  CLI::App* train = app.add_subcommand("train", "train a model on the synthetic corpus");
  train->add_option("--config", config_path, "key=value config file (defaults when omitted)");
  train->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    has_seed = true;
  });
  train->add_option("--out", out_dir, "directory for log.jsonl, config.txt and checkpoints");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--split", split, "train or val")
      ->check(CLI::IsMember({"train", "val"}));

  CLI::App* cam = app.add_subcommand("cam", "write CAM and pseudo-label maps for one image");
  cam->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  cam->add_option("--image", image_path, "input image (binary PPM, P6)")->required();
  cam->add_option("--out", out_prefix, "output file prefix");

  CLI::App* mask_stats = app.add_subcommand("mask-stats", "Monte-Carlo key-mask statistics");
  mask_stats->add_option("--ratio", ratios, "masking ratios");
  mask_stats->add_option("--scale", scales, "masking scales");
  mask_stats->add_option("--grid", grid, "token grid side");
  mask_stats->add_option("--trials", trials, "samples per cell");
  mask_stats->add_option("--seed", seed, "rng seed");

  CLI::App* sweep = app.add_subcommand("sweep", "short training run per (ratio, scale) cell");
  sweep->add_option("--ratios", ratios, "masking ratios");
  sweep->add_option("--scales", scales, "masking scales");
  sweep->add_option("--config", config_path, "base config file");
  sweep->add_option("--iters", iters, "training iterations per cell (0 = config value)");
  sweep->add_option("--out", sweep_out, "CSV output path (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, seed, has_seed, out_dir);
    if (eval->parsed()) return cmd_eval(ckpt_path, split);
    if (cam->parsed()) return cmd_cam(ckpt_path, image_path, out_prefix);
    if (mask_stats->parsed()) return cmd_mask_stats(ratios, scales, grid, trials, seed);
    if (sweep->parsed()) return cmd_sweep(ratios, scales, config_path, iters, sweep_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
