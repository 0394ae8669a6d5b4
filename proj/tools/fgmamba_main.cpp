// fgmamba command-line front end: train / infer / eval / gradcheck / params.
//
// Exit codes (frozen): 0 success, 2 bad flags or config, 3 unreadable data,
// 4 NaN divergence during training, 5 checkpoint/config mismatch, 6 eval
// pairing or size mismatch, 7 failed gradient check.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include "fgmamba/checkpoint.hpp"
#include "fgmamba/gradcheck.hpp"
#include "fgmamba/image_io.hpp"
#include "fgmamba/training.hpp"

namespace fs = std::filesystem;
using namespace fgmamba;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFlags = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitCheckpoint = 5;
constexpr int kExitEvalPairs = 6;
constexpr int kExitGradcheck = 7;

struct ConfigFlags {
  std::string preset;
  int64_t channels = -1, blocks = -1, gasm = -1, scale = -1, state_dim = -1, expansion = -1,
          in_channels = -1;
  bool no_gau = false, no_pffm = false;

  ModelConfig resolve() const {
    ModelConfig cfg = preset.empty() ? ModelConfig{} : ModelConfig::preset(preset);
    if (channels >= 0) cfg.channels = channels;
    if (blocks >= 0) cfg.n_fgblocks = blocks;
    if (gasm >= 0) cfg.n_gasm_per_block = gasm;
    if (scale >= 0) cfg.scale = scale;
    if (state_dim >= 0) cfg.state_dim = state_dim;
    if (expansion >= 0) cfg.expansion = expansion;
    if (in_channels >= 0) cfg.in_channels = in_channels;
    if (no_gau) cfg.use_gau = false;
    if (no_pffm) cfg.use_pffm = false;
    cfg.validate();
    return cfg;
  }
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--preset", f.preset, "Config preset: paper, desk, or tiny");
  cmd->add_option("--channels", f.channels, "Model width");
  cmd->add_option("--blocks", f.blocks, "Number of FGBlocks");
  cmd->add_option("--gasm", f.gasm, "GASMs per FGBlock");
  cmd->add_option("--scale", f.scale, "Upscaling factor (2, 3, or 4)");
  cmd->add_option("--state-dim", f.state_dim, "SSM state dimension");
  cmd->add_option("--expansion", f.expansion, "SSM expansion factor");
  cmd->add_option("--in-channels", f.in_channels, "Input channels (1 or 3)");
  cmd->add_flag("--no-gau", f.no_gau, "Ablation: drop the gated attention unit");
  cmd->add_flag("--no-pffm", f.no_pffm, "Ablation: drop the frequency fusion module");
}

std::vector<fs::path> list_images(const std::string& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".pgm" || ext == ".ppm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string now_string() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::localtime(&t));
  return buf;
}

int cmd_train(const ConfigFlags& cf, const std::string& hr_dir, const std::string& out_path,
              std::string log_path, const TrainOptions& opts_in, bool porcelain) {
  ModelConfig cfg;
  try {
    cfg = cf.resolve();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFlags;
  }

  std::vector<Tensor<float>> images;
  try {
    auto files = list_images(hr_dir);
    if (files.empty()) {
      std::cerr << "error: no PGM/PPM images in " << hr_dir << '\n';
      return kExitData;
    }
    for (const auto& f : files) images.push_back(load_image(f.string()));
    for (const auto& img : images)
      FGM_CHECK(img.size(0) == cfg.in_channels,
                "image channel count does not match --in-channels");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }

  if (!porcelain) std::cout << "# train started " << now_string() << '\n';
  FgMamba<float> model(cfg, opts_in.seed);
  if (log_path.empty()) log_path = out_path + ".log";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log.good()) {
    std::cerr << "error: cannot open metric log " << log_path << '\n';
    return kExitData;
  }

  TrainResult result;
  try {
    result = train_loop(model, images, cfg.scale, opts_in, &log);
    for (const auto& line : result.log_lines) std::cout << line << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  if (result.diverged) {
    std::cerr << "error: loss became non-finite at step " << result.steps_run
              << "; aborting without checkpoint\n";
    return kExitDiverged;
  }
  try {
    save_checkpoint(out_path, snapshot_model(model));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  if (!porcelain)
    std::cout << "# wrote " << out_path << " (params=" << model.param_count() << ")\n";
  return kExitOk;
}

int cmd_infer(const std::string& ck_path, const std::string& input_path,
              const std::string& output_path, int64_t scale_flag) {
  Checkpoint ck;
  try {
    ck = load_checkpoint(ck_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckpoint;
  }
  if (scale_flag > 0 && scale_flag != ck.config.scale) {
    std::cerr << "error: checkpoint was trained for scale " << ck.config.scale
              << ", request asked for " << scale_flag << '\n';
    return kExitCheckpoint;
  }
  Tensor<float> image;
  try {
    image = load_image(input_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  if (image.size(0) != ck.config.in_channels) {
    std::cerr << "error: checkpoint expects " << ck.config.in_channels
              << " channel(s), image has " << image.size(0) << '\n';
    return kExitCheckpoint;
  }
  try {
    FgMamba<float> model = model_from_checkpoint(ck);
    Tensor<float> batch =
        reshape(image, {1, image.size(0), image.size(1), image.size(2)});
    Tensor<float> sr = model.forward(batch);
    save_image(output_path,
               reshape(sr, {sr.size(1), sr.size(2), sr.size(3)}));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

int cmd_eval(const std::string& sr_dir, const std::string& gt_dir, bool porcelain) {
  std::vector<fs::path> sr_files, gt_files;
  try {
    sr_files = list_images(sr_dir);
    gt_files = list_images(gt_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  if (sr_files.empty() || sr_files.size() != gt_files.size()) {
    std::cerr << "error: pair-count mismatch (" << sr_files.size() << " vs " << gt_files.size()
              << ")\n";
    return kExitEvalPairs;
  }
  if (!porcelain) {
    std::cout << "# eval " << now_string() << '\n';
    std::cout << "image\tpsnr\tssim\n";
  }
  double psnr_sum = 0, ssim_sum = 0;
  bool psnr_inf = false;
  char buf[256];
  for (size_t i = 0; i < sr_files.size(); ++i) {
    Tensor<float> sr, gt;
    try {
      sr = load_image(sr_files[i].string());
      gt = load_image(gt_files[i].string());
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitData;
    }
    if (sr.shape() != gt.shape()) {
      std::cerr << "error: size mismatch for " << sr_files[i].filename().string() << '\n';
      return kExitEvalPairs;
    }
    double p, s;
    try {
      p = psnr(sr, gt, 1.0);
      s = ssim(sr, gt, 1.0);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitEvalPairs;
    }
    if (std::isinf(p))
      psnr_inf = true;
    else
      psnr_sum += p;
    ssim_sum += s;
    char p_str[64];
    if (std::isinf(p))
      std::snprintf(p_str, sizeof(p_str), "inf");
    else
      std::snprintf(p_str, sizeof(p_str), "%.4f", p);
    std::snprintf(buf, sizeof(buf), "%s\t%s\t%.4f", sr_files[i].filename().string().c_str(),
                  p_str, s);
    std::cout << buf << '\n';
  }
  double n = static_cast<double>(sr_files.size());
  double mean_psnr = psnr_inf ? std::numeric_limits<double>::infinity() : psnr_sum / n;
  if (std::isinf(mean_psnr))
    std::snprintf(buf, sizeof(buf), "mean\tinf\t%.4f", ssim_sum / n);
  else
    std::snprintf(buf, sizeof(buf), "mean\t%.4f\t%.4f", mean_psnr, ssim_sum / n);
  std::cout << buf << '\n';
  return kExitOk;
}

int cmd_gradcheck(bool list_only, uint64_t seed, int64_t hw, double fd_step, bool corrupt) {
  if (list_only) {
    for (const auto& line : gradcheck_matrix()) std::cout << line << '\n';
    return kExitOk;
  }
  debug::corrupt_sigmoid_backward = corrupt;
  GradCheckOptions opts;
  opts.seed = seed;
  opts.input_hw = hw;
  opts.fd_step = fd_step;
  GradCheckReport report = run_model_gradcheck(opts);
  debug::corrupt_sigmoid_backward = false;
  std::vector<std::string> offenders;
  char buf[256];
  for (const auto& g : report.groups) {
    std::snprintf(buf, sizeof(buf), "group=%s max_rel_err=%.3e elements=%lld worst=%s",
                  g.name.c_str(), g.max_rel_err, static_cast<long long>(g.elements),
                  g.worst_param.empty() ? "-" : g.worst_param.c_str());
    std::cout << buf << '\n';
    if (!(g.max_rel_err < report.threshold)) offenders.push_back(g.name);
  }
  if (!offenders.empty()) {
    std::cerr << "gradcheck FAILED for:";
    for (const auto& o : offenders) std::cerr << ' ' << o;
    std::cerr << '\n';
    return kExitGradcheck;
  }
  std::cout << "gradcheck OK (threshold " << report.threshold << ")\n";
  return kExitOk;
}

int cmd_params(const ConfigFlags& cf) {
  ModelConfig cfg;
  try {
    cfg = cf.resolve();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFlags;
  }
  int64_t total = 0;
  std::cout << "module\tparams\n";
  for (const auto& [name, count] : param_count_by_module(cfg)) {
    std::cout << name << '\t' << count << '\n';
    total += count;
  }
  std::cout << "total\t" << total << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FGMamba super-resolution toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key=value config file");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a directory of HR images");
  ConfigFlags train_cf;
  add_config_flags(train, train_cf);
  std::string hr_dir, out_path, log_path;
  TrainOptions topts;
  bool train_porcelain = false;
  train->add_option("--hr-dir", hr_dir, "Directory of HR PGM/PPM images")->required();
  train->add_option("--out", out_path, "Checkpoint output path")->required();
  train->add_option("--steps", topts.steps, "Optimizer steps");
  train->add_option("--seed", topts.seed, "RNG seed (init + sampling)");
  train->add_option("--batch", topts.batch, "Batch size");
  train->add_option("--patch", topts.patch_hr, "HR patch size");
  train->add_option("--lr", topts.lr, "Adam learning rate");
  train->add_option("--val-every", topts.val_every, "Validation interval in steps");
  train->add_flag("--augment", topts.augment, "Enable mirror/rotation augmentation");
  train->add_option("--log", log_path, "Metric log path (default: <out>.log)");
  train->add_flag("--porcelain", train_porcelain, "Suppress timestamped banner lines");

  // infer
  auto* infer = app.add_subcommand("infer", "Super-resolve one image with a checkpoint");
  std::string ck_path, in_path, out_img;
  int64_t infer_scale = -1;
  infer->add_option("--checkpoint", ck_path, "Checkpoint path")->required();
  infer->add_option("--input", in_path, "Input LR image")->required();
  infer->add_option("--output", out_img, "Output SR image")->required();
  infer->add_option("--scale", infer_scale, "Expected scale (must match checkpoint)");

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM between paired image directories");
  std::string sr_dir, gt_dir;
  bool eval_porcelain = false;
  eval->add_option("--sr-dir", sr_dir, "Directory of SR images")->required();
  eval->add_option("--gt-dir", gt_dir, "Directory of ground-truth images")->required();
  eval->add_flag("--porcelain", eval_porcelain, "Tab-separated rows only");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward rule");
  bool gc_list = false, gc_corrupt = false;
  uint64_t gc_seed = 11;
  int64_t gc_hw = 8;
  double gc_step = 1e-5;
  gc->add_flag("--list", gc_list, "Print the check matrix without running");
  gc->add_option("--seed", gc_seed, "RNG seed for the probe instance");
  gc->add_option("--hw", gc_hw, "Input spatial extent");
  gc->add_option("--fd-step", gc_step, "Central-difference step");
  gc->add_flag("--corrupt-sigmoid-backward", gc_corrupt,
               "Test fixture: corrupt one backward rule; the run must fail");

  // params
  auto* params = app.add_subcommand("params", "Report per-module parameter counts");
  ConfigFlags params_cf;
  add_config_flags(params, params_cf);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n' << app.help() << '\n';
    return kExitFlags;
  }

  try {
    if (train->parsed())
      return cmd_train(train_cf, hr_dir, out_path, log_path, topts, train_porcelain);
    if (infer->parsed()) return cmd_infer(ck_path, in_path, out_img, infer_scale);
    if (eval->parsed()) return cmd_eval(sr_dir, gt_dir, eval_porcelain);
    if (gc->parsed()) return cmd_gradcheck(gc_list, gc_seed, gc_hw, gc_step, gc_corrupt);
    if (params->parsed()) return cmd_params(params_cf);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFlags;
  }
  return kExitFlags;
}
