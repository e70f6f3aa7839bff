// Command-line front end: dataset synthesis, training, evaluation,
// ablations, cross-validation, and heat-map export.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "landseg/checkpoint.hpp"
#include "landseg/datamodel.hpp"
#include "landseg/gradcam.hpp"
#include "landseg/png_io.hpp"
#include "landseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace landseg;

namespace {

struct SplitOptions {
  std::string manifest;
  std::vector<double> ratios = {0.6, 0.2, 0.2};
  std::uint64_t split_seed = 1;
};

void add_split_options(CLI::App* cmd, SplitOptions& opt) {
  cmd->add_option("--manifest", opt.manifest, "split manifest JSON (overrides --ratios)");
  cmd->add_option("--ratios", opt.ratios, "train/val/test ratios")->expected(3);
  cmd->add_option("--split-seed", opt.split_seed, "seed for the dataset split");
}

DatasetSplit make_split(const std::vector<Sample>& samples, const SplitOptions& opt) {
  if (!opt.manifest.empty()) return apply_manifest(samples, opt.manifest);
  const double ratios[3] = {opt.ratios[0], opt.ratios[1], opt.ratios[2]};
  return split_dataset(samples, ratios, opt.split_seed);
}

// Training flags live in locals so that values from --config are only
// overridden by flags the user actually passed.
struct TrainFlags {
  std::string config_file;
  double lr = 0, momentum = 0, weight_decay = 0, mask_fraction = 0, tau = 0, ema_lambda = 0,
         dropout = 0;
  int batch_size = 0, epochs = 0, mask_block_size = 0, channels = 0;
  std::vector<double> weights;
  std::string feature_strategy, fusion_mode, encoder_variant, fill_policy;
  bool no_fusion = false, no_augment = false, no_equalize = false;
  std::uint64_t seed = 0;

  CLI::App* cmd = nullptr;

  void add_to(CLI::App* c) {
    cmd = c;
    c->add_option("--config", config_file, "JSON config file (flags override it)");
    c->add_option("--lr", lr, "learning rate");
    c->add_option("--momentum", momentum, "SGD momentum");
    c->add_option("--weight-decay", weight_decay, "SGD weight decay");
    c->add_option("--batch-size", batch_size, "samples per step");
    c->add_option("--epochs", epochs, "training epochs");
    c->add_option("--loss-weights", weights, "alpha beta gamma")->expected(3);
    c->add_option("--mask-block-size", mask_block_size, "mask block size in pixels (8 or 16)");
    c->add_option("--mask-fraction", mask_fraction, "fraction of target blocks to mask");
    c->add_option("--feature-strategy", feature_strategy, "edge_back | center_back | all");
    c->add_option("--fusion-mode", fusion_mode, "add | concat_weight");
    c->add_flag("--no-fusion", no_fusion, "disable the enhancement fusion (baseline)");
    c->add_option("--seed", seed, "master seed");
    c->add_option("--encoder-variant", encoder_variant, "tiny | full");
    c->add_option("--channels", channels, "encoder feature channels");
    c->add_option("--tau", tau, "contrast temperature");
    c->add_option("--ema-lambda", ema_lambda, "teacher EMA momentum");
    c->add_option("--dropout", dropout, "decoder dropout rate");
    c->add_option("--fill-policy", fill_policy, "image_mean | zeros");
    c->add_flag("--no-augment", no_augment, "disable training-time augmentation");
    c->add_flag("--no-equalize", no_equalize, "disable histogram equalization");
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_file.empty()) {
      std::ifstream f(config_file);
      if (!f) throw config_error("cannot read config file: " + config_file);
      std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      cfg.merge_json(text);
    }
    auto passed = [&](const char* name) { return cmd->count(name) > 0; };
    if (passed("--lr")) cfg.lr = lr;
    if (passed("--momentum")) cfg.momentum = momentum;
    if (passed("--weight-decay")) cfg.weight_decay = weight_decay;
    if (passed("--batch-size")) cfg.batch_size = batch_size;
    if (passed("--epochs")) cfg.epochs = epochs;
    if (passed("--loss-weights")) cfg.loss_weights = {weights[0], weights[1], weights[2]};
    if (passed("--mask-block-size")) cfg.mask_block_size = mask_block_size;
    if (passed("--mask-fraction")) cfg.mask_fraction = mask_fraction;
    if (passed("--feature-strategy")) {
      TrainConfig tmp;
      tmp.merge_json("{\"feature_strategy\":\"" + feature_strategy + "\"}");
      cfg.feature_strategy = tmp.feature_strategy;
    }
    if (passed("--fusion-mode")) {
      TrainConfig tmp;
      tmp.merge_json("{\"fusion_mode\":\"" + fusion_mode + "\"}");
      cfg.fusion_mode = tmp.fusion_mode;
    }
    if (passed("--no-fusion")) cfg.fusion_enabled = false;
    if (passed("--seed")) cfg.seed = seed;
    if (passed("--encoder-variant")) {
      TrainConfig tmp;
      tmp.merge_json("{\"encoder_variant\":\"" + encoder_variant + "\"}");
      cfg.encoder_variant = tmp.encoder_variant;
    }
    if (passed("--channels")) cfg.encoder_channels = channels;
    if (passed("--tau")) cfg.tau = tau;
    if (passed("--ema-lambda")) cfg.ema_lambda = ema_lambda;
    if (passed("--dropout")) cfg.dropout_rate = dropout;
    if (passed("--fill-policy")) {
      TrainConfig tmp;
      tmp.merge_json("{\"fill_policy\":\"" + fill_policy + "\"}");
      cfg.fill_policy = tmp.fill_policy;
    }
    if (passed("--no-augment")) cfg.augment = false;
    if (passed("--no-equalize")) cfg.equalize = false;
    validate(cfg);
    return cfg;
  }
};

std::vector<Sample> prepare_for_eval(std::vector<Sample> samples, bool equalize) {
  for (auto& s : samples) {
    s = resize_to_canvas(s);
    if (equalize) equalize_channels(s.image);
  }
  return samples;
}

bool checkpoint_wants_equalize(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const auto it = ckpt.blobs.find("train_config");
  if (it == ckpt.blobs.end()) return true;
  return TrainConfig::from_json(it->second).equalize;
}

void write_prediction_outputs(const Prediction& pred, const std::string& id, const std::string& mask_dir,
                              const std::string& prob_dir) {
  if (!mask_dir.empty()) {
    fs::create_directories(mask_dir);
    std::vector<std::uint8_t> bytes(pred.mask.v.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = pred.mask.v[i] ? 255 : 0;
    png::write_gray8((fs::path(mask_dir) / (id + ".png")).string(), pred.mask.height, pred.mask.width,
                     bytes);
  }
  if (!prob_dir.empty()) {
    fs::create_directories(prob_dir);
    std::vector<std::uint16_t> bytes(pred.probabilities.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
      bytes[i] = static_cast<std::uint16_t>(std::lround(pred.probabilities[i] * 65535.0));
    png::write_gray16((fs::path(prob_dir) / (id + ".png")).string(), pred.probabilities.dim(0),
                      pred.probabilities.dim(1), bytes);
  }
}

int run(int argc, char** argv) {
  CLI::App app{"landslide segmentation trainer and evaluation harness"};
  app.require_subcommand(1);

  // ---- synth-data -------------------------------------------------------
  auto* synth = app.add_subcommand("synth-data", "generate the synthetic blurred-blob dataset");
  std::string synth_out;
  SynthConfig synth_cfg;
  SplitOptions synth_split;
  bool write_split = false;
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--n-positive", synth_cfg.n_positive, "positive sample count");
  synth->add_option("--n-negative", synth_cfg.n_negative, "negative sample count");
  synth->add_option("--blob-min", synth_cfg.blob_count_min, "minimum blobs per positive");
  synth->add_option("--blob-max", synth_cfg.blob_count_max, "maximum blobs per positive");
  synth->add_option("--edge-blur-sigma", synth_cfg.edge_blur_sigma, "optical edge softness, pixels");
  synth->add_option("--texture-contrast", synth_cfg.texture_contrast, "foreground shift in [0,1]");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_flag("--split", write_split, "also write splits.json");
  add_split_options(synth, synth_split);

  // ---- train -------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train the dual-branch model");
  std::string train_data, train_out = "runs/default";
  SplitOptions train_split;
  TrainFlags train_flags;
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "run output directory");
  add_split_options(train_cmd, train_split);
  train_flags.add_to(train_cmd);

  // ---- eval ---------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split_name = "test", eval_out, eval_masks, eval_probs;
  SplitOptions eval_split;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--split", eval_split_name, "train | val | test | all");
  eval_cmd->add_option("--out", eval_out, "metrics JSON output path");
  eval_cmd->add_option("--save-masks", eval_masks, "directory for predicted masks (8-bit PNG)");
  eval_cmd->add_option("--save-probs", eval_probs, "directory for probability maps (16-bit PNG)");
  add_split_options(eval_cmd, eval_split);

  // ---- ablate --------------------------------------------------------------
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare ablation arms");
  std::string ablate_data, ablate_out = "runs/ablation";
  std::vector<std::string> arm_names = {"B", "B+M", "B+M+C"};
  std::vector<std::uint64_t> ablate_seeds = {1, 2, 3};
  SplitOptions ablate_split;
  TrainFlags ablate_flags;
  ablate_cmd->add_option("--data", ablate_data, "dataset directory")->required();
  ablate_cmd->add_option("--out", ablate_out, "output directory");
  ablate_cmd->add_option("--arms", arm_names, "arm names");
  ablate_cmd->add_option("--seeds", ablate_seeds, "seeds (one run per arm per seed)");
  add_split_options(ablate_cmd, ablate_split);
  ablate_flags.add_to(ablate_cmd);

  // ---- cross-validate --------------------------------------------------------
  auto* cv_cmd = app.add_subcommand("cross-validate", "compare one configuration axis");
  std::string cv_data, cv_out = "runs/cross_validation", cv_axis;
  std::vector<std::uint64_t> cv_seeds = {1, 2, 3};
  SplitOptions cv_split;
  TrainFlags cv_flags;
  cv_cmd->add_option("--data", cv_data, "dataset directory")->required();
  cv_cmd->add_option("--axis", cv_axis, "mask-size | feature-strategy | fusion")->required();
  cv_cmd->add_option("--out", cv_out, "output directory");
  cv_cmd->add_option("--seeds", cv_seeds, "seeds (one run per arm per seed)");
  add_split_options(cv_cmd, cv_split);
  cv_flags.add_to(cv_cmd);

  // ---- gradcam ------------------------------------------------------------
  auto* cam_cmd = app.add_subcommand("gradcam", "export a class-activation heat map overlay");
  std::string cam_ckpt, cam_image, cam_mask, cam_layer = "fused", cam_out = "gradcam.png";
  cam_cmd->add_option("--checkpoint", cam_ckpt, "checkpoint file")->required();
  cam_cmd->add_option("--image", cam_image, "input image PNG")->required();
  cam_cmd->add_option("--mask", cam_mask, "optional ground-truth mask PNG");
  cam_cmd->add_option("--layer", cam_layer, "capture layer (see error text for the list)");
  cam_cmd->add_option("--out", cam_out, "output overlay PNG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit clean, bad flags are config errors
  }

  if (synth->parsed()) {
    validate(synth_cfg);
    const auto samples = generate_synthetic(synth_cfg);
    save_dataset(samples, synth_out);
    if (write_split) {
      const DatasetSplit split = make_split(samples, synth_split);
      save_manifest(split, (fs::path(synth_out) / "splits.json").string());
    }
    std::printf("wrote %zu samples to %s\n", samples.size(), synth_out.c_str());
    return 0;
  }

  if (train_cmd->parsed()) {
    const TrainConfig cfg = train_flags.resolve();
    const auto samples = load_dataset(train_data);
    const DatasetSplit split = make_split(samples, train_split);
    const TrainResult res = train(cfg, split, train_out);
    std::string summary = "# Training run\n\n```\n" + cfg.to_json() + "\n```\n";
    if (res.record.test_report) {
      summary += "\nTest metrics: " + res.record.test_report->to_json() + "\n";
      std::printf("test: %s\n", res.record.test_report->to_json().c_str());
    }
    std::ofstream((fs::path(train_out) / "report.md").string()) << summary;
    std::printf("run written to %s\n", train_out.c_str());
    return 0;
  }

  if (eval_cmd->parsed()) {
    const auto samples = load_dataset(eval_data);
    std::vector<Sample> chosen;
    if (eval_split_name == "all") {
      chosen = samples;
    } else {
      const DatasetSplit split = make_split(samples, eval_split);
      if (eval_split_name == "train")
        chosen = split.train;
      else if (eval_split_name == "val")
        chosen = split.val;
      else if (eval_split_name == "test")
        chosen = split.test;
      else
        throw config_error("unknown --split value: " + eval_split_name);
    }
    if (chosen.empty()) throw data_error("selected evaluation split is empty");
    chosen = prepare_for_eval(std::move(chosen), checkpoint_wants_equalize(eval_ckpt));

    SegModel model = SegModel::load(eval_ckpt);
    Confusion confusion;
    for (const auto& s : chosen) {
      const Prediction pred = model.predict(s);
      accumulate(pred.mask, s.mask, confusion);
      write_prediction_outputs(pred, s.id, eval_masks, eval_probs);
    }
    const MetricReport r = report(confusion);
    std::printf("%s\n", r.to_json().c_str());
    if (!eval_out.empty()) {
      fs::create_directories(fs::path(eval_out).parent_path().empty() ? "." : fs::path(eval_out).parent_path().string());
      std::ofstream(eval_out) << r.to_json() << "\n";
    }
    return 0;
  }

  auto run_arms = [&](const std::string& data_dir, const SplitOptions& split_opt, TrainFlags& flags,
                      const std::vector<Arm>& arms, const std::vector<std::uint64_t>& seeds,
                      const std::string& out_dir) {
    const TrainConfig cfg = flags.resolve();
    const auto samples = load_dataset(data_dir);
    const DatasetSplit split = make_split(samples, split_opt);
    const AblationTable table = ablate(cfg, arms, seeds, split, out_dir);
    std::printf("%s\n", table.to_markdown().c_str());
    std::printf("report written to %s\n", (fs::path(out_dir) / "report.md").string().c_str());
  };

  if (ablate_cmd->parsed()) {
    std::vector<Arm> arms;
    for (const auto& n : arm_names) arms.push_back(parse_arm(n));
    run_arms(ablate_data, ablate_split, ablate_flags, arms, ablate_seeds, ablate_out);
    return 0;
  }

  if (cv_cmd->parsed()) {
    run_arms(cv_data, cv_split, cv_flags, cross_validation_arms(cv_axis), cv_seeds, cv_out);
    return 0;
  }

  if (cam_cmd->parsed()) {
    Sample sample = [&]() {
      if (!cam_mask.empty()) return load_sample(cam_image, cam_mask, "gradcam-input");
      const auto img = png::read(cam_image);
      if (img.channels != 3) throw data_error("gradcam image must be RGB: " + cam_image);
      Tensor t({3, img.height, img.width});
      const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
      for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
          t.data()[static_cast<std::size_t>(c) * n + i] = img.pixels[i * 3 + static_cast<std::size_t>(c)] / 255.0;
      return make_sample(std::move(t), BinaryMask(img.height, img.width), "gradcam-input");
    }();
    sample = prepare_for_eval({std::move(sample)}, checkpoint_wants_equalize(cam_ckpt)).front();
    SegModel model = SegModel::load(cam_ckpt);
    const GradCamResult res = gradcam(model, sample, cam_layer);
    if (!fs::path(cam_out).parent_path().empty()) fs::create_directories(fs::path(cam_out).parent_path());
    write_gradcam_png(res, cam_out);
    std::printf("heat map written to %s\n", cam_out.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const CLI::Error&) {
    return 2;  // argument parsing problems are configuration errors
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
