#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "landseg/blockgrid.hpp"
#include "landseg/losses.hpp"
#include "landseg/metrics.hpp"
#include "landseg/model.hpp"
#include "landseg/sample.hpp"

namespace landseg {

enum class FillPolicy { image_mean, zeros };

/// Training hyperparameters. Defaults follow the reference recipe
/// (SGD, lr 0.007, momentum 0.9, weight decay 0.0005, batch 4, 100 epochs);
/// desk-scale runs override epochs and the encoder size.
struct TrainConfig {
  double lr = 0.007;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 4;
  int epochs = 100;
  LossWeights loss_weights;  // (alpha, beta, gamma)
  int mask_block_size = 8;
  double mask_fraction = 0.5;
  FeatureStrategy feature_strategy = FeatureStrategy::edge_back;
  FusionMode fusion_mode = FusionMode::add;
  bool fusion_enabled = true;
  std::uint64_t seed = 1;
  EncoderConfig::Variant encoder_variant = EncoderConfig::Variant::tiny;
  int encoder_channels = 32;
  double tau = 0.07;
  double ema_lambda = 0.996;
  double dropout_rate = 0.1;
  FillPolicy fill_policy = FillPolicy::image_mean;
  bool augment = true;
  bool equalize = true;

  ModelConfig model_config() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  /// Overrides fields present in the JSON object, leaves the rest alone.
  void merge_json(const std::string& text);
};

void validate(const TrainConfig& c);

struct StepLoss {
  int step = 0;  // 1-based global step
  LossBundle bundle;
};

/// Everything a run produces: the per-step loss log, per-epoch validation
/// metrics, the final test metrics, checkpoint paths and instrumentation
/// counters.
struct RunRecord {
  std::vector<StepLoss> losses;
  std::vector<MetricReport> val_reports;
  std::optional<MetricReport> test_report;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::uint64_t mfm_evaluations = 0;
  std::uint64_t sfce_evaluations = 0;
  int steps_per_epoch = 0;

  std::string losses_csv() const;
};

struct TrainResult {
  RunRecord record;
  std::unique_ptr<SegModel> model;
};

/// Runs the full dual-branch training loop. Per step: sample a batch,
/// pair up positive samples, build balanced mask plans and masked images,
/// forward the segmentation encoder (originals), student (masked) and
/// teacher (originals), compute the reconstruction, contrast and
/// cross-entropy losses, backpropagate the weighted total through the
/// student, segmentation encoder and decoder, take an SGD step, then
/// update the teacher by EMA. Deterministic under (config, data, seed).
/// If out_dir is non-empty, losses.csv, metrics.json and checkpoints are
/// written there.
TrainResult train(const TrainConfig& config, const DatasetSplit& data, const std::string& out_dir = "");

MetricReport evaluate(SegModel& model, const std::vector<Sample>& data);
MetricReport evaluate_checkpoint(const std::string& checkpoint_path, const std::vector<Sample>& data);

/// One ablation/cross-validation arm: a named config transform.
struct Arm {
  std::string name;
  std::function<void(TrainConfig&)> apply;
};

/// Known arm names: B, B+M, B+M+C (loss presets), mask8, mask16,
/// edge_back, center_back, all, add, concat_weight.
Arm parse_arm(const std::string& name);

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  MetricReport metrics;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<std::string> arm_order;
  std::vector<std::uint64_t> seeds;

  /// Mean over seeds of a metric for one arm (undefined values skipped).
  std::optional<double> mean(const std::string& arm, const std::string& metric) const;
  std::optional<double> stddev(const std::string& arm, const std::string& metric) const;

  std::string to_markdown() const;
  std::string to_json() const;
};

/// Trains every arm on identical data with identical seeds and reports
/// per-seed metrics plus mean/std aggregates. Needs at least two arms.
AblationTable ablate(const TrainConfig& base_config, const std::vector<Arm>& arms,
                     const std::vector<std::uint64_t>& seeds, const DatasetSplit& data,
                     const std::string& out_dir = "");

/// The three declared cross-validation axes.
std::vector<Arm> cross_validation_arms(const std::string& axis);

}  // namespace landseg
