#include "landseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "landseg/datamodel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace landseg {

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.encoder = encoder_variant == EncoderConfig::Variant::tiny ? EncoderConfig::tiny(encoder_channels)
                                                               : EncoderConfig::full(encoder_channels);
  mc.fusion_mode = fusion_mode;
  mc.fusion_enabled = fusion_enabled;
  mc.dropout_rate = dropout_rate;
  mc.ema_lambda = ema_lambda;
  return mc;
}

namespace {

const char* strategy_name(FeatureStrategy s) {
  switch (s) {
    case FeatureStrategy::edge_back: return "edge_back";
    case FeatureStrategy::center_back: return "center_back";
    case FeatureStrategy::all: return "all";
  }
  return "edge_back";
}

FeatureStrategy strategy_from(const std::string& s) {
  if (s == "edge_back") return FeatureStrategy::edge_back;
  if (s == "center_back") return FeatureStrategy::center_back;
  if (s == "all") return FeatureStrategy::all;
  throw config_error("unknown feature strategy: " + s);
}

}  // namespace

std::string TrainConfig::to_json() const {
  json j;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["loss_weights"] = {loss_weights.alpha, loss_weights.beta, loss_weights.gamma};
  j["mask_block_size"] = mask_block_size;
  j["mask_fraction"] = mask_fraction;
  j["feature_strategy"] = strategy_name(feature_strategy);
  j["fusion_mode"] = fusion_mode == FusionMode::add ? "add" : "concat_weight";
  j["fusion_enabled"] = fusion_enabled;
  j["seed"] = seed;
  j["encoder_variant"] = encoder_variant == EncoderConfig::Variant::tiny ? "tiny" : "full";
  j["encoder_channels"] = encoder_channels;
  j["tau"] = tau;
  j["ema_lambda"] = ema_lambda;
  j["dropout_rate"] = dropout_rate;
  j["fill_policy"] = fill_policy == FillPolicy::image_mean ? "image_mean" : "zeros";
  j["augment"] = augment;
  j["equalize"] = equalize;
  return j.dump(2);
}

void TrainConfig::merge_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config parse error: ") + e.what());
  }
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("lr", lr);
  get("momentum", momentum);
  get("weight_decay", weight_decay);
  get("batch_size", batch_size);
  get("epochs", epochs);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    if (!w.is_array() || w.size() != 3) throw config_error("loss_weights must be [alpha, beta, gamma]");
    loss_weights.alpha = w[0].get<double>();
    loss_weights.beta = w[1].get<double>();
    loss_weights.gamma = w[2].get<double>();
  }
  get("mask_block_size", mask_block_size);
  get("mask_fraction", mask_fraction);
  if (j.contains("feature_strategy")) feature_strategy = strategy_from(j.at("feature_strategy").get<std::string>());
  if (j.contains("fusion_mode")) {
    const auto s = j.at("fusion_mode").get<std::string>();
    if (s == "add")
      fusion_mode = FusionMode::add;
    else if (s == "concat_weight")
      fusion_mode = FusionMode::concat_weight;
    else
      throw config_error("unknown fusion mode: " + s);
  }
  get("fusion_enabled", fusion_enabled);
  get("seed", seed);
  if (j.contains("encoder_variant")) {
    const auto s = j.at("encoder_variant").get<std::string>();
    if (s == "tiny")
      encoder_variant = EncoderConfig::Variant::tiny;
    else if (s == "full")
      encoder_variant = EncoderConfig::Variant::full;
    else
      throw config_error("unknown encoder variant: " + s);
  }
  get("encoder_channels", encoder_channels);
  get("tau", tau);
  get("ema_lambda", ema_lambda);
  get("dropout_rate", dropout_rate);
  if (j.contains("fill_policy")) {
    const auto s = j.at("fill_policy").get<std::string>();
    if (s == "image_mean")
      fill_policy = FillPolicy::image_mean;
    else if (s == "zeros")
      fill_policy = FillPolicy::zeros;
    else
      throw config_error("unknown fill policy: " + s);
  }
  get("augment", augment);
  get("equalize", equalize);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  c.merge_json(text);
  return c;
}

void validate(const TrainConfig& c) {
  if (c.lr <= 0.0) throw config_error("lr must be positive");
  if (c.momentum < 0.0 || c.momentum >= 1.0) throw config_error("momentum must be in [0,1)");
  if (c.weight_decay < 0.0) throw config_error("weight_decay must be >= 0");
  if (c.batch_size < 1) throw config_error("batch_size must be >= 1");
  if (c.epochs < 1) throw config_error("epochs must be >= 1");
  if (c.loss_weights.alpha < 0.0 || c.loss_weights.beta < 0.0 || c.loss_weights.gamma < 0.0)
    throw config_error("loss weights must be >= 0");
  if (c.mask_block_size != 8 && c.mask_block_size != 16)
    throw config_error("mask_block_size must be 8 or 16");
  if (c.mask_fraction <= 0.0 || c.mask_fraction > 1.0)
    throw config_error("mask_fraction must be in (0,1]");
  if (c.tau <= 0.0) throw config_error("tau must be positive");
  if (c.ema_lambda < 0.0 || c.ema_lambda > 1.0) throw config_error("ema_lambda must be in [0,1]");
  if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0) throw config_error("dropout_rate must be in [0,1)");
  if (c.encoder_channels < 8) throw config_error("encoder_channels must be >= 8");
}

std::string RunRecord::losses_csv() const {
  std::string out = "step,l_reconst,l_cons,l_ce,total\n";
  char buf[160];
  for (const auto& s : losses) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", s.step, s.bundle.l_reconst,
                  s.bundle.l_cons, s.bundle.l_ce, s.bundle.total);
    out += buf;
  }
  return out;
}

namespace {

FeatureMap slice_feature(const Tensor& batch, int n, const std::string& id, FeatureMap::Branch branch) {
  FeatureMap fm;
  fm.values = Tensor({batch.dim(1), batch.dim(2), batch.dim(3)});
  const std::size_t sz = fm.values.size();
  std::copy(batch.data() + static_cast<std::size_t>(n) * sz, batch.data() + (static_cast<std::size_t>(n) + 1) * sz,
            fm.values.data());
  fm.source_id = id;
  fm.branch = branch;
  return fm;
}

Tensor slice_prob(const Tensor& probs, int n, int h, int w) {
  Tensor out({h, w});
  const std::size_t sz = out.size();
  std::copy(probs.data() + static_cast<std::size_t>(n) * sz, probs.data() + (static_cast<std::size_t>(n) + 1) * sz,
            out.data());
  return out;
}

std::vector<BlockCoord> plan_coords(const MaskPlan& plan) {
  std::vector<BlockCoord> coords = plan.mask_list_0;
  coords.insert(coords.end(), plan.mask_list_1.begin(), plan.mask_list_1.end());
  return coords;
}

struct PairState {
  int slot_a = 0, slot_b = 0;          // batch slots
  int student_a = 0, student_b = 0;    // slots in the student (masked) batch
  MaskPlan plan_a, plan_b;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot write " + path);
  f << text;
}

}  // namespace

TrainResult train(const TrainConfig& config, const DatasetSplit& data, const std::string& out_dir) {
  validate(config);
  if (data.train.empty()) throw data_error("train split is empty");

  // Canonical preprocessing once: resize to the 512 canvas and equalize.
  auto prepare = [&](const std::vector<Sample>& in) {
    std::vector<Sample> out;
    out.reserve(in.size());
    for (const auto& s : in) {
      Sample t = resize_to_canvas(s);
      if (config.equalize) equalize_channels(t.image);
      out.push_back(std::move(t));
    }
    return out;
  };
  std::vector<Sample> train_set = prepare(data.train);
  std::vector<Sample> val_set = prepare(data.val);
  std::vector<Sample> test_set = prepare(data.test);

  bool has_positive = false;
  for (const auto& s : train_set) has_positive = has_positive || s.is_positive;
  if (!has_positive) throw data_error("enhancement branch requires positive samples");

  const LossWeights& w = config.loss_weights;
  const bool enhancement_active = w.alpha > 0.0 || w.beta > 0.0;
  const bool teacher_needed = enhancement_active || config.fusion_enabled;

  auto model = std::make_unique<SegModel>(config.model_config(), config.seed);
  nn::Sgd optimizer(model->trainable_params(), config.lr, config.momentum, config.weight_decay);

  Rng master(config.seed);
  model->decoder().seed_dropout(master.fork(0xD0).next_u64());

  const int n_train = static_cast<int>(train_set.size());
  const int batch = std::min(config.batch_size, n_train);
  const int steps_per_epoch = std::max(1, n_train / batch);
  const int side = 512;

  RunRecord record;
  record.steps_per_epoch = steps_per_epoch;
  double best_iou = -1.0;

  if (!out_dir.empty()) fs::create_directories(fs::path(out_dir) / "checkpoints");

  int global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng = master.fork(0xE000000ULL + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    for (int step = 0; step < steps_per_epoch; ++step) {
      ++global_step;
      Rng step_rng = master.fork((static_cast<std::uint64_t>(epoch) << 24) ^ static_cast<std::uint64_t>(step) ^
                                 0x5000000000000000ULL);

      // Assemble the batch (augmented copies when enabled).
      std::vector<Sample> batch_samples;
      batch_samples.reserve(static_cast<std::size_t>(batch));
      for (int b = 0; b < batch; ++b) {
        const Sample& src = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(step * batch + b)])];
        if (config.augment) {
          const auto pick = static_cast<Augment>(step_rng.uniform_int(0, 5));
          batch_samples.push_back(augment_sample(src, pick));
        } else {
          batch_samples.push_back(src);
        }
      }

      // Pair up the positive samples in batch order.
      std::vector<int> positive_slots;
      for (int b = 0; b < batch; ++b)
        if (batch_samples[static_cast<std::size_t>(b)].is_positive) positive_slots.push_back(b);

      std::vector<PairState> pairs;
      if (enhancement_active) {
        for (std::size_t i = 0; i + 1 < positive_slots.size(); i += 2) {
          PairState p;
          p.slot_a = positive_slots[i];
          p.slot_b = positive_slots[i + 1];
          pairs.push_back(p);
        }
      }

      // Mask plans and masked images for the paired samples.
      std::vector<Sample> masked;
      for (auto& p : pairs) {
        for (int which = 0; which < 2; ++which) {
          const int slot = which == 0 ? p.slot_a : p.slot_b;
          const Sample& s = batch_samples[static_cast<std::size_t>(slot)];
          const BlockGrid grid = classify_blocks(s, config.mask_block_size);
          const std::array<double, 3> fill =
              config.fill_policy == FillPolicy::image_mean ? channel_means(s) : std::array<double, 3>{};
          MaskPlan plan =
              plan_mask(grid, config.mask_fraction, step_rng.next_u64(), config.feature_strategy, fill);
          (which == 0 ? p.plan_a : p.plan_b) = plan;
          (which == 0 ? p.student_a : p.student_b) = static_cast<int>(masked.size());
          masked.push_back(apply_mask(s, plan));
        }
      }

      // Forward passes.
      Tensor images = Tensor::uninit({batch, 3, side, side});
      for (int b = 0; b < batch; ++b)
        std::copy(batch_samples[static_cast<std::size_t>(b)].image.data(),
                  batch_samples[static_cast<std::size_t>(b)].image.data() +
                      batch_samples[static_cast<std::size_t>(b)].image.size(),
                  images.data() + static_cast<std::size_t>(b) * 3 * side * side);

      Tensor seg_feats = model->seg_encoder().forward(images, nn::Mode::train);

      Tensor teacher_feats;
      if (teacher_needed) teacher_feats = model->teacher().forward(std::move(images), nn::Mode::eval);

      Tensor student_feats;
      if (!masked.empty()) {
        Tensor masked_images = Tensor::uninit({static_cast<int>(masked.size()), 3, side, side});
        for (std::size_t m = 0; m < masked.size(); ++m)
          std::copy(masked[m].image.data(), masked[m].image.data() + masked[m].image.size(),
                    masked_images.data() + m * 3 * side * side);
        student_feats = model->student().forward(std::move(masked_images), nn::Mode::train);
      }

      Tensor fused = config.fusion_enabled
                         ? model->fusion().forward(std::move(seg_feats), teacher_feats, nn::Mode::train)
                         : std::move(seg_feats);
      Tensor probs = model->decoder().forward(std::move(fused), nn::Mode::train);

      // Cross-entropy over every batch sample.
      double l_ce = 0.0;
      for (int b = 0; b < batch; ++b)
        l_ce += ce_loss(slice_prob(probs, b, side, side), batch_samples[static_cast<std::size_t>(b)].mask);
      l_ce /= static_cast<double>(batch);

      // Enhancement losses per pair, averaged over pairs.
      struct PairGrads {
        Eigen::MatrixXd mfm_a, mfm_b;                    // d/d raw student points at all coords
        Eigen::MatrixXd sfce_edge_a, sfce_back_a;        // d/d raw student points (chain through normalize)
        Eigen::MatrixXd sfce_edge_b, sfce_back_b;
      };
      std::vector<PairGrads> pair_grads(pairs.size());
      double l_reconst = 0.0, l_cons = 0.0;
      bool reconst_any = false, cons_any = false;

      for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        const PairState& p = pairs[pi];
        PairGrads& pg = pair_grads[pi];
        const auto& sample_a = batch_samples[static_cast<std::size_t>(p.slot_a)];
        const auto& sample_b = batch_samples[static_cast<std::size_t>(p.slot_b)];

        FeatureMap student_a = slice_feature(student_feats, p.student_a, sample_a.id, FeatureMap::Branch::student);
        FeatureMap student_b = slice_feature(student_feats, p.student_b, sample_b.id, FeatureMap::Branch::student);
        FeatureMap teacher_a = slice_feature(teacher_feats, p.slot_a, sample_a.id, FeatureMap::Branch::teacher);
        FeatureMap teacher_b = slice_feature(teacher_feats, p.slot_b, sample_b.id, FeatureMap::Branch::teacher);

        if (w.alpha > 0.0) {
          record.mfm_evaluations += 2;
          const auto coords_a = plan_coords(p.plan_a);
          const auto coords_b = plan_coords(p.plan_b);
          const auto recon_a = gather_points(student_a, coords_a, config.mask_block_size);
          const auto label_a = gather_points(teacher_a, coords_a, config.mask_block_size);
          const auto recon_b = gather_points(student_b, coords_b, config.mask_block_size);
          const auto label_b = gather_points(teacher_b, coords_b, config.mask_block_size);
          const LossValue mfm_a = mfm_loss(recon_a, label_a);
          const LossValue mfm_b = mfm_loss(recon_b, label_b);
          l_reconst += mfm_pair_loss(mfm_a.value, mfm_b.value);
          reconst_any = reconst_any || !mfm_a.skipped || !mfm_b.skipped;
          pg.mfm_a = mfm_loss_grad(recon_a, label_a);
          pg.mfm_b = mfm_loss_grad(recon_b, label_b);
        }

        if (w.beta > 0.0) {
          record.sfce_evaluations += 1;
          const auto raw_edge_a = gather_points(student_a, p.plan_a.mask_list_1, config.mask_block_size);
          const auto raw_back_a = gather_points(student_a, p.plan_a.mask_list_0, config.mask_block_size);
          const auto raw_edge_b = gather_points(student_b, p.plan_b.mask_list_1, config.mask_block_size);
          const auto raw_back_b = gather_points(student_b, p.plan_b.mask_list_0, config.mask_block_size);
          GatheredPoints s1{normalize_rows(raw_edge_a), normalize_rows(raw_back_a)};
          GatheredPoints s2{normalize_rows(raw_edge_b), normalize_rows(raw_back_b)};
          GatheredPoints t1{normalize_rows(gather_points(teacher_a, p.plan_a.mask_list_1, config.mask_block_size)),
                            normalize_rows(gather_points(teacher_a, p.plan_a.mask_list_0, config.mask_block_size))};
          GatheredPoints t2{normalize_rows(gather_points(teacher_b, p.plan_b.mask_list_1, config.mask_block_size)),
                            normalize_rows(gather_points(teacher_b, p.plan_b.mask_list_0, config.mask_block_size))};
          SfceGrads sg;
          const SfceResult res = sfce_loss(s1, t2, s2, t1, config.tau, &sg);
          l_cons += res.value;
          cons_any = cons_any || !res.skipped;
          pg.sfce_edge_a = normalize_rows_grad(raw_edge_a, sg.d_student1_edge);
          pg.sfce_back_a = normalize_rows_grad(raw_back_a, sg.d_student1_back);
          pg.sfce_edge_b = normalize_rows_grad(raw_edge_b, sg.d_student2_edge);
          pg.sfce_back_b = normalize_rows_grad(raw_back_b, sg.d_student2_back);
        }
      }
      const double pair_norm = pairs.empty() ? 1.0 : static_cast<double>(pairs.size());
      l_reconst /= pair_norm;
      l_cons /= pair_norm;

      LossBundle bundle = joint_loss(l_reconst, l_cons, l_ce, w);
      bundle.reconst_skipped = !reconst_any;
      bundle.cons_skipped = !cons_any;
      record.losses.push_back({global_step, bundle});

      // Backward.
      optimizer.zero_grad();

      if (w.gamma > 0.0) {
        Tensor d_prob = Tensor::uninit({batch, 1, side, side});
        for (int b = 0; b < batch; ++b) {
          const Tensor g = ce_loss_grad(slice_prob(probs, b, side, side),
                                        batch_samples[static_cast<std::size_t>(b)].mask);
          const double scale = w.gamma / static_cast<double>(batch);
          double* dst = d_prob.data() + static_cast<std::size_t>(b) * g.size();
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] = scale * g[i];
        }
        Tensor d_fused = model->decoder().backward(std::move(d_prob));
        Tensor d_seg =
            config.fusion_enabled ? model->fusion().backward(std::move(d_fused)).first : std::move(d_fused);
        model->seg_encoder().backward(d_seg);
      }

      if (!masked.empty() && enhancement_active) {
        Tensor d_student(student_feats.shape());
        const int C = student_feats.dim(1);
        const int fh = student_feats.dim(2);
        const int fw = student_feats.dim(3);
        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
          const PairState& p = pairs[pi];
          const PairGrads& pg = pair_grads[pi];
          for (int which = 0; which < 2; ++which) {
            const MaskPlan& plan = which == 0 ? p.plan_a : p.plan_b;
            const int sslot = which == 0 ? p.student_a : p.student_b;
            Tensor g({C, fh, fw});
            if (w.alpha > 0.0) {
              const auto& mg = which == 0 ? pg.mfm_a : pg.mfm_b;
              if (mg.rows() > 0)
                scatter_point_grads(g, (w.alpha / pair_norm) * mg, plan_coords(plan), config.mask_block_size);
            }
            if (w.beta > 0.0) {
              const auto& eg = which == 0 ? pg.sfce_edge_a : pg.sfce_edge_b;
              const auto& bg = which == 0 ? pg.sfce_back_a : pg.sfce_back_b;
              if (eg.rows() > 0)
                scatter_point_grads(g, (w.beta / pair_norm) * eg, plan.mask_list_1, config.mask_block_size);
              if (bg.rows() > 0)
                scatter_point_grads(g, (w.beta / pair_norm) * bg, plan.mask_list_0, config.mask_block_size);
            }
            std::copy(g.data(), g.data() + g.size(),
                      d_student.data() + static_cast<std::size_t>(sslot) * g.size());
          }
        }
        model->student().backward(d_student);
      }

      optimizer.step();
      if (teacher_needed) model->teacher_student().ema_update();
    }

    // End of epoch: validation metrics and checkpoint cadence.
    if (!val_set.empty()) {
      const MetricReport vr = evaluate(*model, val_set);
      record.val_reports.push_back(vr);
      const double iou = vr.iou_1 ? *vr.iou_1 : -1.0;
      if (iou > best_iou) {
        best_iou = iou;
        if (!out_dir.empty()) {
          record.best_checkpoint = (fs::path(out_dir) / "checkpoints" / "best.ckpt").string();
          model->save(record.best_checkpoint, {{"train_config", config.to_json()}});
        }
      }
    }
  }

  if (!out_dir.empty()) {
    record.last_checkpoint = (fs::path(out_dir) / "checkpoints" / "last.ckpt").string();
    model->save(record.last_checkpoint, {{"train_config", config.to_json()}});
    if (record.best_checkpoint.empty()) record.best_checkpoint = record.last_checkpoint;
  }

  if (!test_set.empty()) record.test_report = evaluate(*model, test_set);

  if (!out_dir.empty()) {
    write_text((fs::path(out_dir) / "losses.csv").string(), record.losses_csv());
    json j;
    j["config"] = json::parse(config.to_json());
    if (record.test_report) j["test"] = json::parse(record.test_report->to_json());
    json val = json::array();
    for (const auto& r : record.val_reports) val.push_back(json::parse(r.to_json()));
    j["val_per_epoch"] = val;
    j["steps_per_epoch"] = record.steps_per_epoch;
    write_text((fs::path(out_dir) / "metrics.json").string(), j.dump(2) + "\n");
  }

  TrainResult result;
  result.record = std::move(record);
  result.model = std::move(model);
  return result;
}

MetricReport evaluate(SegModel& model, const std::vector<Sample>& data) {
  if (data.empty()) throw data_error("evaluate: empty dataset");
  Confusion total;
  constexpr std::size_t kChunk = 4;
  for (std::size_t base = 0; base < data.size(); base += kChunk) {
    std::vector<const Sample*> chunk;
    for (std::size_t i = base; i < std::min(base + kChunk, data.size()); ++i) chunk.push_back(&data[i]);
    const auto preds = model.predict_batch(chunk);
    for (std::size_t i = 0; i < preds.size(); ++i)
      accumulate(preds[i].mask, chunk[i]->mask, total);
  }
  return report(total);
}

MetricReport evaluate_checkpoint(const std::string& checkpoint_path, const std::vector<Sample>& data) {
  SegModel model = SegModel::load(checkpoint_path);
  return evaluate(model, data);
}

Arm parse_arm(const std::string& name) {
  if (name == "B")
    return {name, [](TrainConfig& c) {
              c.loss_weights = {0.0, 0.0, 1.0};
              c.fusion_enabled = false;
            }};
  if (name == "B+M")
    return {name, [](TrainConfig& c) {
              c.loss_weights = {1.0, 0.0, 1.0};
              c.fusion_enabled = true;
            }};
  if (name == "B+M+C")
    return {name, [](TrainConfig& c) {
              c.loss_weights = {1.0, 1.0, 1.0};
              c.fusion_enabled = true;
            }};
  if (name == "mask8") return {name, [](TrainConfig& c) { c.mask_block_size = 8; }};
  if (name == "mask16") return {name, [](TrainConfig& c) { c.mask_block_size = 16; }};
  if (name == "edge_back" || name == "center_back" || name == "all")
    return {name, [name](TrainConfig& c) { c.feature_strategy = strategy_from(name); }};
  if (name == "add") return {name, [](TrainConfig& c) { c.fusion_mode = FusionMode::add; }};
  if (name == "concat_weight")
    return {name, [](TrainConfig& c) { c.fusion_mode = FusionMode::concat_weight; }};
  throw config_error("unknown ablation arm: " + name);
}

namespace {

std::optional<double> metric_by_name(const MetricReport& r, const std::string& name) {
  if (name == "pa") return r.pa;
  if (name == "precision") return r.precision;
  if (name == "recall") return r.recall;
  if (name == "iou_1") return r.iou_1;
  if (name == "miou") return r.miou;
  if (name == "f1") return r.f1;
  throw config_error("unknown metric: " + name);
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"pa", "precision", "recall", "iou_1", "miou", "f1"};
  return names;
}

}  // namespace

std::optional<double> AblationTable::mean(const std::string& arm, const std::string& metric) const {
  double acc = 0.0;
  int n = 0;
  for (const auto& row : rows)
    if (row.arm == arm)
      if (const auto v = metric_by_name(row.metrics, metric)) {
        acc += *v;
        ++n;
      }
  if (n == 0) return std::nullopt;
  return acc / n;
}

std::optional<double> AblationTable::stddev(const std::string& arm, const std::string& metric) const {
  const auto m = mean(arm, metric);
  if (!m) return std::nullopt;
  double acc = 0.0;
  int n = 0;
  for (const auto& row : rows)
    if (row.arm == arm)
      if (const auto v = metric_by_name(row.metrics, metric)) {
        acc += (*v - *m) * (*v - *m);
        ++n;
      }
  if (n < 2) return 0.0;
  return std::sqrt(acc / (n - 1));
}

std::string AblationTable::to_markdown() const {
  std::string out = "| arm |";
  for (const auto& m : metric_names()) out += " " + m + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < metric_names().size(); ++i) out += "---|";
  out += "\n";
  char buf[64];
  for (const auto& arm : arm_order) {
    out += "| " + arm + " |";
    for (const auto& m : metric_names()) {
      const auto mu = mean(arm, m);
      const auto sd = stddev(arm, m);
      if (mu) {
        std::snprintf(buf, sizeof(buf), " %.4f ± %.4f |", *mu, sd ? *sd : 0.0);
        out += buf;
      } else {
        out += " — |";
      }
    }
    out += "\n";
  }
  return out;
}

std::string AblationTable::to_json() const {
  json j;
  json rows_json = json::array();
  for (const auto& row : rows) {
    json r;
    r["arm"] = row.arm;
    r["seed"] = row.seed;
    r["metrics"] = json::parse(row.metrics.to_json());
    rows_json.push_back(r);
  }
  j["rows"] = rows_json;
  json agg;
  for (const auto& arm : arm_order) {
    json a;
    for (const auto& m : metric_names()) {
      const auto mu = mean(arm, m);
      const auto sd = stddev(arm, m);
      a[m]["mean"] = mu ? json(*mu) : json(nullptr);
      a[m]["std"] = sd ? json(*sd) : json(nullptr);
    }
    agg[arm] = a;
  }
  j["aggregates"] = agg;
  return j.dump(2);
}

AblationTable ablate(const TrainConfig& base_config, const std::vector<Arm>& arms,
                     const std::vector<std::uint64_t>& seeds, const DatasetSplit& data,
                     const std::string& out_dir) {
  if (arms.size() < 2) throw config_error("ablate: at least two arms required");
  if (seeds.empty()) throw config_error("ablate: at least one seed required");
  if (data.test.empty()) throw data_error("ablate: test split is empty");

  AblationTable table;
  table.seeds = seeds;
  for (const auto& arm : arms) table.arm_order.push_back(arm.name);

  for (const auto& arm : arms) {
    for (const auto seed : seeds) {
      TrainConfig cfg = base_config;
      arm.apply(cfg);
      cfg.seed = seed;
      std::string run_dir;
      if (!out_dir.empty()) {
        run_dir = (fs::path(out_dir) / ("arm_" + arm.name) / ("seed_" + std::to_string(seed))).string();
        fs::create_directories(run_dir);
      }
      TrainResult res = train(cfg, data, run_dir);
      AblationRow row;
      row.arm = arm.name;
      row.seed = seed;
      if (res.record.test_report) row.metrics = *res.record.test_report;
      table.rows.push_back(std::move(row));
    }
  }

  if (!out_dir.empty()) {
    write_text((fs::path(out_dir) / "report.md").string(),
               "# Ablation report\n\n" + table.to_markdown() + "\n");
    write_text((fs::path(out_dir) / "ablation.json").string(), table.to_json() + "\n");
  }
  return table;
}

std::vector<Arm> cross_validation_arms(const std::string& axis) {
  if (axis == "mask-size") return {parse_arm("mask8"), parse_arm("mask16")};
  if (axis == "feature-strategy")
    return {parse_arm("edge_back"), parse_arm("center_back"), parse_arm("all")};
  if (axis == "fusion") return {parse_arm("add"), parse_arm("concat_weight")};
  throw config_error("unknown cross-validation axis '" + axis +
                     "'; valid: mask-size, feature-strategy, fusion");
}

}  // namespace landseg
