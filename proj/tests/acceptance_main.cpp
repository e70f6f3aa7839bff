// Release acceptance suite: every criterion below prints exactly one
// PASS/FAIL line. The exit code is the number of failed criteria.
//
// The desk-scale runs (criteria 7-10) are sized for a small 2-core machine;
// the whole suite is expected to finish in well under an hour.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "landseg/blockgrid.hpp"
#include "landseg/datamodel.hpp"
#include "landseg/distill.hpp"
#include "landseg/fusion_decoder.hpp"
#include "landseg/losses.hpp"
#include "landseg/metrics.hpp"
#include "landseg/trainer.hpp"
#include "support/oracles.hpp"

using namespace landseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

struct Outcome {
  bool pass = true;
  std::string note;

  void require(bool ok, const std::string& why) {
    if (!ok && pass) {
      pass = false;
      note = why;
    }
  }
};

template <class F>
void criterion(int id, const std::string& title, double time_limit_s, F&& body) {
  Outcome out;
  const auto t0 = Clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (time_limit_s > 0.0 && secs > time_limit_s) {
    out.require(false, "runtime " + std::to_string(secs) + " s exceeds limit");
  }
  if (!out.pass) ++g_failures;
  std::printf("[C%-2d] %s (%.1f s) %s%s\n", id, out.pass ? "PASS" : "FAIL", secs, title.c_str(),
              out.note.empty() ? "" : ("  -- " + out.note).c_str());
  std::fflush(stdout);
}

BinaryMask random_mask(int side, std::uint64_t seed, double density) {
  BinaryMask m(side, side);
  Rng rng(seed);
  for (auto& v : m.v) v = rng.uniform() < density ? 1 : 0;
  return m;
}

Sample sample_with_mask(BinaryMask mask, std::uint64_t seed) {
  Tensor img({3, mask.height, mask.width});
  Rng rng(seed);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  return make_sample(std::move(img), std::move(mask), "acc");
}

// Criterion 7/8 desk-scale configurations, frozen after the calibration
// runs described in the README.
TrainConfig overfit_config() {
  TrainConfig cfg;
  cfg.encoder_channels = 32;
  cfg.epochs = 250;  // 8 samples, batch 4 -> exactly 500 steps
  cfg.lr = 0.06;
  cfg.augment = false;
  cfg.seed = 1;
  return cfg;
}

TrainConfig ablation_base_config() {
  TrainConfig cfg;
  cfg.encoder_channels = 16;
  cfg.epochs = 20;
  cfg.lr = 0.06;
  cfg.seed = 1;
  return cfg;
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "landseg_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  // ------------------------------------------------------------------
  criterion(1, "block classifier agrees with per-pixel counting on 100 masks", 30.0, [](Outcome& out) {
    for (int i = 0; i < 100; ++i) {
      const BinaryMask mask = random_mask(512, 1000 + static_cast<std::uint64_t>(i), 0.02 + 0.009 * i);
      const Sample s = sample_with_mask(mask, 7);
      for (int bs : {8, 16}) {
        const int grid_side = 512 / bs;
        const int area = bs * bs;
        const int lo = static_cast<int>(std::ceil(0.1 * area));
        const int hi = static_cast<int>(std::floor(0.9 * area));
        const BlockGrid grid = classify_blocks(s, bs);
        for (int br = 0; br < grid_side; ++br)
          for (int bc = 0; bc < grid_side; ++bc) {
            int count = 0;
            for (int r = 0; r < bs; ++r)
              for (int c = 0; c < bs; ++c) count += mask.at(br * bs + r, bc * bs + c);
            const int expected = count < lo ? 0 : (count > hi ? 2 : 1);
            if (grid.at(br, bc) != expected) {
              out.require(false, "mismatch at block " + std::to_string(br) + "," + std::to_string(bc));
              return;
            }
          }
      }
    }
  });

  // ------------------------------------------------------------------
  criterion(2, "1000 mask plans: balance, interior exclusion, exact pixel counts", 60.0, [](Outcome& out) {
    Rng rng(42);
    int plans_checked = 0;
    int full_pixel_checks = 0;
    while (plans_checked < 1000) {
      const BinaryMask mask = random_mask(512, 5000 + static_cast<std::uint64_t>(plans_checked), 0.05 + 0.3 * rng.uniform());
      const Sample s = sample_with_mask(mask, 9);
      const int bs = plans_checked % 2 == 0 ? 8 : 16;
      const BlockGrid grid = classify_blocks(s, bs);
      for (int k = 0; k < 10 && plans_checked < 1000; ++k, ++plans_checked) {
        const double fraction = 0.05 + 0.95 * rng.uniform();
        const MaskPlan plan =
            plan_mask(grid, fraction, rng.next_u64(), FeatureStrategy::edge_back, {2.0, 2.0, 2.0});
        out.require(plan.mask_list_0.size() == plan.mask_list_1.size(), "plan not balanced");
        for (const auto& b : plan.mask_list_1)
          out.require(grid.at(b.row, b.col) == kBlockEdge, "non-edge block in mask_list_1");
        for (const auto& b : plan.mask_list_0)
          out.require(grid.at(b.row, b.col) == kBlockBackground, "non-background block in mask_list_0");
        for (const auto& b : plan.mask_list_1)
          out.require(grid.at(b.row, b.col) != kBlockInterior, "interior block selected");

        // exact painted-pixel count: the out-of-range fill guarantees every
        // painted value differs from the [0,1] image
        if (full_pixel_checks < 60 && !plan.empty()) {
          ++full_pixel_checks;
          const Sample masked = apply_mask(s, plan);
          std::size_t diff = 0;
          for (std::size_t i = 0; i < masked.image.size(); ++i) diff += masked.image[i] != s.image[i];
          out.require(diff == plan.total_blocks() * static_cast<std::size_t>(bs) * bs * 3,
                      "apply_mask changed " + std::to_string(diff) + " values");
          out.require(masked.mask == s.mask, "apply_mask touched the label mask");
        }
        if (!out.pass) return;
      }
    }
  });

  // ------------------------------------------------------------------
  criterion(3, "EMA algebra over 1000 updates and geometric convergence", 30.0, [](Outcome& out) {
    Rng rng(3);
    ParamSet teacher, student;
    for (int t = 0; t < 4; ++t) {
      Tensor a({3, 5}), b({3, 5});
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
      }
      teacher["p" + std::to_string(t)] = a;
      student["p" + std::to_string(t)] = b;
    }
    const double lambda = 0.996;
    for (int step = 0; step < 1000; ++step) {
      // drift the student a little each step
      for (auto& [k, v] : student)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += 0.01 * rng.normal();
      const ParamSet prev = teacher;
      ema_update(teacher, student, lambda);
      for (const auto& [k, v] : teacher) {
        const Tensor& p = prev.at(k);
        const Tensor& s = student.at(k);
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double expect = lambda * p[i] + (1.0 - lambda) * s[i];
          if (std::abs(v[i] - expect) > 1e-12) {
            out.require(false, "EMA deviates by " + std::to_string(std::abs(v[i] - expect)));
            return;
          }
        }
      }
    }
    // geometric convergence with a constant student
    ParamSet t0, s0;
    t0["w"] = Tensor::full({1}, 1.0);
    s0["w"] = Tensor::full({1}, 0.0);
    for (int k = 0; k < 100; ++k) ema_update(t0, s0, lambda);
    out.require(std::abs(t0["w"][0] - std::pow(lambda, 100)) < 1e-9,
                "geometric decay off by " + std::to_string(std::abs(t0["w"][0] - std::pow(lambda, 100))));
  });

  // ------------------------------------------------------------------
  criterion(4, "gradient checks vs central differences (h=1e-5, rel < 1e-4)", 300.0, [](Outcome& out) {
    Rng rng(4);
    double worst = 0.0;

    for (int inst = 0; inst < 20; ++inst) {  // mfm
      const int n = 1 + static_cast<int>(rng.uniform_int(0, 3));
      const int c = 1 + static_cast<int>(rng.uniform_int(0, 4));
      Eigen::MatrixXd recon(n, c), labels(n, c);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          recon(i, j) = rng.normal();
          labels(i, j) = rng.normal();
        }
      const Eigen::MatrixXd g = mfm_loss_grad(recon, labels);
      auto eval = [&]() { return mfm_loss(recon, labels).value; };
      worst = std::max(worst, oracles::fd_max_rel_error(eval, recon.data(),
                                                        static_cast<std::size_t>(recon.size()), g.data()));
    }
    out.require(worst < 1e-4, "mfm worst rel err " + std::to_string(worst));

    worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {  // supcon
      const int n = 2 + static_cast<int>(rng.uniform_int(0, 2));
      const int m = 1 + static_cast<int>(rng.uniform_int(0, 3));
      const int c = 2 + static_cast<int>(rng.uniform_int(0, 3));
      const double tau = inst % 2 == 0 ? 0.5 : 0.07;
      Eigen::MatrixXd pos(n, c), neg(m, c);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) pos(i, j) = 0.5 * rng.normal();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) neg(i, j) = 0.5 * rng.normal();
      SupconGrads grads;
      supcon_loss({pos, neg, tau}, &grads);
      auto eval = [&]() { return supcon_loss({pos, neg, tau}).value; };
      worst = std::max(worst, oracles::fd_max_rel_error(eval, pos.data(), static_cast<std::size_t>(pos.size()),
                                                        grads.d_positives.data()));
      worst = std::max(worst, oracles::fd_max_rel_error(eval, neg.data(), static_cast<std::size_t>(neg.size()),
                                                        grads.d_negatives.data()));
    }
    out.require(worst < 1e-4, "supcon worst rel err " + std::to_string(worst));

    worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {  // ce
      const int h = 2 + static_cast<int>(rng.uniform_int(0, 2));
      const int w = 2 + static_cast<int>(rng.uniform_int(0, 2));
      Tensor pred({h, w});
      BinaryMask target(h, w);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = 0.05 + 0.9 * rng.uniform();
        target.v[i] = rng.uniform() < 0.5 ? 1 : 0;
      }
      const Tensor g = ce_loss_grad(pred, target);
      auto eval = [&]() { return ce_loss(pred, target); };
      worst = std::max(worst, oracles::fd_max_rel_error(eval, pred.data(), pred.size(), g.data()));
    }
    out.require(worst < 1e-4, "ce worst rel err " + std::to_string(worst));

    worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {  // fuse + decode composite
      DecoderNet dec({4, 0.0}, 100 + static_cast<std::uint64_t>(inst));
      Fusion fusion(FusionMode::add, 4, 7);
      Tensor seg({1, 4, 8, 8}), enh({1, 4, 8, 8}), probe({1, 1, 64, 64});
      for (std::size_t i = 0; i < seg.size(); ++i) {
        seg[i] = rng.normal();
        enh[i] = rng.normal();
      }
      for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = rng.normal();

      std::vector<nn::ParamRef> params;
      std::vector<nn::BufferRef> buffers;
      dec.collect("dec", params, buffers);
      for (auto& p : params) p.grad->zero();

      dec.forward(fusion.forward(seg, enh, nn::Mode::train), nn::Mode::train);
      const Tensor d_fused = dec.backward(probe);
      Tensor d_fused_copy = d_fused;
      const auto [d_seg, d_enh] = fusion.backward(std::move(d_fused_copy));

      auto eval = [&]() {
        const Tensor p = dec.forward(fusion.forward(seg, enh, nn::Mode::train), nn::Mode::train);
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * probe[i];
        return acc;
      };
      worst = std::max(worst, oracles::fd_max_rel_error(eval, seg.data(), seg.size(), d_seg.data(),
                                                        1e-5, 1e-6, /*filter_kinks=*/true));
      worst = std::max(worst, oracles::fd_max_rel_error(eval, enh.data(), enh.size(), d_enh.data(),
                                                        1e-5, 1e-6, /*filter_kinks=*/true));
      for (auto& p : params)
        worst = std::max(worst, oracles::fd_max_rel_error(eval, p.value->data(), p.value->size(),
                                                          p.grad->data(), 1e-5, 1e-6,
                                                          /*filter_kinks=*/true));
    }
    out.require(worst < 1e-4, "fuse+decode worst rel err " + std::to_string(worst));
  });

  // ------------------------------------------------------------------
  criterion(5, "loss hand values confirmed by independent oracles", 30.0, [](Outcome& out) {
    // supcon example 1: two identical unit positives, one orthogonal negative
    {
      Eigen::MatrixXd pos(2, 3), neg(1, 3);
      pos << 1, 0, 0, 1, 0, 0;
      neg << 0, 1, 0;
      const double oracle = oracles::supcon_bruteforce(pos, neg, 1.0);
      out.require(std::abs(oracle - 0.31326168751822286) < 1e-12, "oracle disagrees with hand value 1");
      out.require(std::abs(supcon_loss({pos, neg, 1.0}).value - oracle) < 1e-6, "supcon example 1");
    }
    // supcon example 2: mutually orthogonal, N = 2
    {
      Eigen::MatrixXd pos(2, 4), neg(2, 4);
      pos << 1, 0, 0, 0, 0, 1, 0, 0;
      neg << 0, 0, 1, 0, 0, 0, 0, 1;
      const double oracle = oracles::supcon_bruteforce(pos, neg, 1.0);
      out.require(std::abs(oracle - std::log(3.0)) < 1e-12, "oracle disagrees with hand value 2");
      out.require(std::abs(supcon_loss({pos, neg, 1.0}).value - oracle) < 1e-6, "supcon example 2");
    }
    // supcon example 3: tau -> infinity limit at tau = 1e6
    {
      Rng rng(5);
      Eigen::MatrixXd pos(2, 5), neg(2, 5);
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 5; ++j) {
          pos(i, j) = rng.normal();
          neg(i, j) = rng.normal();
        }
      }
      pos = normalize_rows(pos);
      neg = normalize_rows(neg);
      const double oracle = oracles::supcon_bruteforce(pos, neg, 1e6);
      out.require(std::abs(supcon_loss({pos, neg, 1e6}).value - oracle) < 1e-6, "supcon example 3");
      out.require(std::abs(oracle - std::log(3.0)) < 1e-5, "tau limit not approached");
    }
    // ce hand value
    {
      BinaryMask ones(1, 1);
      ones.at(0, 0) = 1;
      Tensor half({1, 1});
      half[0] = 0.5;
      out.require(std::abs(ce_loss(half, ones) - std::log(2.0)) < 1e-9, "ce(1, 0.5) != ln 2");
    }
    // mfm exact values
    {
      Eigen::MatrixXd r1(1, 1), l1(1, 1);
      r1(0, 0) = 3.0;
      l1(0, 0) = 1.0;
      out.require(mfm_loss(r1, l1).value == 4.0, "mfm (3,1) != 4");
      Eigen::MatrixXd r2(2, 1), l2(2, 1);
      r2(0, 0) = 2.0;
      l2(0, 0) = 1.0;
      r2(1, 0) = 0.0;
      l2(1, 0) = 1.0;
      out.require(mfm_loss(r2, l2).value == 1.0, "mfm diffs (1,-1) != 1");
      out.require(mfm_loss(l2, l2).value == 0.0, "mfm identity != 0");
      out.require(mfm_pair_loss(4.0, 1.0) == 5.0, "pair loss");
    }
  });

  // ------------------------------------------------------------------
  criterion(6, "metrics oracle on 100 random pairs plus the worked example", 60.0, [](Outcome& out) {
    for (int i = 0; i < 100; ++i) {
      const BinaryMask pred = random_mask(64, 9000 + static_cast<std::uint64_t>(i), 0.4);
      const BinaryMask truth = random_mask(64, 9500 + static_cast<std::uint64_t>(i), 0.3);
      Confusion c;
      accumulate(pred, truth, c);
      const MetricReport r = report(c);
      const auto o = oracles::count_pixels(pred, truth);
      const double total = static_cast<double>(o.tp + o.tn + o.fp + o.fn);
      auto close = [&](const std::optional<double>& got, double expect) {
        return got.has_value() && std::abs(*got - expect) <= 1e-12;
      };
      out.require(close(r.pa, (o.tp + o.tn) / total), "pa mismatch");
      if (o.tp + o.fp > 0) out.require(close(r.precision, static_cast<double>(o.tp) / (o.tp + o.fp)), "precision mismatch");
      if (o.tp + o.fn > 0) out.require(close(r.recall, static_cast<double>(o.tp) / (o.tp + o.fn)), "recall mismatch");
      if (o.tp + o.fp + o.fn > 0)
        out.require(close(r.iou_1, static_cast<double>(o.tp) / (o.tp + o.fp + o.fn)), "iou mismatch");
      if (!out.pass) return;
    }
    Confusion c;
    c.tp = 30;
    c.fp = 10;
    c.fn = 20;
    c.tn = 40;
    const MetricReport r = report(c);
    out.require(std::abs(*r.pa - 0.7) < 1e-9, "worked pa");
    out.require(std::abs(*r.precision - 0.75) < 1e-9, "worked precision");
    out.require(std::abs(*r.recall - 0.6) < 1e-9, "worked recall");
    out.require(std::abs(*r.iou_1 - 0.5) < 1e-9, "worked iou");
    out.require(std::abs(*r.miou - 0.5 * (0.5 + 40.0 / 70.0)) < 1e-9, "worked miou");
    out.require(std::abs(*r.f1 - 2.0 / 3.0) < 1e-9, "worked f1");
  });

  // ------------------------------------------------------------------
  // Criteria 7 and 9 share one desk-scale training run.
  RunRecord overfit_record;
  criterion(7, "desk-scale overfit: train 1-IoU >= 0.9 within 500 steps", 600.0, [&](Outcome& out) {
    SynthConfig sc;
    sc.n_positive = 8;
    sc.n_negative = 0;
    sc.seed = 101;
    DatasetSplit split;
    split.train = generate_synthetic(sc);

    const TrainConfig cfg = overfit_config();
    TrainResult res = train(cfg, split, (work / "overfit").string());
    overfit_record = res.record;
    out.require(static_cast<int>(res.record.losses.size()) == 500,
                "expected 500 steps, got " + std::to_string(res.record.losses.size()));

    std::vector<Sample> train_eval;
    for (const auto& s : split.train) {
      Sample t = resize_to_canvas(s);
      equalize_channels(t.image);
      train_eval.push_back(std::move(t));
    }
    const MetricReport r = evaluate(*res.model, train_eval);
    const double iou = r.iou_1 ? *r.iou_1 : 0.0;
    out.require(iou >= 0.9, "train 1-IoU = " + std::to_string(iou));
    std::printf("      overfit train 1-IoU = %.4f\n", iou);
  });

  // ------------------------------------------------------------------
  criterion(8, "ablation direction: mean test 1-IoU(B+M+C) >= mean(B) - 0.02", 0.0, [&](Outcome& out) {
    SynthConfig sc;
    sc.n_positive = 150;
    sc.n_negative = 50;
    sc.seed = 404;
    const double ratios[3] = {0.7, 0.05, 0.25};
    const DatasetSplit split = split_dataset(generate_synthetic(sc), ratios, 11);

    const AblationTable table = ablate(ablation_base_config(), {parse_arm("B"), parse_arm("B+M+C")},
                                       {1, 2, 3}, split, (work / "ablation").string());
    std::printf("%s", table.to_markdown().c_str());
    const auto mean_b = table.mean("B", "iou_1");
    const auto mean_bmc = table.mean("B+M+C", "iou_1");
    out.require(mean_b.has_value() && mean_bmc.has_value(), "undefined mean 1-IoU");
    if (mean_b && mean_bmc) {
      std::printf("      mean 1-IoU: B = %.4f, B+M+C = %.4f\n", *mean_b, *mean_bmc);
      out.require(*mean_bmc >= *mean_b - 0.02,
                  "B+M+C mean " + std::to_string(*mean_bmc) + " < B mean - 0.02");
    }
  });

  // ------------------------------------------------------------------
  criterion(9, "convergence: 50-step loss average at step 500 below step 50", 30.0, [&](Outcome& out) {
    const auto& losses = overfit_record.losses;
    out.require(losses.size() >= 500, "overfit run too short for the moving average");
    if (losses.size() < 500) return;
    auto ma50 = [&](std::size_t end) {  // mean of steps (end-49 .. end), 1-based
      double acc = 0.0;
      for (std::size_t i = end - 50; i < end; ++i) acc += losses[i].bundle.total;
      return acc / 50.0;
    };
    const double early = ma50(50);
    const double late = ma50(500);
    std::printf("      loss MA50: step 50 = %.4f, step 500 = %.4f\n", early, late);
    out.require(std::isfinite(early) && std::isfinite(late), "non-finite losses");
    out.require(late < early, "training loss did not decrease");
  });

  // ------------------------------------------------------------------
  criterion(10, "determinism: identical seeds give byte-identical losses.csv", 600.0, [&](Outcome& out) {
    SynthConfig sc;
    sc.n_positive = 8;
    sc.n_negative = 0;
    sc.seed = 77;
    DatasetSplit split;
    split.train = generate_synthetic(sc);

    TrainConfig cfg;
    cfg.encoder_channels = 16;
    cfg.epochs = 25;
    cfg.seed = 5;

    train(cfg, split, (work / "det_a").string());
    train(cfg, split, (work / "det_b").string());
    auto slurp = [](const fs::path& p) {
      std::ifstream f(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    const std::string a = slurp(work / "det_a" / "losses.csv");
    const std::string b = slurp(work / "det_b" / "losses.csv");
    out.require(!a.empty(), "first run produced no losses.csv");
    out.require(a == b, "losses.csv files differ");
  });

  std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              g_failures);
  return g_failures;
}
