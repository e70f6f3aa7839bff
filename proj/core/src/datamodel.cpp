#include "landseg/datamodel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "landseg/png_io.hpp"
#include "landseg/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace landseg {

namespace {

constexpr int kCanvas = 512;
constexpr int kBins = 256;

inline int bin_of(double v) {
  int b = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * (kBins - 1)));
  return std::clamp(b, 0, kBins - 1);
}

}  // namespace

void equalize_channels(Tensor& image) {
  check(image.rank() == 3 && image.dim(0) == 3, "equalize_channels: image must be (3,H,W)");
  const int h = image.dim(1);
  const int w = image.dim(2);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < 3; ++c) {
    double* ch = image.data() + static_cast<std::size_t>(c) * n;
    double lo = ch[0], hi = ch[0];
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, ch[i]);
      hi = std::max(hi, ch[i]);
    }
    if (lo == hi) continue;  // degenerate channel: identity

    std::array<std::size_t, kBins> hist{};
    for (std::size_t i = 0; i < n; ++i) hist[static_cast<std::size_t>(bin_of(ch[i]))]++;
    std::array<double, kBins> cdf{};
    std::size_t acc = 0;
    for (int b = 0; b < kBins; ++b) {
      acc += hist[static_cast<std::size_t>(b)];
      cdf[static_cast<std::size_t>(b)] = static_cast<double>(acc) / static_cast<double>(n);
    }
    for (std::size_t i = 0; i < n; ++i) ch[i] = cdf[static_cast<std::size_t>(bin_of(ch[i]))];
  }
}

namespace {

// Maps destination coordinates to source coordinates for each transform.
inline void transform_coords(Augment a, int h, int w, int r, int c, int& sr, int& sc) {
  switch (a) {
    case Augment::identity: sr = r; sc = c; break;
    case Augment::hflip:    sr = r; sc = w - 1 - c; break;
    case Augment::vflip:    sr = h - 1 - r; sc = c; break;
    // rot90 = 90 degrees counterclockwise; square canvas only.
    case Augment::rot90:    sr = c; sc = w - 1 - r; break;
    case Augment::rot180:   sr = h - 1 - r; sc = w - 1 - c; break;
    case Augment::rot270:   sr = h - 1 - c; sc = r; break;
  }
}

}  // namespace

Sample augment_sample(const Sample& s, Augment a) {
  const int h = s.height();
  const int w = s.width();
  if (a == Augment::rot90 || a == Augment::rot270) {
    check(h == w, "augment_sample: rotations require a square canvas");
  }
  Sample out = s;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        int sr = 0, sc = 0;
        transform_coords(a, h, w, r, col, sr, sc);
        out.image.at(c, r, col) = s.image.at(c, sr, sc);
      }
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col) {
      int sr = 0, sc = 0;
      transform_coords(a, h, w, r, col, sr, sc);
      out.mask.at(r, col) = s.mask.at(sr, sc);
    }
  return out;
}

Sample resize_to_canvas(const Sample& s) {
  const int h = s.height();
  const int w = s.width();
  if (h == kCanvas && w == kCanvas) return s;

  // Zero-pad right/bottom to square so the content keeps its aspect ratio.
  const int side = std::max(h, w);
  Tensor padded({3, side, side});
  BinaryMask padded_mask(side, side);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) padded.at(c, r, col) = s.image.at(c, r, col);
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col) padded_mask.at(r, col) = s.mask.at(r, col);

  Sample out;
  out.id = s.id;
  out.image = Tensor({3, kCanvas, kCanvas});
  out.mask = BinaryMask(kCanvas, kCanvas);

  const double scale = static_cast<double>(side) / kCanvas;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < kCanvas; ++r)
      for (int col = 0; col < kCanvas; ++col) {
        const double sy = (r + 0.5) * scale - 0.5;
        const double sx = (col + 0.5) * scale - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, side - 1);
        const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, side - 1);
        const int y1 = std::min(y0 + 1, side - 1);
        const int x1 = std::min(x0 + 1, side - 1);
        const double fy = std::clamp(sy - y0, 0.0, 1.0);
        const double fx = std::clamp(sx - x0, 0.0, 1.0);
        out.image.at(c, r, col) = (1 - fy) * ((1 - fx) * padded.at(c, y0, x0) + fx * padded.at(c, y0, x1)) +
                                  fy * ((1 - fx) * padded.at(c, y1, x0) + fx * padded.at(c, y1, x1));
      }
  for (int r = 0; r < kCanvas; ++r)
    for (int col = 0; col < kCanvas; ++col) {
      const int sy = std::clamp(static_cast<int>(std::lround((r + 0.5) * scale - 0.5)), 0, side - 1);
      const int sx = std::clamp(static_cast<int>(std::lround((col + 0.5) * scale - 0.5)), 0, side - 1);
      out.mask.at(r, col) = padded_mask.at(sy, sx);
    }
  out.is_positive = out.mask.count() > 0;
  return out;
}

Sample preprocess(const Sample& s, bool augment, std::uint64_t seed) {
  validate(s);
  Sample out = resize_to_canvas(s);
  equalize_channels(out.image);
  if (augment) {
    Rng rng(seed);
    const auto pick = static_cast<Augment>(rng.uniform_int(0, 5));
    out = augment_sample(out, pick);
  }
  out.is_positive = out.mask.count() > 0;
  return out;
}

namespace {

// Largest-remainder apportionment of n into three parts; ties favor
// earlier splits (train, then val, then test).
std::array<std::size_t, 3> apportion(std::size_t n, const double ratios[3]) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::floor(exact));
    rem[static_cast<std::size_t>(i)] = exact - std::floor(exact);
    assigned += out[static_cast<std::size_t>(i)];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[static_cast<std::size_t>(i)] > rem[static_cast<std::size_t>(best)]) best = i;
    out[static_cast<std::size_t>(best)]++;
    rem[static_cast<std::size_t>(best)] = -1.0;
    assigned++;
  }
  return out;
}

}  // namespace

DatasetSplit split_dataset(std::vector<Sample> samples, const double ratios[3], std::uint64_t seed,
                           std::vector<std::string>* warnings) {
  if (samples.empty()) throw data_error("empty dataset");
  double sum = ratios[0] + ratios[1] + ratios[2];
  check(ratios[0] > 0 && ratios[1] > 0 && ratios[2] > 0, "split_dataset: ratios must be positive");
  check(std::abs(sum - 1.0) < 1e-9, "split_dataset: ratios must sum to 1");

  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (samples[i].is_positive ? pos_idx : neg_idx).push_back(i);

  Rng rng(seed);
  Rng pos_rng = rng.fork(1);
  Rng neg_rng = rng.fork(2);
  pos_rng.shuffle(pos_idx);
  neg_rng.shuffle(neg_idx);

  DatasetSplit split;
  split.ratios[0] = ratios[0];
  split.ratios[1] = ratios[1];
  split.ratios[2] = ratios[2];

  auto distribute = [&](const std::vector<std::size_t>& idx) {
    const auto counts = apportion(idx.size(), ratios);
    std::size_t p = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) split.train.push_back(samples[idx[p++]]);
    for (std::size_t i = 0; i < counts[1]; ++i) split.val.push_back(samples[idx[p++]]);
    for (std::size_t i = 0; i < counts[2]; ++i) split.test.push_back(samples[idx[p++]]);
  };
  distribute(pos_idx);
  distribute(neg_idx);

  if (warnings) {
    if (split.val.empty()) warnings->push_back("validation split is empty");
    if (split.test.empty()) warnings->push_back("test split is empty");
  }
  if (split.val.empty() || split.test.empty())
    std::fprintf(stderr, "[landseg] warning: dataset too small, empty split produced\n");
  return split;
}

namespace {

// Value noise: coarse seeded lattice bilinearly upsampled to the canvas.
void add_value_noise(std::vector<double>& field, int side, Rng& rng, int grid, double amp) {
  std::vector<double> lattice(static_cast<std::size_t>(grid + 1) * (grid + 1));
  for (auto& v : lattice) v = rng.normal();
  const double cell = static_cast<double>(side) / grid;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const double gy = r / cell;
      const double gx = c / cell;
      const int y0 = std::min(static_cast<int>(gy), grid - 1);
      const int x0 = std::min(static_cast<int>(gx), grid - 1);
      const double fy = gy - y0;
      const double fx = gx - x0;
      const auto at = [&](int y, int x) { return lattice[static_cast<std::size_t>(y) * (grid + 1) + x]; };
      const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                       fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      field[static_cast<std::size_t>(r) * side + c] += amp * v;
    }
}

struct Blob {
  double cx, cy;
  double radius;
  std::array<double, 3> wave_amp;
  std::array<double, 3> wave_phase;

  // Boundary radius in direction theta; star-convex, low frequency.
  double edge_radius(double theta) const {
    double r = 1.0;
    for (int k = 0; k < 3; ++k) r += wave_amp[static_cast<std::size_t>(k)] * std::cos((k + 2) * theta + wave_phase[static_cast<std::size_t>(k)]);
    return radius * r;
  }
};

Sample synth_one(const SynthConfig& cfg, bool positive, int index, Rng sample_rng) {
  const int side = kCanvas;
  const std::size_t n = static_cast<std::size_t>(side) * side;

  // Correlated background: shared luminance field plus a small per-channel part.
  Rng bg_rng = sample_rng.fork(10);
  std::vector<double> shared(n, 0.0);
  add_value_noise(shared, side, bg_rng, 8, 0.5);
  add_value_noise(shared, side, bg_rng, 32, 0.3);
  add_value_noise(shared, side, bg_rng, 128, 0.2);

  const double base_gray = 0.35 + 0.2 * bg_rng.uniform();
  Tensor image({3, side, side});
  for (int c = 0; c < 3; ++c) {
    std::vector<double> chan(n, 0.0);
    add_value_noise(chan, side, bg_rng, 64, 1.0);
    double* dst = image.data() + static_cast<std::size_t>(c) * n;
    for (std::size_t i = 0; i < n; ++i)
      dst[i] = std::clamp(base_gray + 0.08 * shared[i] + 0.02 * chan[i], 0.0, 1.0);
  }

  BinaryMask mask(side, side);
  if (positive) {
    Rng blob_rng = sample_rng.fork(20);
    const int blob_count =
        static_cast<int>(blob_rng.uniform_int(cfg.blob_count_min, cfg.blob_count_max));
    std::vector<Blob> blobs;
    for (int b = 0; b < blob_count; ++b) {
      Blob blob;
      blob.cx = side * (0.3 + 0.4 * blob_rng.uniform());
      blob.cy = side * (0.3 + 0.4 * blob_rng.uniform());
      blob.radius = 40.0 + 50.0 * blob_rng.uniform();
      for (int k = 0; k < 3; ++k) {
        blob.wave_amp[static_cast<std::size_t>(k)] = 0.15 * blob_rng.uniform() / (k + 2);
        blob.wave_phase[static_cast<std::size_t>(k)] = 2.0 * M_PI * blob_rng.uniform();
      }
      blobs.push_back(blob);
    }

    // Low-contrast color shift of the blob interior; the mask edge stays
    // crisp while the optical edge is blurred. Slide scars differ from the
    // background in a consistent direction (bare darker soil), jittered a
    // little per sample.
    std::array<double, 3> shift{-0.55, -0.6, -0.4};
    double norm = 0.0;
    for (auto& v : shift) {
      v += 0.3 * blob_rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (auto& v : shift) v = v / norm * cfg.texture_contrast;

    std::vector<double> fg_tex(n, 0.0);
    add_value_noise(fg_tex, side, blob_rng, 48, 1.0);

    const double soft = std::max(cfg.edge_blur_sigma, 1e-6);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        double alpha = 1.0;
        bool inside = false;
        for (const auto& blob : blobs) {
          const double dy = r - blob.cy;
          const double dx = c - blob.cx;
          const double dist = std::sqrt(dx * dx + dy * dy);
          const double edge = blob.edge_radius(std::atan2(dy, dx));
          // membership is ~1 deep inside, 0.5 on the mask edge, ~0 outside
          const double membership = 1.0 / (1.0 + std::exp((dist - edge) / soft));
          alpha *= 1.0 - membership;
          inside = inside || dist <= edge;
        }
        alpha = 1.0 - alpha;  // union of per-blob soft memberships
        if (inside) mask.at(r, c) = 1;
        if (alpha > 0.0) {
          const std::size_t px = static_cast<std::size_t>(r) * side + c;
          for (int ch = 0; ch < 3; ++ch) {
            double& v = image.data()[static_cast<std::size_t>(ch) * n + px];
            v = std::clamp(v + alpha * (shift[static_cast<std::size_t>(ch)] + 0.03 * fg_tex[px]), 0.0, 1.0);
          }
        }
      }
  }

  // Quantize to the 8-bit grid so that PNG round-trips are exact.
  for (std::size_t i = 0; i < image.size(); ++i)
    image[i] = std::lround(image[i] * 255.0) / 255.0;

  return make_sample(std::move(image), std::move(mask),
                     (positive ? "synth_p_" : "synth_n_") + std::to_string(index));
}

}  // namespace

std::vector<Sample> generate_synthetic(const SynthConfig& config) {
  validate(config);
  Rng master(config.seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(config.n_positive + config.n_negative));
  for (int i = 0; i < config.n_positive; ++i)
    out.push_back(synth_one(config, true, i, master.fork(static_cast<std::uint64_t>(i))));
  for (int i = 0; i < config.n_negative; ++i)
    out.push_back(synth_one(config, false, i, master.fork(0x100000 + static_cast<std::uint64_t>(i))));
  return out;
}

void save_dataset(const std::vector<Sample>& samples, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  for (const auto& s : samples) {
    const int h = s.height();
    const int w = s.width();
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<std::uint8_t> rgb(n * 3);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int ch = 0; ch < 3; ++ch)
          rgb[(static_cast<std::size_t>(r) * w + c) * 3 + ch] = static_cast<std::uint8_t>(
              std::lround(std::clamp(s.image.at(ch, r, c), 0.0, 1.0) * 255.0));
    std::vector<std::uint8_t> gray(n);
    for (std::size_t i = 0; i < n; ++i) gray[i] = s.mask.v[i] ? 255 : 0;
    png::write_rgb8((fs::path(dir) / "images" / (s.id + ".png")).string(), h, w, rgb);
    png::write_gray8((fs::path(dir) / "masks" / (s.id + ".png")).string(), h, w, gray);
  }
}

Sample load_sample(const std::string& image_png, const std::string& mask_png, const std::string& id) {
  const auto img = png::read(image_png);
  if (img.channels != 3) throw data_error("image must be RGB: " + image_png);
  const auto msk = png::read(mask_png);
  if (msk.channels != 1) throw data_error("mask must be grayscale: " + mask_png);
  if (msk.height != img.height || msk.width != img.width)
    throw data_error("image/mask dimensions differ for id " + id);

  Tensor image({3, img.height, img.width});
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < 3; ++ch)
      image.data()[static_cast<std::size_t>(ch) * n + i] = img.pixels[i * 3 + static_cast<std::size_t>(ch)] / 255.0;

  BinaryMask mask(img.height, img.width);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = msk.pixels[i];
    if (v != 0 && v != 255) throw data_error("mask pixels must be 0 or 255: " + mask_png);
    mask.v[i] = v == 255 ? 1 : 0;
  }
  return make_sample(std::move(image), std::move(mask), id);
}

std::vector<Sample> load_dataset(const std::string& dir) {
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw data_error("dataset directory must contain images/ and masks/: " + dir);

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images))
    if (entry.path().extension() == ".png") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw data_error("no PNG images found in " + images.string());

  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto mask_path = masks / (id + ".png");
    if (!fs::exists(mask_path)) throw data_error("missing mask for id " + id);
    out.push_back(load_sample((images / (id + ".png")).string(), mask_path.string(), id));
  }
  return out;
}

void save_manifest(const DatasetSplit& split, const std::string& path) {
  json j;
  auto ids = [](const std::vector<Sample>& v) {
    std::vector<std::string> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(s.id);
    return out;
  };
  j["train"] = ids(split.train);
  j["val"] = ids(split.val);
  j["test"] = ids(split.test);
  j["ratios"] = {split.ratios[0], split.ratios[1], split.ratios[2]};
  std::ofstream f(path);
  if (!f) throw data_error("cannot write manifest: " + path);
  f << j.dump(2) << "\n";
}

DatasetSplit apply_manifest(const std::vector<Sample>& samples, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot read manifest: " + path);
  json j;
  f >> j;

  std::unordered_map<std::string, const Sample*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;

  DatasetSplit split;
  if (j.contains("ratios") && j["ratios"].is_array() && j["ratios"].size() == 3)
    for (int i = 0; i < 3; ++i) split.ratios[i] = j["ratios"][static_cast<std::size_t>(i)].get<double>();

  auto gather = [&](const char* key, std::vector<Sample>& dst) {
    if (!j.contains(key)) return;
    for (const auto& id : j[key]) {
      const auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) throw data_error("manifest id not in dataset: " + id.get<std::string>());
      dst.push_back(*it->second);
    }
  };
  gather("train", split.train);
  gather("val", split.val);
  gather("test", split.test);
  return split;
}

}  // namespace landseg
