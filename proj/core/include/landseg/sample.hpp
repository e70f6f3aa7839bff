#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "landseg/common.hpp"
#include "landseg/tensor.hpp"

namespace landseg {

/// Binary label raster, one byte per pixel, values 0/1.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> v;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), v(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int r, int c) { return v[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return v[static_cast<std::size_t>(r) * width + c]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto x : v) n += x;
    return n;
  }

  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && v == o.v;
  }
};

/// One image/label pair. `image` is (3, H, W) with values in [0, 1];
/// `mask` marks landslide pixels. The pipeline contract is 512x512 after
/// preprocessing; freshly loaded samples may be any size.
struct Sample {
  Tensor image;  // (3, H, W)
  BinaryMask mask;
  std::string id;
  bool is_positive = false;

  int height() const { return image.rank() == 3 ? image.dim(1) : 0; }
  int width() const { return image.rank() == 3 ? image.dim(2) : 0; }
};

inline Sample make_sample(Tensor image, BinaryMask mask, std::string id) {
  check(image.rank() == 3 && image.dim(0) == 3, "Sample: image must be (3,H,W)");
  check(image.dim(1) == mask.height && image.dim(2) == mask.width,
        "Sample: image and mask dimensions differ");
  for (auto m : mask.v) check(m == 0 || m == 1, "Sample: mask values must be 0/1");
  Sample s;
  s.is_positive = mask.count() > 0;
  s.image = std::move(image);
  s.mask = std::move(mask);
  s.id = std::move(id);
  return s;
}

/// Validates the Sample invariants; throws on violation.
inline void validate(const Sample& s) {
  check(s.image.rank() == 3 && s.image.dim(0) == 3, "Sample: image must be (3,H,W)");
  check(s.image.dim(1) == s.mask.height && s.image.dim(2) == s.mask.width,
        "Sample: image and mask dimensions differ");
  for (auto m : s.mask.v) check(m == 0 || m == 1, "Sample: mask values must be 0/1");
  check(s.is_positive == (s.mask.count() > 0), "Sample: is_positive flag inconsistent with mask");
}

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  double ratios[3] = {0.6, 0.2, 0.2};
};

/// Configuration for the bundled synthetic low-contrast blob dataset.
struct SynthConfig {
  int n_positive = 8;
  int n_negative = 0;
  int blob_count_min = 1;
  int blob_count_max = 3;
  double edge_blur_sigma = 1.5;    // pixels
  double texture_contrast = 0.15;  // in [0,1]
  std::uint64_t seed = 1;
};

inline void validate(const SynthConfig& c) {
  if (c.n_positive < 0 || c.n_negative < 0) throw config_error("SynthConfig: counts must be >= 0");
  if (c.blob_count_min < 1) throw config_error("SynthConfig: blob count lower bound must be >= 1");
  if (c.blob_count_max < c.blob_count_min) throw config_error("SynthConfig: empty blob count range");
  if (c.edge_blur_sigma < 0.0) throw config_error("SynthConfig: edge_blur_sigma must be >= 0");
  if (c.texture_contrast < 0.0 || c.texture_contrast > 1.0)
    throw config_error("SynthConfig: texture_contrast must be in [0,1]");
}

}  // namespace landseg
