#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "landseg/datamodel.hpp"
#include "landseg/rng.hpp"
#include "support/oracles.hpp"

using namespace landseg;
namespace fs = std::filesystem;

namespace {

Sample tiny_sample(int h, int w, bool positive, const std::string& id, std::uint64_t seed = 7) {
  Rng rng(seed);
  Tensor img({3, h, w});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  BinaryMask mask(h, w);
  if (positive) mask.at(h / 2, w / 2) = 1;
  return make_sample(std::move(img), std::move(mask), id);
}

}  // namespace

TEST_CASE("equalization of a constant image is the identity") {
  Tensor img = Tensor::full({3, 4, 4}, 0.5);
  Tensor before = img;
  equalize_channels(img);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(img[i] == before[i]);
}

TEST_CASE("equalization maps the two-level toy image to its cumulative histogram") {
  // 4-pixel channel, half at 0.25 and half at 0.75. Hand-applied mapping:
  // cdf(0.25) = 2/4 = 0.5, cdf(0.75) = 4/4 = 1.0.
  Tensor img({3, 2, 2});
  for (int c = 0; c < 3; ++c) {
    img.at(c, 0, 0) = 0.25;
    img.at(c, 0, 1) = 0.25;
    img.at(c, 1, 0) = 0.75;
    img.at(c, 1, 1) = 0.75;
  }
  equalize_channels(img);
  for (int c = 0; c < 3; ++c) {
    CHECK(img.at(c, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(img.at(c, 0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(img.at(c, 1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(img.at(c, 1, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("equalization preserves the within-channel intensity ordering") {
  Rng rng(11);
  Tensor img({3, 16, 16});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  Tensor before = img;
  equalize_channels(img);
  const std::size_t n = 16 * 16;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; j += 7) {
        const double a0 = before.data()[c * n + i], b0 = before.data()[c * n + j];
        const double a1 = img.data()[c * n + i], b1 = img.data()[c * n + j];
        if (a0 < b0) CHECK(a1 <= b1);
        if (a0 == b0) CHECK(a1 == b1);
      }
}

TEST_CASE("augmentation applies the same transform to image and mask") {
  Sample s = tiny_sample(8, 8, true, "s");
  s.mask.at(1, 2) = 1;
  s.mask.at(5, 7) = 1;
  const auto pixel_sum = s.mask.count();
  for (auto a : {Augment::identity, Augment::hflip, Augment::vflip, Augment::rot90, Augment::rot180,
                 Augment::rot270}) {
    const Sample t = augment_sample(s, a);
    CHECK(t.mask.count() == pixel_sum);
    // spot-check that image pixels moved with the mask
    if (a == Augment::hflip) {
      CHECK(t.mask.at(1, 8 - 1 - 2) == 1);
      CHECK(t.image.at(0, 1, 8 - 1 - 2) == s.image.at(0, 1, 2));
    }
  }
}

TEST_CASE("preprocess on a constant gray sample without augmentation is identity") {
  Tensor img = Tensor::full({3, 512, 512}, 0.5);
  Sample s = make_sample(std::move(img), BinaryMask(512, 512), "gray");
  const Sample out = preprocess(s, false, 1);
  for (std::size_t i = 0; i < out.image.size(); ++i) CHECK(out.image[i] == 0.5);
}

TEST_CASE("preprocess pads and scales non-512 input to the canvas") {
  Sample s = tiny_sample(100, 60, true, "odd");
  const Sample out = preprocess(s, false, 1);
  CHECK(out.height() == 512);
  CHECK(out.width() == 512);
  for (auto m : out.mask.v) CHECK((m == 0 || m == 1));
  CHECK(out.is_positive);
}

TEST_CASE("split_dataset divides 10 samples 6/2/2") {
  std::vector<Sample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(tiny_sample(8, 8, i < 5, "s" + std::to_string(i)));
  const double ratios[3] = {0.6, 0.2, 0.2};
  const DatasetSplit split = split_dataset(samples, ratios, 3);
  CHECK(split.train.size() == 6);
  CHECK(split.val.size() == 2);
  CHECK(split.test.size() == 2);
}

TEST_CASE("split_dataset is a deterministic partition") {
  std::vector<Sample> samples;
  for (int i = 0; i < 23; ++i) samples.push_back(tiny_sample(8, 8, i % 3 == 0, "s" + std::to_string(i)));
  const double ratios[3] = {0.6, 0.2, 0.2};
  const DatasetSplit a = split_dataset(samples, ratios, 5);
  const DatasetSplit b = split_dataset(samples, ratios, 5);

  std::set<std::string> seen;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (const auto& s : *part) CHECK(seen.insert(s.id).second);  // disjoint
  CHECK(seen.size() == samples.size());                           // union = input

  auto ids = [](const std::vector<Sample>& v) {
    std::vector<std::string> out;
    for (const auto& s : v) out.push_back(s.id);
    return out;
  };
  CHECK(ids(a.train) == ids(b.train));
  CHECK(ids(a.val) == ids(b.val));
  CHECK(ids(a.test) == ids(b.test));
}

TEST_CASE("split_dataset keeps a lone sample in train and warns") {
  std::vector<Sample> samples = {tiny_sample(8, 8, true, "only")};
  const double ratios[3] = {0.6, 0.2, 0.2};
  std::vector<std::string> warnings;
  const DatasetSplit split = split_dataset(samples, ratios, 1, &warnings);
  CHECK(split.train.size() == 1);
  CHECK(split.val.empty());
  CHECK(split.test.empty());
  CHECK(!warnings.empty());
}

TEST_CASE("split_dataset stratifies 1500 positives and 500 negatives") {
  std::vector<Sample> samples;
  for (int i = 0; i < 2000; ++i) samples.push_back(tiny_sample(4, 4, i < 1500, "s" + std::to_string(i)));
  const double ratios[3] = {0.6, 0.2, 0.2};
  const DatasetSplit split = split_dataset(samples, ratios, 9);
  auto positives = [](const std::vector<Sample>& v) {
    std::size_t n = 0;
    for (const auto& s : v) n += s.is_positive;
    return n;
  };
  CHECK(std::llabs(static_cast<long long>(positives(split.train)) - 900) <= 1);
  CHECK(std::llabs(static_cast<long long>(split.train.size() - positives(split.train)) - 300) <= 1);
  CHECK(std::llabs(static_cast<long long>(positives(split.val)) - 300) <= 1);
  CHECK(std::llabs(static_cast<long long>(positives(split.test)) - 300) <= 1);
}

TEST_CASE("split_dataset rejects an empty dataset") {
  const double ratios[3] = {0.6, 0.2, 0.2};
  CHECK_THROWS_WITH_AS(split_dataset({}, ratios, 1), "empty dataset", data_error);
}

TEST_CASE("generate_synthetic honors counts and the empty-positive case") {
  SynthConfig cfg;
  cfg.n_positive = 0;
  cfg.n_negative = 3;
  const auto samples = generate_synthetic(cfg);
  REQUIRE(samples.size() == 3);
  for (const auto& s : samples) {
    CHECK_FALSE(s.is_positive);
    CHECK(s.mask.count() == 0);
    CHECK(s.height() == 512);
  }
}

TEST_CASE("generate_synthetic is bitwise reproducible") {
  SynthConfig cfg;
  cfg.n_positive = 2;
  cfg.n_negative = 1;
  cfg.seed = 42;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mask == b[i].mask);
    REQUIRE(a[i].image.size() == b[i].image.size());
    bool equal = true;
    for (std::size_t p = 0; p < a[i].image.size(); ++p) equal = equal && a[i].image[p] == b[i].image[p];
    CHECK(equal);
  }
}

TEST_CASE("single-blob positives have exactly one 4-connected component") {
  SynthConfig cfg;
  cfg.n_positive = 5;
  cfg.n_negative = 0;
  cfg.blob_count_min = 1;
  cfg.blob_count_max = 1;
  cfg.seed = 17;
  const auto samples = generate_synthetic(cfg);
  for (const auto& s : samples) {
    CHECK(s.is_positive);
    CHECK(oracles::connected_components_4(s.mask) == 1);
  }
}

TEST_CASE("dataset disk round trip is exact for quantized samples") {
  SynthConfig cfg;
  cfg.n_positive = 1;
  cfg.n_negative = 1;
  cfg.seed = 5;
  const auto samples = generate_synthetic(cfg);
  const auto dir = fs::temp_directory_path() / "landseg_test_dataset";
  fs::remove_all(dir);
  save_dataset(samples, dir.string());
  const auto loaded = load_dataset(dir.string());
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& a = samples[i];
    // load_dataset sorts ids; find the match
    const auto it = std::find_if(loaded.begin(), loaded.end(), [&](const Sample& s) { return s.id == a.id; });
    REQUIRE(it != loaded.end());
    CHECK(it->mask == a.mask);
    bool equal = true;
    for (std::size_t p = 0; p < a.image.size(); ++p) equal = equal && it->image[p] == a.image[p];
    CHECK(equal);
  }
  fs::remove_all(dir);
}

TEST_CASE("split manifest round trips by id") {
  std::vector<Sample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(tiny_sample(8, 8, i % 2 == 0, "s" + std::to_string(i)));
  const double ratios[3] = {0.6, 0.2, 0.2};
  const DatasetSplit split = split_dataset(samples, ratios, 3);
  const auto path = (fs::temp_directory_path() / "landseg_manifest.json").string();
  save_manifest(split, path);
  const DatasetSplit restored = apply_manifest(samples, path);
  auto ids = [](const std::vector<Sample>& v) {
    std::vector<std::string> out;
    for (const auto& s : v) out.push_back(s.id);
    return out;
  };
  CHECK(ids(restored.train) == ids(split.train));
  CHECK(ids(restored.val) == ids(split.val));
  CHECK(ids(restored.test) == ids(split.test));
  fs::remove(path);
}

TEST_CASE("canvas-sized synthetic positives stay in range") {
  SynthConfig cfg;
  cfg.n_positive = 1;
  cfg.seed = 23;
  const auto samples = generate_synthetic(cfg);
  for (std::size_t i = 0; i < samples[0].image.size(); ++i) {
    CHECK(samples[0].image[i] >= 0.0);
    CHECK(samples[0].image[i] <= 1.0);
  }
}
