#include <doctest.h>

#include <set>

#include "landseg/blockgrid.hpp"
#include "landseg/rng.hpp"
#include "support/oracles.hpp"

using namespace landseg;

namespace {

Sample sample_with_mask(BinaryMask mask) {
  Tensor img({3, mask.height, mask.width});
  Rng rng(3);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  return make_sample(std::move(img), std::move(mask), "m");
}

// Brute-force classifier: count pixels per block, apply the fraction rule.
std::vector<std::uint8_t> classify_bruteforce(const BinaryMask& mask, int bs) {
  const int grid = mask.height / bs;
  const int area = bs * bs;
  const int lo = static_cast<int>(std::ceil(0.1 * area));
  const int hi = static_cast<int>(std::floor(0.9 * area));
  std::vector<std::uint8_t> out;
  for (int br = 0; br < grid; ++br)
    for (int bc = 0; bc < grid; ++bc) {
      int count = 0;
      for (int r = 0; r < bs; ++r)
        for (int c = 0; c < bs; ++c) count += mask.at(br * bs + r, bc * bs + c);
      out.push_back(count < lo ? 0 : (count > hi ? 2 : 1));
    }
  return out;
}

BinaryMask random_mask(int side, std::uint64_t seed, double density) {
  BinaryMask m(side, side);
  Rng rng(seed);
  for (auto& v : m.v) v = rng.uniform() < density ? 1 : 0;
  return m;
}

BlockGrid grid_with_counts(int edge, int background) {
  BlockGrid g;
  g.block_size = 8;
  g.grid_size = 64;
  g.classes.assign(64 * 64, kBlockInterior);
  int idx = 0;
  for (int i = 0; i < edge; ++i) g.classes[static_cast<std::size_t>(idx++)] = kBlockEdge;
  for (int i = 0; i < background; ++i) g.classes[static_cast<std::size_t>(idx++)] = kBlockBackground;
  g.counts_per_class = {static_cast<std::size_t>(background), static_cast<std::size_t>(edge),
                        static_cast<std::size_t>(4096 - edge - background)};
  return g;
}

}  // namespace

TEST_CASE("block thresholds at 8x8: 7 and 57 landslide pixels") {
  for (const auto& [count, expected] : std::vector<std::pair<int, int>>{
           {0, 0}, {6, 0}, {7, 1}, {30, 1}, {57, 1}, {58, 2}, {64, 2}}) {
    BinaryMask mask(512, 512);
    int placed = 0;
    for (int r = 0; r < 8 && placed < count; ++r)
      for (int c = 0; c < 8 && placed < count; ++c) {
        mask.at(r, c) = 1;
        ++placed;
      }
    const BlockGrid grid = classify_blocks(sample_with_mask(std::move(mask)), 8);
    CHECK(grid.at(0, 0) == expected);
  }
}

TEST_CASE("block thresholds at 16x16: 26 and 230 landslide pixels") {
  for (const auto& [count, expected] : std::vector<std::pair<int, int>>{
           {25, 0}, {26, 1}, {230, 1}, {231, 2}}) {
    BinaryMask mask(512, 512);
    int placed = 0;
    for (int r = 0; r < 16 && placed < count; ++r)
      for (int c = 0; c < 16 && placed < count; ++c) {
        mask.at(r, c) = 1;
        ++placed;
      }
    const BlockGrid grid = classify_blocks(sample_with_mask(std::move(mask)), 16);
    CHECK(grid.at(0, 0) == expected);
  }
}

TEST_CASE("an all-landslide mask makes every block interior") {
  BinaryMask mask(512, 512);
  for (auto& v : mask.v) v = 1;
  const BlockGrid grid = classify_blocks(sample_with_mask(std::move(mask)), 8);
  CHECK(grid.counts_per_class[kBlockInterior] == 4096);
  CHECK(grid.counts_per_class[kBlockBackground] == 0);
  CHECK(grid.counts_per_class[kBlockEdge] == 0);
}

TEST_CASE("classify_blocks agrees with brute-force per-pixel counting") {
  for (int i = 0; i < 10; ++i) {
    const double density = 0.05 + 0.1 * i;
    const BinaryMask mask = random_mask(512, 100 + static_cast<std::uint64_t>(i), density);
    for (int bs : {8, 16}) {
      const auto expected = classify_bruteforce(mask, bs);
      const BlockGrid grid = classify_blocks(sample_with_mask(mask), bs);
      REQUIRE(grid.classes.size() == expected.size());
      CHECK(grid.classes == expected);
      CHECK(grid.counts_per_class[0] + grid.counts_per_class[1] + grid.counts_per_class[2] ==
            expected.size());
    }
  }
}

TEST_CASE("classify_blocks rejects block sizes that do not divide the side") {
  CHECK_THROWS(classify_blocks(sample_with_mask(BinaryMask(512, 512)), 7));
}

TEST_CASE("plan_mask selects round(fraction * edges) capped by background") {
  SUBCASE("10 edge, 100 background, fraction 0.5") {
    const MaskPlan plan = plan_mask(grid_with_counts(10, 100), 0.5, 1);
    CHECK(plan.mask_list_1.size() == 5);
    CHECK(plan.mask_list_0.size() == 5);
  }
  SUBCASE("no edge blocks yields an empty plan") {
    const MaskPlan plan = plan_mask(grid_with_counts(0, 100), 0.5, 1);
    CHECK(plan.empty());
    CHECK(plan.mask_list_0.empty());
  }
  SUBCASE("20 edge, 3 background, fraction 1.0 caps at availability") {
    const MaskPlan plan = plan_mask(grid_with_counts(20, 3), 1.0, 1);
    CHECK(plan.mask_list_1.size() == 3);
    CHECK(plan.mask_list_0.size() == 3);
  }
}

TEST_CASE("plan_mask invariants: balance, class purity, no duplicates, determinism") {
  Rng rng(99);
  for (int iter = 0; iter < 50; ++iter) {
    const BinaryMask mask = random_mask(512, 500 + static_cast<std::uint64_t>(iter), 0.2 + 0.01 * iter);
    const Sample s = sample_with_mask(mask);
    const BlockGrid grid = classify_blocks(s, 8);
    const double fraction = 0.1 + 0.9 * rng.uniform();
    const std::uint64_t seed = rng.next_u64();
    const MaskPlan plan = plan_mask(grid, fraction, seed);
    const MaskPlan again = plan_mask(grid, fraction, seed);

    CHECK(plan.mask_list_0.size() == plan.mask_list_1.size());
    std::set<std::pair<int, int>> seen;
    for (const auto& b : plan.mask_list_1) {
      CHECK(grid.at(b.row, b.col) == kBlockEdge);
      CHECK(seen.insert({b.row, b.col}).second);
    }
    for (const auto& b : plan.mask_list_0) {
      CHECK(grid.at(b.row, b.col) == kBlockBackground);
      CHECK(seen.insert({b.row, b.col}).second);
    }
    CHECK(plan.mask_list_0 == again.mask_list_0);
    CHECK(plan.mask_list_1 == again.mask_list_1);
  }
}

TEST_CASE("plan_mask strategies swap the target class") {
  BlockGrid g = grid_with_counts(10, 100);  // rest interior
  const MaskPlan center = plan_mask(g, 1.0, 2, FeatureStrategy::center_back);
  for (const auto& b : center.mask_list_1) CHECK(g.at(b.row, b.col) == kBlockInterior);
  const MaskPlan all = plan_mask(g, 1.0, 2, FeatureStrategy::all);
  for (const auto& b : all.mask_list_1) CHECK(g.at(b.row, b.col) != kBlockBackground);
  // "all" draws from edge + interior, capped by the 100 background blocks
  CHECK(all.mask_list_1.size() == 100);
}

TEST_CASE("apply_mask touches exactly the planned pixels") {
  const BinaryMask mask = random_mask(512, 7, 0.3);
  const Sample s = sample_with_mask(mask);
  const BlockGrid grid = classify_blocks(s, 8);

  SUBCASE("empty plan is the identity") {
    MaskPlan plan;
    const Sample out = apply_mask(s, plan);
    bool equal = true;
    for (std::size_t i = 0; i < s.image.size(); ++i) equal = equal && out.image[i] == s.image[i];
    CHECK(equal);
  }

  SUBCASE("one and two blocks change exactly block_size^2 pixels per channel") {
    MaskPlan plan;
    plan.block_size = 8;
    plan.fill_value = {2.0, 2.0, 2.0};  // outside [0,1] so every pixel differs
    plan.mask_list_1 = {{3, 4}};
    const Sample one = apply_mask(s, plan);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < s.image.size(); ++i) diff += one.image[i] != s.image[i];
    CHECK(diff == 64 * 3);

    plan.mask_list_0 = {{10, 20}};
    const Sample two = apply_mask(s, plan);
    diff = 0;
    for (std::size_t i = 0; i < s.image.size(); ++i) diff += two.image[i] != s.image[i];
    CHECK(diff == 2 * 64 * 3);
    // none outside the planned blocks, label mask untouched
    CHECK(two.mask == s.mask);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 512; ++r)
        for (int col = 0; col < 512; ++col) {
          const bool in_one = r / 8 == 3 && col / 8 == 4;
          const bool in_two = r / 8 == 10 && col / 8 == 20;
          if (!in_one && !in_two) {
            if (two.image.at(c, r, col) != s.image.at(c, r, col)) {
              CHECK(false);
              return;
            }
          }
        }
  }

  SUBCASE("apply_mask is idempotent for a fixed plan") {
    const MaskPlan plan = plan_mask(grid, 0.5, 21, FeatureStrategy::edge_back, {0.25, 0.5, 0.75});
    const Sample once = apply_mask(s, plan);
    const Sample twice = apply_mask(once, plan);
    bool equal = true;
    for (std::size_t i = 0; i < once.image.size(); ++i) equal = equal && once.image[i] == twice.image[i];
    CHECK(equal);
  }
}

TEST_CASE("gather_points returns feature rows in coordinate order") {
  FeatureMap fm;
  fm.values = Tensor({4, 64, 64});
  Rng rng(31);
  for (std::size_t i = 0; i < fm.values.size(); ++i) fm.values[i] = rng.normal();

  SUBCASE("empty coordinates give a 0xC matrix") {
    const auto pts = gather_points(fm, {}, 8);
    CHECK(pts.rows() == 0);
    CHECK(pts.cols() == 4);
  }

  SUBCASE("block size 8 is the identity correspondence") {
    const auto pts = gather_points(fm, {{5, 9}, {0, 0}}, 8);
    REQUIRE(pts.rows() == 2);
    for (int c = 0; c < 4; ++c) {
      CHECK(pts(0, c) == fm.values.at(c, 5, 9));
      CHECK(pts(1, c) == fm.values.at(c, 0, 0));
    }
  }

  SUBCASE("block size 16 averages the 2x2 covered feature points") {
    const auto pts = gather_points(fm, {{0, 0}}, 16);
    REQUIRE(pts.rows() == 1);
    for (int c = 0; c < 4; ++c) {
      const double mean = (fm.values.at(c, 0, 0) + fm.values.at(c, 0, 1) + fm.values.at(c, 1, 0) +
                           fm.values.at(c, 1, 1)) /
                          4.0;
      CHECK(pts(0, c) == doctest::Approx(mean).epsilon(1e-15));
    }
  }

  SUBCASE("out-of-range coordinates are rejected") {
    CHECK_THROWS(gather_points(fm, {{64, 0}}, 8));
    CHECK_THROWS(gather_points(fm, {{32, 0}}, 16));
  }
}

TEST_CASE("scatter_point_grads is the adjoint of gather_points") {
  FeatureMap fm;
  fm.values = Tensor({3, 8, 8});
  Rng rng(41);
  for (std::size_t i = 0; i < fm.values.size(); ++i) fm.values[i] = rng.normal();
  const std::vector<BlockCoord> coords = {{1, 2}, {3, 3}};
  for (int bs : {8, 16}) {
    if (bs == 16 && fm.values.dim(1) < 8) continue;
    Eigen::MatrixXd g(2, 3);
    g.setRandom();
    Tensor buf({3, 8, 8});
    scatter_point_grads(buf, g, coords, bs);
    // <gather(x), g> == <x, scatter(g)>
    const auto pts = gather_points(fm, coords, bs);
    double lhs = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int c = 0; c < 3; ++c) lhs += pts(i, c) * g(i, c);
    double rhs = 0.0;
    for (std::size_t i = 0; i < buf.size(); ++i) rhs += buf[i] * fm.values[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("mask plans serialize to JSON and back") {
  MaskPlan plan;
  plan.block_size = 16;
  plan.mask_list_1 = {{1, 2}, {3, 4}};
  plan.mask_list_0 = {{9, 9}, {0, 5}};
  plan.fill_value = {0.25, 0.5, 0.125};
  const MaskPlan back = MaskPlan::from_json(plan.to_json());
  CHECK(back.block_size == plan.block_size);
  CHECK(back.mask_list_0 == plan.mask_list_0);
  CHECK(back.mask_list_1 == plan.mask_list_1);
  CHECK(back.fill_value == plan.fill_value);
}
