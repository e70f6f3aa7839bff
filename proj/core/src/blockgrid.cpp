#include "landseg/blockgrid.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "landseg/rng.hpp"

using json = nlohmann::json;

namespace landseg {

std::vector<BlockCoord> BlockGrid::coords_of_class(int cls) const {
  std::vector<BlockCoord> out;
  for (int r = 0; r < grid_size; ++r)
    for (int c = 0; c < grid_size; ++c)
      if (at(r, c) == cls) out.push_back({r, c});
  return out;
}

BlockGrid classify_blocks(const Sample& sample, int block_size) {
  const int h = sample.height();
  const int w = sample.width();
  check(h == w, "classify_blocks: sample must be square");
  check(block_size > 0 && h % block_size == 0,
        "classify_blocks: block size must divide the image side");

  const int grid = h / block_size;
  const int area = block_size * block_size;
  const int lo = static_cast<int>(std::ceil(0.1 * area));   // below lo -> background
  const int hi = static_cast<int>(std::floor(0.9 * area));  // above hi -> interior

  BlockGrid out;
  out.block_size = block_size;
  out.grid_size = grid;
  out.classes.resize(static_cast<std::size_t>(grid) * grid);
  for (int br = 0; br < grid; ++br)
    for (int bc = 0; bc < grid; ++bc) {
      int count = 0;
      for (int r = br * block_size; r < (br + 1) * block_size; ++r)
        for (int c = bc * block_size; c < (bc + 1) * block_size; ++c) count += sample.mask.at(r, c);
      std::uint8_t cls = kBlockEdge;
      if (count < lo)
        cls = kBlockBackground;
      else if (count > hi)
        cls = kBlockInterior;
      out.classes[static_cast<std::size_t>(br) * grid + bc] = cls;
      out.counts_per_class[cls]++;
    }
  return out;
}

namespace {

std::vector<BlockCoord> sample_without_replacement(std::vector<BlockCoord> pool, std::size_t n, Rng& rng) {
  // Partial Fisher-Yates: the first n slots end up uniformly chosen.
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size()) - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return pool;
}

}  // namespace

MaskPlan plan_mask(const BlockGrid& grid, double fraction, std::uint64_t seed,
                   FeatureStrategy strategy, const std::array<double, 3>& fill_value) {
  check(fraction > 0.0 && fraction <= 1.0, "plan_mask: fraction must be in (0,1]");

  std::vector<BlockCoord> target;
  switch (strategy) {
    case FeatureStrategy::edge_back:
      target = grid.coords_of_class(kBlockEdge);
      break;
    case FeatureStrategy::center_back:
      target = grid.coords_of_class(kBlockInterior);
      break;
    case FeatureStrategy::all: {
      target = grid.coords_of_class(kBlockEdge);
      const auto interior = grid.coords_of_class(kBlockInterior);
      target.insert(target.end(), interior.begin(), interior.end());
      break;
    }
  }
  const auto background = grid.coords_of_class(kBlockBackground);

  MaskPlan plan;
  plan.block_size = grid.block_size;
  plan.fill_value = fill_value;
  if (target.empty()) return plan;

  const auto wanted = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(target.size())));
  const std::size_t n = std::min(wanted, background.size());
  if (n == 0) return plan;

  Rng rng(seed);
  Rng target_rng = rng.fork(1);
  Rng back_rng = rng.fork(2);
  plan.mask_list_1 = sample_without_replacement(target, n, target_rng);
  plan.mask_list_0 = sample_without_replacement(background, n, back_rng);
  return plan;
}

std::array<double, 3> channel_means(const Sample& sample) {
  const std::size_t n = static_cast<std::size_t>(sample.height()) * sample.width();
  std::array<double, 3> means{};
  for (int c = 0; c < 3; ++c) {
    const double* ch = sample.image.data() + static_cast<std::size_t>(c) * n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += ch[i];
    means[static_cast<std::size_t>(c)] = acc / static_cast<double>(n);
  }
  return means;
}

Sample apply_mask(const Sample& sample, const MaskPlan& plan) {
  Sample out = sample;
  const int bs = plan.block_size;
  const int grid = sample.height() / bs;
  auto paint = [&](const std::vector<BlockCoord>& coords) {
    for (const auto& b : coords) {
      check(b.row >= 0 && b.row < grid && b.col >= 0 && b.col < grid,
            "apply_mask: block coordinate outside grid");
      for (int c = 0; c < 3; ++c)
        for (int r = b.row * bs; r < (b.row + 1) * bs; ++r)
          for (int col = b.col * bs; col < (b.col + 1) * bs; ++col)
            out.image.at(c, r, col) = plan.fill_value[static_cast<std::size_t>(c)];
    }
  };
  paint(plan.mask_list_0);
  paint(plan.mask_list_1);
  return out;
}

Eigen::MatrixXd gather_points(const FeatureMap& features, const std::vector<BlockCoord>& coords,
                              int block_size) {
  const int C = features.channels();
  const int fh = features.height();
  const int fw = features.width();
  check(block_size == 8 || block_size == 16, "gather_points: block size must be 8 or 16");
  const int per_block = block_size / 8;  // feature points per block side
  const int grid_h = fh / per_block;
  const int grid_w = fw / per_block;

  Eigen::MatrixXd out(static_cast<Eigen::Index>(coords.size()), C);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto& b = coords[i];
    check(b.row >= 0 && b.row < grid_h && b.col >= 0 && b.col < grid_w,
          "gather_points: coordinate out of range");
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int dr = 0; dr < per_block; ++dr)
        for (int dc = 0; dc < per_block; ++dc)
          acc += features.values.at(c, b.row * per_block + dr, b.col * per_block + dc);
      out(static_cast<Eigen::Index>(i), c) = acc / (per_block * per_block);
    }
  }
  return out;
}

void scatter_point_grads(Tensor& feature_grad, const Eigen::MatrixXd& point_grads,
                         const std::vector<BlockCoord>& coords, int block_size) {
  check(feature_grad.rank() == 3, "scatter_point_grads: gradient buffer must be (C,H,W)");
  const int C = feature_grad.dim(0);
  check(point_grads.cols() == C, "scatter_point_grads: channel mismatch");
  check(static_cast<std::size_t>(point_grads.rows()) == coords.size(),
        "scatter_point_grads: row/coord count mismatch");
  const int per_block = block_size / 8;
  const double inv = 1.0 / (per_block * per_block);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto& b = coords[i];
    for (int c = 0; c < C; ++c)
      for (int dr = 0; dr < per_block; ++dr)
        for (int dc = 0; dc < per_block; ++dc)
          feature_grad.at(c, b.row * per_block + dr, b.col * per_block + dc) +=
              point_grads(static_cast<Eigen::Index>(i), c) * inv;
  }
}

std::string MaskPlan::to_json() const {
  json j;
  auto coords = [](const std::vector<BlockCoord>& v) {
    json arr = json::array();
    for (const auto& b : v) arr.push_back({b.row, b.col});
    return arr;
  };
  j["block_size"] = block_size;
  j["mask_list_0"] = coords(mask_list_0);
  j["mask_list_1"] = coords(mask_list_1);
  j["fill_value"] = {fill_value[0], fill_value[1], fill_value[2]};
  return j.dump();
}

MaskPlan MaskPlan::from_json(const std::string& text) {
  const json j = json::parse(text);
  MaskPlan plan;
  plan.block_size = j.at("block_size").get<int>();
  auto coords = [](const json& arr) {
    std::vector<BlockCoord> v;
    for (const auto& e : arr) v.push_back({e[0].get<int>(), e[1].get<int>()});
    return v;
  };
  plan.mask_list_0 = coords(j.at("mask_list_0"));
  plan.mask_list_1 = coords(j.at("mask_list_1"));
  for (int i = 0; i < 3; ++i) plan.fill_value[static_cast<std::size_t>(i)] = j.at("fill_value")[static_cast<std::size_t>(i)].get<double>();
  return plan;
}

}  // namespace landseg
