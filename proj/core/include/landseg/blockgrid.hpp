#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "landseg/feature_map.hpp"
#include "landseg/sample.hpp"

namespace landseg {

struct BlockCoord {
  int row = 0;
  int col = 0;
  bool operator==(const BlockCoord& o) const { return row == o.row && col == o.col; }
};

/// Block classes: 0 = non-landslide, 1 = landslide edge, 2 = landslide interior.
enum : int { kBlockBackground = 0, kBlockEdge = 1, kBlockInterior = 2 };

/// Per-sample grid of block class labels at block resolution. Classes are
/// derived from the landslide-pixel count per block with thresholds stored
/// as area fractions (0.1, 0.9): for 8x8 blocks this is the 7/57 rule, for
/// 16x16 blocks 26/230.
struct BlockGrid {
  int block_size = 8;
  int grid_size = 64;                 // blocks per side
  std::vector<std::uint8_t> classes;  // grid_size^2, row-major
  std::array<std::size_t, 3> counts_per_class{};

  std::uint8_t at(int r, int c) const { return classes[static_cast<std::size_t>(r) * grid_size + c]; }
  std::vector<BlockCoord> coords_of_class(int cls) const;
};

/// Which block class provides the "target" side of a mask plan; background
/// blocks always provide the other side.
enum class FeatureStrategy { edge_back, center_back, all };

/// Balanced lists of masked block positions plus the fill colour used when
/// blanking them out.
struct MaskPlan {
  int block_size = 8;
  std::vector<BlockCoord> mask_list_0;  // masked background blocks
  std::vector<BlockCoord> mask_list_1;  // masked target (edge by default) blocks
  std::array<double, 3> fill_value{0.0, 0.0, 0.0};

  bool empty() const { return mask_list_1.empty(); }
  std::size_t total_blocks() const { return mask_list_0.size() + mask_list_1.size(); }

  std::string to_json() const;
  static MaskPlan from_json(const std::string& text);
};

BlockGrid classify_blocks(const Sample& sample, int block_size);

/// Selects round(fraction * #target) target blocks, capped by background
/// availability so both lists stay the same length; interior blocks are
/// never selected under the default strategy. A grid with zero target
/// blocks yields an empty plan, which signals "skip the enhancement branch".
MaskPlan plan_mask(const BlockGrid& grid, double fraction, std::uint64_t seed,
                   FeatureStrategy strategy = FeatureStrategy::edge_back,
                   const std::array<double, 3>& fill_value = {0.0, 0.0, 0.0});

/// Per-image per-channel mean, the default fill for masked blocks.
std::array<double, 3> channel_means(const Sample& sample);

/// Returns a copy with every planned block painted with the fill value.
/// The label mask is left untouched.
Sample apply_mask(const Sample& sample, const MaskPlan& plan);

/// Rows are feature points, one per coordinate (coords order preserved).
/// For block_size 16 each block covers 2x2 stride-8 feature points and the
/// row is their mean.
Eigen::MatrixXd gather_points(const FeatureMap& features, const std::vector<BlockCoord>& coords,
                              int block_size);

/// Adjoint of gather_points: adds row gradients back into the feature map
/// gradient buffer.
void scatter_point_grads(Tensor& feature_grad, const Eigen::MatrixXd& point_grads,
                         const std::vector<BlockCoord>& coords, int block_size);

}  // namespace landseg
