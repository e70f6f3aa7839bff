#pragma once

#include <string>

#include "landseg/tensor.hpp"

namespace landseg {

/// Stride-8 encoder output for one sample: values are (C, H/8, W/8).
struct FeatureMap {
  enum class Branch { segmentation, student, teacher };

  Tensor values;  // (C, H/8, W/8)
  std::string source_id;
  Branch branch = Branch::segmentation;

  int channels() const { return values.rank() == 3 ? values.dim(0) : 0; }
  int height() const { return values.rank() == 3 ? values.dim(1) : 0; }
  int width() const { return values.rank() == 3 ? values.dim(2) : 0; }
};

}  // namespace landseg
