#pragma once

#include <map>
#include <string>

#include "landseg/tensor.hpp"

namespace landseg {

/// Keyed binary container for named tensors plus raw string blobs
/// (configuration JSON travels with the weights).
///
/// Layout, little-endian:
///   magic "LSEGCKPT" | u32 version (1) | u32 entry count
///   per entry: u32 key length | key bytes | u8 kind
///     kind 0 (tensor): u32 ndim | u32 dims[ndim] | f64 data
///     kind 1 (blob):   u64 size | bytes
/// Keys are written in sorted order and stay stable across runs.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> blobs;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace landseg
