#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "landseg/sample.hpp"

namespace landseg {

/// Per-channel histogram equalization over 256 intensity bins. Intensities
/// map to their inclusive empirical CDF value; a constant channel is left
/// untouched. Monotone: the within-channel intensity ordering is preserved.
void equalize_channels(Tensor& image);

/// The six label-preserving transforms applied during training.
enum class Augment { identity, hflip, vflip, rot90, rot180, rot270 };

Sample augment_sample(const Sample& s, Augment a);

/// Zero-pads the shorter side to square, then rescales to 512x512
/// (bilinear image, nearest-neighbor mask). Identity for 512x512 input.
Sample resize_to_canvas(const Sample& s);

/// Canonical preprocessing: resize if needed, equalize, then (optionally)
/// one seed-chosen augmentation applied identically to image and mask.
Sample preprocess(const Sample& s, bool augment, std::uint64_t seed);

/// Stratified split by is_positive; per-class largest-remainder
/// apportionment, deterministic under seed. Ratios must sum to 1.
DatasetSplit split_dataset(std::vector<Sample> samples, const double ratios[3], std::uint64_t seed,
                           std::vector<std::string>* warnings = nullptr);

/// Synthetic "blurred landslide" generator: positives are unions of smooth
/// star-convex blobs with soft edges composited at low contrast onto
/// correlated-noise backgrounds; negatives are background only. Bitwise
/// reproducible for a given config. Pixel values are quantized to the 8-bit
/// grid so disk round-trips are exact.
std::vector<Sample> generate_synthetic(const SynthConfig& config);

/// Dataset directory layout: images/<id>.png (8-bit RGB) and
/// masks/<id>.png (8-bit gray, 0 or 255; 255 maps to mask value 1).
void save_dataset(const std::vector<Sample>& samples, const std::string& dir);
std::vector<Sample> load_dataset(const std::string& dir);
Sample load_sample(const std::string& image_png, const std::string& mask_png, const std::string& id);

/// Split manifest: JSON object {"train": [ids], "val": [ids], "test": [ids]}.
void save_manifest(const DatasetSplit& split, const std::string& path);
DatasetSplit apply_manifest(const std::vector<Sample>& samples, const std::string& path);

}  // namespace landseg
