#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "landseg/sample.hpp"

namespace landseg {

/// Pixel-level confusion counts. Supports associative merge so per-sample
/// confusions can be computed concurrently and combined.
struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  Confusion& merge(const Confusion& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

/// Metric values in [0,1]; a metric whose denominator is zero carries no
/// value (never NaN, never silently zero).
struct MetricReport {
  std::optional<double> pa;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> iou_1;  // landslide-class IoU
  std::optional<double> miou;
  std::optional<double> f1;

  std::string to_json() const;
  /// Header "pa,precision,recall,iou_1,miou,f1"; undefined fields are empty.
  static std::string csv_header();
  std::string to_csv_row() const;
};

void accumulate(const BinaryMask& pred, const BinaryMask& truth, Confusion& running);

MetricReport report(const Confusion& c);

}  // namespace landseg
