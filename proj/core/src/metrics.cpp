#include "landseg/metrics.hpp"

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace landseg {

void accumulate(const BinaryMask& pred, const BinaryMask& truth, Confusion& running) {
  check(pred.height == truth.height && pred.width == truth.width, "accumulate: shape mismatch");
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] != 0;
    const bool t = truth.v[i] != 0;
    if (p && t)
      ++tp;
    else if (!p && !t)
      ++tn;
    else if (p)
      ++fp;
    else
      ++fn;
  }
  running.tp += tp;
  running.tn += tn;
  running.fp += fp;
  running.fn += fn;
}

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricReport report(const Confusion& c) {
  check(c.total() > 0, "report: empty confusion");
  MetricReport r;
  r.pa = ratio(c.tp + c.tn, c.total());
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.iou_1 = ratio(c.tp, c.tp + c.fp + c.fn);
  const auto iou_0 = ratio(c.tn, c.tn + c.fn + c.fp);
  if (r.iou_1 && iou_0) r.miou = 0.5 * (*r.iou_1 + *iou_0);
  // F1's denominator is precision + recall; zero (or an undefined input)
  // leaves it undefined.
  if (r.precision && r.recall && (*r.precision + *r.recall) > 0.0)
    r.f1 = 2.0 * (*r.precision) * (*r.recall) / (*r.precision + *r.recall);
  return r;
}

namespace {

json field(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void append_csv(std::string& row, const std::optional<double>& v, bool first = false) {
  if (!first) row += ",";
  if (v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", *v);
    row += buf;
  }
}

}  // namespace

std::string MetricReport::to_json() const {
  json j;
  j["pa"] = field(pa);
  j["precision"] = field(precision);
  j["recall"] = field(recall);
  j["iou_1"] = field(iou_1);
  j["miou"] = field(miou);
  j["f1"] = field(f1);
  return j.dump();
}

std::string MetricReport::csv_header() { return "pa,precision,recall,iou_1,miou,f1"; }

std::string MetricReport::to_csv_row() const {
  std::string row;
  append_csv(row, pa, true);
  append_csv(row, precision);
  append_csv(row, recall);
  append_csv(row, iou_1);
  append_csv(row, miou);
  append_csv(row, f1);
  return row;
}

}  // namespace landseg
