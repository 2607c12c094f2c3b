#include "mqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include <json.hpp>

#include "mqa/error.hpp"
#include "mqa/pipeline.hpp"

namespace mqa {

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou lhs");
  require_valid(b, "iou rhs");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double acc_at(std::span<const double> ious, double threshold) {
  if (ious.empty()) throw ValidationError("acc_at: no records");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("acc_at: threshold must be in (0, 1)");
  std::size_t hits = 0;
  for (double v : ious)
    if (v >= threshold) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ious.size());
}

double round2(double value) noexcept {
  // The epsilon absorbs binary representation error, e.g. 64.01 - 49.83 = 14.180000000000007.
  return std::floor(value * 100.0 + 0.5 + 1e-7) / 100.0;
}

double delta(double ours, double baseline) { return round2(ours - baseline); }

EvalRecord make_record(const std::string& sample_id, double iou_value) {
  return {sample_id, iou_value, iou_value >= 0.25, iou_value >= 0.5};
}

Aggregate aggregate(std::span<const SelectionOutcome> outcomes, const SplitManifest& gts, const std::string& method) {
  if (outcomes.empty() || gts.empty()) throw ValidationError("aggregate: no outcomes");
  if (outcomes.size() != gts.size())
    throw ValidationError("aggregate: " + std::to_string(outcomes.size()) + " outcomes for " +
                          std::to_string(gts.size()) + " samples");
  std::unordered_map<std::string, const SelectionOutcome*> by_id;
  for (const auto& o : outcomes)
    if (!by_id.emplace(o.sample_id, &o).second) throw ValidationError("aggregate: duplicate outcome " + o.sample_id);

  Aggregate agg;
  std::vector<double> ious;
  for (const auto& s : gts.samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw ValidationError("aggregate: no outcome for sample " + s.id);
    const auto& o = *it->second;
    const double v = o.predicted_box ? iou(*o.predicted_box, s.gt_box) : 0.0;
    agg.records.push_back(make_record(s.id, v));
    ious.push_back(v);
  }
  agg.row.split = gts.split;
  agg.row.method = method;
  agg.row.n = ious.size();
  agg.row.acc_025 = acc_at(ious, 0.25);
  agg.row.acc_05 = acc_at(ious, 0.5);
  return agg;
}

std::string format_pct(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", round2(value));
  return buf;
}

std::string format_signed_pct(double value) {
  const double r = round2(value);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", r == 0.0 ? 0.0 : r);
  return buf;
}

std::string records_to_jsonl(std::span<const EvalRecord> records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["sample_id"] = r.sample_id;
    j["iou"] = r.iou;
    j["hit_025"] = r.hit_025;
    j["hit_05"] = r.hit_05;
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string records_to_csv(std::span<const EvalRecord> records) {
  std::string out = "sample_id,iou,hit_025,hit_05\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.6f", r.iou);
    out += csv_field(r.sample_id) + "," + buf + "," + (r.hit_025 ? "1" : "0") + "," + (r.hit_05 ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace mqa
