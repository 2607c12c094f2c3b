#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mqa/box.hpp"
#include "mqa/dataset.hpp"

namespace mqa {

struct SelectionOutcome;

// Intersection over union. Throws ValidationError for invalid boxes.
double iou(const Box& a, const Box& b);

// 100 * |{iou >= threshold}| / N. Throws on empty input or threshold outside (0,1).
double acc_at(std::span<const double> ious, double threshold);

// Half-up to two decimals.
double round2(double value) noexcept;

// ours - baseline in percentage points, rounded to two decimals.
double delta(double ours, double baseline);

struct EvalRecord {
  std::string sample_id;
  double iou = 0.0;
  bool hit_025 = false;
  bool hit_05 = false;
};

EvalRecord make_record(const std::string& sample_id, double iou_value);

struct MetricsRow {
  SplitId split;
  std::string method;
  std::size_t n = 0;
  double acc_025 = 0.0;  // full precision, rounded at presentation
  double acc_05 = 0.0;
  std::optional<double> delta_025;
  std::optional<double> delta_05;
  std::string baseline;
};

struct Aggregate {
  std::vector<EvalRecord> records;
  MetricsRow row;
};

// One outcome per manifest sample (any order). Missing predictions score IoU 0.
Aggregate aggregate(std::span<const SelectionOutcome> outcomes, const SplitManifest& gts, const std::string& method);

std::string format_pct(double value);        // "64.01"
std::string format_signed_pct(double value);  // "+14.18"

std::string records_to_jsonl(std::span<const EvalRecord> records);
std::string records_to_csv(std::span<const EvalRecord> records);

}  // namespace mqa
