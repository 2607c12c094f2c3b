#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mqa/box.hpp"

namespace mqa {

enum class DatasetTag { refcoco, refcoco_plus, refcocog, ref_l4, custom };
enum class SplitTag { train, val, testA, testB, test };

std::string_view to_string(DatasetTag tag) noexcept;
std::string_view to_string(SplitTag tag) noexcept;
std::optional<DatasetTag> parse_dataset_tag(std::string_view text);
std::optional<SplitTag> parse_split_tag(std::string_view text);

struct SplitId {
  DatasetTag dataset = DatasetTag::custom;
  SplitTag split = SplitTag::val;

  bool operator==(const SplitId&) const = default;
  std::string str() const;  // "refcocog:val"
};

// Parses "dataset:split"; throws ParseError.
SplitId parse_split_id(std::string_view text);

// One referring expression with its ground-truth box.
struct QuerySample {
  std::string id;
  std::string image;  // path relative to the image root, absolute path, or http(s) URL
  std::string expression;
  Box gt_box;
  DatasetTag dataset = DatasetTag::custom;
  SplitTag split = SplitTag::val;

  bool operator==(const QuerySample&) const = default;
};

struct SplitManifest {
  SplitId split;
  std::vector<QuerySample> samples;  // source file order
  std::string source_checksum;       // SHA-256 of the source file bytes

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

// Canonical record line: {"id","image","expression","bbox","dataset","split"}.
nlohmann::ordered_json to_record(const QuerySample& sample);
std::string serialize_record(const QuerySample& sample);
// Throws ParseError / ValidationError tagged with `line`.
QuerySample parse_record(std::string_view line_text, std::size_t line = 0);

std::string serialize_manifest(const SplitManifest& manifest);

// Loads a line-delimited record file. Blank lines are skipped. With `only` set,
// records of other splits are skipped; without it every record must share the
// first record's split.
SplitManifest load_manifest(const std::string& path, std::optional<SplitId> only = std::nullopt);
SplitManifest parse_manifest(std::string_view content, std::optional<SplitId> only = std::nullopt);

// Seeded Fisher-Yates over indices, keep the first ceil(ratio * N), restore file order.
SplitManifest uniform_sample(const SplitManifest& manifest, double ratio, std::uint64_t seed);

// ceil(ratio * n) with tolerance for binary floating-point representation of the ratio.
std::size_t sample_count(std::size_t n, double ratio);

struct SplitStats {
  std::size_t count = 0;
  double mean_words = 0.0;  // whitespace tokens per expression
};

SplitStats split_stats(const SplitManifest& manifest);

std::string resolve_image_path(const QuerySample& sample, const std::string& image_root);

struct ConvertOptions {
  enum class BoxFormat { xyxy, xywh };
  BoxFormat box_format = BoxFormat::xyxy;
  std::optional<DatasetTag> dataset;  // used when a record carries none
  std::optional<SplitTag> split;
};

// Maps third-party records (JSON array or JSON lines, common field aliases,
// COCO-style xywh boxes) onto canonical samples.
std::vector<QuerySample> convert_records(std::string_view content, const ConvertOptions& options);

}  // namespace mqa
