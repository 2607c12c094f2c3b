#include "mqa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mqa/error.hpp"
#include "mqa/hash.hpp"

namespace mqa {

namespace {

constexpr std::pair<DatasetTag, std::string_view> kDatasetNames[] = {
    {DatasetTag::refcoco, "refcoco"},
    {DatasetTag::refcoco_plus, "refcoco+"},
    {DatasetTag::refcocog, "refcocog"},
    {DatasetTag::ref_l4, "ref-l4"},
    {DatasetTag::custom, "custom"},
};

constexpr std::pair<SplitTag, std::string_view> kSplitNames[] = {
    {SplitTag::train, "train"}, {SplitTag::val, "val"},   {SplitTag::testA, "testA"},
    {SplitTag::testB, "testB"}, {SplitTag::test, "test"},
};

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

// Unbiased draw in [0, bound) from the raw 64-bit stream; std distributions are
// implementation-defined and would make sampling platform-dependent.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

const nlohmann::json& field(const nlohmann::json& j, const char* name, std::size_t line) {
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(std::string("missing field \"") + name + "\"", line);
  return *it;
}

std::string string_field(const nlohmann::json& j, const char* name, std::size_t line) {
  const auto& v = field(j, name, line);
  if (!v.is_string()) throw ParseError(std::string("field \"") + name + "\" must be a string", line);
  return v.get<std::string>();
}

void validate_sample(const QuerySample& s, std::size_t line) {
  if (s.id.empty()) throw ValidationError("id: empty", line);
  if (trim(s.expression).empty()) throw ValidationError("expression: empty", line);
  if (s.image.empty()) throw ValidationError("image: empty", line);
  if (auto v = box_violation(s.gt_box)) throw ValidationError("bbox: " + *v, line);
}

}  // namespace

std::string_view to_string(DatasetTag tag) noexcept {
  for (const auto& [t, n] : kDatasetNames)
    if (t == tag) return n;
  return "custom";
}

std::string_view to_string(SplitTag tag) noexcept {
  for (const auto& [t, n] : kSplitNames)
    if (t == tag) return n;
  return "val";
}

std::optional<DatasetTag> parse_dataset_tag(std::string_view text) {
  for (const auto& [t, n] : kDatasetNames)
    if (n == text) return t;
  return std::nullopt;
}

std::optional<SplitTag> parse_split_tag(std::string_view text) {
  for (const auto& [t, n] : kSplitNames)
    if (n == text) return t;
  return std::nullopt;
}

std::string SplitId::str() const { return std::string(to_string(dataset)) + ":" + std::string(to_string(split)); }

SplitId parse_split_id(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw ParseError("split must look like dataset:split, got \"" + std::string(text) + "\"");
  auto d = parse_dataset_tag(text.substr(0, colon));
  auto s = parse_split_tag(text.substr(colon + 1));
  if (!d) throw ParseError("unknown dataset \"" + std::string(text.substr(0, colon)) + "\"");
  if (!s) throw ParseError("unknown split \"" + std::string(text.substr(colon + 1)) + "\"");
  return {*d, *s};
}

nlohmann::ordered_json to_record(const QuerySample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["image"] = s.image;
  j["expression"] = s.expression;
  j["bbox"] = {s.gt_box.x_min, s.gt_box.y_min, s.gt_box.x_max, s.gt_box.y_max};
  j["dataset"] = std::string(to_string(s.dataset));
  j["split"] = std::string(to_string(s.split));
  return j;
}

std::string serialize_record(const QuerySample& sample) { return to_record(sample).dump(); }

QuerySample parse_record(std::string_view line_text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line);
  }
  if (!j.is_object()) throw ParseError("record must be a JSON object", line);

  QuerySample s;
  s.id = string_field(j, "id", line);
  s.image = string_field(j, "image", line);
  s.expression = string_field(j, "expression", line);
  try {
    s.gt_box = box_from_json(field(j, "bbox", line));
  } catch (const ParseError& e) {
    throw ParseError(std::string("bbox: ") + e.what(), line);
  }
  const auto ds = string_field(j, "dataset", line);
  const auto sp = string_field(j, "split", line);
  auto d = parse_dataset_tag(ds);
  auto p = parse_split_tag(sp);
  if (!d) throw ValidationError("dataset: unknown tag \"" + ds + "\"", line);
  if (!p) throw ValidationError("split: unknown tag \"" + sp + "\"", line);
  s.dataset = *d;
  s.split = *p;
  validate_sample(s, line);
  return s;
}

std::string serialize_manifest(const SplitManifest& manifest) {
  std::string out;
  for (const auto& s : manifest.samples) {
    out += serialize_record(s);
    out += '\n';
  }
  return out;
}

SplitManifest parse_manifest(std::string_view content, std::optional<SplitId> only) {
  SplitManifest m;
  m.source_checksum = sha256_hex(content);
  std::set<std::string> ids;
  bool have_split = only.has_value();
  if (only) m.split = *only;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const auto text = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(text).empty()) continue;

    QuerySample s = parse_record(text, line_no);
    const SplitId sid{s.dataset, s.split};
    if (only && sid != *only) continue;
    if (!have_split) {
      m.split = sid;
      have_split = true;
    } else if (sid != m.split) {
      throw ValidationError("split: record is " + sid.str() + " but manifest is " + m.split.str(), line_no);
    }
    if (!ids.insert(s.id).second) throw ValidationError("id: duplicate \"" + s.id + "\"", line_no);
    m.samples.push_back(std::move(s));
  }
  return m;
}

SplitManifest load_manifest(const std::string& path, std::optional<SplitId> only) {
  return parse_manifest(read_file_text(path), only);
}

std::size_t sample_count(std::size_t n, double ratio) {
  const long double exact = static_cast<long double>(ratio) * static_cast<long double>(n);
  auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9L * std::max<long double>(1.0L, exact)));
  return std::clamp<std::size_t>(k, n == 0 ? 0 : 1, n);
}

SplitManifest uniform_sample(const SplitManifest& manifest, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ValidationError("sampling ratio must be in (0, 1]");
  const std::size_t n = manifest.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_below(rng, i)]);

  const std::size_t k = sample_count(n, ratio);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  SplitManifest out;
  out.split = manifest.split;
  out.source_checksum = manifest.source_checksum;
  out.samples.reserve(k);
  for (auto i : idx) out.samples.push_back(manifest.samples[i]);
  return out;
}

SplitStats split_stats(const SplitManifest& manifest) {
  if (manifest.empty()) throw ValidationError("split_stats: empty manifest");
  std::size_t words = 0;
  for (const auto& s : manifest.samples) {
    std::istringstream ss(s.expression);
    std::string w;
    while (ss >> w) ++words;
  }
  return {manifest.size(), static_cast<double>(words) / static_cast<double>(manifest.size())};
}

std::string resolve_image_path(const QuerySample& sample, const std::string& image_root) {
  const auto& p = sample.image;
  if (p.rfind("http://", 0) == 0 || p.rfind("https://", 0) == 0) return p;
  const std::filesystem::path path(p);
  if (path.is_absolute() || image_root.empty()) return p;
  return (std::filesystem::path(image_root) / path).string();
}

namespace {

const nlohmann::json* first_of(const nlohmann::json& j, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    auto it = j.find(n);
    if (it != j.end() && !it->is_null()) return &*it;
  }
  return nullptr;
}

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return v.dump();
}

}  // namespace

std::vector<QuerySample> convert_records(std::string_view content, const ConvertOptions& options) {
  std::vector<nlohmann::json> items;
  const auto t = trim(content);
  if (!t.empty() && t.front() == '[') {
    try {
      for (auto& v : nlohmann::json::parse(t)) items.push_back(v);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what());
    }
  } else {
    std::istringstream ss{std::string(content)};
    std::string line;
    std::size_t n = 0;
    while (std::getline(ss, line)) {
      ++n;
      if (trim(line).empty()) continue;
      try {
        items.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), n);
      }
    }
  }

  std::vector<QuerySample> out;
  std::size_t n = 0;
  for (const auto& j : items) {
    ++n;
    if (!j.is_object()) throw ParseError("record must be a JSON object", n);
    QuerySample s;
    const auto* id = first_of(j, {"id", "ref_id", "sent_id", "ann_id"});
    const auto* img = first_of(j, {"image", "image_path", "file_name", "img_path"});
    const auto* expr = first_of(j, {"expression", "sentence", "sent", "text", "caption", "query"});
    const auto* box = first_of(j, {"bbox", "box", "gt_box"});
    if (!id) throw ValidationError("id: missing", n);
    if (!img) throw ValidationError("image: missing", n);
    if (!expr || !expr->is_string()) throw ValidationError("expression: missing", n);
    if (!box) throw ValidationError("bbox: missing", n);
    s.id = scalar_text(*id);
    s.image = scalar_text(*img);
    s.expression = expr->get<std::string>();
    Box b = box_from_json(*box);
    if (options.box_format == ConvertOptions::BoxFormat::xywh) b = {b.x_min, b.y_min, b.x_min + b.x_max, b.y_min + b.y_max};
    s.gt_box = b;

    if (const auto* d = first_of(j, {"dataset"}); d && d->is_string()) {
      auto tag = parse_dataset_tag(d->get<std::string>());
      if (!tag) throw ValidationError("dataset: unknown tag \"" + d->get<std::string>() + "\"", n);
      s.dataset = *tag;
    } else if (options.dataset) {
      s.dataset = *options.dataset;
    }
    if (const auto* sp = first_of(j, {"split"}); sp && sp->is_string()) {
      auto tag = parse_split_tag(sp->get<std::string>());
      if (!tag) throw ValidationError("split: unknown tag \"" + sp->get<std::string>() + "\"", n);
      s.split = *tag;
    } else if (options.split) {
      s.split = *options.split;
    } else {
      throw ValidationError("split: missing and no default given", n);
    }
    validate_sample(s, n);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mqa
