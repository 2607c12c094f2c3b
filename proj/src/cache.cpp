#include "mqa/cache.hpp"

#include <filesystem>
#include <functional>

#include <json.hpp>

#include "mqa/hash.hpp"

namespace mqa {

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::tase: return "tase";
    case Stage::detect: return "detect";
    case Stage::moos: return "moos";
  }
  return "unknown";
}

std::string cache_key(Stage stage, const CacheKeyInputs& in) {
  nlohmann::ordered_json j;
  j["stage"] = std::string(to_string(stage));
  j["model"] = in.model_id;
  j["template_version"] = in.template_version;
  j["prompt"] = in.prompt;
  j["image"] = in.image_hash;
  j["box_threshold"] = in.box_threshold;
  j["text_threshold"] = in.text_threshold;
  j["max_detections"] = in.max_detections;
  return sha256_hex(j.dump());
}

DiskCache::DiskCache(std::string root) : root_(std::move(root)) { std::filesystem::create_directories(root_); }

std::string DiskCache::path_for(Stage stage, const std::string& key) const {
  return (std::filesystem::path(root_) / std::string(to_string(stage)) / key.substr(0, 2) / key).string();
}

std::optional<std::string> DiskCache::get(Stage stage, const std::string& key) const {
  const auto path = path_for(stage, key);
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) return std::nullopt;
  try {
    return read_file_text(path);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void DiskCache::put(Stage stage, const std::string& key, std::string_view value) {
  std::lock_guard lock(stripes_[std::hash<std::string>{}(key) % stripes_.size()]);
  const auto path = path_for(stage, key);
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) return;
  write_file_atomic(path, value);
}

}  // namespace mqa
