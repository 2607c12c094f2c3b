#pragma once

#include <array>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace mqa {

enum class Stage { tase, detect, moos };
std::string_view to_string(Stage stage) noexcept;

struct CacheKeyInputs {
  std::string model_id;  // MLLM model or detector backend id
  std::string template_version;
  std::string prompt;
  std::string image_hash;
  double box_threshold = 0.0;
  double text_threshold = 0.0;
  int max_detections = 0;
};

std::string cache_key(Stage stage, const CacheKeyInputs& inputs);

// Content-addressed store, one file per key under <root>/<stage>/<k[0:2]>/<k>.
// Reads are lock-free; writers for the same key are serialized in-process and
// publish with an atomic rename.
class DiskCache {
 public:
  explicit DiskCache(std::string root);

  std::optional<std::string> get(Stage stage, const std::string& key) const;
  void put(Stage stage, const std::string& key, std::string_view value);

  const std::string& root() const noexcept { return root_; }

 private:
  std::string path_for(Stage stage, const std::string& key) const;

  std::string root_;
  std::array<std::mutex, 16> stripes_;
};

}  // namespace mqa
