#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mqa/box.hpp"
#include "mqa/transport.hpp"

namespace mqa {

struct DetectorParams {
  double box_threshold = 0.25;
  double text_threshold = 0.25;
  int max_detections = 20;
  double dedup_iou = 0.9;
};

// Throws ConfigError on out-of-range values.
void validate(const DetectorParams& params);

struct BackendDescriptor {
  std::string id = "detector";
  // Send one prompt with every subject joined instead of one call per subject.
  bool joined_prompt = false;
  // The backend reports no scores; rank-based scores are synthesized.
  bool synthesize_scores = false;
};

struct Candidate {
  Box box;
  double score = 0.0;
  std::string label;
  int subject_index = 1;  // 1-based position in the SubjectSet
};

struct DetectionSet {
  std::vector<Candidate> candidates;
  std::vector<int> marks;  // 1..K in candidate order

  std::size_t size() const noexcept { return candidates.size(); }
  bool empty() const noexcept { return candidates.empty(); }
  const Candidate& by_mark(int mark) const { return candidates.at(static_cast<std::size_t>(mark - 1)); }
};

// Descending score, then ascending (x_min, y_min, x_max, y_max), then subject index.
bool candidate_before(const Candidate& a, const Candidate& b) noexcept;

// Subjects joined as "a . b ." (the detector prompt convention).
std::string render_detector_prompt(std::span<const std::string> subjects);

nlohmann::ordered_json make_detect_body(const std::string& image_b64, const std::string& prompt,
                                        const DetectorParams& params);

struct RawDetection {
  Box box;
  double score = 1.0;
  std::string label;
};

// Validates the wire response: equal-length arrays, 4-number boxes, finite values.
// A missing "scores" array is accepted only with synthesize_scores.
std::vector<RawDetection> parse_detect_response(const nlohmann::json& response, bool synthesize_scores);

// Greedy NMS across all subjects.
std::vector<Candidate> dedup_candidates(std::vector<Candidate> candidates, double iou_threshold);

// Sorts with candidate_before, then numbers 1..K.
DetectionSet assign_marks(std::vector<Candidate> candidates);

struct ImageRef {
  std::span<const std::uint8_t> encoded;
  int width = 0;
  int height = 0;
};

// Performs one backend exchange: request body in, response body out.
using DetectCall = std::function<nlohmann::json(const nlohmann::json& body)>;

struct DetectOutcome {
  DetectionSet detections;
  std::vector<std::string> notes;  // dropped candidates and why
};

DetectOutcome detect(std::span<const std::string> subjects, const ImageRef& image, const DetectorParams& params,
                     const BackendDescriptor& backend, const DetectCall& call);

class DetectorTransport {
 public:
  virtual ~DetectorTransport() = default;
  virtual HttpReply post_detect(const std::string& body) = 0;
  virtual HttpReply get_health() = 0;
};

class HttpDetectorTransport : public DetectorTransport {
 public:
  explicit HttpDetectorTransport(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(120));
  HttpReply post_detect(const std::string& body) override;
  HttpReply get_health() override;

 private:
  std::string base_url_;
  std::chrono::seconds timeout_;
};

// In-process fixture map from (SHA-256 of the image bytes, prompt) to a response.
class MockDetectorTransport : public DetectorTransport {
 public:
  MockDetectorTransport() = default;
  // JSON array of {"image_sha256": str, "prompt": str, "response": {...}}.
  static std::shared_ptr<MockDetectorTransport> from_file(const std::string& path);

  void script(const std::string& image_sha256, const std::string& prompt, nlohmann::json response);
  // Unscripted requests return empty arrays unless strict.
  void set_strict(bool strict) { strict_ = strict; }
  void fail_next(std::vector<int> statuses);

  HttpReply post_detect(const std::string& body) override;
  HttpReply get_health() override;

  int calls() const noexcept { return calls_.load(); }
  void reset_calls() noexcept { calls_ = 0; }
  std::vector<std::pair<std::string, std::string>> call_log() const;

 private:
  std::map<std::pair<std::string, std::string>, nlohmann::json> responses_;
  std::vector<std::pair<std::string, std::string>> log_;
  std::vector<int> failures_;
  std::size_t failure_pos_ = 0;
  bool strict_ = false;
  std::atomic<int> calls_{0};
  mutable std::mutex mu_;
};

}  // namespace mqa
