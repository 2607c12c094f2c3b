#include "mqa/detector.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <future>
#include <tuple>

#include "mqa/error.hpp"
#include "mqa/hash.hpp"
#include "mqa/marker.hpp"
#include "mqa/metrics.hpp"

namespace mqa {

void validate(const DetectorParams& p) {
  if (!(p.box_threshold >= 0.0 && p.box_threshold <= 1.0)) throw ConfigError("box_threshold must be in [0, 1]");
  if (!(p.text_threshold >= 0.0 && p.text_threshold <= 1.0)) throw ConfigError("text_threshold must be in [0, 1]");
  if (p.max_detections < 1) throw ConfigError("max_detections must be >= 1");
  if (!(p.dedup_iou > 0.0 && p.dedup_iou <= 1.0)) throw ConfigError("dedup_iou must be in (0, 1]");
}

bool candidate_before(const Candidate& a, const Candidate& b) noexcept {
  if (a.score != b.score) return a.score > b.score;
  const auto ka = std::tie(a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max, a.subject_index);
  const auto kb = std::tie(b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max, b.subject_index);
  return ka < kb;
}

std::string render_detector_prompt(std::span<const std::string> subjects) {
  std::string out;
  for (const auto& s : subjects) {
    if (!out.empty()) out += ' ';
    out += s + " .";
  }
  return out;
}

nlohmann::ordered_json make_detect_body(const std::string& image_b64, const std::string& prompt,
                                        const DetectorParams& params) {
  nlohmann::ordered_json j;
  j["image_b64"] = image_b64;
  j["prompt"] = prompt;
  j["box_threshold"] = params.box_threshold;
  j["text_threshold"] = params.text_threshold;
  j["max_detections"] = params.max_detections;
  return j;
}

std::vector<RawDetection> parse_detect_response(const nlohmann::json& response, bool synthesize_scores) {
  auto malformed = [](const std::string& what) { return TransportError(TransportErrorKind::malformed, "detect response: " + what); };
  if (!response.is_object()) throw malformed("not an object");
  auto boxes = response.find("boxes");
  if (boxes == response.end() || !boxes->is_array()) throw malformed("missing boxes array");
  const std::size_t n = boxes->size();

  auto scores = response.find("scores");
  const bool have_scores = scores != response.end() && !scores->is_null();
  if (have_scores && (!scores->is_array() || scores->size() != n)) throw malformed("scores length differs from boxes");
  if (!have_scores && !synthesize_scores) throw malformed("missing scores array");
  auto labels = response.find("labels");
  const bool have_labels = labels != response.end() && !labels->is_null();
  if (have_labels && (!labels->is_array() || labels->size() != n)) throw malformed("labels length differs from boxes");

  std::vector<RawDetection> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RawDetection d;
    try {
      d.box = box_from_json((*boxes)[i]);
    } catch (const ParseError& e) {
      throw malformed(std::string("box ") + std::to_string(i) + ": " + e.what());
    }
    for (double v : {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max})
      if (!std::isfinite(v)) throw malformed("non-finite box coordinate");
    if (synthesize_scores) {
      d.score = 1.0 - static_cast<double>(i) * 1e-6;
    } else {
      if (!(*scores)[i].is_number()) throw malformed("non-numeric score");
      d.score = (*scores)[i].get<double>();
      if (!(d.score >= 0.0 && d.score <= 1.0)) throw malformed("score outside [0, 1]");
    }
    if (have_labels && (*labels)[i].is_string()) d.label = (*labels)[i].get<std::string>();
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Candidate> dedup_candidates(std::vector<Candidate> candidates, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ValidationError("dedup iou_threshold must be in (0, 1]");
  std::stable_sort(candidates.begin(), candidates.end(), candidate_before);
  std::vector<Candidate> kept;
  for (auto& c : candidates) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Candidate& k) { return iou(k.box, c.box) >= iou_threshold; });
    if (!suppressed) kept.push_back(std::move(c));
  }
  return kept;
}

DetectionSet assign_marks(std::vector<Candidate> candidates) {
  std::stable_sort(candidates.begin(), candidates.end(), candidate_before);
  DetectionSet out;
  out.candidates = std::move(candidates);
  out.marks.resize(out.candidates.size());
  for (std::size_t i = 0; i < out.marks.size(); ++i) out.marks[i] = static_cast<int>(i + 1);
  return out;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

int attribute_label(const std::string& label, std::span<const std::string> subjects) {
  const auto l = lower(label);
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (lower(subjects[i]) == l) return static_cast<int>(i + 1);
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (!l.empty() && lower(subjects[i]).find(l) != std::string::npos) return static_cast<int>(i + 1);
  return 1;
}

std::string fmt_box(const Box& b) { return to_json(b).dump(); }

}  // namespace

DetectOutcome detect(std::span<const std::string> subjects, const ImageRef& image, const DetectorParams& params,
                     const BackendDescriptor& backend, const DetectCall& call) {
  if (subjects.empty()) throw ValidationError("detect: no subjects");
  if (image.width <= 0 || image.height <= 0) throw ImageError("detect: image has no pixels");
  validate(params);

  const std::string b64 = base64_encode(image.encoded);
  struct Batch {
    int subject_index;  // 0 means attribute by label
    nlohmann::json response;
  };
  std::vector<Batch> batches;

  if (backend.joined_prompt || subjects.size() == 1) {
    const auto body = make_detect_body(b64, render_detector_prompt(subjects), params);
    batches.push_back({subjects.size() == 1 ? 1 : 0, call(body)});
  } else {
    std::vector<std::future<nlohmann::json>> pending;
    for (const auto& s : subjects) {
      const std::string one[] = {s};
      nlohmann::json body = make_detect_body(b64, render_detector_prompt(one), params);
      pending.push_back(std::async(std::launch::async, [&call, body = std::move(body)] { return call(body); }));
    }
    for (std::size_t i = 0; i < pending.size(); ++i) pending[i].wait();
    for (std::size_t i = 0; i < pending.size(); ++i) batches.push_back({static_cast<int>(i + 1), pending[i].get()});
  }

  DetectOutcome out;
  std::vector<Candidate> candidates;
  for (const auto& batch : batches) {
    for (auto& raw : parse_detect_response(batch.response, backend.synthesize_scores)) {
      const int subject = batch.subject_index ? batch.subject_index : attribute_label(raw.label, subjects);
      if (raw.score < params.box_threshold) {
        out.notes.push_back("dropped " + fmt_box(raw.box) + ": score below box_threshold");
        continue;
      }
      if (!(raw.box.x_max > raw.box.x_min && raw.box.y_max > raw.box.y_min)) {
        out.notes.push_back("dropped " + fmt_box(raw.box) + ": non-positive area");
        continue;
      }
      Box clipped;
      try {
        clipped = clip_box(raw.box, image.width, image.height);
      } catch (const DegenerateBoxError&) {
        out.notes.push_back("dropped " + fmt_box(raw.box) + ": degenerate after clipping");
        continue;
      }
      candidates.push_back({clipped, raw.score, raw.label, subject});
    }
  }

  const std::size_t before = candidates.size();
  candidates = dedup_candidates(std::move(candidates), params.dedup_iou);
  if (candidates.size() < before)
    out.notes.push_back("dedup removed " + std::to_string(before - candidates.size()) + " candidate(s)");
  if (candidates.size() > static_cast<std::size_t>(params.max_detections)) {
    out.notes.push_back("truncated " + std::to_string(candidates.size()) + " candidates to max_detections");
    candidates.resize(static_cast<std::size_t>(params.max_detections));
  }
  out.detections = assign_marks(std::move(candidates));
  return out;
}

HttpDetectorTransport::HttpDetectorTransport(std::string base_url, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

HttpReply HttpDetectorTransport::post_detect(const std::string& body) {
  return http_post_json(base_url_ + "/detect", body, {}, timeout_);
}

HttpReply HttpDetectorTransport::get_health() { return http_get(base_url_ + "/health", {}, timeout_); }

std::shared_ptr<MockDetectorTransport> MockDetectorTransport::from_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("mock detector fixture " + path + ": " + e.what());
  }
  if (!j.is_array()) throw ConfigError("mock detector fixture " + path + " must be a JSON array");
  auto mock = std::make_shared<MockDetectorTransport>();
  for (const auto& e : j) {
    if (!e.contains("image_sha256") || !e.contains("prompt") || !e.contains("response"))
      throw ConfigError("mock detector fixture " + path + ": entries need image_sha256, prompt, response");
    mock->script(e["image_sha256"].get<std::string>(), e["prompt"].get<std::string>(), e["response"]);
  }
  return mock;
}

void MockDetectorTransport::script(const std::string& image_sha256, const std::string& prompt, nlohmann::json response) {
  std::lock_guard lock(mu_);
  responses_[{image_sha256, prompt}] = std::move(response);
}

void MockDetectorTransport::fail_next(std::vector<int> statuses) {
  std::lock_guard lock(mu_);
  failures_ = std::move(statuses);
  failure_pos_ = 0;
}

HttpReply MockDetectorTransport::post_detect(const std::string& body) {
  ++calls_;
  std::lock_guard lock(mu_);
  if (failure_pos_ < failures_.size()) {
    HttpReply r;
    r.status = failures_[failure_pos_++];
    r.error = "scripted failure";
    return r;
  }
  nlohmann::json req;
  std::string hash;
  try {
    req = nlohmann::json::parse(body);
    hash = sha256_hex(base64_decode(req.at("image_b64").get<std::string>()));
  } catch (const std::exception& e) {
    return {400, std::string(R"({"detail":"malformed request"})"), e.what()};
  }
  const std::string prompt = req.value("prompt", "");
  log_.emplace_back(hash, prompt);
  auto it = responses_.find({hash, prompt});
  if (it == responses_.end()) {
    if (strict_) return {404, R"({"detail":"no scripted response"})", {}};
    return {200, R"({"boxes":[],"scores":[],"labels":[]})", {}};
  }
  return {200, it->second.dump(), {}};
}

HttpReply MockDetectorTransport::get_health() { return {200, R"({"status":"ok","model":"mock"})", {}}; }

std::vector<std::pair<std::string, std::string>> MockDetectorTransport::call_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

}  // namespace mqa
