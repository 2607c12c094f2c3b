#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mqa/box.hpp"
#include "mqa/cache.hpp"
#include "mqa/dataset.hpp"
#include "mqa/detector.hpp"
#include "mqa/marker.hpp"
#include "mqa/mllm.hpp"
#include "mqa/transport.hpp"

namespace mqa {

// Stage toggles used for ablations.
enum class Variant { full, no_tase, no_moos, detector_only };

std::string_view to_string(Variant v) noexcept;
std::optional<Variant> parse_variant(std::string_view text);
bool uses_tase(Variant v) noexcept;
bool uses_moos(Variant v) noexcept;
inline constexpr Variant kAllVariants[] = {Variant::full, Variant::no_tase, Variant::no_moos, Variant::detector_only};

struct MllmConfig {
  std::string kind = "openai";  // "openai" | "mock"
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string fixture;  // mock replies
  double temperature = 0.0;
  int max_tokens = 64;
  int timeout_s = 60;
  double requests_per_minute = 0.0;
  RetryPolicy retry;
  std::vector<std::string> refusal_patterns = default_refusal_patterns();
};

struct DetectorConfig {
  std::string kind = "http";  // "http" | "mock"
  std::string url = "http://127.0.0.1:8000";
  std::string fixture;
  bool strict_fixture = false;
  int timeout_s = 120;
  RetryPolicy retry;
  BackendDescriptor descriptor;
};

struct PipelineConfig {
  MllmConfig mllm;
  DetectorConfig detector;
  DetectorParams detection;
  MarkStyle style;
  double sample_ratio = 1.0;
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  int concurrency = 4;
  std::string cache_dir;  // empty disables caching
  std::string template_version{kTemplateVersion};
  bool short_circuit_single = false;
  double failure_ceiling = 0.05;
  std::string image_root = ".";
  std::map<std::string, std::string> manifests;  // "dataset:split" -> record file
};

// Throws ConfigError.
void validate(const PipelineConfig& cfg);
nlohmann::ordered_json to_json(const PipelineConfig& cfg);
// Relative paths are resolved against `base_dir`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
PipelineConfig load_pipeline_config(const std::string& path);

struct Backends {
  std::shared_ptr<ChatTransport> mllm;
  std::shared_ptr<DetectorTransport> detector;
  std::shared_ptr<DiskCache> cache;  // optional
  std::shared_ptr<RateLimiter> limiter;
};

// Builds transports from config. Secrets come from the environment.
Backends make_backends(const PipelineConfig& cfg);

enum class OutcomeSource { moos, argmax_score, argmax_score_fallback, no_candidates, failed };
std::string_view to_string(OutcomeSource s) noexcept;
std::optional<OutcomeSource> parse_outcome_source(std::string_view text);

struct SelectionOutcome {
  std::string sample_id;
  std::optional<Box> predicted_box;
  OutcomeSource source = OutcomeSource::no_candidates;
};

struct StageTelemetry {
  double ms = 0.0;
  int retries = 0;
  int calls = 0;
  int cache_hits = 0;
};

struct StageTrace {
  std::string sample_id;
  Variant variant = Variant::full;
  std::string expression;
  std::optional<std::string> tase_raw;
  std::vector<std::string> subjects;
  DetectionSet detections;
  std::optional<std::string> marked_image_hash;
  std::optional<std::string> moos_raw;
  std::optional<SelectionReply> selection;
  std::optional<Box> final_box;
  OutcomeSource source = OutcomeSource::no_candidates;
  std::vector<std::string> flags;  // fallbacks taken, in order
  std::vector<std::string> notes;
  std::optional<std::string> error;

  // Run-dependent; persisted apart from the deterministic trace.
  std::map<std::string, StageTelemetry> telemetry;

  void flag(std::string f) { flags.push_back(std::move(f)); }
  void note(std::string n) { notes.push_back(std::move(n)); }
};

// Deterministic part only.
nlohmann::ordered_json trace_to_json(const StageTrace& trace);
StageTrace trace_from_json(const nlohmann::json& j);
nlohmann::ordered_json telemetry_to_json(const StageTrace& trace);

struct SampleResult {
  SelectionOutcome outcome;
  StageTrace trace;
  std::optional<MarkedImage> marked;
  bool failed = false;
};

struct LoadedImage {
  std::vector<std::uint8_t> bytes;
  Image pixels;
  std::string sha256;
};

LoadedImage load_sample_image(const QuerySample& sample, const std::string& image_root);

// Stage building blocks; run_sample composes them according to the variant.
std::vector<std::string> extract_subjects(const QuerySample& sample, bool use_tase, const PipelineConfig& cfg,
                                          Backends& backends, StageTrace& trace);
DetectionSet position_objects(std::span<const std::string> subjects, const LoadedImage& image,
                              const PipelineConfig& cfg, Backends& backends, StageTrace& trace);
SelectionOutcome select_object(const QuerySample& sample, const DetectionSet& detections, const Image& pixels,
                               bool use_moos, const PipelineConfig& cfg, Backends& backends, StageTrace& trace,
                               std::optional<MarkedImage>* marked_out = nullptr);
// Highest score under the candidate ordering, i.e. mark 1.
std::optional<Candidate> argmax_candidate(const DetectionSet& detections);

SampleResult run_sample(const QuerySample& sample, const PipelineConfig& cfg, Backends& backends);

// Called from worker threads as each sample completes.
using SampleSink = std::function<void(std::size_t index, const SampleResult& result)>;

// Results in manifest order regardless of completion order.
std::vector<SampleResult> run_split(const SplitManifest& manifest, const PipelineConfig& cfg, Backends& backends,
                                    const SampleSink& sink = {});

}  // namespace mqa
