#include <cstdlib>
#include <filesystem>

#include "mqa/error.hpp"
#include "mqa/hash.hpp"
#include "mqa/pipeline.hpp"

namespace mqa {

namespace {

namespace fs = std::filesystem;

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || fs::path(path).is_absolute() || path.find("://") != std::string::npos) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

RetryPolicy retry_from_json(const nlohmann::json& j, RetryPolicy p) {
  p.max_retries = j.value("max_retries", p.max_retries);
  p.base_delay = std::chrono::milliseconds(j.value("backoff_ms", static_cast<long>(p.base_delay.count())));
  p.max_delay = std::chrono::milliseconds(j.value("max_backoff_ms", static_cast<long>(p.max_delay.count())));
  return p;
}

void retry_to_json(nlohmann::ordered_json& j, const RetryPolicy& p) {
  j["max_retries"] = p.max_retries;
  j["backoff_ms"] = p.base_delay.count();
  j["max_backoff_ms"] = p.max_delay.count();
}

}  // namespace

void validate(const PipelineConfig& cfg) {
  if (cfg.mllm.kind != "openai" && cfg.mllm.kind != "mock") throw ConfigError("mllm.kind must be openai or mock");
  if (cfg.detector.kind != "http" && cfg.detector.kind != "mock") throw ConfigError("detector.kind must be http or mock");
  if (cfg.mllm.kind == "mock" && cfg.mllm.fixture.empty()) throw ConfigError("mllm.fixture is required for a mock MLLM");
  if (cfg.mllm.max_tokens < 1) throw ConfigError("mllm.max_tokens must be >= 1");
  if (cfg.mllm.retry.max_retries < 0 || cfg.detector.retry.max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (cfg.detector.descriptor.id.empty()) throw ConfigError("detector.id must not be empty");
  validate(cfg.detection);
  validate(cfg.style);
  if (!(cfg.sample_ratio > 0.0 && cfg.sample_ratio <= 1.0)) throw ConfigError("sampling.ratio must be in (0, 1]");
  if (cfg.concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (!(cfg.failure_ceiling >= 0.0 && cfg.failure_ceiling <= 1.0)) throw ConfigError("failure_ceiling must be in [0, 1]");
  if (cfg.template_version.empty()) throw ConfigError("template_version must not be empty");
}

nlohmann::ordered_json to_json(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  auto& m = j["mllm"];
  m["kind"] = cfg.mllm.kind;
  m["endpoint"] = cfg.mllm.endpoint;
  m["model"] = cfg.mllm.model;
  m["api_key_env"] = cfg.mllm.api_key_env;
  m["fixture"] = cfg.mllm.fixture;
  m["temperature"] = cfg.mllm.temperature;
  m["max_tokens"] = cfg.mllm.max_tokens;
  m["timeout_s"] = cfg.mllm.timeout_s;
  m["requests_per_minute"] = cfg.mllm.requests_per_minute;
  retry_to_json(m, cfg.mllm.retry);
  m["refusal_patterns"] = cfg.mllm.refusal_patterns;

  auto& d = j["detector"];
  d["kind"] = cfg.detector.kind;
  d["id"] = cfg.detector.descriptor.id;
  d["url"] = cfg.detector.url;
  d["fixture"] = cfg.detector.fixture;
  d["strict_fixture"] = cfg.detector.strict_fixture;
  d["joined_prompt"] = cfg.detector.descriptor.joined_prompt;
  d["synthesize_scores"] = cfg.detector.descriptor.synthesize_scores;
  d["timeout_s"] = cfg.detector.timeout_s;
  retry_to_json(d, cfg.detector.retry);

  j["thresholds"] = {{"box", cfg.detection.box_threshold}, {"text", cfg.detection.text_threshold}};
  j["max_detections"] = cfg.detection.max_detections;
  j["dedup_iou"] = cfg.detection.dedup_iou;
  auto palette = nlohmann::ordered_json::array();
  for (const auto& c : cfg.style.palette) palette.push_back({c.r, c.g, c.b});
  j["marker"] = {{"palette", palette},
                 {"badge_divisor", cfg.style.badge_divisor},
                 {"badge_min", cfg.style.badge_min},
                 {"outline_width", cfg.style.outline_width}};
  j["sampling"] = {{"ratio", cfg.sample_ratio}, {"seed", cfg.seed}};
  j["variant"] = std::string(to_string(cfg.variant));
  j["concurrency"] = cfg.concurrency;
  j["cache_dir"] = cfg.cache_dir;
  j["template_version"] = cfg.template_version;
  j["short_circuit_single"] = cfg.short_circuit_single;
  j["failure_ceiling"] = cfg.failure_ceiling;
  j["image_root"] = cfg.image_root;
  j["manifests"] = cfg.manifests;
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig cfg;
  try {
    if (auto it = j.find("mllm"); it != j.end()) {
      const auto& m = *it;
      cfg.mllm.kind = m.value("kind", cfg.mllm.kind);
      cfg.mllm.endpoint = m.value("endpoint", cfg.mllm.endpoint);
      cfg.mllm.model = m.value("model", cfg.mllm.model);
      cfg.mllm.api_key_env = m.value("api_key_env", cfg.mllm.api_key_env);
      cfg.mllm.fixture = resolve(m.value("fixture", std::string{}), base_dir);
      cfg.mllm.temperature = m.value("temperature", cfg.mllm.temperature);
      cfg.mllm.max_tokens = m.value("max_tokens", cfg.mllm.max_tokens);
      cfg.mllm.timeout_s = m.value("timeout_s", cfg.mllm.timeout_s);
      cfg.mllm.requests_per_minute = m.value("requests_per_minute", cfg.mllm.requests_per_minute);
      cfg.mllm.retry = retry_from_json(m, cfg.mllm.retry);
      if (m.contains("refusal_patterns")) cfg.mllm.refusal_patterns = m["refusal_patterns"].get<std::vector<std::string>>();
    }
    if (auto it = j.find("detector"); it != j.end()) {
      const auto& d = *it;
      cfg.detector.kind = d.value("kind", cfg.detector.kind);
      cfg.detector.descriptor.id = d.value("id", cfg.detector.descriptor.id);
      cfg.detector.url = d.value("url", cfg.detector.url);
      cfg.detector.fixture = resolve(d.value("fixture", std::string{}), base_dir);
      cfg.detector.strict_fixture = d.value("strict_fixture", cfg.detector.strict_fixture);
      cfg.detector.descriptor.joined_prompt = d.value("joined_prompt", false);
      cfg.detector.descriptor.synthesize_scores = d.value("synthesize_scores", false);
      cfg.detector.timeout_s = d.value("timeout_s", cfg.detector.timeout_s);
      cfg.detector.retry = retry_from_json(d, cfg.detector.retry);
    }
    if (auto it = j.find("thresholds"); it != j.end()) {
      cfg.detection.box_threshold = it->value("box", cfg.detection.box_threshold);
      cfg.detection.text_threshold = it->value("text", cfg.detection.text_threshold);
    }
    cfg.detection.max_detections = j.value("max_detections", cfg.detection.max_detections);
    cfg.detection.dedup_iou = j.value("dedup_iou", cfg.detection.dedup_iou);
    if (auto it = j.find("marker"); it != j.end()) cfg.style = mark_style_from_json(*it);
    if (auto it = j.find("sampling"); it != j.end()) {
      cfg.sample_ratio = it->value("ratio", cfg.sample_ratio);
      cfg.seed = it->value("seed", cfg.seed);
    }
    if (auto it = j.find("variant"); it != j.end()) {
      auto v = parse_variant(it->get<std::string>());
      if (!v) throw ConfigError("unknown variant \"" + it->get<std::string>() + "\"");
      cfg.variant = *v;
    }
    cfg.concurrency = j.value("concurrency", cfg.concurrency);
    cfg.cache_dir = resolve(j.value("cache_dir", cfg.cache_dir), base_dir);
    cfg.template_version = j.value("template_version", cfg.template_version);
    cfg.short_circuit_single = j.value("short_circuit_single", cfg.short_circuit_single);
    cfg.failure_ceiling = j.value("failure_ceiling", cfg.failure_ceiling);
    cfg.image_root = resolve(j.value("image_root", cfg.image_root), base_dir);
    if (auto it = j.find("manifests"); it != j.end()) {
      for (const auto& [k, v] : it->items()) {
        parse_split_id(k);
        cfg.manifests[k] = resolve(v.get<std::string>(), base_dir);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const Error&) {
    throw ConfigError("cannot read config file " + path);
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  const auto base = fs::path(path).parent_path().string();
  return pipeline_config_from_json(j, base.empty() ? "." : base);
}

Backends make_backends(const PipelineConfig& cfg) {
  validate(cfg);
  Backends b;
  if (cfg.mllm.kind == "mock") {
    b.mllm = MockChatTransport::from_file(cfg.mllm.fixture);
  } else {
    std::string token;
    if (!cfg.mllm.api_key_env.empty())
      if (const char* v = std::getenv(cfg.mllm.api_key_env.c_str())) token = v;
    b.mllm = std::make_shared<HttpChatTransport>(cfg.mllm.endpoint, token, std::chrono::seconds(cfg.mllm.timeout_s));
  }
  if (cfg.detector.kind == "mock") {
    auto mock = cfg.detector.fixture.empty() ? std::make_shared<MockDetectorTransport>()
                                             : MockDetectorTransport::from_file(cfg.detector.fixture);
    mock->set_strict(cfg.detector.strict_fixture);
    b.detector = mock;
  } else {
    b.detector = std::make_shared<HttpDetectorTransport>(cfg.detector.url, std::chrono::seconds(cfg.detector.timeout_s));
  }
  if (!cfg.cache_dir.empty()) b.cache = std::make_shared<DiskCache>(cfg.cache_dir);
  b.limiter = std::make_shared<RateLimiter>(cfg.mllm.requests_per_minute);
  return b;
}

}  // namespace mqa
