#include "mqa/pipeline.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "mqa/error.hpp"
#include "mqa/hash.hpp"
#include "mqa/image.hpp"

namespace mqa {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1));
}

// One MLLM exchange behind the cache.
std::string cached_chat(Stage stage, const ChatRequest& req, const std::string& image_hash, const PipelineConfig& cfg,
                        Backends& backends, StageTelemetry& tel) {
  const auto t0 = Clock::now();
  CacheKeyInputs in;
  in.model_id = req.model_id;
  in.template_version = cfg.template_version;
  in.prompt = prompt_text(req);
  in.image_hash = image_hash;
  const auto key = cache_key(stage, in);
  if (backends.cache) {
    if (auto hit = backends.cache->get(stage, key)) {
      ++tel.cache_hits;
      tel.ms += ms_since(t0);
      return *hit;
    }
  }
  const auto res = chat_complete(req, *backends.mllm, cfg.mllm.retry, backends.limiter.get());
  ++tel.calls;
  tel.retries += res.retries;
  if (backends.cache) backends.cache->put(stage, key, res.text);
  tel.ms += ms_since(t0);
  return res.text;
}

ChatRequest with_generation(ChatRequest req, const PipelineConfig& cfg) {
  req.temperature = cfg.mllm.temperature;
  req.max_tokens = cfg.mllm.max_tokens;
  return req;
}

nlohmann::ordered_json opt_box(const std::optional<Box>& b) {
  return b ? nlohmann::ordered_json(to_json(*b)) : nlohmann::ordered_json(nullptr);
}

template <typename T>
nlohmann::ordered_json opt_str(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_tase: return "no_tase";
    case Variant::no_moos: return "no_moos";
    case Variant::detector_only: return "detector_only";
  }
  return "full";
}

std::optional<Variant> parse_variant(std::string_view text) {
  for (auto v : kAllVariants)
    if (to_string(v) == text) return v;
  return std::nullopt;
}

bool uses_tase(Variant v) noexcept { return v == Variant::full || v == Variant::no_moos; }
bool uses_moos(Variant v) noexcept { return v == Variant::full || v == Variant::no_tase; }

std::string_view to_string(OutcomeSource s) noexcept {
  switch (s) {
    case OutcomeSource::moos: return "moos";
    case OutcomeSource::argmax_score: return "argmax_score";
    case OutcomeSource::argmax_score_fallback: return "argmax_score_fallback";
    case OutcomeSource::no_candidates: return "no_candidates";
    case OutcomeSource::failed: return "failed";
  }
  return "failed";
}

std::optional<OutcomeSource> parse_outcome_source(std::string_view text) {
  for (auto s : {OutcomeSource::moos, OutcomeSource::argmax_score, OutcomeSource::argmax_score_fallback,
                 OutcomeSource::no_candidates, OutcomeSource::failed})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

nlohmann::ordered_json trace_to_json(const StageTrace& t) {
  nlohmann::ordered_json j;
  j["sample_id"] = t.sample_id;
  j["variant"] = std::string(to_string(t.variant));
  j["expression"] = t.expression;
  j["tase_raw"] = opt_str(t.tase_raw);
  j["subjects"] = t.subjects;
  auto dets = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < t.detections.size(); ++i) {
    const auto& c = t.detections.candidates[i];
    nlohmann::ordered_json d;
    d["mark"] = t.detections.marks.at(i);
    d["box"] = to_json(c.box);
    d["score"] = c.score;
    d["label"] = c.label;
    d["subject_index"] = c.subject_index;
    dets.push_back(std::move(d));
  }
  j["detections"] = std::move(dets);
  j["marked_image_hash"] = opt_str(t.marked_image_hash);
  j["moos_raw"] = opt_str(t.moos_raw);
  if (t.selection) {
    j["selection"] = {{"chosen_mark", opt_str(t.selection->chosen_mark)},
                      {"parse_status", std::string(to_string(t.selection->parse_status))}};
  } else {
    j["selection"] = nullptr;
  }
  j["final_box"] = opt_box(t.final_box);
  j["source"] = std::string(to_string(t.source));
  j["flags"] = t.flags;
  j["notes"] = t.notes;
  j["error"] = opt_str(t.error);
  return j;
}

StageTrace trace_from_json(const nlohmann::json& j) {
  try {
    StageTrace t;
    t.sample_id = j.at("sample_id").get<std::string>();
    const auto v = parse_variant(j.at("variant").get<std::string>());
    if (!v) throw ParseError("trace: unknown variant");
    t.variant = *v;
    t.expression = j.at("expression").get<std::string>();
    if (!j.at("tase_raw").is_null()) t.tase_raw = j["tase_raw"].get<std::string>();
    t.subjects = j.at("subjects").get<std::vector<std::string>>();
    std::vector<Candidate> cands;
    for (const auto& d : j.at("detections")) {
      t.detections.marks.push_back(d.at("mark").get<int>());
      t.detections.candidates.push_back({box_from_json(d.at("box")), d.at("score").get<double>(),
                                         d.at("label").get<std::string>(), d.at("subject_index").get<int>()});
    }
    if (!j.at("marked_image_hash").is_null()) t.marked_image_hash = j["marked_image_hash"].get<std::string>();
    if (!j.at("moos_raw").is_null()) t.moos_raw = j["moos_raw"].get<std::string>();
    if (!j.at("selection").is_null()) {
      SelectionReply r;
      const auto& s = j["selection"];
      if (!s.at("chosen_mark").is_null()) r.chosen_mark = s["chosen_mark"].get<std::int64_t>();
      const auto st = parse_parse_status(s.at("parse_status").get<std::string>());
      if (!st) throw ParseError("trace: unknown parse_status");
      r.parse_status = *st;
      r.raw_reply = t.moos_raw.value_or("");
      t.selection = r;
    }
    if (!j.at("final_box").is_null()) t.final_box = box_from_json(j["final_box"]);
    const auto src = parse_outcome_source(j.at("source").get<std::string>());
    if (!src) throw ParseError("trace: unknown source");
    t.source = *src;
    t.flags = j.at("flags").get<std::vector<std::string>>();
    t.notes = j.at("notes").get<std::vector<std::string>>();
    if (!j.at("error").is_null()) t.error = j["error"].get<std::string>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("trace: ") + e.what());
  }
}

nlohmann::ordered_json telemetry_to_json(const StageTrace& trace) {
  nlohmann::ordered_json j;
  j["sample_id"] = trace.sample_id;
  for (const auto& [stage, tel] : trace.telemetry)
    j["stages"][stage] = {{"ms", tel.ms}, {"calls", tel.calls}, {"retries", tel.retries}, {"cache_hits", tel.cache_hits}};
  return j;
}

LoadedImage load_sample_image(const QuerySample& sample, const std::string& image_root) {
  const auto path = resolve_image_path(sample, image_root);
  LoadedImage out;
  if (path.rfind("http://", 0) == 0 || path.rfind("https://", 0) == 0) {
    const auto reply = http_get(path, {}, std::chrono::seconds(60));
    if (reply.status != 200) throw ImageError("cannot fetch image " + path + ": status " + std::to_string(reply.status));
    out.bytes.assign(reply.body.begin(), reply.body.end());
  } else {
    try {
      out.bytes = read_file_bytes(path);
    } catch (const Error&) {
      throw ImageError("cannot read image " + path);
    }
  }
  out.pixels = decode_image(out.bytes);
  out.sha256 = sha256_hex(out.bytes);
  return out;
}

std::vector<std::string> extract_subjects(const QuerySample& sample, bool use_tase, const PipelineConfig& cfg,
                                          Backends& backends, StageTrace& trace) {
  if (!use_tase) {
    trace.subjects = {trim(sample.expression)};
    return trace.subjects;
  }
  const auto req = with_generation(build_tase_prompt(sample.expression, cfg.mllm.model), cfg);
  const auto raw = cached_chat(Stage::tase, req, {}, cfg, backends, trace.telemetry["tase"]);
  trace.tase_raw = raw;
  try {
    trace.subjects = parse_subjects(raw).subjects;
  } catch (const EmptySubjectsError&) {
    trace.flag("tase_empty_fallback");
    trace.subjects = {trim(sample.expression)};
  }
  return trace.subjects;
}

DetectionSet position_objects(std::span<const std::string> subjects, const LoadedImage& image,
                              const PipelineConfig& cfg, Backends& backends, StageTrace& trace) {
  auto& tel = trace.telemetry["detect"];
  std::mutex tel_mu;
  const auto t0 = Clock::now();
  const auto& d = cfg.detector.descriptor;
  DetectCall call = [&](const nlohmann::json& body) -> nlohmann::json {
    CacheKeyInputs in;
    in.model_id = d.id;
    in.template_version = cfg.template_version;
    in.prompt = body.at("prompt").get<std::string>();
    in.image_hash = image.sha256;
    in.box_threshold = cfg.detection.box_threshold;
    in.text_threshold = cfg.detection.text_threshold;
    in.max_detections = cfg.detection.max_detections;
    const auto key = cache_key(Stage::detect, in);
    if (backends.cache) {
      if (auto hit = backends.cache->get(Stage::detect, key)) {
        std::lock_guard lock(tel_mu);
        ++tel.cache_hits;
        return nlohmann::json::parse(*hit);
      }
    }
    const std::string wire = body.dump();
    const auto res = send_with_retry([&] { return backends.detector->post_detect(wire); }, cfg.detector.retry,
                                     "detector " + d.id);
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(res.reply.body);
    } catch (const nlohmann::json::parse_error&) {
      throw TransportError(TransportErrorKind::malformed, "detector returned non-JSON body", res.retries);
    }
    // Validate before caching so a bad body is never replayed.
    parse_detect_response(parsed, d.synthesize_scores);
    if (backends.cache) backends.cache->put(Stage::detect, key, parsed.dump());
    std::lock_guard lock(tel_mu);
    ++tel.calls;
    tel.retries += res.retries;
    return parsed;
  };
  const ImageRef ref{image.bytes, image.pixels.width(), image.pixels.height()};
  auto out = detect(subjects, ref, cfg.detection, d, call);
  for (auto& n : out.notes) trace.note(std::move(n));
  trace.detections = out.detections;
  tel.ms += ms_since(t0);
  return std::move(out.detections);
}

std::optional<Candidate> argmax_candidate(const DetectionSet& detections) {
  if (detections.empty()) return std::nullopt;
  return detections.by_mark(1);
}

SelectionOutcome select_object(const QuerySample& sample, const DetectionSet& detections, const Image& pixels,
                               bool use_moos, const PipelineConfig& cfg, Backends& backends, StageTrace& trace,
                               std::optional<MarkedImage>* marked_out) {
  SelectionOutcome out{sample.id, std::nullopt, OutcomeSource::no_candidates};
  const auto finish = [&](SelectionOutcome o) {
    trace.final_box = o.predicted_box;
    trace.source = o.source;
    return o;
  };
  if (detections.empty()) return finish(out);

  const auto top = argmax_candidate(detections);
  if (!use_moos) return finish({sample.id, top->box, OutcomeSource::argmax_score});
  if (detections.size() == 1 && cfg.short_circuit_single) {
    trace.flag("moos_short_circuit");
    return finish({sample.id, top->box, OutcomeSource::argmax_score});
  }

  auto marked = render(pixels, detections, cfg.style);
  trace.marked_image_hash = marked.content_hash;
  const int k = static_cast<int>(detections.size());
  const auto req = with_generation(build_moos_prompt(sample.expression, marked, k, cfg.mllm.model), cfg);
  const auto raw = cached_chat(Stage::moos, req, marked.content_hash, cfg, backends, trace.telemetry["moos"]);
  if (marked_out) *marked_out = std::move(marked);
  trace.moos_raw = raw;
  const auto sel = parse_selection(raw, k, cfg.mllm.refusal_patterns);
  trace.selection = sel;
  if (sel.parse_status == ParseStatus::ok)
    return finish({sample.id, detections.by_mark(static_cast<int>(*sel.chosen_mark)).box, OutcomeSource::moos});
  trace.flag("moos_" + std::string(to_string(sel.parse_status)) + "_fallback");
  return finish({sample.id, top->box, OutcomeSource::argmax_score_fallback});
}

SampleResult run_sample(const QuerySample& sample, const PipelineConfig& cfg, Backends& backends) {
  SampleResult r;
  r.trace.sample_id = sample.id;
  r.trace.variant = cfg.variant;
  r.trace.expression = sample.expression;
  r.outcome.sample_id = sample.id;
  try {
    const auto image = load_sample_image(sample, cfg.image_root);
    const auto subjects = extract_subjects(sample, uses_tase(cfg.variant), cfg, backends, r.trace);
    const auto dets = position_objects(subjects, image, cfg, backends, r.trace);
    r.outcome = select_object(sample, dets, image.pixels, uses_moos(cfg.variant), cfg, backends, r.trace, &r.marked);
  } catch (const std::exception& e) {
    r.failed = true;
    r.outcome = {sample.id, std::nullopt, OutcomeSource::failed};
    r.trace.final_box.reset();
    r.trace.source = OutcomeSource::failed;
    r.trace.error = e.what();
  }
  return r;
}

std::vector<SampleResult> run_split(const SplitManifest& manifest, const PipelineConfig& cfg, Backends& backends,
                                    const SampleSink& sink) {
  std::vector<SampleResult> results(manifest.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr sink_error;
  std::mutex err_mu;
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= manifest.size()) return;
      results[i] = run_sample(manifest.samples[i], cfg, backends);
      if (!sink) continue;
      try {
        sink(i, results[i]);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!sink_error) sink_error = std::current_exception();
      }
    }
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, cfg.concurrency)), manifest.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (sink_error) std::rethrow_exception(sink_error);
  return results;
}

}  // namespace mqa
