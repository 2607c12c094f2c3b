#pragma once

// Twenty-sample end-to-end fixture served entirely by the mock backends.
//
// Every image is a 100x100 solid color with ground truth [10,10,50,50]. The
// candidate boxes used below have these IoUs with the ground truth:
//   A [10,10,50,50] 1.0   H [10,10,50,30] 0.5   Q [10,10,50,22] 0.3
//   S [10,10,50,18] 0.2   D [60,60,90,90] 0.0   W [-5,10,50,50] 0.8 after clipping
//
// Hand-tallied expectations:
//   full, no_tase            Acc@0.25 70.00  Acc@0.5 60.00
//   no_moos, detector_only   Acc@0.25 50.00  Acc@0.5 40.00

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "mqa/hash.hpp"
#include "mqa/image.hpp"
#include "mqa/marker.hpp"
#include "mqa/mllm.hpp"
#include "mqa/pipeline.hpp"

namespace mqa::fixture {

namespace fs = std::filesystem;

inline constexpr const char* kModel = "mock-mllm";

struct Det {
  Box box;
  double score;
};

struct SampleScript {
  std::string id;
  std::string tase_reply;
  std::vector<std::pair<std::string, std::vector<Det>>> by_subject;
  std::string moos_reply;  // empty when MOOS never runs
};

inline const Box A{10, 10, 50, 50}, H{10, 10, 50, 30}, Q{10, 10, 50, 22}, S{10, 10, 50, 18}, D{60, 60, 90, 90},
    W{-5, 10, 50, 50};

inline std::string expression_of(const std::string& id) { return "the object in picture " + id; }

inline std::vector<SampleScript> scripts() {
  std::vector<SampleScript> out;
  const auto simple = [&](std::string id, std::vector<Det> dets, std::string moos) {
    out.push_back({id, "target .", {{"target", std::move(dets)}}, std::move(moos)});
  };
  simple("s01", {{D, 0.9}, {A, 0.6}}, "[2]");
  simple("s02", {{D, 0.9}, {H, 0.7}}, "[2]");
  simple("s03", {{D, 0.9}, {Q, 0.5}}, "2");
  simple("s04", {{S, 0.8}, {A, 0.4}}, "The answer is [1].");
  simple("s05", {{A, 0.9}, {D, 0.3}}, "[1]");
  simple("s06", {{A, 0.9}}, "[1]");
  simple("s07", {}, "");
  simple("s08", {{D, 0.9}, {A, 0.8}}, "[3]");
  simple("s09", {{A, 0.9}, {D, 0.8}}, "banana");
  simple("s10", {{H, 0.9}, {D, 0.5}}, "I cannot determine which object is meant.");
  out.push_back({"s11", "   ", {{expression_of("s11"), {{A, 0.7}}}}, "[1]"});
  out.push_back({"s12", "dog . frisbee .", {{"dog", {{A, 0.8}}}, {"frisbee", {{D, 0.85}}}}, "[2]"});
  out.push_back({"s13", "bear . bee .", {{"bear", {{A, 0.7}}}, {"bee", {{A, 0.6}}}}, "[1]"});
  simple("s14", {{Q, 0.9}, {S, 0.6}}, "[2]");
  simple("s15", {{A, 0.2}, {D, 0.9}}, "[1]");
  simple("s16", {{W, 0.9}}, "[1]");
  simple("s17", {{D, 0.5}, {Q, 0.5}}, "[1]");
  simple("s18", {{S, 0.9}, {H, 0.8}, {D, 0.7}}, "[2]");
  simple("s19", {{D, 0.9}, {A, 0.1}}, "[1]");
  simple("s20", {{A, 0.6}, {H, 0.95}}, "[2]");
  return out;
}

// Candidates surviving the box threshold, deduplicated.
inline std::size_t surviving(const SampleScript& s) {
  std::vector<Candidate> c;
  for (const auto& [subject, dets] : s.by_subject)
    for (const auto& d : dets)
      if (d.score >= 0.25) c.push_back({clip_box(d.box, 100, 100), d.score, subject, 1});
  return dedup_candidates(std::move(c), 0.9).size();
}

inline nlohmann::json detect_response(const std::vector<Det>& dets, const std::string& label) {
  nlohmann::json r{{"boxes", nlohmann::json::array()}, {"scores", nlohmann::json::array()},
                   {"labels", nlohmann::json::array()}};
  for (const auto& d : dets) {
    r["boxes"].push_back(to_json(d.box));
    r["scores"].push_back(d.score);
    r["labels"].push_back(label);
  }
  return r;
}

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

struct Golden {
  fs::path dir;
  fs::path config_path;
  PipelineConfig cfg;
  SplitManifest manifest;
};

// Writes images, manifest, mock fixtures and config.json under `dir`.
inline Golden make_golden(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir / "images");
  const auto all = scripts();

  // Any encoded image will do for building MOOS prompts; images are not hashed.
  const Image tiny(4, 4, {0, 0, 0});
  MarkedImage placeholder;
  placeholder.png = encode_png(tiny);

  SplitManifest manifest;
  manifest.split = {DatasetTag::refcocog, SplitTag::val};
  nlohmann::json mllm = nlohmann::json::object();
  nlohmann::json detector = nlohmann::json::array();

  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& s = all[i];
    const auto v = static_cast<std::uint8_t>(10 * (i + 1));
    const auto png = encode_png(Image(100, 100, {v, static_cast<std::uint8_t>(255 - v), static_cast<std::uint8_t>(i)}));
    const std::string image = "images/" + s.id + ".png";
    write_text(dir / image, std::string(png.begin(), png.end()));
    const auto sha = sha256_hex(png);
    const auto expr = expression_of(s.id);
    manifest.samples.push_back({s.id, image, expr, A, manifest.split.dataset, manifest.split.split});

    mllm[prompt_hash(build_tase_prompt(expr, kModel))] = s.tase_reply;
    const auto k = surviving(s);
    if (k > 0) mllm[prompt_hash(build_moos_prompt(expr, placeholder, static_cast<int>(k), kModel))] = s.moos_reply;

    // Per-subject prompts, plus the whole expression as a single prompt
    // answering with the union of the subject detections.
    std::vector<Det> union_dets;
    for (const auto& [subject, dets] : s.by_subject) {
      const std::string one[] = {subject};
      detector.push_back({{"image_sha256", sha}, {"prompt", render_detector_prompt(one)},
                          {"response", detect_response(dets, subject)}});
      union_dets.insert(union_dets.end(), dets.begin(), dets.end());
    }
    const std::string whole[] = {expr};
    if (s.by_subject.front().first != expr)
      detector.push_back({{"image_sha256", sha}, {"prompt", render_detector_prompt(whole)},
                          {"response", detect_response(union_dets, expr)}});
  }

  write_text(dir / "manifest.jsonl", serialize_manifest(manifest));
  write_text(dir / "mllm.json", mllm.dump(2));
  write_text(dir / "detector.json", detector.dump(2));
  const nlohmann::json config{
      {"mllm", {{"kind", "mock"}, {"model", kModel}, {"fixture", "mllm.json"}, {"backoff_ms", 0}}},
      {"detector", {{"kind", "mock"}, {"id", "mockdet"}, {"fixture", "detector.json"}, {"strict_fixture", true}}},
      {"concurrency", 4},
      {"cache_dir", "cache"},
      {"image_root", "."},
      {"manifests", {{"refcocog:val", "manifest.jsonl"}}}};
  write_text(dir / "config.json", config.dump(2));

  Golden g;
  g.dir = dir;
  g.config_path = dir / "config.json";
  g.cfg = load_pipeline_config(g.config_path.string());
  g.manifest = load_manifest((dir / "manifest.jsonl").string());
  return g;
}

inline fs::path scratch_dir(const std::string& name) {
  return fs::temp_directory_path() / ("mqa_" + name + "_" + std::to_string(::getpid()));
}

}  // namespace mqa::fixture
