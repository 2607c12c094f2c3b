#pragma once

#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqa/dataset.hpp"
#include "mqa/metrics.hpp"
#include "mqa/pipeline.hpp"

namespace mqa {

namespace fs = std::filesystem;

// Run directory layout:
//   run.json          config snapshot, split, variant, counts, wall clock
//   manifest.jsonl    the (sampled) manifest the run scored against
//   traces/<id>.json  deterministic per-sample trace and outcome
//   telemetry/<id>.json  timing, retries, cache hits
//   marked/<id>.png   marked image shown to the MLLM
//   records.jsonl, records.csv, failures.jsonl, report.md, report.csv
std::string sample_file_stem(const std::string& sample_id);

class RunWriter {
 public:
  RunWriter(fs::path dir, const PipelineConfig& cfg, const SplitManifest& manifest, std::string method);

  // Thread-safe; writes one sample's files.
  void write_sample(const SampleResult& result);
  // Writes records, failures and run.json. Returns the aggregate row.
  MetricsRow finish(const std::vector<SampleResult>& results, std::chrono::duration<double> wall);

  const fs::path& dir() const noexcept { return dir_; }

 private:
  fs::path dir_;
  nlohmann::ordered_json meta_;
  SplitManifest manifest_;
  std::string method_;
};

struct RunData {
  fs::path dir;
  SplitId split;
  Variant variant = Variant::full;
  std::string method;
  std::string detector_id;
  SplitManifest manifest;
  std::vector<StageTrace> traces;  // manifest order
  std::size_t failures = 0;
  Aggregate metrics;
};

// Recomputes metrics from the persisted traces and manifest.
RunData load_run(const fs::path& dir);

struct MetricsTable {
  std::vector<MetricsRow> rows;
};

// Every row gets a delta against `baseline` (index into runs) except the baseline
// itself. Throws ValidationError when splits differ.
MetricsTable build_table(const std::vector<RunData>& runs, std::optional<std::size_t> baseline);

std::string render_markdown(const MetricsTable& table);
std::string render_csv(const MetricsTable& table);

// Ablation grid: stage checkmarks x Acc@0.25 / Acc@0.5.
std::string render_ablation_markdown(const std::vector<RunData>& runs);
std::string render_ablation_csv(const std::vector<RunData>& runs);

// Writes <stem>_marked.png (when a marked image exists), <stem>_overlay.png and
// <stem>_caption.txt for each id. Throws ValidationError for unknown ids.
std::vector<fs::path> visualize(const fs::path& run_dir, const std::vector<std::string>& ids, const fs::path& out_dir,
                                const std::string& image_root);

}  // namespace mqa
