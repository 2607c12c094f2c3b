#include "mqa/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mqa/error.hpp"
#include "mqa/hash.hpp"
#include "mqa/image.hpp"

namespace mqa {

namespace {

void write_json(const fs::path& p, const nlohmann::ordered_json& j) { write_file_atomic(p.string(), j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file_text(p.string()));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

int variant_rank(Variant v) {
  switch (v) {
    case Variant::detector_only: return 0;
    case Variant::no_moos: return 1;
    case Variant::no_tase: return 2;
    case Variant::full: return 3;
  }
  return 4;
}

std::vector<const RunData*> ablation_order(const std::vector<RunData>& runs) {
  if (runs.empty()) throw ValidationError("ablation: no runs");
  std::vector<const RunData*> out;
  for (const auto& r : runs) {
    if (!(r.split == runs.front().split)) throw ValidationError("ablation: runs cover different splits");
    out.push_back(&r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RunData* a, const RunData* b) { return variant_rank(a->variant) < variant_rank(b->variant); });
  return out;
}

}  // namespace

std::string sample_file_stem(const std::string& sample_id) {
  std::string stem;
  bool changed = sample_id.empty() || sample_id.front() == '.';
  for (char c : sample_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    stem += ok ? c : '_';
    changed |= !ok;
  }
  if (changed) stem += "-" + sha256_hex(sample_id).substr(0, 8);
  return stem;
}

RunWriter::RunWriter(fs::path dir, const PipelineConfig& cfg, const SplitManifest& manifest, std::string method)
    : dir_(std::move(dir)), manifest_(manifest), method_(std::move(method)) {
  for (const char* sub : {"traces", "telemetry", "marked"}) fs::create_directories(dir_ / sub);
  write_file_atomic((dir_ / "manifest.jsonl").string(), serialize_manifest(manifest_));
  meta_["split"] = manifest_.split.str();
  meta_["variant"] = std::string(to_string(cfg.variant));
  meta_["method"] = method_;
  meta_["detector_id"] = cfg.detector.descriptor.id;
  meta_["manifest_checksum"] = manifest_.source_checksum;
  meta_["config"] = to_json(cfg);
  write_json(dir_ / "run.json", meta_);
}

void RunWriter::write_sample(const SampleResult& result) {
  const auto stem = sample_file_stem(result.trace.sample_id);
  write_json(dir_ / "traces" / (stem + ".json"), trace_to_json(result.trace));
  write_json(dir_ / "telemetry" / (stem + ".json"), telemetry_to_json(result.trace));
  if (result.marked) {
    const auto& png = result.marked->png;
    write_file_atomic((dir_ / "marked" / (stem + ".png")).string(),
                      std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
  }
}

MetricsRow RunWriter::finish(const std::vector<SampleResult>& results, std::chrono::duration<double> wall) {
  std::vector<SelectionOutcome> outcomes;
  std::string failures;
  std::size_t failed = 0;
  for (const auto& r : results) {
    outcomes.push_back(r.outcome);
    if (!r.failed) continue;
    ++failed;
    nlohmann::ordered_json f;
    f["sample_id"] = r.trace.sample_id;
    f["error"] = r.trace.error.value_or("");
    failures += f.dump() + "\n";
  }
  const auto agg = aggregate(outcomes, manifest_, method_);
  write_file_atomic((dir_ / "records.jsonl").string(), records_to_jsonl(agg.records));
  write_file_atomic((dir_ / "records.csv").string(), records_to_csv(agg.records));
  write_file_atomic((dir_ / "failures.jsonl").string(), failures);

  const MetricsTable table{{agg.row}};
  write_file_atomic((dir_ / "report.md").string(), render_markdown(table));
  write_file_atomic((dir_ / "report.csv").string(), render_csv(table));

  meta_["n"] = agg.row.n;
  meta_["failures"] = failed;
  meta_["failure_rate"] = results.empty() ? 0.0 : double(failed) / double(results.size());
  meta_["acc_025"] = agg.row.acc_025;
  meta_["acc_05"] = agg.row.acc_05;
  meta_["wall_s"] = wall.count();
  write_json(dir_ / "run.json", meta_);
  return agg.row;
}

RunData load_run(const fs::path& dir) {
  const auto meta = read_json(dir / "run.json");
  RunData run;
  run.dir = dir;
  try {
    run.split = parse_split_id(meta.at("split").get<std::string>());
    const auto v = parse_variant(meta.at("variant").get<std::string>());
    if (!v) throw ParseError("run.json: unknown variant");
    run.variant = *v;
    run.method = meta.at("method").get<std::string>();
    run.detector_id = meta.value("detector_id", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "run.json").string() + ": " + e.what());
  }
  run.manifest = load_manifest((dir / "manifest.jsonl").string());
  std::vector<SelectionOutcome> outcomes;
  for (const auto& s : run.manifest.samples) {
    const auto p = dir / "traces" / (sample_file_stem(s.id) + ".json");
    if (!fs::exists(p)) throw ValidationError("run " + dir.string() + " has no trace for sample " + s.id);
    auto t = trace_from_json(read_json(p));
    outcomes.push_back({t.sample_id, t.final_box, t.source});
    run.failures += t.source == OutcomeSource::failed;
    run.traces.push_back(std::move(t));
  }
  run.metrics = aggregate(outcomes, run.manifest, run.method);
  return run;
}

MetricsTable build_table(const std::vector<RunData>& runs, std::optional<std::size_t> baseline) {
  if (runs.empty()) throw ValidationError("report: no runs");
  if (baseline && *baseline >= runs.size()) throw ValidationError("report: baseline index out of range");
  for (const auto& r : runs)
    if (!(r.split == runs.front().split))
      throw ValidationError("report: runs cover different splits (" + runs.front().split.str() + " vs " +
                            r.split.str() + ")");
  MetricsTable table;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    auto row = runs[i].metrics.row;
    if (baseline && i != *baseline) {
      const auto& base = runs[*baseline].metrics.row;
      // Deltas of the presented (rounded) accuracies, so the table adds up.
      row.delta_025 = delta(round2(row.acc_025), round2(base.acc_025));
      row.delta_05 = delta(round2(row.acc_05), round2(base.acc_05));
      row.baseline = base.method;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string render_markdown(const MetricsTable& table) {
  std::ostringstream out;
  out << "| Method | Split | N | Acc@0.25 | Acc@0.5 |\n";
  out << "|---|---|---:|---:|---:|\n";
  for (const auto& r : table.rows) {
    out << "| " << r.method << " | " << r.split.str() << " | " << r.n << " | " << format_pct(r.acc_025) << " | "
        << format_pct(r.acc_05) << " |\n";
    if (r.delta_025)
      out << "| \xCE\x94 vs " << r.baseline << " | | | " << format_signed_pct(*r.delta_025) << " | "
          << format_signed_pct(*r.delta_05) << " |\n";
  }
  return out.str();
}

std::string render_csv(const MetricsTable& table) {
  std::ostringstream out;
  out << "method,split,n,acc_025,acc_05,delta_025,delta_05,baseline\n";
  for (const auto& r : table.rows) {
    out << csv_field(r.method) << ',' << r.split.str() << ',' << r.n << ',' << format_pct(r.acc_025) << ','
        << format_pct(r.acc_05) << ',' << (r.delta_025 ? format_signed_pct(*r.delta_025) : "") << ','
        << (r.delta_05 ? format_signed_pct(*r.delta_05) : "") << ',' << csv_field(r.baseline) << '\n';
  }
  return out.str();
}

std::string render_ablation_markdown(const std::vector<RunData>& runs) {
  std::ostringstream out;
  const auto order = ablation_order(runs);
  out << "Split: " << runs.front().split.str() << "\n\n";
  out << "| TASE | MOOS | Acc@0.25 | Acc@0.5 |\n";
  out << "|:---:|:---:|---:|---:|\n";
  for (const auto* r : order) {
    out << "| " << (uses_tase(r->variant) ? "\xE2\x9C\x93" : "") << " | " << (uses_moos(r->variant) ? "\xE2\x9C\x93" : "")
        << " | " << format_pct(r->metrics.row.acc_025) << " | " << format_pct(r->metrics.row.acc_05) << " |\n";
  }
  return out.str();
}

std::string render_ablation_csv(const std::vector<RunData>& runs) {
  std::ostringstream out;
  out << "variant,tase,moos,split,n,acc_025,acc_05\n";
  for (const auto* r : ablation_order(runs)) {
    out << to_string(r->variant) << ',' << uses_tase(r->variant) << ',' << uses_moos(r->variant) << ','
        << r->split.str() << ',' << r->metrics.row.n << ',' << format_pct(r->metrics.row.acc_025) << ','
        << format_pct(r->metrics.row.acc_05) << '\n';
  }
  return out.str();
}

std::vector<fs::path> visualize(const fs::path& run_dir, const std::vector<std::string>& ids, const fs::path& out_dir,
                                const std::string& image_root) {
  const auto run = load_run(run_dir);
  std::vector<std::size_t> picks;
  for (const auto& id : ids) {
    std::size_t i = 0;
    while (i < run.traces.size() && run.traces[i].sample_id != id) ++i;
    if (i == run.traces.size()) throw ValidationError("visualize: no sample \"" + id + "\" in " + run_dir.string());
    picks.push_back(i);
  }
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto i : picks) {
    const auto& t = run.traces[i];
    const auto& sample = run.manifest.samples[i];
    const auto stem = sample_file_stem(t.sample_id);

    const auto marked = run_dir / "marked" / (stem + ".png");
    if (fs::exists(marked)) {
      const auto dst = out_dir / (stem + "_marked.png");
      fs::copy_file(marked, dst, fs::copy_options::overwrite_existing);
      written.push_back(dst);
    }

    auto pixels = load_sample_image(sample, image_root).pixels;
    const int w = pixels.width(), h = pixels.height();
    const auto outline = [&](const Box& b, Rgb c) {
      try {
        draw_box_outline(pixels, clip_box(b, w, h), c, 3);
      } catch (const DegenerateBoxError&) {
      }
    };
    outline(sample.gt_box, {0, 200, 0});
    if (t.final_box) outline(*t.final_box, {230, 30, 30});
    const auto png = encode_png(pixels);
    const auto overlay = out_dir / (stem + "_overlay.png");
    write_file_atomic(overlay.string(), std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
    written.push_back(overlay);

    const double v = run.metrics.records[i].iou;
    char iou_buf[32];
    std::snprintf(iou_buf, sizeof iou_buf, "%.4f", v);
    std::ostringstream cap;
    cap << "sample: " << t.sample_id << "\n"
        << "expression: " << t.expression << "\n"
        << "subjects: ";
    for (std::size_t k = 0; k < t.subjects.size(); ++k) cap << (k ? " | " : "") << t.subjects[k];
    cap << "\ncandidates: " << t.detections.size() << "\n"
        << "selection: " << to_string(t.source);
    if (t.selection) cap << " (" << to_string(t.selection->parse_status) << ")";
    cap << "\nflags: ";
    for (std::size_t k = 0; k < t.flags.size(); ++k) cap << (k ? ", " : "") << t.flags[k];
    cap << "\ngt (green): " << to_json(sample.gt_box).dump() << "\n"
        << "prediction (red): " << (t.final_box ? to_json(*t.final_box).dump() : std::string("none")) << "\n"
        << "iou: " << iou_buf << "\n";
    if (t.error) cap << "error: " << *t.error << "\n";
    const auto caption = out_dir / (stem + "_caption.txt");
    write_file_atomic(caption.string(), cap.str());
    written.push_back(caption);
  }
  return written;
}

}  // namespace mqa
