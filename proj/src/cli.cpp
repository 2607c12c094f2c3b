#include "mqa/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ostream>

#include "mqa/error.hpp"
#include "mqa/hash.hpp"
#include "mqa/report.hpp"

namespace mqa::cli {

namespace {

struct RunOptions {
  std::string config;
  std::string split;
  std::string variant;
  std::string manifest;
  std::string out_dir = "runs";
  std::string cache_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> ratio;
  std::optional<int> concurrency;
};

void add_run_options(CLI::App* cmd, RunOptions& o, bool with_variant) {
  cmd->add_option("-c,--config", o.config, "Pipeline config (JSON)")->required();
  cmd->add_option("-s,--split", o.split, "Split id, e.g. refcocog:val");
  if (with_variant) cmd->add_option("--variant", o.variant, "full | no_tase | no_moos | detector_only");
  cmd->add_option("--manifest", o.manifest, "Record file; overrides the config entry for the split");
  cmd->add_option("-o,--out-dir", o.out_dir, "Directory receiving run directories");
  cmd->add_option("--cache-dir", o.cache_dir, "Response cache directory");
  cmd->add_option("--seed", o.seed, "Sampling seed");
  cmd->add_option("--ratio", o.ratio, "Sampling ratio in (0,1]");
  cmd->add_option("-j,--concurrency", o.concurrency, "Samples in flight");
}

struct Prepared {
  PipelineConfig cfg;
  SplitManifest manifest;
};

Prepared prepare(const RunOptions& o) {
  Prepared p;
  p.cfg = load_pipeline_config(o.config);
  auto& cfg = p.cfg;
  if (!o.variant.empty()) {
    const auto v = parse_variant(o.variant);
    if (!v) throw ConfigError("unknown variant \"" + o.variant + "\"");
    cfg.variant = *v;
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.ratio) cfg.sample_ratio = *o.ratio;
  if (o.concurrency) cfg.concurrency = *o.concurrency;
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  validate(cfg);

  std::string split = o.split;
  if (split.empty()) {
    if (cfg.manifests.size() != 1) throw ConfigError("--split is required when the config lists several manifests");
    split = cfg.manifests.begin()->first;
  }
  SplitId id;
  try {
    id = parse_split_id(split);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  std::string path = o.manifest;
  if (path.empty()) {
    auto it = cfg.manifests.find(id.str());
    if (it == cfg.manifests.end()) throw ConfigError("no manifest configured for " + id.str());
    path = it->second;
  }
  auto full = load_manifest(path, id);
  if (full.empty()) throw ConfigError("manifest " + path + " has no samples for " + id.str());
  p.manifest = uniform_sample(full, cfg.sample_ratio, cfg.seed);
  return p;
}

std::string run_dir_name(const SplitId& split, Variant v) {
  return std::string(to_string(split.dataset)) + "_" + std::string(to_string(split.split)) + "_" +
         std::string(to_string(v));
}

std::string method_name(const PipelineConfig& cfg) {
  return cfg.detector.descriptor.id + "/" + std::string(to_string(cfg.variant));
}

// Returns false when the detector is unreachable.
bool preflight(const PipelineConfig& cfg, Backends& b, std::ostream& err) {
  if (cfg.detector.kind != "http") return true;
  const auto reply = b.detector->get_health();
  if (reply.status == 200) return true;
  err << "error: detector " << cfg.detector.url << " is not healthy (status " << reply.status
      << (reply.error.empty() ? "" : ", " + reply.error) << ")\n";
  return false;
}

struct VariantRun {
  MetricsRow row;
  std::size_t failures = 0;
  std::size_t n = 0;
};

VariantRun run_variant(const PipelineConfig& cfg, const SplitManifest& manifest, Backends& backends,
                       const fs::path& out_dir, std::ostream& out) {
  const auto dir = out_dir / run_dir_name(manifest.split, cfg.variant);
  RunWriter writer(dir, cfg, manifest, method_name(cfg));
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_split(manifest, cfg, backends, [&](std::size_t, const SampleResult& r) { writer.write_sample(r); });
  VariantRun vr;
  vr.row = writer.finish(results, std::chrono::steady_clock::now() - t0);
  vr.n = results.size();
  for (const auto& r : results) vr.failures += r.failed;
  out << vr.row.method << " " << manifest.split.str() << " n=" << vr.n << " Acc@0.25=" << format_pct(vr.row.acc_025)
      << " Acc@0.5=" << format_pct(vr.row.acc_05) << " failures=" << vr.failures << "  -> " << dir.string() << "\n";
  return vr;
}

int exit_for(const VariantRun& vr, double ceiling, std::ostream& err) {
  if (vr.n > 0 && vr.failures == vr.n) {
    err << "error: every sample failed; see failures.jsonl\n";
    return kBackendOutage;
  }
  const double rate = vr.n ? double(vr.failures) / double(vr.n) : 0.0;
  if (rate > ceiling) {
    err << "error: failure rate " << format_pct(100.0 * rate) << "% exceeds the ceiling of "
        << format_pct(100.0 * ceiling) << "%\n";
    return kQualityCeiling;
  }
  return kOk;
}

std::vector<RunData> runs_for_split(const fs::path& out_dir, const SplitId& split) {
  std::vector<RunData> runs;
  for (auto v : kAllVariants) {
    const auto dir = out_dir / run_dir_name(split, v);
    if (fs::exists(dir / "run.json")) runs.push_back(load_run(dir));
  }
  return runs;
}

std::optional<std::size_t> detector_only_index(const std::vector<RunData>& runs) {
  for (std::size_t i = 0; i < runs.size(); ++i)
    if (runs[i].variant == Variant::detector_only) return i;
  return std::nullopt;
}

void write_combined(const fs::path& out_dir, const SplitId& split) {
  auto runs = runs_for_split(out_dir, split);
  if (runs.empty()) return;
  const auto table = build_table(runs, detector_only_index(runs));
  const auto stem = "report_" + std::string(to_string(split.dataset)) + "_" + std::string(to_string(split.split));
  write_file_atomic((out_dir / (stem + ".md")).string(), render_markdown(table));
  write_file_atomic((out_dir / (stem + ".csv")).string(), render_csv(table));
}

int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err) {
  auto p = prepare(o);
  auto backends = make_backends(p.cfg);
  if (!preflight(p.cfg, backends, err)) return kBackendOutage;
  const auto vr = run_variant(p.cfg, p.manifest, backends, o.out_dir, out);
  write_combined(o.out_dir, p.manifest.split);
  return exit_for(vr, p.cfg.failure_ceiling, err);
}

int cmd_ablate(const RunOptions& o, std::ostream& out, std::ostream& err) {
  auto p = prepare(o);
  auto backends = make_backends(p.cfg);
  if (!preflight(p.cfg, backends, err)) return kBackendOutage;
  int code = kOk;
  for (auto v : kAllVariants) {
    auto cfg = p.cfg;
    cfg.variant = v;
    const auto vr = run_variant(cfg, p.manifest, backends, o.out_dir, out);
    code = std::max(code, exit_for(vr, cfg.failure_ceiling, err));
  }
  write_combined(o.out_dir, p.manifest.split);
  auto runs = runs_for_split(o.out_dir, p.manifest.split);
  const auto stem = "ablation_" + std::string(to_string(p.manifest.split.dataset)) + "_" +
                    std::string(to_string(p.manifest.split.split));
  const auto md = render_ablation_markdown(runs);
  write_file_atomic((fs::path(o.out_dir) / (stem + ".md")).string(), md);
  write_file_atomic((fs::path(o.out_dir) / (stem + ".csv")).string(), render_ablation_csv(runs));
  out << md;
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Referring-expression detection benchmark harness", "mqa-bench"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "Run one variant over a split");
  add_run_options(run_cmd, run_opts, true);

  RunOptions ablate_opts;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run every variant over the same sampled split");
  add_run_options(ablate_cmd, ablate_opts, false);

  std::vector<std::string> report_dirs;
  std::string report_baseline, report_out;
  auto* report_cmd = app.add_subcommand("report", "Tabulate finished runs");
  report_cmd->add_option("runs", report_dirs, "Run directories")->required();
  report_cmd->add_option("--baseline", report_baseline, "Run directory used as the delta baseline");
  report_cmd->add_option("-o,--out", report_out, "Write <out>.md and <out>.csv");

  std::string vis_run, vis_out = "vis", vis_root;
  std::vector<std::string> vis_ids;
  auto* vis_cmd = app.add_subcommand("visualize", "Render overlays and captions for chosen samples");
  vis_cmd->add_option("--run", vis_run, "Run directory")->required();
  vis_cmd->add_option("--id", vis_ids, "Sample id (repeatable)")->required();
  vis_cmd->add_option("-o,--out-dir", vis_out, "Output directory");
  vis_cmd->add_option("--image-root", vis_root, "Image root; defaults to the run's config");

  std::string smp_manifest, smp_split, smp_out;
  double smp_ratio = 1.0;
  std::uint64_t smp_seed = 0;
  bool smp_stats = false;
  auto* sample_cmd = app.add_subcommand("sample", "Draw a seeded uniform subset of a manifest");
  sample_cmd->add_option("--manifest", smp_manifest, "Record file")->required();
  sample_cmd->add_option("-s,--split", smp_split, "Split id filter");
  sample_cmd->add_option("--ratio", smp_ratio, "Sampling ratio in (0,1]");
  sample_cmd->add_option("--seed", smp_seed, "Sampling seed");
  sample_cmd->add_option("-o,--out", smp_out, "Output record file; stdout if omitted");
  sample_cmd->add_flag("--stats", smp_stats, "Print split statistics instead of records");

  std::string cv_in, cv_out, cv_dataset = "custom", cv_split, cv_format = "xyxy";
  auto* convert_cmd = app.add_subcommand("convert", "Normalize third-party annotations into records");
  convert_cmd->add_option("-i,--input", cv_in, "JSON array or JSONL file")->required();
  convert_cmd->add_option("-o,--output", cv_out, "Record file")->required();
  convert_cmd->add_option("--dataset", cv_dataset, "Dataset tag");
  convert_cmd->add_option("--split", cv_split, "Default split tag");
  convert_cmd->add_option("--box-format", cv_format, "xyxy | xywh")->check(CLI::IsMember({"xyxy", "xywh"}));

  std::vector<std::string> argv{"mqa-bench"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<char*> ptrs;
  for (auto& a : argv) ptrs.push_back(a.data());
  try {
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run_opts, out, err);
    if (*ablate_cmd) return cmd_ablate(ablate_opts, out, err);

    if (*report_cmd) {
      std::vector<RunData> runs;
      std::optional<std::size_t> baseline;
      for (const auto& d : report_dirs) {
        if (!report_baseline.empty() && fs::equivalent(d, report_baseline)) baseline = runs.size();
        runs.push_back(load_run(d));
      }
      if (!report_baseline.empty() && !baseline) {
        runs.push_back(load_run(report_baseline));
        baseline = runs.size() - 1;
      }
      if (!baseline) baseline = detector_only_index(runs);
      const auto table = build_table(runs, baseline);
      const auto md = render_markdown(table);
      if (!report_out.empty()) {
        write_file_atomic(report_out + ".md", md);
        write_file_atomic(report_out + ".csv", render_csv(table));
      }
      out << md;
      return kOk;
    }

    if (*vis_cmd) {
      std::string root = vis_root;
      if (root.empty()) {
        const auto meta = nlohmann::json::parse(read_file_text((fs::path(vis_run) / "run.json").string()));
        root = meta.at("config").value("image_root", std::string("."));
      }
      for (const auto& p : visualize(vis_run, vis_ids, vis_out, root)) out << p.string() << "\n";
      return kOk;
    }

    if (*sample_cmd) {
      std::optional<SplitId> only;
      if (!smp_split.empty()) only = parse_split_id(smp_split);
      const auto m = load_manifest(smp_manifest, only);
      if (m.empty()) throw ValidationError("manifest " + smp_manifest + " has no samples");
      const auto s = uniform_sample(m, smp_ratio, smp_seed);
      if (smp_stats) {
        const auto st = split_stats(s);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", st.mean_words);
        out << s.split.str() << " count=" << st.count << " mean_words=" << buf << "\n";
      } else if (smp_out.empty()) {
        out << serialize_manifest(s);
      } else {
        write_file_atomic(smp_out, serialize_manifest(s));
      }
      return kOk;
    }

    if (*convert_cmd) {
      ConvertOptions opt;
      opt.box_format = cv_format == "xywh" ? ConvertOptions::BoxFormat::xywh : ConvertOptions::BoxFormat::xyxy;
      const auto ds = parse_dataset_tag(cv_dataset);
      if (!ds) throw ValidationError("unknown dataset \"" + cv_dataset + "\"");
      opt.dataset = *ds;
      if (!cv_split.empty()) {
        const auto sp = parse_split_tag(cv_split);
        if (!sp) throw ValidationError("unknown split \"" + cv_split + "\"");
        opt.split = *sp;
      }
      const auto recs = convert_records(read_file_text(cv_in), opt);
      std::string text;
      for (const auto& r : recs) text += serialize_record(r) + "\n";
      write_file_atomic(cv_out, text);
      out << "wrote " << recs.size() << " records to " << cv_out << "\n";
      return kOk;
    }
  } catch (const TransportError& e) {
    err << "error: " << e.what() << "\n";
    return kBackendOutage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace mqa::cli
