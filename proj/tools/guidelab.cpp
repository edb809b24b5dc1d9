#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "glab/errors.hpp"
#include "glab/experiment.hpp"
#include "glab/manifest.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace glab;

namespace {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  int workers = 1;
};

void add_common_options(CLI::App* sub, CliOptions& opt) {
  sub->add_option("--config", opt.config_path, "run config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", opt.seed, "override the config seed");
  sub->add_option("--out", opt.out_dir, "override the config out_dir");
  sub->add_option("--workers", opt.workers, "worker threads")
      ->check(CLI::PositiveNumber);
}

struct RunContext {
  RunConfig cfg;
  fs::path run_dir;
  RunManifest manifest;

  // Writes an artifact under the run directory and records it in the
  // manifest. Paths are kept relative so manifests are relocatable.
  void emit(const std::string& rel, const std::string& content) {
    const fs::path full = run_dir / rel;
    fs::create_directories(full.parent_path());
    write_file_atomic(full.string(), content);
    ManifestFile f;
    f.path = rel;
    f.bytes = content.size();
    f.checksum = fnv1a64_hex(content);
    for (ManifestFile& existing : manifest.files) {
      if (existing.path == rel) {
        existing = f;
        return;
      }
    }
    manifest.files.push_back(std::move(f));
  }
};

// Later stages extend the run directory's manifest instead of erasing the
// record of earlier ones.
void load_previous_manifest(RunContext& ctx) {
  const fs::path path = ctx.run_dir / "manifest.json";
  if (!fs::exists(path)) return;
  try {
    const nlohmann::json j = nlohmann::json::parse(read_file(path.string()));
    for (const auto& s : j.value("stages", nlohmann::json::array())) {
      ctx.manifest.stages.emplace_back(s.at("name").get<std::string>(),
                                       s.at("status").get<std::string>());
    }
    for (const auto& f : j.value("files", nlohmann::json::array())) {
      ManifestFile mf;
      mf.path = f.at("path").get<std::string>();
      mf.bytes = f.at("bytes").get<std::size_t>();
      mf.checksum = f.at("checksum").get<std::string>();
      ctx.manifest.files.push_back(std::move(mf));
    }
    const nlohmann::json timings =
        j.value("timings_ms", nlohmann::json::object());
    for (const auto& [name, ms] : timings.items()) {
      ctx.manifest.timings_ms[name] = ms.get<double>();
    }
  } catch (const std::exception&) {
    // Unreadable manifests are replaced rather than fatal.
    ctx.manifest.stages.clear();
    ctx.manifest.files.clear();
    ctx.manifest.timings_ms.clear();
  }
}

void record_stage(RunContext& ctx, const std::string& name,
                  const std::string& status) {
  for (auto& [n, st] : ctx.manifest.stages) {
    if (n == name) {
      st = status;
      return;
    }
  }
  ctx.manifest.stages.emplace_back(name, status);
}

void write_manifest(RunContext& ctx) {
  fs::create_directories(ctx.run_dir);
  write_file_atomic((ctx.run_dir / "manifest.json").string(),
                    ctx.manifest.to_json_text());
}

RunContext make_context(const CliOptions& opt, int argc, char** argv) {
  RunContext ctx;
  ctx.cfg = RunConfig::load(opt.config_path);
  if (opt.seed) ctx.cfg.seed = *opt.seed;
  if (opt.out_dir) ctx.cfg.out_dir = *opt.out_dir;
  ctx.cfg.validate();
  const std::string hash = ctx.cfg.config_hash();
  ctx.run_dir = fs::path(ctx.cfg.out_dir) / hash.substr(0, 12);
  ctx.manifest.config_hash = hash;
  std::string cmd;
  for (int i = 0; i < argc; ++i) {
    if (i > 0) cmd += ' ';
    cmd += argv[i];
  }
  ctx.manifest.command = cmd;
  load_previous_manifest(ctx);
  fs::create_directories(ctx.run_dir);
  ctx.emit("config.json", ctx.cfg.canonical_json());
  return ctx;
}

std::string trajectory_name(const std::string& label, int condition_id) {
  return label + "_c" + std::to_string(condition_id) + ".jsonl";
}

void cmd_sample(RunContext& ctx, int workers) {
  auto gmm = std::make_shared<const GaussianMixtureModel>(
      GaussianMixtureModel::load(ctx.cfg.mixture_path));
  const NoiseSchedule sched =
      make_schedule(ctx.cfg.T, ctx.cfg.beta_min, ctx.cfg.beta_max);
  const AnalyticPredictor predictor(*gmm);
  const std::vector<Condition> conditions = draw_conditions(ctx.cfg, *gmm);
  const int n = static_cast<int>(conditions.size());

  fs::create_directories(ctx.run_dir / "trajectories");
  nlohmann::json samples;
  samples["tool_version"] = kToolVersion;
  samples["seed"] = ctx.cfg.seed;
  samples["methods"] = nlohmann::json::object();

  for (const MethodConfig& mc : ctx.cfg.methods) {
    std::vector<SampleResult> results(static_cast<std::size_t>(n));
    parallel_for(n, workers, [&](int i) {
      Rng rng = Rng(ctx.cfg.seed).substream(static_cast<std::uint64_t>(i));
      results[static_cast<std::size_t>(i)] =
          sample(mc.spec, predictor, conditions[static_cast<std::size_t>(i)],
                 sched, rng);
    });
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
      const SampleResult& r = results[static_cast<std::size_t>(i)];
      const std::string rel =
          "trajectories/" + trajectory_name(mc.label, i);
      write_trajectory((ctx.run_dir / rel).string(), r.trajectory);
      const std::string written = read_file((ctx.run_dir / rel).string());
      ManifestFile f;
      f.path = rel;
      f.bytes = written.size();
      f.checksum = fnv1a64_hex(written);
      bool replaced = false;
      for (ManifestFile& existing : ctx.manifest.files) {
        if (existing.path == rel) {
          existing = f;
          replaced = true;
          break;
        }
      }
      if (!replaced) ctx.manifest.files.push_back(std::move(f));
      rows.push_back({{"id", i},
                      {"tokens", r.trajectory.condition.tokens},
                      {"seed", r.trajectory.seed},
                      {"sample", r.sample}});
    }
    samples["methods"][mc.label] = std::move(rows);
  }
  ctx.emit("samples.json", samples.dump(2) + "\n");
}

void cmd_calibrate(RunContext& ctx) {
  auto gmm = std::make_shared<const GaussianMixtureModel>(
      GaussianMixtureModel::load(ctx.cfg.mixture_path));
  const NoiseSchedule sched =
      make_schedule(ctx.cfg.T, ctx.cfg.beta_min, ctx.cfg.beta_max);
  const AnalyticPredictor predictor(*gmm);

  const fs::path traj_dir = ctx.run_dir / "trajectories";
  if (!fs::is_directory(traj_dir)) {
    throw std::runtime_error("no trajectories under " + ctx.run_dir.string() +
                             ", run the sample stage first");
  }
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(traj_dir)) {
    if (entry.path().extension() == ".jsonl") inputs.push_back(entry.path());
  }
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) {
    throw std::runtime_error("no trajectories under " + ctx.run_dir.string() +
                             ", run the sample stage first");
  }
  for (const fs::path& in : inputs) {
    const Trajectory traj = read_trajectory(in.string());
    const CalibrationResult cal =
        calibrate(traj, predictor, traj.condition, sched,
                  /*verify_predictions=*/true);
    const std::string stem = in.stem().string();
    ctx.emit("calibration/" + stem + ".json", cal.to_json_text());
    ctx.emit("calibration/" + stem + "_series.csv", cal.series_csv());
  }
}

std::string omega_series_csv(const ExperimentResult& res) {
  std::string out = "method,condition,t,omega_e\n";
  char buf[64];
  for (const MethodEvaluation& ev : res.methods) {
    for (std::size_t i = 0; i < ev.records.size(); ++i) {
      for (const auto& [t, w] : ev.records[i].omega_e_series) {
        std::snprintf(buf, sizeof(buf), "%.17g", w);
        out += ev.label + "," + std::to_string(i) + "," + std::to_string(t) +
               "," + buf + "\n";
      }
    }
  }
  return out;
}

void cmd_evaluate(RunContext& ctx, int workers) {
  const ExperimentResult res = run_experiment(ctx.cfg, workers);
  ctx.emit("winrate.csv", report_csv(res));
  ctx.emit("winrate.json", report_json(res, ctx.cfg));
  ctx.emit("omega_e_series.csv", omega_series_csv(res));
}

void cmd_sweep(RunContext& ctx, int workers) {
  const std::vector<SweepPoint> points = run_sweep(ctx.cfg, workers);
  ctx.emit("sweep.csv", sweep_csv(points, ctx.cfg.metrics));
}

void cmd_report(const RunContext& ctx) {
  const fs::path path = ctx.run_dir / "winrate.json";
  if (!fs::exists(path)) {
    throw std::runtime_error("no winrate.json under " + ctx.run_dir.string() +
                             ", run the evaluate stage first");
  }
  const nlohmann::json j = nlohmann::json::parse(read_file(path.string()));
  std::printf("%-12s %-12s %9s %9s %9s %9s\n", "method", "metric", "eta_cfg",
              "eta_ecfg", "delta", "omega_e");
  for (const auto& m : j.at("methods")) {
    for (const auto& r : m.at("rates")) {
      std::printf("%-12s %-12s %9.4f %9.4f %9.4f %9.4f\n",
                  m.at("label").get<std::string>().c_str(),
                  r.at("metric").get<std::string>().c_str(),
                  r.at("eta_cfg").get<double>(),
                  r.at("eta_ecfg").get<double>(),
                  r.at("delta_eta").get<double>(),
                  m.at("omega_e").get<double>());
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guided diffusion sampling, calibration, and evaluation"};
  app.require_subcommand(1);

  CliOptions opt;
  CLI::App* sub_sample =
      app.add_subcommand("sample", "run the configured methods and write trajectories");
  CLI::App* sub_calibrate =
      app.add_subcommand("calibrate", "recover effective guidance scales from trajectories");
  CLI::App* sub_evaluate =
      app.add_subcommand("evaluate", "run the full winning-rate comparison");
  CLI::App* sub_sweep =
      app.add_subcommand("sweep", "sweep tdg hyperparameters over the configured grid");
  CLI::App* sub_report =
      app.add_subcommand("report", "print the winning-rate table for a finished run");
  for (CLI::App* s :
       {sub_sample, sub_calibrate, sub_evaluate, sub_sweep, sub_report}) {
    add_common_options(s, opt);
  }

  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();

  RunContext ctx;
  try {
    ctx = make_context(opt, argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }

  const auto started = std::chrono::steady_clock::now();
  auto finish = [&](const std::string& status) {
    record_stage(ctx, verb, status);
    ctx.manifest.timings_ms[verb] =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - started)
            .count();
  };

  try {
    if (verb == "sample") {
      cmd_sample(ctx, opt.workers);
    } else if (verb == "calibrate") {
      cmd_calibrate(ctx);
    } else if (verb == "evaluate") {
      cmd_evaluate(ctx, opt.workers);
    } else if (verb == "sweep") {
      cmd_sweep(ctx, opt.workers);
    } else if (verb == "report") {
      cmd_report(ctx);
      return 0;  // read-only, leaves the manifest alone
    }
    finish("ok");
    write_manifest(ctx);
    std::printf("%s: ok (%s)\n", verb.c_str(), ctx.run_dir.string().c_str());
    return 0;
  } catch (const ConfigError& e) {
    ctx.manifest.status = "failed";
    ctx.manifest.error = e.what();
    finish("failed");
    write_manifest(ctx);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    ctx.manifest.status = "failed";
    ctx.manifest.error = e.what();
    finish("failed");
    write_manifest(ctx);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
