#include "glab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "glab/errors.hpp"
#include "glab/manifest.hpp"
#include "json.hpp"

namespace glab {

namespace {

constexpr std::uint64_t kConditionStream = 0x636f6e64ull;

void check_keys(const nlohmann::json& j,
                std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) {
    throw ConfigError("config: expected an object for " + where);
  }
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

PerturbationSpec parse_perturbation(const nlohmann::json& j) {
  check_keys(j, {"kind", "strength", "keep_fraction", "seed"}, "perturbation");
  PerturbationSpec p;
  const std::string kind = j.value("kind", "output_noise");
  if (kind == "output_noise") {
    p.kind = PerturbationSpec::Kind::OutputNoise;
  } else if (kind == "component_dropout") {
    p.kind = PerturbationSpec::Kind::ComponentDropout;
  } else if (kind == "unconditional") {
    p.kind = PerturbationSpec::Kind::Unconditional;
  } else {
    throw ConfigError("config: unknown perturbation kind '" + kind + "'");
  }
  p.strength = j.value("strength", 0.0);
  p.keep_fraction = j.value("keep_fraction", 1.0);
  p.seed = j.value("seed", std::uint64_t{0});
  return p;
}

MethodConfig parse_method(const nlohmann::json& j, double base_omega) {
  check_keys(j,
             {"method", "label", "omega", "g", "beta", "mask_ratio", "s",
              "perturbation", "omega_inv", "cycles", "renoise_scale"},
             "method entry");
  MethodConfig mc;
  const std::string name = j.at("method").get<std::string>();
  auto m = method_from_name(name);
  if (!m) throw ConfigError("config: unknown method '" + name + "'");
  mc.spec.method = *m;
  mc.spec.omega = j.value("omega", base_omega);
  mc.label = j.value("label", name);
  switch (mc.spec.method) {
    case GuidanceMethod::TDG:
      mc.spec.tdg_g = j.value("g", mc.spec.tdg_g);
      mc.spec.tdg_beta = j.value("beta", mc.spec.tdg_beta);
      mc.spec.tdg_mask_ratio = j.value("mask_ratio", mc.spec.tdg_mask_ratio);
      break;
    case GuidanceMethod::WeakPredictor:
      mc.spec.weak_scale = j.value("s", mc.spec.weak_scale);
      if (j.contains("perturbation")) {
        mc.spec.perturbation = parse_perturbation(j.at("perturbation"));
      }
      break;
    case GuidanceMethod::Zigzag:
      mc.spec.omega_inv = j.value("omega_inv", mc.spec.omega_inv);
      if (j.contains("cycles")) {
        mc.spec.zigzag_cycles = j.at("cycles").get<int>();
      }
      break;
    case GuidanceMethod::CFGpp:
      mc.spec.renoise_scale = j.value("renoise_scale", mc.spec.renoise_scale);
      break;
    case GuidanceMethod::CFG:
      break;
  }
  return mc;
}

nlohmann::json method_to_json(const MethodConfig& mc) {
  nlohmann::json j;
  j["method"] = method_name(mc.spec.method);
  j["label"] = mc.label;
  j["omega"] = mc.spec.omega;
  switch (mc.spec.method) {
    case GuidanceMethod::TDG:
      j["g"] = mc.spec.tdg_g;
      j["beta"] = mc.spec.tdg_beta;
      j["mask_ratio"] = mc.spec.tdg_mask_ratio;
      break;
    case GuidanceMethod::WeakPredictor: {
      j["s"] = mc.spec.weak_scale;
      const char* kind = "output_noise";
      if (mc.spec.perturbation.kind == PerturbationSpec::Kind::ComponentDropout)
        kind = "component_dropout";
      if (mc.spec.perturbation.kind == PerturbationSpec::Kind::Unconditional)
        kind = "unconditional";
      j["perturbation"] = {{"kind", kind},
                           {"strength", mc.spec.perturbation.strength},
                           {"keep_fraction", mc.spec.perturbation.keep_fraction},
                           {"seed", mc.spec.perturbation.seed}};
      break;
    }
    case GuidanceMethod::Zigzag:
      j["omega_inv"] = mc.spec.omega_inv;
      if (mc.spec.zigzag_cycles) j["cycles"] = *mc.spec.zigzag_cycles;
      break;
    case GuidanceMethod::CFGpp:
      j["renoise_scale"] = mc.spec.renoise_scale;
      break;
    case GuidanceMethod::CFG:
      break;
  }
  return j;
}

std::vector<Metric> build_metrics(
    const std::vector<MetricConfig>& specs,
    const std::shared_ptr<const GaussianMixtureModel>& gmm,
    const NoiseSchedule& sched) {
  std::vector<Metric> out;
  for (const MetricConfig& ms : specs) {
    if (ms.external) {
      out.push_back(metric_external(ms.name, ms.command, ms.higher_is_better));
    } else if (ms.name == "cond_loglik") {
      out.push_back(metric_cond_loglik(gmm, sched));
    } else if (ms.name == "alignment") {
      out.push_back(metric_alignment(gmm));
    } else {
      throw ConfigError("config: unknown metric '" + ms.name + "'");
    }
  }
  return out;
}

void format_double(std::ostringstream& out, const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  out << buf;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: JSON parse failure: ") + e.what());
  }
  check_keys(j,
             {"schedule", "mixture", "dimension", "base_omega", "methods",
              "metrics", "prompts", "condition_length", "seed", "out_dir",
              "sweep"},
             "config");
  RunConfig cfg;
  try {
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, {"T", "beta_min", "beta_max"}, "schedule");
      cfg.T = s.value("T", cfg.T);
      cfg.beta_min = s.value("beta_min", cfg.beta_min);
      cfg.beta_max = s.value("beta_max", cfg.beta_max);
    }
    cfg.mixture_path = j.at("mixture").get<std::string>();
    cfg.dimension = j.at("dimension").get<std::size_t>();
    cfg.base_omega = j.value("base_omega", cfg.base_omega);
    for (const auto& mj : j.at("methods")) {
      cfg.methods.push_back(parse_method(mj, cfg.base_omega));
    }
    if (j.contains("metrics")) {
      for (const auto& mj : j.at("metrics")) {
        MetricConfig ms;
        if (mj.is_string()) {
          ms.name = mj.get<std::string>();
        } else {
          check_keys(mj, {"name", "command", "higher_is_better"}, "metric entry");
          ms.name = mj.at("name").get<std::string>();
          ms.command = mj.at("command").get<std::string>();
          ms.external = true;
          ms.higher_is_better = mj.value("higher_is_better", true);
        }
        cfg.metrics.push_back(std::move(ms));
      }
    } else {
      cfg.metrics = {{"alignment"}, {"cond_loglik"}};
    }
    cfg.prompts = j.value("prompts", cfg.prompts);
    cfg.condition_length = j.value("condition_length", cfg.condition_length);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      check_keys(s, {"g", "beta"}, "sweep");
      cfg.sweep_g = s.value("g", std::vector<double>{});
      cfg.sweep_beta = s.value("beta", std::vector<double>{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  // Disambiguate duplicate labels deterministically.
  std::set<std::string> seen;
  for (MethodConfig& mc : cfg.methods) {
    std::string label = mc.label;
    int suffix = 2;
    while (seen.count(label) > 0) {
      label = mc.label + "_" + std::to_string(suffix++);
    }
    mc.label = label;
    seen.insert(label);
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return from_json_text(text);
}

std::string RunConfig::canonical_json() const {
  nlohmann::json j;
  j["schedule"] = {{"T", T}, {"beta_min", beta_min}, {"beta_max", beta_max}};
  j["mixture"] = mixture_path;
  std::string mixture_text;
  try {
    mixture_text = read_file(mixture_path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  j["mixture_checksum"] = fnv1a64_hex(mixture_text);
  j["dimension"] = dimension;
  j["base_omega"] = base_omega;
  j["methods"] = nlohmann::json::array();
  for (const MethodConfig& mc : methods) j["methods"].push_back(method_to_json(mc));
  j["metrics"] = nlohmann::json::array();
  for (const MetricConfig& ms : metrics) {
    if (ms.external) {
      j["metrics"].push_back({{"name", ms.name},
                              {"command", ms.command},
                              {"higher_is_better", ms.higher_is_better}});
    } else {
      j["metrics"].push_back(ms.name);
    }
  }
  j["prompts"] = prompts;
  j["condition_length"] = condition_length;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  if (!sweep_g.empty() || !sweep_beta.empty()) {
    j["sweep"] = {{"g", sweep_g}, {"beta", sweep_beta}};
  }
  return j.dump(2) + "\n";
}

std::string RunConfig::config_hash() const {
  return fnv1a64_hex(canonical_json());
}

void RunConfig::validate() const {
  if (T < 1) throw ConfigError("config: schedule T must be >= 1");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max) {
    throw ConfigError("config: need 0 < beta_min <= beta_max < 1");
  }
  if (dimension < 1) throw ConfigError("config: dimension must be >= 1");
  if (prompts < 1) throw ConfigError("config: prompts must be >= 1");
  if (condition_length < 1) {
    throw ConfigError("config: condition_length must be >= 1");
  }
  if (!std::isfinite(base_omega)) {
    throw ConfigError("config: base_omega must be finite");
  }
  if (methods.empty()) throw ConfigError("config: no methods configured");
  for (const MethodConfig& mc : methods) {
    if (mc.label.empty()) throw ConfigError("config: empty method label");
    mc.spec.validate(T);
  }
  if (metrics.empty()) throw ConfigError("config: no metrics configured");
  for (const MetricConfig& ms : metrics) {
    if (ms.name.empty()) throw ConfigError("config: empty metric name");
    if (!ms.external && ms.name != "alignment" && ms.name != "cond_loglik") {
      throw ConfigError("config: unknown metric '" + ms.name + "'");
    }
    if (ms.external && ms.command.empty()) {
      throw ConfigError("config: external metric '" + ms.name +
                        "' has no command");
    }
  }
  for (double g : sweep_g) {
    if (!(g > 0.0) || !std::isfinite(g)) {
      throw ConfigError("config: sweep g values must be positive");
    }
  }
  for (double b : sweep_beta) {
    if (!(b > 0.0) || !std::isfinite(b)) {
      throw ConfigError("config: sweep beta values must be positive");
    }
  }
  if (out_dir.empty()) throw ConfigError("config: out_dir must be set");
  const GaussianMixtureModel gmm = GaussianMixtureModel::load(mixture_path);
  if (gmm.dimension() != dimension) {
    throw ConfigError("config: dimension " + std::to_string(dimension) +
                      " does not match mixture dimension " +
                      std::to_string(gmm.dimension()));
  }
}

std::vector<Condition> draw_conditions(const RunConfig& cfg,
                                       const GaussianMixtureModel& gmm) {
  std::vector<int> vocab;
  vocab.reserve(gmm.token_map.size());
  for (const auto& [token, _] : gmm.token_map) vocab.push_back(token);

  Rng rng = Rng(cfg.seed).substream(kConditionStream);
  const std::size_t len = static_cast<std::size_t>(cfg.condition_length);
  std::vector<Condition> out;
  out.reserve(static_cast<std::size_t>(cfg.prompts));
  for (int i = 0; i < cfg.prompts; ++i) {
    Condition c;
    c.tokens.resize(len);
    if (len <= vocab.size()) {
      std::vector<int> pool = vocab;
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t j = k + rng.uniform_index(pool.size() - k);
        std::swap(pool[k], pool[j]);
        c.tokens[k] = pool[k];
      }
    } else {
      for (std::size_t k = 0; k < len; ++k) {
        c.tokens[k] = vocab[rng.uniform_index(vocab.size())];
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

void parallel_for(int n, int workers, const std::function<void(int)>& body) {
  if (n <= 0) return;
  const int w = std::clamp(workers, 1, n);
  if (w == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (int k = 0; k < w; ++k) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

ExperimentResult run_experiment(const RunConfig& cfg, int workers) {
  cfg.validate();
  auto gmm = std::make_shared<const GaussianMixtureModel>(
      GaussianMixtureModel::load(cfg.mixture_path));
  const NoiseSchedule sched = make_schedule(cfg.T, cfg.beta_min, cfg.beta_max);
  const AnalyticPredictor predictor(*gmm);
  std::vector<Metric> metrics = build_metrics(cfg.metrics, gmm, sched);

  ExperimentResult res;
  res.conditions = draw_conditions(cfg, *gmm);
  const int n = static_cast<int>(res.conditions.size());

  GuidanceSpec baseline;
  baseline.method = GuidanceMethod::CFG;
  baseline.omega = cfg.base_omega;

  for (const MethodConfig& mc : cfg.methods) {
    MethodEvaluation ev;
    ev.label = mc.label;
    ev.spec = mc.spec;
    ev.triples.assign(static_cast<std::size_t>(n), {});
    ev.records.assign(static_cast<std::size_t>(n), {});

    parallel_for(n, workers, [&](int i) {
      const Condition& c = res.conditions[static_cast<std::size_t>(i)];
      const auto stream = static_cast<std::uint64_t>(i);

      Rng rng_star = Rng(cfg.seed).substream(stream);
      SampleResult star = sample(mc.spec, predictor, c, sched, rng_star);
      CalibrationResult cal = calibrate(star.trajectory, predictor, c, sched);

      Rng rng_cfg = Rng(cfg.seed).substream(stream);
      SampleResult base = sample(baseline, predictor, c, sched, rng_cfg);

      Rng rng_ecfg = Rng(cfg.seed).substream(stream);
      SampleResult ecfg =
          replay_ecfg(cal.omega_e_mean, predictor, c, sched, rng_ecfg);

      ComparisonTriple tr;
      tr.condition_id = i;
      tr.condition = c;
      tr.seed = mix_seed(cfg.seed, stream);
      tr.omega_e = cal.omega_e_mean;
      tr.x_star = std::move(star.sample);
      tr.x_cfg = std::move(base.sample);
      tr.x_ecfg = std::move(ecfg.sample);
      ev.triples[static_cast<std::size_t>(i)] = std::move(tr);

      ConditionRecord rec;
      rec.omega_e = cal.omega_e_mean;
      rec.omega_e_series.reserve(cal.per_step.size());
      for (const StepDecomposition& d : cal.per_step) {
        rec.omega_e_series.emplace_back(d.t, d.omega_e);
      }
      ev.records[static_cast<std::size_t>(i)] = std::move(rec);
    });

    // Scoring and aggregation stay serial in condition order, so the fold
    // is identical for any worker count.
    for (std::size_t i = 0; i < ev.records.size(); ++i) {
      ev.records[i].scores.resize(metrics.size());
    }
    for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
      const Metric& m = metrics[mi];
      WinRateEntry entry;
      entry.metric = m.name;
      entry.n = n;
      int wins_cfg = 0, wins_ecfg = 0;
      for (int i = 0; i < n; ++i) {
        const ComparisonTriple& tr = ev.triples[static_cast<std::size_t>(i)];
        const double s_star = m.score(tr.x_star, tr.condition);
        const double s_cfg = m.score(tr.x_cfg, tr.condition);
        const double s_ecfg = m.score(tr.x_ecfg, tr.condition);
        if (!std::isfinite(s_star) || !std::isfinite(s_cfg) ||
            !std::isfinite(s_ecfg)) {
          throw MetricError("metric '" + m.name +
                            "' produced a non-finite score");
        }
        ev.records[static_cast<std::size_t>(i)].scores[mi] = {s_star, s_cfg,
                                                              s_ecfg};
        const bool hib = m.higher_is_better;
        if (s_star != s_cfg && (hib ? s_star > s_cfg : s_star < s_cfg)) {
          ++wins_cfg;
        }
        if (s_star != s_ecfg && (hib ? s_star > s_ecfg : s_star < s_ecfg)) {
          ++wins_ecfg;
        }
        if (s_star == s_cfg) ++entry.ties_cfg;
        if (s_star == s_ecfg) ++entry.ties_ecfg;
      }
      entry.eta_cfg = static_cast<double>(wins_cfg) / n;
      entry.eta_ecfg = static_cast<double>(wins_ecfg) / n;
      entry.delta_eta = entry.eta_cfg - entry.eta_ecfg;
      ev.rates.push_back(std::move(entry));
    }

    double omega_sum = 0.0;
    for (const ConditionRecord& rec : ev.records) omega_sum += rec.omega_e;
    ev.omega_e = n > 0 ? omega_sum / n : 0.0;

    res.methods.push_back(std::move(ev));
  }
  return res;
}

std::vector<SweepPoint> run_sweep(const RunConfig& cfg, int workers) {
  cfg.validate();
  if (cfg.sweep_g.empty() || cfg.sweep_beta.empty()) {
    throw ConfigError("sweep: config needs non-empty sweep.g and sweep.beta");
  }
  const MethodConfig* tdg = nullptr;
  for (const MethodConfig& mc : cfg.methods) {
    if (mc.spec.method == GuidanceMethod::TDG) {
      tdg = &mc;
      break;
    }
  }
  if (tdg == nullptr) {
    throw ConfigError("sweep: config has no tdg method to sweep");
  }
  std::vector<SweepPoint> out;
  for (double g : cfg.sweep_g) {
    for (double beta : cfg.sweep_beta) {
      RunConfig point = cfg;
      point.methods = {*tdg};
      point.methods[0].spec.tdg_g = g;
      point.methods[0].spec.tdg_beta = beta;
      ExperimentResult res = run_experiment(point, workers);
      SweepPoint sp;
      sp.g = g;
      sp.beta = beta;
      sp.omega_e = res.methods[0].omega_e;
      sp.rates = res.methods[0].rates;
      out.push_back(std::move(sp));
    }
  }
  return out;
}

std::string report_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "method,metric,eta_cfg,eta_ecfg,delta_eta,omega_e,ties_cfg,ties_ecfg,n\n";
  for (const MethodEvaluation& ev : result.methods) {
    for (const WinRateEntry& e : ev.rates) {
      out << ev.label << "," << e.metric << ",";
      format_double(out, "%.6f", e.eta_cfg);
      out << ",";
      format_double(out, "%.6f", e.eta_ecfg);
      out << ",";
      format_double(out, "%.6f", e.delta_eta);
      out << ",";
      format_double(out, "%.17g", ev.omega_e);
      out << "," << e.ties_cfg << "," << e.ties_ecfg << "," << e.n << "\n";
    }
  }
  return out.str();
}

std::string report_json(const ExperimentResult& result, const RunConfig& cfg) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["seed"] = cfg.seed;
  j["prompts"] = cfg.prompts;
  j["base_omega"] = cfg.base_omega;
  j["methods"] = nlohmann::json::array();
  for (const MethodEvaluation& ev : result.methods) {
    nlohmann::json mj;
    mj["label"] = ev.label;
    mj["method"] = method_name(ev.spec.method);
    mj["omega"] = ev.spec.omega;
    mj["omega_e"] = ev.omega_e;
    mj["rates"] = nlohmann::json::array();
    for (const WinRateEntry& e : ev.rates) {
      mj["rates"].push_back({{"metric", e.metric},
                             {"eta_cfg", e.eta_cfg},
                             {"eta_ecfg", e.eta_ecfg},
                             {"delta_eta", e.delta_eta},
                             {"n", e.n},
                             {"ties_cfg", e.ties_cfg},
                             {"ties_ecfg", e.ties_ecfg}});
    }
    mj["conditions"] = nlohmann::json::array();
    for (std::size_t i = 0; i < ev.triples.size(); ++i) {
      const ComparisonTriple& tr = ev.triples[i];
      const ConditionRecord& rec = ev.records[i];
      nlohmann::json cj;
      cj["id"] = tr.condition_id;
      cj["tokens"] = tr.condition.tokens;
      cj["seed"] = tr.seed;
      cj["omega_e"] = tr.omega_e;
      nlohmann::json scores = nlohmann::json::object();
      for (std::size_t mi = 0; mi < ev.rates.size(); ++mi) {
        scores[ev.rates[mi].metric] = {{"star", rec.scores[mi][0]},
                                       {"cfg", rec.scores[mi][1]},
                                       {"ecfg", rec.scores[mi][2]}};
      }
      cj["scores"] = scores;
      cj["omega_e_series"] = rec.omega_e_series;
      mj["conditions"].push_back(std::move(cj));
    }
    j["methods"].push_back(std::move(mj));
  }
  return j.dump(2) + "\n";
}

std::string sweep_csv(const std::vector<SweepPoint>& points,
                      const std::vector<MetricConfig>& metrics) {
  std::ostringstream out;
  out << "g,beta,omega_e";
  for (const MetricConfig& m : metrics) {
    out << ",eta_cfg_" << m.name << ",ties_cfg_" << m.name;
  }
  out << "\n";
  for (const SweepPoint& p : points) {
    format_double(out, "%.17g", p.g);
    out << ",";
    format_double(out, "%.17g", p.beta);
    out << ",";
    format_double(out, "%.17g", p.omega_e);
    for (const WinRateEntry& e : p.rates) {
      out << ",";
      format_double(out, "%.6f", e.eta_cfg);
      out << "," << e.ties_cfg;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace glab
