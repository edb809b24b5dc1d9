#include "glab/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "glab/errors.hpp"
#include "json.hpp"

namespace glab {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log sum_k w_k N(x; sqrt(abar)*mu_k, abar*var_k + (1-abar)) over `selected`,
// with unnormalized weights. Also fills responsibilities when asked.
double weighted_log_density(const GaussianMixtureModel& gmm, const Vec& x,
                            double alpha_bar, const std::vector<int>& selected,
                            std::vector<double>* log_terms_out) {
  const double sq_abar = std::sqrt(alpha_bar);
  const double lift = 1.0 - alpha_bar;
  std::vector<double> log_terms;
  log_terms.reserve(selected.size());
  for (int k : selected) {
    const MixtureComponent& comp = gmm.components[static_cast<std::size_t>(k)];
    double quad = 0.0;
    double log_det = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double s = alpha_bar * comp.variance[j] + lift;
      const double r = x[j] - sq_abar * comp.mean[j];
      quad += r * r / s;
      log_det += std::log(s);
    }
    const double log_norm =
        -0.5 * (quad + log_det + static_cast<double>(x.size()) * kLog2Pi);
    log_terms.push_back(std::log(comp.weight) + log_norm);
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_terms) m = std::max(m, v);
  if (!std::isfinite(m)) {
    if (log_terms_out) *log_terms_out = std::move(log_terms);
    return m;
  }
  double acc = 0.0;
  for (double v : log_terms) acc += std::exp(v - m);
  if (log_terms_out) *log_terms_out = std::move(log_terms);
  return m + std::log(acc);
}

void check_point_dim(const GaussianMixtureModel& gmm, const Vec& x,
                     const char* where) {
  if (x.size() != gmm.dimension()) {
    throw DimensionMismatchError(std::string(where) + ": point dim " +
                                 std::to_string(x.size()) + " vs mixture dim " +
                                 std::to_string(gmm.dimension()));
  }
}

}  // namespace

std::size_t GaussianMixtureModel::dimension() const {
  return components.empty() ? 0 : components.front().mean.size();
}

void GaussianMixtureModel::validate() const {
  if (components.empty()) throw ConfigError("mixture: no components");
  const std::size_t d = components.front().mean.size();
  if (d == 0) throw ConfigError("mixture: zero-dimensional component");
  double weight_sum = 0.0;
  for (std::size_t k = 0; k < components.size(); ++k) {
    const MixtureComponent& c = components[k];
    const std::string tag = "mixture component " + std::to_string(k);
    if (c.mean.size() != d || c.variance.size() != d) {
      throw ConfigError(tag + ": inconsistent dimension");
    }
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
      throw ConfigError(tag + ": weight must be positive and finite");
    }
    if (!all_finite(c.mean)) throw ConfigError(tag + ": non-finite mean");
    for (double v : c.variance) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError(tag + ": variance entries must be positive and finite");
      }
    }
    weight_sum += c.weight;
  }
  if (std::fabs(weight_sum - 1.0) > 1e-9) {
    throw ConfigError("mixture: weights sum to " + std::to_string(weight_sum) +
                      ", expected 1");
  }
  if (token_map.empty()) throw ConfigError("mixture: empty token map");
  std::vector<bool> covered(components.size(), false);
  for (const auto& [token, comps] : token_map) {
    if (token < 0) throw ConfigError("mixture: negative token id in token map");
    if (comps.empty()) {
      throw ConfigError("mixture: token " + std::to_string(token) +
                        " selects no components");
    }
    for (int k : comps) {
      if (k < 0 || static_cast<std::size_t>(k) >= components.size()) {
        throw ConfigError("mixture: token " + std::to_string(token) +
                          " references component " + std::to_string(k));
      }
      covered[static_cast<std::size_t>(k)] = true;
    }
  }
  for (std::size_t k = 0; k < covered.size(); ++k) {
    if (!covered[k]) {
      throw ConfigError("mixture: component " + std::to_string(k) +
                        " not reachable from any token");
    }
  }
}

std::vector<int> GaussianMixtureModel::selected_components(
    const Condition& c) const {
  std::vector<int> out;
  if (c.is_unconditional()) {
    out.resize(components.size());
    for (std::size_t k = 0; k < components.size(); ++k) {
      out[k] = static_cast<int>(k);
    }
    return out;
  }
  for (int tok : c.tokens) {
    if (tok == Condition::kEmptyToken) continue;
    auto it = token_map.find(tok);
    if (it == token_map.end()) {
      throw ConfigError("condition token " + std::to_string(tok) +
                        " not in mixture vocabulary");
    }
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

GaussianMixtureModel GaussianMixtureModel::from_json_text(
    const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mixture: JSON parse failure: ") + e.what());
  }
  GaussianMixtureModel gmm;
  try {
    const std::size_t d = j.at("dimension").get<std::size_t>();
    for (const auto& cj : j.at("components")) {
      MixtureComponent c;
      c.weight = cj.at("weight").get<double>();
      c.mean = cj.at("mean").get<Vec>();
      c.variance = cj.at("variance").get<Vec>();
      gmm.components.push_back(std::move(c));
    }
    for (const auto& [key, val] : j.at("token_map").items()) {
      gmm.token_map[std::stoi(key)] = val.get<std::vector<int>>();
    }
    if (gmm.dimension() != d) {
      throw ConfigError("mixture: declared dimension " + std::to_string(d) +
                        " does not match components");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mixture: malformed JSON: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("mixture: token map keys must be integers");
  }
  for (auto& [token, comps] : gmm.token_map) {
    std::sort(comps.begin(), comps.end());
    comps.erase(std::unique(comps.begin(), comps.end()), comps.end());
  }
  gmm.validate();
  return gmm;
}

GaussianMixtureModel GaussianMixtureModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("mixture: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string GaussianMixtureModel::to_json_text() const {
  nlohmann::json j;
  j["dimension"] = dimension();
  j["components"] = nlohmann::json::array();
  for (const MixtureComponent& c : components) {
    j["components"].push_back(
        {{"weight", c.weight}, {"mean", c.mean}, {"variance", c.variance}});
  }
  nlohmann::json tm = nlohmann::json::object();
  for (const auto& [token, comps] : token_map) {
    tm[std::to_string(token)] = comps;
  }
  j["token_map"] = tm;
  return j.dump(2) + "\n";
}

void GaussianMixtureModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("mixture: cannot write " + path);
  out << to_json_text();
}

double diffused_log_density(const GaussianMixtureModel& gmm, const Vec& x,
                            double alpha_bar,
                            const std::vector<int>& selected) {
  check_point_dim(gmm, x, "diffused_log_density");
  if (selected.empty()) {
    throw std::invalid_argument("diffused_log_density: empty selection");
  }
  double weight_sum = 0.0;
  for (int k : selected) {
    weight_sum += gmm.components[static_cast<std::size_t>(k)].weight;
  }
  return weighted_log_density(gmm, x, alpha_bar, selected, nullptr) -
         std::log(weight_sum);
}

Vec diffused_score(const GaussianMixtureModel& gmm, const Vec& x,
                   double alpha_bar, const std::vector<int>& selected) {
  check_point_dim(gmm, x, "diffused_score");
  if (selected.empty()) {
    throw std::invalid_argument("diffused_score: empty selection");
  }
  std::vector<double> log_terms;
  const double log_total =
      weighted_log_density(gmm, x, alpha_bar, selected, &log_terms);
  if (!std::isfinite(log_total)) {
    throw std::domain_error(
        "diffused_score: density vanished, point is non-finite or "
        "unrepresentably far from the mixture");
  }
  const double sq_abar = std::sqrt(alpha_bar);
  const double lift = 1.0 - alpha_bar;
  Vec score(x.size(), 0.0);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const MixtureComponent& comp =
        gmm.components[static_cast<std::size_t>(selected[i])];
    const double resp = std::exp(log_terms[i] - log_total);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double s = alpha_bar * comp.variance[j] + lift;
      score[j] += resp * (sq_abar * comp.mean[j] - x[j]) / s;
    }
  }
  return score;
}

double class_log_posterior(const GaussianMixtureModel& gmm, const Vec& x,
                           const std::vector<int>& selected) {
  check_point_dim(gmm, x, "class_log_posterior");
  if (selected.empty()) {
    throw std::invalid_argument("class_log_posterior: empty selection");
  }
  std::vector<bool> in_sel(gmm.components.size(), false);
  for (int k : selected) in_sel[static_cast<std::size_t>(k)] = true;
  std::vector<int> complement;
  for (std::size_t k = 0; k < gmm.components.size(); ++k) {
    if (!in_sel[k]) complement.push_back(static_cast<int>(k));
  }
  if (complement.empty()) return 0.0;

  const double l_sel = weighted_log_density(gmm, x, 1.0, selected, nullptr);
  const double l_comp = weighted_log_density(gmm, x, 1.0, complement, nullptr);
  // log posterior = -log(1 + exp(l_comp - l_sel)), stable in both tails
  const double delta = l_comp - l_sel;
  if (delta > 36.0) return -delta - std::log1p(std::exp(-delta));
  return -std::log1p(std::exp(delta));
}

GaussianMixtureModel make_default_mixture(std::size_t dimension, int vocab,
                                          double radius, double pair_offset) {
  if (dimension < 2) {
    throw std::invalid_argument("make_default_mixture: dimension must be >= 2");
  }
  if (vocab < 1) {
    throw std::invalid_argument("make_default_mixture: vocab must be >= 1");
  }
  GaussianMixtureModel gmm;
  const double weight = 1.0 / (2.0 * vocab);
  for (int k = 0; k < vocab; ++k) {
    const double theta = 2.0 * M_PI * k / vocab;
    const double ux = std::cos(theta), uy = std::sin(theta);
    // perpendicular in-plane direction for the mirrored pair
    const double wx = -uy, wy = ux;
    const double base_var = 0.7 + 0.3 * (k % 3);
    Vec variance(dimension);
    for (std::size_t j = 0; j < dimension; ++j) {
      variance[j] = base_var + 0.2 * static_cast<double>(j % 2);
    }
    for (int sgn : {+1, -1}) {
      MixtureComponent c;
      c.weight = weight;
      c.mean.assign(dimension, 0.0);
      c.mean[0] = radius * ux + sgn * pair_offset * wx;
      c.mean[1] = radius * uy + sgn * pair_offset * wy;
      c.variance = variance;
      gmm.components.push_back(std::move(c));
    }
    gmm.token_map[k] = {2 * k, 2 * k + 1};
  }
  gmm.validate();
  return gmm;
}

}  // namespace glab
