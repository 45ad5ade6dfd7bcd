#include "diffbridge/config.hpp"

#include <cstdio>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "diffbridge/errors.hpp"

namespace diffbridge {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  try {
    std::size_t pos = 0;
    const double v = std::stod(t, &pos);
    if (pos == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "expected a number, got '" + text + "'");
}

long long parse_integer(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(t, &pos);
    if (pos == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key, "expected an integer, got '" + text + "'");
}

int parse_int(const std::string& key, const std::string& text) {
  const long long v = parse_integer(key, text);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError(key, "integer out of range");
  return static_cast<int>(v);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& s : split_list(text)) out.push_back(parse_double(key, s));
  return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const auto& s : split_list(text)) out.push_back(parse_int(key, s));
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>)
      out += fmt(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ddps: return "ddps";
    case Algorithm::dsb_ps: return "dsb-ps";
    case Algorithm::ddgs: return "ddgs";
    case Algorithm::dsb_gs: return "dsb-gs";
    case Algorithm::verify: return "verify";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  for (Algorithm a : {Algorithm::ddps, Algorithm::dsb_ps, Algorithm::ddgs, Algorithm::dsb_gs, Algorithm::verify})
    if (to_string(a) == trim(name)) return a;
  throw ConfigError("run.algorithm", "unknown algorithm '" + name + "'");
}

TrainingConfig ExperimentConfig::training_config() const {
  TrainingConfig t;
  t.iterations = training.iterations;
  t.batch_size = training.batch_size;
  t.adam.learning_rate = training.learning_rate;
  t.lr_final_factor = training.lr_final_factor;
  t.hidden = training.hidden;
  t.time_features = training.time_features;
  return t;
}

DdpsConfig ExperimentConfig::ddps() const {
  DdpsConfig c;
  c.grid = grid();
  c.training = training_config();
  return c;
}

DsbConfig ExperimentConfig::dsb_ps() const {
  DsbConfig c;
  c.grid = grid();
  c.rounds = ipf.rounds;
  c.training = training_config();
  c.dsm_iterations = ipf.dsm_iterations;
  c.cache_paths = ipf.cache_paths;
  c.cache_refresh = ipf.cache_refresh;
  c.ema_decay = ipf.ema_decay;
  c.diagnostic_y = observation();
  return c;
}

DdgsConfig ExperimentConfig::ddgs() const { return {grid(), training_config()}; }

DsbGsConfig ExperimentConfig::dsb_gs() const {
  DsbGsConfig c;
  c.grid = grid();
  c.rounds = ipf.rounds;
  c.correction = training_config();
  c.score = training_config();
  c.score.iterations = ipf.score_iterations;
  c.score.batch_size = ipf.score_batch;
  c.flow_every = ipf.flow_every;
  c.distill.iterations = ipf.distill_iterations;
  c.distill.hidden = training.hidden;
  c.distill.time_features = training.time_features;
  c.distill_tolerance = ipf.distill_tolerance;
  return c;
}

Vector ExperimentConfig::observation() const {
  return Eigen::Map<const Vector>(model.observation.data(), static_cast<Eigen::Index>(model.observation.size()));
}

ExperimentConfig default_config(Algorithm algorithm) {
  ExperimentConfig c;
  c.algorithm = algorithm;
  switch (algorithm) {
    case Algorithm::ddps:
      c.horizon = 5.0;
      c.steps = 64;
      c.training.iterations = 6000;
      c.training.batch_size = 256;
      c.training.learning_rate = 2e-3;
      break;
    case Algorithm::dsb_ps:
      c.horizon = 1.0;
      c.steps = 32;
      c.training.batch_size = 1024;
      c.training.learning_rate = 2e-3;
      c.ipf.rounds = 5;
      break;
    case Algorithm::ddgs:
      c.horizon = 5.0;
      c.steps = 64;
      c.training.iterations = 1500;
      break;
    case Algorithm::dsb_gs:
      c.horizon = 1.0;
      c.steps = 32;
      c.training.iterations = 1500;
      c.ipf.rounds = 3;
      break;
    case Algorithm::verify:
      break;
  }
  return c;
}

void apply_setting(ExperimentConfig& c, const std::string& raw_key, const std::string& value) {
  const std::string key = trim(raw_key);
  const std::string v = trim(value);
  if (key == "run.algorithm") c.algorithm = parse_algorithm(v);
  else if (key == "run.seed") {
    const long long s = parse_integer(key, v);
    require(s >= 0, key, "must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
    c.seed_set = true;
  } else if (key == "run.output") c.output = v;
  else if (key == "run.samples") c.samples = parse_int(key, v);
  else if (key == "run.workers") c.workers = parse_int(key, v);
  else if (key == "grid.T") c.horizon = parse_double(key, v);
  else if (key == "grid.K") c.steps = parse_int(key, v);
  else if (key == "model.name") c.model.name = v;
  else if (key == "model.dim") c.model.dim = parse_int(key, v);
  else if (key == "model.obs_dim") c.model.obs_dim = parse_int(key, v);
  else if (key == "model.prior_var") c.model.prior_var = parse_double(key, v);
  else if (key == "model.obs_var") c.model.obs_var = parse_double(key, v);
  else if (key == "model.observation") c.model.observation = parse_doubles(key, v);
  else if (key == "target.name") c.target.name = v;
  else if (key == "target.dim") c.target.dim = parse_int(key, v);
  else if (key == "target.mean") c.target.mean = parse_doubles(key, v);
  else if (key == "target.variance") c.target.variance = parse_double(key, v);
  else if (key == "target.scale") c.target.scale = parse_double(key, v);
  else if (key == "target.weights") c.target.weights = parse_doubles(key, v);
  else if (key == "target.component_means") c.target.component_means = parse_doubles(key, v);
  else if (key == "target.modes") c.target.modes = parse_int(key, v);
  else if (key == "target.radius") c.target.radius = parse_double(key, v);
  else if (key == "target.top_std") c.target.top_std = parse_double(key, v);
  else if (key == "training.iterations") c.training.iterations = parse_int(key, v);
  else if (key == "training.batch_size") c.training.batch_size = parse_int(key, v);
  else if (key == "training.learning_rate") c.training.learning_rate = parse_double(key, v);
  else if (key == "training.lr_final_factor") c.training.lr_final_factor = parse_double(key, v);
  else if (key == "training.hidden") c.training.hidden = parse_ints(key, v);
  else if (key == "training.time_features") c.training.time_features = parse_int(key, v);
  else if (key == "ipf.rounds") c.ipf.rounds = parse_int(key, v);
  else if (key == "ipf.dsm_iterations") c.ipf.dsm_iterations = parse_int(key, v);
  else if (key == "ipf.cache_paths") c.ipf.cache_paths = parse_int(key, v);
  else if (key == "ipf.cache_refresh") c.ipf.cache_refresh = parse_int(key, v);
  else if (key == "ipf.ema_decay") c.ipf.ema_decay = parse_double(key, v);
  else if (key == "ipf.score_iterations") c.ipf.score_iterations = parse_int(key, v);
  else if (key == "ipf.score_batch") c.ipf.score_batch = parse_int(key, v);
  else if (key == "ipf.flow_every") c.ipf.flow_every = parse_int(key, v);
  else if (key == "ipf.distill_iterations") c.ipf.distill_iterations = parse_int(key, v);
  else if (key == "ipf.distill_tolerance") c.ipf.distill_tolerance = parse_double(key, v);
  else if (key == "eval.flow_points") c.flow_points = parse_int(key, v);
  else throw ConfigError(key, "unknown configuration key");
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "override must look like section.key=value");
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", e.what());
  }
  // The algorithm picks the defaults, so it is applied before anything else.
  if (auto alg = tree.get_optional<std::string>("run.algorithm")) base = default_config(parse_algorithm(*alg));
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "keys must live inside a [section]");
    for (const auto& [key, leaf] : body) apply_setting(base, section + "." + key, leaf.data());
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return load_config(path, ExperimentConfig{}); }

void ExperimentConfig::validate() const {
  require(seed_set || algorithm == Algorithm::verify, "run.seed", "a seed is required");
  require(samples >= 1, "run.samples", "must be positive");
  require(workers >= 1, "run.workers", "must be positive");
  require(horizon > 0.0, "grid.T", "must be positive");
  require(steps >= 1, "grid.K", "must be positive");
  require(training.iterations >= 0, "training.iterations", "must be non-negative");
  require(training.batch_size >= 1, "training.batch_size", "must be positive");
  require(training.learning_rate > 0.0, "training.learning_rate", "must be positive");
  require(training.lr_final_factor > 0.0, "training.lr_final_factor", "must be positive");
  require(!training.hidden.empty(), "training.hidden", "needs at least one layer");
  for (int h : training.hidden) require(h >= 1, "training.hidden", "layer widths must be positive");
  require(training.time_features >= 2 && training.time_features % 2 == 0, "training.time_features",
          "must be a positive even number");
  require(flow_points >= 1, "eval.flow_points", "must be positive");

  if (algorithm == Algorithm::ddps || algorithm == Algorithm::dsb_ps) {
    require(model.name == "conjugate" || model.name == "uninformative", "model.name",
            "unknown model '" + model.name + "'");
    require(model.dim >= 1, "model.dim", "must be positive");
    require(model.prior_var > 0.0, "model.prior_var", "must be positive");
    require(model.obs_var > 0.0, "model.obs_var", "must be positive");
    const int obs = model.name == "conjugate" ? model.dim : model.obs_dim;
    require(obs >= 1, "model.obs_dim", "must be positive");
    require(static_cast<int>(model.observation.size()) == obs, "model.observation",
            "needs " + std::to_string(obs) + " values");
  }
  if (algorithm == Algorithm::dsb_ps) {
    require(ipf.rounds >= 0, "ipf.rounds", "must be non-negative");
    require(ipf.dsm_iterations >= 0, "ipf.dsm_iterations", "must be non-negative");
    require(ipf.cache_paths >= 1, "ipf.cache_paths", "must be positive");
    require(ipf.cache_refresh >= 1, "ipf.cache_refresh", "must be positive");
    require(ipf.ema_decay >= 0.0 && ipf.ema_decay < 1.0, "ipf.ema_decay", "must be in [0, 1)");
  }
  if (algorithm == Algorithm::ddgs || algorithm == Algorithm::dsb_gs) {
    const auto& t = target;
    require(t.name == "gaussian" || t.name == "mixture" || t.name == "ring" || t.name == "funnel", "target.name",
            "unknown target '" + t.name + "'");
    require(t.dim >= 1, "target.dim", "must be positive");
    if (t.name == "gaussian") {
      require(static_cast<int>(t.mean.size()) == t.dim, "target.mean", "needs target.dim values");
      require(t.variance > 0.0, "target.variance", "must be positive");
      require(t.scale > 0.0, "target.scale", "must be positive");
    } else if (t.name == "mixture") {
      require(!t.weights.empty(), "target.weights", "needs at least one component");
      for (double w : t.weights) require(w > 0.0, "target.weights", "must be positive");
      require(t.component_means.size() == t.weights.size() * static_cast<std::size_t>(t.dim),
              "target.component_means", "needs target.dim values per component");
      require(t.variance > 0.0, "target.variance", "must be positive");
    } else if (t.name == "ring") {
      require(t.dim == 2, "target.dim", "ring targets are 2-d");
      require(t.modes >= 2, "target.modes", "needs at least two modes");
      require(t.radius > 0.0, "target.radius", "must be positive");
      require(t.variance > 0.0, "target.variance", "must be positive");
    } else {
      require(t.dim == 2, "target.dim", "the funnel is 2-d");
      require(t.top_std > 0.0, "target.top_std", "must be positive");
    }
  }
  if (algorithm == Algorithm::dsb_gs) {
    require(ipf.rounds >= 1, "ipf.rounds", "must be at least 1");
    require(ipf.score_iterations >= 0, "ipf.score_iterations", "must be non-negative");
    require(ipf.score_batch >= 1, "ipf.score_batch", "must be positive");
    require(ipf.flow_every >= 1, "ipf.flow_every", "must be positive");
    require(ipf.distill_iterations >= 0, "ipf.distill_iterations", "must be non-negative");
    require(ipf.distill_tolerance > 0.0, "ipf.distill_tolerance", "must be positive");
  }
}

std::string ExperimentConfig::to_ini() const {
  std::ostringstream o;
  o << "[run]\n"
    << "algorithm = " << to_string(algorithm) << "\n"
    << "seed = " << seed << "\n"
    << "output = " << output.string() << "\n"
    << "samples = " << samples << "\n"
    << "workers = " << workers << "\n\n"
    << "[grid]\nT = " << fmt(horizon) << "\nK = " << steps << "\n\n";
  if (algorithm == Algorithm::ddps || algorithm == Algorithm::dsb_ps) {
    o << "[model]\n"
      << "name = " << model.name << "\n"
      << "dim = " << model.dim << "\n"
      << "obs_dim = " << model.obs_dim << "\n"
      << "prior_var = " << fmt(model.prior_var) << "\n"
      << "obs_var = " << fmt(model.obs_var) << "\n"
      << "observation = " << join(model.observation) << "\n\n";
  }
  if (algorithm == Algorithm::ddgs || algorithm == Algorithm::dsb_gs) {
    o << "[target]\n"
      << "name = " << target.name << "\n"
      << "dim = " << target.dim << "\n"
      << "mean = " << join(target.mean) << "\n"
      << "variance = " << fmt(target.variance) << "\n"
      << "scale = " << fmt(target.scale) << "\n"
      << "weights = " << join(target.weights) << "\n"
      << "component_means = " << join(target.component_means) << "\n"
      << "modes = " << target.modes << "\n"
      << "radius = " << fmt(target.radius) << "\n"
      << "top_std = " << fmt(target.top_std) << "\n\n";
  }
  o << "[training]\n"
    << "iterations = " << training.iterations << "\n"
    << "batch_size = " << training.batch_size << "\n"
    << "learning_rate = " << fmt(training.learning_rate) << "\n"
    << "lr_final_factor = " << fmt(training.lr_final_factor) << "\n"
    << "hidden = " << join(training.hidden) << "\n"
    << "time_features = " << training.time_features << "\n\n";
  o << "[ipf]\n"
    << "rounds = " << ipf.rounds << "\n"
    << "dsm_iterations = " << ipf.dsm_iterations << "\n"
    << "cache_paths = " << ipf.cache_paths << "\n"
    << "cache_refresh = " << ipf.cache_refresh << "\n"
    << "ema_decay = " << fmt(ipf.ema_decay) << "\n"
    << "score_iterations = " << ipf.score_iterations << "\n"
    << "score_batch = " << ipf.score_batch << "\n"
    << "flow_every = " << ipf.flow_every << "\n"
    << "distill_iterations = " << ipf.distill_iterations << "\n"
    << "distill_tolerance = " << fmt(ipf.distill_tolerance) << "\n\n";
  o << "[eval]\nflow_points = " << flow_points << "\n";
  return o.str();
}

JointModel make_model(const ModelSpec& spec) {
  if (spec.name == "conjugate") return make_conjugate_linear_gaussian(spec.prior_var, spec.obs_var, spec.dim);
  if (spec.name == "uninformative") return make_uninformative_model(spec.dim, spec.obs_dim);
  throw ConfigError("model.name", "unknown model '" + spec.name + "'");
}

TargetDensity make_target(const TargetSpec& spec) {
  if (spec.name == "gaussian") {
    const Vector mean = Eigen::Map<const Vector>(spec.mean.data(), static_cast<Eigen::Index>(spec.mean.size()));
    return make_gaussian_target(GaussianParams::isotropic(mean, spec.variance), spec.scale);
  }
  if (spec.name == "mixture") {
    std::vector<GaussianParams> comps;
    for (std::size_t i = 0; i < spec.weights.size(); ++i) {
      const Vector m = Eigen::Map<const Vector>(spec.component_means.data() + i * static_cast<std::size_t>(spec.dim),
                                                spec.dim);
      comps.push_back(GaussianParams::isotropic(m, spec.variance));
    }
    return make_gaussian_mixture(spec.weights, comps);
  }
  if (spec.name == "ring") return make_ring_mixture(spec.modes, spec.radius, spec.variance);
  if (spec.name == "funnel") return make_funnel(spec.top_std);
  throw ConfigError("target.name", "unknown target '" + spec.name + "'");
}

}  // namespace diffbridge
