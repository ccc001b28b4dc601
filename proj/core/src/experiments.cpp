#include "revlearn/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "revlearn/rng.hpp"

namespace revlearn {

using nlohmann::json;

namespace {

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string g17(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string timestamp_utc() {
  const std::time_t tt = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double pearson(std::span<const double> x, std::span<const double> y) {
  const size_t n = x.size();
  if (n < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// --- config parsing ---------------------------------------------------------

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError(path + "." + it.key() + ": unknown field");
  }
}

template <typename T>
T int_field(const json& j, const char* key, T def, const std::string& path) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw ConfigError(path + "." + key + ": expected an integer");
  }
  return v.get<T>();
}

double num_field(const json& j, const char* key, double def, const std::string& path) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(path + "." + key + ": expected a number");
  return v.get<double>();
}

std::string str_field(const json& j, const char* key, std::string def, const std::string& path) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_string()) throw ConfigError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

Ratio parse_ratio(const std::string& s, const std::string& path) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) throw ConfigError(path + ": expected \"n/d\"");
  try {
    const uint64_t n = std::stoull(s.substr(0, slash));
    const uint64_t d = std::stoull(s.substr(slash + 1));
    return Ratio(n, d);
  } catch (const ContractViolation& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const std::exception&) {
    throw ConfigError(path + ": expected \"n/d\"");
  }
}

std::string ratio_str(const Ratio& r) {
  return std::to_string(r.num) + "/" + std::to_string(r.den);
}

}  // namespace

std::string to_string(ExperimentId id) {
  switch (id) {
    case ExperimentId::LrSchedule: return "lr_schedule";
    case ExperimentId::InitScales: return "init_scales";
    case ExperimentId::PerParamReg: return "per_param_reg";
    case ExperimentId::LearnData: return "learn_data";
    case ExperimentId::TiedReg: return "tied_reg";
    case ExperimentId::ChaosSweep: return "chaos_sweep";
    case ExperimentId::MemoryBench: return "memory_bench";
  }
  return "?";
}

namespace {

ExperimentId experiment_from_string(const std::string& s, const std::string& path) {
  for (ExperimentId id :
       {ExperimentId::LrSchedule, ExperimentId::InitScales, ExperimentId::PerParamReg,
        ExperimentId::LearnData, ExperimentId::TiedReg, ExperimentId::ChaosSweep,
        ExperimentId::MemoryBench}) {
    if (to_string(id) == s) return id;
  }
  throw ConfigError(path + ": unknown experiment '" + s + "'");
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.experiment);
  j["output_dir"] = c.output_dir;
  j["frac_bits"] = c.frac_bits;
  j["T"] = c.T;
  j["batch_size"] = c.batch_size;
  j["meta_iterations"] = c.meta_iterations;
  j["seeds"] = c.seeds;
  j["base_seed"] = c.base_seed;
  j["meta_step"] = c.meta_step;
  j["alpha0"] = c.alpha0;
  j["gamma0"] = c.gamma0;
  j["init_log_scale"] = c.init_log_scale;
  j["dataset"] = {{"type", c.dataset.type},
                  {"n", c.dataset.n},
                  {"d", c.dataset.d},
                  {"k", c.dataset.k},
                  {"separation", c.dataset.separation},
                  {"label_noise", c.dataset.label_noise},
                  {"seed", c.dataset.seed},
                  {"dir", c.dataset.dir},
                  {"limit", c.dataset.limit}};
  j["model"] = {{"type", c.model.type}, {"widths", c.model.widths},
                {"num_groups", c.model.num_groups}};
  j["sweep"] = {{"lo", c.sweep.lo}, {"hi", c.sweep.hi}, {"points", c.sweep.points},
                {"T", c.sweep.T}};
  json gammas = json::array();
  for (const Ratio& r : c.bench.gammas) gammas.push_back(ratio_str(r));
  j["bench"] = {{"gammas", gammas}, {"steps", c.bench.steps}, {"dim", c.bench.dim}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  const std::string path = "config";
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  check_keys(j,
             {"experiment", "output_dir", "frac_bits", "T", "batch_size", "meta_iterations",
              "seeds", "base_seed", "meta_step", "alpha0", "gamma0", "init_log_scale", "dataset",
              "model", "sweep", "bench"},
             path);

  ExperimentConfig c;
  if (!j.contains("experiment")) throw ConfigError(path + ".experiment: required");
  c.experiment = experiment_from_string(str_field(j, "experiment", "", path), path + ".experiment");
  c.output_dir = str_field(j, "output_dir", c.output_dir, path);
  c.frac_bits = int_field<int>(j, "frac_bits", c.frac_bits, path);
  if (c.frac_bits < 1 || c.frac_bits > 62) throw ConfigError(path + ".frac_bits: must be in [1, 62]");
  c.T = int_field<int>(j, "T", c.T, path);
  if (c.T < 0) throw ConfigError(path + ".T: must be nonnegative");
  c.batch_size = int_field<int64_t>(j, "batch_size", c.batch_size, path);
  c.meta_iterations = int_field<int>(j, "meta_iterations", c.meta_iterations, path);
  if (c.meta_iterations < 0) throw ConfigError(path + ".meta_iterations: must be nonnegative");
  c.seeds = int_field<int>(j, "seeds", c.seeds, path);
  if (c.seeds < 1) throw ConfigError(path + ".seeds: must be positive");
  c.base_seed = int_field<uint64_t>(j, "base_seed", c.base_seed, path);
  c.meta_step = num_field(j, "meta_step", c.meta_step, path);
  c.alpha0 = num_field(j, "alpha0", c.alpha0, path);
  if (!(c.alpha0 > 0.0)) throw ConfigError(path + ".alpha0: must be positive");
  c.gamma0 = num_field(j, "gamma0", c.gamma0, path);
  if (!(c.gamma0 > 0.0 && c.gamma0 <= 1.0)) throw ConfigError(path + ".gamma0: must be in (0,1]");
  c.init_log_scale = num_field(j, "init_log_scale", c.init_log_scale, path);

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    const std::string dp = path + ".dataset";
    if (!d.is_object()) throw ConfigError(dp + ": expected an object");
    check_keys(d, {"type", "n", "d", "k", "separation", "label_noise", "seed", "dir", "limit"}, dp);
    c.dataset.type = str_field(d, "type", c.dataset.type, dp);
    if (c.dataset.type != "synthetic" && c.dataset.type != "idx") {
      throw ConfigError(dp + ".type: must be 'synthetic' or 'idx'");
    }
    c.dataset.n = int_field<int64_t>(d, "n", c.dataset.n, dp);
    c.dataset.d = int_field<int64_t>(d, "d", c.dataset.d, dp);
    c.dataset.k = int_field<int>(d, "k", c.dataset.k, dp);
    if (c.dataset.k < 2) throw ConfigError(dp + ".k: need at least two classes");
    c.dataset.separation = num_field(d, "separation", c.dataset.separation, dp);
    c.dataset.label_noise = num_field(d, "label_noise", c.dataset.label_noise, dp);
    if (c.dataset.label_noise < 0.0 || c.dataset.label_noise >= 1.0) {
      throw ConfigError(dp + ".label_noise: must lie in [0, 1)");
    }
    c.dataset.seed = int_field<uint64_t>(d, "seed", c.dataset.seed, dp);
    c.dataset.dir = str_field(d, "dir", c.dataset.dir, dp);
    c.dataset.limit = int_field<int64_t>(d, "limit", c.dataset.limit, dp);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    const std::string mp = path + ".model";
    if (!m.is_object()) throw ConfigError(mp + ": expected an object");
    check_keys(m, {"type", "widths", "num_groups"}, mp);
    c.model.type = str_field(m, "type", c.model.type, mp);
    if (c.model.type != "logistic" && c.model.type != "mlp") {
      throw ConfigError(mp + ".type: must be 'logistic' or 'mlp'");
    }
    if (m.contains("widths")) {
      if (!m.at("widths").is_array()) throw ConfigError(mp + ".widths: expected an array");
      c.model.widths.clear();
      for (const auto& w : m.at("widths")) {
        if (!w.is_number_integer() && !w.is_number_unsigned()) {
          throw ConfigError(mp + ".widths: expected integers");
        }
        c.model.widths.push_back(w.get<int64_t>());
      }
    }
    c.model.num_groups = int_field<int>(m, "num_groups", c.model.num_groups, mp);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    const std::string sp = path + ".sweep";
    check_keys(s, {"lo", "hi", "points", "T"}, sp);
    c.sweep.lo = num_field(s, "lo", c.sweep.lo, sp);
    c.sweep.hi = num_field(s, "hi", c.sweep.hi, sp);
    if (!(c.sweep.lo > 0.0) || !(c.sweep.hi > c.sweep.lo)) {
      throw ConfigError(sp + ": need 0 < lo < hi");
    }
    c.sweep.points = int_field<int>(s, "points", c.sweep.points, sp);
    if (c.sweep.points < 4) throw ConfigError(sp + ".points: need at least 4");
    c.sweep.T = int_field<int>(s, "T", c.sweep.T, sp);
  }
  if (j.contains("bench")) {
    const auto& b = j.at("bench");
    const std::string bp = path + ".bench";
    check_keys(b, {"gammas", "steps", "dim"}, bp);
    if (b.contains("gammas")) {
      if (!b.at("gammas").is_array()) throw ConfigError(bp + ".gammas: expected an array");
      c.bench.gammas.clear();
      size_t i = 0;
      for (const auto& g : b.at("gammas")) {
        if (!g.is_string()) throw ConfigError(bp + ".gammas[" + std::to_string(i) + "]: expected a string");
        c.bench.gammas.push_back(
            parse_ratio(g.get<std::string>(), bp + ".gammas[" + std::to_string(i) + "]"));
        ++i;
      }
    }
    c.bench.steps = int_field<int64_t>(b, "steps", c.bench.steps, bp);
    c.bench.dim = int_field<int64_t>(b, "dim", c.bench.dim, bp);
  }
  return c;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

std::string ExperimentConfig::canonical_json() const { return config_to_json(*this).dump(); }

uint64_t ExperimentConfig::hash() const { return fnv1a64(canonical_json()); }

// --- dataset / model assembly -------------------------------------------------

namespace {

struct DataPair {
  Dataset train;
  Dataset valid;
};

DataPair synthetic_pair(const DatasetSpec& spec) {
  const int64_t n_valid = std::max<int64_t>(spec.n / 5, spec.k);
  const Dataset all = synthetic_classification(spec.seed, spec.n + n_valid, spec.d, spec.k,
                                               spec.separation, 0, spec.label_noise);
  return {all.take(0, spec.n), all.take(spec.n, n_valid)};
}

DataPair build_dataset(const DatasetSpec& spec) {
  if (spec.type == "idx") {
    std::filesystem::path dir = spec.dir;
    if (dir.empty()) {
      if (const char* env = std::getenv("REVLEARN_DATA_DIR")) dir = env;
    }
    if (!dir.empty()) {
      try {
        Dataset train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
        train = train.take(0, std::min(spec.limit, train.n));
        Dataset valid;
        const auto t10k_img = dir / "t10k-images-idx3-ubyte";
        if (std::filesystem::exists(t10k_img)) {
          valid = load_idx(t10k_img, dir / "t10k-labels-idx1-ubyte");
          valid = valid.take(0, std::min(std::max<int64_t>(spec.limit / 5, 100), valid.n));
        } else {
          const int64_t n_valid = std::max<int64_t>(train.n / 5, train.num_classes);
          valid = train.take(train.n - n_valid, n_valid);
          train = train.take(0, train.n - n_valid);
        }
        return {std::move(train), std::move(valid)};
      } catch (const DataError&) {
        // fall through to the synthetic stand-in below
      }
    }
    DatasetSpec fallback = spec;
    fallback.type = "synthetic";
    fallback.n = spec.limit;
    fallback.d = 784;
    fallback.k = 10;
    return synthetic_pair(fallback);
  }
  return synthetic_pair(spec);
}

std::vector<int64_t> default_widths(const ExperimentConfig& cfg, int64_t d) {
  if (!cfg.model.widths.empty()) {
    if (cfg.model.widths.front() != d) {
      throw ConfigError("config.model.widths: first width must equal the input dimension " +
                        std::to_string(d));
    }
    return cfg.model.widths;
  }
  if (cfg.experiment == ExperimentId::ChaosSweep) return {d, 16, 16};
  return {d, 20, 20, 20};
}

struct MetaSetup {
  std::unique_ptr<Model> model;
  PhiLayout layout;
  ad::Vec phi0;
  std::vector<uint8_t> trainable;
  ElementaryRun run;
};

void mask_schedule(MetaSetup& s, bool on) {
  const int64_t n = s.layout.schedule_len();
  std::fill(s.trainable.begin(), s.trainable.begin() + 2 * n, on ? 1 : 0);
}

void mask_block(MetaSetup& s, const std::string& name, bool on) {
  const HyperBlock* b = s.layout.theta_blocks.find(name);
  if (b == nullptr) throw ContractViolation("missing hyperparameter block '" + name + "'");
  const int64_t off = s.layout.theta_offset() + b->offset;
  std::fill(s.trainable.begin() + off, s.trainable.begin() + off + b->len, on ? 1 : 0);
}

void fill_block(MetaSetup& s, const std::string& name, double value) {
  const HyperBlock* b = s.layout.theta_blocks.find(name);
  if (b == nullptr) return;
  const int64_t off = s.layout.theta_offset() + b->offset;
  std::fill(s.phi0.begin() + off, s.phi0.begin() + off + b->len, value);
}

MetaSetup meta_setup(const ExperimentConfig& cfg, std::unique_ptr<Model> model) {
  MetaSetup s;
  s.model = std::move(model);
  s.layout.T = cfg.T;
  s.layout.G = s.model->layout().num_groups();
  s.layout.theta_blocks = s.model->hyper_layout();
  s.phi0.assign(static_cast<size_t>(s.layout.dim()), 0.0);
  const int64_t n = s.layout.schedule_len();
  std::fill(s.phi0.begin(), s.phi0.begin() + n, std::log(cfg.alpha0));
  std::fill(s.phi0.begin() + n, s.phi0.begin() + 2 * n, logit(std::min(cfg.gamma0, 1.0 - 1e-9)));
  s.trainable.assign(s.phi0.size(), 0);
  s.run.batch_size = cfg.batch_size;
  s.run.frac_bits = cfg.frac_bits;
  s.run.init_log_scale = cfg.init_log_scale;
  return s;
}

MetaSetup build_meta_setup(const ExperimentConfig& cfg, const DataPair& data) {
  switch (cfg.experiment) {
    case ExperimentId::LrSchedule: {
      MlpConfig mc;
      mc.widths = default_widths(cfg, data.train.d);
      mc.objective = Objective::Training;
      // fixed mild weight decay keeps the training optimum finite, so the
      // optimized schedule can show its terminal shape
      mc.per_param_reg = true;
      MetaSetup s = meta_setup(cfg, std::make_unique<MlpModel>(data.train, data.valid, mc));
      fill_block(s, "l2", -5.0);
      mask_schedule(s, true);
      return s;
    }
    case ExperimentId::InitScales: {
      MlpConfig mc;
      mc.widths = default_widths(cfg, data.train.d);
      mc.objective = Objective::Validation;
      mc.learn_init_scales = true;
      MetaSetup s = meta_setup(cfg, std::make_unique<MlpModel>(data.train, data.valid, mc));
      fill_block(s, "init_scales", cfg.init_log_scale);
      mask_block(s, "init_scales", true);
      return s;
    }
    case ExperimentId::PerParamReg: {
      LogisticConfig lc;
      lc.objective = Objective::Validation;
      lc.per_param_reg = true;
      lc.num_groups = cfg.model.num_groups;
      MetaSetup s = meta_setup(cfg, std::make_unique<LogisticModel>(data.train, data.valid, lc));
      fill_block(s, "l2", -6.0);
      mask_block(s, "l2", true);
      return s;
    }
    case ExperimentId::LearnData: {
      MetaSetup s =
          meta_setup(cfg, std::make_unique<DataHyperModel>(data.valid, data.valid.num_classes));
      fill_block(s, "pixels", 0.0);  // blank images
      mask_block(s, "pixels", true);
      s.run.batch_size = 0;  // the learned set is one full batch
      return s;
    }
    case ExperimentId::TiedReg: {
      const auto& d = cfg.dataset;
      const int64_t n_task = std::max<int64_t>(d.n / 3, 8L * d.k);
      const int64_t n_valid = std::max<int64_t>(n_task / 5, d.k);
      std::vector<Dataset> train, valid;
      for (int task = 0; task < 3; ++task) {
        // tasks 0 and 1 share class structure; task 2 stands apart
        const uint64_t mean_seed = d.seed + (task < 2 ? 0 : 1000);
        const uint64_t sample_seed = d.seed + 100 + static_cast<uint64_t>(task);
        Dataset all = synthetic_classification(mean_seed, n_task + n_valid, d.d, d.k,
                                               d.separation, sample_seed);
        train.push_back(all.take(0, n_task));
        valid.push_back(all.take(n_task, n_valid));
      }
      MetaSetup s = meta_setup(
          cfg, std::make_unique<TiedMultitaskModel>(std::move(train), std::move(valid)));
      fill_block(s, "tying", -6.0);  // near-independent nets at the start
      mask_block(s, "tying", true);
      return s;
    }
    default:
      throw ContractViolation("experiment has no meta-optimization setup");
  }
}

// --- artifact writing ---------------------------------------------------------

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create output file: " + path.string());
  out << text;
  if (!out) throw DataError("failed writing output file: " + path.string());
}

void validate_results(const json& j, ExperimentId id) {
  for (const char* key : {"experiment", "config", "config_hash", "timestamp", "final"}) {
    if (!j.contains(key)) {
      throw IntegrityError(std::string("results.json missing required field '") + key + "'");
    }
  }
  if (j.at("experiment").get<std::string>() != to_string(id)) {
    throw IntegrityError("results.json experiment id mismatch");
  }
}

std::string schedules_csv(const Schedules& s) {
  std::string out = "t,group,alpha,gamma\n";
  for (int t = 1; t <= s.T; ++t) {
    for (int g = 0; g < s.num_groups; ++g) {
      out += std::to_string(t) + "," + std::to_string(g) + "," + g17(s.alpha(t, g)) + "," +
             g17(s.gamma(t, g).value()) + "\n";
    }
  }
  return out;
}

std::string meta_curve_csv(const std::vector<MetaCurvePoint>& curve) {
  std::string out = "meta_iter,elementary_final_loss,hypergrad_norm\n";
  for (const auto& p : curve) {
    out += std::to_string(p.iter) + "," + g17(p.objective) + "," + g17(p.hypergrad_norm) + "\n";
  }
  return out;
}

json meta_curve_json(const std::vector<MetaCurvePoint>& curve) {
  json arr = json::array();
  for (const auto& p : curve) {
    arr.push_back({{"iter", p.iter}, {"objective", p.objective}, {"hypergrad_norm", p.hypergrad_norm}});
  }
  return arr;
}

struct AlphaShape {
  double mean_last10 = 0.0;
  double mean_mid50 = 0.0;
};

AlphaShape alpha_shape(const Schedules& s) {
  // mean alpha over the last 10% of iterations vs the middle 50%
  AlphaShape out;
  const int t_last = std::max(1, s.T / 10);
  const int mid_lo = s.T / 4 + 1;
  const int mid_hi = (3 * s.T) / 4;
  double acc = 0.0;
  int cnt = 0;
  for (int t = s.T - t_last + 1; t <= s.T; ++t) {
    for (int g = 0; g < s.num_groups; ++g) acc += s.alpha(t, g), ++cnt;
  }
  out.mean_last10 = acc / std::max(cnt, 1);
  acc = 0.0;
  cnt = 0;
  for (int t = mid_lo; t <= mid_hi; ++t) {
    for (int g = 0; g < s.num_groups; ++g) acc += s.alpha(t, g), ++cnt;
  }
  out.mean_mid50 = acc / std::max(cnt, 1);
  return out;
}

}  // namespace

ChaosResult chaos_sweep(const ExperimentConfig& cfg) {
  const DataPair data = build_dataset(cfg.dataset);
  MlpConfig mc;
  mc.widths = default_widths(cfg, data.train.d);
  mc.objective = Objective::Training;
  const MlpModel model(data.train, data.valid, mc);

  const int G = model.layout().num_groups();
  const uint64_t seed = mix64(cfg.base_seed + 1);
  const std::vector<double> log_scales(static_cast<size_t>(G), cfg.init_log_scale);
  const std::vector<double> w1 = init_weights(log_scales, model.layout(), seed);
  const int64_t batch = std::min<int64_t>(cfg.batch_size, model.train_size());
  const BatchSchedule batches = batch_schedule(seed, model.train_size(), batch, cfg.sweep.T);
  const Ratio gamma = Ratio::nearest(cfg.gamma0);

  ChaosResult res;
  const double log_lo = std::log(cfg.sweep.lo);
  const double log_hi = std::log(cfg.sweep.hi);
  for (int p = 0; p < cfg.sweep.points; ++p) {
    const double alpha =
        std::exp(log_lo + (log_hi - log_lo) * p / static_cast<double>(cfg.sweep.points - 1));
    ChaosRow row;
    row.alpha = alpha;
    try {
      const Schedules sched = Schedules::constant(cfg.sweep.T, G, alpha, gamma);
      const RunResult rr = run_with_hypergrad(w1, sched, model, batches, cfg.frac_bits);
      row.final_loss = rr.objective;
      row.dloss_dalpha = 0.0;
      for (double d : rr.hg.d_alpha) row.dloss_dalpha += d;
    } catch (const RangeError&) {
      row.finite = false;
    } catch (const NumericError&) {
      row.finite = false;
    }
    if (!row.finite) {
      row.final_loss = std::nan("");
      row.dloss_dalpha = std::nan("");
    }
    res.rows.push_back(row);
  }

  // Correlate the reported hypergradient with the local secant slope of the
  // loss curve, separately in the bottom and top decades of the sweep.
  auto band_corr = [&](double lo, double hi) {
    std::vector<double> gs, ss;
    for (size_t i = 1; i + 1 < res.rows.size(); ++i) {
      const auto& a = res.rows[i - 1];
      const auto& b = res.rows[i];
      const auto& c = res.rows[i + 1];
      if (!a.finite || !b.finite || !c.finite) continue;
      if (b.alpha < lo || b.alpha > hi) continue;
      gs.push_back(b.dloss_dalpha);
      ss.push_back((c.final_loss - a.final_loss) / (c.alpha - a.alpha));
    }
    return pearson(gs, ss);
  };
  res.corr_bottom_decade = band_corr(cfg.sweep.lo, cfg.sweep.lo * 10.0);
  res.corr_top_decade = band_corr(cfg.sweep.hi / 10.0, cfg.sweep.hi);
  return res;
}

std::vector<MemoryBenchRow> memory_bench(const BenchSpec& spec, int frac_bits) {
  std::vector<MemoryBenchRow> rows;
  for (const Ratio& gamma : spec.gammas) {
    std::vector<double> h(static_cast<size_t>(spec.dim));
    for (int64_t i = 0; i < spec.dim; ++i) {
      h[static_cast<size_t>(i)] = 0.5 + keyed_uniform(11, 0, static_cast<uint64_t>(i));
    }
    const QuadraticModel model(h, /*noise_scale=*/0.05, /*noise_seed=*/17);
    std::vector<double> w1(static_cast<size_t>(spec.dim));
    for (int64_t i = 0; i < spec.dim; ++i) {
      w1[static_cast<size_t>(i)] = keyed_normal(13, 0, static_cast<uint64_t>(i));
    }
    const int T = static_cast<int>(spec.steps);
    const Schedules sched = Schedules::constant(T, 1, 0.05, gamma);
    const BatchSchedule batches = batch_schedule(1, 1, 1, T);
    TrainState st = TrainState::init(w1, frac_bits);
    sgd_forward(st, sched, model, batches);
    const MemoryReport rep = memory_report(st, T);

    MemoryBenchRow row;
    row.gamma = gamma;
    row.bits_per_step_per_element = rep.bits_per_step_per_element;
    row.theory_bits = std::log2(static_cast<double>(gamma.den) / gamma.num);
    row.ratio_vs_naive = rep.ratio;
    rows.push_back(row);
  }
  return rows;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  const std::filesystem::path out_dir = cfg.output_dir;
  std::filesystem::create_directories(out_dir);

  json results;
  results["experiment"] = to_string(cfg.experiment);
  results["config"] = json::parse(cfg.canonical_json());
  results["config_hash"] = hex64(cfg.hash());
  results["timestamp"] = timestamp_utc();

  RunArtifacts artifacts;
  artifacts.results_json = out_dir / "results.json";

  auto emit = [&](const std::filesystem::path& p, const std::string& text) {
    write_text(p, text);
    artifacts.files.push_back(p);
  };

  switch (cfg.experiment) {
    case ExperimentId::ChaosSweep: {
      const ChaosResult res = chaos_sweep(cfg);
      std::string csv = "log10_alpha,final_loss,dloss_dalpha\n";
      int finite = 0;
      for (const auto& r : res.rows) {
        csv += g17(std::log10(r.alpha)) + "," + g17(r.final_loss) + "," + g17(r.dloss_dalpha) + "\n";
        finite += r.finite ? 1 : 0;
      }
      emit(out_dir / "chaos.csv", csv);
      results["final"] = {{"corr_bottom_decade", res.corr_bottom_decade},
                          {"corr_top_decade", res.corr_top_decade},
                          {"points", static_cast<int>(res.rows.size())},
                          {"finite_points", finite}};
      break;
    }
    case ExperimentId::MemoryBench: {
      const auto rows = memory_bench(cfg.bench, cfg.frac_bits);
      std::string csv = "gamma,bits_per_step_per_element,theory_bits,ratio_vs_naive\n";
      json jrows = json::array();
      for (const auto& r : rows) {
        const std::string ratio = r.ratio_vs_naive ? g17(*r.ratio_vs_naive) : "inf";
        csv += ratio_str(r.gamma) + "," + g17(r.bits_per_step_per_element) + "," +
               g17(r.theory_bits) + "," + ratio + "\n";
        json jr = {{"gamma", ratio_str(r.gamma)},
                   {"bits_per_step_per_element", r.bits_per_step_per_element},
                   {"theory_bits", r.theory_bits}};
        if (r.ratio_vs_naive) {
          jr["ratio_vs_naive"] = *r.ratio_vs_naive;
        } else {
          jr["unbounded"] = true;
        }
        jrows.push_back(jr);
      }
      emit(out_dir / "memory.csv", csv);
      results["final"] = {{"rows", jrows}};
      break;
    }
    default: {
      const DataPair data = build_dataset(cfg.dataset);
      MetaSetup setup = build_meta_setup(cfg, data);
      MetaState state = MetaState::init(setup.phi0, cfg.meta_step);
      state.trainable = setup.trainable;
      MetaOptions opts;
      opts.meta_iterations = cfg.meta_iterations;
      opts.num_seeds = cfg.seeds;
      opts.base_seed = cfg.base_seed;
      const MetaResult res = meta_optimize(*setup.model, setup.layout, state, setup.run, opts);

      emit(out_dir / "schedules.csv", schedules_csv(res.final_schedules));
      emit(out_dir / "meta_curve.csv", meta_curve_csv(res.curve));
      {
        std::string csv = "t,loss\n";
        for (size_t i = 0; i < res.final_loss_trace.size(); ++i) {
          csv += std::to_string(i + 1) + "," + g17(res.final_loss_trace[i]) + "\n";
        }
        emit(out_dir / "elementary_curve.csv", csv);
      }

      const AlphaShape shape = alpha_shape(res.final_schedules);
      json final = {{"objective_initial", res.curve.front().objective},
                    {"objective_final", res.curve.back().objective},
                    {"alpha_mean_last10pct", shape.mean_last10},
                    {"alpha_mean_mid50pct", shape.mean_mid50},
                    {"early_stopped", res.early_stopped}};

      if (cfg.experiment == ExperimentId::InitScales) {
        const HyperBlock* b = setup.layout.theta_blocks.find("init_scales");
        json scales;
        for (int g = 0; g < setup.model->layout().num_groups(); ++g) {
          scales[setup.model->layout().groups[static_cast<size_t>(g)].name] = std::exp(
              res.final_phi[static_cast<size_t>(setup.layout.theta_offset() + b->offset + g)]);
        }
        final["init_scales"] = scales;
      }
      if (cfg.experiment == ExperimentId::PerParamReg) {
        const HyperBlock* b = setup.layout.theta_blocks.find("l2");
        const int64_t d = data.train.d;
        const int k = data.train.num_classes;
        std::string csv;
        for (int64_t p = 0; p < d; ++p) {
          for (int c = 0; c < k; ++c) {
            const double theta = res.final_schedules.theta[static_cast<size_t>(b->offset + p * k + c)];
            csv += (c ? "," : "") + g17(std::exp(theta));
          }
          csv += "\n";
        }
        emit(out_dir / "penalty_grid.csv", csv);
      }
      if (cfg.experiment == ExperimentId::LearnData) {
        const HyperBlock* b = setup.layout.theta_blocks.find("pixels");
        const int64_t d = data.valid.d;
        const int64_t n = setup.model->train_size();
        std::string csv;
        for (int64_t e = 0; e < n; ++e) {
          for (int64_t p = 0; p < d; ++p) {
            csv += (p ? "," : "") +
                   g17(res.final_schedules.theta[static_cast<size_t>(b->offset + e * d + p)]);
          }
          csv += "\n";
        }
        emit(out_dir / "learned_pixels.csv", csv);
      }
      if (cfg.experiment == ExperimentId::TiedReg) {
        const HyperBlock* b = setup.layout.theta_blocks.find("tying");
        std::string csv = "layer,task_a,task_b,strength\n";
        const auto* mt = dynamic_cast<const TiedMultitaskModel*>(setup.model.get());
        const int k = mt->num_tasks();
        int64_t entry = 0;
        for (int layer = 0; layer < 2; ++layer) {
          for (int a = 0; a < k; ++a) {
            for (int bb = a; bb < k; ++bb, ++entry) {
              csv += std::to_string(layer) + "," + std::to_string(a) + "," + std::to_string(bb) +
                     "," +
                     g17(std::exp(res.final_schedules.theta[static_cast<size_t>(b->offset + entry)])) +
                     "\n";
            }
          }
        }
        emit(out_dir / "tying.csv", csv);
      }

      results["meta_curve"] = meta_curve_json(res.curve);
      results["final"] = final;
      break;
    }
  }

  validate_results(results, cfg.experiment);
  write_text(artifacts.results_json, results.dump(2) + "\n");
  artifacts.files.push_back(artifacts.results_json);
  return artifacts;
}

// --- verify -----------------------------------------------------------------

namespace {

double max_rel_err(std::span<const double> a, std::span<const double> b, double atol = 1e-12) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(std::abs(a[i]), std::abs(b[i])) + atol;
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace

std::vector<VerifyCheck> verify_suite(bool quick) {
  std::vector<VerifyCheck> checks;
  auto record = [&](const std::string& name, bool pass, const std::string& detail) {
    checks.push_back({name, pass, detail});
  };

  {  // ratio round trip
    bool ok = true;
    std::string detail = "rat_mul_inverse . rat_mul == identity";
    const Ratio ratios[] = {Ratio(1, 2), Ratio(2, 3), Ratio(7, 8), Ratio(9, 10), Ratio(49, 50)};
    const int64_t lim = quick ? 512 : 4096;
    for (const Ratio& r : ratios) {
      for (int64_t c0 = -lim; c0 < lim && ok; ++c0) {
        InfoBuffer buf;
        int64_t c = c0;
        rat_mul(buf, c, r);
        rat_mul_inverse(buf, c, r);
        if (c != c0 || !buf.empty()) {
          ok = false;
          detail = "mismatch at c=" + std::to_string(c0) + " r=" + ratio_str(r);
        }
      }
    }
    record("revbuf round trip", ok, detail);
  }

  {  // gradient vs central finite differences on a logistic toy
    const Dataset ds = synthetic_classification(3, 30, 5, 3);
    const LogisticModel model(ds, ds, {});
    std::vector<double> w(static_cast<size_t>(model.dim()));
    for (size_t i = 0; i < w.size(); ++i) w[i] = 0.3 * keyed_normal(5, 1, i);
    std::vector<int32_t> batch(static_cast<size_t>(ds.n));
    for (int64_t i = 0; i < ds.n; ++i) batch[static_cast<size_t>(i)] = static_cast<int32_t>(i);
    const auto lg = eval_loss_grad(model, w, {}, 1, batch);
    double worst = 0.0;
    const double h = 1e-5;
    for (size_t i = 0; i < w.size(); ++i) {
      std::vector<double> wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      const double fd = (eval_loss_grad(model, wp, {}, 1, batch).loss -
                         eval_loss_grad(model, wm, {}, 1, batch).loss) /
                        (2 * h);
      worst = std::max(worst, std::abs(fd - lg.grad_w[i]) / (std::abs(fd) + 1e-9));
    }
    record("gradient vs finite differences", worst < 1e-6,
           "max rel err " + g17(worst));
  }

  {  // dual-number HVP vs nested double-reverse
    const Dataset ds = synthetic_classification(4, 24, 6, 3);
    const LogisticModel model(ds, ds, {});
    std::vector<double> w(static_cast<size_t>(model.dim()));
    std::vector<double> vec(w.size());
    for (size_t i = 0; i < w.size(); ++i) {
      w[i] = 0.4 * keyed_normal(6, 1, i);
      vec[i] = keyed_normal(6, 2, i);
    }
    std::vector<int32_t> batch(static_cast<size_t>(ds.n));
    for (int64_t i = 0; i < ds.n; ++i) batch[static_cast<size_t>(i)] = static_cast<int32_t>(i);

    const auto dual = hvp_ww(model, w, {}, 1, batch, vec);

    ad::Tape tape;
    ad::Var wv = tape.input(w, static_cast<int64_t>(w.size()), 1);
    ad::Var th = tape.input(std::span<const double>{}, 0, 1);
    ad::Var loss = model.train_loss(tape, wv, th, 1, batch);
    const std::array<ad::Var, 1> wrt{wv};
    ad::Var g = ad::gradients(loss, wrt)[0];
    ad::Var s = ad::dot(g, tape.constant(vec, static_cast<int64_t>(vec.size()), 1));
    const auto nested = ad::value(ad::gradients(s, wrt)[0]);

    const double err = max_rel_err(dual, nested);
    record("hvp dual vs nested reverse", err < 1e-10, "max rel err " + g17(err));
  }

  {  // bit-exact reversibility on a quadratic
    const int64_t dim = quick ? 50 : 200;
    const int T = quick ? 200 : 1000;
    std::vector<double> h(static_cast<size_t>(dim));
    std::vector<double> w1(static_cast<size_t>(dim));
    for (int64_t i = 0; i < dim; ++i) {
      h[static_cast<size_t>(i)] = 0.5 + keyed_uniform(21, 0, static_cast<uint64_t>(i));
      w1[static_cast<size_t>(i)] = keyed_normal(22, 0, static_cast<uint64_t>(i));
    }
    const QuadraticModel model(h, 0.05, 23);
    const Schedules sched = Schedules::constant(T, 1, 0.05, Ratio(9, 10));
    const BatchSchedule batches = batch_schedule(1, 1, 1, T);
    TrainState st = TrainState::init(w1);
    const TrainState initial = st;
    sgd_forward(st, sched, model, batches);
    const auto obj = eval_objective_grad(model, st.w.to_reals());
    sgd_reverse(st, sched, model, batches, obj.grad);
    const bool ok = st.w.raw == initial.w.raw && st.v.raw == initial.v.raw &&
                    st.buffer_bits_total() == 0.0;
    record("bit-exact reversibility", ok,
           ok ? "w1, v1 and buffers restored" : "state mismatch after reversal");
  }

  {  // reversible hypergradients vs the naive-cache oracle
    const Dataset all = synthetic_classification(9, 72, 6, 3);
    const Dataset train = all.take(0, 60);
    const Dataset valid = all.take(60, 12);
    LogisticConfig lc;
    lc.num_groups = 4;
    const LogisticModel model(train, valid, lc);
    const int T = quick ? 20 : 50;
    Schedules sched = Schedules::constant(T, 4, 0.1, Ratio(7, 8));
    const BatchSchedule batches = batch_schedule(2, train.n, 20, T);
    std::vector<double> w1(static_cast<size_t>(model.dim()));
    for (size_t i = 0; i < w1.size(); ++i) w1[i] = 0.2 * keyed_normal(10, 0, i);
    const RunResult rev = run_with_hypergrad(w1, sched, model, batches, 48);
    const HypergradResult naive =
        naive_reverse(w1, RealSchedules::from(sched), model, batches);
    const double err = std::max(max_rel_err(rev.hg.d_alpha, naive.d_alpha),
                                max_rel_err(rev.hg.d_gamma, naive.d_gamma));
    record("reversible vs naive-cache hypergradients", err < 1e-6, "max rel err " + g17(err));
  }

  {  // negative control: float-only reversal diverges
    const int64_t dim = 20;
    const int T = 500;
    std::vector<double> h(static_cast<size_t>(dim));
    std::vector<double> w1(static_cast<size_t>(dim));
    for (int64_t i = 0; i < dim; ++i) {
      h[static_cast<size_t>(i)] = 0.5 + keyed_uniform(31, 0, static_cast<uint64_t>(i));
      w1[static_cast<size_t>(i)] = keyed_normal(32, 0, static_cast<uint64_t>(i));
    }
    const QuadraticModel model(h, 0.05, 33);
    // small step keeps every mode overdamped, the worst case for reversal
    const Schedules sched = Schedules::constant(T, 1, 0.01, Ratio(9, 10));
    const BatchSchedule batches = batch_schedule(1, 1, 1, T);
    const FloatReversal fr = float_reverse_unbuffered(w1, sched, model, batches);
    double rel = 0.0;
    if (fr.finite) {
      double num = 0.0, den = 0.0;
      for (size_t i = 0; i < w1.size(); ++i) {
        num += (fr.recovered_w1[i] - w1[i]) * (fr.recovered_w1[i] - w1[i]);
        den += w1[i] * w1[i];
      }
      rel = std::sqrt(num / den);
    }
    const bool diverged = !fr.finite || rel > 1e-2;
    record("negative control (float reversal diverges)", diverged,
           fr.finite ? "relative error " + g17(rel) : "reversal overflowed");
  }

  return checks;
}

}  // namespace revlearn
