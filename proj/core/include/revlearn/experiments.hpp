#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "revlearn/meta.hpp"

namespace revlearn {

enum class ExperimentId {
  LrSchedule,
  InitScales,
  PerParamReg,
  LearnData,
  TiedReg,
  ChaosSweep,
  MemoryBench,
};

std::string to_string(ExperimentId id);

struct DatasetSpec {
  std::string type = "synthetic";  // synthetic | idx
  int64_t n = 1000;
  int64_t d = 64;
  int k = 10;
  double separation = 3.0;
  double label_noise = 0.0;
  uint64_t seed = 7;
  std::string dir;     // idx directory; REVLEARN_DATA_DIR when empty
  int64_t limit = 1000;  // cap on examples loaded from idx files
};

struct ModelSpec {
  std::string type = "mlp";      // logistic | mlp
  std::vector<int64_t> widths;   // input + hidden sizes; empty = sensible default
  int num_groups = 0;            // optional contiguous regrouping (logistic)
};

struct SweepSpec {
  double lo = 1e-2;
  double hi = 1e+2;
  int points = 48;
  int T = 50;
};

struct BenchSpec {
  std::vector<Ratio> gammas = {Ratio(1, 2), Ratio(7, 8), Ratio(9, 10), Ratio(49, 50)};
  int64_t steps = 10000;
  int64_t dim = 64;
};

struct ExperimentConfig {
  ExperimentId experiment = ExperimentId::LrSchedule;
  std::string output_dir = "out";
  int frac_bits = 32;
  int T = 100;
  int64_t batch_size = 100;
  int meta_iterations = 20;
  int seeds = 3;
  uint64_t base_seed = 0;
  double meta_step = 0.04;
  double alpha0 = 0.024;  // start small: approach the minimum from the left
  double gamma0 = 0.9;
  double init_log_scale = -2.302585092994046;  // log(0.1)
  DatasetSpec dataset;
  ModelSpec model;
  SweepSpec sweep;
  BenchSpec bench;

  static ExperimentConfig from_file(const std::filesystem::path& path);
  static ExperimentConfig from_json_text(const std::string& text);
  // Sorted-key serialization with every field materialized; hashing and the
  // byte-identical rerun guarantee rest on this form.
  std::string canonical_json() const;
  uint64_t hash() const;
};

struct RunArtifacts {
  std::filesystem::path results_json;
  std::vector<std::filesystem::path> files;  // everything written, results.json included
};

RunArtifacts run_experiment(const ExperimentConfig& cfg);

// Chaos sweep over a 1-D range of fixed learning rates. Overflows at
// extreme rates become sentinel rows (NaN), not crashes.
struct ChaosRow {
  double alpha = 0.0;
  double final_loss = 0.0;
  double dloss_dalpha = 0.0;
  bool finite = true;
};
struct ChaosResult {
  std::vector<ChaosRow> rows;
  double corr_bottom_decade = 0.0;  // hypergradient vs local finite-difference slope
  double corr_top_decade = 0.0;
};
ChaosResult chaos_sweep(const ExperimentConfig& cfg);

struct MemoryBenchRow {
  Ratio gamma;
  double bits_per_step_per_element = 0.0;
  double theory_bits = 0.0;  // log2(d/n)
  std::optional<double> ratio_vs_naive;
};
std::vector<MemoryBenchRow> memory_bench(const BenchSpec& spec, int frac_bits = kDefaultFracBits);

// Oracle-agreement suite behind `revlearn verify`.
struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};
std::vector<VerifyCheck> verify_suite(bool quick = true);

}  // namespace revlearn
