#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "revlearn/experiments.hpp"

namespace {

std::string ratio_arg(const revlearn::Ratio& r) {
  return std::to_string(r.num) + "/" + std::to_string(r.den);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"revlearn: trains with exactly-reversible SGD and differentiates through training"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  auto* run = app.add_subcommand("run", "run an experiment described by a JSON config");
  run->add_option("config", config_path, "path to the experiment config")->required();
  run->add_option("--output-dir", output_dir, "override the config's output directory");

  std::vector<std::string> gamma_args;
  int64_t steps = 10000;
  int64_t dim = 64;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench-memory", "measure information-buffer growth per decay");
  bench->add_option("--gamma", gamma_args, "momentum decay as n/d (repeatable)");
  bench->add_option("--steps", steps, "number of iterations")->check(CLI::PositiveNumber);
  bench->add_option("--dim", dim, "state dimension")->check(CLI::PositiveNumber);
  bench->add_option("--output", bench_out, "write the CSV here instead of stdout");

  bool quick = false;
  auto* verify = app.add_subcommand("verify", "run the oracle-agreement suite");
  verify->add_flag("--quick", quick, "smaller problem sizes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      revlearn::ExperimentConfig cfg = revlearn::ExperimentConfig::from_file(config_path);
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      const auto artifacts = revlearn::run_experiment(cfg);
      for (const auto& f : artifacts.files) std::cout << "wrote " << f.string() << "\n";
      return 0;
    }
    if (bench->parsed()) {
      revlearn::BenchSpec spec;
      if (!gamma_args.empty()) {
        spec.gammas.clear();
        for (const auto& g : gamma_args) {
          const auto slash = g.find('/');
          if (slash == std::string::npos) {
            std::cerr << "error: --gamma expects n/d, got '" << g << "'\n";
            return 1;
          }
          spec.gammas.emplace_back(std::stoull(g.substr(0, slash)),
                                   std::stoull(g.substr(slash + 1)));
        }
      }
      spec.steps = steps;
      spec.dim = dim;
      const auto rows = revlearn::memory_bench(spec);
      std::string csv = "gamma,bits_per_step_per_element,theory_bits,ratio_vs_naive\n";
      for (const auto& r : rows) {
        char line[160];
        if (r.ratio_vs_naive) {
          std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.2f\n", ratio_arg(r.gamma).c_str(),
                        r.bits_per_step_per_element, r.theory_bits, *r.ratio_vs_naive);
        } else {
          std::snprintf(line, sizeof line, "%s,%.6f,%.6f,inf\n", ratio_arg(r.gamma).c_str(),
                        r.bits_per_step_per_element, r.theory_bits);
        }
        csv += line;
      }
      if (bench_out.empty()) {
        std::cout << csv;
      } else {
        if (FILE* f = std::fopen(bench_out.c_str(), "wb")) {
          std::fwrite(csv.data(), 1, csv.size(), f);
          std::fclose(f);
          std::cout << "wrote " << bench_out << "\n";
        } else {
          std::cerr << "error: cannot write " << bench_out << "\n";
          return 1;
        }
      }
      return 0;
    }
    if (verify->parsed()) {
      const auto checks = revlearn::verify_suite(quick);
      bool all_ok = true;
      for (const auto& c : checks) {
        std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name << " (" << c.detail << ")\n";
        all_ok = all_ok && c.pass;
      }
      return all_ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
