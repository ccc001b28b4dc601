#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "revlearn/errors.hpp"

namespace revlearn {

struct Dataset {
  int64_t n = 0;
  int64_t d = 0;
  int num_classes = 0;
  std::vector<double> inputs;  // n x d row-major
  std::vector<int32_t> labels;

  std::span<const double> row(int64_t i) const {
    return {inputs.data() + i * d, static_cast<size_t>(d)};
  }
  void validate() const;
  // First `count` examples / the remainder, for train/valid splits.
  Dataset take(int64_t begin, int64_t count) const;
};

// IDX (big-endian) dataset pair as distributed for MNIST. Pixels are scaled
// to [0,1]. Distinct errors for bad magic, dimension mismatch and truncation.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx(const Dataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels);

// Gaussian class clusters, min-max rescaled into [0,1]. Deterministic in
// (seed); labels assigned round-robin so the histogram is balanced. The
// class means are keyed by `seed`; pass `sample_seed` to draw different
// examples around the same means (related tasks, validation splits).
// label_noise relabels that fraction of examples uniformly at random,
// which keeps the cross-entropy optimum finite.
Dataset synthetic_classification(uint64_t seed, int64_t n, int64_t d, int k,
                                 double separation = 3.0, uint64_t sample_seed = 0,
                                 double label_noise = 0.0);

// Per-iteration minibatch index lists: one shuffle per epoch, partitioned
// into consecutive blocks. Identical replay forward and reverse.
struct BatchSchedule {
  std::vector<std::vector<int32_t>> batches;

  int T() const { return static_cast<int>(batches.size()); }
  std::span<const int32_t> at(int t) const {  // t is 1-based
    return {batches[static_cast<size_t>(t - 1)].data(), batches[static_cast<size_t>(t - 1)].size()};
  }
};

BatchSchedule batch_schedule(uint64_t seed, int64_t n, int64_t batch_size, int T);

}  // namespace revlearn
