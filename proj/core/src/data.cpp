#include "revlearn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "revlearn/rng.hpp"

namespace revlearn {

namespace {

constexpr uint32_t kImageMagic = 0x00000803;
constexpr uint32_t kLabelMagic = 0x00000801;

uint32_t read_u32_be(std::istream& in, const std::string& what) {
  uint8_t b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("truncated IDX file while reading " + what);
  }
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void Dataset::validate() const {
  if (static_cast<int64_t>(inputs.size()) != n * d) {
    throw DataError("dataset inputs size does not match n*d");
  }
  if (static_cast<int64_t>(labels.size()) != n) {
    throw DataError("dataset has " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(n) + " examples");
  }
  int32_t max_label = -1;
  for (int32_t lab : labels) {
    if (lab < 0) throw DataError("negative label");
    max_label = std::max(max_label, lab);
  }
  if (n > 0 && max_label + 1 != num_classes) {
    throw DataError("declared " + std::to_string(num_classes) + " classes but max label is " +
                    std::to_string(max_label));
  }
}

Dataset Dataset::take(int64_t begin, int64_t count) const {
  if (begin < 0 || begin + count > n) throw DataError("dataset slice out of range");
  Dataset out;
  out.n = count;
  out.d = d;
  out.num_classes = num_classes;
  out.inputs.assign(inputs.begin() + begin * d, inputs.begin() + (begin + count) * d);
  out.labels.assign(labels.begin() + begin, labels.begin() + begin + count);
  return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw DataError("cannot open IDX image file: " + images.string());
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw DataError("cannot open IDX label file: " + labels.string());

  const uint32_t img_magic = read_u32_be(img, "image magic");
  if (img_magic != kImageMagic) {
    throw DataError("bad IDX image magic: got " + std::to_string(img_magic));
  }
  const uint32_t lab_magic = read_u32_be(lab, "label magic");
  if (lab_magic != kLabelMagic) {
    throw DataError("bad IDX label magic: got " + std::to_string(lab_magic));
  }

  const uint32_t n_img = read_u32_be(img, "image count");
  const uint32_t rows = read_u32_be(img, "row count");
  const uint32_t cols = read_u32_be(img, "column count");
  const uint32_t n_lab = read_u32_be(lab, "label count");
  if (n_img != n_lab) {
    throw DataError("IDX dimension mismatch: " + std::to_string(n_img) + " images vs " +
                    std::to_string(n_lab) + " labels");
  }

  Dataset ds;
  ds.n = n_img;
  ds.d = static_cast<int64_t>(rows) * cols;
  std::vector<uint8_t> pixels(static_cast<size_t>(ds.n * ds.d));
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw DataError("truncated IDX image payload");
  }
  std::vector<uint8_t> labs(static_cast<size_t>(ds.n));
  if (!lab.read(reinterpret_cast<char*>(labs.data()), static_cast<std::streamsize>(labs.size()))) {
    throw DataError("truncated IDX label payload");
  }

  ds.inputs.resize(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) ds.inputs[i] = pixels[i] / 255.0;
  ds.labels.assign(labs.begin(), labs.end());
  int32_t max_label = 0;
  for (int32_t v : ds.labels) max_label = std::max(max_label, v);
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
  ds.validate();
  std::ofstream img(images, std::ios::binary);
  if (!img) throw DataError("cannot create IDX image file: " + images.string());
  write_u32_be(img, kImageMagic);
  write_u32_be(img, static_cast<uint32_t>(ds.n));
  write_u32_be(img, 1);
  write_u32_be(img, static_cast<uint32_t>(ds.d));
  std::vector<uint8_t> pixels(static_cast<size_t>(ds.n * ds.d));
  for (size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(ds.inputs[i], 0.0, 1.0);
    pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));

  std::ofstream lab(labels, std::ios::binary);
  if (!lab) throw DataError("cannot create IDX label file: " + labels.string());
  write_u32_be(lab, kLabelMagic);
  write_u32_be(lab, static_cast<uint32_t>(ds.n));
  std::vector<uint8_t> labs(ds.labels.begin(), ds.labels.end());
  lab.write(reinterpret_cast<const char*>(labs.data()), static_cast<std::streamsize>(labs.size()));
}

Dataset synthetic_classification(uint64_t seed, int64_t n, int64_t d, int k, double separation,
                                 uint64_t sample_seed, double label_noise) {
  if (sample_seed == 0) sample_seed = seed;
  if (label_noise < 0.0 || label_noise > 1.0) {
    throw ContractViolation("label_noise must lie in [0, 1]");
  }
  if (k < 2 || n < k) throw ContractViolation("synthetic_classification requires n >= k >= 2");
  Dataset ds;
  ds.n = n;
  ds.d = d;
  ds.num_classes = k;
  ds.inputs.resize(static_cast<size_t>(n * d));
  ds.labels.resize(static_cast<size_t>(n));

  // Class means: separation * random unit direction.
  std::vector<double> means(static_cast<size_t>(k) * d);
  for (int c = 0; c < k; ++c) {
    double norm2 = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double z = keyed_normal(seed, 0x6d65616e /*mean*/ + c, static_cast<uint64_t>(j));
      means[static_cast<size_t>(c) * d + j] = z;
      norm2 += z * z;
    }
    const double scale = separation / std::sqrt(norm2);
    for (int64_t j = 0; j < d; ++j) means[static_cast<size_t>(c) * d + j] *= scale;
  }

  for (int64_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % k);  // round-robin keeps the histogram balanced
    ds.labels[static_cast<size_t>(i)] = c;
    for (int64_t j = 0; j < d; ++j) {
      ds.inputs[static_cast<size_t>(i * d + j)] =
          means[static_cast<size_t>(c) * d + j] +
          keyed_normal(sample_seed, 0x64617461 /*data*/ + i, static_cast<uint64_t>(j));
    }
  }

  if (label_noise > 0.0) {
    for (int64_t i = 0; i < n; ++i) {
      if (keyed_uniform(sample_seed, 0x6e6f6973 /*nois*/, static_cast<uint64_t>(i)) < label_noise) {
        const int shift =
            1 + static_cast<int>(keyed_u64(sample_seed, 0x6e6f6a73, static_cast<uint64_t>(i)) %
                                 static_cast<uint64_t>(k - 1));
        auto& lab = ds.labels[static_cast<size_t>(i)];
        lab = static_cast<int32_t>((lab + shift) % k);
      }
    }
  }

  // Rescale into [0,1] with one global affine map; separability is preserved.
  const auto [lo_it, hi_it] = std::minmax_element(ds.inputs.begin(), ds.inputs.end());
  const double lo = *lo_it;
  const double range = std::max(*hi_it - lo, 1e-12);
  for (double& v : ds.inputs) v = (v - lo) / range;
  return ds;
}

BatchSchedule batch_schedule(uint64_t seed, int64_t n, int64_t batch_size, int T) {
  if (batch_size <= 0 || batch_size > n) {
    throw ContractViolation("batch_size must lie in [1, n]");
  }
  const int64_t per_epoch = (n + batch_size - 1) / batch_size;
  BatchSchedule sched;
  sched.batches.reserve(static_cast<size_t>(T));
  std::vector<int32_t> perm(static_cast<size_t>(n));
  int64_t epoch = -1;
  for (int t = 0; t < T; ++t) {
    const int64_t e = t / per_epoch;
    if (e != epoch) {
      epoch = e;
      std::iota(perm.begin(), perm.end(), 0);
      keyed_shuffle(std::span<int32_t>(perm), seed, 0x65706f63 /*epoc*/ + static_cast<uint64_t>(e));
    }
    const int64_t block = t % per_epoch;
    const int64_t lo = block * batch_size;
    const int64_t hi = std::min(lo + batch_size, n);
    sched.batches.emplace_back(perm.begin() + lo, perm.begin() + hi);
  }
  return sched;
}

}  // namespace revlearn
