#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "revlearn/data.hpp"
#include "revlearn/models.hpp"
#include "revlearn/rng.hpp"
#include "revlearn/train.hpp"

using namespace revlearn;

TEST_SUITE_BEGIN("data");

namespace {

Dataset byte_valued_dataset(uint64_t seed, int64_t n, int64_t d, int k) {
  Dataset ds;
  ds.n = n;
  ds.d = d;
  ds.num_classes = k;
  ds.inputs.resize(static_cast<size_t>(n * d));
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    ds.labels[static_cast<size_t>(i)] = static_cast<int32_t>(i % k);
    for (int64_t j = 0; j < d; ++j) {
      ds.inputs[static_cast<size_t>(i * d + j)] =
          static_cast<double>(keyed_u64(seed, i, static_cast<uint64_t>(j)) % 256) / 255.0;
    }
  }
  return ds;
}

}  // namespace

TEST_CASE("idx write then read round-trips bit-exactly") {
  const Dataset ds = byte_valued_dataset(1, 37, 12, 5);
  const auto dir = std::filesystem::temp_directory_path();
  const auto img = dir / "revlearn_test-images-idx3-ubyte";
  const auto lab = dir / "revlearn_test-labels-idx1-ubyte";
  write_idx(ds, img, lab);
  const Dataset back = load_idx(img, lab);
  CHECK(back.n == ds.n);
  CHECK(back.d == ds.d);
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.inputs == ds.inputs);
  CHECK(back.labels == ds.labels);
  std::filesystem::remove(img);
  std::filesystem::remove(lab);
}

TEST_CASE("idx errors are distinct") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto img = dir / "revlearn_bad-images";
  const auto lab = dir / "revlearn_bad-labels";

  SUBCASE("empty file fails on the magic") {
    std::ofstream(img).close();
    std::ofstream(lab).close();
    CHECK_THROWS_WITH_AS(load_idx(img, lab), doctest::Contains("magic"), DataError);
  }
  SUBCASE("wrong magic") {
    std::ofstream f(img, std::ios::binary);
    const char junk[16] = {0x12, 0x34, 0x56, 0x78};
    f.write(junk, sizeof junk);
    f.close();
    std::ofstream(lab).close();
    CHECK_THROWS_WITH_AS(load_idx(img, lab), doctest::Contains("magic"), DataError);
  }
  SUBCASE("count mismatch between images and labels") {
    Dataset a = byte_valued_dataset(2, 6, 4, 3);
    Dataset b = byte_valued_dataset(2, 5, 4, 3);
    const auto img2 = dir / "revlearn_m-images";
    const auto lab2 = dir / "revlearn_m-labels";
    write_idx(a, img, lab);          // 6 images
    write_idx(b, img2, lab2);        // 5 labels
    CHECK_THROWS_WITH_AS(load_idx(img, lab2), doctest::Contains("mismatch"), DataError);
    std::filesystem::remove(img2);
    std::filesystem::remove(lab2);
  }
  SUBCASE("truncated payload") {
    const Dataset ds = byte_valued_dataset(3, 8, 6, 2);
    write_idx(ds, img, lab);
    // chop the image payload
    const auto size = std::filesystem::file_size(img);
    std::filesystem::resize_file(img, size - 5);
    CHECK_THROWS_WITH_AS(load_idx(img, lab), doctest::Contains("truncated"), DataError);
  }
  std::filesystem::remove(img);
  std::filesystem::remove(lab);
}

TEST_CASE("synthetic data is deterministic and balanced") {
  const Dataset a = synthetic_classification(5, 101, 8, 4);
  const Dataset b = synthetic_classification(5, 101, 8, 4);
  CHECK(a.inputs == b.inputs);
  CHECK(a.labels == b.labels);

  std::vector<int> hist(4, 0);
  for (int32_t lab : a.labels) hist[static_cast<size_t>(lab)]++;
  const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
  CHECK(*hi - *lo <= 1);

  for (double v : a.inputs) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  const Dataset c = synthetic_classification(6, 101, 8, 4);
  CHECK(a.inputs != c.inputs);

  // same means, fresh draws
  const Dataset d = synthetic_classification(5, 101, 8, 4, 3.0, 77);
  CHECK(d.inputs != a.inputs);
  CHECK(d.labels == a.labels);
}

TEST_CASE("well-separated synthetic classes are learnable in 100 steps") {
  const Dataset train = synthetic_classification(8, 200, 10, 2, 5.0);
  const LogisticModel model(train, train, {});
  const int T = 100;
  const Schedules sched = Schedules::constant(T, 2, 0.5, Ratio(9, 10));
  const BatchSchedule batches = batch_schedule(2, train.n, 50, T);
  const std::vector<double> w1(static_cast<size_t>(model.dim()), 0.0);
  TrainState st = TrainState::init(w1);
  sgd_forward(st, sched, model, batches);

  const auto w = st.w.to_reals();
  int errors = 0;
  for (int64_t i = 0; i < train.n; ++i) {
    double best = -1e300;
    int argmax = -1;
    for (int c = 0; c < 2; ++c) {
      double z = w[static_cast<size_t>(train.d * 2 + c)];
      for (int64_t p = 0; p < train.d; ++p) {
        z += train.inputs[static_cast<size_t>(i * train.d + p)] *
             w[static_cast<size_t>(p * 2 + c)];
      }
      if (z > best) {
        best = z;
        argmax = c;
      }
    }
    errors += argmax != train.labels[static_cast<size_t>(i)] ? 1 : 0;
  }
  CHECK(static_cast<double>(errors) / train.n <= 0.05);
}

TEST_CASE("batch schedule partitions each epoch and replays deterministically") {
  const int64_t n = 23;
  const int64_t bs = 5;
  const int per_epoch = 5;  // ceil(23/5)
  const BatchSchedule s = batch_schedule(3, n, bs, 2 * per_epoch);

  for (int epoch = 0; epoch < 2; ++epoch) {
    std::set<int32_t> seen;
    size_t total = 0;
    for (int b = 0; b < per_epoch; ++b) {
      const auto batch = s.at(epoch * per_epoch + b + 1);
      seen.insert(batch.begin(), batch.end());
      total += batch.size();
    }
    CHECK(total == static_cast<size_t>(n));
    CHECK(seen.size() == static_cast<size_t>(n));
  }

  const BatchSchedule again = batch_schedule(3, n, bs, 2 * per_epoch);
  CHECK(s.batches == again.batches);
  const BatchSchedule other = batch_schedule(4, n, bs, 2 * per_epoch);
  CHECK(s.batches != other.batches);
}

TEST_CASE("full-batch schedule uses every example each iteration") {
  const BatchSchedule s = batch_schedule(1, 7, 7, 3);
  for (int t = 1; t <= 3; ++t) {
    auto batch = s.at(t);
    std::set<int32_t> seen(batch.begin(), batch.end());
    CHECK(seen.size() == 7);
  }
}

TEST_CASE("batch size must not exceed the dataset") {
  CHECK_THROWS_AS(batch_schedule(1, 5, 6, 2), ContractViolation);
  CHECK_THROWS_AS(batch_schedule(1, 5, 0, 2), ContractViolation);
}

TEST_CASE("dataset validation catches label inconsistencies") {
  Dataset ds = byte_valued_dataset(9, 10, 3, 4);
  ds.num_classes = 3;  // max label is 3
  CHECK_THROWS_AS(ds.validate(), DataError);
  ds.num_classes = 4;
  ds.labels[0] = -1;
  CHECK_THROWS_AS(ds.validate(), DataError);
}

TEST_SUITE_END();
