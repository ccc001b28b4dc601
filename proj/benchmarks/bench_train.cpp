#include <benchmark/benchmark.h>

#include "revlearn/models.hpp"
#include "revlearn/rng.hpp"
#include "revlearn/train.hpp"

using namespace revlearn;

namespace {

struct MlpFixture {
  Dataset train;
  Dataset valid;
  MlpModel model;
  Schedules sched;
  BatchSchedule batches;
  std::vector<double> w1;

  static MlpFixture make(int T) {
    Dataset all = synthetic_classification(7, 360, 64, 10);
    Dataset train = all.take(0, 300);
    Dataset valid = all.take(300, 60);
    MlpConfig mc;
    mc.widths = {64, 20, 20, 20};
    MlpModel model(std::move(train), std::move(valid), mc);
    const int G = model.layout().num_groups();
    Schedules sched = Schedules::constant(T, G, 0.05, Ratio(9, 10));
    BatchSchedule batches = batch_schedule(1, model.train_size(), 50, T);
    std::vector<double> log_scales(static_cast<size_t>(G), std::log(0.1));
    std::vector<double> w1 = init_weights(log_scales, model.layout(), 3);
    return {all.take(0, 300), all.take(300, 60), std::move(model), std::move(sched),
            std::move(batches), std::move(w1)};
  }
};

void BM_RatMul(benchmark::State& state) {
  const Ratio r(9, 10);
  InfoBuffer buf;
  int64_t c = 123456789;
  uint64_t t = 0;
  for (auto _ : state) {
    c = static_cast<int64_t>(keyed_u64(1, 0, t++));
    rat_mul(buf, c, r);
    benchmark::DoNotOptimize(c);
  }
}
BENCHMARK(BM_RatMul);

void BM_SgdForward(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0));
  auto fx = MlpFixture::make(T);
  for (auto _ : state) {
    TrainState st = TrainState::init(fx.w1);
    sgd_forward(st, fx.sched, fx.model, fx.batches);
    benchmark::DoNotOptimize(st.w.raw.data());
  }
}
BENCHMARK(BM_SgdForward)->Arg(20);

void BM_SgdForwardReverse(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0));
  auto fx = MlpFixture::make(T);
  for (auto _ : state) {
    TrainState st = TrainState::init(fx.w1);
    sgd_forward(st, fx.sched, fx.model, fx.batches);
    const auto obj = eval_objective_grad(fx.model, st.w.to_reals());
    const auto hg = sgd_reverse(st, fx.sched, fx.model, fx.batches, obj.grad);
    benchmark::DoNotOptimize(hg.d_alpha.data());
  }
}
BENCHMARK(BM_SgdForwardReverse)->Arg(20);

void BM_GradMlp(benchmark::State& state) {
  auto fx = MlpFixture::make(1);
  for (auto _ : state) {
    const auto lg = eval_loss_grad(fx.model, fx.w1, {}, 1, fx.batches.at(1));
    benchmark::DoNotOptimize(lg.grad_w.data());
  }
}
BENCHMARK(BM_GradMlp);

void BM_DualGradMlp(benchmark::State& state) {
  auto fx = MlpFixture::make(1);
  std::vector<double> u(fx.w1.size(), 0.5);
  for (auto _ : state) {
    const auto lgd = eval_loss_grad_dual(fx.model, fx.w1, {}, 1, fx.batches.at(1), u);
    benchmark::DoNotOptimize(lgd.hvp_w.data());
  }
}
BENCHMARK(BM_DualGradMlp);

}  // namespace

BENCHMARK_MAIN();
