#include <benchmark/benchmark.h>

#include "glab/calibration.hpp"
#include "glab/mixture.hpp"
#include "glab/predictor.hpp"

using namespace glab;

namespace {

GaussianMixtureModel bench_mixture(std::size_t dim) {
  return make_default_mixture(dim);
}

void bm_predict(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  GaussianMixtureModel gmm = bench_mixture(d);
  AnalyticPredictor pred(gmm);
  NoiseSchedule sched = make_schedule(50, 0.002, 0.4);
  Condition c({0, 3});
  Rng rng(1);
  Vec x = rng.gaussian_vec(d);
  for (auto _ : state) {
    Vec eps = pred.predict(x, 25, c, sched);
    benchmark::DoNotOptimize(eps.data());
  }
}
BENCHMARK(bm_predict)->Arg(2)->Arg(8)->Arg(32);

void bm_ddim_step(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  NoiseSchedule sched = make_schedule(50, 0.002, 0.4);
  Rng rng(2);
  LatentState s{rng.gaussian_vec(d), 25};
  Vec eps = rng.gaussian_vec(d);
  for (auto _ : state) {
    LatentState next = ddim_step(s, eps, sched);
    benchmark::DoNotOptimize(next.x.data());
  }
}
BENCHMARK(bm_ddim_step)->Arg(2)->Arg(32);

void bm_project(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  Vec v = rng.gaussian_vec(d);
  Vec dir = rng.gaussian_vec(d);
  for (auto _ : state) {
    Projection p = project(v, dir);
    benchmark::DoNotOptimize(p.parallel.data());
  }
}
BENCHMARK(bm_project)->Arg(2)->Arg(32)->Arg(256);

void bm_sample_cfg(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  GaussianMixtureModel gmm = bench_mixture(d);
  AnalyticPredictor pred(gmm);
  NoiseSchedule sched = make_schedule(50, 0.002, 0.4);
  Condition c({1});
  GuidanceSpec spec;
  for (auto _ : state) {
    Rng rng(4);
    SampleResult res = sample(spec, pred, c, sched, rng);
    benchmark::DoNotOptimize(res.sample.data());
  }
}
BENCHMARK(bm_sample_cfg)->Arg(2)->Arg(8);

void bm_calibrate(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  GaussianMixtureModel gmm = bench_mixture(d);
  AnalyticPredictor pred(gmm);
  NoiseSchedule sched = make_schedule(50, 0.002, 0.4);
  Condition c({1});
  GuidanceSpec spec;
  Rng rng(5);
  SampleResult res = sample(spec, pred, c, sched, rng);
  for (auto _ : state) {
    CalibrationResult cal = calibrate(res.trajectory, pred, c, sched);
    benchmark::DoNotOptimize(cal.omega_e_mean);
  }
}
BENCHMARK(bm_calibrate)->Arg(2)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
