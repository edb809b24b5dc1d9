#include <cmath>

#include "doctest.h"
#include "glab/rng.hpp"
#include "glab/schedule.hpp"

using namespace glab;

TEST_SUITE_BEGIN("schedule");

TEST_CASE("linear ramp hits its endpoints and cumulative products") {
  NoiseSchedule s = make_schedule(2, 0.1, 0.2);
  CHECK(s.T == 2);
  CHECK(s.beta[1] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.beta[2] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(s.alpha[1] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.alpha_bar[1] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar[2] == doctest::Approx(0.72).epsilon(1e-15));

  NoiseSchedule one = make_schedule(1, 0.05, 0.3);
  CHECK(one.beta[1] == 0.05);
}

TEST_CASE("the ramp is monotone and cumulative alphas decrease") {
  NoiseSchedule s = make_schedule(50, 0.002, 0.4);
  for (int t = 1; t <= 50; ++t) {
    CHECK(s.beta[t] >= 0.002);
    CHECK(s.beta[t] <= 0.4);
    if (t > 1) {
      CHECK(s.beta[t] > s.beta[t - 1]);
      CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    }
    CHECK(s.alpha_bar[t] > 0.0);
    CHECK(s.alpha_bar[t] < 1.0);
  }
}

TEST_CASE("schedule construction rejects bad parameters") {
  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), std::invalid_argument);
}

TEST_CASE("deterministic reverse step matches its closed form") {
  NoiseSchedule s = make_schedule(50, 0.002, 0.4);
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const int t = 1 + static_cast<int>(rng.uniform_index(50));
    Vec x = rng.gaussian_vec(3);
    Vec eps = rng.gaussian_vec(3);
    LatentState out = ddim_step({x, t}, eps, s);
    CHECK(out.t == t - 1);

    const long double ab = s.alpha_bar[t];
    const long double abp = s.alpha_bar[t - 1];
    const long double xc = std::sqrt(abp / ab);
    const long double ec = std::sqrt(1.0L - abp) - std::sqrt(abp * (1.0L - ab) / ab);
    for (std::size_t i = 0; i < 3; ++i) {
      const double ref = static_cast<double>(xc * x[i] + ec * eps[i]);
      CHECK(std::fabs(out.x[i] - ref) <= 1e-13 * (1.0 + std::fabs(ref)));
    }
  }
}

TEST_CASE("ancestral step applies the posterior mean plus sigma_t noise") {
  NoiseSchedule s = make_schedule(50, 0.002, 0.4);
  const int t = 17;
  Vec x = Rng(5).gaussian_vec(2);
  Vec eps = Rng(6).gaussian_vec(2);

  Rng step_rng(21);
  LatentState out = ddpm_step({x, t}, eps, s, step_rng);
  CHECK(out.t == t - 1);

  Rng replay(21);
  Vec z = replay.gaussian_vec(2);
  const double eps_coef = s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
  for (std::size_t i = 0; i < 2; ++i) {
    const double mean = (x[i] - eps_coef * eps[i]) / std::sqrt(s.alpha[t]);
    const double ref = mean + std::sqrt(s.beta[t]) * z[i];
    CHECK(out.x[i] == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("inversion undoes a deterministic step") {
  NoiseSchedule s = make_schedule(50, 0.002, 0.4);
  Rng rng(12);
  for (int rep = 0; rep < 200; ++rep) {
    const int t = 1 + static_cast<int>(rng.uniform_index(50));
    Vec x = rng.gaussian_vec(2);
    Vec eps = rng.gaussian_vec(2);

    LatentState down = ddim_step({x, t}, eps, s);
    LatentState up = ddim_invert_step(down, eps, s);
    CHECK(up.t == t);
    CHECK(norm(sub(up.x, x)) <= 1e-12 * (1.0 + norm(x)));

    // and the other way around, renoise then denoise
    LatentState noised = ddim_invert_step({x, t - 1}, eps, s);
    LatentState back = ddim_step(noised, eps, s);
    CHECK(back.t == t - 1);
    CHECK(norm(sub(back.x, x)) <= 1e-12 * (1.0 + norm(x)));
  }
}

TEST_CASE("recovered noise matches the noise that drove the transition") {
  NoiseSchedule s = make_schedule(50, 0.002, 0.4);
  Rng rng(13);
  double worst = 0.0;
  for (int rep = 0; rep < 10000; ++rep) {
    const int t = 1 + static_cast<int>(rng.uniform_index(50));
    Vec x = rng.gaussian_vec(2);
    Vec eps = rng.gaussian_vec(2);
    LatentState down = ddim_step({x, t}, eps, s);
    Vec rec = recover_noise(x, down.x, t, s);
    worst = std::max(worst, norm(sub(rec, eps)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("degenerate transitions are refused") {
  NoiseSchedule s = make_schedule(5, 0.1, 0.2);
  s.alpha_bar[3] = s.alpha_bar[2];  // forced equal cumulative alphas
  CHECK_THROWS_AS(recover_noise(Vec{1.0}, Vec{1.0}, 3, s),
                  DegenerateTransitionError);
}

TEST_CASE("steps reject out-of-range times and mismatched dimensions") {
  NoiseSchedule s = make_schedule(10, 0.01, 0.2);
  Rng rng(14);
  Vec x = rng.gaussian_vec(2);
  Vec eps = rng.gaussian_vec(2);
  CHECK_THROWS_AS(ddim_step({x, 0}, eps, s), std::out_of_range);
  CHECK_THROWS_AS(ddim_step({x, 11}, eps, s), std::out_of_range);
  CHECK_THROWS_AS(ddim_invert_step({x, 10}, eps, s), std::out_of_range);
  CHECK_THROWS_AS(recover_noise(x, x, 0, s), std::out_of_range);
  CHECK_THROWS_AS(ddim_step({x, 5}, rng.gaussian_vec(3), s),
                  DimensionMismatchError);
  Rng noise(15);
  CHECK_THROWS_AS(ddpm_step({x, 0}, eps, s, noise), std::out_of_range);
}

TEST_SUITE_END();
