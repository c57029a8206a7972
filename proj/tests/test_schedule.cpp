#include <doctest.h>

#include "packdit/rng.hpp"
#include "packdit/schedule.hpp"

using namespace packdit;

TEST_CASE("schedule monotonicity for six (kind, T) combos") {
  for (const auto kind : {ScheduleKind::Linear, ScheduleKind::Cosine}) {
    for (const int T : {10, 100, 1000}) {
      const auto s = build_schedule(kind, T);
      CHECK(s.abar(0) == 1.0);
      for (int t = 1; t <= T; ++t) {
        CHECK(s.beta(t - 1) > 0.0);
        CHECK(s.beta(t - 1) <= 0.999);
        CHECK(s.abar(t) < s.abar(t - 1));
        CHECK(s.abar(t) > 0.0);
      }
    }
  }
}

TEST_CASE("linear schedule endpoints") {
  const auto s = build_schedule(ScheduleKind::Linear, 1000);
  CHECK(s.beta(0) == doctest::Approx(1e-4).epsilon(1e-9));
  CHECK(s.beta(999) == doctest::Approx(0.02).epsilon(1e-9));
}

TEST_CASE("ddim one-step inversion recovers x0") {
  Rng rng(42);
  for (const auto kind : {ScheduleKind::Linear, ScheduleKind::Cosine}) {
    const auto s = build_schedule(kind, 1000);
    const Mat<double> x0 = random_normal<double>(5, 8, rng);
    const Mat<double> eps = random_normal<double>(5, 8, rng);
    for (int t = 1; t <= s.T; ++t) {
      if (s.abar(t) < 1e-4) continue;
      const Mat<double> xt = q_sample(x0, t, eps, s);
      const Mat<double> rec = ddim_step(xt, eps, t, 0, 0.0, s, Mat<double>());
      const double rel = (rec - x0).norm() / x0.norm();
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("ddim ladder shape") {
  const auto ts = ddim_timesteps(1000, 50);
  CHECK(ts.front() == 1000);
  CHECK(ts.back() == 0);
  CHECK(ts.size() == 51);
  for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  const auto tiny = ddim_timesteps(10, 50);
  CHECK(tiny.front() == 10);
  CHECK(tiny.back() == 0);
}

TEST_CASE("ddim step validation") {
  const auto s = build_schedule(ScheduleKind::Cosine, 100);
  const Mat<float> x = Mat<float>::Zero(2, 2);
  CHECK_THROWS_AS(
      (void)ddim_step(x, x, 5, 5, 0.0, s, Mat<float>()), ValidationError);
  CHECK_THROWS_AS(
      (void)ddim_step(x, x, 101, 0, 0.0, s, Mat<float>()), ValidationError);
  CHECK_THROWS_AS((void)q_sample(x, 0, x, s), ValidationError);
}

TEST_CASE("q_sample interpolates signal and noise") {
  const auto s = build_schedule(ScheduleKind::Cosine, 1000);
  Mat<double> x0(1, 1), eps(1, 1);
  x0(0, 0) = 1.0;
  eps(0, 0) = -1.0;
  const auto xt = q_sample(x0, 500, eps, s);
  const double expect =
      std::sqrt(s.abar(500)) - std::sqrt(1.0 - s.abar(500));
  CHECK(xt(0, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("combine_losses applies lambda") {
  const auto t = combine_losses(2.0, 3.0, 0.5);
  CHECK(t.total == doctest::Approx(3.5));
  CHECK(t.loss_motion == 2.0);
  CHECK(t.loss_text == 3.0);
}
