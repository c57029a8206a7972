#include "packdit/schedule.hpp"

#include <cmath>

namespace packdit {

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::Linear ? "linear" : "cosine";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::Linear;
  if (s == "cosine") return ScheduleKind::Cosine;
  throw ConfigError("unknown schedule kind: " + s);
}

NoiseSchedule build_schedule(ScheduleKind kind, int T) {
  if (T < 2) throw ConfigError("build_schedule: T must be >= 2");
  NoiseSchedule s;
  s.kind = kind;
  s.T = T;
  s.beta.resize(T);
  if (kind == ScheduleKind::Linear) {
    const double lo = 1e-4, hi = 0.02;
    for (int i = 0; i < T; ++i)
      s.beta(i) = lo + (hi - lo) * static_cast<double>(i) / (T - 1);
  } else {
    const double sshift = 0.008;
    auto f = [&](double t) {
      const double x = (t / T + sshift) / (1.0 + sshift) * M_PI / 2.0;
      return std::cos(x) * std::cos(x);
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double ab = f(static_cast<double>(t)) / f0;
      double beta = 1.0 - ab / prev;
      beta = std::min(beta, 0.999);
      s.beta(t - 1) = beta;
      prev *= 1.0 - beta;
    }
  }
  s.alpha = 1.0 - s.beta.array();
  s.alpha_bar.resize(T);
  double acc = 1.0;
  for (int i = 0; i < T; ++i) {
    acc *= s.alpha(i);
    s.alpha_bar(i) = acc;
  }
  return s;
}

DiffusionLossTerms combine_losses(double loss_motion, double loss_text,
                                  double lambda) {
  if (loss_motion < 0 || loss_text < 0 || lambda < 0)
    throw ValidationError("combine_losses: inputs must be nonnegative");
  DiffusionLossTerms t;
  t.loss_motion = loss_motion;
  t.loss_text = loss_text;
  t.lambda = lambda;
  t.total = loss_motion + lambda * loss_text;
  return t;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1) throw ConfigError("ddim_timesteps: steps must be >= 1");
  steps = std::min(steps, T);
  std::vector<int> ts;
  ts.reserve(steps + 1);
  // Evenly spaced from T down to 0 inclusive, rounded to integers.
  for (int i = 0; i <= steps; ++i) {
    int t = static_cast<int>(std::llround(
        static_cast<double>(T) * (1.0 - static_cast<double>(i) / steps)));
    if (!ts.empty() && t >= ts.back()) t = ts.back() - 1;
    ts.push_back(std::max(t, 0));
  }
  ts.back() = 0;
  return ts;
}

}  // namespace packdit
