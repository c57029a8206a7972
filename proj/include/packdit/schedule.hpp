#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "packdit/motion.hpp"
#include "packdit/rng.hpp"
#include "packdit/tape.hpp"

namespace packdit {

enum class ScheduleKind { Linear, Cosine };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

// beta/alpha/alpha_bar tables, 1-indexed by timestep t in [1, T].
// alpha_bar(0) == 1 by convention so DDIM can step to t_prev = 0.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::Cosine;
  int T = 1000;
  Eigen::VectorXd beta;       // size T, beta[i] is beta_{i+1}
  Eigen::VectorXd alpha;      // 1 - beta
  Eigen::VectorXd alpha_bar;  // cumulative product

  double abar(int t) const { return t == 0 ? 1.0 : alpha_bar(t - 1); }
};

// linear: beta in [1e-4, 0.02]; cosine: Nichol-Dhariwal squared-cosine with
// s = 0.008 and beta clipped to <= 0.999.
NoiseSchedule build_schedule(ScheduleKind kind, int T);

struct DiffusionLossTerms {
  double loss_motion = 0;
  double loss_text = 0;
  double lambda = 1.0;
  double total = 0;
};

DiffusionLossTerms combine_losses(double loss_motion, double loss_text,
                                  double lambda);

// Closed-form forward draw sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
template <typename Derived>
auto q_sample(const Eigen::MatrixBase<Derived>& x0, int t,
              const Eigen::MatrixBase<Derived>& eps,
              const NoiseSchedule& sched) {
  using S = typename Derived::Scalar;
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw ValidationError("q_sample: shape mismatch");
  if (t < 1 || t > sched.T) throw ValidationError("q_sample: t out of range");
  const S a = static_cast<S>(std::sqrt(sched.abar(t)));
  const S b = static_cast<S>(std::sqrt(1.0 - sched.abar(t)));
  return (a * x0 + b * eps).eval();
}

// Mean squared error over all entries.
template <typename Derived>
double epsilon_loss(const Eigen::MatrixBase<Derived>& pred,
                    const Eigen::MatrixBase<Derived>& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw ValidationError("epsilon_loss: shape mismatch");
  return (pred - truth).template cast<double>().squaredNorm() /
         static_cast<double>(pred.size());
}

// One DDIM update from t to t_prev. noise may be empty when eta == 0.
template <typename S>
Mat<S> ddim_step(const Mat<S>& x_t, const Mat<S>& eps_pred, int t, int t_prev,
                 double eta, const NoiseSchedule& sched, const Mat<S>& noise) {
  if (t <= t_prev || t_prev < 0 || t > sched.T)
    throw ValidationError("ddim_step: require T >= t > t_prev >= 0");
  const double ab_t = sched.abar(t);
  const double ab_p = sched.abar(t_prev);
  Mat<S> x0_hat =
      (x_t - static_cast<S>(std::sqrt(1.0 - ab_t)) * eps_pred) /
      static_cast<S>(std::sqrt(ab_t));
  const double sigma =
      eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
  Mat<S> out = static_cast<S>(std::sqrt(ab_p)) * x0_hat +
               static_cast<S>(std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma))) *
                   eps_pred;
  if (sigma > 0.0) {
    if (noise.rows() != x_t.rows() || noise.cols() != x_t.cols())
      throw ValidationError("ddim_step: noise shape mismatch");
    out += static_cast<S>(sigma) * noise;
  }
  return out;
}

// Evenly strided timestep ladder T = t_0 > t_1 > ... > t_n = 0.
std::vector<int> ddim_timesteps(int T, int steps);

template <typename S>
Mat<S> random_normal(int rows, int cols, Rng& rng) {
  Mat<S> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = static_cast<S>(rng.normal());
  return m;
}

}  // namespace packdit
