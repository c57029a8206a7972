#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <string>
#include <type_traits>
#include <vector>

#include "packdit/checkpoint.hpp"
#include "packdit/model.hpp"
#include "packdit/optim.hpp"
#include "packdit/schedule.hpp"
#include "packdit/toyset.hpp"

namespace packdit {

enum class TaskKind { T2M, M2T, UncondMotion, UncondText, Joint };
enum class StageKind { Uncond, JointGen, T2M, M2T, Mixed };

std::string to_string(TaskKind t);
std::string to_string(StageKind s);
StageKind stage_kind_from_string(const std::string& s);

struct StageConfig {
  StageKind stage = StageKind::Uncond;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double lambda = 1.0;
  // Mixed stage only; order matches TaskKind.
  std::array<double, 5> task_probs = {0.25, 0.25, 0.125, 0.125, 0.25};

  void validate() const;
};

// One forward/loss unit. Empty matrices mean "side absent"; an empty target
// means "no loss on that side" (condition inputs).
template <typename S>
struct BatchEntry {
  Mat<S> motion_in, text_in;
  int t_motion = 0, t_text = 0;
  Mat<S> motion_target, text_target;
  PairMode mode = PairMode::Independent;
  // Per-entry loss scale (gradient only; reported losses stay unweighted).
  S weight = S(1);
};

// Mean stage loss over the batch; gradients of
// mean_i (mse_motion_i + lambda * mse_text_i) accumulate into grad_sink when
// given. Condition-side parameters do receive flow-through gradients here;
// the frozen-side rule is applied separately (apply_freeze).
template <typename S>
DiffusionLossTerms batch_loss_backward(const PackDiT<S>& model,
                                       const std::vector<BatchEntry<S>>& batch,
                                       double lambda,
                                       std::type_identity_t<std::vector<Mat<S>>>*
                                           grad_sink) {
  DiffusionLossTerms terms;
  terms.lambda = lambda;
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw ValidationError("batch_loss_backward: empty batch");
  double lm_sum = 0, lt_sum = 0;
  for (const auto& e : batch) {
    Tape<S> tp(grad_sink);
    const Mat<S>* mp = e.motion_in.size() ? &e.motion_in : nullptr;
    const Mat<S>* xp = e.text_in.size() ? &e.text_in : nullptr;
    auto out = forward_pair(tp, model, mp, e.t_motion, xp, e.t_text, e.mode);
    int loss = -1;
    if (e.motion_target.size()) {
      const int lmn = tp.mean_sq_diff(out.motion_eps, tp.input(e.motion_target));
      lm_sum += tp.val(lmn)(0, 0);
      loss = lmn;
    }
    if (e.text_target.size()) {
      const int ltn = tp.mean_sq_diff(out.text_eps, tp.input(e.text_target));
      lt_sum += tp.val(ltn)(0, 0);
      const int lt_scaled = tp.scale(ltn, static_cast<S>(lambda));
      loss = loss >= 0 ? tp.add(loss, lt_scaled) : lt_scaled;
    }
    if (loss < 0) throw ValidationError("batch entry has no loss target");
    if (grad_sink) {
      if (e.weight != S(1)) loss = tp.scale(loss, e.weight);
      tp.backward(loss);
    }
  }
  if (grad_sink)
    for (auto& g : *grad_sink) g /= static_cast<S>(n);
  terms.loss_motion = lm_sum / n;
  terms.loss_text = lt_sum / n;
  terms.total = terms.loss_motion + lambda * terms.loss_text;
  return terms;
}

// Parameters updated by a task (frozen-side rule of the conditional stages).
std::vector<uint8_t> update_mask_for(const PackDiT<float>& model, TaskKind task);

template <typename S>
void apply_freeze(const PackDiT<S>& model, TaskKind task,
                  std::vector<Mat<S>>& grads) {
  if (task != TaskKind::T2M && task != TaskKind::M2T) return;
  const Side frozen = task == TaskKind::T2M ? Side::Text : Side::Motion;
  for (size_t i = 0; i < grads.size(); ++i)
    if (model.param_side[i] == frozen) grads[i].setZero();
}

// Pre-tokenized training set: normalized motion token grids and standardized
// text latents, paired by index.
struct TrainingData {
  std::vector<MatF> motion_tokens;
  std::vector<MatF> text_latents;
};

TrainingData prepare_training_data(const ToySplit& split,
                                   const TextCodec<float>& codec,
                                   const NormStats& norm, int patch_size);

struct TrainLogEntry {
  int64_t step = 0;
  std::string stage, task;
  double loss_motion = 0, loss_text = 0, total = 0;
};

// Decay of the exponential moving average kept over model weights during
// training. Checkpoints publish the bias-corrected EMA weights; the raw
// weights (and the EMA accumulator) live in the resumable train state.
// Sampling from averaged weights is standard diffusion practice and, at this
// scale, it is what keeps the generated mode mixture stable instead of
// following the per-step drift of the raw weights.
constexpr double kEmaDecay = 0.998;

// Single-stage stepper; owns the optimizer schedule for one model.
class Trainer {
 public:
  Trainer(Bundle& bundle, const TrainingData& data, Rng rng);

  // Alg. 1: independent timesteps, mutual blocks disabled, unpaired batches.
  DiffusionLossTerms step_uncond(const std::vector<int>& motion_idx,
                                 const std::vector<int>& text_idx,
                                 double lambda, double lr);
  // Alg. 2: shared timestep, mutual enabled, both sides noised and updated.
  DiffusionLossTerms step_joint(const std::vector<int>& pair_idx, double lambda,
                                double lr);
  // Alg. 3: generating side noised; condition side clean at t = 0; frozen
  // side untouched.
  DiffusionLossTerms step_conditional(const std::vector<int>& pair_idx,
                                      TaskKind direction, double lr);
  // Alg. 4: per-step task draw.
  DiffusionLossTerms step_mixed(const std::vector<int>& pair_idx,
                                const StageConfig& cfg, TaskKind* chosen);

  TaskKind draw_task(const std::array<double, 5>& probs);

  Rng& rng() { return rng_; }
  Adam& optimizer() { return opt_; }
  const NoiseSchedule& schedule() const { return sched_; }

  // EMA accumulator state (resume plumbing) and the bias-corrected weights
  // published in checkpoints. With zero steps the raw weights are returned.
  std::vector<MatF>& ema_state() { return ema_; }
  int64_t& ema_steps() { return ema_steps_; }
  std::vector<MatF> ema_params() const;

  // Last drawn per-item timesteps (test probes).
  const std::vector<int>& last_t_motion() const { return last_t_m_; }
  const std::vector<int>& last_t_text() const { return last_t_t_; }

 private:
  DiffusionLossTerms run_step(const std::vector<BatchEntry<float>>& batch,
                              double lambda, TaskKind task, double lr);

  Bundle& bundle_;
  const TrainingData& data_;
  NoiseSchedule sched_;
  Adam opt_;
  Rng rng_;
  std::vector<MatF> ema_;
  int64_t ema_steps_ = 0;
  std::vector<int> last_t_m_, last_t_t_;

  friend struct TrainerAccess;
};

// Executes stages in order; checkpoints after each stage into
// out_dir/stage_<n>_<name>.pkck and appends line-delimited loss records to
// out_dir/train_log.jsonl. Resumable from a train-state snapshot.
void run_training(Bundle& bundle, const TrainingData& data,
                  const std::vector<StageConfig>& stages,
                  const std::string& out_dir, uint64_t seed,
                  std::vector<TrainLogEntry>* log = nullptr, bool quiet = true,
                  const std::string& resume_state = "",
                  int64_t stop_after_steps = -1);

// Built-in stage recipes. "desk" fits the toy set on a CPU budget; "paper"
// mirrors the published schedule (10/200/300 epochs).
std::vector<StageConfig> recipe(const std::string& name);

}  // namespace packdit
