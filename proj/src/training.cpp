#include "packdit/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "packdit/io_util.hpp"

namespace packdit {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::T2M: return "t2m";
    case TaskKind::M2T: return "m2t";
    case TaskKind::UncondMotion: return "uncond_motion";
    case TaskKind::UncondText: return "uncond_text";
    case TaskKind::Joint: return "joint";
  }
  return "?";
}

std::string to_string(StageKind s) {
  switch (s) {
    case StageKind::Uncond: return "uncond";
    case StageKind::JointGen: return "joint";
    case StageKind::T2M: return "t2m";
    case StageKind::M2T: return "m2t";
    case StageKind::Mixed: return "mixed";
  }
  return "?";
}

StageKind stage_kind_from_string(const std::string& s) {
  if (s == "uncond") return StageKind::Uncond;
  if (s == "joint") return StageKind::JointGen;
  if (s == "t2m") return StageKind::T2M;
  if (s == "m2t") return StageKind::M2T;
  if (s == "mixed") return StageKind::Mixed;
  throw ConfigError("unknown stage: " + s);
}

void StageConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("bad stage config");
  if (stage == StageKind::Mixed) {
    double sum = 0;
    for (double p : task_probs) {
      if (p < 0) throw ConfigError("negative task probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("task_probs must sum to 1");
  }
}

std::vector<uint8_t> update_mask_for(const PackDiT<float>& model, TaskKind task) {
  std::vector<uint8_t> mask(model.params.count(), 1);
  if (task == TaskKind::T2M || task == TaskKind::M2T) {
    const Side frozen = task == TaskKind::T2M ? Side::Text : Side::Motion;
    for (size_t i = 0; i < mask.size(); ++i)
      if (model.param_side[i] == frozen) mask[i] = 0;
  }
  return mask;
}

TrainingData prepare_training_data(const ToySplit& split,
                                   const TextCodec<float>& codec,
                                   const NormStats& norm, int patch_size) {
  TrainingData d;
  for (size_t i = 0; i < split.motions.size(); ++i) {
    const auto grid = patchify(normalize(split.motions[i], norm), patch_size);
    d.motion_tokens.push_back(grid.tokens);
    d.text_latents.push_back(caption_to_latent(codec, split.captions[i]));
  }
  return d;
}

Trainer::Trainer(Bundle& bundle, const TrainingData& data, Rng rng)
    : bundle_(bundle),
      data_(data),
      sched_(bundle.schedule()),
      rng_(rng) {
  opt_.init(bundle_.model.params);
  ema_ = bundle_.model.params.zero_grads();
}

std::vector<MatF> Trainer::ema_params() const {
  if (ema_steps_ == 0) return bundle_.model.params.values;
  // The accumulator starts at zero, so divide out the (1 - d^t) mass to get
  // an unbiased average even for short runs.
  const float corr = static_cast<float>(
      1.0 / (1.0 - std::pow(kEmaDecay, static_cast<double>(ema_steps_))));
  std::vector<MatF> out = ema_;
  for (auto& m : out) m *= corr;
  return out;
}

DiffusionLossTerms Trainer::run_step(const std::vector<BatchEntry<float>>& batch,
                                     double lambda, TaskKind task, double lr) {
  auto grads = bundle_.model.params.zero_grads();
  auto terms = batch_loss_backward(bundle_.model, batch, lambda, &grads);
  apply_freeze(bundle_.model, task, grads);
  const auto mask = update_mask_for(bundle_.model, task);
  opt_.lr = lr;
  opt_.step(bundle_.model.params, grads, &mask);
  const float d = static_cast<float>(kEmaDecay);
  for (size_t i = 0; i < ema_.size(); ++i)
    ema_[i] = d * ema_[i] + (1.0f - d) * bundle_.model.params.values[i];
  ++ema_steps_;
  return terms;
}

DiffusionLossTerms Trainer::step_uncond(const std::vector<int>& motion_idx,
                                        const std::vector<int>& text_idx,
                                        double lambda, double lr) {
  if (motion_idx.empty() && text_idx.empty())
    throw ValidationError("step_uncond: empty batch");
  const size_t n = std::max(motion_idx.size(), text_idx.size());
  std::vector<BatchEntry<float>> batch;
  last_t_m_.clear();
  last_t_t_.clear();
  for (size_t k = 0; k < n; ++k) {
    BatchEntry<float> e;
    e.mode = PairMode::Independent;
    if (k < motion_idx.size()) {
      const MatF& x0 = data_.motion_tokens[motion_idx[k]];
      e.t_motion = static_cast<int>(rng_.uniform_int(1, sched_.T));
      e.motion_target = random_normal<float>(
          static_cast<int>(x0.rows()), static_cast<int>(x0.cols()), rng_);
      e.motion_in = q_sample(x0, e.t_motion, e.motion_target, sched_);
      last_t_m_.push_back(e.t_motion);
    }
    if (k < text_idx.size()) {
      const MatF& x0 = data_.text_latents[text_idx[k]];
      e.t_text = static_cast<int>(rng_.uniform_int(1, sched_.T));
      e.text_target = random_normal<float>(
          static_cast<int>(x0.rows()), static_cast<int>(x0.cols()), rng_);
      e.text_in = q_sample(x0, e.t_text, e.text_target, sched_);
      last_t_t_.push_back(e.t_text);
    }
    batch.push_back(std::move(e));
  }
  const TaskKind task = motion_idx.empty()  ? TaskKind::UncondText
                        : text_idx.empty()  ? TaskKind::UncondMotion
                                            : TaskKind::Joint;  // both updated
  return run_step(batch, lambda, task, lr);
}

DiffusionLossTerms Trainer::step_joint(const std::vector<int>& pair_idx,
                                       double lambda, double lr) {
  if (pair_idx.empty()) throw ValidationError("step_joint: empty batch");
  std::vector<BatchEntry<float>> batch;
  last_t_m_.clear();
  last_t_t_.clear();
  for (int i : pair_idx) {
    BatchEntry<float> e;
    e.mode = PairMode::JointLockstep;
    const int t = static_cast<int>(rng_.uniform_int(1, sched_.T));
    e.t_motion = e.t_text = t;
    const MatF& m0 = data_.motion_tokens[i];
    const MatF& x0 = data_.text_latents[i];
    e.motion_target = random_normal<float>(
        static_cast<int>(m0.rows()), static_cast<int>(m0.cols()), rng_);
    e.motion_in = q_sample(m0, t, e.motion_target, sched_);
    e.text_target = random_normal<float>(
        static_cast<int>(x0.rows()), static_cast<int>(x0.cols()), rng_);
    e.text_in = q_sample(x0, t, e.text_target, sched_);
    last_t_m_.push_back(t);
    last_t_t_.push_back(t);
    batch.push_back(std::move(e));
  }
  return run_step(batch, lambda, TaskKind::Joint, lr);
}

DiffusionLossTerms Trainer::step_conditional(const std::vector<int>& pair_idx,
                                             TaskKind direction, double lr) {
  if (direction != TaskKind::T2M && direction != TaskKind::M2T)
    throw ValidationError("step_conditional: direction must be T2M or M2T");
  if (pair_idx.empty()) throw ValidationError("step_conditional: empty batch");
  std::vector<BatchEntry<float>> batch;
  last_t_m_.clear();
  last_t_t_.clear();
  for (int i : pair_idx) {
    BatchEntry<float> e;
    int t;
    if (direction == TaskKind::M2T) {
      // Near t = T the noised text latent carries almost no caption signal, so
      // the clean motion condition is the only route to the target; yet the
      // epsilon objective scales that information by sqrt(abar/(1-abar)),
      // which vanishes there. Oversample the top of the schedule and weight
      // those entries toward x0-scale MSE so the text stack actually learns
      // to read the motion stream where it matters most for sampling.
      const int hi = (sched_.T * 7) / 10;
      t = rng_.uniform() < 0.5
              ? static_cast<int>(rng_.uniform_int(hi, sched_.T))
              : static_cast<int>(rng_.uniform_int(1, sched_.T));
      const double ab = sched_.abar(t);
      e.weight = static_cast<float>(std::clamp((1.0 - ab) / ab, 1.0, 25.0));
    } else {
      t = static_cast<int>(rng_.uniform_int(1, sched_.T));
    }
    if (direction == TaskKind::T2M) {
      e.mode = PairMode::CondMotion;
      const MatF& m0 = data_.motion_tokens[i];
      e.t_motion = t;
      e.motion_target = random_normal<float>(
          static_cast<int>(m0.rows()), static_cast<int>(m0.cols()), rng_);
      e.motion_in = q_sample(m0, t, e.motion_target, sched_);
      e.text_in = data_.text_latents[i];  // clean, timestep 0
      e.t_text = 0;
      last_t_m_.push_back(t);
    } else {
      e.mode = PairMode::CondText;
      const MatF& x0 = data_.text_latents[i];
      e.t_text = t;
      e.text_target = random_normal<float>(
          static_cast<int>(x0.rows()), static_cast<int>(x0.cols()), rng_);
      e.text_in = q_sample(x0, t, e.text_target, sched_);
      e.motion_in = data_.motion_tokens[i];
      e.t_motion = 0;
      last_t_t_.push_back(t);
    }
    batch.push_back(std::move(e));
  }
  if (direction == TaskKind::M2T) {
    // Keep the effective learning rate comparable across tasks by scaling the
    // per-entry weights back to batch mean 1.
    double wsum = 0;
    for (const auto& e : batch) wsum += e.weight;
    const float scale = static_cast<float>(batch.size() / wsum);
    for (auto& e : batch) e.weight *= scale;
  }
  return run_step(batch, 0.0, direction, lr);
}

TaskKind Trainer::draw_task(const std::array<double, 5>& probs) {
  const double u = rng_.uniform();
  double acc = 0;
  for (int i = 0; i < 5; ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<TaskKind>(i);
  }
  return TaskKind::Joint;
}

DiffusionLossTerms Trainer::step_mixed(const std::vector<int>& pair_idx,
                                       const StageConfig& cfg,
                                       TaskKind* chosen) {
  const TaskKind task = draw_task(cfg.task_probs);
  if (chosen) *chosen = task;
  switch (task) {
    case TaskKind::T2M:
    case TaskKind::M2T:
      return step_conditional(pair_idx, task, cfg.learning_rate);
    case TaskKind::UncondMotion:
      return step_uncond(pair_idx, {}, cfg.lambda, cfg.learning_rate);
    case TaskKind::UncondText:
      return step_uncond({}, pair_idx, cfg.lambda, cfg.learning_rate);
    case TaskKind::Joint:
      return step_joint(pair_idx, cfg.lambda, cfg.learning_rate);
  }
  throw std::logic_error("unreachable");
}

namespace {

std::vector<int> shuffled_indices(size_t n, Rng& rng) {
  std::vector<int> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  for (size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
  return idx;
}

uint64_t epoch_seed(uint64_t seed, int stage, int epoch) {
  uint64_t h = io::fnv1a(&seed, sizeof(seed));
  h = io::fnv1a(&stage, sizeof(stage), h);
  h = io::fnv1a(&epoch, sizeof(epoch), h);
  return h;
}

}  // namespace

std::vector<StageConfig> recipe(const std::string& name) {
  auto mk = [](StageKind k, int epochs, int batch, double lr) {
    StageConfig c;
    c.stage = k;
    c.epochs = epochs;
    c.batch_size = batch;
    c.learning_rate = lr;
    return c;
  };
  if (name == "desk")
    return {mk(StageKind::Uncond, 6, 32, 3e-4), mk(StageKind::Mixed, 36, 32, 3e-4),
            mk(StageKind::T2M, 18, 32, 3e-4)};
  if (name == "paper")
    return {mk(StageKind::Uncond, 10, 128, 1e-4),
            mk(StageKind::Mixed, 200, 128, 1e-4),
            mk(StageKind::T2M, 300, 128, 1e-4)};
  throw ConfigError("unknown recipe: " + name);
}

void run_training(Bundle& bundle, const TrainingData& data,
                  const std::vector<StageConfig>& stages,
                  const std::string& out_dir, uint64_t seed,
                  std::vector<TrainLogEntry>* log, bool quiet,
                  const std::string& resume_state, int64_t stop_after_steps) {
  for (const auto& s : stages) s.validate();
  fs::create_directories(out_dir);

  TrainSnapshot snap;
  if (!resume_state.empty()) snap = read_train_state(resume_state, bundle);
  Trainer trainer(bundle, data, Rng(seed));
  if (!resume_state.empty()) {
    trainer.optimizer() = snap.opt;
    trainer.rng().set_state(snap.rng_state);
    if (snap.ema.size() != bundle.model.params.count())
      throw std::runtime_error("EMA state mismatch in " + resume_state);
    trainer.ema_state() = snap.ema;
    trainer.ema_steps() = snap.ema_steps;
  }

  // Stage and final checkpoints publish the averaged weights; the raw
  // training weights stay in the bundle (and the train state) for resume.
  const auto write_published = [&](const std::string& path) {
    Bundle pub = bundle;
    pub.model.params.values = trainer.ema_params();
    write_checkpoint(path, pub);
  };

  std::ofstream log_os(out_dir + "/train_log.jsonl", std::ios::app);
  const size_t n_items = data.motion_tokens.size();

  for (int si = snap.stage_index; si < static_cast<int>(stages.size()); ++si) {
    const StageConfig& cfg = stages[si];
    const int batches_per_epoch =
        std::max<int>(1, static_cast<int>(n_items) / cfg.batch_size);
    const int64_t stage_steps =
        static_cast<int64_t>(cfg.epochs) * batches_per_epoch;

    for (int64_t step = (si == snap.stage_index ? snap.step_in_stage : 0);
         step < stage_steps; ++step) {
      const int epoch = static_cast<int>(step / batches_per_epoch);
      const int b = static_cast<int>(step % batches_per_epoch);
      // Data order comes from a dedicated stream so a mid-stage resume can
      // recompute it without disturbing the step RNG.
      Rng order_rng(epoch_seed(seed, si, epoch));
      const auto order = shuffled_indices(n_items, order_rng);
      std::vector<int> batch(order.begin() + b * cfg.batch_size,
                             order.begin() + (b + 1) * cfg.batch_size);

      DiffusionLossTerms terms;
      TaskKind task = TaskKind::Joint;
      switch (cfg.stage) {
        case StageKind::Uncond: {
          // Unpaired: text pool order drawn independently.
          Rng text_rng(epoch_seed(seed ^ 0x5555aaaaULL, si, epoch));
          const auto torder = shuffled_indices(n_items, text_rng);
          std::vector<int> tbatch(torder.begin() + b * cfg.batch_size,
                                  torder.begin() + (b + 1) * cfg.batch_size);
          terms = trainer.step_uncond(batch, tbatch, cfg.lambda,
                                      cfg.learning_rate);
          task = TaskKind::UncondMotion;
          break;
        }
        case StageKind::JointGen:
          terms = trainer.step_joint(batch, cfg.lambda, cfg.learning_rate);
          task = TaskKind::Joint;
          break;
        case StageKind::T2M:
          terms = trainer.step_conditional(batch, TaskKind::T2M,
                                           cfg.learning_rate);
          task = TaskKind::T2M;
          break;
        case StageKind::M2T:
          terms = trainer.step_conditional(batch, TaskKind::M2T,
                                           cfg.learning_rate);
          task = TaskKind::M2T;
          break;
        case StageKind::Mixed:
          terms = trainer.step_mixed(batch, cfg, &task);
          break;
      }

      ++snap.global_step;
      if (log)
        log->push_back({snap.global_step, to_string(cfg.stage), to_string(task),
                        terms.loss_motion, terms.loss_text, terms.total});
      json j = {{"step", snap.global_step},
                {"stage", to_string(cfg.stage)},
                {"task", to_string(task)},
                {"loss_motion", terms.loss_motion},
                {"loss_text", terms.loss_text},
                {"total", terms.total}};
      log_os << j.dump() << "\n";
      if (!quiet && snap.global_step % 50 == 0)
        std::cerr << "step " << snap.global_step << " stage "
                  << to_string(cfg.stage) << " total " << terms.total << "\n";

      if (stop_after_steps > 0 && snap.global_step >= stop_after_steps) {
        snap.stage_index = si;
        snap.step_in_stage = step + 1;
        snap.opt = trainer.optimizer();
        snap.rng_state = trainer.rng().state();
        snap.ema = trainer.ema_state();
        snap.ema_steps = trainer.ema_steps();
        write_train_state(out_dir + "/train_state.pkts", bundle, snap);
        return;
      }
    }
    snap.step_in_stage = 0;
    write_published(out_dir + "/stage_" + std::to_string(si) + "_" +
                    to_string(cfg.stage) + ".pkck");
  }
  snap.stage_index = static_cast<int>(stages.size());
  snap.opt = trainer.optimizer();
  snap.rng_state = trainer.rng().state();
  snap.ema = trainer.ema_state();
  snap.ema_steps = trainer.ema_steps();
  write_train_state(out_dir + "/train_state.pkts", bundle, snap);
  // The bundle is left holding the published weights once training completes.
  bundle.model.params.values = trainer.ema_params();
  write_checkpoint(out_dir + "/final.pkck", bundle);
}

}  // namespace packdit
