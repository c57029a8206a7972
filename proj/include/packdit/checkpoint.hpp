#pragma once

#include <string>

#include "packdit/codec.hpp"
#include "packdit/model.hpp"
#include "packdit/motion.hpp"
#include "packdit/optim.hpp"
#include "packdit/schedule.hpp"

namespace packdit {

// Everything needed to sample: model weights, text codec, normalization and
// schedule parameters. Serialized as a self-describing PKCK file.
struct Bundle {
  std::string schema_name = "toy";
  ScheduleKind sched_kind = ScheduleKind::Cosine;
  int T = 1000;
  PackDiT<float> model;
  TextCodec<float> codec;
  NormStats norm;

  NoiseSchedule schedule() const { return build_schedule(sched_kind, T); }
};

void write_checkpoint(const std::string& path, const Bundle& b);
Bundle read_checkpoint(const std::string& path);

// Mid-training snapshot: bundle weights plus optimizer moments, RNG state and
// loop counters, restored bit-exactly for resumable training.
struct TrainSnapshot {
  Adam opt;
  int64_t global_step = 0;
  int stage_index = 0;
  int64_t step_in_stage = 0;
  std::array<uint64_t, 4> rng_state{};
  // Model-weight EMA accumulator (see kEmaDecay in training.hpp).
  std::vector<MatF> ema;
  int64_t ema_steps = 0;
};

void write_train_state(const std::string& path, const Bundle& b,
                       const TrainSnapshot& s);
TrainSnapshot read_train_state(const std::string& path, Bundle& b);

}  // namespace packdit
