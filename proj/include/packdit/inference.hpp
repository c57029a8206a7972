#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "packdit/checkpoint.hpp"
#include "packdit/rng.hpp"

namespace packdit {

// One request drives any of the samplers; fields unused by a task are
// ignored. With eta = 0 every sampler is a pure function of (bundle, request).
struct SampleRequest {
  int steps = 50;
  double eta = 0.0;
  uint64_t seed = 0;
  int n_frames = 48;
  std::string caption;                   // sample_t2m
  std::optional<MotionSequence> motion;  // sample_m2t / sample_inpaint
  std::vector<bool> keep_mask;           // sample_inpaint, one flag per frame
  // Classifier-free-guidance scale for conditional chains: the applied
  // epsilon is eps_uncond + guidance * (eps_cond - eps_uncond). 1 means the
  // plain conditional prediction; values above 1 amplify the condition's pull,
  // which matters most near t = T where the conditional signal is weakest.
  double guidance = 1.0;
  // Debug switch: with the mutual blocks off, conditional sampling collapses
  // to the unconditional chain.
  bool disable_mutual = false;
  // Run the condition stack once instead of every reverse step. The condition
  // forward does not depend on the step, so outputs are bit-identical.
  bool cache_condition = false;
};

// Per-step sampler state, captured after each DDIM update.
struct StepTrace {
  int t_motion = -1, t_text = -1;  // timestep of the stored state
  MatF motion, text;               // token-space latents (empty when absent)
};
using TraceSink = std::vector<StepTrace>;

MotionSequence sample_uncond_motion(const Bundle& b, const SampleRequest& req,
                                    TraceSink* trace = nullptr);
MotionSequence sample_t2m(const Bundle& b, const SampleRequest& req,
                          TraceSink* trace = nullptr);
std::string sample_m2t(const Bundle& b, const SampleRequest& req,
                       TraceSink* trace = nullptr);
std::string sample_uncond_text(const Bundle& b, const SampleRequest& req,
                               TraceSink* trace = nullptr);
std::pair<MotionSequence, std::string> sample_joint(const Bundle& b,
                                                    const SampleRequest& req,
                                                    TraceSink* trace = nullptr);
// Reverse-process inpainting: after each DDIM update, kept frames are
// replaced by q_sample of the known frames at the new timestep; at t = 0 they
// are replaced exactly.
MotionSequence sample_inpaint(const Bundle& b, const SampleRequest& req,
                              TraceSink* trace = nullptr);

// Mask builders for the two completion tasks.
std::vector<bool> predict_mask(int n_frames, double keep_frac = 0.5);
std::vector<bool> inbetween_mask(int n_frames, double prefix_frac = 0.25,
                                 double suffix_frac = 0.25);

// Binary per-step latent dump ("PKTR", version-tagged).
void write_trace(const std::string& path, const TraceSink& trace);
TraceSink read_trace(const std::string& path);

}  // namespace packdit
