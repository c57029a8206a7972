#include "packdit/inference.hpp"

#include <cmath>

#include "packdit/io_util.hpp"
#include "packdit/schedule.hpp"

namespace packdit {

namespace {

// Post-self-attention activations of a condition stack run standalone at its
// given timestep. These are step-invariant, so callers may cache them.
std::vector<MatF> condition_ctx(const PackDiT<float>& m, const StackLayout& st,
                                const MatF& tokens, int t) {
  Tape<float> tp;
  std::vector<int> nodes;
  detail::run_stack_standalone(tp, m.params, st, m.cfg.heads, tokens, t,
                               &nodes, nullptr);
  std::vector<MatF> out;
  out.reserve(nodes.size());
  for (int n : nodes) out.push_back(tp.val(n));
  return out;
}

// Epsilon prediction for one stack, optionally cross-reading fixed context.
MatF predict_eps(const PackDiT<float>& m, const StackLayout& st, const MatF& x,
                 int t, const std::vector<MatF>* ctx) {
  Tape<float> tp;
  auto c = detail::stack_begin(tp, m.params, st, x, t, m.cfg.heads);
  for (int b = 0; b < m.cfg.depth; ++b) {
    detail::block_self(tp, m.params, c, b, nullptr);
    if (ctx)
      detail::block_cross(tp, m.params, c, b, tp.input((*ctx)[b]), nullptr);
    detail::block_mlp(tp, m.params, c, b);
  }
  return tp.val(detail::stack_final(tp, m.params, c));
}

// Replace kept frames inside the token grid with the given frame values.
void overwrite_frames(MatF& tokens, const MatF& frames,
                      const std::vector<bool>& mask, int patch, int dim) {
  for (size_t f = 0; f < mask.size(); ++f) {
    if (!mask[f]) continue;
    const int r = static_cast<int>(f) / patch;
    const int c0 = (static_cast<int>(f) % patch) * dim;
    tokens.block(r, c0, 1, dim) =
        frames.row(static_cast<Eigen::Index>(f));
  }
}

// Largest magnitude the implied clean sample may take during the reverse
// chain. Motion tokens and text latents are standardized, so values far
// outside this range are extrapolation artifacts: near t = T the 1/sqrt(abar)
// factor turns small epsilon errors into huge clean-sample estimates, and the
// chain diverges without the clamp.
constexpr float kLatentClip = 5.0f;

MatF clip_eps(const MatF& x, const MatF& eps, int t,
              const NoiseSchedule& sched) {
  const float a = static_cast<float>(std::sqrt(sched.abar(t)));
  const float s = static_cast<float>(std::sqrt(1.0 - sched.abar(t)));
  if (s == 0.0f) return eps;
  MatF x0 = (x - s * eps) / a;
  x0 = x0.cwiseMax(-kLatentClip).cwiseMin(kLatentClip);
  return (x - a * x0) / s;
}

bool any_kept(const std::vector<bool>& mask) {
  for (bool b : mask)
    if (b) return true;
  return false;
}

// Generic reverse chain over one side. cond_tokens, when given, is the other
// side's clean input (conditioned at t = 0 through the mutual blocks).
// known_frames/frame_mask implement inpainting in normalized frame space.
MatF reverse_chain(const Bundle& b, Side gen_side, int n_tokens,
                   const MatF* cond_tokens, const SampleRequest& req, Rng& rng,
                   TraceSink* trace, const MatF* known_frames = nullptr,
                   const std::vector<bool>* frame_mask = nullptr) {
  const PackDiT<float>& m = b.model;
  const StackLayout& gen_st =
      gen_side == Side::Motion ? m.layout.motion : m.layout.text;
  const StackLayout& cond_st =
      gen_side == Side::Motion ? m.layout.text : m.layout.motion;
  const NoiseSchedule sched = b.schedule();
  const int dim = gen_st.token_dim;
  const int patch = gen_side == Side::Motion ? m.cfg.patch_size : 1;
  const bool inpaint = known_frames && frame_mask && any_kept(*frame_mask);

  std::vector<MatF> cached_ctx;
  if (cond_tokens && req.cache_condition)
    cached_ctx = condition_ctx(m, cond_st, *cond_tokens, 0);

  MatF x = random_normal<float>(n_tokens, dim, rng);
  const auto ladder = ddim_timesteps(sched.T, req.steps);
  for (size_t i = 0; i + 1 < ladder.size(); ++i) {
    const int t = ladder[i], t_prev = ladder[i + 1];
    MatF eps;
    if (cond_tokens) {
      std::vector<MatF> ctx_now;
      const std::vector<MatF>* ctx = &cached_ctx;
      if (!req.cache_condition) {
        ctx_now = condition_ctx(m, cond_st, *cond_tokens, 0);
        ctx = &ctx_now;
      }
      eps = predict_eps(m, gen_st, x, t, ctx);
      if (req.guidance != 1.0) {
        const MatF eps_u = predict_eps(m, gen_st, x, t, nullptr);
        eps = eps_u + static_cast<float>(req.guidance) * (eps - eps_u);
      }
    } else {
      eps = predict_eps(m, gen_st, x, t, nullptr);
    }
    eps = clip_eps(x, eps, t, sched);
    MatF noise;
    if (req.eta > 0 && t_prev > 0)
      noise = random_normal<float>(n_tokens, dim, rng);
    x = ddim_step(x, eps, t, t_prev, req.eta, sched, noise);

    if (inpaint) {
      MatF known = *known_frames;
      if (t_prev > 0) {
        const MatF eps_k = random_normal<float>(
            static_cast<int>(known.rows()), static_cast<int>(known.cols()), rng);
        known = q_sample(known, t_prev, eps_k, sched);
      }
      overwrite_frames(x, known, *frame_mask, patch, dim / patch);
    }
    if (trace) {
      StepTrace st;
      if (gen_side == Side::Motion) {
        st.t_motion = t_prev;
        st.motion = x;
      } else {
        st.t_text = t_prev;
        st.text = x;
      }
      trace->push_back(std::move(st));
    }
  }
  return x;
}

// Projects a generated toy sequence onto the schema's consistency manifold:
// positions are re-derived by integrating the velocity channels from the
// generated first frame, and heading/speed are recomputed from the result.
// Velocity channels are small-scale, so their denormalized error is far below
// the position channels' error; integrating them removes frame-level jitter
// that the reverse chain cannot eliminate.
void reconcile_toy(MotionSequence& seq) {
  if (!seq.schema || seq.schema->name != "toy") return;
  const int n = seq.n_frames();
  for (int t = 1; t < n; ++t) {
    seq.data(t, 0) = seq.data(t - 1, 0) + seq.data(t, 2);
    seq.data(t, 1) = seq.data(t - 1, 1) + seq.data(t, 3);
  }
  for (int t = 0; t < n; ++t) {
    const float vx = seq.data(t, 2), vy = seq.data(t, 3);
    seq.data(t, 4) = std::atan2(vy, vx);
    seq.data(t, 5) = std::hypot(vx, vy);
  }
}

MotionSequence tokens_to_motion(const Bundle& b, const MatF& tokens,
                                int n_frames) {
  TokenGrid grid;
  grid.tokens = tokens;
  grid.patch_size = b.model.cfg.patch_size;
  grid.origin_frames = n_frames;
  grid.pad_mask.assign(tokens.rows() * grid.patch_size, false);
  for (int f = 0; f < n_frames; ++f) grid.pad_mask[f] = true;
  const MotionSchema* schema = schema_by_name(b.schema_name);
  if (!schema) throw ConfigError("unknown schema: " + b.schema_name);
  MotionSequence out = denormalize(unpatchify(grid, *schema), b.norm);
  reconcile_toy(out);
  return out;
}

int motion_token_count(const Bundle& b, int n_frames) {
  if (n_frames < 1) throw ValidationError("n_frames must be positive");
  const int patch = b.model.cfg.patch_size;
  const int n = (n_frames + patch - 1) / patch;
  if (n > b.model.cfg.max_motion_tokens)
    throw ValidationError("n_frames exceeds model capacity");
  return n;
}

MatF motion_condition_tokens(const Bundle& b, const MotionSequence& seq) {
  return patchify(normalize(seq, b.norm), b.model.cfg.patch_size).tokens;
}

}  // namespace

MotionSequence sample_uncond_motion(const Bundle& b, const SampleRequest& req,
                                    TraceSink* trace) {
  Rng rng(req.seed);
  const MatF x = reverse_chain(b, Side::Motion,
                               motion_token_count(b, req.n_frames), nullptr,
                               req, rng, trace);
  return tokens_to_motion(b, x, req.n_frames);
}

MotionSequence sample_t2m(const Bundle& b, const SampleRequest& req,
                          TraceSink* trace) {
  if (req.caption.empty()) throw ValidationError("sample_t2m: caption required");
  Rng rng(req.seed);
  const MatF z = caption_to_latent(b.codec, req.caption);
  const MatF* cond = req.disable_mutual ? nullptr : &z;
  const MatF x = reverse_chain(b, Side::Motion,
                               motion_token_count(b, req.n_frames), cond, req,
                               rng, trace);
  return tokens_to_motion(b, x, req.n_frames);
}

std::string sample_m2t(const Bundle& b, const SampleRequest& req,
                       TraceSink* trace) {
  if (!req.motion) throw ValidationError("sample_m2t: motion required");
  Rng rng(req.seed);
  const MatF cond = motion_condition_tokens(b, *req.motion);
  const MatF* cp = req.disable_mutual ? nullptr : &cond;
  const MatF z = reverse_chain(b, Side::Text, b.codec.cfg.latent_tokens, cp,
                               req, rng, trace);
  return latent_to_caption(b.codec, z);
}

std::string sample_uncond_text(const Bundle& b, const SampleRequest& req,
                               TraceSink* trace) {
  Rng rng(req.seed);
  const MatF z = reverse_chain(b, Side::Text, b.codec.cfg.latent_tokens,
                               nullptr, req, rng, trace);
  return latent_to_caption(b.codec, z);
}

std::pair<MotionSequence, std::string> sample_joint(const Bundle& b,
                                                    const SampleRequest& req,
                                                    TraceSink* trace) {
  Rng rng(req.seed);
  const PackDiT<float>& m = b.model;
  const NoiseSchedule sched = b.schedule();
  const int nm = motion_token_count(b, req.n_frames);
  const int nt = b.codec.cfg.latent_tokens;

  MatF xm = random_normal<float>(nm, m.layout.motion.token_dim, rng);
  MatF xt = random_normal<float>(nt, m.layout.text.token_dim, rng);
  const auto ladder = ddim_timesteps(sched.T, req.steps);
  for (size_t i = 0; i + 1 < ladder.size(); ++i) {
    const int t = ladder[i], t_prev = ladder[i + 1];
    Tape<float> tp;
    const auto out =
        forward_pair(tp, m, &xm, t, &xt, t, PairMode::JointLockstep);
    const MatF em = clip_eps(xm, tp.val(out.motion_eps), t, sched);
    const MatF et = clip_eps(xt, tp.val(out.text_eps), t, sched);
    MatF nm_noise, nt_noise;
    if (req.eta > 0 && t_prev > 0) {
      nm_noise = random_normal<float>(static_cast<int>(xm.rows()),
                                      static_cast<int>(xm.cols()), rng);
      nt_noise = random_normal<float>(static_cast<int>(xt.rows()),
                                      static_cast<int>(xt.cols()), rng);
    }
    xm = ddim_step(xm, em, t, t_prev, req.eta, sched, nm_noise);
    xt = ddim_step(xt, et, t, t_prev, req.eta, sched, nt_noise);
    if (trace) trace->push_back({t_prev, t_prev, xm, xt});
  }
  return {tokens_to_motion(b, xm, req.n_frames), latent_to_caption(b.codec, xt)};
}

MotionSequence sample_inpaint(const Bundle& b, const SampleRequest& req,
                              TraceSink* trace) {
  if (!req.motion) throw ValidationError("sample_inpaint: motion required");
  const MotionSequence& known = *req.motion;
  if (static_cast<int>(req.keep_mask.size()) != known.n_frames())
    throw ValidationError("sample_inpaint: keep_mask length mismatch");
  Rng rng(req.seed);
  const MotionSequence norm_known = normalize(known, b.norm);
  const int n_frames = known.n_frames();

  std::optional<MatF> caption_latent;
  if (!req.caption.empty() && !req.disable_mutual)
    caption_latent = caption_to_latent(b.codec, req.caption);

  MatF x = reverse_chain(b, Side::Motion, motion_token_count(b, n_frames),
                         caption_latent ? &*caption_latent : nullptr, req, rng,
                         trace, &norm_known.data, &req.keep_mask);
  MotionSequence out = tokens_to_motion(b, x, n_frames);
  // Hard constraint: kept frames equal the input bit-exactly, immune to
  // normalization round-trip error.
  for (int f = 0; f < n_frames; ++f)
    if (req.keep_mask[f]) out.data.row(f) = known.data.row(f);
  return out;
}

std::vector<bool> predict_mask(int n_frames, double keep_frac) {
  std::vector<bool> m(n_frames, false);
  const int k = static_cast<int>(std::lround(n_frames * keep_frac));
  for (int i = 0; i < k && i < n_frames; ++i) m[i] = true;
  return m;
}

std::vector<bool> inbetween_mask(int n_frames, double prefix_frac,
                                 double suffix_frac) {
  std::vector<bool> m(n_frames, false);
  const int p = static_cast<int>(std::lround(n_frames * prefix_frac));
  const int s = static_cast<int>(std::lround(n_frames * suffix_frac));
  for (int i = 0; i < p && i < n_frames; ++i) m[i] = true;
  for (int i = 0; i < s && i < n_frames; ++i) m[n_frames - 1 - i] = true;
  return m;
}

void write_trace(const std::string& path, const TraceSink& trace) {
  auto os = io::open_out(path);
  os.write("PKTR", 4);
  io::write_u32(os, 1);
  io::write_u32(os, static_cast<uint32_t>(trace.size()));
  auto write_mat = [&](const MatF& m) {
    io::write_u32(os, static_cast<uint32_t>(m.rows()));
    io::write_u32(os, static_cast<uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) io::write_f32(os, m(i, j));
  };
  for (const auto& st : trace) {
    io::write_u32(os, static_cast<uint32_t>(st.t_motion));
    io::write_u32(os, static_cast<uint32_t>(st.t_text));
    write_mat(st.motion);
    write_mat(st.text);
  }
}

TraceSink read_trace(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "PKTR", path);
  if (io::read_u32(is) != 1)
    throw std::runtime_error("unsupported trace version: " + path);
  const uint32_t n = io::read_u32(is);
  auto read_mat = [&] {
    const uint32_t r = io::read_u32(is), c = io::read_u32(is);
    MatF m(r, c);
    for (uint32_t i = 0; i < r; ++i)
      for (uint32_t j = 0; j < c; ++j) m(i, j) = io::read_f32(is);
    return m;
  };
  TraceSink out;
  for (uint32_t i = 0; i < n; ++i) {
    StepTrace st;
    st.t_motion = static_cast<int>(io::read_u32(is));
    st.t_text = static_cast<int>(io::read_u32(is));
    st.motion = read_mat();
    st.text = read_mat();
    out.push_back(std::move(st));
  }
  if (!is) throw std::runtime_error("truncated " + path);
  return out;
}

}  // namespace packdit
