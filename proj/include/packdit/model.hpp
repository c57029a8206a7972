#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "packdit/motion.hpp"
#include "packdit/rng.hpp"
#include "packdit/tape.hpp"

namespace packdit {

struct DiTConfig {
  int depth = 4;
  int width = 128;
  int heads = 4;
  int motion_token_dim = 8;   // patch_size * schema.total_dim
  int text_latent_dim = 64;   // Dim_P
  int max_motion_tokens = 64;
  int max_text_tokens = 16;
  int patch_size = 1;
  int mlp_ratio = 4;

  int head_dim() const { return width / heads; }
  void validate() const {
    if (width % heads != 0) throw ConfigError("width must be divisible by heads");
    if (depth < 1 || width < 1 || heads < 1 || patch_size < 1)
      throw ConfigError("DiTConfig fields must be positive");
  }
};

// The "nano" desk-scale default (toy schema, patch 1).
DiTConfig nano_config();

struct BlockLayout {
  int wq, bq, wk, bk, wv, bv, wo, bo;          // self-attention
  int cwq, cbq, cwk, cbk, cwv, cbv, cwo, cbo;  // mutual cross-attention
  int w1, b1, w2, b2;                          // feed-forward
  int modw, modb;                              // adaLN modulation (6 * width)
};

struct StackLayout {
  int in_w, in_b;
  int t_w1, t_b1, t_w2, t_b2;  // timestep embedding MLP
  std::vector<BlockLayout> blocks;
  int fmodw, fmodb, fw, fb;  // final adaLN + output head
  int token_dim = 0;
};

struct ModelLayout {
  StackLayout motion, text;
};

enum class Side { Motion, Text };

template <typename S>
struct PackDiT {
  DiTConfig cfg;
  ParamStore<S> params;
  ModelLayout layout;
  std::vector<Side> param_side;  // freeze-rule ownership per parameter

  template <typename S2>
  PackDiT<S2> cast() const {
    PackDiT<S2> out;
    out.cfg = cfg;
    out.params = params.template cast<S2>();
    out.layout = layout;
    out.param_side = param_side;
    return out;
  }
};

enum class PairMode {
  Independent,    // mutual blocks disabled, stacks fully decoupled
  JointLockstep,  // symmetric mutual read, both sides active
  CondMotion,     // generate motion; text is the condition (run standalone)
  CondText,       // generate text; motion is the condition
};

template <typename S>
struct ForwardOut {
  int motion_eps = -1;  // tape node ids; -1 when that side is absent
  int text_eps = -1;
};

namespace detail {

inline Eigen::MatrixXd sinusoid_rowd(double pos, int dim) {
  Eigen::MatrixXd v(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    v(0, i) = std::cos(pos * freq);
    v(0, half + i) = std::sin(pos * freq);
  }
  if (dim % 2) v(0, dim - 1) = 0.0;
  return v;
}

template <typename S>
Mat<S> timestep_embedding(int t, int dim) {
  return sinusoid_rowd(static_cast<double>(t), dim).cast<S>();
}

template <typename S>
Mat<S> position_embedding(int n, int dim) {
  Mat<S> m(n, dim);
  for (int p = 0; p < n; ++p)
    m.row(p) = sinusoid_rowd(static_cast<double>(p), dim).cast<S>().row(0);
  return m;
}

// Multi-head attention; kv_in == q_in gives self-attention. An optional
// additive mask node (e.g. causal) is applied before the softmax. attn_probe,
// when set, collects the softmax node ids.
template <typename S>
int mha(Tape<S>& tp, int q_in, int kv_in, int wq, int bq, int wk, int bk,
        int wv, int bv, int wo, int bo, int heads,
        std::optional<int> mask = std::nullopt,
        std::vector<int>* attn_probe = nullptr) {
  const int width = static_cast<int>(tp.val(wq).cols());
  const int dk = width / heads;
  const int q = tp.add_rowvec(tp.matmul(q_in, wq), bq);
  const int k = tp.add_rowvec(tp.matmul(kv_in, wk), bk);
  const int v = tp.add_rowvec(tp.matmul(kv_in, wv), bv);
  std::vector<int> outs;
  outs.reserve(heads);
  const S inv = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
  for (int h = 0; h < heads; ++h) {
    const int qh = tp.slice_cols(q, h * dk, dk);
    const int kh = tp.slice_cols(k, h * dk, dk);
    const int vh = tp.slice_cols(v, h * dk, dk);
    int logits = tp.scale(tp.matmul_nt(qh, kh), inv);
    if (mask) logits = tp.add(logits, *mask);
    const int attn = tp.softmax_rows(logits);
    if (attn_probe) attn_probe->push_back(attn);
    outs.push_back(tp.matmul(attn, vh));
  }
  const int concat = heads == 1 ? outs[0] : tp.hstack(outs);
  return tp.add_rowvec(tp.matmul(concat, wo), bo);
}

}  // namespace detail

template <typename S>
PackDiT<S> init_packdit(const DiTConfig& cfg, Rng& rng);

// Forward over one or both stacks. Token matrices are per-item (no batch
// dimension); timesteps condition via adaLN. Returns eps-prediction node ids.
// attn_probe, when given, collects every attention softmax node.
template <typename S>
ForwardOut<S> forward_pair(Tape<S>& tp, const PackDiT<S>& model,
                           const std::type_identity_t<Mat<S>>* motion_tokens,
                           int t_motion,
                           const std::type_identity_t<Mat<S>>* text_tokens,
                           int t_text, PairMode mode,
                           std::vector<int>* attn_probe = nullptr);

// ---- implementation ----

template <typename S>
PackDiT<S> init_packdit(const DiTConfig& cfg, Rng& rng) {
  cfg.validate();
  PackDiT<S> m;
  m.cfg = cfg;
  const int w = cfg.width;
  const int hidden = cfg.width * cfg.mlp_ratio;

  auto xavier = [&](int rows, int cols) {
    const double s = std::sqrt(2.0 / (rows + cols));
    Mat<S> v(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) v(i, j) = static_cast<S>(rng.normal() * s);
    return v;
  };
  auto zeros = [&](int rows, int cols) { return Mat<S>::Zero(rows, cols); };

  auto build_stack = [&](const std::string& prefix, int token_dim, Side side) {
    StackLayout st;
    st.token_dim = token_dim;
    auto add = [&](const std::string& n, Mat<S> v) {
      m.param_side.push_back(side);
      return m.params.add(prefix + n, std::move(v));
    };
    st.in_w = add("in.w", xavier(token_dim, w));
    st.in_b = add("in.b", zeros(1, w));
    st.t_w1 = add("tmlp.w1", xavier(w, w));
    st.t_b1 = add("tmlp.b1", zeros(1, w));
    st.t_w2 = add("tmlp.w2", xavier(w, w));
    st.t_b2 = add("tmlp.b2", zeros(1, w));
    for (int b = 0; b < cfg.depth; ++b) {
      const std::string bp = "blk" + std::to_string(b) + ".";
      BlockLayout bl;
      bl.wq = add(bp + "attn.wq", xavier(w, w));
      bl.bq = add(bp + "attn.bq", zeros(1, w));
      bl.wk = add(bp + "attn.wk", xavier(w, w));
      bl.bk = add(bp + "attn.bk", zeros(1, w));
      bl.wv = add(bp + "attn.wv", xavier(w, w));
      bl.bv = add(bp + "attn.bv", zeros(1, w));
      bl.wo = add(bp + "attn.wo", xavier(w, w));
      bl.bo = add(bp + "attn.bo", zeros(1, w));
      bl.cwq = add(bp + "cross.wq", xavier(w, w));
      bl.cbq = add(bp + "cross.bq", zeros(1, w));
      bl.cwk = add(bp + "cross.wk", xavier(w, w));
      bl.cbk = add(bp + "cross.bk", zeros(1, w));
      bl.cwv = add(bp + "cross.wv", xavier(w, w));
      bl.cbv = add(bp + "cross.bv", zeros(1, w));
      // Zero-init output projection: mutual coupling starts as identity.
      bl.cwo = add(bp + "cross.wo", zeros(w, w));
      bl.cbo = add(bp + "cross.bo", zeros(1, w));
      bl.w1 = add(bp + "mlp.w1", xavier(w, hidden));
      bl.b1 = add(bp + "mlp.b1", zeros(1, hidden));
      bl.w2 = add(bp + "mlp.w2", xavier(hidden, w));
      bl.b2 = add(bp + "mlp.b2", zeros(1, w));
      // adaLN-zero: modulation starts at identity (scale/shift/gate all 0).
      bl.modw = add(bp + "mod.w", zeros(w, 6 * w));
      bl.modb = add(bp + "mod.b", zeros(1, 6 * w));
      st.blocks.push_back(bl);
    }
    st.fmodw = add("final.mod.w", zeros(w, 2 * w));
    st.fmodb = add("final.mod.b", zeros(1, 2 * w));
    st.fw = add("final.w", zeros(w, token_dim));
    st.fb = add("final.b", zeros(1, token_dim));
    return st;
  };

  m.layout.motion = build_stack("motion.", cfg.motion_token_dim, Side::Motion);
  m.layout.text = build_stack("text.", cfg.text_latent_dim, Side::Text);
  return m;
}

namespace detail {

template <typename S>
struct StackCtx {
  const StackLayout* st = nullptr;
  int heads = 0;
  int x = -1;       // current stream node
  int msel = -1;    // silu(timestep conditioning vector)
  std::vector<std::array<int, 6>> mods;  // per block: s1,h1,g1,s2,h2,g2
};

template <typename S>
StackCtx<S> stack_begin(Tape<S>& tp, const ParamStore<S>& ps,
                        const StackLayout& st, const Mat<S>& tokens, int t,
                        int heads) {
  StackCtx<S> c;
  c.st = &st;
  c.heads = heads;
  const int w = static_cast<int>(ps.values[st.in_b].cols());
  const int in_w = tp.param(ps, st.in_w);
  const int in_b = tp.param(ps, st.in_b);
  const int tok = tp.input(tokens);
  int x = tp.add_rowvec(tp.matmul(tok, in_w), in_b);
  const int pos = tp.input(position_embedding<S>(static_cast<int>(tokens.rows()), w));
  c.x = tp.add(x, pos);

  const int temb = tp.input(timestep_embedding<S>(t, w));
  const int h1 = tp.silu(tp.add_rowvec(
      tp.matmul(temb, tp.param(ps, st.t_w1)), tp.param(ps, st.t_b1)));
  const int cvec = tp.add_rowvec(tp.matmul(h1, tp.param(ps, st.t_w2)),
                                 tp.param(ps, st.t_b2));
  c.msel = tp.silu(cvec);

  for (const auto& bl : st.blocks) {
    const int mods = tp.add_rowvec(tp.matmul(c.msel, tp.param(ps, bl.modw)),
                                   tp.param(ps, bl.modb));
    std::array<int, 6> sl;
    for (int i = 0; i < 6; ++i) sl[i] = tp.slice_cols(mods, i * w, w);
    c.mods.push_back(sl);
  }
  return c;
}

template <typename S>
void block_self(Tape<S>& tp, const ParamStore<S>& ps, StackCtx<S>& c, int b,
                std::vector<int>* probe) {
  const BlockLayout& bl = c.st->blocks[b];
  const auto& md = c.mods[b];
  const int h = tp.modulate(tp.layernorm_rows(c.x), md[0], md[1]);
  const int a = mha(tp, h, h, tp.param(ps, bl.wq), tp.param(ps, bl.bq),
                    tp.param(ps, bl.wk), tp.param(ps, bl.bk),
                    tp.param(ps, bl.wv), tp.param(ps, bl.bv),
                    tp.param(ps, bl.wo), tp.param(ps, bl.bo), c.heads,
                    std::nullopt, probe);
  c.x = tp.add(c.x, tp.mul_rowvec(a, md[2]));
}

// Residual mutual cross-attention reading `ctx` (the other side's
// post-self-attention stream). Output projection is zero-initialized.
template <typename S>
void block_cross(Tape<S>& tp, const ParamStore<S>& ps, StackCtx<S>& c, int b,
                 int ctx, std::vector<int>* probe) {
  const BlockLayout& bl = c.st->blocks[b];
  const int qin = tp.layernorm_rows(c.x);
  const int kvin = tp.layernorm_rows(ctx);
  const int a = mha(tp, qin, kvin, tp.param(ps, bl.cwq), tp.param(ps, bl.cbq),
                    tp.param(ps, bl.cwk), tp.param(ps, bl.cbk),
                    tp.param(ps, bl.cwv), tp.param(ps, bl.cbv),
                    tp.param(ps, bl.cwo), tp.param(ps, bl.cbo), c.heads,
                    std::nullopt, probe);
  c.x = tp.add(c.x, a);
}

template <typename S>
void block_mlp(Tape<S>& tp, const ParamStore<S>& ps, StackCtx<S>& c, int b) {
  const BlockLayout& bl = c.st->blocks[b];
  const auto& md = c.mods[b];
  const int h = tp.modulate(tp.layernorm_rows(c.x), md[3], md[4]);
  const int m1 = tp.gelu(tp.add_rowvec(tp.matmul(h, tp.param(ps, bl.w1)),
                                       tp.param(ps, bl.b1)));
  const int m2 = tp.add_rowvec(tp.matmul(m1, tp.param(ps, bl.w2)),
                               tp.param(ps, bl.b2));
  c.x = tp.add(c.x, tp.mul_rowvec(m2, md[5]));
}

template <typename S>
int stack_final(Tape<S>& tp, const ParamStore<S>& ps, StackCtx<S>& c) {
  const StackLayout& st = *c.st;
  const int w = static_cast<int>(tp.val(c.msel).cols());
  const int mods = tp.add_rowvec(tp.matmul(c.msel, tp.param(ps, st.fmodw)),
                                 tp.param(ps, st.fmodb));
  const int sf = tp.slice_cols(mods, 0, w);
  const int hf = tp.slice_cols(mods, w, w);
  const int h = tp.modulate(tp.layernorm_rows(c.x), sf, hf);
  return tp.add_rowvec(tp.matmul(h, tp.param(ps, st.fw)), tp.param(ps, st.fb));
}

// Standalone run (mutual sublayers skipped), recording post-self-attention
// activations for use as cross-attention context.
template <typename S>
int run_stack_standalone(Tape<S>& tp, const ParamStore<S>& ps,
                         const StackLayout& st, int heads, const Mat<S>& tokens,
                         int t, std::vector<int>* post_self,
                         std::vector<int>* probe) {
  auto c = stack_begin(tp, ps, st, tokens, t, heads);
  for (size_t b = 0; b < st.blocks.size(); ++b) {
    block_self(tp, ps, c, static_cast<int>(b), probe);
    if (post_self) post_self->push_back(c.x);
    block_mlp(tp, ps, c, static_cast<int>(b));
  }
  return stack_final(tp, ps, c);
}

}  // namespace detail

template <typename S>
ForwardOut<S> forward_pair(Tape<S>& tp, const PackDiT<S>& model,
                           const std::type_identity_t<Mat<S>>* motion_tokens,
                           int t_motion,
                           const std::type_identity_t<Mat<S>>* text_tokens,
                           int t_text, PairMode mode,
                           std::vector<int>* attn_probe) {
  using namespace detail;
  const DiTConfig& cfg = model.cfg;
  const ParamStore<S>& ps = model.params;
  ForwardOut<S> out;

  if (motion_tokens) {
    if (motion_tokens->rows() > cfg.max_motion_tokens)
      throw ValidationError("forward_pair: motion token overflow");
    if (motion_tokens->cols() != model.layout.motion.token_dim)
      throw ValidationError("forward_pair: motion token dim mismatch");
    if (t_motion < 0) throw ValidationError("forward_pair: negative timestep");
  }
  if (text_tokens) {
    if (text_tokens->rows() > cfg.max_text_tokens)
      throw ValidationError("forward_pair: text token overflow");
    if (text_tokens->cols() != model.layout.text.token_dim)
      throw ValidationError("forward_pair: text token dim mismatch");
    if (t_text < 0) throw ValidationError("forward_pair: negative timestep");
  }
  if (!motion_tokens && !text_tokens)
    throw ValidationError("forward_pair: no inputs");

  const bool single = !motion_tokens || !text_tokens;
  if (single || mode == PairMode::Independent) {
    if (motion_tokens)
      out.motion_eps =
          run_stack_standalone(tp, ps, model.layout.motion, cfg.heads,
                               *motion_tokens, t_motion, nullptr, attn_probe);
    if (text_tokens)
      out.text_eps =
          run_stack_standalone(tp, ps, model.layout.text, cfg.heads,
                               *text_tokens, t_text, nullptr, attn_probe);
    return out;
  }

  if (mode == PairMode::JointLockstep) {
    auto cm = stack_begin(tp, ps, model.layout.motion, *motion_tokens, t_motion,
                          cfg.heads);
    auto ct = stack_begin(tp, ps, model.layout.text, *text_tokens, t_text,
                          cfg.heads);
    for (int b = 0; b < cfg.depth; ++b) {
      block_self(tp, ps, cm, b, attn_probe);
      block_self(tp, ps, ct, b, attn_probe);
      // Symmetric read: both mutual updates consume the pre-update streams.
      const int am = cm.x, at = ct.x;
      block_cross(tp, ps, cm, b, at, attn_probe);
      block_cross(tp, ps, ct, b, am, attn_probe);
      block_mlp(tp, ps, cm, b);
      block_mlp(tp, ps, ct, b);
    }
    out.motion_eps = stack_final(tp, ps, cm);
    out.text_eps = stack_final(tp, ps, ct);
    return out;
  }

  // Conditional: condition stack runs standalone (its own mutual sublayers
  // skipped); the generating stack cross-reads its per-block activations.
  const bool gen_motion = (mode == PairMode::CondMotion);
  const StackLayout& cond_st = gen_motion ? model.layout.text : model.layout.motion;
  const StackLayout& gen_st = gen_motion ? model.layout.motion : model.layout.text;
  const Mat<S>& cond_tok = gen_motion ? *text_tokens : *motion_tokens;
  const Mat<S>& gen_tok = gen_motion ? *motion_tokens : *text_tokens;
  const int cond_t = gen_motion ? t_text : t_motion;
  const int gen_t = gen_motion ? t_motion : t_text;

  std::vector<int> ctx;
  const int cond_eps = run_stack_standalone(tp, ps, cond_st, cfg.heads,
                                            cond_tok, cond_t, &ctx, attn_probe);
  auto cg = stack_begin(tp, ps, gen_st, gen_tok, gen_t, cfg.heads);
  for (int b = 0; b < cfg.depth; ++b) {
    block_self(tp, ps, cg, b, attn_probe);
    block_cross(tp, ps, cg, b, ctx[b], attn_probe);
    block_mlp(tp, ps, cg, b);
  }
  const int gen_eps = stack_final(tp, ps, cg);
  if (gen_motion) {
    out.motion_eps = gen_eps;
    out.text_eps = cond_eps;
  } else {
    out.text_eps = gen_eps;
    out.motion_eps = cond_eps;
  }
  return out;
}

}  // namespace packdit
