#pragma once

#include <string>
#include <vector>

#include "packdit/model.hpp"
#include "packdit/rng.hpp"
#include "packdit/tape.hpp"

namespace packdit {

// Closed toy vocabulary. Special tokens occupy fixed ids 0..3.
struct Vocab {
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3;
  std::vector<std::string> tokens;  // dense ids, specials first

  int size() const { return static_cast<int>(tokens.size()); }
  int id_of(const std::string& word) const;
  uint64_t hash() const;

  static Vocab from_corpus(const std::vector<std::string>& captions);
};

using CaptionTokens = std::vector<int>;  // BOS ... EOS [PAD suffix]

CaptionTokens tokenize(const std::string& caption, const Vocab& vocab,
                       int max_text_tokens);
std::string detokenize(const CaptionTokens& ids, const Vocab& vocab);

struct CodecConfig {
  int embed_dim = 64;      // encoder/decoder token dim
  int latent_tokens = 16;  // L_T, fixed text latent token count
  int proj_dim = 64;       // Dim_P
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int max_text_tokens = 16;
};

struct CodecBlockLayout {
  int wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2;
};

struct CodecLayout {
  int embed;  // encoder embedding, vocab x E
  std::vector<CodecBlockLayout> enc_blocks;
  int dec_embed;
  int dec_prefix_w, dec_prefix_b;
  std::vector<CodecBlockLayout> dec_blocks;
  int dec_out_w, dec_out_b;
  int pdown_w, pdown_b;                // projection down: E -> Dim_P, tanh
  int pup_w1, pup_b1, pup_w2, pup_b2;  // projection up: Dim_P -> E
};

template <typename S>
struct TextCodec {
  CodecConfig cfg;
  Vocab vocab;
  ParamStore<S> params;
  CodecLayout layout;
  // Per-channel statistics of projected latents; the text DiT diffuses over
  // standardized latents.
  Eigen::VectorXd latent_mean, latent_std;

  template <typename S2>
  TextCodec<S2> cast() const {
    TextCodec<S2> out;
    out.cfg = cfg;
    out.vocab = vocab;
    out.params = params.template cast<S2>();
    out.layout = layout;
    out.latent_mean = latent_mean;
    out.latent_std = latent_std;
    return out;
  }
};

template <typename S>
TextCodec<S> init_codec(const CodecConfig& cfg, const Vocab& vocab, Rng& rng);

// Tape-level pieces (used by training and by the inference wrappers).
template <typename S>
int encode_node(Tape<S>& tp, const TextCodec<S>& c, const CaptionTokens& ids);
template <typename S>
int project_down_node(Tape<S>& tp, const TextCodec<S>& c, int enc_tokens);
template <typename S>
int project_up_node(Tape<S>& tp, const TextCodec<S>& c, int latent_tokens);
// Logits over caption target positions given an L_T x E prefix.
template <typename S>
int decoder_logits_node(Tape<S>& tp, const TextCodec<S>& c, int prefix,
                        const std::vector<int>& input_ids);

// Inference wrappers (no gradients kept).
template <typename S>
Mat<S> encode(const TextCodec<S>& c, const CaptionTokens& ids);
template <typename S>
Mat<S> project_text(const TextCodec<S>& c, const Mat<S>& enc_tokens);
template <typename S>
Mat<S> unproject_text(const TextCodec<S>& c, const Mat<S>& latent_tokens);
template <typename S>
std::string decode(const TextCodec<S>& c, const Mat<S>& prefix, int max_len);

// Caption -> standardized diffusion latent (L_T x Dim_P) and back.
template <typename S>
Mat<S> caption_to_latent(const TextCodec<S>& c, const std::string& caption);
template <typename S>
std::string latent_to_caption(const TextCodec<S>& c, const Mat<S>& z);

struct CodecTrainReport {
  double stage_a_exact = 0;  // reconstruction exact-match after stage A
  double stage_b_exact = 0;  // after projection bottleneck training
  int stage_a_steps = 0;
  int stage_b_steps = 0;
};

// Stage A trains encoder+decoder as a reconstruction autoencoder; stage B
// freezes them and trains the projection to preserve reconstruction through
// the Dim_P bottleneck. Also freezes latent statistics.
CodecTrainReport train_codec(TextCodec<float>& codec,
                             const std::vector<std::string>& corpus, Rng& rng,
                             int max_steps_a = 3000, int max_steps_b = 2000);

// ---- template implementation ----

template <typename S>
TextCodec<S> init_codec(const CodecConfig& cfg, const Vocab& vocab, Rng& rng) {
  TextCodec<S> c;
  c.cfg = cfg;
  c.vocab = vocab;
  const int E = cfg.embed_dim, H = cfg.embed_dim * cfg.mlp_ratio;
  auto xavier = [&](int r, int co) {
    const double s = std::sqrt(2.0 / (r + co));
    Mat<S> v(r, co);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < co; ++j) v(i, j) = static_cast<S>(rng.normal() * s);
    return v;
  };
  auto zeros = [](int r, int co) { return Mat<S>::Zero(r, co); };
  auto add_block = [&](const std::string& p) {
    CodecBlockLayout b;
    b.wq = c.params.add(p + "attn.wq", xavier(E, E));
    b.bq = c.params.add(p + "attn.bq", zeros(1, E));
    b.wk = c.params.add(p + "attn.wk", xavier(E, E));
    b.bk = c.params.add(p + "attn.bk", zeros(1, E));
    b.wv = c.params.add(p + "attn.wv", xavier(E, E));
    b.bv = c.params.add(p + "attn.bv", zeros(1, E));
    b.wo = c.params.add(p + "attn.wo", xavier(E, E));
    b.bo = c.params.add(p + "attn.bo", zeros(1, E));
    b.w1 = c.params.add(p + "mlp.w1", xavier(E, H));
    b.b1 = c.params.add(p + "mlp.b1", zeros(1, H));
    b.w2 = c.params.add(p + "mlp.w2", xavier(H, E));
    b.b2 = c.params.add(p + "mlp.b2", zeros(1, E));
    return b;
  };

  c.layout.embed = c.params.add("codec.enc.embed", xavier(vocab.size(), E));
  for (int i = 0; i < cfg.depth; ++i)
    c.layout.enc_blocks.push_back(
        add_block("codec.enc.blk" + std::to_string(i) + "."));
  c.layout.dec_embed = c.params.add("codec.dec.embed", xavier(vocab.size(), E));
  c.layout.dec_prefix_w = c.params.add("codec.dec.prefix.w", xavier(E, E));
  c.layout.dec_prefix_b = c.params.add("codec.dec.prefix.b", zeros(1, E));
  for (int i = 0; i < cfg.depth; ++i)
    c.layout.dec_blocks.push_back(
        add_block("codec.dec.blk" + std::to_string(i) + "."));
  c.layout.dec_out_w = c.params.add("codec.dec.out.w", xavier(E, vocab.size()));
  c.layout.dec_out_b = c.params.add("codec.dec.out.b", zeros(1, vocab.size()));
  c.layout.pdown_w = c.params.add("proj.down.w", xavier(E, cfg.proj_dim));
  c.layout.pdown_b = c.params.add("proj.down.b", zeros(1, cfg.proj_dim));
  c.layout.pup_w1 = c.params.add("proj.up.w1", xavier(cfg.proj_dim, E));
  c.layout.pup_b1 = c.params.add("proj.up.b1", zeros(1, E));
  c.layout.pup_w2 = c.params.add("proj.up.w2", xavier(E, E));
  c.layout.pup_b2 = c.params.add("proj.up.b2", zeros(1, E));

  c.latent_mean = Eigen::VectorXd::Zero(cfg.proj_dim);
  c.latent_std = Eigen::VectorXd::Ones(cfg.proj_dim);
  return c;
}

namespace detail {

template <typename S>
int codec_block(Tape<S>& tp, const ParamStore<S>& ps,
                const CodecBlockLayout& bl, int x, int heads,
                std::optional<int> mask = std::nullopt) {
  int h = tp.layernorm_rows(x);
  int a = mha(tp, h, h, tp.param(ps, bl.wq), tp.param(ps, bl.bq),
              tp.param(ps, bl.wk), tp.param(ps, bl.bk), tp.param(ps, bl.wv),
              tp.param(ps, bl.bv), tp.param(ps, bl.wo), tp.param(ps, bl.bo),
              heads, mask);
  x = tp.add(x, a);
  int m = tp.layernorm_rows(x);
  int m1 = tp.gelu(
      tp.add_rowvec(tp.matmul(m, tp.param(ps, bl.w1)), tp.param(ps, bl.b1)));
  int m2 = tp.add_rowvec(tp.matmul(m1, tp.param(ps, bl.w2)),
                         tp.param(ps, bl.b2));
  return tp.add(x, m2);
}

}  // namespace detail

template <typename S>
int encode_node(Tape<S>& tp, const TextCodec<S>& c, const CaptionTokens& ids) {
  std::vector<int> padded(ids);
  padded.resize(c.cfg.latent_tokens, Vocab::kPad);
  const int emb = tp.param(c.params, c.layout.embed);
  int x = tp.gather_rows(emb, padded);
  x = tp.add(x, tp.input(detail::position_embedding<S>(c.cfg.latent_tokens,
                                                       c.cfg.embed_dim)));
  for (const auto& bl : c.layout.enc_blocks)
    x = detail::codec_block(tp, c.params, bl, x, c.cfg.heads);
  return tp.layernorm_rows(x);
}

template <typename S>
int project_down_node(Tape<S>& tp, const TextCodec<S>& c, int enc_tokens) {
  int y = tp.add_rowvec(tp.matmul(enc_tokens, tp.param(c.params, c.layout.pdown_w)),
                        tp.param(c.params, c.layout.pdown_b));
  return tp.tanh_op(y);
}

template <typename S>
int project_up_node(Tape<S>& tp, const TextCodec<S>& c, int latent_tokens) {
  int y = tp.add_rowvec(
      tp.matmul(latent_tokens, tp.param(c.params, c.layout.pup_w1)),
      tp.param(c.params, c.layout.pup_b1));
  y = tp.silu(y);
  return tp.add_rowvec(tp.matmul(y, tp.param(c.params, c.layout.pup_w2)),
                       tp.param(c.params, c.layout.pup_b2));
}

template <typename S>
int decoder_logits_node(Tape<S>& tp, const TextCodec<S>& c, int prefix,
                        const std::vector<int>& input_ids) {
  const int L = c.cfg.latent_tokens;
  const int n_in = static_cast<int>(input_ids.size());
  const int total = L + n_in;
  int pfx = tp.add_rowvec(
      tp.matmul(prefix, tp.param(c.params, c.layout.dec_prefix_w)),
      tp.param(c.params, c.layout.dec_prefix_b));
  int emb = tp.gather_rows(tp.param(c.params, c.layout.dec_embed), input_ids);
  int x = tp.vstack({pfx, emb});
  x = tp.add(x, tp.input(detail::position_embedding<S>(total, c.cfg.embed_dim)));

  // Prefix-LM mask: prefix positions attend within the prefix; caption
  // positions attend to the prefix and causally to earlier caption tokens.
  Mat<S> mask = Mat<S>::Zero(total, total);
  for (int i = 0; i < total; ++i)
    for (int j = 0; j < total; ++j)
      if (j >= L && j > i) mask(i, j) = static_cast<S>(-1e30);
  const int mask_id = tp.input(std::move(mask));

  for (const auto& bl : c.layout.dec_blocks)
    x = detail::codec_block(tp, c.params, bl, x, c.cfg.heads, mask_id);
  x = tp.layernorm_rows(x);
  int caption_part = tp.slice_rows(x, L, n_in);
  return tp.add_rowvec(
      tp.matmul(caption_part, tp.param(c.params, c.layout.dec_out_w)),
      tp.param(c.params, c.layout.dec_out_b));
}

template <typename S>
Mat<S> encode(const TextCodec<S>& c, const CaptionTokens& ids) {
  Tape<S> tp;
  return tp.val(encode_node(tp, c, ids));
}

template <typename S>
Mat<S> project_text(const TextCodec<S>& c, const Mat<S>& enc_tokens) {
  if (enc_tokens.cols() != c.cfg.embed_dim)
    throw ValidationError("project_text: encoder dim mismatch");
  Tape<S> tp;
  return tp.val(project_down_node(tp, c, tp.input(enc_tokens)));
}

template <typename S>
Mat<S> unproject_text(const TextCodec<S>& c, const Mat<S>& latent_tokens) {
  if (latent_tokens.cols() != c.cfg.proj_dim)
    throw ValidationError("unproject_text: latent dim mismatch");
  Tape<S> tp;
  return tp.val(project_up_node(tp, c, tp.input(latent_tokens)));
}

template <typename S>
std::string decode(const TextCodec<S>& c, const Mat<S>& prefix, int max_len) {
  std::vector<int> ids = {Vocab::kBos};
  std::vector<int> words;
  for (int step = 0; step < max_len; ++step) {
    Tape<S> tp;
    const int logits = decoder_logits_node(tp, c, tp.input(prefix), ids);
    const auto& z = tp.val(logits);
    int best = 0;
    z.row(z.rows() - 1).maxCoeff(&best);
    if (best == Vocab::kEos) break;
    words.push_back(best);
    ids.push_back(best);
  }
  CaptionTokens full;
  full.push_back(Vocab::kBos);
  for (int w : words) full.push_back(w);
  full.push_back(Vocab::kEos);
  return detokenize(full, c.vocab);
}

template <typename S>
Mat<S> caption_to_latent(const TextCodec<S>& c, const std::string& caption) {
  Tape<S> tp;
  const int enc = encode_node(tp, c, tokenize(caption, c.vocab, c.cfg.max_text_tokens));
  const Mat<S> lat = tp.val(project_down_node(tp, c, enc));
  Mat<S> z = lat;
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    z.col(j) = (z.col(j).array() - static_cast<S>(c.latent_mean(j))) /
               static_cast<S>(c.latent_std(j));
  return z;
}

template <typename S>
std::string latent_to_caption(const TextCodec<S>& c, const Mat<S>& z) {
  Mat<S> lat = z;
  for (Eigen::Index j = 0; j < lat.cols(); ++j)
    lat.col(j) = lat.col(j).array() * static_cast<S>(c.latent_std(j)) +
                 static_cast<S>(c.latent_mean(j));
  return decode(c, unproject_text(c, lat), c.cfg.max_text_tokens);
}

}  // namespace packdit
