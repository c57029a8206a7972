#include "packdit/codec.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "packdit/io_util.hpp"
#include "packdit/optim.hpp"

namespace packdit {

int Vocab::id_of(const std::string& word) const {
  for (size_t i = 4; i < tokens.size(); ++i)
    if (tokens[i] == word) return static_cast<int>(i);
  return kUnk;
}

uint64_t Vocab::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens) {
    h = io::fnv1a_str(t, h);
    h = io::fnv1a("\x1f", 1, h);
  }
  return h;
}

Vocab Vocab::from_corpus(const std::vector<std::string>& captions) {
  std::set<std::string> words;
  for (const auto& c : captions) {
    std::istringstream ss(c);
    std::string w;
    while (ss >> w) {
      std::transform(w.begin(), w.end(), w.begin(), ::tolower);
      words.insert(w);
    }
  }
  Vocab v;
  v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
  v.tokens.insert(v.tokens.end(), words.begin(), words.end());
  return v;
}

CaptionTokens tokenize(const std::string& caption, const Vocab& vocab,
                       int max_text_tokens) {
  std::istringstream ss(caption);
  std::string w;
  CaptionTokens ids;
  ids.push_back(Vocab::kBos);
  while (ss >> w) {
    std::transform(w.begin(), w.end(), w.begin(), ::tolower);
    ids.push_back(vocab.id_of(w));
    if (static_cast<int>(ids.size()) > max_text_tokens - 1)
      throw ValidationError("tokenize: caption exceeds max_text_tokens");
  }
  ids.push_back(Vocab::kEos);
  return ids;
}

std::string detokenize(const CaptionTokens& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocab::kBos || id == Vocab::kPad) continue;
    if (id == Vocab::kEos) break;
    if (!out.empty()) out += ' ';
    out += (id >= 0 && id < vocab.size()) ? vocab.tokens[id] : "<unk>";
  }
  return out;
}

namespace {

// Teacher-forced inputs/targets padded to a fixed length.
struct DecoderSample {
  std::vector<int> inputs;    // BOS w1 ... (length L-1)
  std::vector<int> targets;   // w1 ... EOS PAD...
  std::vector<float> weights; // 1 up to and including EOS
};

DecoderSample decoder_sample(const CaptionTokens& ids, int L) {
  DecoderSample s;
  CaptionTokens padded(ids);
  padded.resize(L, Vocab::kPad);
  s.inputs.assign(padded.begin(), padded.end() - 1);
  s.targets.assign(padded.begin() + 1, padded.end());
  bool live = true;
  for (int t : s.targets) {
    s.weights.push_back(live ? 1.0f : 0.0f);
    if (t == Vocab::kEos) live = false;
  }
  return s;
}

double exact_match_through(const TextCodec<float>& codec,
                           const std::vector<std::string>& corpus,
                           bool through_projection) {
  int hits = 0;
  for (const auto& cap : corpus) {
    const auto ids = tokenize(cap, codec.vocab, codec.cfg.max_text_tokens);
    Mat<float> enc = encode(codec, ids);
    Mat<float> prefix = enc;
    if (through_projection)
      prefix = unproject_text(codec, project_text(codec, enc));
    if (decode(codec, prefix, codec.cfg.max_text_tokens) == cap) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

}  // namespace

CodecTrainReport train_codec(TextCodec<float>& codec,
                             const std::vector<std::string>& corpus, Rng& rng,
                             int max_steps_a, int max_steps_b) {
  if (corpus.empty()) throw ValidationError("train_codec: empty corpus");
  CodecTrainReport rep;
  const int L = codec.cfg.latent_tokens;

  // The caption grammar is closed, so large corpora repeat a small caption
  // set; training on the unique captions is equivalent and much faster.
  std::vector<std::string> uniq;
  for (const auto& cap : corpus)
    if (std::find(uniq.begin(), uniq.end(), cap) == uniq.end())
      uniq.push_back(cap);

  std::vector<CaptionTokens> toks;
  std::vector<DecoderSample> samples;
  for (const auto& cap : uniq) {
    toks.push_back(tokenize(cap, codec.vocab, codec.cfg.max_text_tokens));
    samples.push_back(decoder_sample(toks.back(), L));
  }

  // Which params belong to the projection (stage B) vs the codec (stage A).
  std::vector<uint8_t> is_proj(codec.params.count(), 0);
  std::vector<uint8_t> is_codec(codec.params.count(), 0);
  for (size_t i = 0; i < codec.params.count(); ++i) {
    const bool proj = codec.params.names[i].rfind("proj.", 0) == 0;
    is_proj[i] = proj;
    is_codec[i] = !proj;
  }

  // Stage A: encoder + decoder reconstruction.
  Adam opt;
  opt.lr = 1e-3;
  opt.init(codec.params);
  (void)rng;
  for (int step = 0; step < max_steps_a; ++step) {
    auto grads = codec.params.zero_grads();
    for (size_t i = 0; i < uniq.size(); ++i) {
      Tape<float> tp(&grads);
      const int enc = encode_node(tp, codec, toks[i]);
      const int logits = decoder_logits_node(tp, codec, enc, samples[i].inputs);
      const int loss =
          tp.cross_entropy_rows(logits, samples[i].targets, samples[i].weights);
      tp.backward(loss);
    }
    for (auto& g : grads) g /= static_cast<float>(uniq.size());
    opt.step(codec.params, grads, &is_codec);
    rep.stage_a_steps = step + 1;
    if ((step + 1) % 100 == 0 &&
        exact_match_through(codec, uniq, false) >= 0.999)
      break;
  }
  rep.stage_a_exact = exact_match_through(codec, uniq, false);

  // Stage B: freeze codec, train the projection bottleneck to reproduce the
  // encoder tokens.
  std::vector<Mat<float>> enc_outs;
  for (size_t i = 0; i < uniq.size(); ++i)
    enc_outs.push_back(encode(codec, toks[i]));

  // Latent-noise augmentation: the diffusion chain lands near, not on, a
  // caption latent, so the up-projection is trained to decode from a
  // neighborhood of each latent rather than the exact point.
  const float latent_noise = 0.1f;
  Adam optb;
  optb.lr = 1e-3;
  optb.init(codec.params);
  for (int step = 0; step < max_steps_b; ++step) {
    auto grads = codec.params.zero_grads();
    double loss_sum = 0;
    for (const auto& enc : enc_outs) {
      Tape<float> tp(&grads);
      const int x = tp.input(enc);
      const int z = project_down_node(tp, codec, x);
      Mat<float> jitter(tp.val(z).rows(), tp.val(z).cols());
      for (Eigen::Index i = 0; i < jitter.rows(); ++i)
        for (Eigen::Index j = 0; j < jitter.cols(); ++j)
          jitter(i, j) = latent_noise * static_cast<float>(rng.normal());
      const int rec =
          project_up_node(tp, codec, tp.add(z, tp.input(jitter)));
      const int loss = tp.mean_sq_diff(rec, x);
      loss_sum += tp.val(loss)(0, 0);
      tp.backward(loss);
    }
    for (auto& g : grads) g /= static_cast<float>(uniq.size());
    optb.step(codec.params, grads, &is_proj);
    rep.stage_b_steps = step + 1;
    if (loss_sum / static_cast<double>(uniq.size()) < 1e-4) break;
  }
  rep.stage_b_exact = exact_match_through(codec, uniq, true);

  // Freeze latent statistics over the corpus for diffusion standardization.
  const int P = codec.cfg.proj_dim;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(P), sq = Eigen::VectorXd::Zero(P);
  int64_t n = 0;
  for (const auto& enc : enc_outs) {
    Mat<float> lat = project_text(codec, enc);
    sum += lat.cast<double>().colwise().sum();
    sq += lat.cast<double>().array().square().colwise().sum().matrix().transpose();
    n += lat.rows();
  }
  codec.latent_mean = sum / static_cast<double>(n);
  Eigen::VectorXd var =
      sq / static_cast<double>(n) - codec.latent_mean.array().square().matrix();
  codec.latent_std = var.array().max(1e-8).sqrt();
  return rep;
}

}  // namespace packdit
