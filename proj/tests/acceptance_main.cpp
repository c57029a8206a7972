// Acceptance harness: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criterion names can be passed as arguments to run a
// subset, e.g. "acceptance gradcheck metrics".

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "packdit/checkpoint.hpp"
#include "packdit/inference.hpp"
#include "packdit/io_util.hpp"
#include "packdit/metrics.hpp"
#include "packdit/training.hpp"
#include "test_util.hpp"

using namespace packdit;
namespace fs = std::filesystem;

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  static const auto t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path work_dir() {
  const auto p = fs::temp_directory_path() / "packdit_acceptance";
  fs::create_directories(p);
  return p;
}

// ---- criterion 1: gradient correctness ----

void gradcheck_stage(Check& c, const std::string& name,
                     const std::vector<BatchEntry<double>>& batch,
                     double lambda, TaskKind task, bool has_frozen) {
  Rng rng(71);
  auto model = init_packdit<double>(testutil::tiny_dit(), rng);
  for (auto& v : model.params.values)
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (Eigen::Index j = 0; j < v.cols(); ++j)
        if (v(i, j) == 0.0) v(i, j) = rng.normal() * 0.05;

  std::vector<Eigen::MatrixXd> grads;
  for (const auto& v : model.params.values)
    grads.emplace_back(Eigen::MatrixXd::Zero(v.rows(), v.cols()));
  batch_loss_backward(model, batch, lambda, &grads);
  apply_freeze(model, task, grads);

  const double h = 1e-5;
  const Side frozen = task == TaskKind::T2M ? Side::Text : Side::Motion;
  double max_err = 0;
  for (size_t p = 0; p < model.params.count(); ++p) {
    if (has_frozen && model.param_side[p] == frozen) {
      if (grads[p].cwiseAbs().maxCoeff() != 0.0) {
        c.require(false, name + ": frozen side grad nonzero");
        return;
      }
      continue;
    }
    auto& v = model.params.values[p];
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double save = v(i, j);
        v(i, j) = save + h;
        const double lp = batch_loss_backward(model, batch, lambda, nullptr).total;
        v(i, j) = save - h;
        const double lm = batch_loss_backward(model, batch, lambda, nullptr).total;
        v(i, j) = save;
        const double fd = (lp - lm) / (2 * h);
        const double err =
            std::abs(fd - grads[p](i, j)) / std::max(1.0, std::abs(fd));
        max_err = std::max(max_err, err);
      }
    }
  }
  c.require(max_err < 1e-3,
            name + ": max rel err " + std::to_string(max_err));
}

Check run_gradcheck() {
  Check c;
  const double start = now_s();
  Rng rng(9);
  const auto xm = random_normal<double>(5, 8, rng);
  const auto xt = random_normal<double>(4, 8, rng);
  const auto em = random_normal<double>(5, 8, rng);
  const auto et = random_normal<double>(4, 8, rng);

  {
    BatchEntry<double> e;
    e.motion_in = xm;
    e.t_motion = 7;
    e.motion_target = em;
    e.text_in = xt;
    e.t_text = 11;
    e.text_target = et;
    e.mode = PairMode::Independent;
    gradcheck_stage(c, "uncond", {e}, 1.0, TaskKind::UncondMotion, false);
  }
  {
    BatchEntry<double> e;
    e.motion_in = xm;
    e.t_motion = 9;
    e.motion_target = em;
    e.text_in = xt;
    e.t_text = 9;
    e.text_target = et;
    e.mode = PairMode::JointLockstep;
    gradcheck_stage(c, "joint", {e}, 0.7, TaskKind::Joint, false);
  }
  {
    BatchEntry<double> e;
    e.motion_in = xm;
    e.t_motion = 13;
    e.motion_target = em;
    e.text_in = xt;
    e.t_text = 0;
    e.mode = PairMode::CondMotion;
    gradcheck_stage(c, "t2m", {e}, 0.0, TaskKind::T2M, true);
  }
  {
    BatchEntry<double> e;
    e.motion_in = xm;
    e.t_motion = 0;
    e.text_in = xt;
    e.t_text = 5;
    e.text_target = et;
    e.mode = PairMode::CondText;
    gradcheck_stage(c, "m2t", {e}, 1.0, TaskKind::M2T, true);
  }
  const double elapsed = now_s() - start;
  c.require(elapsed < 120.0, "runtime " + std::to_string(elapsed) + "s");
  return c;
}

// ---- criterion 2: diffusion algebra ----

Check run_diffusion() {
  Check c;
  for (const auto kind : {ScheduleKind::Linear, ScheduleKind::Cosine}) {
    for (const int T : {100, 500, 1000}) {
      const auto s = build_schedule(kind, T);
      for (int t = 1; t < T; ++t)
        c.require(s.abar(t + 1) < s.abar(t), "alpha_bar not decreasing");
      c.require(s.abar(0) == 1.0, "alpha_bar(0) != 1");
    }
  }

  const auto sched = build_schedule(ScheduleKind::Cosine, 1000);
  Rng rng(4);
  const auto x0 = random_normal<double>(6, 8, rng);
  const auto eps = random_normal<double>(6, 8, rng);
  const Eigen::MatrixXd empty;
  double worst = 0;
  for (int t = 1; t <= sched.T; ++t) {
    if (sched.abar(t) < 1e-4) continue;
    const auto xt = q_sample(x0, t, eps, sched);
    const auto back = ddim_step<double>(xt, eps, t, 0, 0.0, sched, empty);
    worst = std::max(worst, (back - x0).norm() / x0.norm());
  }
  c.require(worst < 1e-6, "inversion rel err " + std::to_string(worst));
  return c;
}

// ---- criterion 3: mutual-block invariants ----

Check run_mutual() {
  Check c;
  Rng rng(21);
  const auto cfg = testutil::tiny_dit();
  const auto zero_init = init_packdit<float>(cfg, rng);
  const auto xm = random_normal<float>(5, 8, rng);
  const auto xt = random_normal<float>(4, 8, rng);

  {
    Tape<float> t1, t2;
    const auto a =
        forward_pair(t1, zero_init, &xm, 3, &xt, 3, PairMode::Independent);
    const auto b =
        forward_pair(t2, zero_init, &xm, 3, &xt, 3, PairMode::JointLockstep);
    c.require(t1.val(a.motion_eps) == t2.val(b.motion_eps),
              "zero-init coupling not identity (motion)");
    c.require(t1.val(a.text_eps) == t2.val(b.text_eps),
              "zero-init coupling not identity (text)");
  }

  auto model = zero_init;
  for (auto& v : model.params.values)
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (Eigen::Index j = 0; j < v.cols(); ++j)
        if (v(i, j) == 0.0f) v(i, j) = static_cast<float>(rng.normal() * 0.1);

  {
    const auto xt2 = random_normal<float>(4, 8, rng);
    Tape<float> t1, t2, t3;
    const auto a = forward_pair(t1, model, &xm, 3, &xt, 3, PairMode::Independent);
    const auto b = forward_pair(t2, model, &xm, 3, &xt2, 3, PairMode::Independent);
    c.require(t1.val(a.motion_eps) == t2.val(b.motion_eps),
              "decoupled motion output depends on text");
    const auto d = forward_pair(t3, model, &xm, 3, &xt2, 3, PairMode::JointLockstep);
    c.require(t2.val(b.motion_eps) != t3.val(d.motion_eps),
              "coupling has no effect with nonzero weights");
  }

  {
    Tape<float> tp;
    std::vector<int> probes;
    forward_pair(tp, model, &xm, 3, &xt, 3, PairMode::JointLockstep, &probes);
    c.require(!probes.empty(), "no attention probes");
    for (const int id : probes) {
      const auto& p = tp.val(id);
      for (Eigen::Index i = 0; i < p.rows(); ++i)
        c.require(std::abs(p.row(i).sum() - 1.0f) <= 1e-6f,
                  "softmax row sum off by more than 1e-6");
    }
  }
  return c;
}

// ---- criterion 4: stage semantics ----

Check run_stages() {
  Check c;
  Bundle b = testutil::tiny_bundle(31);
  const auto data = testutil::synthetic_data(8, 32);
  Trainer tr(b, data, Rng(33));
  const std::vector<int> idx = {0, 1, 2, 3};

  const auto before = b.model.params.values;
  tr.step_conditional(idx, TaskKind::T2M, 1e-3);
  bool text_frozen = true, motion_moved = false;
  for (size_t p = 0; p < b.model.params.count(); ++p) {
    const bool same = b.model.params.values[p] == before[p];
    if (b.model.param_side[p] == Side::Text && !same) text_frozen = false;
    if (b.model.param_side[p] == Side::Motion && !same) motion_moved = true;
  }
  c.require(text_frozen, "t2m stage modified a text parameter");
  c.require(motion_moved, "t2m stage left motion side untouched");

  for (int s = 0; s < 5; ++s) {
    tr.step_joint(idx, 1.0, 1e-3);
    c.require(tr.last_t_motion() == tr.last_t_text(),
              "joint stage t_M != t_T");
    for (const int t : tr.last_t_motion())
      c.require(t >= 1 && t <= b.T, "joint timestep out of range");
  }

  const std::array<double, 5> probs = {0.25, 0.25, 0.125, 0.125, 0.25};
  std::array<int, 5> counts{};
  for (int i = 0; i < 10000; ++i)
    counts[static_cast<int>(tr.draw_task(probs))]++;
  for (int k = 0; k < 5; ++k) {
    const double freq = counts[k] / 10000.0;
    c.require(std::abs(freq - probs[k]) <= 0.02,
              "task frequency " + std::to_string(freq) + " vs " +
                  std::to_string(probs[k]));
  }
  return c;
}

// ---- criterion 5: overfit sanity ----

struct ToyTrainSetup {
  Bundle bundle;
  TrainingData data;
  std::vector<std::string> captions;
};

ToyTrainSetup make_setup(const ToySplit& split, const DiTConfig& base,
                         const CodecConfig& cc, ScheduleKind kind, int T,
                         uint64_t seed) {
  ToyTrainSetup s;
  Rng rng(seed);
  DiTConfig mc = base;
  const MotionSchema* schema = schema_by_name("toy");
  mc.motion_token_dim = mc.patch_size * schema->total_dim;
  mc.text_latent_dim = cc.proj_dim;
  CodecConfig cc2 = cc;
  cc2.latent_tokens = mc.max_text_tokens;

  Rng codec_rng = rng.fork(1);
  s.bundle.codec = init_codec<float>(cc2, Vocab::from_corpus(split.captions),
                                     codec_rng);
  train_codec(s.bundle.codec, split.captions, codec_rng);
  s.bundle.norm = compute_norm_stats(split.motions);
  Rng model_rng = rng.fork(2);
  s.bundle.model = init_packdit<float>(mc, model_rng);
  s.bundle.schema_name = "toy";
  s.bundle.sched_kind = kind;
  s.bundle.T = T;
  s.data = prepare_training_data(split, s.bundle.codec, s.bundle.norm,
                                 mc.patch_size);
  s.captions = split.captions;
  return s;
}

ToySplit tiny_overfit_split(uint64_t seed) {
  ToySplit split;
  Rng rng(seed);
  const auto classes = all_toy_classes();
  for (int i = 0; i < 16; ++i) {
    auto [m, cap] = generate_item(classes[i % classes.size()], 0.002, rng);
    split.motions.push_back(std::move(m));
    split.captions.push_back(cap);
  }
  return split;
}

// Runs one stage until the loss EMA falls under 10% of its step-50 value or
// the step limit is reached; returns the achieved ratio.
double overfit_stage(Trainer& tr, StageKind kind, int n_items, int max_steps) {
  const double lr = 1e-3;
  StageConfig cfg;
  cfg.stage = kind;
  cfg.learning_rate = lr;
  std::vector<int> idx(n_items);
  for (int i = 0; i < n_items; ++i) idx[i] = i;
  double ema = 0, ema50 = 0;
  const double decay = 0.95;
  for (int step = 1; step <= max_steps; ++step) {
    DiffusionLossTerms terms;
    switch (kind) {
      case StageKind::Uncond:
        terms = tr.step_uncond(idx, idx, 1.0, lr);
        break;
      case StageKind::Mixed: {
        TaskKind chosen;
        terms = tr.step_mixed(idx, cfg, &chosen);
        break;
      }
      default:
        terms = tr.step_conditional(idx, TaskKind::T2M, lr);
        break;
    }
    ema = step == 1 ? terms.total : decay * ema + (1 - decay) * terms.total;
    if (step == 50) ema50 = ema;
    if (step > 50 && ema < 0.1 * ema50) return ema / ema50;
  }
  return ema50 > 0 ? ema / ema50 : 1.0;
}

Check run_overfit() {
  Check c;
  const double start = now_s();
  const auto split = tiny_overfit_split(41);
  auto setup = make_setup(split, nano_config(), CodecConfig{},
                          ScheduleKind::Cosine, 100, 42);
  Trainer tr(setup.bundle, setup.data, Rng(43));
  const int n = static_cast<int>(setup.data.motion_tokens.size());
  for (const auto kind :
       {StageKind::Uncond, StageKind::Mixed, StageKind::T2M}) {
    const double ratio = overfit_stage(tr, kind, n, 2000);
    c.require(ratio < 0.1, to_string(kind) + " stage loss ratio " +
                               std::to_string(ratio));
  }
  const double elapsed = now_s() - start;
  c.require(elapsed < 600.0, "runtime " + std::to_string(elapsed) + "s");
  return c;
}

// ---- criterion 6: end-to-end desk training ----

uint64_t mix_seed(uint64_t base, int i) {
  const uint64_t mixed = base * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(i);
  return io::fnv1a(&mixed, sizeof(mixed));
}

double eval_t2m_oracle(const Bundle& b, int samples_per_prompt, uint64_t seed,
                       int steps) {
  std::vector<MotionSequence> gen;
  std::vector<std::string> prompts;
  Rng rng(seed);
  int i = 0;
  for (const auto& spec : all_toy_classes()) {
    for (int k = 0; k < samples_per_prompt; ++k, ++i) {
      SampleRequest req;
      req.steps = steps;
      req.seed = mix_seed(seed, i);
      req.n_frames = static_cast<int>(rng.uniform_int(32, 64));
      req.caption = spec.caption();
      prompts.push_back(req.caption);
      gen.push_back(sample_t2m(b, req));
    }
  }
  return oracle_match(gen, prompts);
}

Check run_e2e() {
  Check c;
  const double start = now_s();
  const auto dir = work_dir() / "e2e";
  fs::create_directories(dir);
  generate_dataset(2000, 404, dir.string());
  const ToySplit train = load_split(dir.string(), "train");
  const ToySplit test = load_split(dir.string(), "test");

  auto setup = make_setup(train, nano_config(), CodecConfig{},
                          ScheduleKind::Cosine, 1000, 405);
  const auto stages = recipe("desk");
  const auto out = (dir / "run").string();
  run_training(setup.bundle, setup.data, stages, out, 405);

  const Bundle mixed = read_checkpoint(out + "/stage_1_mixed.pkck");
  const Bundle fin = read_checkpoint(out + "/final.pkck");

  const double t2m = eval_t2m_oracle(fin, 4, 406, 50);
  c.require(t2m >= 0.90, "t2m oracle match " + std::to_string(t2m));

  {
    int exact = 0;
    const int n = 50;
    for (int i = 0; i < n; ++i) {
      const int k = i % static_cast<int>(test.motions.size());
      SampleRequest req;
      req.seed = mix_seed(407, i);
      req.motion = test.motions[k];
      if (sample_m2t(mixed, req) == test.captions[k]) ++exact;
    }
    const double em = static_cast<double>(exact) / n;
    c.require(em >= 0.80, "m2t exact match " + std::to_string(em));
  }

  {
    std::vector<MotionSequence> gen;
    std::vector<std::string> caps;
    Rng rng(408);
    for (int i = 0; i < 50; ++i) {
      SampleRequest req;
      req.seed = mix_seed(408, i);
      req.n_frames = static_cast<int>(rng.uniform_int(32, 64));
      auto [m, cap] = sample_joint(mixed, req);
      gen.push_back(std::move(m));
      caps.push_back(std::move(cap));
    }
    const double jc = oracle_match(gen, caps);
    c.require(jc >= 0.70, "joint consistency " + std::to_string(jc));
  }

  {
    const auto ex = FeatureExtractor::fit(train.motions);
    std::vector<MotionSequence> gen;
    Rng rng(409);
    const int n = static_cast<int>(test.motions.size());
    for (int i = 0; i < n; ++i) {
      SampleRequest req;
      req.seed = mix_seed(409, i);
      req.n_frames = static_cast<int>(rng.uniform_int(32, 64));
      gen.push_back(sample_uncond_motion(fin, req));
    }
    std::vector<MotionSequence> train_sub(train.motions.begin(),
                                          train.motions.begin() + n);
    const auto fr = extract_features(test.motions, ex, "real");
    const auto fs = extract_features(train_sub, ex, "real");
    const auto fg = extract_features(gen, ex, "generated");
    const double base = fid(fr, fs);
    const double got = fid(fr, fg);
    c.require(got <= 3.0 * base, "uncond fid " + std::to_string(got) +
                                     " vs real-real " + std::to_string(base));
  }

  const double elapsed = now_s() - start;
  c.require(elapsed < 1800.0, "runtime " + std::to_string(elapsed) + "s");
  return c;
}

// ---- criterion 7: inpainting ----

Check run_inpaint() {
  Check c;
  const Bundle b = testutil::tiny_bundle(51);
  Rng rng(52);
  ToyMotionSpec spec;
  spec.shape = ToyShape::Line;
  spec.direction = ToyDirection::Right;
  spec.speed = ToySpeed::Slow;
  spec.n_frames = 32;
  const auto known = generate_item(spec, 0.002, rng).first;

  std::vector<std::pair<std::string, std::vector<bool>>> masks = {
      {"prefix", predict_mask(32, 0.5)},
      {"prefix+suffix", inbetween_mask(32)},
      {"all-true", std::vector<bool>(32, true)},
      {"all-false", std::vector<bool>(32, false)}};
  for (const auto& [name, mask] : masks) {
    SampleRequest req;
    req.steps = 8;
    req.seed = 53;
    req.n_frames = 32;
    req.motion = known;
    req.keep_mask = mask;
    const auto out = sample_inpaint(b, req);
    for (int f = 0; f < 32; ++f)
      if (mask[f])
        c.require(out.data.row(f) == known.data.row(f),
                  name + " mask: kept frame differs");
    if (name == "all-false") {
      SampleRequest ur;
      ur.steps = 8;
      ur.seed = 53;
      ur.n_frames = 32;
      const auto unc = sample_uncond_motion(b, ur);
      c.require(out.data == unc.data,
                "all-false inpaint differs from unconditional");
    }
  }
  return c;
}

// ---- criterion 8: metrics oracles ----

// Whitens columns so the sample mean/covariance are exactly 0/I.
Eigen::MatrixXd whitened_normal(int n, int d, uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
  m.rowwise() -= m.colwise().mean();
  const Eigen::MatrixXd cov = m.transpose() * m / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::MatrixXd w =
      es.eigenvectors() *
      es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
      es.eigenvectors().transpose();
  return m * w;
}

Check run_metrics() {
  Check c;
  FeatureSet a;
  a.features = whitened_normal(64, kFeatureDim, 61);
  a.source = "real";
  a.extractor_id = kExtractorId;
  c.require(fid(a, a) < 1e-6, "fid(a,a) not ~0");

  FeatureSet b = a;
  b.features.col(0).array() += 1.0;
  c.require(std::abs(fid(a, b) - 1.0) < 1e-6, "mean-shift fid != 1");

  // All clipped precisions are 1; brevity penalty exp(1 - 5/4).
  const double bl = bleu("a point moves left",
                         {"a point moves left slowly"});
  c.require(std::abs(bl - 0.7788007831) < 1e-4,
            "bleu hand case " + std::to_string(bl));

  const std::vector<std::string> corpus = {
      "a point moves left slowly", "a point moves right quickly",
      "a point stays still", "a point traces a circle clockwise slowly"};
  const double cd = cider({corpus[0]}, {{corpus[0]}}, corpus);
  c.require(std::abs(cd - 10.0) < 1e-6, "identical cider != 10");

  {
    Rng rng(62);
    const int n = 256, pool = 32;
    Eigen::MatrixXd me(n, 8), te(n, 8);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 8; ++j) {
        me(i, j) = rng.normal();
        te(i, j) = rng.normal();
      }
    const auto r = r_precision(me, te, pool, 63);
    const double expect = 1.0 / pool;
    const double mc_err = 3.0 * std::sqrt(expect * (1 - expect) / n);
    c.require(std::abs(r.top1 - expect) <= mc_err,
              "random r@1 " + std::to_string(r.top1));
  }
  return c;
}

// ---- criterion 9: determinism ----

Check run_determinism() {
  Check c;
  const auto dir = work_dir() / "det";
  fs::create_directories(dir);
  const Bundle b = testutil::tiny_bundle(71);

  {
    SampleRequest req;
    req.steps = 8;
    req.seed = 72;
    req.n_frames = 32;
    const auto p1 = (dir / "s1.pkmo").string();
    const auto p2 = (dir / "s2.pkmo").string();
    write_pkmo(p1, {sample_uncond_motion(b, req)});
    write_pkmo(p2, {sample_uncond_motion(b, req)});
    c.require(read_bytes(p1) == read_bytes(p2), "samples not byte-identical");
  }

  {
    const auto data = testutil::synthetic_data(16, 73);
    std::vector<StageConfig> stages(1);
    stages[0].stage = StageKind::Mixed;
    stages[0].epochs = 4;
    stages[0].batch_size = 8;
    stages[0].learning_rate = 1e-3;

    Bundle full = testutil::tiny_bundle(74);
    std::vector<TrainLogEntry> log_full;
    run_training(full, data, stages, (dir / "full").string(), 75, &log_full);

    Bundle part = testutil::tiny_bundle(74);
    std::vector<TrainLogEntry> log_a;
    run_training(part, data, stages, (dir / "part").string(), 75, &log_a, true,
                 "", 3);
    Bundle resumed = testutil::tiny_bundle(74);
    std::vector<TrainLogEntry> log_b;
    run_training(resumed, data, stages, (dir / "part").string(), 75, &log_b,
                 true, (dir / "part" / "train_state.pkts").string());

    c.require(log_a.size() + log_b.size() == log_full.size(),
              "resumed step count mismatch");
    bool same = true;
    for (size_t i = 0; i < log_full.size(); ++i) {
      const auto& e = i < log_a.size() ? log_a[i] : log_b[i - log_a.size()];
      if (e.total != log_full[i].total) same = false;
    }
    c.require(same, "loss trajectory differs after resume");
    c.require(read_bytes((dir / "full" / "final.pkck").string()) ==
                  read_bytes((dir / "part" / "final.pkck").string()),
              "final checkpoint not byte-identical after resume");
  }

  {
    FeatureSet fa;
    fa.features = whitened_normal(48, kFeatureDim, 76);
    fa.source = "generated";
    fa.extractor_id = kExtractorId;
    MetricsReport r1, r2;
    for (auto* r : {&r1, &r2}) {
      r->extractor_id = kExtractorId;
      r->n_samples = 48;
      r->seed = 77;
      r->fid = fid(fa, fa);
      r->diversity = diversity(fa, 100, 77);
    }
    c.require(r1.to_text() == r2.to_text(), "reports not byte-identical");
  }
  return c;
}

// ---- criterion 10: ablation directions ----

double ablation_run(const ToySplit& train, const DiTConfig& cfg,
                    bool with_pretrain, uint64_t seed) {
  auto setup = make_setup(train, cfg, CodecConfig{}, ScheduleKind::Cosine, 100,
                          seed);
  std::vector<StageConfig> stages;
  if (with_pretrain) {
    StageConfig s;
    s.stage = StageKind::Uncond;
    s.epochs = 3;
    s.batch_size = 32;
    s.learning_rate = 3e-4;
    stages.push_back(s);
  }
  StageConfig t;
  t.stage = StageKind::Mixed;
  t.epochs = 6;
  t.batch_size = 32;
  t.learning_rate = 3e-4;
  stages.push_back(t);
  StageConfig f;
  f.stage = StageKind::T2M;
  f.epochs = 4;
  f.batch_size = 32;
  f.learning_rate = 3e-4;
  stages.push_back(f);

  const auto out = work_dir() / ("abl_" + std::to_string(seed) +
                                 (with_pretrain ? "_p" : "_n") + "_" +
                                 std::to_string(cfg.patch_size));
  run_training(setup.bundle, setup.data, stages, out.string(), seed);
  const Bundle fin = read_checkpoint((out / "final.pkck").string());
  return eval_t2m_oracle(fin, 2, seed + 1, 25);
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

Check run_ablations() {
  Check c;
  const auto dir = work_dir() / "abl_data";
  fs::create_directories(dir);
  generate_dataset(500, 90, dir.string());
  const ToySplit train = load_split(dir.string(), "train");

  DiTConfig cfg = nano_config();
  cfg.depth = 2;
  cfg.width = 64;

  std::vector<double> with_p, without_p;
  for (uint64_t seed : {901, 902, 903}) {
    with_p.push_back(ablation_run(train, cfg, true, seed));
    without_p.push_back(ablation_run(train, cfg, false, seed));
  }
  const double mw = median3(with_p), mo = median3(without_p);
  c.require(mw >= mo, "pretrain median " + std::to_string(mw) +
                          " < no-pretrain " + std::to_string(mo));

  DiTConfig p4 = cfg;
  p4.patch_size = 4;
  p4.max_motion_tokens = 16;
  std::vector<double> patch1, patch4;
  for (uint64_t seed : {911, 912, 913}) {
    patch1.push_back(ablation_run(train, cfg, true, seed));
    patch4.push_back(ablation_run(train, p4, true, seed));
  }
  const double m1 = median3(patch1), m4 = median3(patch4);
  c.require(m1 >= m4, "patch1 median " + std::to_string(m1) + " < patch4 " +
                          std::to_string(m4));
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
      {"gradient-correctness", run_gradcheck},
      {"diffusion-algebra", run_diffusion},
      {"mutual-block-invariants", run_mutual},
      {"stage-semantics", run_stages},
      {"overfit-sanity", run_overfit},
      {"end-to-end-desk-training", run_e2e},
      {"inpainting-bit-exactness", run_inpaint},
      {"metrics-oracles", run_metrics},
      {"determinism", run_determinism},
      {"ablation-directions", run_ablations},
  };

  std::vector<std::string> want(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!want.empty() &&
        std::find(want.begin(), want.end(), name) == want.end())
      continue;
    Check c;
    const double t0 = now_s();
    try {
      c = fn();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    const double dt = now_s() - t0;
    std::printf("%s: %s (%.1fs)%s%s\n", c.ok ? "PASS" : "FAIL", name.c_str(),
                dt, c.detail.empty() ? "" : " - ", c.detail.c_str());
    std::fflush(stdout);
    if (!c.ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
