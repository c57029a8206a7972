// packdit: dataset generation, four-stage training, sampling and evaluation
// for the dual-DiT motion-language model.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "packdit/checkpoint.hpp"
#include "packdit/io_util.hpp"
#include "packdit/inference.hpp"
#include "packdit/metrics.hpp"
#include "packdit/training.hpp"

using json = nlohmann::json;
using namespace packdit;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

bool g_quiet = false;

void info(const std::string& msg) {
  if (!g_quiet) std::cerr << msg << "\n";
}

int eval_threads() {
  if (const char* env = std::getenv("PACKDIT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// ---- train ----

struct TrainOptions {
  std::string recipe = "desk";
  std::string stage = "all";
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  uint64_t seed = 0;
};

void apply_config_file(const std::string& path, DiTConfig& mc, CodecConfig& cc,
                       ScheduleKind& kind, int& T,
                       std::vector<StageConfig>& stages) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    mc.depth = m.value("depth", mc.depth);
    mc.width = m.value("width", mc.width);
    mc.heads = m.value("heads", mc.heads);
    mc.patch_size = m.value("patch_size", mc.patch_size);
    mc.mlp_ratio = m.value("mlp_ratio", mc.mlp_ratio);
    mc.max_motion_tokens = m.value("max_motion_tokens", mc.max_motion_tokens);
  }
  if (j.contains("codec")) {
    const auto& c = j["codec"];
    cc.embed_dim = c.value("embed_dim", cc.embed_dim);
    cc.proj_dim = c.value("proj_dim", cc.proj_dim);
    cc.depth = c.value("depth", cc.depth);
    cc.heads = c.value("heads", cc.heads);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    if (s.contains("kind"))
      kind = schedule_kind_from_string(s["kind"].get<std::string>());
    T = s.value("T", T);
  }
  if (j.contains("stages")) {
    stages.clear();
    for (const auto& s : j["stages"]) {
      StageConfig sc;
      sc.stage = stage_kind_from_string(s.at("stage").get<std::string>());
      sc.epochs = s.value("epochs", sc.epochs);
      sc.batch_size = s.value("batch_size", sc.batch_size);
      sc.learning_rate = s.value("learning_rate", sc.learning_rate);
      sc.lambda = s.value("lambda", sc.lambda);
      if (s.contains("task_probs")) {
        const auto& p = s["task_probs"];
        if (p.size() != 5) throw ConfigError("task_probs needs 5 entries");
        for (int i = 0; i < 5; ++i) sc.task_probs[i] = p[i].get<double>();
      }
      stages.push_back(sc);
    }
  }
}

int run_train(const TrainOptions& opt) {
  std::vector<StageConfig> stages;
  DiTConfig mc = nano_config();
  CodecConfig cc;
  ScheduleKind kind = ScheduleKind::Cosine;
  int T = 1000;
  try {
    stages = recipe(opt.recipe);
    if (!opt.config.empty())
      apply_config_file(opt.config, mc, cc, kind, T, stages);
    if (opt.stage != "all") {
      const StageKind want = stage_kind_from_string(opt.stage);
      std::vector<StageConfig> picked;
      for (const auto& s : stages)
        if (s.stage == want) picked.push_back(s);
      if (picked.empty()) {
        StageConfig sc = stages.empty() ? StageConfig{} : stages.front();
        sc.stage = want;
        picked.push_back(sc);
      }
      stages = picked;
    }
    for (const auto& s : stages) s.validate();
    mc.validate();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    const ToySplit split = load_split(opt.data, "train");
    Bundle b;
    if (!opt.resume.empty()) {
      read_train_state(opt.resume, b);
    } else {
      Rng rng(opt.seed);
      const MotionSchema* schema = schema_by_name("toy");
      mc.motion_token_dim = mc.patch_size * schema->total_dim;
      mc.text_latent_dim = cc.proj_dim;
      cc.latent_tokens = mc.max_text_tokens;

      Vocab vocab = Vocab::from_corpus(split.captions);
      Rng codec_rng = rng.fork(1);
      b.codec = init_codec<float>(cc, vocab, codec_rng);
      info("training text codec");
      const auto rep = train_codec(b.codec, split.captions, codec_rng);
      info("codec reconstruction exact match: " +
           std::to_string(rep.stage_b_exact));

      b.norm = compute_norm_stats(split.motions);
      Rng model_rng = rng.fork(2);
      b.model = init_packdit<float>(mc, model_rng);
      b.schema_name = "toy";
      b.sched_kind = kind;
      b.T = T;
    }

    const TrainingData data =
        prepare_training_data(split, b.codec, b.norm, b.model.cfg.patch_size);
    run_training(b, data, stages, opt.out, opt.seed, nullptr, g_quiet,
                 opt.resume);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}

// ---- sample ----

struct SampleOptions {
  std::string task;
  std::string ckpt;
  std::string text;
  std::string motion_path;
  std::string out;
  std::string trace_path;
  double keep_prefix = -1;
  double keep_suffix = -1;
  int steps = 50;
  double eta = 0;
  int frames = 48;
  uint64_t seed = 0;
};

void write_text_file(const std::string& path, const std::string& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << s << "\n";
}

int run_sample(const SampleOptions& opt) {
  try {
    const Bundle b = read_checkpoint(opt.ckpt);
    SampleRequest req;
    req.steps = opt.steps;
    req.eta = opt.eta;
    req.seed = opt.seed;
    req.n_frames = opt.frames;
    req.caption = opt.text;
    if (!opt.motion_path.empty()) {
      auto seqs = read_pkmo(opt.motion_path);
      if (seqs.empty()) throw ValidationError("empty motion file");
      req.motion = seqs.front();
      req.n_frames = req.motion->n_frames();
    }

    TraceSink trace;
    TraceSink* tr = opt.trace_path.empty() ? nullptr : &trace;

    if (opt.task == "uncond-motion") {
      write_pkmo(opt.out, {sample_uncond_motion(b, req, tr)});
    } else if (opt.task == "t2m") {
      write_pkmo(opt.out, {sample_t2m(b, req, tr)});
    } else if (opt.task == "m2t") {
      write_text_file(opt.out, sample_m2t(b, req, tr));
    } else if (opt.task == "uncond-text") {
      write_text_file(opt.out, sample_uncond_text(b, req, tr));
    } else if (opt.task == "joint") {
      auto [motion, caption] = sample_joint(b, req, tr);
      write_pkmo(opt.out, {motion});
      write_text_file(opt.out + ".txt", caption);
    } else if (opt.task == "predict" || opt.task == "inbetween") {
      if (!req.motion) throw ValidationError("--motion required for " + opt.task);
      if (opt.task == "predict") {
        req.keep_mask = predict_mask(
            req.n_frames, opt.keep_prefix >= 0 ? opt.keep_prefix : 0.5);
      } else {
        req.keep_mask = inbetween_mask(
            req.n_frames, opt.keep_prefix >= 0 ? opt.keep_prefix : 0.25,
            opt.keep_suffix >= 0 ? opt.keep_suffix : 0.25);
      }
      write_pkmo(opt.out, {sample_inpaint(b, req, tr)});
    } else {
      std::cerr << "unknown task: " << opt.task << "\n";
      return kExitConfig;
    }
    if (tr) write_trace(opt.trace_path, trace);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}

// ---- eval ----

struct EvalOptions {
  std::string ckpt, data, task, report;
  int n = 100;
  uint64_t seed = 0;
};

uint64_t sample_seed(uint64_t base, int i) {
  const uint64_t mixed = base * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(i);
  return packdit::io::fnv1a(&mixed, sizeof(mixed));
}

int run_eval(const EvalOptions& opt) {
  try {
    (void)eval_threads();  // evaluation is single-threaded; the cap is trivial
    const Bundle b = read_checkpoint(opt.ckpt);
    const ToySplit train = load_split(opt.data, "train");
    const ToySplit test = load_split(opt.data, "test");
    const FeatureExtractor ex = FeatureExtractor::fit(train.motions);

    MetricsReport rep;
    rep.extractor_id = ex.id;
    rep.n_samples = opt.n;
    rep.seed = opt.seed;

    auto class_of = [](const std::string& cap) {
      const auto s = spec_from_caption(cap);
      return s ? toy_class_index(*s) : -1;
    };

    if (opt.task == "uncond-motion") {
      std::vector<MotionSequence> gen;
      Rng rng(opt.seed);
      for (int i = 0; i < opt.n; ++i) {
        SampleRequest req;
        req.seed = sample_seed(opt.seed, i);
        req.n_frames = static_cast<int>(rng.uniform_int(32, 64));
        gen.push_back(sample_uncond_motion(b, req));
      }
      const FeatureSet fr = extract_features(test.motions, ex, "real");
      const FeatureSet fg = extract_features(gen, ex, "generated");
      rep.fid = fid(fr, fg);
      rep.diversity = diversity(fg, 300, opt.seed);
    } else if (opt.task == "t2m") {
      std::vector<MotionSequence> gen;
      std::vector<std::string> prompts;
      for (int i = 0; i < opt.n; ++i) {
        const std::string& cap = test.captions[i % test.captions.size()];
        SampleRequest req;
        req.seed = sample_seed(opt.seed, i);
        req.n_frames = test.motions[i % test.motions.size()].n_frames();
        req.caption = cap;
        prompts.push_back(cap);
        gen.push_back(sample_t2m(b, req));
      }
      rep.oracle_match = oracle_match(gen, prompts);
      const FeatureSet fr = extract_features(test.motions, ex, "real");
      const FeatureSet fg = extract_features(gen, ex, "generated");
      rep.fid = fid(fr, fg);
      rep.diversity = diversity(fg, 300, opt.seed);

      std::vector<int> gen_cls, true_cls;
      for (const auto& m : gen)
        gen_cls.push_back(toy_class_index(classify_motion(m)));
      for (const auto& p : prompts) true_cls.push_back(class_of(p));
      std::vector<int> real_cls;
      for (const auto& c : train.captions) real_cls.push_back(class_of(c));
      const FeatureSet freal = extract_features(train.motions, ex, "real");
      const auto sp = RetrievalSpace::fit(
          freal, real_cls, static_cast<int>(all_toy_classes().size()));
      const int pool = std::min(32, opt.n);
      rep.r_precision = r_precision(motion_embedding(sp, fg, gen_cls),
                                    text_embedding(sp, true_cls), pool,
                                    opt.seed);
    } else if (opt.task == "m2t") {
      int exact = 0;
      double bleu_sum = 0;
      std::vector<std::string> cands;
      std::vector<std::vector<std::string>> refs;
      for (int i = 0; i < opt.n; ++i) {
        const int k = i % static_cast<int>(test.motions.size());
        SampleRequest req;
        req.seed = sample_seed(opt.seed, i);
        req.motion = test.motions[k];
        const std::string cap = sample_m2t(b, req);
        if (cap == test.captions[k]) ++exact;
        bleu_sum += bleu(cap, {test.captions[k]});
        cands.push_back(cap);
        refs.push_back({test.captions[k]});
      }
      rep.oracle_match = static_cast<double>(exact) / opt.n;
      rep.bleu4 = bleu_sum / opt.n;
      rep.cider = cider(cands, refs, train.captions);
    } else if (opt.task == "joint") {
      std::vector<MotionSequence> gen;
      std::vector<std::string> caps;
      for (int i = 0; i < opt.n; ++i) {
        SampleRequest req;
        req.seed = sample_seed(opt.seed, i);
        req.n_frames = 48;
        auto [motion, caption] = sample_joint(b, req);
        gen.push_back(std::move(motion));
        caps.push_back(std::move(caption));
      }
      rep.oracle_match = oracle_match(gen, caps);
    } else {
      std::cerr << "unknown eval task: " << opt.task << "\n";
      return kExitConfig;
    }
    write_report(opt.report, rep);
    if (!g_quiet) std::cout << rep.to_text();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}

int run_inspect(const std::string& ckpt) {
  try {
    const Bundle b = read_checkpoint(ckpt);
    const DiTConfig& c = b.model.cfg;
    std::cout << "schema: " << b.schema_name << "\n"
              << "schedule: " << to_string(b.sched_kind) << " T=" << b.T << "\n"
              << "model: depth=" << c.depth << " width=" << c.width
              << " heads=" << c.heads << " patch=" << c.patch_size
              << " motion_token_dim=" << c.motion_token_dim
              << " text_latent_dim=" << c.text_latent_dim << "\n"
              << "model parameters: " << b.model.params.scalar_count() << "\n"
              << "codec parameters: " << b.codec.params.scalar_count() << "\n"
              << "vocab size: " << b.codec.vocab.size() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"packdit: dual diffusion transformers for motion and text"};
  app.require_subcommand(1);
  app.add_flag("--quiet", g_quiet, "suppress progress output");

  auto* dataset = app.add_subcommand("dataset", "dataset tools");
  dataset->require_subcommand(1);
  auto* gen = dataset->add_subcommand("gen", "generate a toy dataset");
  int gen_n = 1000;
  uint64_t gen_seed = 0;
  std::string gen_out;
  double gen_noise = 0.002;
  gen->add_option("--n", gen_n, "item count")->required();
  gen->add_option("--seed", gen_seed, "rng seed")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--noise", gen_noise, "position jitter std");

  TrainOptions topt;
  auto* train = app.add_subcommand("train", "run training stages");
  train->add_option("--recipe", topt.recipe, "desk or paper");
  train->add_option("--stage", topt.stage,
                    "uncond|joint|t2m|m2t|mixed|all");
  train->add_option("--config", topt.config, "JSON config file");
  train->add_option("--data", topt.data, "dataset directory")->required();
  train->add_option("--out", topt.out, "output directory")->required();
  train->add_option("--seed", topt.seed, "rng seed")->required();
  train->add_option("--resume", topt.resume, "train-state file to resume from");

  SampleOptions sopt;
  auto* sample = app.add_subcommand("sample", "sample from a checkpoint");
  sample->add_option("--task", sopt.task, "generation task")->required();
  sample->add_option("--ckpt", sopt.ckpt, "checkpoint file")->required();
  sample->add_option("--text", sopt.text, "caption (t2m)");
  sample->add_option("--motion", sopt.motion_path, "motion file (m2t/inpaint)");
  sample->add_option("--keep-prefix", sopt.keep_prefix, "kept prefix fraction");
  sample->add_option("--keep-suffix", sopt.keep_suffix, "kept suffix fraction");
  sample->add_option("--steps", sopt.steps, "DDIM steps");
  sample->add_option("--eta", sopt.eta, "DDIM eta");
  sample->add_option("--frames", sopt.frames, "output frame count");
  sample->add_option("--seed", sopt.seed, "rng seed")->required();
  sample->add_option("--out", sopt.out, "output path")->required();
  sample->add_option("--trace", sopt.trace_path, "per-step latent dump path");

  EvalOptions eopt;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", eopt.ckpt, "checkpoint file")->required();
  eval->add_option("--data", eopt.data, "dataset directory")->required();
  eval->add_option("--task", eopt.task, "task to evaluate")->required();
  eval->add_option("--n", eopt.n, "sample count");
  eval->add_option("--seed", eopt.seed, "rng seed")->required();
  eval->add_option("--report", eopt.report, "report output path")->required();

  std::string inspect_ckpt;
  auto* inspect = app.add_subcommand("inspect", "print checkpoint summary");
  inspect->add_option("--ckpt", inspect_ckpt, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    try {
      const auto manifest = generate_dataset(gen_n, gen_seed, gen_out, gen_noise);
      info("content hash: " + std::to_string(manifest.content_hash));
    } catch (const ValidationError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitData;
    }
    return 0;
  }
  if (train->parsed()) return run_train(topt);
  if (sample->parsed()) return run_sample(sopt);
  if (eval->parsed()) return run_eval(eopt);
  if (inspect->parsed()) return run_inspect(inspect_ckpt);
  return 0;
}
