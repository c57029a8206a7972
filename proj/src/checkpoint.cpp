#include "packdit/checkpoint.hpp"

#include <bit>

#include "packdit/io_util.hpp"

namespace packdit {

namespace {

constexpr char kPkck[4] = {'P', 'K', 'C', 'K'};
constexpr char kPkts[4] = {'P', 'K', 'T', 'S'};
constexpr uint32_t kVersion = 1;

void write_f64(std::ostream& os, double v) {
  io::write_u64(os, std::bit_cast<uint64_t>(v));
}

double read_f64(std::istream& is) {
  return std::bit_cast<double>(io::read_u64(is));
}

void write_mat(std::ostream& os, const MatF& m) {
  io::write_u32(os, static_cast<uint32_t>(m.rows()));
  io::write_u32(os, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) io::write_f32(os, m(i, j));
}

MatF read_mat(std::istream& is) {
  const uint32_t r = io::read_u32(is), c = io::read_u32(is);
  MatF m(r, c);
  for (uint32_t i = 0; i < r; ++i)
    for (uint32_t j = 0; j < c; ++j) m(i, j) = io::read_f32(is);
  return m;
}

void write_params(std::ostream& os, const ParamStore<float>& ps) {
  io::write_u32(os, static_cast<uint32_t>(ps.count()));
  for (size_t i = 0; i < ps.count(); ++i) {
    io::write_string(os, ps.names[i]);
    write_mat(os, ps.values[i]);
  }
}

// Tensors land in a store rebuilt from the serialized configs, so names and
// shapes must line up exactly.
void read_params_into(std::istream& is, ParamStore<float>& ps,
                      const std::string& what) {
  const uint32_t n = io::read_u32(is);
  if (n != ps.count()) throw std::runtime_error(what + ": tensor count mismatch");
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = io::read_string(is);
    if (name != ps.names[i]) throw std::runtime_error(what + ": tensor name mismatch");
    MatF m = read_mat(is);
    if (m.rows() != ps.values[i].rows() || m.cols() != ps.values[i].cols())
      throw std::runtime_error(what + ": tensor shape mismatch");
    ps.values[i] = std::move(m);
  }
}

void write_vecd(std::ostream& os, const Eigen::VectorXd& v) {
  io::write_u32(os, static_cast<uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) write_f64(os, v(i));
}

Eigen::VectorXd read_vecd(std::istream& is) {
  const uint32_t n = io::read_u32(is);
  Eigen::VectorXd v(n);
  for (uint32_t i = 0; i < n; ++i) v(i) = read_f64(is);
  return v;
}

void write_vecf(std::ostream& os, const VecF& v) {
  io::write_u32(os, static_cast<uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) io::write_f32(os, v(i));
}

VecF read_vecf(std::istream& is) {
  const uint32_t n = io::read_u32(is);
  VecF v(n);
  for (uint32_t i = 0; i < n; ++i) v(i) = io::read_f32(is);
  return v;
}

void write_bundle_body(std::ostream& os, const Bundle& b) {
  io::write_string(os, b.schema_name);
  io::write_u32(os, static_cast<uint32_t>(b.sched_kind));
  io::write_u32(os, static_cast<uint32_t>(b.T));

  const DiTConfig& mc = b.model.cfg;
  for (int v : {mc.depth, mc.width, mc.heads, mc.motion_token_dim,
                mc.text_latent_dim, mc.max_motion_tokens, mc.max_text_tokens,
                mc.patch_size, mc.mlp_ratio})
    io::write_u32(os, static_cast<uint32_t>(v));

  const CodecConfig& cc = b.codec.cfg;
  for (int v : {cc.embed_dim, cc.latent_tokens, cc.proj_dim, cc.depth,
                cc.heads, cc.mlp_ratio, cc.max_text_tokens})
    io::write_u32(os, static_cast<uint32_t>(v));

  io::write_u32(os, static_cast<uint32_t>(b.codec.vocab.tokens.size()));
  for (const auto& w : b.codec.vocab.tokens) io::write_string(os, w);

  write_vecd(os, b.codec.latent_mean);
  write_vecd(os, b.codec.latent_std);
  write_vecf(os, b.norm.mean);
  write_vecf(os, b.norm.std);

  write_params(os, b.model.params);
  write_params(os, b.codec.params);
}

Bundle read_bundle_body(std::istream& is, const std::string& what) {
  Bundle b;
  b.schema_name = io::read_string(is);
  b.sched_kind = static_cast<ScheduleKind>(io::read_u32(is));
  b.T = static_cast<int>(io::read_u32(is));

  DiTConfig mc;
  for (int* f : {&mc.depth, &mc.width, &mc.heads, &mc.motion_token_dim,
                 &mc.text_latent_dim, &mc.max_motion_tokens,
                 &mc.max_text_tokens, &mc.patch_size, &mc.mlp_ratio})
    *f = static_cast<int>(io::read_u32(is));

  CodecConfig cc;
  for (int* f : {&cc.embed_dim, &cc.latent_tokens, &cc.proj_dim, &cc.depth,
                 &cc.heads, &cc.mlp_ratio, &cc.max_text_tokens})
    *f = static_cast<int>(io::read_u32(is));

  Vocab vocab;
  const uint32_t nv = io::read_u32(is);
  for (uint32_t i = 0; i < nv; ++i) vocab.tokens.push_back(io::read_string(is));

  Rng dummy(0);
  b.model = init_packdit<float>(mc, dummy);
  b.codec = init_codec<float>(cc, vocab, dummy);

  b.codec.latent_mean = read_vecd(is);
  b.codec.latent_std = read_vecd(is);
  b.norm.mean = read_vecf(is);
  b.norm.std = read_vecf(is);

  read_params_into(is, b.model.params, what + " model");
  read_params_into(is, b.codec.params, what + " codec");
  if (!is) throw std::runtime_error("truncated " + what);
  return b;
}

}  // namespace

void write_checkpoint(const std::string& path, const Bundle& b) {
  auto os = io::open_out(path);
  os.write(kPkck, 4);
  io::write_u32(os, kVersion);
  write_bundle_body(os, b);
  if (!os) throw std::runtime_error("write failed: " + path);
}

Bundle read_checkpoint(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, kPkck, path);
  if (io::read_u32(is) != kVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path);
  return read_bundle_body(is, path);
}

void write_train_state(const std::string& path, const Bundle& b,
                       const TrainSnapshot& s) {
  auto os = io::open_out(path);
  os.write(kPkts, 4);
  io::write_u32(os, kVersion);
  write_bundle_body(os, b);

  write_f64(os, s.opt.lr);
  write_f64(os, s.opt.beta1);
  write_f64(os, s.opt.beta2);
  write_f64(os, s.opt.eps);
  write_f64(os, s.opt.clip);
  io::write_u64(os, static_cast<uint64_t>(s.opt.t));
  io::write_u32(os, static_cast<uint32_t>(s.opt.m.size()));
  for (const auto& m : s.opt.m) write_mat(os, m);
  for (const auto& v : s.opt.v) write_mat(os, v);

  io::write_u64(os, static_cast<uint64_t>(s.global_step));
  io::write_u32(os, static_cast<uint32_t>(s.stage_index));
  io::write_u64(os, static_cast<uint64_t>(s.step_in_stage));
  for (uint64_t w : s.rng_state) io::write_u64(os, w);

  io::write_u64(os, static_cast<uint64_t>(s.ema_steps));
  io::write_u32(os, static_cast<uint32_t>(s.ema.size()));
  for (const auto& m : s.ema) write_mat(os, m);
  if (!os) throw std::runtime_error("write failed: " + path);
}

TrainSnapshot read_train_state(const std::string& path, Bundle& b) {
  auto is = io::open_in(path);
  io::expect_magic(is, kPkts, path);
  if (io::read_u32(is) != kVersion)
    throw std::runtime_error("unsupported train state version: " + path);
  b = read_bundle_body(is, path);

  TrainSnapshot s;
  s.opt.lr = read_f64(is);
  s.opt.beta1 = read_f64(is);
  s.opt.beta2 = read_f64(is);
  s.opt.eps = read_f64(is);
  s.opt.clip = read_f64(is);
  s.opt.t = static_cast<int64_t>(io::read_u64(is));
  const uint32_t nm = io::read_u32(is);
  if (nm != b.model.params.count())
    throw std::runtime_error("moment count mismatch in " + path);
  s.opt.m.resize(nm);
  s.opt.v.resize(nm);
  for (uint32_t i = 0; i < nm; ++i) s.opt.m[i] = read_mat(is);
  for (uint32_t i = 0; i < nm; ++i) s.opt.v[i] = read_mat(is);

  s.global_step = static_cast<int64_t>(io::read_u64(is));
  s.stage_index = static_cast<int>(io::read_u32(is));
  s.step_in_stage = static_cast<int64_t>(io::read_u64(is));
  for (auto& w : s.rng_state) w = io::read_u64(is);

  s.ema_steps = static_cast<int64_t>(io::read_u64(is));
  const uint32_t ne = io::read_u32(is);
  if (ne != b.model.params.count())
    throw std::runtime_error("EMA tensor count mismatch in " + path);
  s.ema.resize(ne);
  for (uint32_t i = 0; i < ne; ++i) s.ema[i] = read_mat(is);
  if (!is) throw std::runtime_error("truncated " + path);
  return s;
}

}  // namespace packdit
