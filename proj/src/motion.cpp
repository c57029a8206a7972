#include "packdit/motion.hpp"

#include <bit>
#include <cmath>

#include "packdit/io_util.hpp"

namespace packdit {

static_assert(std::endian::native == std::endian::little,
              "PKMO/PKCK containers assume a little-endian host");

int MotionSchema::field_offset(const std::string& field) const {
  int off = 0;
  for (const auto& [n, d] : fields) {
    if (n == field) return off;
    off += d;
  }
  throw ValidationError("unknown schema field: " + field);
}

int MotionSchema::field_dim(const std::string& field) const {
  for (const auto& [n, d] : fields)
    if (n == field) return d;
  throw ValidationError("unknown schema field: " + field);
}

namespace {

MotionSchema make_humanml3d() {
  // 22-joint layout: 1 + 2 + 1 + (22-1)*6 + (22-1)*3 + 22*3 + 4 = 263.
  MotionSchema s;
  s.name = "humanml3d";
  s.joint_count = 22;
  s.fields = {
      {"root_rotation", 1},     {"root_height", 1},      {"root_velocity", 2},
      {"joint_rotations", 126}, {"joint_positions", 63}, {"joint_velocities", 66},
      {"foot_contacts", 4},
  };
  for (const auto& [n, d] : s.fields) s.total_dim += d;
  return s;
}

MotionSchema make_toy() {
  MotionSchema s;
  s.name = "toy";
  s.joint_count = 1;
  s.fields = {
      {"position_xy", 2}, {"velocity_xy", 2}, {"heading", 1},
      {"speed", 1},       {"phase", 2},
  };
  for (const auto& [n, d] : s.fields) s.total_dim += d;
  return s;
}

}  // namespace

const MotionSchema* schema_by_name(const std::string& name) {
  static const MotionSchema humanml3d = make_humanml3d();
  static const MotionSchema toy = make_toy();
  if (name == "humanml3d") return &humanml3d;
  if (name == "toy") return &toy;
  return nullptr;
}

MotionSchema builtin_schema(const std::string& name) {
  const MotionSchema* s = schema_by_name(name);
  if (!s) throw ConfigError("unknown schema name: " + name);
  return *s;
}

void MotionSequence::validate() const {
  if (!schema) throw ValidationError("sequence has no schema");
  if (data.cols() != schema->total_dim)
    throw ValidationError("sequence dim does not match schema");
  if (data.rows() < 1) throw ValidationError("sequence has no frames");
  if (!data.allFinite()) throw ValidationError("sequence contains NaN/Inf");
}

NormStats compute_norm_stats(const std::vector<MotionSequence>& corpus) {
  if (corpus.empty()) throw ValidationError("compute_norm_stats: empty corpus");
  const MotionSchema* schema = corpus.front().schema;
  const int d = schema->total_dim;
  for (const auto& s : corpus)
    if (s.schema != schema && s.schema->name != schema->name)
      throw ValidationError("compute_norm_stats: mixed schemas");

  // Two-pass in double for stable statistics.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  int64_t n = 0;
  for (const auto& s : corpus) {
    sum += s.data.cast<double>().colwise().sum();
    n += s.data.rows();
  }
  Eigen::VectorXd mean = sum / static_cast<double>(n);
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(d);
  for (const auto& s : corpus) {
    Eigen::MatrixXd c = s.data.cast<double>().rowwise() - mean.transpose();
    ss += c.array().square().colwise().sum().matrix().transpose();
  }
  Eigen::VectorXd var = ss / static_cast<double>(n);

  NormStats st;
  st.mean = mean.cast<float>();
  st.std = var.array().sqrt().cast<float>().max(NormStats::kStdFloor);
  return st;
}

MotionSequence normalize(const MotionSequence& seq, const NormStats& stats) {
  if (seq.data.cols() != stats.mean.size())
    throw ValidationError("normalize: dimension mismatch");
  MotionSequence out = seq;
  out.data = (seq.data.rowwise() - stats.mean.transpose()).array().rowwise() /
             stats.std.transpose().array();
  return out;
}

MotionSequence denormalize(const MotionSequence& seq, const NormStats& stats) {
  if (seq.data.cols() != stats.mean.size())
    throw ValidationError("denormalize: dimension mismatch");
  MotionSequence out = seq;
  out.data = (seq.data.array().rowwise() * stats.std.transpose().array())
                 .rowwise() +
             stats.mean.transpose().array();
  return out;
}

TokenGrid patchify(const MotionSequence& seq, int patch_size) {
  if (patch_size <= 0) throw ConfigError("patchify: patch_size must be positive");
  const int d = static_cast<int>(seq.data.cols());
  const int frames = seq.n_frames();
  const int padded = ((frames + patch_size - 1) / patch_size) * patch_size;
  const int n_tokens = padded / patch_size;

  TokenGrid grid;
  grid.patch_size = patch_size;
  grid.origin_frames = frames;
  grid.pad_mask.assign(padded, false);
  grid.tokens = MatF::Zero(n_tokens, patch_size * d);
  for (int f = 0; f < padded; ++f) {
    const int tok = f / patch_size, slot = f % patch_size;
    if (f < frames) {
      grid.tokens.block(tok, slot * d, 1, d) = seq.data.row(f);
      grid.pad_mask[f] = true;
    }
  }
  return grid;
}

MotionSequence unpatchify(const TokenGrid& grid, const MotionSchema& schema) {
  const int d = schema.total_dim;
  if (grid.tokens.cols() != grid.patch_size * d)
    throw ValidationError("unpatchify: token dim mismatch");
  MotionSequence out;
  out.schema = schema_by_name(schema.name);
  out.data = MatF(grid.origin_frames, d);
  for (int f = 0; f < grid.origin_frames; ++f) {
    const int tok = f / grid.patch_size, slot = f % grid.patch_size;
    out.data.row(f) = grid.tokens.block(tok, slot * d, 1, d);
  }
  return out;
}

void write_pkmo(const std::string& path, const std::vector<MotionSequence>& seqs) {
  if (seqs.empty()) throw ValidationError("write_pkmo: no sequences");
  auto os = io::open_out(path);
  os.write("PKMO", 4);
  io::write_u32(os, 1);
  io::write_string(os, seqs.front().schema->name);
  io::write_u32(os, static_cast<uint32_t>(seqs.size()));
  for (const auto& s : seqs) {
    io::write_u32(os, static_cast<uint32_t>(s.data.rows()));
    for (Eigen::Index i = 0; i < s.data.rows(); ++i)
      for (Eigen::Index j = 0; j < s.data.cols(); ++j)
        io::write_f32(os, s.data(i, j));
  }
}

std::vector<MotionSequence> read_pkmo(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, "PKMO", path);
  const uint32_t version = io::read_u32(is);
  if (version != 1) throw std::runtime_error("unsupported PKMO version");
  const std::string schema_name = io::read_string(is);
  const MotionSchema* schema = schema_by_name(schema_name);
  if (!schema) throw std::runtime_error("PKMO references unknown schema: " + schema_name);
  const uint32_t count = io::read_u32(is);
  std::vector<MotionSequence> seqs(count);
  for (auto& s : seqs) {
    s.schema = schema;
    const uint32_t frames = io::read_u32(is);
    s.data = MatF(frames, schema->total_dim);
    for (uint32_t i = 0; i < frames; ++i)
      for (int j = 0; j < schema->total_dim; ++j) s.data(i, j) = io::read_f32(is);
  }
  if (!is) throw std::runtime_error("truncated PKMO file: " + path);
  return seqs;
}

}  // namespace packdit
