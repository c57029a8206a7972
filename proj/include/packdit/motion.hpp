#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace packdit {

using MatF = Eigen::MatrixXf;
using VecF = Eigen::VectorXf;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Ordered (field name, dim) layout of one motion frame.
struct MotionSchema {
  std::string name;
  std::vector<std::pair<std::string, int>> fields;
  int total_dim = 0;
  int joint_count = 0;

  // Column offset of a named field; throws if unknown.
  int field_offset(const std::string& field) const;
  int field_dim(const std::string& field) const;
};

// "humanml3d" (263-dim, 22 joints) or "toy" (8-dim planar point mass).
MotionSchema builtin_schema(const std::string& name);

struct MotionSequence {
  const MotionSchema* schema = nullptr;
  MatF data;  // n_frames x total_dim

  int n_frames() const { return static_cast<int>(data.rows()); }
  void validate() const;
};

struct NormStats {
  VecF mean;
  VecF std;  // clamped to >= kStdFloor
  static constexpr float kStdFloor = 1e-6f;
};

NormStats compute_norm_stats(const std::vector<MotionSequence>& corpus);
MotionSequence normalize(const MotionSequence& seq, const NormStats& stats);
MotionSequence denormalize(const MotionSequence& seq, const NormStats& stats);

// Frame-to-token grouping. Sequences whose length is not divisible by
// patch_size are zero-padded; pad_mask records real frames.
struct TokenGrid {
  MatF tokens;  // n_tokens x (patch_size * total_dim)
  int patch_size = 1;
  int origin_frames = 0;
  std::vector<bool> pad_mask;  // length n_tokens*patch_size, true = real frame

  int n_tokens() const { return static_cast<int>(tokens.rows()); }
};

TokenGrid patchify(const MotionSequence& seq, int patch_size);
MotionSequence unpatchify(const TokenGrid& grid, const MotionSchema& schema);

// PKMO container: magic "PKMO", version u32, schema name, sequences as
// float32 little-endian frames.
void write_pkmo(const std::string& path, const std::vector<MotionSequence>& seqs);
std::vector<MotionSequence> read_pkmo(const std::string& path);

// Schema registry used by read_pkmo to resolve names to static schemas.
const MotionSchema* schema_by_name(const std::string& name);

}  // namespace packdit
