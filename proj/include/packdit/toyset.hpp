#pragma once

#include <optional>
#include <string>
#include <vector>

#include "packdit/motion.hpp"
#include "packdit/rng.hpp"

namespace packdit {

enum class ToyShape { Line, Circle, Zigzag, Still };
enum class ToyDirection { Left, Right, Up, Down, Cw, Ccw, None };
enum class ToySpeed { Slow, Fast, None };

std::string to_string(ToyShape s);
std::string to_string(ToyDirection d);
std::string to_string(ToySpeed s);

struct ToyMotionSpec {
  ToyShape shape = ToyShape::Still;
  ToyDirection direction = ToyDirection::None;
  ToySpeed speed = ToySpeed::None;
  int n_frames = 48;  // valid range [32, 64]

  bool operator==(const ToyMotionSpec& o) const {
    return shape == o.shape && direction == o.direction && speed == o.speed;
  }
  void validate() const;

  // Canonical caption; bijective with (shape, direction, speed).
  std::string caption() const;
};

// All valid (shape, direction, speed) combinations; n_frames defaulted.
std::vector<ToyMotionSpec> all_toy_classes();

// Canonical caption -> spec; nullopt for strings outside the grammar.
std::optional<ToyMotionSpec> spec_from_caption(const std::string& caption);

// Dense class index in [0, all_toy_classes().size()).
int toy_class_index(const ToyMotionSpec& spec);

// Parametric trajectory plus caption. Gaussian jitter of std noise_scale is
// applied to positions; derived fields are computed from the jittered
// positions.
std::pair<MotionSequence, std::string> generate_item(const ToyMotionSpec& spec,
                                                     double noise_scale,
                                                     Rng& rng);

// Rule-based oracle inverting generate_item at calibration noise.
// Thresholds: mean turn/frame |kappa| > 0.02 => circle; >= 3 perpendicular
// reversals => zigzag; net displacement < 0.05 (and near-zero speed) => still;
// mean speed boundary slow/fast at 0.025 units/frame.
ToyMotionSpec classify_motion(const MotionSequence& seq);

struct DatasetManifest {
  int n_items = 0;
  uint64_t seed = 0;
  double train_ratio = 0.8, val_ratio = 0.1, test_ratio = 0.1;
  std::string schema_name = "toy";
  int grammar_version = 1;
  uint64_t content_hash = 0;
};

// Writes {train,val,test}.pkmo, {train,val,test}.captions and manifest.json
// into out_dir. Deterministic for (seed, n_items, grammar_version).
DatasetManifest generate_dataset(int n_items, uint64_t seed,
                                 const std::string& out_dir,
                                 double noise_scale = 0.002);

DatasetManifest read_manifest(const std::string& out_dir);

// Length-prefixed UTF-8 caption container.
void write_captions(const std::string& path, const std::vector<std::string>& caps);
std::vector<std::string> read_captions(const std::string& path);

struct ToySplit {
  std::vector<MotionSequence> motions;
  std::vector<std::string> captions;
};

ToySplit load_split(const std::string& dataset_dir, const std::string& split);

}  // namespace packdit
