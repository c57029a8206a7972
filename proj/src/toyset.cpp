#include "packdit/toyset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "packdit/io_util.hpp"

namespace packdit {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(ToyShape s) {
  switch (s) {
    case ToyShape::Line: return "line";
    case ToyShape::Circle: return "circle";
    case ToyShape::Zigzag: return "zigzag";
    case ToyShape::Still: return "still";
  }
  return "?";
}

std::string to_string(ToyDirection d) {
  switch (d) {
    case ToyDirection::Left: return "left";
    case ToyDirection::Right: return "right";
    case ToyDirection::Up: return "up";
    case ToyDirection::Down: return "down";
    case ToyDirection::Cw: return "cw";
    case ToyDirection::Ccw: return "ccw";
    case ToyDirection::None: return "none";
  }
  return "?";
}

std::string to_string(ToySpeed s) {
  switch (s) {
    case ToySpeed::Slow: return "slow";
    case ToySpeed::Fast: return "fast";
    case ToySpeed::None: return "none";
  }
  return "?";
}

void ToyMotionSpec::validate() const {
  if (n_frames < 32 || n_frames > 64)
    throw ValidationError("ToyMotionSpec: n_frames outside [32, 64]");
  const bool planar_dir = direction == ToyDirection::Left ||
                          direction == ToyDirection::Right ||
                          direction == ToyDirection::Up ||
                          direction == ToyDirection::Down;
  switch (shape) {
    case ToyShape::Still:
      if (direction != ToyDirection::None || speed != ToySpeed::None)
        throw ValidationError("still motion must have direction=none, speed=none");
      break;
    case ToyShape::Line:
    case ToyShape::Zigzag:
      if (!planar_dir || speed == ToySpeed::None)
        throw ValidationError("line/zigzag require planar direction and a speed");
      break;
    case ToyShape::Circle:
      if ((direction != ToyDirection::Cw && direction != ToyDirection::Ccw) ||
          speed == ToySpeed::None)
        throw ValidationError("circle requires cw/ccw direction and a speed");
      break;
  }
}

std::string ToyMotionSpec::caption() const {
  validate();
  auto adverb = [&] { return speed == ToySpeed::Slow ? "slowly" : "quickly"; };
  switch (shape) {
    case ToyShape::Still:
      return "a point stays still";
    case ToyShape::Line:
      return std::string("a point moves ") + to_string(direction) + " " + adverb();
    case ToyShape::Zigzag:
      return std::string("a point moves in a zigzag ") + to_string(direction) +
             " " + adverb();
    case ToyShape::Circle:
      return std::string("a point moves in a circle ") +
             (direction == ToyDirection::Cw ? "clockwise" : "counterclockwise") +
             " " + adverb();
  }
  return "";
}

std::vector<ToyMotionSpec> all_toy_classes() {
  std::vector<ToyMotionSpec> out;
  const ToyDirection planar[] = {ToyDirection::Left, ToyDirection::Right,
                                 ToyDirection::Up, ToyDirection::Down};
  const ToySpeed speeds[] = {ToySpeed::Slow, ToySpeed::Fast};
  for (auto d : planar)
    for (auto s : speeds) out.push_back({ToyShape::Line, d, s, 48});
  for (auto d : planar)
    for (auto s : speeds) out.push_back({ToyShape::Zigzag, d, s, 48});
  for (auto d : {ToyDirection::Cw, ToyDirection::Ccw})
    for (auto s : speeds) out.push_back({ToyShape::Circle, d, s, 48});
  out.push_back({ToyShape::Still, ToyDirection::None, ToySpeed::None, 48});
  return out;
}

int toy_class_index(const ToyMotionSpec& spec) {
  const auto classes = all_toy_classes();
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == spec) return static_cast<int>(i);
  throw ValidationError("toy_class_index: invalid spec");
}

std::optional<ToyMotionSpec> spec_from_caption(const std::string& caption) {
  for (const auto& c : all_toy_classes())
    if (c.caption() == caption) return c;
  return std::nullopt;
}

namespace {

constexpr double kSlowStep = 0.01, kFastStep = 0.04;
constexpr double kSlowOmega = 0.05, kFastOmega = 0.15;
constexpr double kCircleRadius = 0.3;
constexpr int kZigzagPeriod = 8;

Eigen::Vector2d planar_unit(ToyDirection d) {
  switch (d) {
    case ToyDirection::Left: return {-1, 0};
    case ToyDirection::Right: return {1, 0};
    case ToyDirection::Up: return {0, 1};
    case ToyDirection::Down: return {0, -1};
    default: throw ValidationError("not a planar direction");
  }
}

}  // namespace

std::pair<MotionSequence, std::string> generate_item(const ToyMotionSpec& spec,
                                                     double noise_scale,
                                                     Rng& rng) {
  spec.validate();
  const int n = spec.n_frames;
  Eigen::MatrixXd pos(n, 2);

  switch (spec.shape) {
    case ToyShape::Still:
      pos.setZero();
      break;
    case ToyShape::Line: {
      const Eigen::Vector2d d = planar_unit(spec.direction);
      const double s = spec.speed == ToySpeed::Slow ? kSlowStep : kFastStep;
      for (int t = 0; t < n; ++t) pos.row(t) = (d * s * t).transpose();
      break;
    }
    case ToyShape::Circle: {
      const double mag = spec.speed == ToySpeed::Slow ? kSlowOmega : kFastOmega;
      const double omega = spec.direction == ToyDirection::Ccw ? mag : -mag;
      for (int t = 0; t < n; ++t) {
        const double th = omega * t;
        pos(t, 0) = kCircleRadius * (std::cos(th) - 1.0);
        pos(t, 1) = kCircleRadius * std::sin(th);
      }
      break;
    }
    case ToyShape::Zigzag: {
      const Eigen::Vector2d d = planar_unit(spec.direction);
      const Eigen::Vector2d p(-d.y(), d.x());
      const double s = spec.speed == ToySpeed::Slow ? kSlowStep : kFastStep;
      Eigen::Vector2d x(0, 0);
      for (int t = 0; t < n; ++t) {
        pos.row(t) = x.transpose();
        const double sign = ((t / kZigzagPeriod) % 2 == 0) ? 1.0 : -1.0;
        x += s * d + sign * s * p;
      }
      break;
    }
  }

  for (int t = 0; t < n; ++t) {
    pos(t, 0) += noise_scale * rng.normal();
    pos(t, 1) += noise_scale * rng.normal();
  }

  const MotionSchema* schema = schema_by_name("toy");
  MotionSequence seq;
  seq.schema = schema;
  seq.data = MatF::Zero(n, schema->total_dim);
  for (int t = 0; t < n; ++t) {
    const int tp = std::max(t, 1);
    const Eigen::Vector2d v = pos.row(tp) - pos.row(tp - 1);
    seq.data(t, 0) = static_cast<float>(pos(t, 0));
    seq.data(t, 1) = static_cast<float>(pos(t, 1));
    seq.data(t, 2) = static_cast<float>(v.x());
    seq.data(t, 3) = static_cast<float>(v.y());
    seq.data(t, 4) = static_cast<float>(std::atan2(v.y(), v.x()));
    seq.data(t, 5) = static_cast<float>(v.norm());
    const double ph = 2.0 * M_PI * t / std::max(n - 1, 1);
    seq.data(t, 6) = static_cast<float>(std::cos(ph));
    seq.data(t, 7) = static_cast<float>(std::sin(ph));
  }
  return {seq, spec.caption()};
}

namespace {

constexpr double kSpeedBoundary = 0.025;    // slow/fast split, units/frame
constexpr double kCurvatureThresh = 0.02;   // mean turn per frame => circle
constexpr double kStillNet = 0.05;          // net displacement floor
constexpr double kStillSpeed = 0.008;       // mean speed floor
constexpr int kMinReversals = 3;            // perpendicular flips => zigzag
constexpr double kReversalHysteresis = 0.005;
constexpr double kHeadingResidualMax = 0.5; // rad, circle linear-heading fit

ToyDirection dominant_direction(const Eigen::Vector2d& net) {
  if (std::abs(net.x()) >= std::abs(net.y()))
    return net.x() >= 0 ? ToyDirection::Right : ToyDirection::Left;
  return net.y() >= 0 ? ToyDirection::Up : ToyDirection::Down;
}

}  // namespace

ToyMotionSpec classify_motion(const MotionSequence& seq) {
  if (!seq.schema || seq.schema->name != "toy")
    throw ValidationError("classify_motion: toy schema required");
  const int n = seq.n_frames();
  Eigen::MatrixXd pos = seq.data.leftCols(2).cast<double>();

  // Velocities recomputed from positions, then smoothed.
  const int nv = n - 1;
  Eigen::MatrixXd vel(nv, 2);
  for (int t = 0; t < nv; ++t) vel.row(t) = pos.row(t + 1) - pos.row(t);
  const int w = 5;
  Eigen::MatrixXd sv(nv, 2);
  for (int t = 0; t < nv; ++t) {
    const int lo = std::max(0, t - w / 2), hi = std::min(nv - 1, t + w / 2);
    sv.row(t) = vel.middleRows(lo, hi - lo + 1).colwise().mean();
  }

  const Eigen::Vector2d net = pos.row(n - 1) - pos.row(0);
  const double mean_speed = sv.rowwise().norm().mean();

  if (mean_speed < kStillSpeed && net.norm() < kStillNet)
    return {ToyShape::Still, ToyDirection::None, ToySpeed::None, n};

  const ToySpeed speed =
      mean_speed > kSpeedBoundary ? ToySpeed::Fast : ToySpeed::Slow;

  // Unwrapped heading of the smoothed velocity, least-squares slope over
  // frames. The slope is the mean turn per frame (kappa); a circle also has a
  // small residual because its heading is linear in time.
  std::vector<double> theta(nv);
  double acc = std::atan2(sv(0, 1), sv(0, 0));
  theta[0] = acc;
  for (int t = 1; t < nv; ++t) {
    const double raw = std::atan2(sv(t, 1), sv(t, 0));
    double prev = std::fmod(acc, 2.0 * M_PI);
    double d = raw - prev;
    while (d > M_PI) d -= 2.0 * M_PI;
    while (d < -M_PI) d += 2.0 * M_PI;
    acc += d;
    theta[t] = acc;
  }
  double tbar = (nv - 1) / 2.0, ybar = 0;
  for (double th : theta) ybar += th;
  ybar /= nv;
  double sxy = 0, sxx = 0;
  for (int t = 0; t < nv; ++t) {
    sxy += (t - tbar) * (theta[t] - ybar);
    sxx += (t - tbar) * (t - tbar);
  }
  const double kappa = sxy / sxx;
  double resid = 0;
  for (int t = 0; t < nv; ++t) {
    const double e = theta[t] - (ybar + kappa * (t - tbar));
    resid += e * e;
  }
  resid = std::sqrt(resid / nv);

  if (std::abs(kappa) > kCurvatureThresh && resid < kHeadingResidualMax)
    return {ToyShape::Circle,
            kappa > 0 ? ToyDirection::Ccw : ToyDirection::Cw, speed, n};

  // Reversal count of the velocity component perpendicular to the net
  // direction, with hysteresis against jitter.
  Eigen::Vector2d axis = net.norm() > 1e-9 ? net.normalized() : Eigen::Vector2d(1, 0);
  const Eigen::Vector2d perp(-axis.y(), axis.x());
  int reversals = 0, state = 0;
  for (int t = 0; t < nv; ++t) {
    const double vp = sv.row(t).dot(perp);
    int s = state;
    if (vp > kReversalHysteresis) s = 1;
    else if (vp < -kReversalHysteresis) s = -1;
    if (state != 0 && s != 0 && s != state) ++reversals;
    if (s != 0) state = s;
  }

  if (reversals >= kMinReversals)
    return {ToyShape::Zigzag, dominant_direction(net), speed, n};
  return {ToyShape::Line, dominant_direction(net), speed, n};
}

void write_captions(const std::string& path, const std::vector<std::string>& caps) {
  auto os = io::open_out(path);
  io::write_u32(os, static_cast<uint32_t>(caps.size()));
  for (const auto& c : caps) io::write_string(os, c);
}

std::vector<std::string> read_captions(const std::string& path) {
  auto is = io::open_in(path);
  const uint32_t n = io::read_u32(is);
  std::vector<std::string> caps(n);
  for (auto& c : caps) c = io::read_string(is);
  if (!is) throw std::runtime_error("truncated caption file: " + path);
  return caps;
}

namespace {

uint64_t hash_file(const std::string& path, uint64_t h) {
  auto is = io::open_in(path);
  char buf[4096];
  while (is) {
    is.read(buf, sizeof(buf));
    h = io::fnv1a(buf, static_cast<size_t>(is.gcount()), h);
  }
  return h;
}

}  // namespace

DatasetManifest generate_dataset(int n_items, uint64_t seed,
                                 const std::string& out_dir,
                                 double noise_scale) {
  if (n_items < 10) throw ValidationError("generate_dataset: n_items must be >= 10");
  fs::create_directories(out_dir);
  const auto classes = all_toy_classes();

  std::vector<MotionSequence> motions;
  std::vector<std::string> captions;
  Rng root(seed);
  for (int i = 0; i < n_items; ++i) {
    Rng item_rng = root.fork(static_cast<uint64_t>(i));
    ToyMotionSpec spec = classes[item_rng.uniform_int(0, classes.size() - 1)];
    spec.n_frames = static_cast<int>(item_rng.uniform_int(32, 64));
    auto [seq, cap] = generate_item(spec, noise_scale, item_rng);
    motions.push_back(std::move(seq));
    captions.push_back(cap);
  }

  DatasetManifest m;
  m.n_items = n_items;
  m.seed = seed;

  const int n_train = static_cast<int>(n_items * m.train_ratio);
  const int n_val = static_cast<int>(n_items * m.val_ratio);
  auto slice = [&](int lo, int hi, const std::string& split) {
    std::vector<MotionSequence> ms(motions.begin() + lo, motions.begin() + hi);
    std::vector<std::string> cs(captions.begin() + lo, captions.begin() + hi);
    write_pkmo(out_dir + "/" + split + ".pkmo", ms);
    write_captions(out_dir + "/" + split + ".captions", cs);
  };
  slice(0, n_train, "train");
  slice(n_train, n_train + n_val, "val");
  slice(n_train + n_val, n_items, "test");

  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* split : {"train", "val", "test"}) {
    h = hash_file(out_dir + "/" + split + ".pkmo", h);
    h = hash_file(out_dir + "/" + split + ".captions", h);
  }
  m.content_hash = h;

  json j;
  j["n_items"] = m.n_items;
  j["seed"] = m.seed;
  j["split_ratios"] = {m.train_ratio, m.val_ratio, m.test_ratio};
  j["schema"] = m.schema_name;
  j["grammar_version"] = m.grammar_version;
  j["content_hash"] = m.content_hash;
  std::ofstream(out_dir + "/manifest.json") << j.dump(2) << "\n";
  return m;
}

DatasetManifest read_manifest(const std::string& out_dir) {
  std::ifstream is(out_dir + "/manifest.json");
  if (!is) throw std::runtime_error("missing manifest in " + out_dir);
  json j = json::parse(is);
  DatasetManifest m;
  m.n_items = j.at("n_items");
  m.seed = j.at("seed");
  m.schema_name = j.at("schema");
  m.grammar_version = j.at("grammar_version");
  m.content_hash = j.at("content_hash");
  return m;
}

ToySplit load_split(const std::string& dataset_dir, const std::string& split) {
  ToySplit s;
  s.motions = read_pkmo(dataset_dir + "/" + split + ".pkmo");
  s.captions = read_captions(dataset_dir + "/" + split + ".captions");
  if (s.motions.size() != s.captions.size())
    throw std::runtime_error("split size mismatch in " + dataset_dir);
  return s;
}

}  // namespace packdit
