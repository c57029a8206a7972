#include "packdit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "packdit/rng.hpp"

namespace packdit {

const char kExtractorId[] = "toy-stats-v1";

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_toy(const MotionSequence& seq) {
  if (!seq.schema || seq.schema->name != "toy")
    throw ValidationError("feature extractor requires the toy schema");
}

}  // namespace

Eigen::VectorXd raw_motion_features(const MotionSequence& seq) {
  require_toy(seq);
  const int off = seq.schema->field_offset("position_xy");
  const int n = seq.n_frames();
  Eigen::VectorXd x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x(i) = seq.data(i, off);
    y(i) = seq.data(i, off + 1);
  }

  // Prefilter: smooth frame-to-frame displacements with a short moving
  // average and reintegrate. Applied identically to every input, this keeps
  // distribution metrics focused on trajectory structure instead of
  // frame-level jitter, while the window stays short against the fastest
  // class dynamics.
  if (n > 2) {
    const int m0 = n - 1;
    Eigen::VectorXd dx(m0), dy(m0);
    for (int i = 0; i < m0; ++i) {
      dx(i) = x(i + 1) - x(i);
      dy(i) = y(i + 1) - y(i);
    }
    const int w = static_cast<int>(kFeatureSmoothWindow);
    for (int i = 0; i < m0; ++i) {
      const int lo = std::max(0, i - w / 2);
      const int hi = std::min(m0 - 1, i + w / 2);
      const double inv = 1.0 / (hi - lo + 1);
      x(i + 1) = x(i) + dx.segment(lo, hi - lo + 1).sum() * inv;
      y(i + 1) = y(i) + dy.segment(lo, hi - lo + 1).sum() * inv;
    }
  }

  Eigen::VectorXd f = Eigen::VectorXd::Zero(kFeatureDim);
  f(0) = x(n - 1) - x(0);
  f(1) = y(n - 1) - y(0);
  f(2) = x.mean();
  f(3) = y.mean();
  f(4) = std::sqrt((x.array() - x.mean()).square().mean());
  f(5) = std::sqrt((y.array() - y.mean()).square().mean());

  const int m = n - 1;
  Eigen::VectorXd vx(m), vy(m), speed(m);
  for (int i = 0; i < m; ++i) {
    vx(i) = x(i + 1) - x(i);
    vy(i) = y(i + 1) - y(i);
    speed(i) = std::hypot(vx(i), vy(i));
  }
  f(6) = speed.mean();
  f(7) = std::sqrt((speed.array() - speed.mean()).square().mean());

  // Heading statistics on frames with measurable motion.
  const double tiny = 1e-7;
  std::vector<double> heading;
  for (int i = 0; i < m; ++i)
    if (speed(i) > tiny) heading.push_back(std::atan2(vy(i), vx(i)));
  if (heading.size() >= 2) {
    // Unwrap, then least-squares slope = mean turn per frame.
    std::vector<double> h(heading);
    for (size_t i = 1; i < h.size(); ++i) {
      double d = h[i] - h[i - 1];
      while (d > kPi) d -= 2 * kPi;
      while (d < -kPi) d += 2 * kPi;
      h[i] = h[i - 1] + d;
    }
    const double k = static_cast<double>(h.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < h.size(); ++i) {
      sx += static_cast<double>(i);
      sy += h[i];
      sxx += static_cast<double>(i) * static_cast<double>(i);
      sxy += static_cast<double>(i) * h[i];
    }
    const double denom = k * sxx - sx * sx;
    const double slope = denom > 0 ? (k * sxy - sx * sy) / denom : 0.0;
    const double icept = (sy - slope * sx) / k;
    double rss = 0;
    for (size_t i = 0; i < h.size(); ++i) {
      const double r = h[i] - (icept + slope * static_cast<double>(i));
      rss += r * r;
    }
    f(8) = slope;
    f(10) = std::sqrt(rss / k);
    double c = 0, s = 0;
    for (double a : heading) {
      c += std::cos(a);
      s += std::sin(a);
    }
    f(13) = c / static_cast<double>(heading.size());
    f(14) = s / static_cast<double>(heading.size());
  }

  // Perpendicular-velocity sign reversals relative to the net direction.
  {
    double nx = f(0), ny = f(1);
    const double nn = std::hypot(nx, ny);
    if (nn > tiny) {
      nx /= nn;
      ny /= nn;
      int reversals = 0, last = 0;
      for (int i = 0; i < m; ++i) {
        const double perp = -ny * vx(i) + nx * vy(i);
        const int sign = perp > 1e-4 ? 1 : perp < -1e-4 ? -1 : 0;
        if (sign != 0) {
          if (last != 0 && sign != last) ++reversals;
          last = sign;
        }
      }
      f(9) = static_cast<double>(reversals) / m;
    }
  }

  // Spectral energy of the centered trajectory, split at bin n/8.
  {
    Eigen::VectorXd cx = x.array() - x.mean();
    Eigen::VectorXd cy = y.array() - y.mean();
    const int half = n / 2;
    const int split = std::max(1, n / 8);
    double low = 0, high = 0;
    for (int k = 1; k <= half; ++k) {
      double rex = 0, imx = 0, rey = 0, imy = 0;
      for (int t = 0; t < n; ++t) {
        const double a = 2 * kPi * k * t / n;
        rex += cx(t) * std::cos(a);
        imx -= cx(t) * std::sin(a);
        rey += cy(t) * std::cos(a);
        imy -= cy(t) * std::sin(a);
      }
      const double e = (rex * rex + imx * imx + rey * rey + imy * imy) / (n * n);
      (k < split ? low : high) += e;
    }
    f(11) = low;
    f(12) = high;
  }

  f(15) = static_cast<double>(n) / 64.0;
  return f;
}

FeatureExtractor FeatureExtractor::fit(
    const std::vector<MotionSequence>& corpus) {
  if (corpus.empty()) throw ValidationError("FeatureExtractor::fit: empty corpus");
  Eigen::MatrixXd raw(corpus.size(), kFeatureDim);
  for (size_t i = 0; i < corpus.size(); ++i)
    raw.row(static_cast<Eigen::Index>(i)) = raw_motion_features(corpus[i]);
  FeatureExtractor ex;
  ex.mean = raw.colwise().mean();
  Eigen::VectorXd var =
      (raw.rowwise() - ex.mean.transpose()).array().square().colwise().mean();
  ex.std = var.array().sqrt().max(1e-8);
  return ex;
}

FeatureSet extract_features(const std::vector<MotionSequence>& motions,
                            const FeatureExtractor& ex,
                            const std::string& source) {
  if (motions.empty()) throw ValidationError("extract_features: empty input");
  FeatureSet fs;
  fs.source = source;
  fs.extractor_id = ex.id;
  fs.features.resize(motions.size(), kFeatureDim);
  for (size_t i = 0; i < motions.size(); ++i) {
    const Eigen::VectorXd raw = raw_motion_features(motions[i]);
    // Winsorize at 4 sigma so single outlier sequences have bounded influence
    // on distribution statistics (FID covariances in particular).
    fs.features.row(static_cast<Eigen::Index>(i)) =
        ((raw - ex.mean).array() / ex.std.array())
            .min(kFeatureZClip)
            .max(-kFeatureZClip)
            .transpose();
  }
  return fs;
}

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& feats,
                           const Eigen::VectorXd& mu) {
  const Eigen::MatrixXd c = feats.rowwise() - mu.transpose();
  return (c.transpose() * c) / static_cast<double>(feats.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const FeatureSet& a, const FeatureSet& b) {
  if (a.extractor_id != b.extractor_id)
    throw ValidationError("fid: extractor_id mismatch");
  const int d = static_cast<int>(a.features.cols());
  if (a.features.rows() < d + 1 || b.features.rows() < d + 1)
    throw ValidationError("fid: need at least d+1 samples per set");

  const Eigen::VectorXd mu_a = a.features.colwise().mean();
  const Eigen::VectorXd mu_b = b.features.colwise().mean();
  const Eigen::MatrixXd eps = 1e-6 * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sa = covariance(a.features, mu_a) + eps;
  const Eigen::MatrixXd sb = covariance(b.features, mu_b) + eps;

  const Eigen::MatrixXd ra = psd_sqrt(sa);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ra * sb * ra);
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double val = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() -
                     2.0 * tr_cross;
  return std::max(0.0, val);
}

double diversity(const FeatureSet& a, int n_pairs, uint64_t seed) {
  const int n = static_cast<int>(a.features.rows());
  if (n < 2) throw ValidationError("diversity: need at least 2 samples");
  if (n_pairs < 1) throw ValidationError("diversity: n_pairs must be positive");
  Rng rng(seed);
  double sum = 0;
  for (int p = 0; p < n_pairs; ++p) {
    const int i = static_cast<int>(rng.uniform_int(0, n - 1));
    int j = i;
    while (j == i) j = static_cast<int>(rng.uniform_int(0, n - 1));
    sum += (a.features.row(i) - a.features.row(j)).norm();
  }
  return sum / n_pairs;
}

RPrecision r_precision(const Eigen::MatrixXd& motion_emb,
                       const Eigen::MatrixXd& text_emb, int pool_size,
                       uint64_t seed) {
  const int n = static_cast<int>(motion_emb.rows());
  if (text_emb.rows() != n)
    throw ValidationError("r_precision: row count mismatch");
  if (pool_size < 2 || n < pool_size)
    throw ValidationError("r_precision: insufficient pool");

  Rng rng(seed);
  int hits1 = 0, hits2 = 0, hits3 = 0;
  std::vector<int> others(n - 1);
  for (int q = 0; q < n; ++q) {
    int w = 0;
    for (int i = 0; i < n; ++i)
      if (i != q) others[w++] = i;
    // Partial Fisher-Yates: first pool_size-1 entries are the distractors.
    for (int i = 0; i < pool_size - 1; ++i) {
      const int j = static_cast<int>(rng.uniform_int(i, n - 2));
      std::swap(others[i], others[j]);
    }
    const double d_true = (text_emb.row(q) - motion_emb.row(q)).norm();
    int rank = 1;
    for (int i = 0; i < pool_size - 1; ++i)
      if ((text_emb.row(q) - motion_emb.row(others[i])).norm() < d_true)
        ++rank;
    if (rank <= 1) ++hits1;
    if (rank <= 2) ++hits2;
    if (rank <= 3) ++hits3;
  }
  return {static_cast<double>(hits1) / n, static_cast<double>(hits2) / n,
          static_cast<double>(hits3) / n};
}

RetrievalSpace RetrievalSpace::fit(const FeatureSet& real,
                                   const std::vector<int>& class_ids,
                                   int n_classes) {
  if (static_cast<size_t>(real.features.rows()) != class_ids.size())
    throw ValidationError("RetrievalSpace::fit: length mismatch");
  RetrievalSpace sp;
  sp.n_classes = n_classes;
  sp.centroids = Eigen::MatrixXd::Zero(n_classes, real.features.cols());
  std::vector<int> counts(n_classes, 0);
  for (size_t i = 0; i < class_ids.size(); ++i) {
    const int c = class_ids[i];
    if (c < 0 || c >= n_classes)
      throw ValidationError("RetrievalSpace::fit: class id out of range");
    sp.centroids.row(c) += real.features.row(static_cast<Eigen::Index>(i));
    ++counts[c];
  }
  for (int c = 0; c < n_classes; ++c)
    if (counts[c] > 0) sp.centroids.row(c) /= counts[c];
  return sp;
}

Eigen::MatrixXd motion_embedding(const RetrievalSpace& sp,
                                 const FeatureSet& feats,
                                 const std::vector<int>& class_ids) {
  if (static_cast<size_t>(feats.features.rows()) != class_ids.size())
    throw ValidationError("motion_embedding: length mismatch");
  const int d = static_cast<int>(feats.features.cols());
  Eigen::MatrixXd emb =
      Eigen::MatrixXd::Zero(feats.features.rows(), sp.n_classes + d);
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    const int c = class_ids[static_cast<size_t>(i)];
    if (c >= 0 && c < sp.n_classes) emb(i, c) = 1.0;
    emb.block(i, sp.n_classes, 1, d) = feats.features.row(i);
  }
  return emb;
}

Eigen::MatrixXd text_embedding(const RetrievalSpace& sp,
                               const std::vector<int>& class_ids) {
  const int d = static_cast<int>(sp.centroids.cols());
  Eigen::MatrixXd emb =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(class_ids.size()),
                            sp.n_classes + d);
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    const int c = class_ids[static_cast<size_t>(i)];
    if (c >= 0 && c < sp.n_classes) {
      emb(i, c) = 1.0;
      emb.block(i, sp.n_classes, 1, d) = sp.centroids.row(c);
    }
  }
  return emb;
}

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

using NgramCounts = std::map<std::string, int>;

NgramCounts count_ngrams(const std::vector<std::string>& words, int n) {
  NgramCounts c;
  for (size_t i = 0; i + n <= words.size(); ++i) {
    std::string key = words[i];
    for (int k = 1; k < n; ++k) key += "\x1f" + words[i + k];
    ++c[key];
  }
  return c;
}

}  // namespace

double bleu(const std::string& candidate,
            const std::vector<std::string>& references, int max_n) {
  if (references.empty()) throw ValidationError("bleu: no references");
  const auto cand = split_words(candidate);
  if (cand.empty()) return 0.0;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(split_words(r));

  const int c = static_cast<int>(cand.size());
  int r_best = static_cast<int>(refs[0].size());
  for (const auto& r : refs) {
    const int len = static_cast<int>(r.size());
    if (std::abs(len - c) < std::abs(r_best - c) ||
        (std::abs(len - c) == std::abs(r_best - c) && len < r_best))
      r_best = len;
  }
  const double bp = c < r_best ? std::exp(1.0 - static_cast<double>(r_best) / c)
                               : 1.0;

  double log_sum = 0;
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts cc = count_ngrams(cand, n);
    int clipped = 0, total = 0;
    for (const auto& [key, cnt] : cc) {
      int max_ref = 0;
      for (const auto& r : refs) {
        const auto rc = count_ngrams(r, n);
        const auto it = rc.find(key);
        if (it != rc.end()) max_ref = std::max(max_ref, it->second);
      }
      clipped += std::min(cnt, max_ref);
      total += cnt;
    }
    double p;
    if (n == 1) {
      if (clipped == 0) return 0.0;
      p = static_cast<double>(clipped) / total;
    } else {
      p = static_cast<double>(clipped + 1) / (total + 1);
    }
    log_sum += std::log(p);
  }
  return bp * std::exp(log_sum / max_n);
}

double cider(const std::vector<std::string>& candidates,
             const std::vector<std::vector<std::string>>& reference_sets,
             const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw ValidationError("cider: empty corpus");
  if (candidates.size() != reference_sets.size())
    throw ValidationError("cider: candidate/reference length mismatch");
  if (candidates.empty()) throw ValidationError("cider: no candidates");
  for (const auto& rs : reference_sets)
    if (rs.empty()) throw ValidationError("cider: empty reference set");

  constexpr int kMaxN = 4;
  // Document frequencies per n-gram order.
  std::vector<NgramCounts> df(kMaxN);
  for (const auto& doc : corpus) {
    const auto words = split_words(doc);
    for (int n = 1; n <= kMaxN; ++n)
      for (const auto& [key, cnt] : count_ngrams(words, n)) ++df[n - 1][key];
  }
  const double logN = std::log(static_cast<double>(corpus.size()));

  auto tfidf = [&](const std::vector<std::string>& words, int n) {
    std::map<std::string, double> v;
    const auto counts = count_ngrams(words, n);
    double total = 0;
    for (const auto& [key, cnt] : counts) total += cnt;
    if (total == 0) return v;
    for (const auto& [key, cnt] : counts) {
      const auto it = df[n - 1].find(key);
      const double d = it == df[n - 1].end() ? 1.0 : std::max(1, it->second);
      v[key] = (cnt / total) * (logN - std::log(d));
    }
    return v;
  };
  auto cosine = [](const std::map<std::string, double>& a,
                   const std::map<std::string, double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (const auto& [k, v] : a) {
      na += v * v;
      const auto it = b.find(k);
      if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [k, v] : b) nb += v * v;
    if (na == 0 || nb == 0) return 0.0;
    return dot / std::sqrt(na * nb);
  };

  double score = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto cw = split_words(candidates[i]);
    double per_n = 0;
    for (int n = 1; n <= kMaxN; ++n) {
      const auto cv = tfidf(cw, n);
      double per_ref = 0;
      for (const auto& ref : reference_sets[i])
        per_ref += cosine(cv, tfidf(split_words(ref), n));
      per_n += per_ref / reference_sets[i].size();
    }
    score += per_n / kMaxN;
  }
  return 10.0 * score / candidates.size();
}

double oracle_match(const std::vector<MotionSequence>& samples,
                    const std::vector<std::string>& prompts) {
  if (samples.size() != prompts.size())
    throw ValidationError("oracle_match: length mismatch");
  if (samples.empty()) throw ValidationError("oracle_match: empty input");
  int hits = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    require_toy(samples[i]);
    const auto spec = spec_from_caption(prompts[i]);
    if (!spec) continue;
    if (toy_class_index(classify_motion(samples[i])) ==
        toy_class_index(*spec))
      ++hits;
  }
  return static_cast<double>(hits) / samples.size();
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "report_version: " << report_version << "\n";
  os << "extractor_id: " << extractor_id << "\n";
  os << "n_samples: " << n_samples << "\n";
  os << "seed: " << seed << "\n";
  if (fid) os << "fid: " << *fid << "\n";
  if (diversity) os << "diversity: " << *diversity << "\n";
  if (r_precision) {
    os << "r_precision:\n";
    os << "  top1: " << r_precision->top1 << "\n";
    os << "  top2: " << r_precision->top2 << "\n";
    os << "  top3: " << r_precision->top3 << "\n";
  }
  if (bleu1 || bleu2 || bleu3 || bleu4) {
    os << "bleu:\n";
    if (bleu1) os << "  bleu1: " << *bleu1 << "\n";
    if (bleu2) os << "  bleu2: " << *bleu2 << "\n";
    if (bleu3) os << "  bleu3: " << *bleu3 << "\n";
    if (bleu4) os << "  bleu4: " << *bleu4 << "\n";
  }
  if (cider) os << "cider: " << *cider << "\n";
  if (oracle_match) os << "oracle_match: " << *oracle_match << "\n";
  return os.str();
}

void write_report(const std::string& path, const MetricsReport& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << r.to_text();
}

}  // namespace packdit
