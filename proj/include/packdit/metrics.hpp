#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "packdit/motion.hpp"
#include "packdit/toyset.hpp"

namespace packdit {

// Hand-crafted per-sequence statistics in place of a learned encoder:
// deterministic, frozen, and unit-testable.
constexpr int kFeatureDim = 16;
constexpr double kFeatureZClip = 4.0;
constexpr int kFeatureSmoothWindow = 5;
extern const char kExtractorId[];  // "toy-stats-v1"

// Raw (un-normalized) d=16 statistics vector for one toy sequence.
Eigen::VectorXd raw_motion_features(const MotionSequence& seq);

// Z-scoring statistics frozen on a real corpus.
struct FeatureExtractor {
  std::string id = "toy-stats-v1";
  Eigen::VectorXd mean, std;

  static FeatureExtractor fit(const std::vector<MotionSequence>& corpus);
};

struct FeatureSet {
  Eigen::MatrixXd features;  // n x d
  std::string source;        // "real" or "generated"
  std::string extractor_id;
};

FeatureSet extract_features(const std::vector<MotionSequence>& motions,
                            const FeatureExtractor& ex,
                            const std::string& source);

// Frechet distance between Gaussian fits; covariance square root via
// eigendecomposition with negative eigenvalues clamped and +1e-6 I.
double fid(const FeatureSet& a, const FeatureSet& b);

// Mean Euclidean distance over n_pairs random disjoint index pairs.
double diversity(const FeatureSet& a, int n_pairs, uint64_t seed);

struct RPrecision {
  double top1 = 0, top2 = 0, top3 = 0;
};

// Retrieval accuracy: row i of the two embedding matrices is a true pair;
// each query ranks its true partner among pool_size-1 sampled distractors.
RPrecision r_precision(const Eigen::MatrixXd& motion_emb,
                       const Eigen::MatrixXd& text_emb, int pool_size,
                       uint64_t seed);

// Shared retrieval embedding: oracle class one-hot concatenated with
// extractor features (motions) or class centroids of real features (texts).
struct RetrievalSpace {
  int n_classes = 0;
  Eigen::MatrixXd centroids;  // n_classes x d, from a real FeatureSet

  static RetrievalSpace fit(const FeatureSet& real,
                            const std::vector<int>& class_ids, int n_classes);
};

Eigen::MatrixXd motion_embedding(const RetrievalSpace& sp,
                                 const FeatureSet& feats,
                                 const std::vector<int>& class_ids);
Eigen::MatrixXd text_embedding(const RetrievalSpace& sp,
                               const std::vector<int>& class_ids);

// Sentence BLEU with clipped n-gram precisions, geometric mean over n=1..4,
// brevity penalty, add-one smoothing on n >= 2.
double bleu(const std::string& candidate,
            const std::vector<std::string>& references, int max_n = 4);

// Plain CIDEr (TF-IDF n-gram cosine, n=1..4, scaled by 10).
double cider(const std::vector<std::string>& candidates,
             const std::vector<std::vector<std::string>>& reference_sets,
             const std::vector<std::string>& corpus);

// Fraction of samples whose rule-based class matches the prompt's class.
// Prompts outside the caption grammar count as mismatches.
double oracle_match(const std::vector<MotionSequence>& samples,
                    const std::vector<std::string>& prompts);

struct MetricsReport {
  int report_version = 1;
  std::string extractor_id;
  int n_samples = 0;
  uint64_t seed = 0;
  std::optional<double> fid, diversity;
  std::optional<RPrecision> r_precision;
  std::optional<double> bleu1, bleu2, bleu3, bleu4;
  std::optional<double> cider;
  std::optional<double> oracle_match;

  // Stable-key-order text form.
  std::string to_text() const;
};

void write_report(const std::string& path, const MetricsReport& r);

}  // namespace packdit
