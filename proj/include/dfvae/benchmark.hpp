#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfvae/media.hpp"

namespace dfvae {

// ---------------------------------------------------------------------------
// Identity-grouped splits.

struct IdentitySplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  std::map<std::string, Split> assignment() const;
};

/// Shuffles the identities with `seed` and cuts them by `ratios` using
/// largest-remainder rounding (ties go to the earlier part).
IdentitySplit split_by_identity(std::vector<std::string> identities, std::array<int, 3> ratios = {7, 1, 2},
                                std::uint64_t seed = 0);

/// Sets the split of every non-hidden entry from its identity.
DatasetManifest assign_splits(DatasetManifest manifest, const IdentitySplit& split);

// ---------------------------------------------------------------------------
// Detectors.

enum class Granularity { image_level, clip_level };

inline constexpr int kClipSegmentLength = 16;

class Detector {
 public:
  virtual ~Detector() = default;
  virtual Granularity granularity() const = 0;
  /// image_level: one fake-probability per frame of `clip`. clip_level: one
  /// probability for `clip`, which is a segment of at most 16 frames.
  virtual std::vector<double> raw_scores(const VideoClip& clip) const = 0;
  /// Clip labels carry the ground truth. No-op for fixed detectors.
  virtual void fit(const std::vector<VideoClip>& /*clips*/) {}
};

using DetectorFactory = std::function<std::unique_ptr<Detector>()>;

/// Clip score: the frame-score mean for image-level detectors; for clip-level
/// ones the mean over non-overlapping 16-frame segments (a clip shorter than
/// 16 frames is one segment; a trailing partial segment is dropped otherwise).
/// Throws DetectorError naming the clip for non-finite or out-of-range scores.
double clip_score(const Detector& detector, const VideoClip& clip);

/// Looks the truth up by clip id; `invert` makes it the anti-oracle.
class OracleDetector final : public Detector {
 public:
  explicit OracleDetector(std::map<std::string, Label> truth, bool invert = false);
  Granularity granularity() const override { return Granularity::clip_level; }
  std::vector<double> raw_scores(const VideoClip& clip) const override;

 private:
  std::map<std::string, Label> truth_;
  bool invert_;
};

class ConstantDetector final : public Detector {
 public:
  explicit ConstantDetector(double value, Granularity granularity = Granularity::image_level)
      : value_(value), granularity_(granularity) {}
  Granularity granularity() const override { return granularity_; }
  std::vector<double> raw_scores(const VideoClip& clip) const override;

 private:
  double value_;
  Granularity granularity_;
};

/// Fixed Laplacian and frame-difference statistics feeding a logistic
/// regression. A harness detector only.
class ReferenceDetector final : public Detector {
 public:
  static constexpr int kFeatures = 6;
  using Features = Eigen::Matrix<double, kFeatures, 1>;

  Granularity granularity() const override { return Granularity::clip_level; }
  std::vector<double> raw_scores(const VideoClip& clip) const override;
  void fit(const std::vector<VideoClip>& clips) override;

  static Features features(const VideoClip& clip);
  bool fitted() const { return fitted_; }

 private:
  Features mean_ = Features::Zero();
  Features scale_ = Features::Ones();
  Features weights_ = Features::Zero();
  double bias_ = 0.0;
  bool fitted_ = false;
};

// ---------------------------------------------------------------------------
// Evaluation.

struct ClipResult {
  std::string clip_id;
  double score = 0.0;
  bool predicted_fake = false;
  Label truth = Label::unknown;
};

struct EvalReport {
  double accuracy = 0.0;
  int n = 0;
  std::vector<ClipResult> per_clip;
  double threshold = 0.5;
};

nlohmann::json to_json(const EvalReport& report);

/// predicted fake ⇔ score > threshold. Every clip needs a real/fake label.
EvalReport evaluate(const Detector& detector, const std::vector<VideoClip>& clips, double threshold = 0.5);
/// Evaluates the entries of `split` (all entries when nullopt).
EvalReport evaluate(const Detector& detector, const DatasetManifest& manifest, const std::filesystem::path& root,
                    double threshold = 0.5, std::optional<Split> split = Split::test);

// ---------------------------------------------------------------------------
// Hidden test service and human ratings.

struct RatingRecord {
  std::string clip_id;
  std::string participant_id;
  int score = 0;          // 1 clearly disagree … 5 clearly agree that the clip looks real
  std::string timestamp;  // ISO 8601

  void validate() const;
};

nlohmann::json to_json(const RatingRecord& record);
RatingRecord rating_from_json(const nlohmann::json& j);

struct RatingSummary {
  std::array<int, 5> counts{};
  std::array<double, 5> percent{};  // share of each level, in percent
  double real_fraction = 0.0;       // (#4 + #5) / n; 0 when n = 0
  int n = 0;
  bool empty() const { return n == 0; }
};

nlohmann::json to_json(const RatingSummary& summary);

/// Throws ValidationError for scores outside 1..5.
RatingSummary aggregate_ratings(const std::vector<RatingRecord>& records);

/// Keeps candidates that fooled at least ⌈n_raters/2⌉ raters (score 4 or 5).
/// Throws InsufficientRatingsError when a candidate has fewer than n_raters.
std::vector<std::string> curate_hidden(const std::vector<std::string>& candidates,
                                       const std::vector<RatingRecord>& ratings, int n_raters);

struct SubmissionResult {
  double accuracy = 0.0;
  int n = 0;
};

/// Server side of the hidden test: owns the label vault and the rating log.
/// Thread-safe.
class HiddenService {
 public:
  /// `vault` holds the hidden entries with their labels. `ratings_log`, when
  /// set, is a JSON Lines file that accepted ratings are appended to and that
  /// is replayed on construction.
  HiddenService(DatasetManifest vault, std::filesystem::path media_root, std::filesystem::path ratings_log = {});
  static HiddenService load(const std::filesystem::path& vault_path, const std::filesystem::path& media_root,
                            const std::filesystem::path& ratings_log = {});

  std::vector<std::string> clip_ids() const;
  const std::filesystem::path& media_root() const { return media_root_; }
  /// Clip media without labels.
  VideoClip fetch_clip(const std::string& clip_id) const;

  /// Every hidden clip scored exactly once, else SubmissionError naming the
  /// missing / duplicate / unknown ids. Stateless.
  SubmissionResult submit(const std::vector<std::pair<std::string, double>>& scores, double threshold = 0.5) const;

  /// Rejects duplicates of (clip_id, participant_id) with SubmissionError.
  void add_rating(const RatingRecord& record);
  std::vector<RatingRecord> ratings() const;
  RatingSummary summary(const std::string& clip_id) const;

 private:
  std::map<std::string, Label> labels_;
  std::filesystem::path media_root_;
  std::filesystem::path ratings_log_;
  mutable std::mutex mutex_;
  std::vector<RatingRecord> ratings_;
  std::map<std::pair<std::string, std::string>, std::size_t> rating_index_;
};

// ---------------------------------------------------------------------------
// Scenarios.

/// Variant name -> (manifest, media root). Expected keys: std, std/sing,
/// std/rand, std/mix. std/sing holds the single-level family; scenarios use
/// its level-5 entries.
struct VariantRegistry {
  struct Variant {
    DatasetManifest manifest;
    std::filesystem::path root;
  };
  std::map<std::string, Variant> variants;
  const HiddenService* hidden = nullptr;
};

struct ScenarioConfig {
  std::string train_set = "std";  // std, std/sing, std/rand, std+std/sing, std+std/rand, std+std/mix
  std::string test_set = "std";   // std, std/sing, std/rand, hidden
  double threshold = 0.5;

  void validate() const;
};

/// Every train/test pairing of the detection-benchmark tables.
std::vector<ScenarioConfig> standard_scenarios();

/// Fits a fresh detector on the train split of the train set and evaluates
/// the test split of the test set. Throws LeakageError when an identity or
/// clip falls on both sides. A hidden test set goes through the service;
/// its report carries no per-clip truth.
EvalReport run_scenario(const ScenarioConfig& config, const VariantRegistry& registry, const DetectorFactory& factory);

// ---------------------------------------------------------------------------
// Metrics.

/// Rows are samples. `regularization` is added to both covariance diagonals;
/// with 0 a singular covariance throws NumericError.
double fid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b, double regularization = 0.0);

/// Rows are class-probability vectors summing to 1.
double is_score(const Eigen::MatrixXd& predictions);

struct RerenderError {
  std::vector<PlanarD> maps;  // 1×H×W per frame, on the [0,255] scale
  std::vector<double> frame_mean;
  double mean = 0.0;
};

/// Per pixel √(Σ_c (255·(a_c − b_c))²).
RerenderError rerender_error(const VideoClip& a, const VideoClip& b);

}  // namespace dfvae
