#include "dfvae/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace dfvae {

namespace fs = std::filesystem;

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

std::map<std::string, Split> IdentitySplit::assignment() const {
  std::map<std::string, Split> out;
  for (const auto& id : train) out[id] = Split::train;
  for (const auto& id : val) out[id] = Split::val;
  for (const auto& id : test) out[id] = Split::test;
  return out;
}

IdentitySplit split_by_identity(std::vector<std::string> identities, std::array<int, 3> ratios, std::uint64_t seed) {
  if (std::any_of(ratios.begin(), ratios.end(), [](int r) { return r < 0; }))
    throw ValidationError("split ratios must be non-negative");
  const int total = ratios[0] + ratios[1] + ratios[2];
  if (total <= 0) throw ValidationError("split ratios must not all be zero");
  std::sort(identities.begin(), identities.end());
  identities.erase(std::unique(identities.begin(), identities.end()), identities.end());
  const int parts = static_cast<int>(std::count_if(ratios.begin(), ratios.end(), [](int r) { return r > 0; }));
  const int n = static_cast<int>(identities.size());
  if (n < parts)
    throw ArityError("split_by_identity: " + std::to_string(n) + " identities for " + std::to_string(parts) + " parts");

  std::mt19937_64 rng(seed);
  std::shuffle(identities.begin(), identities.end(), rng);

  // Largest remainder on integer arithmetic: quota_i = n·r_i / total.
  std::array<int, 3> sizes{};
  std::array<int, 3> remainder{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    sizes[i] = n * ratios[i] / total;
    remainder[i] = n * ratios[i] % total;
    assigned += sizes[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k]];

  IdentitySplit out;
  auto it = identities.begin();
  out.train.assign(it, it + sizes[0]);
  it += sizes[0];
  out.val.assign(it, it + sizes[1]);
  it += sizes[1];
  out.test.assign(it, it + sizes[2]);
  return out;
}

DatasetManifest assign_splits(DatasetManifest manifest, const IdentitySplit& split) {
  const auto assignment = split.assignment();
  std::vector<std::string> unassigned;
  for (auto& e : manifest.entries) {
    if (e.split == Split::hidden) continue;
    const auto it = assignment.find(e.identity);
    if (it == assignment.end())
      unassigned.push_back(e.identity);
    else
      e.split = it->second;
  }
  if (!unassigned.empty()) throw LookupError("identities missing from the split: " + join(unassigned));
  return manifest;
}

// ---------------------------------------------------------------------------

double clip_score(const Detector& detector, const VideoClip& clip) {
  auto check = [&](const std::vector<double>& scores) {
    for (double s : scores)
      if (!std::isfinite(s) || s < 0.0 || s > 1.0)
        throw DetectorError("detector returned invalid score " + std::to_string(s) + " for clip '" + clip.clip_id + "'");
    if (scores.empty()) throw DetectorError("detector returned no score for clip '" + clip.clip_id + "'");
  };
  if (detector.granularity() == Granularity::image_level) {
    const auto scores = detector.raw_scores(clip);
    check(scores);
    if (scores.size() != clip.size())
      throw DetectorError("image-level detector returned " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(clip.size()) + " frames of clip '" + clip.clip_id + "'");
    return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  }
  const std::size_t segments = std::max<std::size_t>(1, clip.size() / kClipSegmentLength);
  double sum = 0.0;
  for (std::size_t s = 0; s < segments; ++s) {
    VideoClip segment = clip;
    segment.frames.clear();
    const std::size_t begin = s * kClipSegmentLength;
    const std::size_t end = std::min(clip.size(), begin + kClipSegmentLength);
    segment.frames.assign(clip.frames.begin() + static_cast<std::ptrdiff_t>(begin),
                          clip.frames.begin() + static_cast<std::ptrdiff_t>(end));
    const auto scores = detector.raw_scores(segment);
    check(scores);
    if (scores.size() != 1)
      throw DetectorError("clip-level detector must return one score per segment of clip '" + clip.clip_id + "'");
    sum += scores.front();
  }
  return sum / static_cast<double>(segments);
}

OracleDetector::OracleDetector(std::map<std::string, Label> truth, bool invert)
    : truth_(std::move(truth)), invert_(invert) {}

std::vector<double> OracleDetector::raw_scores(const VideoClip& clip) const {
  const auto it = truth_.find(clip.clip_id);
  if (it == truth_.end() || it->second == Label::unknown)
    throw DetectorError("oracle has no truth for clip '" + clip.clip_id + "'");
  const bool fake = it->second == Label::fake;
  return {fake != invert_ ? 1.0 : 0.0};
}

std::vector<double> ConstantDetector::raw_scores(const VideoClip& clip) const {
  return std::vector<double>(granularity_ == Granularity::image_level ? clip.size() : 1, value_);
}

namespace {

using Row = Eigen::Array<double, 1, Eigen::Dynamic>;

Row frame_luma(const FaceFrame& f) {
  return 0.299 * f.pixels.channel(0) + 0.587 * f.pixels.channel(1) + 0.114 * f.pixels.channel(2);
}

// Mean |4-neighbour Laplacian| over interior pixels.
double laplacian_energy(const Row& img, int h, int w) {
  if (h < 3 || w < 3) return 0.0;
  double sum = 0.0;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const auto at = [&](int yy, int xx) { return img(static_cast<Eigen::Index>(yy) * w + xx); };
      sum += std::abs(4.0 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1));
    }
  return sum / ((h - 2.0) * (w - 2.0));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

ReferenceDetector::Features ReferenceDetector::features(const VideoClip& clip) {
  if (clip.frames.empty()) throw ArityError("reference detector needs at least one frame");
  const int h = clip.height(), w = clip.width();
  Features f = Features::Zero();
  const auto n = static_cast<double>(clip.size());
  Row previous;
  double diff_count = 0.0, diff_sum = 0.0, diff_sq = 0.0;
  for (const auto& frame : clip.frames) {
    const Row y = frame_luma(frame);
    f(0) += laplacian_energy(y, h, w) / n;
    const Row r = frame.pixels.channel(0) - y, b = frame.pixels.channel(2) - y;
    f(4) += (r.square() + b.square()).sqrt().mean() / n;
    f(5) += std::sqrt((y - y.mean()).square().mean()) / n;
    if (previous.size() == y.size()) {
      const Row d = y - previous;
      f(1) += d.abs().mean();
      diff_sum += d.sum();
      diff_sq += d.square().sum();
      diff_count += static_cast<double>(d.size());
      f(3) += laplacian_energy(d, h, w);
    }
    previous = y;
  }
  if (diff_count > 0.0) {
    const double pairs = n - 1.0;
    f(1) /= pairs;
    f(3) /= pairs;
    const double mean = diff_sum / diff_count;
    f(2) = std::sqrt(std::max(0.0, diff_sq / diff_count - mean * mean));
  }
  return f;
}

void ReferenceDetector::fit(const std::vector<VideoClip>& clips) {
  std::vector<Features> xs;
  std::vector<double> ys;
  for (const auto& c : clips) {
    if (c.label == Label::unknown) throw ValidationError("training clip '" + c.clip_id + "' has no label");
    xs.push_back(features(c));
    ys.push_back(c.label == Label::fake ? 1.0 : 0.0);
  }
  if (xs.empty()) throw ArityError("reference detector needs training clips");
  const auto fakes = std::count(ys.begin(), ys.end(), 1.0);
  if (fakes == 0 || fakes == static_cast<std::ptrdiff_t>(ys.size()))
    throw ValidationError("reference detector needs both real and fake training clips");
  const double n = static_cast<double>(xs.size());
  mean_.setZero();
  for (const auto& x : xs) mean_ += x / n;
  Features var = Features::Zero();
  for (const auto& x : xs) var += (x - mean_).cwiseAbs2() / n;
  scale_ = var.cwiseSqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; });

  // Full-batch gradient descent on the L2-regularized logistic loss.
  constexpr double lr = 0.5, l2 = 1e-3;
  weights_.setZero();
  bias_ = 0.0;
  for (int it = 0; it < 2000; ++it) {
    Features gw = l2 * weights_;
    double gb = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Features z = (xs[i] - mean_).cwiseQuotient(scale_);
      const double err = sigmoid(weights_.dot(z) + bias_) - ys[i];
      gw += err * z / n;
      gb += err / n;
    }
    weights_ -= lr * gw;
    bias_ -= lr * gb;
  }
  fitted_ = true;
}

std::vector<double> ReferenceDetector::raw_scores(const VideoClip& clip) const {
  if (!fitted_) throw DetectorError("reference detector used before fit");
  const Features z = (features(clip) - mean_).cwiseQuotient(scale_);
  return {sigmoid(weights_.dot(z) + bias_)};
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : r.per_clip)
    per.push_back({{"clip_id", c.clip_id},
                   {"score", c.score},
                   {"predicted", c.predicted_fake ? "fake" : "real"},
                   {"truth", to_string(c.truth)}});
  return {{"accuracy", r.accuracy}, {"n", r.n}, {"threshold", r.threshold}, {"per_clip", per}};
}

EvalReport evaluate(const Detector& detector, const std::vector<VideoClip>& clips, double threshold) {
  if (clips.empty()) throw ArityError("evaluate: no clips");
  EvalReport report;
  report.threshold = threshold;
  int correct = 0;
  for (const auto& clip : clips) {
    if (clip.label == Label::unknown) throw ValidationError("evaluate: clip '" + clip.clip_id + "' has no truth label");
    ClipResult r;
    r.clip_id = clip.clip_id;
    r.score = clip_score(detector, clip);
    r.predicted_fake = r.score > threshold;
    r.truth = clip.label;
    correct += r.predicted_fake == (r.truth == Label::fake);
    report.per_clip.push_back(std::move(r));
  }
  report.n = static_cast<int>(clips.size());
  report.accuracy = static_cast<double>(correct) / report.n;
  return report;
}

namespace {

VideoClip load_entry(const ManifestEntry& e, const fs::path& root) {
  VideoClip clip = load_clip(clip_directory(root, e.clip_id));
  clip.clip_id = e.clip_id;
  clip.label = e.label;
  return clip;
}

}  // namespace

EvalReport evaluate(const Detector& detector, const DatasetManifest& manifest, const fs::path& root,
                    double threshold, std::optional<Split> split) {
  std::vector<VideoClip> clips;
  for (const auto& e : manifest.entries)
    if (!split || e.split == *split) clips.push_back(load_entry(e, root));
  return evaluate(detector, clips, threshold);
}

// ---------------------------------------------------------------------------

void RatingRecord::validate() const {
  if (clip_id.empty()) throw ValidationError("rating without clip_id");
  if (participant_id.empty()) throw ValidationError("rating without participant_id");
  if (score < 1 || score > 5)
    throw ValidationError("rating score " + std::to_string(score) + " outside 1..5 for clip '" + clip_id + "'");
}

nlohmann::json to_json(const RatingRecord& r) {
  return {{"clip_id", r.clip_id}, {"participant_id", r.participant_id}, {"score", r.score}, {"timestamp", r.timestamp}};
}

RatingRecord rating_from_json(const nlohmann::json& j) {
  RatingRecord r;
  try {
    r.clip_id = j.at("clip_id").get<std::string>();
    r.participant_id = j.at("participant_id").get<std::string>();
    r.score = j.at("score").get<int>();
    r.timestamp = j.value("timestamp", std::string{});
  } catch (const nlohmann::json::exception& err) {
    throw ValidationError(std::string("malformed rating: ") + err.what());
  }
  r.validate();
  return r;
}

nlohmann::json to_json(const RatingSummary& s) {
  return {{"counts", s.counts}, {"percent", s.percent}, {"real_fraction", s.real_fraction}, {"n", s.n},
          {"fooled", s.counts[3] + s.counts[4]}};
}

RatingSummary aggregate_ratings(const std::vector<RatingRecord>& records) {
  RatingSummary s;
  for (const auto& r : records) {
    r.validate();
    ++s.counts[r.score - 1];
  }
  s.n = static_cast<int>(records.size());
  if (s.n == 0) return s;
  for (int i = 0; i < 5; ++i) s.percent[i] = 100.0 * s.counts[i] / s.n;
  s.real_fraction = static_cast<double>(s.counts[3] + s.counts[4]) / s.n;
  return s;
}

std::vector<std::string> curate_hidden(const std::vector<std::string>& candidates,
                                       const std::vector<RatingRecord>& ratings, int n_raters) {
  if (n_raters < 1) throw ValidationError("curate_hidden: n_raters must be positive");
  std::map<std::string, std::vector<RatingRecord>> by_clip;
  for (const auto& r : ratings) {
    r.validate();
    by_clip[r.clip_id].push_back(r);
  }
  const int needed = (n_raters + 1) / 2;
  std::vector<std::string> kept, short_rated;
  for (const auto& id : candidates) {
    std::set<std::string> raters;
    int fooled = 0;
    for (const auto& r : by_clip[id])
      if (raters.insert(r.participant_id).second) fooled += r.score >= 4;
    if (static_cast<int>(raters.size()) < n_raters) {
      short_rated.push_back(id + " (" + std::to_string(raters.size()) + ")");
      continue;
    }
    if (fooled >= needed) kept.push_back(id);
  }
  if (!short_rated.empty())
    throw InsufficientRatingsError("fewer than " + std::to_string(n_raters) + " raters for: " + join(short_rated));
  return kept;
}

HiddenService::HiddenService(DatasetManifest vault, fs::path media_root, fs::path ratings_log)
    : media_root_(std::move(media_root)), ratings_log_(std::move(ratings_log)) {
  for (const auto& e : vault.entries) {
    if (e.label == Label::unknown) throw ValidationError("hidden vault entry '" + e.clip_id + "' has no label");
    if (!labels_.emplace(e.clip_id, e.label).second)
      throw ValidationError("hidden vault lists '" + e.clip_id + "' twice");
  }
  if (!ratings_log_.empty() && fs::exists(ratings_log_)) {
    std::ifstream in(ratings_log_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto r = rating_from_json(nlohmann::json::parse(line));
      if (rating_index_.emplace(std::pair{r.clip_id, r.participant_id}, ratings_.size()).second) ratings_.push_back(r);
    }
  }
}

HiddenService HiddenService::load(const fs::path& vault_path, const fs::path& media_root, const fs::path& ratings_log) {
  return HiddenService(read_manifest(vault_path), media_root, ratings_log);
}

std::vector<std::string> HiddenService::clip_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, label] : labels_) out.push_back(id);
  return out;
}

VideoClip HiddenService::fetch_clip(const std::string& clip_id) const {
  if (!labels_.count(clip_id)) throw LookupError("unknown hidden clip '" + clip_id + "'");
  VideoClip clip = load_clip(clip_directory(media_root_, clip_id));
  clip.clip_id = clip_id;
  clip.label = Label::unknown;
  return clip;
}

SubmissionResult HiddenService::submit(const std::vector<std::pair<std::string, double>>& scores,
                                       double threshold) const {
  std::map<std::string, int> seen;
  std::vector<std::string> unknown, duplicate, missing, invalid;
  for (const auto& [id, score] : scores) {
    if (!labels_.count(id)) {
      unknown.push_back(id);
      continue;
    }
    if (++seen[id] == 2) duplicate.push_back(id);
    if (!std::isfinite(score)) invalid.push_back(id);
  }
  for (const auto& [id, label] : labels_)
    if (!seen.count(id)) missing.push_back(id);
  if (!unknown.empty() || !duplicate.empty() || !missing.empty() || !invalid.empty()) {
    std::string msg = "submission rejected";
    if (!missing.empty()) msg += "; missing: " + join(missing);
    if (!duplicate.empty()) msg += "; duplicate: " + join(duplicate);
    if (!unknown.empty()) msg += "; unknown: " + join(unknown);
    if (!invalid.empty()) msg += "; non-finite: " + join(invalid);
    throw SubmissionError(msg);
  }
  int correct = 0;
  for (const auto& [id, score] : scores) correct += (score > threshold) == (labels_.at(id) == Label::fake);
  SubmissionResult r;
  r.n = static_cast<int>(scores.size());
  r.accuracy = r.n ? static_cast<double>(correct) / r.n : 0.0;
  return r;
}

void HiddenService::add_rating(const RatingRecord& record) {
  record.validate();
  std::lock_guard lock(mutex_);
  if (!rating_index_.emplace(std::pair{record.clip_id, record.participant_id}, ratings_.size()).second)
    throw SubmissionError("duplicate rating of '" + record.clip_id + "' by '" + record.participant_id + "'");
  ratings_.push_back(record);
  if (!ratings_log_.empty()) {
    std::ofstream out(ratings_log_, std::ios::app);
    out << to_json(record).dump() << '\n';
    if (!out) throw IoError("cannot append to ratings log '" + ratings_log_.string() + "'");
  }
}

std::vector<RatingRecord> HiddenService::ratings() const {
  std::lock_guard lock(mutex_);
  return ratings_;
}

RatingSummary HiddenService::summary(const std::string& clip_id) const {
  std::vector<RatingRecord> mine;
  {
    std::lock_guard lock(mutex_);
    for (const auto& r : ratings_)
      if (r.clip_id == clip_id) mine.push_back(r);
  }
  return aggregate_ratings(mine);
}

// ---------------------------------------------------------------------------

namespace {

const std::set<std::string> kTrainSets{"std", "std/sing", "std/rand", "std+std/sing", "std+std/rand", "std+std/mix"};
const std::set<std::string> kTestSets{"std", "std/sing", "std/rand", "hidden"};

std::vector<std::string> split_plus(const std::string& name) {
  std::vector<std::string> parts;
  std::stringstream ss(name);
  for (std::string part; std::getline(ss, part, '+');) parts.push_back(part);
  return parts;
}

struct Resolved {
  std::vector<std::pair<const ManifestEntry*, const fs::path*>> entries;
};

Resolved resolve(const std::string& name, const VariantRegistry& registry, Split split) {
  Resolved out;
  for (const auto& part : split_plus(name)) {
    const auto it = registry.variants.find(part);
    if (it == registry.variants.end()) throw ValidationError("variant '" + part + "' is not built");
    for (const auto& e : it->second.manifest.entries) {
      if (e.split != split) continue;
      if (part == "std/sing" && (e.distortion_history.empty() || e.distortion_history.back().level != kDistortionLevels))
        continue;
      out.entries.emplace_back(&e, &it->second.root);
    }
  }
  return out;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!kTrainSets.count(train_set)) throw ValidationError("unknown training set '" + train_set + "'");
  if (!kTestSets.count(test_set)) throw ValidationError("unknown test set '" + test_set + "'");
}

std::vector<ScenarioConfig> standard_scenarios() {
  const std::vector<std::pair<std::string, std::string>> pairs{
      {"std", "std"},           {"std", "std/sing"},          {"std", "std/rand"},
      {"std/sing", "std/sing"}, {"std/rand", "std/rand"},     {"std/sing", "std/rand"},
      {"std/rand", "std/sing"}, {"std+std/sing", "std/sing"}, {"std+std/rand", "std/rand"},
      {"std+std/mix", "std"},   {"std+std/mix", "std/sing"},  {"std+std/mix", "std/rand"},
      {"std", "hidden"},        {"std+std/mix", "hidden"},
  };
  std::vector<ScenarioConfig> out;
  for (const auto& [train, test] : pairs) out.push_back({train, test, 0.5});
  return out;
}

EvalReport run_scenario(const ScenarioConfig& config, const VariantRegistry& registry, const DetectorFactory& factory) {
  config.validate();
  const auto train = resolve(config.train_set, registry, Split::train);
  if (train.entries.empty()) throw ArityError("scenario: training set '" + config.train_set + "' has no train entries");
  const bool hidden = config.test_set == "hidden";
  if (hidden && !registry.hidden) throw ValidationError("scenario: hidden test set requested without a hidden service");

  std::set<std::string> train_ids, train_clips;
  for (const auto& [e, root] : train.entries) {
    train_ids.insert(e->identity);
    train_clips.insert(e->clip_id);
  }
  std::vector<std::string> shared;
  Resolved test;
  if (hidden) {
    for (const auto& id : registry.hidden->clip_ids())
      if (train_clips.count(id)) shared.push_back("clip " + id);
  } else {
    test = resolve(config.test_set, registry, Split::test);
    if (test.entries.empty()) throw ArityError("scenario: test set '" + config.test_set + "' has no test entries");
    std::set<std::string> reported;
    for (const auto& [e, root] : test.entries) {
      if (train_ids.count(e->identity) && reported.insert("identity " + e->identity).second)
        shared.push_back("identity " + e->identity);
      if (train_clips.count(e->clip_id)) shared.push_back("clip " + e->clip_id);
    }
  }
  if (!shared.empty())
    throw LeakageError("scenario " + config.train_set + " -> " + config.test_set + " leaks " + join(shared));

  std::vector<VideoClip> train_clips_media;
  for (const auto& [e, root] : train.entries) train_clips_media.push_back(load_entry(*e, *root));
  auto detector = factory();
  detector->fit(train_clips_media);

  if (!hidden) {
    std::vector<VideoClip> clips;
    for (const auto& [e, root] : test.entries) clips.push_back(load_entry(*e, *root));
    return evaluate(*detector, clips, config.threshold);
  }
  EvalReport report;
  report.threshold = config.threshold;
  std::vector<std::pair<std::string, double>> scores;
  for (const auto& id : registry.hidden->clip_ids()) {
    const double s = clip_score(*detector, registry.hidden->fetch_clip(id));
    scores.emplace_back(id, s);
    report.per_clip.push_back({id, s, s > config.threshold, Label::unknown});
  }
  const auto result = registry.hidden->submit(scores, config.threshold);
  report.accuracy = result.accuracy;
  report.n = result.n;
  return report;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, Eigen::VectorXd& mean) {
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

void require_nonsingular(const Eigen::MatrixXd& cov, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, top))
    throw NumericError(std::string("fid: covariance of ") + which + " is singular; pass a regularization");
}

}  // namespace

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double regularization) {
  if (a.cols() != b.cols() || a.cols() == 0) throw ShapeError("fid: feature dimensions differ or are empty");
  if (a.rows() < 2 || b.rows() < 2) throw ArityError("fid: need at least two samples per set");
  if (regularization < 0.0) throw DomainError("fid: negative regularization");
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd sa = covariance(a, mu_a), sb = covariance(b, mu_b);
  const auto eye = Eigen::MatrixXd::Identity(a.cols(), a.cols());
  sa += regularization * eye;
  sb += regularization * eye;
  if (regularization == 0.0) {
    require_nonsingular(sa, "the first set");
    require_nonsingular(sb, "the second set");
  }
  // Tr((Σa Σb)^½) = Tr((Σa^½ Σb Σa^½)^½), the latter symmetric PSD.
  const Eigen::MatrixXd root_a = psd_sqrt(sa);
  const Eigen::MatrixXd inner = root_a * sb * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_cross;
  return std::max(0.0, value);
}

double is_score(const Eigen::MatrixXd& p) {
  if (p.rows() == 0 || p.cols() == 0) throw ArityError("is_score: no predictions");
  if (!p.allFinite() || (p.array() < 0.0).any()) throw ValidationError("is_score: probabilities must be finite and non-negative");
  if (((p.rowwise().sum().array() - 1.0).abs() > 1e-9).any()) throw ValidationError("is_score: rows must sum to 1");
  const Eigen::RowVectorXd marginal = p.colwise().mean();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index c = 0; c < p.cols(); ++c)
      if (p(i, c) > 0.0) kl += p(i, c) * std::log(p(i, c) / marginal(c));
  return std::exp(kl / static_cast<double>(p.rows()));
}

RerenderError rerender_error(const VideoClip& a, const VideoClip& b) {
  if (a.size() != b.size()) throw ShapeError("rerender_error: frame counts differ");
  RerenderError out;
  double total = 0.0;
  Eigen::Index pixels = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& pa = a.frames[i].pixels;
    const auto& pb = b.frames[i].pixels;
    require_same_shape(pa, pb, "rerender_error");
    PlanarD map(1, pa.height(), pa.width());
    map.channel(0) = (255.0 * (pa.array() - pb.array())).square().colwise().sum().sqrt();
    out.frame_mean.push_back(map.array().mean());
    total += map.array().sum();
    pixels += map.pixels();
    out.maps.push_back(std::move(map));
  }
  out.mean = pixels ? total / static_cast<double>(pixels) : 0.0;
  return out;
}

}  // namespace dfvae
