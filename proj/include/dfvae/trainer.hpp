#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfvae/fusion.hpp"
#include "dfvae/media.hpp"
#include "dfvae/structure.hpp"
#include "dfvae/temporal.hpp"
#include "dfvae/vae.hpp"

namespace dfvae {

struct LossWeights {
  double lambda_r1 = 1.0;  // pixel term inside the reconstruction loss
  double lambda_r2 = 1.0;  // SSIM term inside the reconstruction loss
  double lambda_1 = 1.0;   // reconstruction
  double lambda_2 = 0.01;  // KL
  double lambda_3 = 1.0;   // MAdaIN
  double lambda_4 = 0.1;   // temporal
  double lambda_ma = 10.0; // style term inside the MAdaIN loss

  void validate() const;
};

struct OptimizerConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int steps = 1000;
  int batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AblationFlags {
  bool use_madain = true;
  bool use_heatmap_structure = true;
  bool use_unpaired = true;
  bool use_temporal = true;
  bool temporal_source = true;  // per-domain toggles for the temporal term
  bool temporal_target = true;
};

/// Everything a training run needs besides the data.
struct TrainConfig {
  ArchConfig arch;
  OptimizerConfig optimizer;
  LossWeights weights;
  AblationFlags flags;
  SsimConfig ssim;
  int flow_block = 8;
  int flow_radius = 4;
  double flow_temperature = 0.02;
  std::vector<int> extractor_channels{8, 16, 32, 64};
  std::uint64_t extractor_seed = 19;
  /// 0 picks the resolution-scaled default.
  double mask_sigma = 0.0;
  /// Empty lists split the identities alternately (sorted order).
  std::vector<std::string> source_identities;
  std::vector<std::string> target_identities;
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
  double effective_mask_sigma() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Trainable model: the disentangled bundle, the fusion decoder D_δ and the
/// per-identity appearance codes gathered after training.
struct FaceSwapModel {
  TrainConfig config;
  EncoderDecoderBundle bundle;
  FusionDecoder fusion;
  std::map<std::string, Eigen::VectorXd> appearance_bank;

  explicit FaceSwapModel(TrainConfig config);
};

void save_model(const FaceSwapModel& model, const std::filesystem::path& path);
FaceSwapModel load_model(const std::filesystem::path& path);

/// x_t, another frame x′ of the same identity, and x_{t−1}.
struct UnpairedTuple {
  FaceFrame current;
  FaceFrame unpaired;
  FaceFrame previous;
};

/// Draws `count` tuples for one identity. x_t is never a clip's first frame,
/// x_{t−1} is its immediate predecessor and x′ is a different frame.
std::vector<UnpairedTuple> build_unpaired_batch(const std::vector<VideoClip>& clips, const std::string& identity,
                                                std::uint64_t rng_seed, int count = 8);

struct TrainingSample {
  UnpairedTuple frames;
  PlanarD structure_current;
  PlanarD structure_previous;
  Mask mask;  // blurred hull of x_t's landmarks
};

/// Source-domain samples pair index-wise with target-domain samples.
struct TrainingBatch {
  std::vector<TrainingSample> source;
  std::vector<TrainingSample> target;
};

TrainingSample make_training_sample(UnpairedTuple tuple, const FaceSwapModel& model, bool paired = false);

/// Unweighted terms. recon_* already include λ_r1/λ_r2 and madain includes
/// λ_ma, matching how those sub-weights sit inside their own losses.
struct LossBreakdown {
  double recon_x = 0.0;
  double recon_y = 0.0;
  double kl = 0.0;
  double madain_content = 0.0;
  double madain_style = 0.0;
  double madain = 0.0;
  double temporal_x = 0.0;
  double temporal_y = 0.0;
  double total = 0.0;

  bool finite() const;
};

nlohmann::json to_json(const LossBreakdown& b);

/// Weighted sum λ₁(recon_x + recon_y) + λ₂ kl + λ₃ madain + λ₄(temporal_x + temporal_y).
double combine(const LossBreakdown& b, const LossWeights& w);

struct LossGraph {
  ad::Var total;
  LossBreakdown breakdown;
  std::vector<std::string> terms;  // terms actually computed
};

/// Records the full objective on `graph`. `rng` supplies the ε draws.
LossGraph total_loss(ad::Graph& graph, nn::Binding& bundle_params, nn::Binding& fusion_params,
                     const TrainingBatch& batch, const FaceSwapModel& model, const PerceptualExtractor& extractor,
                     const FlowEstimator& flow, std::mt19937_64& rng);

struct TrainResult {
  FaceSwapModel model;
  std::vector<LossBreakdown> history;
  std::vector<std::filesystem::path> checkpoints;
};

/// Single-worker Adam training; bit-identical for a fixed seed.
TrainResult train(const std::vector<VideoClip>& clips, const TrainConfig& config);
TrainResult train(const DatasetManifest& dataset, const std::filesystem::path& root, const TrainConfig& config);

/// Mean appearance μ over every frame of each identity.
std::map<std::string, Eigen::VectorXd> build_appearance_bank(const EncoderDecoderBundle& bundle,
                                                              const std::vector<VideoClip>& clips);

/// Reenacts then fuses one frame given an appearance code.
FaceFrame swap_frame(const Eigen::VectorXd& appearance, const FaceFrame& target, const FaceSwapModel& model);

/// Face swap of `source_id` onto every frame of the target clip.
VideoClip swap(const std::string& source_id, const VideoClip& target_clip, const FaceSwapModel& model);

/// Self-reenactment of a clip with an appearance code from its own identity.
VideoClip self_reenact(const VideoClip& clip, const FaceSwapModel& model);

HeatmapStack frame_heatmap(const FaceFrame& frame, const ArchConfig& arch);

}  // namespace dfvae
