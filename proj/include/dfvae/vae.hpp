#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfvae/autodiff.hpp"
#include "dfvae/media.hpp"
#include "dfvae/nn.hpp"
#include "dfvae/structure.hpp"

namespace dfvae {

enum class LatentRole { structure, appearance };

/// Diagonal-Gaussian posterior sample: z = μ + σ ⊙ ε. Inference codes carry
/// no ε and z = μ.
struct LatentCode {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
  Eigen::VectorXd z;
  std::optional<Eigen::VectorXd> eps;
  LatentRole role = LatentRole::structure;

  Eigen::Index dim() const { return mu.size(); }
};

// ---------------------------------------------------------------------------
// Plain-value losses, templated on the Eigen scalar.

template <typename DerivedMu, typename DerivedSigma, typename DerivedEps>
auto reparameterize(const Eigen::MatrixBase<DerivedMu>& mu, const Eigen::MatrixBase<DerivedSigma>& sigma,
                    const Eigen::MatrixBase<DerivedEps>& eps) {
  using Scalar = typename DerivedMu::Scalar;
  if (mu.size() != sigma.size() || mu.size() != eps.size())
    throw ShapeError("reparameterize: mu/sigma/eps lengths differ");
  if ((sigma.array() <= Scalar(0)).any()) throw DomainError("reparameterize: sigma must be positive");
  return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(mu + sigma.cwiseProduct(eps));
}

/// KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²) ≥ 0.
template <typename DerivedMu, typename DerivedSigma>
typename DerivedMu::Scalar kl_loss(const Eigen::MatrixBase<DerivedMu>& mu, const Eigen::MatrixBase<DerivedSigma>& sigma) {
  using Scalar = typename DerivedMu::Scalar;
  if (mu.size() != sigma.size()) throw ShapeError("kl_loss: mu/sigma lengths differ");
  if ((sigma.array() <= Scalar(0)).any()) throw DomainError("kl_loss: sigma must be positive");
  const auto s2 = sigma.array().square();
  return Scalar(0.5) * (mu.array().square() + s2 - Scalar(1) - s2.log()).sum();
}

/// Mean absolute error (1/CHW)‖a − b‖₁.
template <typename Scalar>
Scalar pixel_loss(const Planar<Scalar>& a, const Planar<Scalar>& b) {
  require_same_shape(a, b, "pixel_loss");
  return (a.array() - b.array()).abs().mean();
}

double pixel_loss(const FaceFrame& a, const FaceFrame& b);

struct SsimConfig {
  int window = 7;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// 1 − mean local SSIM over valid uniform windows; 0 iff a == b.
double ssim_loss(const FaceFrame& a, const FaceFrame& b, const SsimConfig& config = {});
double ssim_index(const PlanarD& a, const PlanarD& b, const SsimConfig& config = {});

// ---------------------------------------------------------------------------
// Differentiable counterparts on the autodiff tape. Batch terms are averaged
// over samples.

ad::Var reparameterize(ad::Var mu, ad::Var sigma, ad::Var eps);
/// Per-sample KL summed over the latent dimension, averaged over the batch.
ad::Var kl_loss(ad::Var mu, ad::Var sigma);
ad::Var pixel_loss(ad::Var a, ad::Var b);
ad::Var ssim_loss(ad::Var a, ad::Var b, const SsimConfig& config = {});

// ---------------------------------------------------------------------------
// Finite-state instance of the conditional variational decomposition, where
// every expectation is an exact sum.

/// One observation x under a fixed condition: p(z|c), p(x|z,c) per latent
/// state and the variational q(z|x,c), all over the same finite support.
struct DiscreteLatentModel {
  Eigen::VectorXd prior;
  Eigen::VectorXd likelihood;
  Eigen::VectorXd variational;

  void validate() const;
};

struct ElboTerms {
  double log_evidence = 0.0;             // log Σ_z p(z|c) p(x|z,c)
  double posterior_kl = 0.0;             // KL(q(z|x,c) ‖ p(z|x,c))
  double lower_bound = 0.0;              // E_q[log p(x,z|c) − log q(z|x,c)]
  double prior_kl = 0.0;                 // KL(q(z|x,c) ‖ p(z|c))
  double expected_log_likelihood = 0.0;  // E_q[log p(x|z,c)]
};

ElboTerms elbo_terms(const DiscreteLatentModel& model);

// ---------------------------------------------------------------------------

/// Network layout. Widths and depths are configuration; the defaults are
/// desk-scale (64×64 faces, 32×32 heatmaps, J = 128 per role).
struct ArchConfig {
  int image_size = 64;
  int heatmap_size = 32;
  int landmark_count = kDefaultLandmarkCount;
  int latent_dim = 128;
  std::vector<int> encoder_channels{16, 32, 64};
  std::vector<int> decoder_channels{64, 32, 16};
  int fusion_channels = 16;
  double leaky_slope = 0.2;
  /// Structure encoder reads the frame (average-pooled to heatmap_size)
  /// instead of the landmark heatmap. Used by the structure-extraction ablation.
  bool structure_from_image = false;
  std::uint64_t init_seed = 0;

  void validate() const;
  int decoder_base_size() const;
  int structure_channels() const { return structure_from_image ? 3 : landmark_count; }
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

nlohmann::json to_json(const ArchConfig& config);
ArchConfig arch_from_json(const nlohmann::json& j);

/// Structure Encoder E_α, Appearance Encoder E_β and Decoder D_γ over one
/// flat parameter vector.
class EncoderDecoderBundle {
 public:
  struct Posterior {
    ad::Var mu;
    ad::Var sigma;
  };

  explicit EncoderDecoderBundle(ArchConfig config = {});

  const ArchConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  /// x: [N, K, H′, W′] heatmaps (or [N, 3, H′, W′] when structure_from_image).
  Posterior structure_posterior(nn::Binding& params, ad::Var x) const;
  /// x: [N, 3, H, W] frames.
  Posterior appearance_posterior(nn::Binding& params, ad::Var x) const;
  /// [N, J] structure and appearance codes -> [N, 3, H, W] in (0, 1).
  ad::Var decode(nn::Binding& params, ad::Var z_structure, ad::Var z_appearance) const;

  LatentCode encode_structure(const PlanarD& structure_input) const;
  LatentCode encode_appearance(const FaceFrame& frame) const;
  PlanarD decode(const Eigen::VectorXd& z_structure, const Eigen::VectorXd& z_appearance) const;

  /// Network input for the structure encoder: the heatmap stack, or the
  /// pooled frame under the structure ablation.
  PlanarD structure_input(const FaceFrame& frame, const HeatmapStack& heatmap) const;

 private:
  struct Encoder {
    std::vector<nn::Conv2d> convs;
    nn::Linear head;
  };
  Posterior run_encoder(const Encoder& enc, nn::Binding& params, ad::Var x) const;

  ArchConfig config_;
  nn::ParameterStore params_;
  Encoder structure_;
  Encoder appearance_;
  nn::Linear decoder_in_;
  std::vector<nn::Conv2d> decoder_convs_;
};

struct Reconstruction {
  FaceFrame frame;
  LatentCode structure;
  LatentCode appearance;
};

/// Decodes x̃_t from E_α(heatmap of f) and E_β(unpaired), sampling both
/// codes with ε ~ N(0, I) drawn from `rng`.
Reconstruction reconstruct(const FaceFrame& frame, const FaceFrame& unpaired, const HeatmapStack& heatmap,
                           const EncoderDecoderBundle& bundle, std::mt19937_64& rng);

/// Structure code from the target heatmap, appearance code from the source
/// frame; both at their posterior means.
FaceFrame reenact(const FaceFrame& source_appearance, const HeatmapStack& target_heatmap,
                  const EncoderDecoderBundle& bundle);
FaceFrame reenact(const Eigen::VectorXd& appearance_mu, const PlanarD& target_structure_input,
                  const EncoderDecoderBundle& bundle, std::string identity = {}, int frame_index = 0);

// ---------------------------------------------------------------------------
// Checkpoint archive: magic, version, JSON header, then named little-endian
// double blocks.

struct CheckpointArchive {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Eigen::VectorXd>> blocks;

  const Eigen::VectorXd& block(const std::string& name) const;
};

inline constexpr int kCheckpointVersion = 1;

void write_archive(const CheckpointArchive& archive, const std::filesystem::path& path);
CheckpointArchive read_archive(const std::filesystem::path& path);

void save_bundle(const EncoderDecoderBundle& bundle, const std::filesystem::path& path);
EncoderDecoderBundle load_bundle(const std::filesystem::path& path);
CheckpointArchive bundle_archive(const EncoderDecoderBundle& bundle);
EncoderDecoderBundle bundle_from_archive(const CheckpointArchive& archive);

// Helpers shared by the pipeline modules.
ad::Var frames_to_var(ad::Graph& graph, const std::vector<const PlanarD*>& planes);
PlanarD var_sample(const ad::Var& v, int index);

}  // namespace dfvae
