#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfvae/media.hpp"

namespace dfvae {

/// Per-level parameters, index 0 = level 1.
struct LevelTables {
  std::array<double, 5> saturation{0.85, 0.7, 0.55, 0.4, 0.25};  // chroma scale
  std::array<double, 5> contrast{0.85, 0.7, 0.55, 0.4, 0.25};    // scale about the luma mean
  std::array<double, 5> blur_sigma_at_128{0.5, 1.0, 2.0, 3.0, 5.0};
  std::array<double, 5> noise_sigma{0.02, 0.04, 0.06, 0.08, 0.12};
  std::array<int, 5> jpeg_quality{80, 65, 50, 35, 20};
  std::array<int, 5> video_crf{23, 28, 33, 38, 43};
  std::array<int, 5> block_count{2, 4, 6, 8, 10};
  int block_size = 8;

  void validate() const;
  friend bool operator==(const LevelTables&, const LevelTables&) = default;
};

nlohmann::json to_json(const LevelTables& tables);
LevelTables level_tables_from_json(const nlohmann::json& j);
LevelTables load_level_tables(const std::filesystem::path& path);

/// Lossy video codec used by the video_compression distortion.
class VideoCodec {
 public:
  virtual ~VideoCodec() = default;
  virtual std::vector<PlanarD> transcode(const std::vector<PlanarD>& frames, int crf) const = 0;
};

/// Deterministic stand-in for a hybrid codec: YCbCr, 8×8 orthonormal DCT,
/// uniform quantization with step 0.625·2^(crf/6) on the 8-bit scale. The
/// first frame is intra-coded, later frames code the residual against the
/// previous reconstruction.
class DctVideoCodec final : public VideoCodec {
 public:
  std::vector<PlanarD> transcode(const std::vector<PlanarD>& frames, int crf) const override;
  static double quant_step(int crf);
};

/// Distorts every frame of the clip and appends `spec` to its history.
/// Deterministic in (clip, spec, seed).
VideoClip apply_distortion(const VideoClip& clip, const DistortionSpec& spec, std::uint64_t seed,
                           const LevelTables& tables = {});

enum class PerturbMode { single_level_random_type, random_level_random_type, mixture };

std::string_view to_string(PerturbMode mode);
/// Accepts the long names and the short forms sing / rand / mix.
PerturbMode parse_perturb_mode(std::string_view text);

struct PerturbPlan {
  std::vector<DistortionSpec> specs;
  std::uint64_t seed = 0;

  void validate(int max_length = kMaxPlanLength) const;
  static constexpr int kMaxPlanLength = 4;
};

PerturbPlan random_plan(PerturbMode mode, int mix_count, std::uint64_t seed);

/// Applies the specs in order; spec i draws from a seed derived from (plan.seed, i).
VideoClip apply_plan(const VideoClip& clip, const PerturbPlan& plan, const LevelTables& tables = {});

/// Order-independent per-clip seed.
std::uint64_t clip_seed(std::uint64_t global_seed, std::string_view clip_id);

struct VariantOptions {
  PerturbMode mode = PerturbMode::random_level_random_type;
  int mix_count = 3;
  std::uint64_t seed = 0;
  LevelTables tables;
};

/// Reads every entry's clip under `input_root`, writes the perturbed clips
/// under `output_root` and returns their manifest. The single-level family
/// expands each clip into five entries, one per level of a single random
/// kind; the other modes emit one entry per clip. Splits are inherited.
DatasetManifest build_variant(const DatasetManifest& manifest, const std::filesystem::path& input_root,
                              const std::filesystem::path& output_root, const VariantOptions& options);

/// Ids of build_variant's output entries.
std::string variant_clip_id(std::string_view clip_id, PerturbMode mode, int level = 0);

}  // namespace dfvae
