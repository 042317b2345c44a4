#include "dfvae/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace dfvae {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename T>
void require_monotone(const std::array<T, 5>& v, bool increasing, const char* name) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (increasing ? !(v[i] >= v[i - 1]) : !(v[i] <= v[i - 1]))
      throw ValidationError(std::string("level table '") + name + "' is not monotone in severity");
}

cv::Mat to_mat(const PlanarD& p) {
  cv::Mat m(p.height(), p.width(), CV_64FC3);
  for (int y = 0; y < p.height(); ++y) {
    auto* row = m.ptr<cv::Vec3d>(y);
    for (int x = 0; x < p.width(); ++x) row[x] = {p(0, y, x), p(1, y, x), p(2, y, x)};
  }
  return m;
}

PlanarD from_mat(const cv::Mat& m) {
  PlanarD p(3, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3d>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) p(c, y, x) = std::clamp(row[x][c], 0.0, 1.0);
  }
  return p;
}

Eigen::Array<double, 1, Eigen::Dynamic> luma(const PlanarD& p) {
  return 0.299 * p.channel(0) + 0.587 * p.channel(1) + 0.114 * p.channel(2);
}

PlanarD scale_saturation(const PlanarD& p, double s) {
  const auto y = luma(p);
  PlanarD out = p;
  for (int c = 0; c < 3; ++c) out.channel(c) = (y + s * (p.channel(c) - y)).max(0.0).min(1.0);
  return out;
}

PlanarD scale_contrast(const PlanarD& p, double s) {
  const double mean = luma(p).mean();
  PlanarD out = p;
  out.array() = (mean + s * (p.array() - mean)).max(0.0).min(1.0);
  return out;
}

PlanarD gaussian_blur(const PlanarD& p, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  cv::Mat out;
  cv::GaussianBlur(to_mat(p), out, cv::Size(2 * r + 1, 2 * r + 1), sigma, sigma, cv::BORDER_REFLECT_101);
  return from_mat(out);
}

PlanarD gaussian_noise(const PlanarD& p, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PlanarD out = p;
  for (auto& v : out.flat()) v = std::clamp(v + sigma * normal(rng), 0.0, 1.0);
  return out;
}

PlanarD jpeg_roundtrip(const PlanarD& p, int quality) {
  const auto rgb = to_rgb8(p);
  cv::Mat img(p.height(), p.width(), CV_8UC3, const_cast<std::uint8_t*>(rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(img, bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> buffer;
  if (!cv::imencode(".jpg", bgr, buffer, {cv::IMWRITE_JPEG_QUALITY, quality}))
    throw IoError("JPEG encoder unavailable");
  const cv::Mat decoded = cv::imdecode(buffer, cv::IMREAD_COLOR);
  if (decoded.empty()) throw DecodeError("JPEG round trip failed");
  cv::Mat back;
  cv::cvtColor(decoded, back, cv::COLOR_BGR2RGB);
  return from_rgb8(back.ptr<std::uint8_t>(0), back.rows, back.cols);
}

PlanarD corrupt_blocks(const PlanarD& p, const std::vector<std::pair<int, int>>& cells, int bs) {
  PlanarD out = p;
  for (const auto& [cy, cx] : cells)
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (int y = cy * bs; y < (cy + 1) * bs; ++y)
        for (int x = cx * bs; x < (cx + 1) * bs; ++x) mean += p(c, y, x);
      mean /= bs * bs;
      for (int y = cy * bs; y < (cy + 1) * bs; ++y)
        for (int x = cx * bs; x < (cx + 1) * bs; ++x) out(c, y, x) = mean;
    }
  return out;
}

// Full-range BT.601 on the 8-bit scale.
cv::Mat rgb_to_ycbcr255(const PlanarD& p, int padded_h, int padded_w) {
  cv::Mat m(padded_h, padded_w, CV_64FC3);
  for (int y = 0; y < padded_h; ++y)
    for (int x = 0; x < padded_w; ++x) {
      const int sy = std::min(y, p.height() - 1), sx = std::min(x, p.width() - 1);
      const double r = 255.0 * p(0, sy, sx), g = 255.0 * p(1, sy, sx), b = 255.0 * p(2, sy, sx);
      m.at<cv::Vec3d>(y, x) = {0.299 * r + 0.587 * g + 0.114 * b, -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0,
                               0.5 * r - 0.418688 * g - 0.081312 * b + 128.0};
    }
  return m;
}

PlanarD ycbcr255_to_rgb(const cv::Mat& m, int height, int width) {
  PlanarD p(3, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto v = m.at<cv::Vec3d>(y, x);
      const double cb = v[1] - 128.0, cr = v[2] - 128.0;
      p(0, y, x) = std::clamp((v[0] + 1.402 * cr) / 255.0, 0.0, 1.0);
      p(1, y, x) = std::clamp((v[0] - 0.344136 * cb - 0.714136 * cr) / 255.0, 0.0, 1.0);
      p(2, y, x) = std::clamp((v[0] + 1.772 * cb) / 255.0, 0.0, 1.0);
    }
  return p;
}

// Quantizes `signal` blockwise in the DCT domain and returns the reconstruction.
cv::Mat quantize_blocks(const cv::Mat& signal, double step) {
  std::vector<cv::Mat> planes;
  cv::split(signal, planes);
  cv::Mat block, coeffs, recon;
  for (auto& plane : planes)
    for (int by = 0; by < plane.rows; by += 8)
      for (int bx = 0; bx < plane.cols; bx += 8) {
        cv::Mat roi = plane(cv::Rect(bx, by, 8, 8));
        roi.copyTo(block);
        cv::dct(block, coeffs);
        for (int i = 0; i < 64; ++i) {
          double& c = coeffs.at<double>(i / 8, i % 8);
          c = std::nearbyint(c / step) * step;
        }
        cv::idct(coeffs, recon);
        recon.copyTo(roi);
      }
  cv::Mat out;
  cv::merge(planes, out);
  return out;
}

}  // namespace

void LevelTables::validate() const {
  require_monotone(saturation, false, "color_saturation");
  require_monotone(contrast, false, "color_contrast");
  require_monotone(blur_sigma_at_128, true, "gaussian_blur_sigma_at_128");
  require_monotone(noise_sigma, true, "gaussian_noise_sigma");
  require_monotone(jpeg_quality, false, "jpeg_quality");
  require_monotone(video_crf, true, "video_crf");
  require_monotone(block_count, true, "block_wise_count");
  for (int i = 0; i < 5; ++i) {
    if (!(saturation[i] >= 0.0 && saturation[i] <= 1.0) || !(contrast[i] >= 0.0 && contrast[i] <= 1.0))
      throw ValidationError("color scales must lie in [0,1]");
    if (!(blur_sigma_at_128[i] > 0.0) || !(noise_sigma[i] >= 0.0)) throw ValidationError("sigmas must be positive");
    if (jpeg_quality[i] < 1 || jpeg_quality[i] > 100) throw ValidationError("JPEG quality outside [1,100]");
    if (video_crf[i] < 0 || video_crf[i] > 51) throw ValidationError("CRF outside [0,51]");
    if (block_count[i] < 0) throw ValidationError("negative block count");
  }
  if (block_size < 1) throw ValidationError("block_size must be positive");
}

nlohmann::json to_json(const LevelTables& t) {
  return {{"color_saturation", t.saturation},
          {"color_contrast", t.contrast},
          {"gaussian_blur_sigma_at_128", t.blur_sigma_at_128},
          {"gaussian_noise_sigma", t.noise_sigma},
          {"jpeg_quality", t.jpeg_quality},
          {"video_crf", t.video_crf},
          {"block_wise_count", t.block_count},
          {"block_size", t.block_size}};
}

LevelTables level_tables_from_json(const nlohmann::json& j) {
  LevelTables t;
  try {
    t.saturation = j.value("color_saturation", t.saturation);
    t.contrast = j.value("color_contrast", t.contrast);
    t.blur_sigma_at_128 = j.value("gaussian_blur_sigma_at_128", t.blur_sigma_at_128);
    t.noise_sigma = j.value("gaussian_noise_sigma", t.noise_sigma);
    t.jpeg_quality = j.value("jpeg_quality", t.jpeg_quality);
    t.video_crf = j.value("video_crf", t.video_crf);
    t.block_count = j.value("block_wise_count", t.block_count);
    t.block_size = j.value("block_size", t.block_size);
  } catch (const nlohmann::json::exception& err) {
    throw ValidationError(std::string("level tables: ") + err.what());
  }
  t.validate();
  return t;
}

LevelTables load_level_tables(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read level tables '" + path.string() + "'");
  try {
    return level_tables_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& err) {
    throw ValidationError("level tables '" + path.string() + "': " + err.what());
  }
}

double DctVideoCodec::quant_step(int crf) { return 0.625 * std::pow(2.0, crf / 6.0); }

std::vector<PlanarD> DctVideoCodec::transcode(const std::vector<PlanarD>& frames, int crf) const {
  std::vector<PlanarD> out;
  if (frames.empty()) return out;
  const int h = frames.front().height(), w = frames.front().width();
  const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
  const double step = quant_step(crf);
  cv::Mat reference;
  for (const auto& frame : frames) {
    const cv::Mat ycc = rgb_to_ycbcr255(frame, ph, pw);
    if (reference.empty()) {
      reference = quantize_blocks(ycc, step);
    } else {
      cv::Mat residual = ycc - reference;
      reference = reference + quantize_blocks(residual, step);
    }
    out.push_back(ycbcr255_to_rgb(reference, h, w));
  }
  return out;
}

VideoClip apply_distortion(const VideoClip& clip, const DistortionSpec& spec, std::uint64_t seed,
                           const LevelTables& tables) {
  spec.validate();
  const int i = spec.level - 1;
  VideoClip out = clip;
  std::mt19937_64 rng(splitmix64(seed));
  auto each = [&](auto&& fn) {
    for (auto& f : out.frames) f.pixels = fn(f.pixels);
  };
  switch (spec.kind) {
    case DistortionKind::color_saturation:
      each([&](const PlanarD& p) { return scale_saturation(p, tables.saturation[i]); });
      break;
    case DistortionKind::color_contrast:
      each([&](const PlanarD& p) { return scale_contrast(p, tables.contrast[i]); });
      break;
    case DistortionKind::gaussian_blur: {
      const double sigma = tables.blur_sigma_at_128[i] * clip.width() / 128.0;
      each([&](const PlanarD& p) { return gaussian_blur(p, sigma); });
      break;
    }
    case DistortionKind::gaussian_noise:
      each([&](const PlanarD& p) { return gaussian_noise(p, tables.noise_sigma[i], rng); });
      break;
    case DistortionKind::jpeg_compression:
      each([&](const PlanarD& p) { return jpeg_roundtrip(p, tables.jpeg_quality[i]); });
      break;
    case DistortionKind::video_compression: {
      std::vector<PlanarD> planes;
      for (const auto& f : clip.frames) planes.push_back(f.pixels);
      auto coded = DctVideoCodec{}.transcode(planes, tables.video_crf[i]);
      for (std::size_t k = 0; k < coded.size(); ++k) out.frames[k].pixels = std::move(coded[k]);
      break;
    }
    case DistortionKind::block_wise: {
      // One permutation per seed, so a higher level corrupts a superset of cells.
      const int bs = tables.block_size;
      std::vector<std::pair<int, int>> cells;
      for (int cy = 0; cy < clip.height() / bs; ++cy)
        for (int cx = 0; cx < clip.width() / bs; ++cx) cells.emplace_back(cy, cx);
      std::shuffle(cells.begin(), cells.end(), rng);
      cells.resize(std::min<std::size_t>(cells.size(), tables.block_count[i]));
      each([&](const PlanarD& p) { return corrupt_blocks(p, cells, bs); });
      break;
    }
  }
  out.distortion_history.push_back(spec);
  return out;
}

std::string_view to_string(PerturbMode mode) {
  switch (mode) {
    case PerturbMode::single_level_random_type: return "single_level_random_type";
    case PerturbMode::random_level_random_type: return "random_level_random_type";
    case PerturbMode::mixture: return "mixture";
  }
  throw ValidationError("invalid perturb mode");
}

PerturbMode parse_perturb_mode(std::string_view text) {
  if (text == "sing" || text == "single_level_random_type") return PerturbMode::single_level_random_type;
  if (text == "rand" || text == "random_level_random_type") return PerturbMode::random_level_random_type;
  if (text == "mix" || text == "mixture") return PerturbMode::mixture;
  throw ValidationError("unknown perturb mode '" + std::string(text) + "'");
}

void PerturbPlan::validate(int max_length) const {
  if (specs.empty()) throw ValidationError("perturb plan is empty");
  if (static_cast<int>(specs.size()) > max_length)
    throw ValidationError("perturb plan longer than " + std::to_string(max_length));
  for (const auto& s : specs) s.validate();
}

PerturbPlan random_plan(PerturbMode mode, int mix_count, std::uint64_t seed) {
  PerturbPlan plan;
  plan.seed = seed;
  std::mt19937_64 rng(splitmix64(seed ^ 0x706c616eULL));
  std::uniform_int_distribution<int> kind(0, static_cast<int>(kAllDistortionKinds.size()) - 1);
  std::uniform_int_distribution<int> pair(0, static_cast<int>(kAllDistortionKinds.size()) * kDistortionLevels - 1);
  auto random_pair = [&] {
    const int k = pair(rng);
    return DistortionSpec{kAllDistortionKinds[k / kDistortionLevels], k % kDistortionLevels + 1};
  };
  switch (mode) {
    case PerturbMode::single_level_random_type:
      plan.specs.push_back({kAllDistortionKinds[kind(rng)], kDistortionLevels});
      break;
    case PerturbMode::random_level_random_type:
      plan.specs.push_back(random_pair());
      break;
    case PerturbMode::mixture:
      if (mix_count < 2 || mix_count > PerturbPlan::kMaxPlanLength)
        throw ValidationError("mixture needs mix_count in [2," + std::to_string(PerturbPlan::kMaxPlanLength) +
                              "], got " + std::to_string(mix_count));
      for (int i = 0; i < mix_count; ++i) plan.specs.push_back(random_pair());
      break;
    default:
      throw ValidationError("invalid perturb mode");
  }
  return plan;
}

VideoClip apply_plan(const VideoClip& clip, const PerturbPlan& plan, const LevelTables& tables) {
  plan.validate();
  VideoClip out = clip;
  for (std::size_t i = 0; i < plan.specs.size(); ++i)
    out = apply_distortion(out, plan.specs[i], splitmix64(plan.seed + i), tables);
  return out;
}

std::uint64_t clip_seed(std::uint64_t global_seed, std::string_view clip_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : clip_id) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(h ^ splitmix64(global_seed));
}

std::string variant_clip_id(std::string_view clip_id, PerturbMode mode, int level) {
  std::string id(clip_id);
  switch (mode) {
    case PerturbMode::single_level_random_type: return id + "-sing-l" + std::to_string(level);
    case PerturbMode::random_level_random_type: return id + "-rand";
    case PerturbMode::mixture: return id + "-mix";
  }
  throw ValidationError("invalid perturb mode");
}

DatasetManifest build_variant(const DatasetManifest& manifest, const fs::path& input_root, const fs::path& output_root,
                              const VariantOptions& options) {
  options.tables.validate();
  if (options.mode == PerturbMode::mixture) random_plan(options.mode, options.mix_count, 0);  // validates mix_count
  std::string missing;
  for (const auto& e : manifest.entries)
    if (!fs::exists(clip_directory(input_root, e.clip_id) / "meta.json"))
      missing += (missing.empty() ? "" : ", ") + e.clip_id;
  if (!missing.empty()) throw IoError("build_variant: missing clips: " + missing);

  DatasetManifest out;
  out.seed = options.seed;
  for (const auto& e : manifest.entries) {
    const VideoClip clip = load_clip(clip_directory(input_root, e.clip_id));
    const std::uint64_t seed = clip_seed(options.seed, e.clip_id);
    auto record = [&](VideoClip perturbed, const std::vector<DistortionSpec>& added, std::string id) {
      perturbed.clip_id = id;
      write_clip(perturbed, clip_directory(output_root, id));
      ManifestEntry entry = e;
      entry.clip_id = std::move(id);
      entry.distortion_history.insert(entry.distortion_history.end(), added.begin(), added.end());
      out.entries.push_back(std::move(entry));
    };
    if (options.mode == PerturbMode::single_level_random_type) {
      const DistortionKind kind = random_plan(options.mode, 0, seed).specs.front().kind;
      for (int level = 1; level <= kDistortionLevels; ++level) {
        const DistortionSpec spec{kind, level};
        record(apply_distortion(clip, spec, seed, options.tables), {spec},
               variant_clip_id(e.clip_id, options.mode, level));
      }
    } else {
      const auto plan = random_plan(options.mode, options.mix_count, seed);
      record(apply_plan(clip, plan, options.tables), plan.specs, variant_clip_id(e.clip_id, options.mode));
    }
  }
  validate_manifest(out);
  return out;
}

}  // namespace dfvae
