#include "dfvae/media.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dfvae {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kMinSide = 8;

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::array<std::pair<Enum, std::string_view>, N>& table,
                const char* what) {
  for (const auto& [value, name] : table)
    if (name == text) return value;
  throw ValidationError(std::string("unknown ") + what + " '" + std::string(text) + "'");
}

constexpr std::array<std::pair<Label, std::string_view>, 3> kLabelNames{{
    {Label::real, "real"}, {Label::fake, "fake"}, {Label::unknown, "unknown"}}};
constexpr std::array<std::pair<Split, std::string_view>, 4> kSplitNames{{
    {Split::train, "train"}, {Split::val, "val"}, {Split::test, "test"}, {Split::hidden, "hidden"}}};
constexpr std::array<std::pair<DistortionKind, std::string_view>, 7> kKindNames{{
    {DistortionKind::color_saturation, "color_saturation"},
    {DistortionKind::block_wise, "block_wise"},
    {DistortionKind::color_contrast, "color_contrast"},
    {DistortionKind::gaussian_blur, "gaussian_blur"},
    {DistortionKind::gaussian_noise, "gaussian_noise"},
    {DistortionKind::jpeg_compression, "jpeg_compression"},
    {DistortionKind::video_compression, "video_compression"},
}};

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum value, const std::array<std::pair<Enum, std::string_view>, N>& table) {
  for (const auto& [v, name] : table)
    if (v == value) return name;
  return "?";
}

ordered_json history_to_json(const std::vector<DistortionSpec>& history) {
  ordered_json out = ordered_json::array();
  for (const auto& spec : history) {
    ordered_json item;
    item["kind"] = to_string(spec.kind);
    item["level"] = spec.level;
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<DistortionSpec> history_from_json(const nlohmann::json& j) {
  std::vector<DistortionSpec> out;
  for (const auto& item : j) {
    DistortionSpec spec{parse_distortion_kind(item.at("kind").get<std::string>()), item.at("level").get<int>()};
    spec.validate();
    out.push_back(spec);
  }
  return out;
}

bool is_video_container(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".avi" || ext == ".mp4" || ext == ".mkv";
}

cv::Mat to_bgr_mat(const PlanarD& pixels) {
  const auto rgb = to_rgb8(pixels);
  cv::Mat rgb_mat(pixels.height(), pixels.width(), CV_8UC3, const_cast<std::uint8_t*>(rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb_mat, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

PlanarD from_bgr_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (!rgb.isContinuous()) rgb = rgb.clone();
  return from_rgb8(rgb.ptr<std::uint8_t>(), rgb.rows, rgb.cols);
}

ordered_json clip_meta(const VideoClip& clip) {
  ordered_json meta;
  meta["format"] = "dfvae-clip";
  meta["version"] = 1;
  meta["clip_id"] = clip.clip_id;
  meta["fps"] = clip.fps;
  meta["label"] = to_string(clip.label);
  meta["height"] = clip.height();
  meta["width"] = clip.width();
  meta["distortion_history"] = history_to_json(clip.distortion_history);
  ordered_json frames = ordered_json::array();
  for (const auto& f : clip.frames) {
    ordered_json item;
    item["frame_index"] = f.frame_index;
    item["identity"] = f.identity;
    if (f.landmarks) {
      ordered_json pts = ordered_json::array();
      for (const auto& p : *f.landmarks) pts.push_back({p.x, p.y});
      item["landmarks"] = std::move(pts);
    }
    frames.push_back(std::move(item));
  }
  meta["frames"] = std::move(frames);
  return meta;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

VideoClip assemble_clip(const nlohmann::json& meta, std::vector<PlanarD> images, const fs::path& origin) {
  const auto& frames_meta = meta.at("frames");
  if (images.size() < 2) throw ArityError("clip '" + origin.string() + "' has fewer than 2 frames");
  if (frames_meta.size() != images.size())
    throw DecodeError("clip '" + origin.string() + "': metadata lists " + std::to_string(frames_meta.size()) +
                      " frames but " + std::to_string(images.size()) + " decoded");
  VideoClip clip;
  clip.clip_id = meta.at("clip_id").get<std::string>();
  clip.fps = meta.at("fps").get<double>();
  clip.label = parse_label(meta.at("label").get<std::string>());
  clip.distortion_history = history_from_json(meta.value("distortion_history", nlohmann::json::array()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& fm = frames_meta[i];
    std::optional<std::vector<Point2>> landmarks;
    if (fm.contains("landmarks")) {
      std::vector<Point2> pts;
      for (const auto& p : fm["landmarks"]) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      landmarks = std::move(pts);
    }
    clip.frames.push_back(make_frame(std::move(images[i]), fm.value("identity", std::string{}),
                                     fm.at("frame_index").get<int>(), std::move(landmarks)));
  }
  clip.validate();
  return clip;
}

}  // namespace

std::string_view to_string(Label label) { return enum_name(label, kLabelNames); }
std::string_view to_string(DistortionKind kind) { return enum_name(kind, kKindNames); }
std::string_view to_string(Split split) { return enum_name(split, kSplitNames); }
Label parse_label(std::string_view text) { return parse_enum(text, kLabelNames, "label"); }
DistortionKind parse_distortion_kind(std::string_view text) {
  return parse_enum(text, kKindNames, "distortion kind");
}
Split parse_split(std::string_view text) { return parse_enum(text, kSplitNames, "split"); }

void FaceFrame::validate() const {
  if (pixels.channels() != 3) throw ValidationError("face frame must have 3 channels");
  if (pixels.height() < kMinSide || pixels.width() < kMinSide)
    throw ValidationError("face frame smaller than 8x8: " + pixels.shape_string());
  if (!pixels.array().isFinite().all() || (pixels.array() < 0.0).any() || (pixels.array() > 1.0).any())
    throw ValidationError("face frame pixels outside [0,1]");
  if (frame_index < 0) throw ValidationError("negative frame index");
  if (landmarks) {
    for (const auto& p : *landmarks) {
      if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= width() - 1 && p.y <= height() - 1))
        throw ValidationError("landmark (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                              ") outside image bounds");
    }
  }
}

FaceFrame make_frame(PlanarD pixels, std::string identity, int frame_index,
                     std::optional<std::vector<Point2>> landmarks) {
  FaceFrame f{std::move(pixels), std::move(landmarks), std::move(identity), frame_index};
  f.validate();
  return f;
}

void Mask::validate() const {
  if (values.channels() != 1) throw ValidationError("mask must have one channel");
  const auto& v = values.array();
  if (kind == MaskKind::binary) {
    if (!((v == 0.0) || (v == 1.0)).all()) throw ValidationError("binary mask holds values other than 0/1");
  } else if (!v.isFinite().all() || (v < 0.0).any() || (v > 1.0).any()) {
    throw ValidationError("blurred mask values outside [0,1]");
  }
}

void DistortionSpec::validate() const {
  const auto k = static_cast<int>(kind);
  if (k < 0 || k >= static_cast<int>(kAllDistortionKinds.size()))
    throw ValidationError("invalid distortion kind " + std::to_string(k));
  if (level < 1 || level > kDistortionLevels)
    throw ValidationError("distortion level " + std::to_string(level) + " outside [1,5]");
}

void VideoClip::validate() const {
  if (frames.size() < 2) throw ArityError("clip '" + clip_id + "' needs at least 2 frames");
  if (!(fps > 0.0) || !std::isfinite(fps)) throw ValidationError("clip '" + clip_id + "' has nonpositive fps");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].validate();
    if (!frames[i].pixels.same_shape(frames.front().pixels))
      throw ValidationError("clip '" + clip_id + "' mixes frame sizes");
    if (i > 0 && frames[i].frame_index <= frames[i - 1].frame_index)
      throw ValidationError("clip '" + clip_id + "' frame indices not strictly increasing");
  }
  for (const auto& spec : distortion_history) spec.validate();
}

void validate_manifest(const DatasetManifest& manifest) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  std::map<std::string, std::set<Split>> identity_splits;
  for (const auto& e : manifest.entries) {
    if (e.clip_id.empty()) problems.push_back("entry with empty clip_id");
    if (!seen.insert(e.clip_id).second) problems.push_back("duplicate clip_id '" + e.clip_id + "'");
    if (e.split != Split::hidden) identity_splits[e.identity].insert(e.split);
    for (const auto& spec : e.distortion_history) {
      try {
        spec.validate();
      } catch (const ValidationError& err) {
        problems.push_back("clip '" + e.clip_id + "': " + err.what());
      }
    }
  }
  for (const auto& [identity, splits] : identity_splits) {
    if (splits.size() > 1) {
      std::string names;
      for (auto s : splits) names += std::string(names.empty() ? "" : ",") + std::string(to_string(s));
      std::string clips;
      for (const auto& e : manifest.entries)
        if (e.identity == identity && e.split != Split::hidden)
          clips += std::string(clips.empty() ? "" : ",") + e.clip_id;
      problems.push_back("identity '" + identity + "' appears in splits {" + names + "} (clips " + clips + ")");
    }
  }
  if (!problems.empty()) {
    std::string msg = "manifest validation failed:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
}

std::string serialize_manifest(const DatasetManifest& manifest) {
  validate_manifest(manifest);
  std::string out;
  ordered_json header;
  header["format"] = "dfvae-manifest";
  header["version"] = 1;
  header["seed"] = manifest.seed;
  out += header.dump() + "\n";
  for (const auto& e : manifest.entries) {
    ordered_json line;
    line["clip_id"] = e.clip_id;
    line["identity"] = e.identity;
    line["label"] = to_string(e.label);
    line["split"] = to_string(e.split);
    line["distortion_history"] = history_to_json(e.distortion_history);
    out += line.dump() + "\n";
  }
  return out;
}

DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& err) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + err.what());
    }
    if (!have_header) {
      if (j.value("format", std::string{}) != "dfvae-manifest")
        throw ValidationError("manifest header missing or wrong format tag");
      m.seed = j.at("seed").get<std::uint64_t>();
      have_header = true;
      continue;
    }
    try {
      ManifestEntry e;
      e.clip_id = j.at("clip_id").get<std::string>();
      e.identity = j.at("identity").get<std::string>();
      e.label = parse_label(j.at("label").get<std::string>());
      e.split = parse_split(j.at("split").get<std::string>());
      e.distortion_history = history_from_json(j.at("distortion_history"));
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& err) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  if (!have_header) throw ValidationError("manifest is empty (no header line)");
  validate_manifest(m);
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  write_text(path, serialize_manifest(manifest));
}

DatasetManifest read_manifest(const fs::path& path) { return parse_manifest(read_text(path)); }

DatasetManifest client_view(const DatasetManifest& manifest) {
  DatasetManifest out = manifest;
  for (auto& e : out.entries)
    if (e.split == Split::hidden) e.label = Label::unknown;
  return out;
}

fs::path clip_directory(const fs::path& root, std::string_view clip_id) { return root / std::string(clip_id); }

std::vector<std::uint8_t> to_rgb8(const PlanarD& pixels) {
  const int h = pixels.height(), w = pixels.width();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(pixels(c, y, x), 0.0, 1.0);
        out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return out;
}

PlanarD from_rgb8(const std::uint8_t* rgb, int height, int width) {
  PlanarD out(3, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        out(c, y, x) = rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] / 255.0;
  return out;
}

std::vector<std::uint8_t> encode_png(const PlanarD& pixels) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_bgr_mat(pixels), out)) throw IoError("PNG encoding failed");
  return out;
}

void write_clip(const VideoClip& clip, const fs::path& path) {
  clip.validate();
  const auto meta = clip_meta(clip);
  if (is_video_container(path)) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    cv::VideoWriter writer(path.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), clip.fps,
                           cv::Size(clip.width(), clip.height()));
    if (!writer.isOpened()) throw IoError("cannot open video writer for '" + path.string() + "'");
    for (const auto& f : clip.frames) writer.write(to_bgr_mat(f.pixels));
    writer.release();
    write_text(fs::path(path.string() + ".meta.json"), meta.dump(1));
    return;
  }
  fs::create_directories(path);
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    if (!cv::imwrite((path / name).string(), to_bgr_mat(clip.frames[i].pixels)))
      throw IoError("failed to write frame " + (path / name).string());
  }
  write_text(path / "meta.json", meta.dump(1));
}

VideoClip load_clip(const fs::path& path) {
  if (!fs::exists(path)) throw DecodeError("clip path '" + path.string() + "' does not exist");
  nlohmann::json meta;
  std::vector<PlanarD> images;
  try {
    if (is_video_container(path)) {
      meta = nlohmann::json::parse(read_text(fs::path(path.string() + ".meta.json")));
      cv::VideoCapture cap(path.string());
      if (!cap.isOpened()) throw DecodeError("cannot decode video '" + path.string() + "'");
      cv::Mat frame;
      while (cap.read(frame)) images.push_back(from_bgr_mat(frame));
    } else {
      meta = nlohmann::json::parse(read_text(path / "meta.json"));
      const std::size_t n = meta.at("frames").size();
      for (std::size_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.png", i);
        cv::Mat img = cv::imread((path / name).string(), cv::IMREAD_COLOR);
        if (img.empty()) throw DecodeError("cannot decode frame '" + (path / name).string() + "'");
        images.push_back(from_bgr_mat(img));
      }
    }
  } catch (const nlohmann::json::exception& err) {
    throw DecodeError("bad clip metadata for '" + path.string() + "': " + err.what());
  } catch (const IoError& err) {
    throw DecodeError(err.what());
  }
  return assemble_clip(meta, std::move(images), path);
}

}  // namespace dfvae
