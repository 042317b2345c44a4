#include "dfvae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dfvae {

namespace {

using Color = std::array<double, 3>;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

Color mix(const Color& a, const Color& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

// Face-local coordinates in head half-axis units: u to the image right, v down.
struct Local {
  double u, v, depth;
};

std::vector<Local> neutral_layout(const IdentityParams& id, const ExpressionParams& ex) {
  std::vector<Local> p;
  p.reserve(68);
  for (int k = 0; k <= 16; ++k) {
    const double t = std::numbers::pi * k / 16.0;
    p.push_back({-0.95 * std::cos(t), -0.05 + 0.98 * std::sin(t), 0.0});
  }
  const double brow_v = -0.38 - 0.08 * ex.brow_raise;
  for (int side : {-1, 1})
    for (int k = 0; k < 5; ++k) {
      const int i = side < 0 ? k : 4 - k;
      const double u = side * (0.18 + 0.11 * i);
      const double arch = 0.06 * std::sin(std::numbers::pi * (i + 0.5) / 5.0);
      p.push_back({u, brow_v - arch, 0.0});
    }
  for (int k = 0; k < 4; ++k) p.push_back({0.0, -0.28 + 0.12 * k, 0.1 + 0.05 * k});
  for (int k = 0; k < 5; ++k) {
    const double u = -0.14 + 0.07 * k;
    p.push_back({u, 0.16 + 0.03 * (1.0 - std::abs(u) / 0.14), 0.12});
  }
  const double ec = std::clamp(id.eye_spacing, 0.2, 0.5);
  const double ew = 1.6 * id.eye_size;
  const double eh = std::max(0.02, 0.45 * ew * std::clamp(ex.eye_open, 0.0, 1.0));
  const double ev = -0.2;
  // Right eye (image left): outer corner, two top, inner corner, two bottom.
  {
    const double c = -ec;
    p.push_back({c - ew, ev, 0.0});
    p.push_back({c - 0.35 * ew, ev - eh, 0.0});
    p.push_back({c + 0.35 * ew, ev - eh, 0.0});
    p.push_back({c + ew, ev, 0.0});
    p.push_back({c + 0.35 * ew, ev + eh, 0.0});
    p.push_back({c - 0.35 * ew, ev + eh, 0.0});
  }
  {
    const double c = ec;
    p.push_back({c - ew, ev, 0.0});
    p.push_back({c - 0.35 * ew, ev - eh, 0.0});
    p.push_back({c + 0.35 * ew, ev - eh, 0.0});
    p.push_back({c + ew, ev, 0.0});
    p.push_back({c + 0.35 * ew, ev + eh, 0.0});
    p.push_back({c - 0.35 * ew, ev + eh, 0.0});
  }
  const double mw = std::clamp(id.mouth_width, 0.2, 0.5);
  const double mv = 0.45;
  const double corner = mv - 0.08 * std::clamp(ex.smile, -1.0, 1.0);
  const double open = std::clamp(ex.mouth_open, 0.0, 1.0);
  const double top = mv - 0.05, bottom = mv + 0.05 + 0.18 * open;
  p.push_back({-mw, corner, 0.0});
  for (int k = 1; k <= 5; ++k) {
    const double u = -mw + mw * k / 3.0;
    const double dip = (k == 3) ? 0.015 : 0.0;
    p.push_back({u, top + dip - 0.02 * std::cos(std::numbers::pi * (u / mw) / 2.0), 0.02});
  }
  p.push_back({mw, corner, 0.0});
  for (int k = 1; k <= 5; ++k) {
    const double u = mw - mw * k / 3.0;
    p.push_back({u, bottom - (bottom - corner) * std::pow(std::abs(u) / mw, 2.0), 0.02});
  }
  const double iw = 0.75 * mw;
  const double gap = 0.16 * open;
  const double inner_corner = 0.5 * (corner + mv);
  p.push_back({-iw, inner_corner, 0.0});
  for (int k = 1; k <= 3; ++k) p.push_back({-iw + iw * k / 2.0, mv - 0.01, 0.02});
  p.push_back({iw, inner_corner, 0.0});
  for (int k = 1; k <= 3; ++k) p.push_back({iw - iw * k / 2.0, mv - 0.01 + gap, 0.02});
  return p;
}

struct Projector {
  double cx, cy, rx, ry, c, s;

  Point2 operator()(const Local& l, bool silhouette) const {
    if (silhouette) {
      const double shift = 0.15 * s * (1.0 - std::abs(l.u));
      return {cx + rx * (l.u + shift), cy + ry * l.v};
    }
    const double z = std::sqrt(std::max(0.0, 1.0 - l.u * l.u - 0.6 * l.v * l.v)) * 0.8 + l.depth;
    const double x = std::clamp(l.u * c + z * s, -0.97, 0.97);
    return {cx + rx * x, cy + ry * l.v};
  }
};

double seg_dist(const Point2& p, const Point2& a, const Point2& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0 ? std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(p.x - a.x - t * vx, p.y - a.y - t * vy);
}

bool in_polygon(const Point2& p, const std::vector<Point2>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    if ((poly[i].y > p.y) != (poly[j].y > p.y) &&
        p.x < (poly[j].x - poly[i].x) * (p.y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x)
      inside = !inside;
  }
  return inside;
}

struct Eye {
  Point2 center;
  double half_w, half_h;
};

Eye eye_from(const std::vector<Point2>& lm, int first) {
  const auto& a = lm[first];
  const auto& b = lm[first + 3];
  const double top = 0.5 * (lm[first + 1].y + lm[first + 2].y);
  const double bottom = 0.5 * (lm[first + 4].y + lm[first + 5].y);
  return {{0.5 * (a.x + b.x), 0.5 * (top + bottom)}, std::max(0.5, 0.5 * std::abs(b.x - a.x)),
          std::max(0.3, 0.5 * (bottom - top))};
}

}  // namespace

IdentityParams IdentityParams::from_seed(std::uint64_t seed, std::string name) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);
  IdentityParams p;
  p.name = std::move(name);
  const Color light_skin{0.96, 0.82, 0.70}, dark_skin{0.45, 0.30, 0.20};
  p.skin = mix(light_skin, dark_skin, uniform(rng, 0.0, 1.0));
  p.hair = {uniform(rng, 0.05, 0.6), uniform(rng, 0.03, 0.45), uniform(rng, 0.02, 0.3)};
  p.iris = {uniform(rng, 0.1, 0.5), uniform(rng, 0.2, 0.6), uniform(rng, 0.2, 0.7)};
  p.lips = {uniform(rng, 0.5, 0.85), uniform(rng, 0.15, 0.4), uniform(rng, 0.15, 0.4)};
  p.background = {uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)};
  p.head_width = uniform(rng, 0.30, 0.40);
  p.head_height = uniform(rng, 0.38, 0.46);
  p.eye_spacing = uniform(rng, 0.30, 0.42);
  p.eye_size = uniform(rng, 0.08, 0.12);
  p.mouth_width = uniform(rng, 0.28, 0.45);
  p.hairline = uniform(rng, 0.35, 0.6);
  return p;
}

FaceFrame synth_face(const IdentityParams& id, double pose, const ExpressionParams& ex, const LightDirection& light,
                     int size, int frame_index) {
  if (!(pose >= -90.0 && pose <= 90.0)) throw DomainError("synth_face: pose must lie in [-90, 90] degrees");
  if (size < 8) throw ShapeError("synth_face: size must be at least 8");
  const double theta = pose * std::numbers::pi / 180.0;
  const double mid = 0.5 * (size - 1);
  const Projector proj{mid, mid, id.head_width * size, id.head_height * size, std::cos(theta), std::sin(theta)};

  const auto layout = neutral_layout(id, ex);
  std::vector<Point2> lm(layout.size());
  for (std::size_t k = 0; k < layout.size(); ++k) {
    lm[k] = proj(layout[k], k <= 16);
    lm[k].x = std::clamp(lm[k].x, 0.0, size - 1.0);
    lm[k].y = std::clamp(lm[k].y, 0.0, size - 1.0);
  }

  const std::vector<Point2> outer_mouth(lm.begin() + 48, lm.begin() + 60);
  const std::vector<Point2> inner_mouth(lm.begin() + 60, lm.begin() + 68);
  const Eye eyes[2] = {eye_from(lm, 36), eye_from(lm, 42)};
  const double norm = std::sqrt(light.x * light.x + light.y * light.y + light.z * light.z);
  const double lx = light.x / norm, ly = light.y / norm, lz = light.z / norm;
  const double brow_thickness = 0.022 * size;
  const bool open = ex.mouth_open > 0.02;

  auto shade_at = [&](double px, double py) -> Color {
    const double dx = (px - proj.cx) / proj.rx, dy = (py - proj.cy) / proj.ry;
    const double r2 = dx * dx + dy * dy;
    Color bg = mix(id.background, {id.background[0] * 0.6, id.background[1] * 0.6, id.background[2] * 0.6},
                   py / size);
    if (r2 > 1.0) return bg;
    if (dy < -id.hairline && r2 > 0.0) {
      const double wave = 0.04 * std::sin(9.0 * dx);
      if (dy < -id.hairline + wave) return mix(id.hair, {1, 1, 1}, 0.1 * (1.0 + dx));
    }
    const double nz = std::sqrt(std::max(0.0, 1.0 - r2));
    const double lambert = std::max(0.0, dx * lx + dy * ly + nz * lz);
    const double shade = 0.35 + 0.65 * lambert;
    Color c{id.skin[0] * shade, id.skin[1] * shade, id.skin[2] * shade};
    const Point2 p{px, py};
    for (int k = 17; k < 26; ++k) {
      if (k == 21) continue;
      if (seg_dist(p, lm[k], lm[k + 1]) < brow_thickness) return id.hair;
    }
    for (const auto& e : eyes) {
      const double ex2 = (px - e.center.x) / e.half_w, ey2 = (py - e.center.y) / e.half_h;
      if (ex2 * ex2 + ey2 * ey2 <= 1.0) {
        const double ir = std::min(e.half_h, 0.45 * e.half_w) * 1.1;
        const double d = std::hypot(px - e.center.x, py - e.center.y);
        if (d < 0.45 * ir) return {0.05, 0.05, 0.05};
        if (d < ir) return id.iris;
        return {0.95, 0.95, 0.93};
      }
    }
    if (open && in_polygon(p, inner_mouth)) return {0.18, 0.05, 0.06};
    if (in_polygon(p, outer_mouth)) return {id.lips[0] * shade, id.lips[1] * shade, id.lips[2] * shade};
    for (int k = 27; k < 30; ++k)
      if (seg_dist(p, lm[k], lm[k + 1]) < 0.012 * size) return mix(c, {0, 0, 0}, 0.15);
    for (int k = 31; k < 35; ++k)
      if (seg_dist(p, lm[k], lm[k + 1]) < 0.015 * size) return mix(c, {0, 0, 0}, 0.3);
    return c;
  };

  PlanarD pixels(3, size, size);
  constexpr double offsets[2] = {-0.25, 0.25};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      Color acc{0, 0, 0};
      for (double oy : offsets)
        for (double ox : offsets) {
          const Color c = shade_at(x + ox, y + oy);
          for (int ch = 0; ch < 3; ++ch) acc[ch] += 0.25 * c[ch];
        }
      for (int ch = 0; ch < 3; ++ch) pixels(ch, y, x) = std::clamp(acc[ch], 0.0, 1.0);
    }
  return make_frame(std::move(pixels), id.name, frame_index, std::move(lm));
}

LightDirection lighting_condition(int index) {
  const int i = ((index % 9) + 9) % 9;
  constexpr double xs[3] = {-0.6, 0.0, 0.6};
  constexpr double ys[3] = {-0.5, 0.0, 0.4};
  return {xs[i % 3], ys[i / 3], 1.0};
}

VideoClip synth_clip(const IdentityParams& identity, const std::string& clip_id, const SynthClipConfig& config,
                     std::uint64_t seed, int light_condition) {
  if (config.frames < 2) throw ArityError("synth_clip: a clip needs at least 2 frames");
  std::mt19937_64 rng(seed ^ 0xC0FFEE1234ULL);
  const double phase0 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double pose0 = uniform(rng, -10.0, 10.0);
  const double talk = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const auto light = lighting_condition(light_condition);
  VideoClip clip;
  clip.clip_id = clip_id;
  clip.fps = config.fps;
  clip.label = Label::real;
  for (int t = 0; t < config.frames; ++t) {
    const double phi = phase0 + config.motion_rate * t;
    const double pose = std::clamp(pose0 + config.pose_amplitude * std::sin(phi), -90.0, 90.0);
    ExpressionParams ex;
    ex.mouth_open = 0.4 + 0.4 * std::sin(1.7 * phi + talk);
    ex.smile = 0.3 * std::sin(0.6 * phi + talk);
    ex.brow_raise = 0.2 * std::sin(0.9 * phi);
    clip.frames.push_back(synth_face(identity, pose, ex, light, config.size, t));
  }
  clip.validate();
  return clip;
}

std::vector<IdentityParams> synth_identities(int count, std::uint64_t seed) {
  std::vector<IdentityParams> out;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "id%03d", i);
    out.push_back(IdentityParams::from_seed(seed * 1000003ULL + static_cast<std::uint64_t>(i), name));
  }
  return out;
}

DatasetManifest synth_dataset(const std::filesystem::path& root, const SynthDatasetConfig& config) {
  if (config.identities < 1 || config.clips_per_identity < 1)
    throw ValidationError("synth_dataset: need at least one identity and one clip per identity");
  DatasetManifest manifest;
  manifest.seed = config.seed;
  const auto ids = synth_identities(config.identities, config.seed);
  for (int i = 0; i < config.identities; ++i)
    for (int c = 0; c < config.clips_per_identity; ++c) {
      char clip_id[32];
      std::snprintf(clip_id, sizeof clip_id, "%s_c%02d", ids[i].name.c_str(), c);
      const std::uint64_t clip_seed = config.seed * 7919ULL + static_cast<std::uint64_t>(i * 131 + c);
      const auto clip = synth_clip(ids[i], clip_id, config.clip, clip_seed, (i + c) % 9);
      write_clip(clip, clip_directory(root, clip_id));
      manifest.entries.push_back({clip_id, ids[i].name, Label::real, Split::train, {}});
    }
  validate_manifest(manifest);
  return manifest;
}

}  // namespace dfvae
