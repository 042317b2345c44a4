#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <cmath>
#include <map>
#include <set>

#include "dfvae/perturb.hpp"
#include "dfvae/synth.hpp"

using namespace dfvae;
using dfvae::test::Gen;

namespace {

std::vector<VideoClip> corpus(int n, int frames = 3, int size = 32) {
  const auto ids = synth_identities(n, 2);
  SynthClipConfig cc;
  cc.frames = frames;
  cc.size = size;
  std::vector<VideoClip> out;
  for (int i = 0; i < n; ++i) out.push_back(synth_clip(ids[i], "c" + std::to_string(i), cc, 100 + i, i % 9));
  return out;
}

double clip_mae(const VideoClip& a, const VideoClip& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.frames[i].pixels.array() - b.frames[i].pixels.array()).abs().mean();
  return s / static_cast<double>(a.size());
}

bool identical(const VideoClip& a, const VideoClip& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a.frames[i].pixels == b.frames[i].pixels)) return false;
  return a.distortion_history == b.distortion_history;
}

DatasetManifest write_corpus(const std::filesystem::path& root, const std::vector<VideoClip>& clips) {
  DatasetManifest m;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    write_clip(clips[i], clip_directory(root, clips[i].clip_id));
    m.entries.push_back({clips[i].clip_id, clips[i].frames[0].identity, i % 2 ? Label::fake : Label::real,
                         i < 2 ? Split::test : Split::train, {}});
  }
  return m;
}

}  // namespace

TEST_CASE("all 35 kind and level combinations apply") {
  const auto clip = corpus(1).front();
  std::set<std::pair<int, int>> done;
  for (auto kind : kAllDistortionKinds)
    for (int level = 1; level <= kDistortionLevels; ++level) {
      const DistortionSpec spec{kind, level};
      const auto out = apply_distortion(clip, spec, 1);
      out.validate();
      CHECK(out.size() == clip.size());
      CHECK(out.distortion_history == std::vector<DistortionSpec>{spec});
      CHECK(out.frames[0].landmarks == clip.frames[0].landmarks);
      done.insert({static_cast<int>(kind), level});
    }
  CHECK(done.size() == 35);
  CHECK_THROWS_AS(apply_distortion(clip, {DistortionKind::gaussian_blur, 0}, 1), ValidationError);
  CHECK_THROWS_AS(apply_distortion(clip, {DistortionKind::gaussian_blur, 6}, 1), ValidationError);
}

TEST_CASE("mean absolute error rises with level for every kind") {
  const auto clips = corpus(10);
  for (auto kind : kAllDistortionKinds) {
    CAPTURE(to_string(kind));
    double previous = 0.0;
    for (int level = 1; level <= kDistortionLevels; ++level) {
      double mae = 0.0;
      for (const auto& c : clips) mae += clip_mae(c, apply_distortion(c, {kind, level}, clip_seed(7, c.clip_id)));
      mae /= clips.size();
      CAPTURE(level);
      CHECK(mae > previous);
      previous = mae;
    }
  }
}

TEST_CASE("distortions are deterministic under a fixed seed") {
  const auto clip = corpus(1).front();
  for (auto kind : kAllDistortionKinds) {
    CAPTURE(to_string(kind));
    CHECK(identical(apply_distortion(clip, {kind, 3}, 42), apply_distortion(clip, {kind, 3}, 42)));
  }
  CHECK_FALSE(identical(apply_distortion(clip, {DistortionKind::gaussian_noise, 3}, 1),
                        apply_distortion(clip, {DistortionKind::gaussian_noise, 3}, 2)));
  const auto plan = random_plan(PerturbMode::mixture, 3, 9);
  CHECK(identical(apply_plan(clip, plan), apply_plan(clip, plan)));
}

TEST_CASE("distortion examples") {
  VideoClip flat;
  flat.clip_id = "flat";
  flat.frames.push_back(make_frame(PlanarD(3, 16, 16, 0.5), "id", 0));
  flat.frames.push_back(make_frame(PlanarD(3, 16, 16, 0.5), "id", 1));
  // Gray has no chroma and no contrast about its own mean.
  for (auto kind : {DistortionKind::color_saturation, DistortionKind::color_contrast, DistortionKind::gaussian_blur,
                    DistortionKind::block_wise}) {
    CAPTURE(to_string(kind));
    CHECK(clip_mae(flat, apply_distortion(flat, {kind, 5}, 3)) < 1e-12);
  }
  // JPEG keeps a constant image within two 8-bit steps.
  Gen g(1);
  for (int i = 0; i < 10; ++i) {
    const double v = g.integer(0, 255) / 255.0;
    VideoClip c;
    c.clip_id = "const";
    c.frames.push_back(make_frame(PlanarD(3, 16, 16, v), "id", 0));
    for (int level = 1; level <= 5; ++level) {
      const auto out = apply_distortion(c, {DistortionKind::jpeg_compression, level}, 0);
      CHECK((out.frames[0].pixels.array() - v).abs().maxCoeff() <= 2.0 / 255.0 + 1e-12);
    }
  }
  // Saturation scales chroma about the luma: a pure red pixel moves toward gray.
  VideoClip red;
  red.clip_id = "red";
  PlanarD r(3, 8, 8, 0.0);
  r.channel(0).setConstant(0.8);
  red.frames.push_back(make_frame(r, "id", 0));
  const auto desat = apply_distortion(red, {DistortionKind::color_saturation, 5}, 0);
  const double luma = 0.299 * 0.8, s = LevelTables{}.saturation[4];
  CHECK(desat.frames[0].pixels(0, 3, 3) == doctest::Approx(luma + s * (0.8 - luma)).epsilon(1e-12));
  CHECK(desat.frames[0].pixels(1, 3, 3) == doctest::Approx(luma * (1 - s)).epsilon(1e-12));
}

TEST_CASE("video codec") {
  CHECK(DctVideoCodec::quant_step(0) == doctest::Approx(0.625));
  CHECK(DctVideoCodec::quant_step(6) == doctest::Approx(1.25));
  const auto clip = corpus(1, 4).front();
  std::vector<PlanarD> frames;
  for (const auto& f : clip.frames) frames.push_back(f.pixels);
  const DctVideoCodec codec;
  const auto out = codec.transcode(frames, 23);
  REQUIRE(out.size() == frames.size());
  double low = 0, high = 0;
  const auto worse = codec.transcode(frames, 43);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CHECK(out[i].same_shape(frames[i]));
    low += (out[i].array() - frames[i].array()).abs().mean();
    high += (worse[i].array() - frames[i].array()).abs().mean();
  }
  CHECK(low < high);
  // Sizes that are not multiples of 8 are handled by padding.
  const auto odd = codec.transcode({Gen(3).planar(3, 13, 11)}, 30);
  CHECK(odd[0].height() == 13);
  CHECK(odd[0].width() == 11);
}

TEST_CASE("random plans") {
  std::map<std::pair<int, int>, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto p = random_plan(PerturbMode::random_level_random_type, 0, i);
    REQUIRE(p.specs.size() == 1);
    ++counts[{static_cast<int>(p.specs[0].kind), p.specs[0].level}];
  }
  CHECK(counts.size() == 35);
  double chi2 = 0.0;
  const double expected = draws / 35.0;
  for (const auto& [_, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 34 degrees of freedom, p = 0.001.
  CHECK(chi2 < 65.25);

  for (int i = 0; i < 50; ++i) {
    const auto single = random_plan(PerturbMode::single_level_random_type, 0, i);
    REQUIRE(single.specs.size() == 1);
    CHECK(single.specs[0].level == 5);
    for (int m = 2; m <= 4; ++m) CHECK(random_plan(PerturbMode::mixture, m, i).specs.size() == m);
  }
  CHECK_THROWS_AS(random_plan(PerturbMode::mixture, 1, 0), ValidationError);
  CHECK_THROWS_AS(random_plan(PerturbMode::mixture, 5, 0), ValidationError);
  PerturbPlan longer{{{DistortionKind::gaussian_blur, 1}}, 0};
  longer.specs.resize(5, {DistortionKind::gaussian_blur, 1});
  CHECK_THROWS_AS(longer.validate(), ValidationError);
}

TEST_CASE("perturb mode names") {
  CHECK(parse_perturb_mode("sing") == PerturbMode::single_level_random_type);
  CHECK(parse_perturb_mode("rand") == PerturbMode::random_level_random_type);
  CHECK(parse_perturb_mode("mix") == PerturbMode::mixture);
  for (auto m : {PerturbMode::single_level_random_type, PerturbMode::random_level_random_type, PerturbMode::mixture})
    CHECK(parse_perturb_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_perturb_mode("blend"), ValidationError);
}

TEST_CASE("clip seeds depend on the clip and the global seed only") {
  CHECK(clip_seed(1, "a") == clip_seed(1, "a"));
  CHECK(clip_seed(1, "a") != clip_seed(1, "b"));
  CHECK(clip_seed(1, "a") != clip_seed(2, "a"));
}

TEST_CASE("variant builds") {
  test::TempDir dir;
  const auto clips = corpus(4, 2, 16);
  const auto manifest = write_corpus(dir.path() / "std", clips);

  VariantOptions sing{PerturbMode::single_level_random_type, 3, 5, {}};
  const auto s = build_variant(manifest, dir.path() / "std", dir.path() / "sing", sing);
  CHECK(s.entries.size() == 5 * manifest.entries.size());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& src = manifest.entries[i];
    std::set<DistortionKind> kinds;
    for (int level = 1; level <= 5; ++level) {
      const auto& e = s.entries[5 * i + level - 1];
      CHECK(e.clip_id == variant_clip_id(src.clip_id, sing.mode, level));
      CHECK(e.split == src.split);
      CHECK(e.label == src.label);
      CHECK(e.identity == src.identity);
      REQUIRE(e.distortion_history.size() == 1);
      CHECK(e.distortion_history[0].level == level);
      kinds.insert(e.distortion_history[0].kind);
      const auto loaded = load_clip(clip_directory(dir.path() / "sing", e.clip_id));
      CHECK(loaded.distortion_history == e.distortion_history);
    }
    CHECK(kinds.size() == 1);
  }

  const auto r = build_variant(manifest, dir.path() / "std", dir.path() / "rand",
                               {PerturbMode::random_level_random_type, 3, 5, {}});
  CHECK(r.entries.size() == manifest.entries.size());
  for (const auto& e : r.entries) CHECK(e.distortion_history.size() == 1);

  const auto m = build_variant(manifest, dir.path() / "std", dir.path() / "mix", {PerturbMode::mixture, 3, 5, {}});
  for (const auto& e : m.entries) CHECK(e.distortion_history.size() == 3);
  // Stacking on an already perturbed set extends the history.
  const auto mm = build_variant(m, dir.path() / "mix", dir.path() / "mix2", {PerturbMode::mixture, 2, 6, {}});
  for (const auto& e : mm.entries) CHECK(e.distortion_history.size() == 5);

  // Rebuilding with the same seed reproduces the media byte for byte.
  build_variant(manifest, dir.path() / "std", dir.path() / "rand2", {PerturbMode::random_level_random_type, 3, 5, {}});
  for (const auto& e : r.entries)
    CHECK(identical(load_clip(clip_directory(dir.path() / "rand", e.clip_id)),
                    load_clip(clip_directory(dir.path() / "rand2", e.clip_id))));

  auto broken = manifest;
  broken.entries.push_back({"ghost", "nobody", Label::real, Split::train, {}});
  try {
    build_variant(broken, dir.path() / "std", dir.path() / "x", sing);
    FAIL("expected IoError");
  } catch (const IoError& err) {
    CHECK(std::string(err.what()).find("ghost") != std::string::npos);
  }
  CHECK_THROWS_AS(build_variant(manifest, dir.path() / "std", dir.path() / "y", {PerturbMode::mixture, 9, 0, {}}),
                  ValidationError);
}

TEST_CASE("level tables load from the shipped configuration") {
  const auto tables = load_level_tables(std::filesystem::path(DFVAE_SOURCE_DIR) / "config" / "perturb_levels.json");
  CHECK(tables == LevelTables{});
  CHECK(level_tables_from_json(to_json(tables)) == tables);
  auto j = to_json(tables);
  j["jpeg_quality"] = {20, 35, 50, 65, 80};  // not decreasing
  CHECK_THROWS_AS(level_tables_from_json(j), ValidationError);
  test::TempDir dir;
  CHECK_THROWS_AS(load_level_tables(dir.path() / "none.json"), IoError);
}
