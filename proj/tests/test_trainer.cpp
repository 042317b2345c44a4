#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "miniature.hpp"
#include "support.hpp"

#include <cmath>
#include <set>

#include "dfvae/synth.hpp"
#include "dfvae/trainer.hpp"

using namespace dfvae;
using dfvae::test::Gen;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.arch.image_size = 16;
  c.arch.heatmap_size = 8;
  c.arch.latent_dim = 4;
  c.arch.encoder_channels = {4, 4};
  c.arch.decoder_channels = {4, 4};
  c.arch.fusion_channels = 2;
  c.extractor_channels = {2, 2};
  c.flow_block = 4;
  c.flow_radius = 1;
  c.optimizer.batch_size = 2;
  c.optimizer.steps = 2;
  c.optimizer.learning_rate = 1e-3;
  return c;
}

std::vector<VideoClip> small_clips(int identities = 2, int frames = 4) {
  const auto ids = synth_identities(identities, 1);
  SynthClipConfig cc;
  cc.frames = frames;
  cc.size = 16;
  std::vector<VideoClip> clips;
  for (int i = 0; i < identities; ++i)
    for (int k = 0; k < 2; ++k)
      clips.push_back(synth_clip(ids[i], ids[i].name + "_" + std::to_string(k), cc, 10 * i + k, i));
  return clips;
}

LossGraph run_loss(const FaceSwapModel& model, const TrainingBatch& batch, ad::Graph& g, std::uint64_t seed = 3) {
  const RandomConvExtractor ext(model.config.extractor_channels, model.config.extractor_seed);
  const SoftBlockFlow flow(model.config.flow_block, model.config.flow_radius, model.config.flow_temperature);
  auto& m = const_cast<FaceSwapModel&>(model);
  nn::Binding bp(g, m.bundle.parameters(), false), fp(g, m.fusion.parameters(), false);
  std::mt19937_64 rng(seed);
  return total_loss(g, bp, fp, batch, model, ext, flow, rng);
}

TrainingBatch small_batch(const std::vector<VideoClip>& clips, const FaceSwapModel& model) {
  TrainingBatch b;
  for (auto& t : build_unpaired_batch(clips, clips.front().frames[0].identity, 4, 2))
    b.source.push_back(make_training_sample(std::move(t), model));
  for (auto& t : build_unpaired_batch(clips, clips.back().frames[0].identity, 5, 2))
    b.target.push_back(make_training_sample(std::move(t), model));
  return b;
}

}  // namespace

TEST_CASE("unpaired tuples respect their contract") {
  const auto clips = small_clips(2, 5);
  test::for_all(20, 1, [&](Gen& g) {
    const auto id = clips[g.integer(0, 3)].frames[0].identity;
    const auto batch = build_unpaired_batch(clips, id, g.rng()(), 8);
    REQUIRE(batch.size() == 8);
    for (const auto& t : batch) {
      CHECK(t.current.identity == id);
      CHECK(t.unpaired.identity == id);
      CHECK(t.previous.identity == id);
      CHECK(t.current.frame_index > 0);
      CHECK(t.previous.frame_index == t.current.frame_index - 1);
      CHECK_FALSE(t.unpaired.pixels == t.current.pixels);
    }
  });
  CHECK_THROWS_AS(build_unpaired_batch(clips, "nobody", 0, 2), PairingError);
  auto single = small_clips(1, 2);
  single.resize(1);
  single[0].frames.resize(1);
  CHECK_THROWS_AS(build_unpaired_batch(single, single[0].frames[0].identity, 0, 1), PairingError);
}

TEST_CASE("unpaired sampling covers every other frame") {
  const auto clips = small_clips(1, 3);
  const auto id = clips[0].frames[0].identity;
  std::set<std::pair<int, double>> seen;
  for (const auto& t : build_unpaired_batch(clips, id, 9, 400))
    seen.insert({t.unpaired.frame_index, t.unpaired.pixels.flat().sum()});
  CHECK(seen.size() == 6);  // 2 clips × 3 frames
}

TEST_CASE("total loss equals the weighted breakdown") {
  const auto clips = small_clips();
  auto cfg = small_config();
  cfg.weights.lambda_2 = 0.3;
  cfg.weights.lambda_4 = 0.7;
  const FaceSwapModel model(cfg);
  const auto batch = small_batch(clips, model);
  ad::Graph g;
  const auto loss = run_loss(model, batch, g);
  CHECK(loss.breakdown.finite());
  CHECK(loss.breakdown.total == doctest::Approx(combine(loss.breakdown, cfg.weights)).epsilon(1e-12));
  CHECK(loss.breakdown.madain ==
        doctest::Approx(loss.breakdown.madain_content + cfg.weights.lambda_ma * loss.breakdown.madain_style));
  CHECK(loss.terms == std::vector<std::string>{"recon_x", "recon_y", "kl", "madain", "temporal_x", "temporal_y"});
  CHECK(loss.breakdown.temporal_x >= 0.0);
  CHECK(loss.breakdown.kl > 0.0);
}

TEST_CASE("ablation flags remove their terms") {
  const auto clips = small_clips();
  auto cfg = small_config();
  ad::Graph g0;
  const FaceSwapModel full(cfg);
  const auto base = run_loss(full, small_batch(clips, full), g0);

  cfg.flags.use_madain = false;
  cfg.flags.use_temporal = false;
  const FaceSwapModel bare(cfg);
  ad::Graph g1;
  const auto loss = run_loss(bare, small_batch(clips, bare), g1);
  CHECK(loss.terms == std::vector<std::string>{"recon_x", "recon_y", "kl"});
  CHECK(loss.breakdown.madain == 0.0);
  CHECK(loss.breakdown.temporal_x == 0.0);
  // The remaining terms see the same draws.
  CHECK(loss.breakdown.recon_x == base.breakdown.recon_x);
  CHECK(loss.breakdown.kl == base.breakdown.kl);

  cfg = small_config();
  cfg.flags.temporal_target = false;
  const FaceSwapModel source_only(cfg);
  ad::Graph g2;
  const auto l2 = run_loss(source_only, small_batch(clips, source_only), g2);
  CHECK(l2.breakdown.temporal_y == 0.0);
  CHECK(l2.breakdown.temporal_x == base.breakdown.temporal_x);
}

TEST_CASE("paired sampling and image structure input") {
  const auto clips = small_clips();
  auto cfg = small_config();
  cfg.flags.use_unpaired = false;
  const FaceSwapModel model(cfg);
  auto tuple = build_unpaired_batch(clips, clips[0].frames[0].identity, 1, 1).front();
  const auto s = make_training_sample(tuple, model, true);
  CHECK(s.frames.unpaired.pixels == s.frames.current.pixels);
  CHECK(s.structure_current.channels() == kDefaultLandmarkCount);

  cfg.flags.use_heatmap_structure = false;
  const FaceSwapModel image_structure(cfg);
  const auto t = make_training_sample(tuple, image_structure);
  CHECK(t.structure_current.channels() == 3);
  CHECK(t.structure_current.height() == cfg.arch.heatmap_size);
}

TEST_CASE("zero steps leave the parameters untouched") {
  const auto clips = small_clips();
  auto cfg = small_config();
  cfg.optimizer.steps = 0;
  const auto r = train(clips, cfg);
  const FaceSwapModel fresh(cfg);
  CHECK(r.history.empty());
  CHECK(r.model.bundle.parameters().values() == fresh.bundle.parameters().values());
  CHECK(r.model.fusion.parameters().values() == fresh.fusion.parameters().values());
  CHECK(r.model.appearance_bank.size() == 2);
}

TEST_CASE("training is bit-identical for a fixed seed") {
  const auto clips = small_clips();
  const auto cfg = small_config();
  const auto a = train(clips, cfg), b = train(clips, cfg);
  CHECK(a.model.bundle.parameters().values() == b.model.bundle.parameters().values());
  CHECK(a.model.fusion.parameters().values() == b.model.fusion.parameters().values());
  REQUIRE(a.history.size() == 2);
  CHECK(a.history[1].total == b.history[1].total);
  auto other = cfg;
  other.optimizer.seed = 1;
  CHECK(train(clips, other).model.bundle.parameters().values() != a.model.bundle.parameters().values());
}

TEST_CASE("a training step updates exactly the active networks") {
  const auto clips = small_clips();
  auto cfg = small_config();
  cfg.optimizer.steps = 1;
  const FaceSwapModel fresh(cfg);
  const auto on = train(clips, cfg);
  const auto& v0 = fresh.bundle.parameters().values();
  const auto& v1 = on.model.bundle.parameters().values();
  CHECK((v0 - v1).cwiseAbs().minCoeff() >= 0.0);
  CHECK(((v0 - v1).array() != 0.0).count() > v0.size() / 2);
  CHECK(on.model.fusion.parameters().values() != fresh.fusion.parameters().values());

  cfg.flags.use_madain = false;
  const auto off = train(clips, cfg);
  CHECK(off.model.fusion.parameters().values() == fresh.fusion.parameters().values());
  CHECK(off.model.bundle.parameters().values() != fresh.bundle.parameters().values());
}

TEST_CASE("identity domains") {
  const auto clips = small_clips(3);
  auto cfg = small_config();
  cfg.optimizer.steps = 0;
  cfg.source_identities = {"ghost"};
  CHECK_THROWS_AS(train(clips, cfg), LookupError);
  cfg.source_identities = {};
  CHECK_THROWS_AS(train(small_clips(1), cfg), ValidationError);
  CHECK_NOTHROW(train(clips, cfg));
}

TEST_CASE("swap contracts") {
  const auto clips = small_clips();
  auto cfg = small_config();
  cfg.optimizer.steps = 1;
  const auto r = train(clips, cfg);
  const auto& target = clips.back();
  const auto src = clips.front().frames[0].identity;
  const auto fake = swap(src, target, r.model);
  CHECK(fake.clip_id == target.clip_id + "-as-" + src);
  CHECK(fake.label == Label::fake);
  REQUIRE(fake.size() == target.size());
  const double sigma = cfg.effective_mask_sigma();
  for (std::size_t i = 0; i < fake.size(); ++i) {
    const auto mask = blur_mask(face_mask(*target.frames[i].landmarks, 16, 16), sigma);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (mask.values(0, y, x) == 0.0)
          for (int c = 0; c < 3; ++c) CHECK(fake.frames[i].pixels(c, y, x) == target.frames[i].pixels(c, y, x));
  }
  const auto again = swap(src, target, r.model);
  CHECK(again.frames[2].pixels == fake.frames[2].pixels);
  CHECK_THROWS_AS(swap("nobody", target, r.model), LookupError);

  const auto re = self_reenact(target, r.model);
  CHECK(re.clip_id == target.clip_id + "-reenacted");
  CHECK(re.size() == target.size());
  CHECK(re.frames[0].identity == target.frames[0].identity);
}

TEST_CASE("model checkpoints round trip") {
  test::TempDir dir;
  const auto clips = small_clips();
  auto cfg = small_config();
  cfg.optimizer.steps = 2;
  cfg.checkpoint_every = 1;
  cfg.checkpoint_dir = dir.path() / "ckpt";
  const auto r = train(clips, cfg);
  CHECK(r.checkpoints.size() == 2);
  const auto loaded = load_model(r.checkpoints.back());
  CHECK(loaded.bundle.parameters().values() == r.model.bundle.parameters().values());
  CHECK(loaded.fusion.parameters().values() == r.model.fusion.parameters().values());
  CHECK(loaded.appearance_bank == r.model.appearance_bank);
  CHECK(to_json(loaded.config) == to_json(r.model.config));
  CHECK(to_json(train_config_from_json(to_json(cfg))) == to_json(cfg));
}

TEST_CASE("configuration validation") {
  auto cfg = small_config();
  cfg.optimizer.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_config();
  cfg.weights.lambda_3 = -0.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_config();
  cfg.optimizer.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(small_config().effective_mask_sigma() == doctest::Approx(3.0 * 16 / 128.0));
  const LossWeights defaults;
  CHECK(defaults.lambda_1 == 1.0);
  CHECK(defaults.lambda_2 == 0.01);
  CHECK(defaults.lambda_3 == 1.0);
  CHECK(defaults.lambda_4 == 0.1);
  CHECK(defaults.lambda_ma == 10.0);
  const OptimizerConfig opt;
  CHECK(opt.learning_rate == 5e-5);
  CHECK(opt.beta1 == 0.5);
  CHECK(opt.beta2 == 0.999);
}

TEST_CASE("full objective gradient on the miniature model") {
  const auto clips = test::miniature_clips();
  FaceSwapModel model(test::miniature_config());
  const auto batch = test::miniature_batch(clips, model);
  const auto r = test::check_total_loss_gradient(model, batch);
  CHECK(r.parameters <= 500);
  CHECK(r.relative_error < 1e-4);
}

TEST_CASE("synthetic faces") {
  const auto id = IdentityParams::from_seed(4, "p4");
  const auto a = synth_face(id, 0.0, {}, {0.0, -0.3, 1.0}, 64);
  const auto& lm = *a.landmarks;
  REQUIRE(lm.size() == 68);
  for (int k = 0; k <= 8; ++k) {
    CHECK(lm[k].x + lm[16 - k].x == doctest::Approx(2 * lm[8].x).epsilon(1e-12));
    CHECK(lm[k].y == doctest::Approx(lm[16 - k].y).epsilon(1e-12));
  }
  CHECK(synth_face(id, 0.0, {}, {0.0, -0.3, 1.0}, 64).pixels == a.pixels);
  const auto other = synth_face(IdentityParams::from_seed(5, "p5"), 0.0, {}, {0.0, -0.3, 1.0}, 64);
  CHECK((other.pixels.array() - a.pixels.array()).abs().mean() > 0.01);
  const auto turned = synth_face(id, 30.0, {}, {0.0, -0.3, 1.0}, 64);
  CHECK(std::abs((*turned.landmarks)[30].x - lm[30].x) > 1.0);
  CHECK_THROWS_AS(synth_face(id, 95.0, {}, {}, 64), DomainError);
  a.validate();
}

TEST_CASE("synthetic dataset writes loadable real clips") {
  test::TempDir dir;
  SynthDatasetConfig cfg;
  cfg.identities = 2;
  cfg.clips_per_identity = 2;
  cfg.clip.frames = 3;
  cfg.clip.size = 16;
  const auto m = synth_dataset(dir.path(), cfg);
  REQUIRE(m.entries.size() == 4);
  for (const auto& e : m.entries) {
    CHECK(e.label == Label::real);
    const auto clip = load_clip(clip_directory(dir.path(), e.clip_id));
    CHECK(clip.size() == 3);
    CHECK(clip.frames[0].landmarks.has_value());
  }
}
