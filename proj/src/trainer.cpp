#include "dfvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace dfvae {

namespace {

// Keeps MAdaIN finite while training when the decoded face is still flat.
constexpr double kTrainAdainEps = 1e-6;

std::vector<const PlanarD*> pick(const std::vector<TrainingSample>& samples, auto member) {
  std::vector<const PlanarD*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&member(s));
  return out;
}

ad::Var normal_noise(ad::Graph& g, int n, int j, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::ArrayXd eps(static_cast<Eigen::Index>(n) * j);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
  return g.constant(std::move(eps), ad::Shape{n, j, 1, 1});
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {lambda_r1, lambda_r2, lambda_1, lambda_2, lambda_3, lambda_4, lambda_ma})
    require(std::isfinite(v) && v >= 0.0, "loss weights must be finite and non-negative");
}

void OptimizerConfig::validate() const {
  require(learning_rate > 0.0, "learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
  require(steps >= 0, "steps must be non-negative");
  require(batch_size >= 1, "batch size must be positive");
}

void TrainConfig::validate() const {
  arch.validate();
  optimizer.validate();
  weights.validate();
  require(flow_block >= 1 && arch.image_size % flow_block == 0, "flow block must divide the image size");
  require(flow_radius >= 0 && flow_temperature > 0.0, "flow radius/temperature out of range");
  require(static_cast<int>(extractor_channels.size()) >= 1, "extractor needs at least one layer");
  require(mask_sigma >= 0.0, "mask sigma must be non-negative");
  require(checkpoint_every >= 0, "checkpoint interval must be non-negative");
  require(checkpoint_every == 0 || !checkpoint_dir.empty(), "checkpoint interval set without a directory");
}

double TrainConfig::effective_mask_sigma() const {
  return mask_sigma > 0.0 ? mask_sigma : default_mask_sigma(arch.image_size);
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"arch", to_json(c.arch)},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"steps", c.optimizer.steps},
        {"batch_size", c.optimizer.batch_size},
        {"seed", c.optimizer.seed}}},
      {"weights",
       {{"lambda_r1", c.weights.lambda_r1},
        {"lambda_r2", c.weights.lambda_r2},
        {"lambda_1", c.weights.lambda_1},
        {"lambda_2", c.weights.lambda_2},
        {"lambda_3", c.weights.lambda_3},
        {"lambda_4", c.weights.lambda_4},
        {"lambda_ma", c.weights.lambda_ma}}},
      {"flags",
       {{"use_madain", c.flags.use_madain},
        {"use_heatmap_structure", c.flags.use_heatmap_structure},
        {"use_unpaired", c.flags.use_unpaired},
        {"use_temporal", c.flags.use_temporal},
        {"temporal_source", c.flags.temporal_source},
        {"temporal_target", c.flags.temporal_target}}},
      {"ssim", {{"window", c.ssim.window}, {"c1", c.ssim.c1}, {"c2", c.ssim.c2}}},
      {"flow", {{"block", c.flow_block}, {"radius", c.flow_radius}, {"temperature", c.flow_temperature}}},
      {"extractor", {{"channels", c.extractor_channels}, {"seed", c.extractor_seed}}},
      {"mask_sigma", c.mask_sigma},
      {"source_identities", c.source_identities},
      {"target_identities", c.target_identities},
      {"checkpoint_every", c.checkpoint_every},
      {"checkpoint_dir", c.checkpoint_dir.string()},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.steps = o.value("steps", c.optimizer.steps);
    c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
    c.optimizer.seed = o.value("seed", c.optimizer.seed);
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.lambda_r1 = w.value("lambda_r1", c.weights.lambda_r1);
    c.weights.lambda_r2 = w.value("lambda_r2", c.weights.lambda_r2);
    c.weights.lambda_1 = w.value("lambda_1", c.weights.lambda_1);
    c.weights.lambda_2 = w.value("lambda_2", c.weights.lambda_2);
    c.weights.lambda_3 = w.value("lambda_3", c.weights.lambda_3);
    c.weights.lambda_4 = w.value("lambda_4", c.weights.lambda_4);
    c.weights.lambda_ma = w.value("lambda_ma", c.weights.lambda_ma);
  }
  if (j.contains("flags")) {
    const auto& f = j.at("flags");
    c.flags.use_madain = f.value("use_madain", c.flags.use_madain);
    c.flags.use_heatmap_structure = f.value("use_heatmap_structure", c.flags.use_heatmap_structure);
    c.flags.use_unpaired = f.value("use_unpaired", c.flags.use_unpaired);
    c.flags.use_temporal = f.value("use_temporal", c.flags.use_temporal);
    c.flags.temporal_source = f.value("temporal_source", c.flags.temporal_source);
    c.flags.temporal_target = f.value("temporal_target", c.flags.temporal_target);
  }
  if (j.contains("ssim")) {
    const auto& s = j.at("ssim");
    c.ssim.window = s.value("window", c.ssim.window);
    c.ssim.c1 = s.value("c1", c.ssim.c1);
    c.ssim.c2 = s.value("c2", c.ssim.c2);
  }
  if (j.contains("flow")) {
    const auto& f = j.at("flow");
    c.flow_block = f.value("block", c.flow_block);
    c.flow_radius = f.value("radius", c.flow_radius);
    c.flow_temperature = f.value("temperature", c.flow_temperature);
  }
  if (j.contains("extractor")) {
    c.extractor_channels = j.at("extractor").value("channels", c.extractor_channels);
    c.extractor_seed = j.at("extractor").value("seed", c.extractor_seed);
  }
  c.mask_sigma = j.value("mask_sigma", c.mask_sigma);
  c.source_identities = j.value("source_identities", c.source_identities);
  c.target_identities = j.value("target_identities", c.target_identities);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.checkpoint_dir = j.value("checkpoint_dir", std::string{});
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  try {
    return train_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& err) {
    throw ValidationError("config '" + path.string() + "': " + err.what());
  }
}

namespace {

ArchConfig effective_arch(const TrainConfig& config) {
  ArchConfig arch = config.arch;
  arch.structure_from_image = !config.flags.use_heatmap_structure;
  return arch;
}

}  // namespace

FaceSwapModel::FaceSwapModel(TrainConfig cfg)
    : config((cfg.validate(), std::move(cfg))),
      bundle(effective_arch(config)),
      fusion(config.arch.fusion_channels, config.arch.init_seed, config.arch.leaky_slope) {
  config.arch = bundle.config();
}

void save_model(const FaceSwapModel& model, const std::filesystem::path& path) {
  CheckpointArchive a = bundle_archive(model.bundle);
  a.header["format"] = "dfvae-model";
  a.header["train_config"] = to_json(model.config);
  a.header["appearance_identities"] = nlohmann::json::array();
  a.blocks.emplace_back("fusion", model.fusion.parameters().values());
  for (const auto& [id, code] : model.appearance_bank) {
    a.header["appearance_identities"].push_back(id);
    a.blocks.emplace_back("appearance/" + id, code);
  }
  write_archive(a, path);
}

FaceSwapModel load_model(const std::filesystem::path& path) {
  const auto a = read_archive(path);
  if (a.header.value("format", std::string{}) != "dfvae-model")
    throw DecodeError("'" + path.string() + "' is not a face-swap model checkpoint");
  FaceSwapModel model(train_config_from_json(a.header.at("train_config")));
  model.bundle = bundle_from_archive(a);
  const auto& fusion = a.block("fusion");
  if (fusion.size() != model.fusion.parameters().size()) throw DecodeError("fusion decoder size mismatch");
  model.fusion.parameters().values() = fusion;
  for (const auto& id : a.header.at("appearance_identities"))
    model.appearance_bank[id.get<std::string>()] = a.block("appearance/" + id.get<std::string>());
  return model;
}

// ---------------------------------------------------------------------------

std::vector<UnpairedTuple> build_unpaired_batch(const std::vector<VideoClip>& clips, const std::string& identity,
                                                std::uint64_t rng_seed, int count) {
  struct Ref {
    std::size_t clip, pos;
  };
  std::vector<Ref> all, current;
  for (std::size_t c = 0; c < clips.size(); ++c)
    for (std::size_t p = 0; p < clips[c].frames.size(); ++p) {
      if (clips[c].frames[p].identity != identity) continue;
      all.push_back({c, p});
      if (p > 0 && clips[c].frames[p - 1].identity == identity) current.push_back({c, p});
    }
  if (all.size() < 2 || current.empty())
    throw PairingError("identity '" + identity + "' has fewer than 2 usable frames");
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick_current(0, current.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, all.size() - 2);
  std::vector<UnpairedTuple> out;
  out.reserve(std::max(count, 0));
  for (int i = 0; i < count; ++i) {
    const Ref t = current[pick_current(rng)];
    // Uniform over every frame except x_t itself.
    std::size_t k = pick_other(rng);
    const auto self = std::find_if(all.begin(), all.end(), [&](const Ref& r) { return r.clip == t.clip && r.pos == t.pos; });
    if (k >= static_cast<std::size_t>(self - all.begin())) ++k;
    const Ref u = all[k];
    out.push_back({clips[t.clip].frames[t.pos], clips[u.clip].frames[u.pos], clips[t.clip].frames[t.pos - 1]});
  }
  return out;
}

HeatmapStack frame_heatmap(const FaceFrame& frame, const ArchConfig& arch) {
  const int hs = arch.heatmap_size;
  return extract_heatmap(frame, EmbeddedLandmarkProvider(arch.landmark_count), default_heatmap_sigma(hs), hs, hs);
}

namespace {

PlanarD structure_of(const FaceFrame& frame, const EncoderDecoderBundle& bundle) {
  if (bundle.config().structure_from_image) return bundle.structure_input(frame, HeatmapStack{});
  return bundle.structure_input(frame, frame_heatmap(frame, bundle.config()));
}

Mask target_mask(const FaceFrame& frame, double sigma) {
  if (!frame.landmarks) throw ExtractionError("frame '" + frame.identity + "#" + std::to_string(frame.frame_index) +
                                              "' has no landmarks for the face mask");
  return blur_mask(face_mask(*frame.landmarks, frame.height(), frame.width()), sigma);
}

}  // namespace

TrainingSample make_training_sample(UnpairedTuple tuple, const FaceSwapModel& model, bool paired) {
  if (paired) tuple.unpaired = tuple.current;
  TrainingSample s{std::move(tuple), {}, {}, {}};
  s.structure_current = structure_of(s.frames.current, model.bundle);
  s.structure_previous = structure_of(s.frames.previous, model.bundle);
  s.mask = target_mask(s.frames.current, model.config.effective_mask_sigma());
  return s;
}

bool LossBreakdown::finite() const {
  for (double v : {recon_x, recon_y, kl, madain_content, madain_style, madain, temporal_x, temporal_y, total})
    if (!std::isfinite(v)) return false;
  return true;
}

nlohmann::json to_json(const LossBreakdown& b) {
  return {{"recon_x", b.recon_x},       {"recon_y", b.recon_y},       {"kl", b.kl},
          {"madain_content", b.madain_content}, {"madain_style", b.madain_style}, {"madain", b.madain},
          {"temporal_x", b.temporal_x}, {"temporal_y", b.temporal_y}, {"total", b.total}};
}

double combine(const LossBreakdown& b, const LossWeights& w) {
  return w.lambda_1 * (b.recon_x + b.recon_y) + w.lambda_2 * b.kl + w.lambda_3 * b.madain +
         w.lambda_4 * (b.temporal_x + b.temporal_y);
}

LossGraph total_loss(ad::Graph& g, nn::Binding& bp, nn::Binding& fp, const TrainingBatch& batch,
                     const FaceSwapModel& model, const PerceptualExtractor& extractor, const FlowEstimator& flow,
                     std::mt19937_64& rng) {
  const auto& w = model.config.weights;
  const auto& flags = model.config.flags;
  const auto& bundle = model.bundle;
  const int n = static_cast<int>(batch.source.size());
  if (n == 0 || batch.target.size() != batch.source.size())
    throw ShapeError("total_loss: source and target batches must be non-empty and of equal size");
  const int j = bundle.config().latent_dim;
  // Drawn unconditionally so toggling the temporal term leaves every other
  // draw of the run unchanged.
  std::mt19937_64 temporal_rng(rng());

  struct Domain {
    ad::Var frames, z_structure, z_appearance, recon, kl, temporal;
  };
  auto run_domain = [&](const std::vector<TrainingSample>& s, bool temporal_on, const char* label) {
    Domain d;
    try {
      d.frames = frames_to_var(g, pick(s, [](const TrainingSample& t) -> const PlanarD& { return t.frames.current.pixels; }));
      auto unpaired = frames_to_var(g, pick(s, [](const TrainingSample& t) -> const PlanarD& { return t.frames.unpaired.pixels; }));
      auto structure = frames_to_var(g, pick(s, [](const TrainingSample& t) -> const PlanarD& { return t.structure_current; }));
      const auto ps = bundle.structure_posterior(bp, structure);
      const auto pa = bundle.appearance_posterior(bp, unpaired);
      d.z_structure = reparameterize(ps.mu, ps.sigma, normal_noise(g, n, j, rng));
      d.z_appearance = reparameterize(pa.mu, pa.sigma, normal_noise(g, n, j, rng));
      auto recon = bundle.decode(bp, d.z_structure, d.z_appearance);
      d.recon = w.lambda_r1 * pixel_loss(recon, d.frames) + w.lambda_r2 * ssim_loss(recon, d.frames, model.config.ssim);
      d.kl = kl_loss(ps.mu, ps.sigma) + kl_loss(pa.mu, pa.sigma);
      if (temporal_on) {
        auto prev = frames_to_var(g, pick(s, [](const TrainingSample& t) -> const PlanarD& { return t.frames.previous.pixels; }));
        auto prev_structure =
            frames_to_var(g, pick(s, [](const TrainingSample& t) -> const PlanarD& { return t.structure_previous; }));
        const auto pps = bundle.structure_posterior(bp, prev_structure);
        auto zp = reparameterize(pps.mu, pps.sigma, normal_noise(g, n, j, temporal_rng));
        auto recon_prev = bundle.decode(bp, zp, d.z_appearance);
        d.temporal = temporal_loss(flow.estimate(recon, recon_prev), flow.estimate(d.frames, prev));
      }
    } catch (const Error& err) {
      throw std::runtime_error(std::string(label) + ": " + err.what());
    }
    return d;
  };

  LossGraph out;
  const bool tx = flags.use_temporal && flags.temporal_source;
  const bool ty = flags.use_temporal && flags.temporal_target;
  const Domain x = run_domain(batch.source, tx, "recon_x");
  const Domain y = run_domain(batch.target, ty, "recon_y");
  out.terms = {"recon_x", "recon_y", "kl"};
  ad::Var total = w.lambda_1 * (x.recon + y.recon) + w.lambda_2 * (x.kl + y.kl);
  out.breakdown.recon_x = x.recon.scalar();
  out.breakdown.recon_y = y.recon.scalar();
  out.breakdown.kl = x.kl.scalar() + y.kl.scalar();

  if (flags.use_madain) {
    try {
      // Reenact: structure of y_t, appearance of x′.
      auto reenacted = bundle.decode(bp, y.z_structure, x.z_appearance);
      auto mask = frames_to_var(g, pick(batch.target, [](const TrainingSample& t) -> const PlanarD& { return t.mask.values; }));
      auto adain = ad::masked_adain(reenacted, y.frames, mask, kTrainAdainEps);
      auto redecoded = model.fusion.forward(fp, adain);
      auto fused = ad::mul_channels(redecoded, mask) + ad::mul_channels(y.frames, 1.0 - mask);
      const auto terms = madain_loss(fused, reenacted, y.frames, mask, extractor);
      auto madain = terms.content + w.lambda_ma * terms.style;
      total = total + w.lambda_3 * madain;
      out.breakdown.madain_content = terms.content.scalar();
      out.breakdown.madain_style = terms.style.scalar();
      out.breakdown.madain = madain.scalar();
      out.terms.push_back("madain");
    } catch (const Error& err) {
      throw std::runtime_error(std::string("madain: ") + err.what());
    }
  }
  if (tx) {
    total = total + w.lambda_4 * x.temporal;
    out.breakdown.temporal_x = x.temporal.scalar();
    out.terms.push_back("temporal_x");
  }
  if (ty) {
    total = total + w.lambda_4 * y.temporal;
    out.breakdown.temporal_y = y.temporal.scalar();
    out.terms.push_back("temporal_y");
  }
  out.total = total;
  out.breakdown.total = total.scalar();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string clip_identity(const VideoClip& clip) {
  if (clip.frames.empty()) throw ArityError("clip '" + clip.clip_id + "' has no frames");
  return clip.frames.front().identity;
}

std::pair<std::vector<std::string>, std::vector<std::string>> assign_domains(const std::vector<VideoClip>& clips,
                                                                             const TrainConfig& config) {
  std::set<std::string> present;
  for (const auto& c : clips) present.insert(clip_identity(c));
  auto check = [&](const std::vector<std::string>& ids) {
    for (const auto& id : ids)
      if (!present.count(id)) throw LookupError("identity '" + id + "' not present in the training clips");
  };
  std::vector<std::string> source = config.source_identities, target = config.target_identities;
  check(source);
  check(target);
  if (source.empty() || target.empty()) {
    std::vector<std::string> rest;
    for (const auto& id : present)
      if (std::find(source.begin(), source.end(), id) == source.end() &&
          std::find(target.begin(), target.end(), id) == target.end())
        rest.push_back(id);
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (source.empty() == target.empty()) {
        (i % 2 == 0 ? source : target).push_back(rest[i]);
      } else {
        (source.empty() ? source : target).push_back(rest[i]);
      }
    }
  }
  if (source.empty() || target.empty())
    throw ValidationError("training needs at least one source and one target identity");
  return {source, target};
}

std::string step_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06d.ckpt", step);
  return buf;
}

}  // namespace

std::map<std::string, Eigen::VectorXd> build_appearance_bank(const EncoderDecoderBundle& bundle,
                                                              const std::vector<VideoClip>& clips) {
  std::map<std::string, Eigen::VectorXd> sums;
  std::map<std::string, int> counts;
  for (const auto& clip : clips)
    for (const auto& f : clip.frames) {
      const auto code = bundle.encode_appearance(f);
      auto [it, fresh] = sums.try_emplace(f.identity, Eigen::VectorXd::Zero(code.dim()));
      it->second += code.mu;
      ++counts[f.identity];
    }
  for (auto& [id, v] : sums) v /= counts[id];
  return sums;
}

TrainResult train(const std::vector<VideoClip>& clips, const TrainConfig& config) {
  TrainResult result{FaceSwapModel(config), {}, {}};
  auto& model = result.model;
  const auto [source_ids, target_ids] = assign_domains(clips, model.config);
  const auto& opt = model.config.optimizer;
  const RandomConvExtractor extractor(model.config.extractor_channels, model.config.extractor_seed);
  const SoftBlockFlow flow(model.config.flow_block, model.config.flow_radius, model.config.flow_temperature);
  const nn::AdamConfig adam{opt.learning_rate, opt.beta1, opt.beta2, 1e-8};
  nn::Adam adam_bundle(adam), adam_fusion(adam);
  std::mt19937_64 rng(opt.seed);
  const bool paired = !model.config.flags.use_unpaired;

  auto draw = [&](const std::vector<std::string>& ids) {
    std::vector<TrainingSample> out;
    std::uniform_int_distribution<std::size_t> pick_id(0, ids.size() - 1);
    for (int i = 0; i < opt.batch_size; ++i) {
      const auto& id = ids[pick_id(rng)];
      auto tuple = build_unpaired_batch(clips, id, rng(), 1);
      out.push_back(make_training_sample(std::move(tuple.front()), model, paired));
    }
    return out;
  };

  if (model.config.checkpoint_every > 0) std::filesystem::create_directories(model.config.checkpoint_dir);
  for (int step = 0; step < opt.steps; ++step) {
    TrainingBatch batch;
    batch.source = draw(source_ids);
    batch.target = draw(target_ids);
    model.bundle.parameters().zero_grad();
    model.fusion.parameters().zero_grad();
    ad::Graph g;
    nn::Binding bp(g, model.bundle.parameters());
    nn::Binding fp(g, model.fusion.parameters());
    const auto loss = total_loss(g, bp, fp, batch, model, extractor, flow, rng);
    if (!loss.breakdown.finite())
      throw DivergenceError("non-finite loss at step " + std::to_string(step) + ": " + to_json(loss.breakdown).dump());
    g.backward(loss.total);
    if (!model.bundle.parameters().grads().allFinite() || !model.fusion.parameters().grads().allFinite())
      throw DivergenceError("non-finite gradient at step " + std::to_string(step) + ": " +
                            to_json(loss.breakdown).dump());
    adam_bundle.step(model.bundle.parameters().values(), model.bundle.parameters().grads());
    if (model.config.flags.use_madain)
      adam_fusion.step(model.fusion.parameters().values(), model.fusion.parameters().grads());
    result.history.push_back(loss.breakdown);

    if (model.config.checkpoint_every > 0 && (step + 1) % model.config.checkpoint_every == 0) {
      model.appearance_bank = build_appearance_bank(model.bundle, clips);
      const auto path = model.config.checkpoint_dir / step_name(step + 1);
      save_model(model, path);
      result.checkpoints.push_back(path);
    }
  }
  model.appearance_bank = build_appearance_bank(model.bundle, clips);
  return result;
}

TrainResult train(const DatasetManifest& dataset, const std::filesystem::path& root, const TrainConfig& config) {
  validate_manifest(dataset);
  std::vector<VideoClip> clips;
  for (const auto& e : dataset.entries) {
    if (e.split != Split::train) continue;
    clips.push_back(load_clip(clip_directory(root, e.clip_id)));
  }
  if (clips.empty()) throw ValidationError("manifest has no train-split entries");
  return train(clips, config);
}

// ---------------------------------------------------------------------------

FaceFrame swap_frame(const Eigen::VectorXd& appearance, const FaceFrame& target, const FaceSwapModel& model) {
  const auto structure = model.bundle.encode_structure(structure_of(target, model.bundle));
  const PlanarD decoded = model.bundle.decode(structure.mu, appearance);
  const FaceFrame reenacted{decoded, std::nullopt, target.identity, target.frame_index};
  const Mask mask = target_mask(target, model.config.effective_mask_sigma());
  if (model.config.flags.use_madain)
    return fuse(reenacted, target, mask, [&](const PlanarD& p) { return model.fusion(p); });
  return composite(decoded, target, mask);
}

VideoClip swap(const std::string& source_id, const VideoClip& target_clip, const FaceSwapModel& model) {
  const auto it = model.appearance_bank.find(source_id);
  if (it == model.appearance_bank.end()) throw LookupError("unknown source identity '" + source_id + "'");
  target_clip.validate();
  VideoClip out;
  out.clip_id = target_clip.clip_id + "-as-" + source_id;
  out.fps = target_clip.fps;
  out.label = Label::fake;
  for (const auto& frame : target_clip.frames) out.frames.push_back(swap_frame(it->second, frame, model));
  out.validate();
  return out;
}

VideoClip self_reenact(const VideoClip& clip, const FaceSwapModel& model) {
  clip.validate();
  const auto& id = clip.frames.front().identity;
  const auto it = model.appearance_bank.find(id);
  const Eigen::VectorXd appearance =
      it != model.appearance_bank.end() ? it->second : model.bundle.encode_appearance(clip.frames.front()).mu;
  VideoClip out;
  out.clip_id = clip.clip_id + "-reenacted";
  out.fps = clip.fps;
  out.label = Label::fake;
  for (const auto& f : clip.frames) {
    auto r = reenact(appearance, structure_of(f, model.bundle), model.bundle, f.identity, f.frame_index);
    r.landmarks = f.landmarks;
    out.frames.push_back(std::move(r));
  }
  return out;
}

}  // namespace dfvae
