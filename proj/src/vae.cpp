#include "dfvae/vae.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace dfvae {

namespace {

nn::Binding frozen(ad::Graph& graph, const nn::ParameterStore& store) {
  // Read-only binding: parameters enter the tape as constants.
  return nn::Binding(graph, const_cast<nn::ParameterStore&>(store), false);
}

Eigen::VectorXd to_vector(const Eigen::ArrayXd& a) { return a.matrix(); }

}  // namespace

double pixel_loss(const FaceFrame& a, const FaceFrame& b) { return pixel_loss(a.pixels, b.pixels); }

double ssim_index(const PlanarD& a, const PlanarD& b, const SsimConfig& config) {
  require_same_shape(a, b, "ssim");
  if (config.window > std::min(a.height(), a.width()))
    throw ShapeError("ssim: window " + std::to_string(config.window) + " larger than image " + a.shape_string());
  ad::Graph g;
  const ad::Shape s{1, a.channels(), a.height(), a.width()};
  auto va = g.constant(a.flat(), s);
  auto vb = g.constant(b.flat(), s);
  return ad::ssim_mean(va, vb, config.window, config.c1, config.c2).scalar();
}

double ssim_loss(const FaceFrame& a, const FaceFrame& b, const SsimConfig& config) {
  return 1.0 - ssim_index(a.pixels, b.pixels, config);
}

ad::Var reparameterize(ad::Var mu, ad::Var sigma, ad::Var eps) {
  if (mu.shape() != sigma.shape() || mu.shape() != eps.shape()) throw ShapeError("reparameterize: shape mismatch");
  return mu + sigma * eps;
}

ad::Var kl_loss(ad::Var mu, ad::Var sigma) {
  const double n = mu.shape().n;
  auto terms = ad::square(mu) + ad::square(sigma) - 1.0 - 2.0 * ad::log(sigma);
  return (0.5 / n) * ad::sum(terms);
}

ad::Var pixel_loss(ad::Var a, ad::Var b) { return ad::mean(ad::abs(a - b)); }

ad::Var ssim_loss(ad::Var a, ad::Var b, const SsimConfig& config) {
  return 1.0 - ad::ssim_mean(a, b, config.window, config.c1, config.c2);
}

// ---------------------------------------------------------------------------

void DiscreteLatentModel::validate() const {
  const auto n = prior.size();
  if (n == 0 || likelihood.size() != n || variational.size() != n)
    throw ShapeError("discrete latent model: prior, likelihood and q must share a non-empty support");
  auto distribution = [](const Eigen::VectorXd& v, const char* what) {
    if (!v.allFinite() || (v.array() < 0.0).any() || std::abs(v.sum() - 1.0) > 1e-12)
      throw DomainError(std::string("discrete latent model: ") + what + " is not a distribution");
  };
  distribution(prior, "prior");
  distribution(variational, "q");
  if (!likelihood.allFinite() || (likelihood.array() < 0.0).any() || (likelihood.array() > 1.0).any())
    throw DomainError("discrete latent model: likelihood values must lie in [0,1]");
  if (((variational.array() > 0.0) && (prior.array() * likelihood.array() <= 0.0)).any())
    throw DomainError("discrete latent model: q puts mass where p(x, z) vanishes");
}

ElboTerms elbo_terms(const DiscreteLatentModel& m) {
  m.validate();
  const Eigen::ArrayXd joint = m.prior.array() * m.likelihood.array();  // p(x, z | c)
  ElboTerms t;
  t.log_evidence = std::log(joint.sum());
  const Eigen::ArrayXd posterior = joint / joint.sum();
  for (Eigen::Index z = 0; z < joint.size(); ++z) {
    const double q = m.variational(z);
    if (q == 0.0) continue;  // 0 log 0 = 0
    t.posterior_kl += q * std::log(q / posterior(z));
    t.lower_bound += q * (std::log(joint(z)) - std::log(q));
    t.prior_kl += q * std::log(q / m.prior(z));
    t.expected_log_likelihood += q * std::log(m.likelihood(z));
  }
  return t;
}

void ArchConfig::validate() const {
  if (image_size < 8 || heatmap_size < 1) throw ValidationError("arch: image/heatmap size too small");
  if (landmark_count < 1 || latent_dim < 1) throw ValidationError("arch: K and J must be positive");
  if (encoder_channels.empty() || decoder_channels.empty()) throw ValidationError("arch: empty channel list");
  const int depth = static_cast<int>(encoder_channels.size());
  if (heatmap_size % (1 << depth) != 0 || image_size % (1 << depth) != 0)
    throw ValidationError("arch: encoder depth must divide image and heatmap sizes");
  if (image_size % (1 << decoder_channels.size()) != 0)
    throw ValidationError("arch: decoder depth must divide the image size");
  if (structure_from_image && image_size % heatmap_size != 0)
    throw ValidationError("arch: heatmap size must divide image size for image structure input");
  if (fusion_channels < 1) throw ValidationError("arch: fusion width must be positive");
}

int ArchConfig::decoder_base_size() const { return image_size >> decoder_channels.size(); }

nlohmann::json to_json(const ArchConfig& c) {
  return {{"image_size", c.image_size},
          {"heatmap_size", c.heatmap_size},
          {"landmark_count", c.landmark_count},
          {"latent_dim", c.latent_dim},
          {"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"fusion_channels", c.fusion_channels},
          {"leaky_slope", c.leaky_slope},
          {"structure_from_image", c.structure_from_image},
          {"init_seed", c.init_seed}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.heatmap_size = j.value("heatmap_size", c.heatmap_size);
  c.landmark_count = j.value("landmark_count", c.landmark_count);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
  c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
  c.fusion_channels = j.value("fusion_channels", c.fusion_channels);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.structure_from_image = j.value("structure_from_image", c.structure_from_image);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.validate();
  return c;
}

EncoderDecoderBundle::EncoderDecoderBundle(ArchConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  const int j = config_.latent_dim;

  auto build_encoder = [&](const std::string& name, int in_channels, int size) {
    Encoder enc;
    int c = in_channels;
    for (std::size_t i = 0; i < config_.encoder_channels.size(); ++i) {
      const int out = config_.encoder_channels[i];
      enc.convs.push_back(nn::Conv2d::create(params_, name + ".conv" + std::to_string(i), c, out, 3, 2, 1, rng));
      c = out;
      size /= 2;
    }
    enc.head = nn::Linear::create(params_, name + ".head", c * size * size, 2 * j, rng);
    // Small head keeps the initial log σ near zero.
    auto& v = params_.values();
    const auto& slot = params_.slots()[enc.head.weight];
    v.segment(slot.offset, slot.shape.size()) *= 0.1;
    return enc;
  };
  structure_ = build_encoder("E_alpha", config_.structure_channels(), config_.heatmap_size);
  appearance_ = build_encoder("E_beta", 3, config_.image_size);

  const int base = config_.decoder_base_size();
  const int c0 = config_.decoder_channels.front();
  decoder_in_ = nn::Linear::create(params_, "D_gamma.fc", 2 * j, c0 * base * base, rng);
  for (std::size_t i = 0; i < config_.decoder_channels.size(); ++i) {
    const int in = config_.decoder_channels[i];
    const int out = i + 1 < config_.decoder_channels.size() ? config_.decoder_channels[i + 1] : 3;
    decoder_convs_.push_back(nn::Conv2d::create(params_, "D_gamma.conv" + std::to_string(i), in, out, 3, 1, 1, rng));
  }
}

EncoderDecoderBundle::Posterior EncoderDecoderBundle::run_encoder(const Encoder& enc, nn::Binding& params,
                                                                  ad::Var x) const {
  for (const auto& conv : enc.convs) x = ad::leaky_relu(conv(params, x), config_.leaky_slope);
  const auto s = x.shape();
  x = ad::reshape(x, ad::Shape{s.n, static_cast<int>(s.per_sample()), 1, 1});
  auto out = enc.head(params, x);
  const int j = config_.latent_dim;
  return {ad::slice_channels(out, 0, j), ad::exp(ad::slice_channels(out, j, j))};
}

EncoderDecoderBundle::Posterior EncoderDecoderBundle::structure_posterior(nn::Binding& params, ad::Var x) const {
  const auto s = x.shape();
  if (s.c != config_.structure_channels() || s.h != config_.heatmap_size || s.w != config_.heatmap_size)
    throw ShapeError("structure encoder input " + s.str() + " does not match the architecture");
  return run_encoder(structure_, params, x);
}

EncoderDecoderBundle::Posterior EncoderDecoderBundle::appearance_posterior(nn::Binding& params, ad::Var x) const {
  const auto s = x.shape();
  if (s.c != 3 || s.h != config_.image_size || s.w != config_.image_size)
    throw ShapeError("appearance encoder input " + s.str() + " does not match the architecture");
  return run_encoder(appearance_, params, x);
}

ad::Var EncoderDecoderBundle::decode(nn::Binding& params, ad::Var z_structure, ad::Var z_appearance) const {
  auto z = ad::concat_channels(z_structure, z_appearance);
  auto h = ad::leaky_relu(decoder_in_(params, z), config_.leaky_slope);
  const int base = config_.decoder_base_size();
  h = ad::reshape(h, ad::Shape{h.shape().n, config_.decoder_channels.front(), base, base});
  for (std::size_t i = 0; i < decoder_convs_.size(); ++i) {
    h = decoder_convs_[i](params, ad::upsample_nearest2x(h));
    h = i + 1 < decoder_convs_.size() ? ad::leaky_relu(h, config_.leaky_slope) : ad::sigmoid(h);
  }
  return h;
}

LatentCode EncoderDecoderBundle::encode_structure(const PlanarD& structure_input) const {
  ad::Graph g;
  auto params = frozen(g, params_);
  auto x = g.constant(structure_input.flat(),
                      ad::Shape{1, structure_input.channels(), structure_input.height(), structure_input.width()});
  auto post = structure_posterior(params, x);
  LatentCode code{to_vector(post.mu.value()), to_vector(post.sigma.value()), {}, std::nullopt, LatentRole::structure};
  code.z = code.mu;
  return code;
}

LatentCode EncoderDecoderBundle::encode_appearance(const FaceFrame& frame) const {
  ad::Graph g;
  auto params = frozen(g, params_);
  auto x = g.constant(frame.pixels.flat(), ad::Shape{1, 3, frame.height(), frame.width()});
  auto post = appearance_posterior(params, x);
  LatentCode code{to_vector(post.mu.value()), to_vector(post.sigma.value()), {}, std::nullopt, LatentRole::appearance};
  code.z = code.mu;
  return code;
}

PlanarD EncoderDecoderBundle::decode(const Eigen::VectorXd& z_structure, const Eigen::VectorXd& z_appearance) const {
  const int j = config_.latent_dim;
  if (z_structure.size() != j || z_appearance.size() != j) throw ShapeError("decode: latent length mismatch");
  ad::Graph g;
  auto params = frozen(g, params_);
  auto zs = g.constant(z_structure.array(), ad::Shape{1, j, 1, 1});
  auto za = g.constant(z_appearance.array(), ad::Shape{1, j, 1, 1});
  auto out = decode(params, zs, za);
  return var_sample(out, 0);
}

PlanarD EncoderDecoderBundle::structure_input(const FaceFrame& frame, const HeatmapStack& heatmap) const {
  if (!config_.structure_from_image) {
    if (heatmap.landmark_count() != config_.landmark_count)
      throw ValidationError("heatmap has " + std::to_string(heatmap.landmark_count()) + " channels, bundle expects " +
                            std::to_string(config_.landmark_count));
    return heatmap.channels;
  }
  const int f = frame.height() / config_.heatmap_size;
  if (f < 1 || frame.height() != config_.image_size || frame.width() != config_.image_size)
    throw ShapeError("structure_input: frame size does not match the architecture");
  PlanarD out(3, config_.heatmap_size, config_.heatmap_size);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < config_.heatmap_size; ++y)
      for (int x = 0; x < config_.heatmap_size; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) acc += frame.pixels(c, y * f + dy, x * f + dx);
        out(c, y, x) = acc / (f * f);
      }
  return out;
}

Reconstruction reconstruct(const FaceFrame& frame, const FaceFrame& unpaired, const HeatmapStack& heatmap,
                           const EncoderDecoderBundle& bundle, std::mt19937_64& rng) {
  if (frame.identity != unpaired.identity)
    throw PairingError("unpaired frame identity '" + unpaired.identity + "' differs from '" + frame.identity + "'");
  auto structure = bundle.encode_structure(bundle.structure_input(frame, heatmap));
  auto appearance = bundle.encode_appearance(unpaired);
  std::normal_distribution<double> normal;
  for (LatentCode* code : {&structure, &appearance}) {
    Eigen::VectorXd eps(code->dim());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
    code->z = reparameterize(code->mu, code->sigma, eps);
    code->eps = std::move(eps);
  }
  FaceFrame out{bundle.decode(structure.z, appearance.z), std::nullopt, frame.identity, frame.frame_index};
  return {std::move(out), std::move(structure), std::move(appearance)};
}

FaceFrame reenact(const FaceFrame& source_appearance, const HeatmapStack& target_heatmap,
                  const EncoderDecoderBundle& bundle) {
  if (bundle.config().structure_from_image)
    throw ValidationError("reenact from a heatmap needs a heatmap-structure bundle");
  const auto appearance = bundle.encode_appearance(source_appearance);
  return reenact(appearance.mu, target_heatmap.channels, bundle, source_appearance.identity,
                 source_appearance.frame_index);
}

FaceFrame reenact(const Eigen::VectorXd& appearance_mu, const PlanarD& target_structure_input,
                  const EncoderDecoderBundle& bundle, std::string identity, int frame_index) {
  const auto structure = bundle.encode_structure(target_structure_input);
  return FaceFrame{bundle.decode(structure.mu, appearance_mu), std::nullopt, std::move(identity), frame_index};
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'D', 'F', 'V', 'A', 'E', 'C', 'K', 'P'};
}

const Eigen::VectorXd& CheckpointArchive::block(const std::string& name) const {
  for (const auto& [n, v] : blocks)
    if (n == name) return v;
  throw LookupError("checkpoint has no block '" + name + "'");
}

void write_archive(const CheckpointArchive& archive, const std::filesystem::path& path) {
  auto header = archive.header;
  header["version"] = kCheckpointVersion;
  header["blocks"] = nlohmann::json::array();
  for (const auto& [name, v] : archive.blocks) header["blocks"].push_back({{"name", name}, {"size", v.size()}});
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint '" + path.string() + "' for writing");
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, v] : archive.blocks)
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

CheckpointArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DecodeError("not a checkpoint archive");
  if (version != kCheckpointVersion) throw DecodeError("unsupported checkpoint version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  CheckpointArchive archive;
  archive.header = nlohmann::json::parse(text);
  for (const auto& b : archive.header.at("blocks")) {
    Eigen::VectorXd v(b.at("size").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    archive.blocks.emplace_back(b.at("name").get<std::string>(), std::move(v));
  }
  if (!in) throw DecodeError("truncated checkpoint '" + path.string() + "'");
  return archive;
}

CheckpointArchive bundle_archive(const EncoderDecoderBundle& bundle) {
  CheckpointArchive a;
  a.header["format"] = "dfvae-bundle";
  a.header["arch"] = to_json(bundle.config());
  a.header["landmark_count"] = bundle.config().landmark_count;
  a.header["latent_dim"] = bundle.config().latent_dim;
  a.header["parameter_count"] = bundle.parameters().size();
  a.blocks.emplace_back("bundle", bundle.parameters().values());
  return a;
}

EncoderDecoderBundle bundle_from_archive(const CheckpointArchive& archive) {
  EncoderDecoderBundle bundle(arch_from_json(archive.header.at("arch")));
  const auto& params = archive.block("bundle");
  if (params.size() != bundle.parameters().size())
    throw DecodeError("checkpoint parameter count " + std::to_string(params.size()) + " does not match the architecture (" +
                      std::to_string(bundle.parameters().size()) + ")");
  bundle.parameters().values() = params;
  return bundle;
}

void save_bundle(const EncoderDecoderBundle& bundle, const std::filesystem::path& path) {
  write_archive(bundle_archive(bundle), path);
}

EncoderDecoderBundle load_bundle(const std::filesystem::path& path) { return bundle_from_archive(read_archive(path)); }

// ---------------------------------------------------------------------------

ad::Var frames_to_var(ad::Graph& graph, const std::vector<const PlanarD*>& planes) {
  if (planes.empty()) throw ShapeError("frames_to_var: empty batch");
  const auto& first = *planes.front();
  const ad::Shape s{static_cast<int>(planes.size()), first.channels(), first.height(), first.width()};
  Eigen::ArrayXd v(s.size());
  for (std::size_t i = 0; i < planes.size(); ++i) {
    require_same_shape(*planes[i], first, "frames_to_var");
    v.segment(static_cast<Eigen::Index>(i) * s.per_sample(), s.per_sample()) = planes[i]->flat();
  }
  return graph.constant(std::move(v), s);
}

PlanarD var_sample(const ad::Var& v, int index) {
  const auto s = v.shape();
  PlanarD out(s.c, s.h, s.w);
  out.flat() = v.value().segment(static_cast<Eigen::Index>(index) * s.per_sample(), s.per_sample());
  return out;
}

}  // namespace dfvae
