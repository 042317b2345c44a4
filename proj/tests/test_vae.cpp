#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "gradcheck.hpp"
#include "support.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "dfvae/vae.hpp"

using namespace dfvae;
using dfvae::test::Gen;

namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.image_size = 16;
  a.heatmap_size = 8;
  a.landmark_count = 4;
  a.latent_dim = 6;
  a.encoder_channels = {4, 6};
  a.decoder_channels = {6, 4};
  a.fusion_channels = 2;
  a.init_seed = 3;
  return a;
}

FaceFrame landmarked_frame(Gen& g, const std::string& identity, int index) {
  auto f = g.frame(16, 16, identity, index);
  f.landmarks = g.landmarks(4, 16, 16, 2.0);
  return f;
}

HeatmapStack heatmap_of(const FaceFrame& f, const ArchConfig& a) {
  return render_heatmap(*f.landmarks, f.height(), f.width(), default_heatmap_sigma(a.heatmap_size), a.heatmap_size,
                        a.heatmap_size);
}

// Independent evidence: log Σ p(z) p(x|z) by a max-shifted log-sum-exp.
double log_evidence_oracle(const Eigen::VectorXd& prior, const Eigen::VectorXd& lik) {
  std::vector<double> terms;
  for (Eigen::Index z = 0; z < prior.size(); ++z)
    if (prior(z) > 0 && lik(z) > 0) terms.push_back(std::log(prior(z)) + std::log(lik(z)));
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

Eigen::VectorXd random_simplex(Gen& g, int n) {
  Eigen::VectorXd v(n);
  for (auto& x : v) x = -std::log(g.uniform(1e-12, 1.0));
  return v / v.sum();
}

}  // namespace

TEST_CASE("reparameterize examples") {
  Eigen::Vector3d mu(1.0, -2.0, 0.5), sigma(0.5, 2.0, 1.0), eps(2.0, 0.25, -1.0);
  const Eigen::VectorXd z = reparameterize(mu, sigma, eps);
  CHECK(z(0) == 2.0);
  CHECK(z(1) == -1.5);
  CHECK(z(2) == -0.5);
  CHECK_THROWS_AS(reparameterize(mu, Eigen::Vector3d(1, 0, 1), eps), DomainError);
  CHECK_THROWS_AS(reparameterize(Eigen::VectorXd(mu), Eigen::VectorXd::Ones(2), Eigen::VectorXd(eps)), ShapeError);
}

TEST_CASE("kl_loss examples") {
  CHECK(kl_loss(Eigen::VectorXd::Zero(5), Eigen::VectorXd::Ones(5)) == 0.0);
  // ½(1 + 0.25 − 1 − log 0.25) for one coordinate.
  const double expected = 0.5 * (1.0 + 0.25 - 1.0 - std::log(0.25));
  CHECK(kl_loss(Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 0.5)) ==
        doctest::Approx(expected).epsilon(1e-14));
  CHECK_THROWS_AS(kl_loss(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)), DomainError);
  // Float instantiation agrees.
  CHECK(kl_loss(Eigen::VectorXf::Constant(1, 1.0f), Eigen::VectorXf::Constant(1, 0.5f)) ==
        doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("kl_loss is non-negative over a random search") {
  Gen g(11);
  double lowest = 1e300;
  for (int i = 0; i < 10000; ++i) {
    const int n = g.integer(1, 8);
    const Eigen::VectorXd mu = g.vector(n, -3.0, 3.0);
    Eigen::VectorXd sigma(n);
    for (auto& s : sigma) s = std::exp(g.uniform(-4.0, 3.0));
    lowest = std::min(lowest, kl_loss(mu, sigma));
  }
  CHECK(lowest >= 0.0);
}

TEST_CASE("pixel and ssim losses") {
  Gen g(2);
  const auto a = g.frame(12, 12), b = g.frame(12, 12);
  CHECK(pixel_loss(a, a) == 0.0);
  CHECK(ssim_loss(a, a) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(pixel_loss(a, b) == doctest::Approx((a.pixels.array() - b.pixels.array()).abs().mean()));
  CHECK(ssim_loss(a, b) > 0.0);

  // Constant images: only the luminance term survives.
  const auto c = make_frame(PlanarD(3, 10, 10, 0.2), "id", 0), d = make_frame(PlanarD(3, 10, 10, 0.4), "id", 0);
  const SsimConfig cfg;
  const double lum = (2 * 0.2 * 0.4 + cfg.c1) / (0.04 + 0.16 + cfg.c1);
  CHECK(ssim_index(c.pixels, d.pixels) == doctest::Approx(lum).epsilon(1e-12));
  CHECK(pixel_loss(c, d) == doctest::Approx(0.2).epsilon(1e-12));
  SsimConfig wide;
  wide.window = 11;
  CHECK_THROWS_AS(ssim_loss(c, d, wide), ShapeError);
}

TEST_CASE("tape losses match their plain counterparts") {
  Gen g(5);
  const auto a = g.frame(9, 9), b = g.frame(9, 9);
  ad::Graph graph;
  const ad::Shape s{1, 3, 9, 9};
  auto va = graph.constant(a.pixels.flat(), s), vb = graph.constant(b.pixels.flat(), s);
  CHECK(pixel_loss(va, vb).scalar() == doctest::Approx(pixel_loss(a, b)).epsilon(1e-12));
  CHECK(ssim_loss(va, vb).scalar() == doctest::Approx(ssim_loss(a, b)).epsilon(1e-12));

  const Eigen::VectorXd mu = g.vector(4), sigma = g.vector(4, 0.3, 2.0);
  auto vmu = graph.constant(mu.array(), {1, 4, 1, 1}), vs = graph.constant(sigma.array(), {1, 4, 1, 1});
  CHECK(kl_loss(vmu, vs).scalar() == doctest::Approx(kl_loss(mu, sigma)).epsilon(1e-12));
}

TEST_CASE("loss gradients agree with finite differences") {
  Gen g(8);
  const ad::Shape v{2, 5, 1, 1};
  Eigen::ArrayXd sigma = g.vector(10, 0.4, 1.6).array();
  auto r = test::check_gradient(
      [](ad::Graph&, const std::vector<ad::Var>& x) { return ad::sum(ad::square(reparameterize(x[0], x[1], x[2]))); },
      {{g.normals(10), v}, {sigma, v}, {g.normals(10), v}});
  CHECK(r.relative_error < 1e-4);

  r = test::check_gradient([](ad::Graph&, const std::vector<ad::Var>& x) { return kl_loss(x[0], x[1]); },
                           {{g.normals(10), v}, {sigma, v}});
  CHECK(r.relative_error < 1e-4);

  const ad::Shape img{2, 3, 8, 8};
  // Keep |a − b| away from zero so the L1 kink does not sit inside the FD stencil.
  Eigen::ArrayXd a = g.vector(img.size(), 0.1, 0.9).array(), b = a;
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) += (g.coin() ? 1 : -1) * g.uniform(0.05, 0.1);
  r = test::check_gradient([](ad::Graph&, const std::vector<ad::Var>& x) { return pixel_loss(x[0], x[1]); },
                           {{a, img}, {b, img}});
  CHECK(r.relative_error < 1e-4);

  SsimConfig cfg;
  cfg.window = 5;
  r = test::check_gradient([cfg](ad::Graph&, const std::vector<ad::Var>& x) { return ssim_loss(x[0], x[1], cfg); },
                           {{a, img}, {b, img}});
  CHECK(r.relative_error < 1e-4);
}

TEST_CASE("discrete latent decomposition is exact") {
  test::for_all(200, 21, [](Gen& g) {
    const int n = g.integer(1, 12);
    DiscreteLatentModel m{random_simplex(g, n), g.vector(n, 1e-6, 1.0), random_simplex(g, n)};
    const auto t = elbo_terms(m);
    const double oracle = log_evidence_oracle(m.prior, m.likelihood);
    CHECK(std::abs(t.log_evidence - oracle) < 1e-12);
    CHECK(std::abs(t.posterior_kl + t.lower_bound - oracle) < 1e-10);
    CHECK(std::abs(t.lower_bound - (t.expected_log_likelihood - t.prior_kl)) < 1e-10);
    CHECK(t.posterior_kl >= -1e-15);
    CHECK(t.lower_bound <= oracle + 1e-12);
  });
}

TEST_CASE("the bound is tight at the exact posterior") {
  const Eigen::Vector3d prior(0.5, 0.3, 0.2), lik(0.1, 0.6, 0.9);
  const Eigen::VectorXd post = prior.cwiseProduct(lik) / prior.dot(lik);
  const auto t = elbo_terms({prior, lik, post});
  CHECK(std::abs(t.posterior_kl) < 1e-14);
  CHECK(t.lower_bound == doctest::Approx(std::log(prior.dot(lik))).epsilon(1e-14));
}

TEST_CASE("discrete latent model validation") {
  const Eigen::Vector2d p(0.5, 0.5);
  CHECK_THROWS_AS(elbo_terms({p, Eigen::Vector3d(1, 1, 1), p}), ShapeError);
  CHECK_THROWS_AS(elbo_terms({Eigen::Vector2d(0.7, 0.7), p, p}), DomainError);
  CHECK_THROWS_AS(elbo_terms({p, Eigen::Vector2d(1.5, 0.1), p}), DomainError);
  CHECK_THROWS_AS(elbo_terms({Eigen::Vector2d(1.0, 0.0), p, p}), DomainError);
  // q may leave states out.
  CHECK_NOTHROW(elbo_terms({p, p, Eigen::Vector2d(1.0, 0.0)}));
}

TEST_CASE("reconstruct requires a same-identity unpaired frame") {
  Gen g(3);
  const EncoderDecoderBundle bundle(tiny_arch());
  const auto f = landmarked_frame(g, "alice", 1);
  const auto other = landmarked_frame(g, "bob", 2);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(reconstruct(f, other, heatmap_of(f, bundle.config()), bundle, rng), PairingError);

  const auto same = landmarked_frame(g, "alice", 4);
  const auto r = reconstruct(f, same, heatmap_of(f, bundle.config()), bundle, rng);
  CHECK(r.frame.height() == 16);
  CHECK(r.frame.identity == "alice");
  CHECK(r.structure.eps.has_value());
  CHECK(r.appearance.role == LatentRole::appearance);
  CHECK((r.structure.z - (r.structure.mu + r.structure.sigma.cwiseProduct(*r.structure.eps))).norm() < 1e-12);
  CHECK(r.frame.pixels.array().minCoeff() >= 0.0);
  CHECK(r.frame.pixels.array().maxCoeff() <= 1.0);
}

TEST_CASE("reenactment is deterministic and uses posterior means") {
  Gen g(4);
  const EncoderDecoderBundle bundle(tiny_arch());
  const auto src = landmarked_frame(g, "alice", 0), tgt = landmarked_frame(g, "bob", 3);
  const auto a = reenact(src, heatmap_of(tgt, bundle.config()), bundle);
  const auto b = reenact(src, heatmap_of(tgt, bundle.config()), bundle);
  CHECK(a.pixels == b.pixels);
  const auto sc = bundle.encode_structure(bundle.structure_input(tgt, heatmap_of(tgt, bundle.config())));
  CHECK_FALSE(sc.eps.has_value());
  CHECK(sc.z == sc.mu);
  const auto direct = bundle.decode(sc.mu, bundle.encode_appearance(src).mu);
  CHECK(direct == a.pixels);
}

TEST_CASE("bundle parameters survive a checkpoint round trip") {
  test::TempDir dir;
  auto arch = tiny_arch();
  arch.init_seed = 99;
  const EncoderDecoderBundle bundle(arch);
  save_bundle(bundle, dir.path() / "b.ckpt");
  const auto back = load_bundle(dir.path() / "b.ckpt");
  CHECK(back.config() == arch);
  CHECK(back.parameters().values() == bundle.parameters().values());

  CHECK(to_json(arch_from_json(to_json(arch))) == to_json(arch));
  CHECK_THROWS_AS(load_bundle(dir.path() / "missing.ckpt"), IoError);
  {
    std::ofstream junk(dir.path() / "junk.ckpt");
    junk << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_bundle(dir.path() / "junk.ckpt"), DecodeError);
}

TEST_CASE("different init seeds give different parameters") {
  auto a = tiny_arch(), b = tiny_arch();
  b.init_seed = a.init_seed + 1;
  CHECK(EncoderDecoderBundle(a).parameters().values() != EncoderDecoderBundle(b).parameters().values());
  CHECK(EncoderDecoderBundle(a).parameters().values() == EncoderDecoderBundle(a).parameters().values());
}

TEST_CASE("architecture validation") {
  auto a = tiny_arch();
  a.encoder_channels = {2, 2, 2, 2, 2};  // 8 / 32 does not divide
  CHECK_THROWS_AS(EncoderDecoderBundle{a}, ValidationError);
  a = tiny_arch();
  a.latent_dim = 0;
  CHECK_THROWS_AS(EncoderDecoderBundle{a}, ValidationError);
}
