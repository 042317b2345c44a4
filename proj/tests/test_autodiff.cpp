#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"
#include "gradcheck.hpp"

#include <cmath>

using namespace dfvae;
using dfvae::test::Gen;
using dfvae::test::GradInput;

namespace {

// Projects an op's output onto a fixed random direction so the check covers
// the whole Jacobian.
ad::Var project(ad::Var y, std::uint64_t seed) {
  Gen g(seed);
  auto r = y.graph()->constant(g.normals(y.value().size()), y.shape());
  return ad::sum(y * r);
}

GradInput input(Gen& g, ad::Shape s, double lo = -1.0, double hi = 1.0) {
  Eigen::ArrayXd v(s.size());
  for (auto& x : v) x = g.uniform(lo, hi);
  return {v, s};
}

// Values bounded away from the kinks of |x|, relu and friends.
GradInput away_from_zero(Gen& g, ad::Shape s) {
  Eigen::ArrayXd v(s.size());
  for (auto& x : v) x = (g.coin() ? 1.0 : -1.0) * g.uniform(0.1, 1.0);
  return {v, s};
}

void expect_gradient(const test::ScalarProgram& f, std::vector<GradInput> inputs, double tol = 1e-7) {
  const auto r = test::check_gradient(f, std::move(inputs));
  CHECK(r.relative_error < tol);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  test::for_all(4, 1, [](Gen& g) {
    const ad::Shape s{2, 3, 2, 2};
    const auto a = input(g, s), b = input(g, s);
    const auto pos = input(g, s, 0.2, 2.0);
    const auto off = away_from_zero(g, s);
    expect_gradient([](ad::Graph&, const auto& v) { return project(v[0] + v[1], 1); }, {a, b});
    expect_gradient([](ad::Graph&, const auto& v) { return project(v[0] - v[1], 2); }, {a, b});
    expect_gradient([](ad::Graph&, const auto& v) { return project(v[0] * v[1], 3); }, {a, b});
    expect_gradient([](ad::Graph&, const auto& v) { return project(-v[0], 4); }, {a});
    expect_gradient([](ad::Graph&, const auto& v) { return project(2.5 * v[0] + 1.0 - (3.0 - v[0] * 0.5), 5); }, {a});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::exp(v[0]), 6); }, {a});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::log(v[0]), 7); }, {pos});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::square(v[0]), 8); }, {a});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::sqrt(v[0]), 9); }, {pos});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::abs(v[0]), 10); }, {off});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::sigmoid(v[0]), 11); }, {a});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::tanh(v[0]), 12); }, {a});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::relu(v[0]), 13); }, {off});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::leaky_relu(v[0], 0.2), 14); }, {off});
  });
}

TEST_CASE("reductions and reshaping ops match finite differences") {
  test::for_all(3, 2, [](Gen& g) {
    const auto x = input(g, {2, 3, 4, 4});
    const auto m = input(g, {2, 1, 4, 4}, 0.0, 1.0);
    expect_gradient([](ad::Graph&, const auto& v) { return ad::sum(ad::square(v[0])); }, {x});
    expect_gradient([](ad::Graph&, const auto& v) { return ad::mean(ad::square(v[0])); }, {x});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::sum_per_sample(ad::square(v[0])), 1); }, {x});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::mul_channels(v[0], v[1]), 2); }, {x, m});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::reshape(v[0], {2, 48, 1, 1}), 3); }, {x});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::concat_channels(v[0], v[1]), 4); }, {x, m});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::slice_channels(v[0], 1, 2), 5); }, {x});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::upsample_nearest2x(v[0]), 6); }, {x});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::avg_pool2(v[0]), 7); }, {x});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::channel_mean(v[0]), 8); }, {x});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::channel_std(v[0], 1e-8), 9); }, {x});
  });
}

TEST_CASE("linear and conv2d match finite differences") {
  test::for_all(3, 3, [](Gen& g) {
    const auto x = input(g, {2, 5, 1, 1});
    const auto w = input(g, {3, 5, 1, 1});
    const auto b = input(g, {3, 1, 1, 1});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::linear(v[0], v[1], v[2]), 1); }, {x, w, b});
    const auto img = input(g, {2, 2, 6, 6});
    const auto k = input(g, {3, 2, 3, 3});
    const auto kb = input(g, {3, 1, 1, 1});
    for (int stride : {1, 2})
      for (int pad : {0, 1})
        expect_gradient(
            [stride, pad](ad::Graph&, const auto& v) { return project(ad::conv2d(v[0], v[1], v[2], stride, pad), 2); },
            {img, k, kb});
  });
}

TEST_CASE("conv2d forward matches a direct loop") {
  Gen g(4);
  const auto x = input(g, {2, 2, 5, 5});
  const auto w = input(g, {3, 2, 3, 3});
  const auto b = input(g, {3, 1, 1, 1});
  ad::Graph graph;
  const int stride = 2, pad = 1;
  auto y = ad::conv2d(graph.constant(x.value, x.shape), graph.constant(w.value, w.shape),
                      graph.constant(b.value, b.shape), stride, pad);
  const auto s = y.shape();
  REQUIRE(s == ad::Shape{2, 3, 3, 3});
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double acc = b.value(o);
          for (int c = 0; c < 2; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
                acc += w.value(((o * 2 + c) * 3 + ky) * 3 + kx) * x.value(((n * 2 + c) * 5 + iy) * 5 + ix);
              }
          CHECK(y.value()(((n * 3 + o) * 3 + oy) * 3 + ox) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("fused image ops match finite differences") {
  test::for_all(3, 5, [](Gen& g) {
    const auto a = input(g, {2, 2, 8, 8}, 0.0, 1.0);
    const auto b = input(g, {2, 2, 8, 8}, 0.0, 1.0);
    const auto m = input(g, {2, 1, 8, 8}, 0.2, 1.0);
    expect_gradient([](ad::Graph&, const auto& v) { return ad::ssim_mean(v[0], v[1], 3, 1e-4, 9e-4); }, {a, b});
    expect_gradient([](ad::Graph&, const auto& v) { return project(ad::masked_adain(v[0], v[1], v[2], 1e-6), 1); },
                    {a, b, m});
    // Soft flow: small temperature still smooth; h well below the cost scale.
    expect_gradient(
        [](ad::Graph&, const auto& v) { return project(ad::soft_block_flow(v[0], v[1], 4, 1, 0.5), 2); }, {a, b},
        1e-6);
  });
}

TEST_CASE("tape records op names and never warps") {
  ad::Graph g;
  auto a = g.leaf(Eigen::ArrayXd::Constant(48, 0.3), {1, 3, 4, 4});
  auto b = g.constant(Eigen::ArrayXd::Constant(48, 0.6), {1, 3, 4, 4});
  auto f = ad::soft_block_flow(a, b, 2, 1, 0.1);
  g.backward(ad::mean(f));
  const auto names = g.op_names();
  CHECK(std::find(names.begin(), names.end(), "soft_block_flow") != names.end());
  for (const auto& n : names) CHECK(n.find("warp") == std::string::npos);
}

TEST_CASE("shape mismatches throw") {
  ad::Graph g;
  auto a = g.constant(Eigen::ArrayXd::Zero(4), {1, 4, 1, 1});
  auto b = g.constant(Eigen::ArrayXd::Zero(3), {1, 3, 1, 1});
  CHECK_THROWS_AS(a + b, ShapeError);
  CHECK_THROWS_AS(ad::concat_channels(g.constant(Eigen::ArrayXd::Zero(4), {1, 1, 2, 2}),
                                      g.constant(Eigen::ArrayXd::Zero(9), {1, 1, 3, 3})),
                  ShapeError);
}
