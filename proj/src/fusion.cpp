#include "dfvae/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dfvae {

StyleStats masked_stats(const PlanarD& image, const Mask& mask) {
  if (mask.values.height() != image.height() || mask.values.width() != image.width())
    throw ShapeError("masked_stats: mask and image sizes differ");
  const auto m = mask.values.channel(0);
  StyleStats st;
  st.support = m.sum();
  st.mean = Eigen::VectorXd::Zero(image.channels());
  st.std = Eigen::VectorXd::Zero(image.channels());
  if (st.support <= 0.0) return st;
  for (int c = 0; c < image.channels(); ++c) {
    const auto x = image.channel(c);
    st.mean(c) = (m * x).sum() / st.support;
    st.std(c) = std::sqrt((m * (x - st.mean(c)).square()).sum() / st.support);
  }
  return st;
}

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

}  // namespace

Mask face_mask(std::span<const Point2> landmarks, int height, int width) {
  Mask mask{PlanarD(1, height, width), MaskKind::binary};
  const auto hull = convex_hull({landmarks.begin(), landmarks.end()});
  if (hull.size() < 3) return mask;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i)
        inside = cross(hull[i], hull[(i + 1) % hull.size()], p) >= 0.0;
      mask.values(0, y, x) = inside ? 1.0 : 0.0;
    }
  return mask;
}

Mask blur_mask(const Mask& mask, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("blur_mask: sigma must be positive");
  mask.validate();
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * r + 1);
  double total = 0.0;
  for (int k = -r; k <= r; ++k) total += (kernel[k + r] = std::exp(-(k * k) / (2.0 * sigma * sigma)));
  for (auto& v : kernel) v /= total;
  const int h = mask.values.height(), w = mask.values.width();
  PlanarD tmp(1, h, w), out(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += kernel[k + r] * mask.values(0, y, reflect101(x + k, w));
      tmp(0, y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += kernel[k + r] * tmp(0, reflect101(y + k, h), x);
      out(0, y, x) = std::clamp(acc, 0.0, 1.0);
    }
  return Mask{std::move(out), MaskKind::blurred};
}

PlanarD madain(const PlanarD& content, const PlanarD& style, const Mask& mask_b) {
  require_same_shape(content, style, "madain");
  if (mask_b.values.height() != content.height() || mask_b.values.width() != content.width())
    throw ShapeError("madain: mask size differs from the images");
  ad::Graph g;
  const ad::Shape s{1, content.channels(), content.height(), content.width()};
  auto c = g.constant(content.flat(), s);
  auto st = g.constant(style.flat(), s);
  auto m = g.constant(mask_b.values.flat(), ad::Shape{1, 1, s.h, s.w});
  PlanarD out(s.c, s.h, s.w);
  out.flat() = ad::masked_adain(c, st, m, 0.0).value();
  return out;
}

std::vector<ad::Var> PerceptualExtractor::features(ad::Var image) const {
  std::vector<ad::Var> out;
  ad::Var x = image;
  for (int i = 0; i < layers(); ++i) {
    try {
      x = stage(i, x);
    } catch (const std::exception& err) {
      throw ExtractionError("perceptual extractor failed at layer " + std::to_string(i) + ": " + err.what());
    }
    out.push_back(x);
  }
  return out;
}

RandomConvExtractor::RandomConvExtractor(std::vector<int> channels, std::uint64_t seed) : channels_(std::move(channels)) {
  std::mt19937_64 rng(seed);
  int in = 3;
  for (int out : channels_) {
    const ad::Shape ws{out, in, 3, 3};
    weights_.emplace_back(nn::he_uniform(ws.size(), in * 9, rng).array(), Eigen::ArrayXd::Zero(out));
    shapes_.push_back(ws);
    in = out;
  }
}

ad::Var RandomConvExtractor::stage(int index, ad::Var input) const {
  auto& g = *input.graph();
  if (index > 0) input = ad::avg_pool2(input);
  const auto& [kernel, bias] = weights_.at(index);
  auto w = g.constant(kernel, shapes_[index]);
  auto b = g.constant(bias, ad::Shape{channels_[index], 1, 1, 1});
  return ad::relu(ad::conv2d(input, w, b, 1, 1));
}

FusionDecoder::FusionDecoder(int hidden_channels, std::uint64_t seed, double leaky_slope)
    : hidden_(hidden_channels), slope_(leaky_slope) {
  std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
  first_ = nn::Conv2d::create(params_, "D_delta.conv0", 3, hidden_, 3, 1, 1, rng);
  second_ = nn::Conv2d::create(params_, "D_delta.conv1", hidden_, 3, 3, 1, 1, rng);
}

ad::Var FusionDecoder::forward(nn::Binding& params, ad::Var x) const {
  return ad::sigmoid(second_(params, ad::leaky_relu(first_(params, x), slope_)));
}

PlanarD FusionDecoder::operator()(const PlanarD& image) const {
  ad::Graph g;
  nn::Binding params(g, const_cast<nn::ParameterStore&>(params_), false);
  auto x = g.constant(image.flat(), ad::Shape{1, image.channels(), image.height(), image.width()});
  auto y = forward(params, x);
  PlanarD out(3, image.height(), image.width());
  out.flat() = y.value();
  return out;
}

FaceFrame composite(const PlanarD& face, const FaceFrame& target, const Mask& mask_b) {
  require_same_shape(face, target.pixels, "composite");
  if (mask_b.values.height() != target.height() || mask_b.values.width() != target.width())
    throw ShapeError("composite: mask size differs from the target");
  FaceFrame out = target;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < target.height(); ++y)
      for (int x = 0; x < target.width(); ++x) {
        const double m = mask_b.values(0, y, x);
        if (m == 0.0) continue;
        out.pixels(c, y, x) = std::clamp(m * face(c, y, x) + (1.0 - m) * target.pixels(c, y, x), 0.0, 1.0);
      }
  return out;
}

FaceFrame fuse(const FaceFrame& reenacted, const FaceFrame& target, const Mask& mask_b, const ImageMap& d_delta) {
  require_same_shape(reenacted.pixels, target.pixels, "fuse");
  if (mask_b.values.height() != target.height() || mask_b.values.width() != target.width())
    throw ShapeError("fuse: mask size differs from the target");
  const PlanarD decoded = d_delta(madain(reenacted.pixels, target.pixels, mask_b));
  require_same_shape(decoded, target.pixels, "fuse: D_delta output");
  return composite(decoded, target, mask_b);
}

namespace {

ad::Var per_sample_norm(ad::Var diff) { return ad::sqrt(ad::sum_per_sample(ad::square(diff))); }

}  // namespace

MadainLossTerms madain_loss(ad::Var output, ad::Var content_ref, ad::Var style_ref, ad::Var mask,
                            const PerceptualExtractor& extractor) {
  auto o = ad::mul_channels(output, mask);
  auto c = ad::mul_channels(content_ref, mask);
  auto s = ad::mul_channels(style_ref, mask);
  auto content = ad::mean(per_sample_norm(o - c));

  const auto fo = extractor.features(o);
  const auto fs = extractor.features(s);
  ad::Var style;
  for (std::size_t i = 0; i < fo.size(); ++i) {
    auto dm = ad::channel_mean(fo[i]) - ad::channel_mean(fs[i]);
    auto ds = ad::channel_std(fo[i], kFeatureStdEps) - ad::channel_std(fs[i], kFeatureStdEps);
    auto term = ad::mean(per_sample_norm(dm)) + ad::mean(per_sample_norm(ds));
    style = style.valid() ? style + term : term;
  }
  return {content, style};
}

std::pair<double, double> madain_loss(const FaceFrame& output, const FaceFrame& content_ref,
                                      const FaceFrame& style_ref, const Mask& mask_b,
                                      const PerceptualExtractor& extractor) {
  require_same_shape(output.pixels, content_ref.pixels, "madain_loss");
  require_same_shape(output.pixels, style_ref.pixels, "madain_loss");
  ad::Graph g;
  const ad::Shape s{1, 3, output.height(), output.width()};
  auto o = g.constant(output.pixels.flat(), s);
  auto c = g.constant(content_ref.pixels.flat(), s);
  auto st = g.constant(style_ref.pixels.flat(), s);
  auto m = g.constant(mask_b.values.flat(), ad::Shape{1, 1, s.h, s.w});
  const auto terms = madain_loss(o, c, st, m, extractor);
  return {terms.content.scalar(), terms.style.scalar()};
}

}  // namespace dfvae
