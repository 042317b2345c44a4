#include "dfvae/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

namespace dfvae {

void FlowField::validate() const {
  if (values.channels() != 2) throw ShapeError("flow field must have 2 channels, got " + values.shape_string());
}

ad::Var FlowEstimator::estimate(ad::Var current, ad::Var previous) const {
  const ad::Shape s = current.shape();
  if (!(s == previous.shape())) throw ShapeError("flow estimate: batch shapes differ");
  Eigen::ArrayXd out(static_cast<Eigen::Index>(s.n) * 2 * s.plane());
  for (int n = 0; n < s.n; ++n) {
    PlanarD a(s.c, s.h, s.w), b(s.c, s.h, s.w);
    a.flat() = current.value().segment(n * s.per_sample(), s.per_sample());
    b.flat() = previous.value().segment(n * s.per_sample(), s.per_sample());
    const auto flow = estimate(make_frame(std::move(a), "flow", 0), make_frame(std::move(b), "flow", 0));
    out.segment(n * 2 * s.plane(), 2 * s.plane()) = flow.values.flat();
  }
  return current.graph()->constant(std::move(out), ad::Shape{s.n, 2, s.h, s.w});
}

FlowField block_match_flow(const FaceFrame& a, const FaceFrame& b, int block, int radius) {
  require_same_shape(a.pixels, b.pixels, "block_match_flow");
  const int h = a.height(), w = a.width();
  if (block < 1 || h % block != 0 || w % block != 0)
    throw ShapeError("block_match_flow: block " + std::to_string(block) + " does not divide " +
                     a.pixels.shape_string());
  if (radius < 0) throw DomainError("block_match_flow: radius must be non-negative");
  FlowField flow{PlanarD(2, h, w)};
  for (int by = 0; by < h; by += block)
    for (int bx = 0; bx < w; bx += block) {
      auto best = std::make_tuple(std::numeric_limits<double>::infinity(), 0, 0, 0);
      for (int dv = -radius; dv <= radius; ++dv)
        for (int du = -radius; du <= radius; ++du) {
          double sad = 0.0;
          for (int c = 0; c < 3; ++c)
            for (int y = by; y < by + block; ++y) {
              const int yy = std::clamp(y + dv, 0, h - 1);
              for (int x = bx; x < bx + block; ++x)
                sad += std::abs(a.pixels(c, y, x) - b.pixels(c, yy, std::clamp(x + du, 0, w - 1)));
            }
          const auto key = std::make_tuple(sad, du * du + dv * dv, du, dv);
          if (key < best) best = key;
        }
      for (int y = by; y < by + block; ++y)
        for (int x = bx; x < bx + block; ++x) {
          flow.values(0, y, x) = std::get<2>(best);
          flow.values(1, y, x) = std::get<3>(best);
        }
    }
  return flow;
}

FlowField BlockMatchFlow::estimate(const FaceFrame& current, const FaceFrame& previous) const {
  return block_match_flow(current, previous, block_, radius_);
}

FlowField SoftBlockFlow::estimate(const FaceFrame& current, const FaceFrame& previous) const {
  require_same_shape(current.pixels, previous.pixels, "soft flow");
  ad::Graph g;
  const ad::Shape s{1, current.pixels.channels(), current.height(), current.width()};
  auto flow = estimate(g.constant(current.pixels.flat(), s), g.constant(previous.pixels.flat(), s));
  FlowField out{PlanarD(2, s.h, s.w)};
  out.values.flat() = flow.value();
  return out;
}

ad::Var SoftBlockFlow::estimate(ad::Var current, ad::Var previous) const {
  return ad::soft_block_flow(current, previous, block_, radius_, temperature_);
}

double temporal_loss(const FlowField& flow_recon, const FlowField& flow_orig) {
  flow_recon.validate();
  flow_orig.validate();
  require_same_shape(flow_recon.values, flow_orig.values, "temporal_loss");
  return (flow_recon.values.array() - flow_orig.values.array()).abs().mean();
}

ad::Var temporal_loss(ad::Var flow_recon, ad::Var flow_orig) {
  if (flow_recon.shape().c != 2 || !(flow_recon.shape() == flow_orig.shape()))
    throw ShapeError("temporal_loss: flows must share a [N,2,H,W] shape");
  return ad::mean(ad::abs(flow_recon - flow_orig));
}

}  // namespace dfvae
