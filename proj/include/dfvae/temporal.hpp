#pragma once

#include "dfvae/autodiff.hpp"
#include "dfvae/media.hpp"

namespace dfvae {

/// Per-pixel displacement (u, v). A flow from (a, b) satisfies a(p) ≈ b(p + d).
struct FlowField {
  PlanarD values;  // 2×H×W

  int height() const { return values.height(); }
  int width() const { return values.width(); }
  void validate() const;
};

/// Flow plug-in, called as (frame_t, frame_{t−1}). Must be deterministic.
class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;
  virtual FlowField estimate(const FaceFrame& current, const FaceFrame& previous) const = 0;

  /// Graph form over [N,3,H,W] batches, returning [N,2,H,W]. Estimators
  /// that are not differentiable record their output as a constant.
  virtual ad::Var estimate(ad::Var current, ad::Var previous) const;
  virtual bool differentiable() const { return false; }
};

/// Exhaustive integer block matcher. Out-of-frame samples clamp to the border.
class BlockMatchFlow final : public FlowEstimator {
 public:
  explicit BlockMatchFlow(int block = 8, int radius = 4) : block_(block), radius_(radius) {}
  using FlowEstimator::estimate;
  FlowField estimate(const FaceFrame& current, const FaceFrame& previous) const override;

 private:
  int block_;
  int radius_;
};

/// Softmax-weighted block matcher used while training; the expected
/// displacement under exp(−cost / temperature).
class SoftBlockFlow final : public FlowEstimator {
 public:
  explicit SoftBlockFlow(int block = 8, int radius = 4, double temperature = 0.02)
      : block_(block), radius_(radius), temperature_(temperature) {}
  FlowField estimate(const FaceFrame& current, const FaceFrame& previous) const override;
  ad::Var estimate(ad::Var current, ad::Var previous) const override;
  bool differentiable() const override { return true; }

  int block() const { return block_; }
  int radius() const { return radius_; }

 private:
  int block_;
  int radius_;
  double temperature_;
};

/// Per-block integer displacement minimizing the sum of absolute
/// differences; ties go to the smaller |d|², then to lexicographic (du, dv).
FlowField block_match_flow(const FaceFrame& a, const FaceFrame& b, int block, int radius);

/// (1/CHW)‖flow_recon − flow_orig‖₁, C = 2.
double temporal_loss(const FlowField& flow_recon, const FlowField& flow_orig);
ad::Var temporal_loss(ad::Var flow_recon, ad::Var flow_orig);

}  // namespace dfvae
