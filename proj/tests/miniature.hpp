#pragma once

// Sub-500-parameter model and data used to check the full objective's gradient.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "dfvae/synth.hpp"
#include "dfvae/trainer.hpp"

namespace dfvae::test {

/// Jaw ends and chin of the 68-point layout; enough for a triangular mask.
inline constexpr int kMiniLandmarks[] = {0, 8, 16};

inline TrainConfig miniature_config() {
  TrainConfig c;
  c.arch.image_size = 8;
  c.arch.heatmap_size = 8;
  c.arch.landmark_count = 3;
  c.arch.latent_dim = 1;
  c.arch.encoder_channels = {2};
  c.arch.decoder_channels = {2};
  c.arch.fusion_channels = 1;
  c.arch.init_seed = 5;
  c.extractor_channels = {2, 2, 2, 2};
  c.flow_block = 4;
  c.flow_radius = 1;
  c.flow_temperature = 0.05;
  return c;
}

inline std::vector<VideoClip> miniature_clips() {
  const auto ids = synth_identities(2, 3);
  SynthClipConfig cc;
  cc.frames = 3;
  cc.size = 8;
  std::vector<VideoClip> clips;
  for (int i = 0; i < 2; ++i) {
    auto clip = synth_clip(ids[i], ids[i].name + "_mini", cc, 40 + i, i);
    for (auto& f : clip.frames) {
      std::vector<Point2> sub;
      for (int k : kMiniLandmarks) sub.push_back((*f.landmarks)[k]);
      f.landmarks = sub;
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

inline TrainingBatch miniature_batch(const std::vector<VideoClip>& clips, const FaceSwapModel& model, int n = 2) {
  TrainingBatch b;
  for (auto& t : build_unpaired_batch(clips, clips[0].frames[0].identity, 1, n))
    b.source.push_back(make_training_sample(std::move(t), model));
  for (auto& t : build_unpaired_batch(clips, clips[1].frames[0].identity, 2, n))
    b.target.push_back(make_training_sample(std::move(t), model));
  return b;
}

struct ObjectiveGradCheck {
  double relative_error = 0.0;
  Eigen::Index parameters = 0;
};

/// Central differences of total_loss over every bundle and fusion parameter,
/// with the ε draws fixed per evaluation. Freshly initialized biases are zero,
/// which parks the activations of empty heatmap regions exactly on the
/// LeakyReLU kink, so every parameter is first jittered to a generic point.
inline ObjectiveGradCheck check_total_loss_gradient(FaceSwapModel& model, const TrainingBatch& batch,
                                                    double h = 1e-6) {
  std::mt19937_64 jitter_rng(91);
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (auto* store : {&model.bundle.parameters(), &model.fusion.parameters()})
    for (auto& v : store->values()) v += jitter(jitter_rng);
  const RandomConvExtractor extractor(model.config.extractor_channels, model.config.extractor_seed);
  const SoftBlockFlow flow(model.config.flow_block, model.config.flow_radius, model.config.flow_temperature);
  auto& pb = model.bundle.parameters();
  auto& pf = model.fusion.parameters();
  auto value = [&]() {
    ad::Graph g;
    nn::Binding bp(g, pb, false), fp(g, pf, false);
    std::mt19937_64 rng(77);
    return total_loss(g, bp, fp, batch, model, extractor, flow, rng).total.scalar();
  };
  pb.zero_grad();
  pf.zero_grad();
  {
    ad::Graph g;
    nn::Binding bp(g, pb), fp(g, pf);
    std::mt19937_64 rng(77);
    g.backward(total_loss(g, bp, fp, batch, model, extractor, flow, rng).total);
  }
  Eigen::VectorXd analytic(pb.size() + pf.size());
  analytic << pb.grads(), pf.grads();
  Eigen::VectorXd numeric(analytic.size());
  Eigen::Index k = 0;
  for (Eigen::VectorXd* values : {&pb.values(), &pf.values()})
    for (Eigen::Index i = 0; i < values->size(); ++i) {
      const double x0 = (*values)(i);
      (*values)(i) = x0 + h;
      const double up = value();
      (*values)(i) = x0 - h;
      const double down = value();
      (*values)(i) = x0;
      numeric(k++) = (up - down) / (2.0 * h);
    }
  const double scale = std::max({numeric.norm(), analytic.norm(), 1e-8});
  return {(numeric - analytic).norm() / scale, analytic.size()};
}

}  // namespace dfvae::test
