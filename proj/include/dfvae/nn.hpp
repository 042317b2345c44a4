#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dfvae/autodiff.hpp"

namespace dfvae::nn {

struct ParamSlot {
  std::string name;
  Eigen::Index offset = 0;
  ad::Shape shape;
};

/// All trainable parameters of a network as one flat vector, with named slots.
class ParameterStore {
 public:
  int add(std::string name, ad::Shape shape, const Eigen::VectorXd& init);

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& grads() { return grads_; }
  const Eigen::VectorXd& grads() const { return grads_; }
  const std::vector<ParamSlot>& slots() const { return slots_; }
  Eigen::Index size() const { return values_.size(); }

  void zero_grad() { grads_.setZero(); }
  Eigen::Map<const Eigen::VectorXd> slice(int slot) const;

 private:
  Eigen::VectorXd values_;
  Eigen::VectorXd grads_;
  std::vector<ParamSlot> slots_;
};

/// Binds a store's slots onto one graph, once each; gradients flow back into
/// the store's gradient vector when the graph runs backward.
class Binding {
 public:
  Binding(ad::Graph& graph, ParameterStore& store, bool trainable = true)
      : graph_(&graph), store_(&store), trainable_(trainable), bound_(store.slots().size()) {}

  ad::Var operator[](int slot);
  ad::Graph& graph() const { return *graph_; }

 private:
  ad::Graph* graph_;
  ParameterStore* store_;
  bool trainable_;
  std::vector<ad::Var> bound_;
};

/// He-uniform initializer, deterministic per generator state.
Eigen::VectorXd he_uniform(Eigen::Index count, Eigen::Index fan_in, std::mt19937_64& rng);

struct Conv2d {
  int weight = -1;
  int bias = -1;
  int in = 0, out = 0, kernel = 3, stride = 1, pad = 1;

  static Conv2d create(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride,
                       int pad, std::mt19937_64& rng);
  ad::Var operator()(Binding& params, ad::Var x) const;
};

struct Linear {
  int weight = -1;
  int bias = -1;
  int in = 0, out = 0;

  static Linear create(ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng);
  ad::Var operator()(Binding& params, ad::Var x) const;
};

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction over a flat parameter vector.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}
  void step(Eigen::VectorXd& values, const Eigen::VectorXd& grads);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace dfvae::nn
