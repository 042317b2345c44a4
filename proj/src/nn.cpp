#include "dfvae/nn.hpp"

#include <cmath>

#include "dfvae/error.hpp"

namespace dfvae::nn {

int ParameterStore::add(std::string name, ad::Shape shape, const Eigen::VectorXd& init) {
  if (init.size() != shape.size()) throw ShapeError("parameter '" + name + "' init size mismatch");
  const Eigen::Index offset = values_.size();
  values_.conservativeResize(offset + init.size());
  values_.segment(offset, init.size()) = init;
  grads_ = Eigen::VectorXd::Zero(values_.size());
  slots_.push_back({std::move(name), offset, shape});
  return static_cast<int>(slots_.size()) - 1;
}

Eigen::Map<const Eigen::VectorXd> ParameterStore::slice(int slot) const {
  const auto& s = slots_.at(slot);
  return {values_.data() + s.offset, s.shape.size()};
}

ad::Var Binding::operator[](int slot) {
  auto& v = bound_.at(slot);
  if (!v.valid()) {
    const auto& s = store_->slots()[slot];
    Eigen::ArrayXd value = store_->slice(slot).array();
    if (trainable_) {
      ParameterStore* store = store_;
      const Eigen::Index offset = s.offset, size = s.shape.size();
      v = graph_->leaf(std::move(value), s.shape,
                       [store, offset, size](const Eigen::ArrayXd& g) { store->grads().segment(offset, size) += g.matrix(); });
    } else {
      v = graph_->constant(std::move(value), s.shape);
    }
  }
  return v;
}

Eigen::VectorXd he_uniform(Eigen::Index count, Eigen::Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::VectorXd out(count);
  for (Eigen::Index i = 0; i < count; ++i) out(i) = dist(rng);
  return out;
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, int in, int out, int kernel, int stride,
                      int pad, std::mt19937_64& rng) {
  Conv2d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  const ad::Shape ws{out, in, kernel, kernel};
  c.weight = store.add(name + ".weight", ws, he_uniform(ws.size(), static_cast<Eigen::Index>(in) * kernel * kernel, rng));
  c.bias = store.add(name + ".bias", ad::Shape{out, 1, 1, 1}, Eigen::VectorXd::Zero(out));
  return c;
}

ad::Var Conv2d::operator()(Binding& params, ad::Var x) const {
  return ad::conv2d(x, params[weight], params[bias], stride, pad);
}

Linear Linear::create(ParameterStore& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  const ad::Shape ws{out, in, 1, 1};
  l.weight = store.add(name + ".weight", ws, he_uniform(ws.size(), in, rng));
  l.bias = store.add(name + ".bias", ad::Shape{out, 1, 1, 1}, Eigen::VectorXd::Zero(out));
  return l;
}

ad::Var Linear::operator()(Binding& params, ad::Var x) const { return ad::linear(x, params[weight], params[bias]); }

void Adam::step(Eigen::VectorXd& values, const Eigen::VectorXd& grads) {
  if (m_.size() != values.size()) {
    m_ = Eigen::VectorXd::Zero(values.size());
    v_ = Eigen::VectorXd::Zero(values.size());
  }
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grads;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  values.array() -= config_.learning_rate * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + config_.epsilon);
}

}  // namespace dfvae::nn
