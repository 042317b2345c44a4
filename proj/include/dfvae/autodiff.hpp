#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace dfvae::ad {

/// NCHW extent. Vectors are [N, D, 1, 1]; scalars are [1, 1, 1, 1].
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  Eigen::Index size() const { return static_cast<Eigen::Index>(n) * c * h * w; }
  Eigen::Index per_sample() const { return static_cast<Eigen::Index>(c) * h * w; }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

class Graph;

/// Handle to a node on a Graph tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const;
  const Eigen::ArrayXd& value() const;
  const Eigen::ArrayXd& grad() const;
  double scalar() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in topological order, so a single
/// reverse sweep propagates adjoints. One Graph per forward evaluation.
class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;
  using Sink = std::function<void(const Eigen::ArrayXd&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Eigen::ArrayXd value, Shape shape);
  /// Differentiable input; its adjoint is readable through Var::grad() and,
  /// when a sink is given, is handed to the sink once backward finishes.
  Var leaf(Eigen::ArrayXd value, Shape shape, Sink sink = {});

  /// Runs the reverse sweep from a scalar root seeded with 1.
  void backward(Var root);

  // Op-author interface.
  Var make(Shape shape, Eigen::ArrayXd value, std::vector<int> parents, Backward backward);
  const Eigen::ArrayXd& value(int id) const { return nodes_[id].value; }
  const Shape& shape(int id) const { return nodes_[id].shape; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Adjoint buffer of node `id`, zero-initialized on first access.
  Eigen::ArrayXd& grad(int id);
  const Eigen::ArrayXd& grad_view(int id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Names of every op recorded on the tape, in order.
  std::vector<std::string> op_names() const;
  void tag(Var v, std::string name);

 private:
  struct Node {
    Shape shape;
    Eigen::ArrayXd value;
    Eigen::ArrayXd grad;
    std::vector<int> parents;
    Backward backward;
    Sink sink;
    bool requires_grad = false;
    std::string op;
  };
  std::vector<Node> nodes_;
  Eigen::ArrayXd empty_;
};

// Elementwise arithmetic (equal shapes).
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator*(Var a, double s);
Var operator+(Var a, double s);
Var operator-(Var a, double s);
Var operator+(double s, Var a);
Var operator-(double s, Var a);

Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);

/// Scalar sum/mean over every element.
Var sum(Var a);
Var mean(Var a);
/// [N, ...] -> [N, 1, 1, 1].
Var sum_per_sample(Var a);

/// x[N,C,H,W] * m[N,1,H,W] with m broadcast over channels.
Var mul_channels(Var x, Var m);

Var reshape(Var a, Shape shape);
/// Concatenate along the channel axis (n, h, w must agree).
Var concat_channels(Var a, Var b);
Var slice_channels(Var a, int begin, int count);

/// x[N,D,...] (flattened per sample) · Wᵀ + b, W stored [out, D].
Var linear(Var x, Var weight, Var bias);
/// Square-kernel 2D convolution, weight [Cout, Cin, k, k], bias [Cout].
Var conv2d(Var x, Var weight, Var bias, int stride, int pad);
Var upsample_nearest2x(Var x);
Var avg_pool2(Var x);

/// Per-(sample, channel) spatial mean / standard deviation -> [N, C, 1, 1].
Var channel_mean(Var x);
Var channel_std(Var x, double eps);

/// Mean local SSIM over all valid `window`×`window` uniform windows of every
/// (sample, channel) plane.
Var ssim_mean(Var a, Var b, int window, double c1, double c2);

/// Mask-weighted adaptive instance normalization of `content` toward the
/// mask-weighted channel statistics of `style`; pixels with zero mask weight
/// pass through. `mask` is [N,1,H,W].
Var masked_adain(Var content, Var style, Var mask, double eps);

/// Differentiable block matcher: per block, a softmax over negative mean
/// absolute matching costs at every integer displacement within `radius`,
/// returning the expected displacement. Output [N, 2, H, W] (u, v).
Var soft_block_flow(Var a, Var b, int block, int radius, double temperature);

}  // namespace dfvae::ad
