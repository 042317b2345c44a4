#include "dfvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "dfvae/error.hpp"

namespace dfvae::ad {

using Eigen::ArrayXd;
using Eigen::Index;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string Shape::str() const {
  return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
}

const Shape& Var::shape() const { return graph_->shape(id_); }
const ArrayXd& Var::value() const { return graph_->value(id_); }
const ArrayXd& Var::grad() const { return graph_->grad_view(id_); }
double Var::scalar() const {
  if (value().size() != 1) throw ShapeError("scalar() on non-scalar node " + shape().str());
  return value()(0);
}

Var Graph::constant(ArrayXd value, Shape shape) {
  if (value.size() != shape.size()) throw ShapeError("constant: value size does not match " + shape.str());
  Node node;
  node.shape = shape;
  node.value = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(ArrayXd value, Shape shape, Sink sink) {
  if (value.size() != shape.size()) throw ShapeError("leaf: value size does not match " + shape.str());
  Node node;
  node.shape = shape;
  node.value = std::move(value);
  node.requires_grad = true;
  node.sink = std::move(sink);
  node.op = "leaf";
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::make(Shape shape, ArrayXd value, std::vector<int> parents, Backward backward) {
  Node node;
  node.shape = shape;
  node.value = std::move(value);
  for (int p : parents) node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  node.parents = std::move(parents);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

ArrayXd& Graph::grad(int id) {
  auto& node = nodes_[id];
  if (node.grad.size() != node.value.size()) node.grad = ArrayXd::Zero(node.value.size());
  return node.grad;
}

const ArrayXd& Graph::grad_view(int id) const {
  const auto& node = nodes_[id];
  return node.grad.size() == node.value.size() ? node.grad : empty_;
}

void Graph::tag(Var v, std::string name) { nodes_[v.id()].op = std::move(name); }

std::vector<std::string> Graph::op_names() const {
  std::vector<std::string> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.op);
  return out;
}

void Graph::backward(Var root) {
  if (root.graph() != this) throw Error("backward: root belongs to another graph");
  if (nodes_[root.id()].value.size() != 1) throw ShapeError("backward: root must be scalar");
  for (auto& n : nodes_) n.grad.resize(0);
  grad(root.id()).setConstant(1.0);
  for (int id = root.id(); id >= 0; --id) {
    auto& node = nodes_[id];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, id);
  }
  for (int id = 0; id <= root.id(); ++id) {
    auto& node = nodes_[id];
    if (node.sink && node.grad.size() == node.value.size()) node.sink(node.grad);
  }
}

namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.graph();
}

Graph& graph_of(Var a, Var b) {
  if (a.graph() != b.graph()) throw Error("operands live on different graphs");
  return graph_of(a);
}

void require_equal(Var a, Var b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

Var tagged(Var v, const char* op) {
  v.graph()->tag(v, op);
  return v;
}

// Unary elementwise op given f(x) and f'(x, f(x)).
template <typename F, typename DF>
Var unary(Var a, const char* op, F f, DF df) {
  Graph& g = graph_of(a);
  ArrayXd out = f(a.value());
  const int ia = a.id();
  return tagged(g.make(a.shape(), std::move(out), {ia},
                       [ia, df](Graph& g, int self) {
                         if (!g.requires_grad(ia)) return;
                         g.grad(ia) += g.grad(self) * df(g.value(ia), g.value(self));
                       }),
                op);
}

}  // namespace

Var operator+(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_equal(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return tagged(g.make(a.shape(), a.value() + b.value(), {ia, ib},
                       [ia, ib](Graph& g, int self) {
                         if (g.requires_grad(ia)) g.grad(ia) += g.grad(self);
                         if (g.requires_grad(ib)) g.grad(ib) += g.grad(self);
                       }),
                "add");
}

Var operator-(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_equal(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return tagged(g.make(a.shape(), a.value() - b.value(), {ia, ib},
                       [ia, ib](Graph& g, int self) {
                         if (g.requires_grad(ia)) g.grad(ia) += g.grad(self);
                         if (g.requires_grad(ib)) g.grad(ib) -= g.grad(self);
                       }),
                "sub");
}

Var operator*(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_equal(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return tagged(g.make(a.shape(), a.value() * b.value(), {ia, ib},
                       [ia, ib](Graph& g, int self) {
                         if (g.requires_grad(ia)) g.grad(ia) += g.grad(self) * g.value(ib);
                         if (g.requires_grad(ib)) g.grad(ib) += g.grad(self) * g.value(ia);
                       }),
                "mul");
}

Var operator-(Var a) { return -1.0 * a; }

Var operator*(double s, Var a) {
  return unary(
      a, "scale", [s](const ArrayXd& x) -> ArrayXd { return x * s; },
      [s](const ArrayXd& x, const ArrayXd&) -> ArrayXd { return ArrayXd::Constant(x.size(), s); });
}
Var operator*(Var a, double s) { return s * a; }

Var operator+(Var a, double s) {
  return unary(
      a, "add_scalar", [s](const ArrayXd& x) -> ArrayXd { return x + s; },
      [](const ArrayXd& x, const ArrayXd&) -> ArrayXd { return ArrayXd::Ones(x.size()); });
}
Var operator-(Var a, double s) { return a + (-s); }
Var operator+(double s, Var a) { return a + s; }
Var operator-(double s, Var a) { return (-1.0 * a) + s; }

Var exp(Var a) {
  return unary(
      a, "exp", [](const ArrayXd& x) -> ArrayXd { return x.exp(); },
      [](const ArrayXd&, const ArrayXd& y) -> ArrayXd { return y; });
}

Var log(Var a) {
  return unary(
      a, "log", [](const ArrayXd& x) -> ArrayXd { return x.log(); },
      [](const ArrayXd& x, const ArrayXd&) -> ArrayXd { return x.inverse(); });
}

Var square(Var a) {
  return unary(
      a, "square", [](const ArrayXd& x) -> ArrayXd { return x.square(); },
      [](const ArrayXd& x, const ArrayXd&) -> ArrayXd { return 2.0 * x; });
}

Var sqrt(Var a) {
  // Subgradient 0 at the origin keeps norms of vanishing vectors finite.
  return unary(
      a, "sqrt", [](const ArrayXd& x) -> ArrayXd { return x.sqrt(); },
      [](const ArrayXd&, const ArrayXd& y) -> ArrayXd { return (y > 0.0).select(0.5 / y, 0.0); });
}

Var abs(Var a) {
  return unary(
      a, "abs", [](const ArrayXd& x) -> ArrayXd { return x.abs(); },
      [](const ArrayXd& x, const ArrayXd&) -> ArrayXd {
        return (x > 0.0).select(ArrayXd::Ones(x.size()), (x < 0.0).select(-ArrayXd::Ones(x.size()), 0.0));
      });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid", [](const ArrayXd& x) -> ArrayXd { return 1.0 / (1.0 + (-x).exp()); },
      [](const ArrayXd&, const ArrayXd& y) -> ArrayXd { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](const ArrayXd& x) -> ArrayXd { return x.tanh(); },
      [](const ArrayXd&, const ArrayXd& y) -> ArrayXd { return 1.0 - y.square(); });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var leaky_relu(Var a, double slope) {
  return unary(
      a, "leaky_relu", [slope](const ArrayXd& x) -> ArrayXd { return (x > 0.0).select(x, slope * x); },
      [slope](const ArrayXd& x, const ArrayXd&) -> ArrayXd {
        return (x > 0.0).select(ArrayXd::Ones(x.size()), ArrayXd::Constant(x.size(), slope));
      });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  const int ia = a.id();
  ArrayXd out = ArrayXd::Constant(1, a.value().sum());
  return tagged(g.make(Shape{}, std::move(out), {ia},
                       [ia](Graph& g, int self) {
                         if (g.requires_grad(ia)) g.grad(ia) += g.grad(self)(0);
                       }),
                "sum");
}

Var mean(Var a) { return (1.0 / static_cast<double>(a.shape().size())) * sum(a); }

Var sum_per_sample(Var a) {
  Graph& g = graph_of(a);
  const Shape s = a.shape();
  const Index d = s.per_sample();
  ArrayXd out(s.n);
  for (int n = 0; n < s.n; ++n) out(n) = a.value().segment(n * d, d).sum();
  const int ia = a.id();
  return tagged(g.make(Shape{s.n, 1, 1, 1}, std::move(out), {ia},
                       [ia, s, d](Graph& g, int self) {
                         if (!g.requires_grad(ia)) return;
                         auto& ga = g.grad(ia);
                         const auto& gs = g.grad(self);
                         for (int n = 0; n < s.n; ++n) ga.segment(n * d, d) += gs(n);
                       }),
                "sum_per_sample");
}

Var mul_channels(Var x, Var m) {
  Graph& g = graph_of(x, m);
  const Shape sx = x.shape(), sm = m.shape();
  if (sm.n != sx.n || sm.c != 1 || sm.h != sx.h || sm.w != sx.w)
    throw ShapeError("mul_channels: mask " + sm.str() + " incompatible with " + sx.str());
  const Index p = sx.plane();
  ArrayXd out(sx.size());
  for (int n = 0; n < sx.n; ++n)
    for (int c = 0; c < sx.c; ++c)
      out.segment((n * sx.c + c) * p, p) = x.value().segment((n * sx.c + c) * p, p) * m.value().segment(n * p, p);
  const int ix = x.id(), im = m.id();
  return tagged(g.make(sx, std::move(out), {ix, im},
                       [ix, im, sx, p](Graph& g, int self) {
                         const auto& gs = g.grad(self);
                         for (int n = 0; n < sx.n; ++n)
                           for (int c = 0; c < sx.c; ++c) {
                             const Index off = (n * sx.c + c) * p;
                             if (g.requires_grad(ix))
                               g.grad(ix).segment(off, p) += gs.segment(off, p) * g.value(im).segment(n * p, p);
                             if (g.requires_grad(im))
                               g.grad(im).segment(n * p, p) += gs.segment(off, p) * g.value(ix).segment(off, p);
                           }
                       }),
                "mul_channels");
}

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a);
  if (shape.size() != a.shape().size())
    throw ShapeError("reshape: " + a.shape().str() + " -> " + shape.str() + " changes size");
  const int ia = a.id();
  return tagged(g.make(shape, a.value(), {ia},
                       [ia](Graph& g, int self) {
                         if (g.requires_grad(ia)) g.grad(ia) += g.grad(self);
                       }),
                "reshape");
}

Var concat_channels(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  const Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
  const Index da = sa.per_sample(), db = sb.per_sample(), dout = so.per_sample();
  ArrayXd out(so.size());
  for (int n = 0; n < sa.n; ++n) {
    out.segment(n * dout, da) = a.value().segment(n * da, da);
    out.segment(n * dout + da, db) = b.value().segment(n * db, db);
  }
  const int ia = a.id(), ib = b.id();
  return tagged(g.make(so, std::move(out), {ia, ib},
                       [ia, ib, sa, da, db, dout](Graph& g, int self) {
                         const auto& gs = g.grad(self);
                         for (int n = 0; n < sa.n; ++n) {
                           if (g.requires_grad(ia)) g.grad(ia).segment(n * da, da) += gs.segment(n * dout, da);
                           if (g.requires_grad(ib)) g.grad(ib).segment(n * db, db) += gs.segment(n * dout + da, db);
                         }
                       }),
                "concat_channels");
}

Var slice_channels(Var a, int begin, int count) {
  Graph& g = graph_of(a);
  const Shape sa = a.shape();
  if (begin < 0 || count <= 0 || begin + count > sa.c)
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                     sa.str());
  const Shape so{sa.n, count, sa.h, sa.w};
  const Index p = sa.plane(), din = sa.per_sample(), dout = so.per_sample();
  ArrayXd out(so.size());
  for (int n = 0; n < sa.n; ++n) out.segment(n * dout, dout) = a.value().segment(n * din + begin * p, dout);
  const int ia = a.id();
  return tagged(g.make(so, std::move(out), {ia},
                       [ia, sa, begin, p, din, dout](Graph& g, int self) {
                         if (!g.requires_grad(ia)) return;
                         for (int n = 0; n < sa.n; ++n)
                           g.grad(ia).segment(n * din + begin * p, dout) += g.grad(self).segment(n * dout, dout);
                       }),
                "slice_channels");
}

Var linear(Var x, Var weight, Var bias) {
  Graph& g = graph_of(x, weight);
  const Shape sx = x.shape(), sw = weight.shape();
  const Index d = sx.per_sample();
  const int out_dim = sw.n;
  if (sw.per_sample() != d || bias.shape().size() != out_dim)
    throw ShapeError("linear: input " + sx.str() + " weight " + sw.str() + " bias " + bias.shape().str());
  Eigen::Map<const RowMat> X(x.value().data(), sx.n, d);
  Eigen::Map<const RowMat> W(weight.value().data(), out_dim, d);
  RowMat Y = X * W.transpose();
  Y.rowwise() += bias.value().matrix().transpose();
  ArrayXd out = Eigen::Map<ArrayXd>(Y.data(), Y.size());
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  return tagged(g.make(Shape{sx.n, out_dim, 1, 1}, std::move(out), {ix, iw, ib},
                       [ix, iw, ib, sx, d, out_dim](Graph& g, int self) {
                         Eigen::Map<const RowMat> dY(g.grad(self).data(), sx.n, out_dim);
                         Eigen::Map<const RowMat> X(g.value(ix).data(), sx.n, d);
                         Eigen::Map<const RowMat> W(g.value(iw).data(), out_dim, d);
                         if (g.requires_grad(ix)) {
                           Eigen::Map<RowMat> dX(g.grad(ix).data(), sx.n, d);
                           dX.noalias() += dY * W;
                         }
                         if (g.requires_grad(iw)) {
                           Eigen::Map<RowMat> dW(g.grad(iw).data(), out_dim, d);
                           dW.noalias() += dY.transpose() * X;
                         }
                         if (g.requires_grad(ib)) g.grad(ib) += dY.colwise().sum().transpose().array();
                       }),
                "linear");
}

namespace {

struct ConvGeom {
  int cin, h, w, k, stride, pad, ho, wo;
};

// Patch matrix, row-major: rows (c, ky, kx), columns output positions.
void im2col(const double* x, const ConvGeom& gm, RowMat& col) {
  const Index rows = static_cast<Index>(gm.cin) * gm.k * gm.k;
  const Index pout = static_cast<Index>(gm.ho) * gm.wo;
  col.resize(rows, pout);
  Index r = 0;
  for (int c = 0; c < gm.cin; ++c)
    for (int ky = 0; ky < gm.k; ++ky)
      for (int kx = 0; kx < gm.k; ++kx, ++r) {
        double* dst = col.data() + r * pout;
        const double* plane = x + static_cast<Index>(c) * gm.h * gm.w;
        for (int oy = 0; oy < gm.ho; ++oy, dst += gm.wo) {
          const int iy = oy * gm.stride - gm.pad + ky;
          if (iy < 0 || iy >= gm.h) {
            std::fill(dst, dst + gm.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<Index>(iy) * gm.w;
          for (int ox = 0; ox < gm.wo; ++ox) {
            const int ix = ox * gm.stride - gm.pad + kx;
            dst[ox] = (ix >= 0 && ix < gm.w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im_add(const RowMat& col, const ConvGeom& gm, double* dx) {
  const Index pout = static_cast<Index>(gm.ho) * gm.wo;
  Index r = 0;
  for (int c = 0; c < gm.cin; ++c)
    for (int ky = 0; ky < gm.k; ++ky)
      for (int kx = 0; kx < gm.k; ++kx, ++r) {
        const double* src = col.data() + r * pout;
        double* plane = dx + static_cast<Index>(c) * gm.h * gm.w;
        for (int oy = 0; oy < gm.ho; ++oy, src += gm.wo) {
          const int iy = oy * gm.stride - gm.pad + ky;
          if (iy < 0 || iy >= gm.h) continue;
          double* dst = plane + static_cast<Index>(iy) * gm.w;
          for (int ox = 0; ox < gm.wo; ++ox) {
            const int ix = ox * gm.stride - gm.pad + kx;
            if (ix >= 0 && ix < gm.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, int stride, int pad) {
  Graph& g = graph_of(x, weight);
  const Shape sx = x.shape(), sw = weight.shape();
  if (sw.c != sx.c || sw.h != sw.w || bias.shape().size() != sw.n || stride < 1 || pad < 0)
    throw ShapeError("conv2d: input " + sx.str() + " weight " + sw.str());
  ConvGeom gm{sx.c, sx.h, sx.w, sw.h, stride, pad, 0, 0};
  gm.ho = (sx.h + 2 * pad - gm.k) / stride + 1;
  gm.wo = (sx.w + 2 * pad - gm.k) / stride + 1;
  if (gm.ho <= 0 || gm.wo <= 0) throw ShapeError("conv2d: kernel larger than padded input " + sx.str());
  const int cout = sw.n;
  const Index kk = static_cast<Index>(sx.c) * gm.k * gm.k;
  const Index pout = static_cast<Index>(gm.ho) * gm.wo;
  Eigen::Map<const RowMat> W(weight.value().data(), cout, kk);
  ArrayXd out(static_cast<Index>(sx.n) * cout * pout);
  auto cols = std::make_shared<std::vector<RowMat>>(sx.n);
  for (int n = 0; n < sx.n; ++n) {
    im2col(x.value().data() + n * sx.per_sample(), gm, (*cols)[n]);
    Eigen::Map<RowMat> Y(out.data() + n * cout * pout, cout, pout);
    Y.noalias() = W * (*cols)[n];
    Y.colwise() += bias.value().matrix();
  }
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  return tagged(g.make(Shape{sx.n, cout, gm.ho, gm.wo}, std::move(out), {ix, iw, ib},
                       [ix, iw, ib, sx, gm, cout, kk, pout, cols](Graph& g, int self) {
                         Eigen::Map<const RowMat> W(g.value(iw).data(), cout, kk);
                         RowMat dcol;
                         for (int n = 0; n < sx.n; ++n) {
                           Eigen::Map<const RowMat> dY(g.grad(self).data() + n * cout * pout, cout, pout);
                           if (g.requires_grad(iw)) {
                             Eigen::Map<RowMat> dW(g.grad(iw).data(), cout, kk);
                             dW.noalias() += dY * (*cols)[n].transpose();
                           }
                           if (g.requires_grad(ib)) g.grad(ib) += dY.rowwise().sum().array();
                           if (g.requires_grad(ix)) {
                             dcol.noalias() = W.transpose() * dY;
                             col2im_add(dcol, gm, g.grad(ix).data() + n * sx.per_sample());
                           }
                         }
                       }),
                "conv2d");
}

Var upsample_nearest2x(Var x) {
  Graph& g = graph_of(x);
  const Shape s = x.shape();
  const Shape so{s.n, s.c, s.h * 2, s.w * 2};
  ArrayXd out(so.size());
  const auto& v = x.value();
  for (Index plane = 0; plane < static_cast<Index>(s.n) * s.c; ++plane)
    for (int y = 0; y < so.h; ++y)
      for (int xx = 0; xx < so.w; ++xx)
        out(plane * so.plane() + static_cast<Index>(y) * so.w + xx) =
            v(plane * s.plane() + static_cast<Index>(y / 2) * s.w + xx / 2);
  const int ix = x.id();
  return tagged(g.make(so, std::move(out), {ix},
                       [ix, s, so](Graph& g, int self) {
                         if (!g.requires_grad(ix)) return;
                         auto& gx = g.grad(ix);
                         const auto& gs = g.grad(self);
                         for (Index plane = 0; plane < static_cast<Index>(s.n) * s.c; ++plane)
                           for (int y = 0; y < so.h; ++y)
                             for (int xx = 0; xx < so.w; ++xx)
                               gx(plane * s.plane() + static_cast<Index>(y / 2) * s.w + xx / 2) +=
                                   gs(plane * so.plane() + static_cast<Index>(y) * so.w + xx);
                       }),
                "upsample_nearest2x");
}

Var avg_pool2(Var x) {
  Graph& g = graph_of(x);
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ShapeError("avg_pool2: odd spatial size " + s.str());
  const Shape so{s.n, s.c, s.h / 2, s.w / 2};
  ArrayXd out = ArrayXd::Zero(so.size());
  const auto& v = x.value();
  for (Index plane = 0; plane < static_cast<Index>(s.n) * s.c; ++plane)
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx)
        out(plane * so.plane() + static_cast<Index>(y / 2) * so.w + xx / 2) +=
            0.25 * v(plane * s.plane() + static_cast<Index>(y) * s.w + xx);
  const int ix = x.id();
  return tagged(g.make(so, std::move(out), {ix},
                       [ix, s, so](Graph& g, int self) {
                         if (!g.requires_grad(ix)) return;
                         auto& gx = g.grad(ix);
                         const auto& gs = g.grad(self);
                         for (Index plane = 0; plane < static_cast<Index>(s.n) * s.c; ++plane)
                           for (int y = 0; y < s.h; ++y)
                             for (int xx = 0; xx < s.w; ++xx)
                               gx(plane * s.plane() + static_cast<Index>(y) * s.w + xx) +=
                                   0.25 * gs(plane * so.plane() + static_cast<Index>(y / 2) * so.w + xx / 2);
                       }),
                "avg_pool2");
}

Var channel_mean(Var x) {
  Graph& g = graph_of(x);
  const Shape s = x.shape();
  const Index p = s.plane();
  const Index planes = static_cast<Index>(s.n) * s.c;
  ArrayXd out(planes);
  for (Index i = 0; i < planes; ++i) out(i) = x.value().segment(i * p, p).mean();
  const int ix = x.id();
  return tagged(g.make(Shape{s.n, s.c, 1, 1}, std::move(out), {ix},
                       [ix, p, planes](Graph& g, int self) {
                         if (!g.requires_grad(ix)) return;
                         for (Index i = 0; i < planes; ++i)
                           g.grad(ix).segment(i * p, p) += g.grad(self)(i) / static_cast<double>(p);
                       }),
                "channel_mean");
}

Var channel_std(Var x, double eps) {
  Graph& g = graph_of(x);
  const Shape s = x.shape();
  const Index p = s.plane();
  const Index planes = static_cast<Index>(s.n) * s.c;
  ArrayXd out(planes);
  ArrayXd means(planes);
  for (Index i = 0; i < planes; ++i) {
    const auto seg = x.value().segment(i * p, p);
    means(i) = seg.mean();
    out(i) = std::sqrt((seg - means(i)).square().mean() + eps);
  }
  const int ix = x.id();
  return tagged(g.make(Shape{s.n, s.c, 1, 1}, std::move(out), {ix},
                       [ix, p, planes, means](Graph& g, int self) {
                         if (!g.requires_grad(ix)) return;
                         for (Index i = 0; i < planes; ++i) {
                           const double sd = g.value(self)(i);
                           if (sd <= 0.0) continue;
                           g.grad(ix).segment(i * p, p) +=
                               g.grad(self)(i) * (g.value(ix).segment(i * p, p) - means(i)) / (static_cast<double>(p) * sd);
                         }
                       }),
                "channel_std");
}

namespace {

// Valid-window box sums of an h×w plane via a summed-area table.
void box_valid(const double* src, int h, int w, int k, double* dst) {
  std::vector<double> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      sat[(y + 1) * (w + 1) + x + 1] =
          src[y * w + x] + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
  const int hp = h - k + 1, wp = w - k + 1;
  for (int y = 0; y < hp; ++y)
    for (int x = 0; x < wp; ++x)
      dst[y * wp + x] = sat[(y + k) * (w + 1) + x + k] - sat[y * (w + 1) + x + k] - sat[(y + k) * (w + 1) + x] +
                        sat[y * (w + 1) + x];
}

// Adjoint of box_valid: every pixel collects the values of the windows covering it.
void box_scatter(const double* g, int h, int w, int k, double* dst) {
  const int hp = h - k + 1, wp = w - k + 1;
  std::vector<double> sat(static_cast<std::size_t>(hp + 1) * (wp + 1), 0.0);
  for (int y = 0; y < hp; ++y)
    for (int x = 0; x < wp; ++x)
      sat[(y + 1) * (wp + 1) + x + 1] =
          g[y * wp + x] + sat[y * (wp + 1) + x + 1] + sat[(y + 1) * (wp + 1) + x] - sat[y * (wp + 1) + x];
  auto rect = [&](int y0, int x0, int y1, int x1) {  // inclusive-exclusive in window-position space
    y0 = std::max(y0, 0);
    x0 = std::max(x0, 0);
    y1 = std::min(y1, hp);
    x1 = std::min(x1, wp);
    if (y0 >= y1 || x0 >= x1) return 0.0;
    return sat[y1 * (wp + 1) + x1] - sat[y0 * (wp + 1) + x1] - sat[y1 * (wp + 1) + x0] + sat[y0 * (wp + 1) + x0];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) dst[y * w + x] = rect(y - k + 1, x - k + 1, y + 1, x + 1);
}

}  // namespace

Var ssim_mean(Var a, Var b, int window, double c1, double c2) {
  Graph& g = graph_of(a, b);
  require_equal(a, b, "ssim");
  const Shape s = a.shape();
  if (window < 1 || window > s.h || window > s.w)
    throw ShapeError("ssim: window " + std::to_string(window) + " exceeds " + s.str());
  const int hp = s.h - window + 1, wp = s.w - window + 1;
  const Index p = s.plane(), q = static_cast<Index>(hp) * wp;
  const Index planes = static_cast<Index>(s.n) * s.c;
  const double inv_n = 1.0 / (static_cast<double>(window) * window);
  const double count = static_cast<double>(planes * q);

  // Per-window partials of SSIM w.r.t. the five window moments, kept for backward.
  auto partials = std::make_shared<std::vector<ArrayXd>>(5 * planes);
  double total = 0.0;
  ArrayXd ma(q), mb(q), maa(q), mbb(q), mab(q), tmp(p);
  for (Index i = 0; i < planes; ++i) {
    const auto va = a.value().segment(i * p, p);
    const auto vb = b.value().segment(i * p, p);
    box_valid(va.data(), s.h, s.w, window, ma.data());
    box_valid(vb.data(), s.h, s.w, window, mb.data());
    tmp = va.square();
    box_valid(tmp.data(), s.h, s.w, window, maa.data());
    tmp = vb.square();
    box_valid(tmp.data(), s.h, s.w, window, mbb.data());
    tmp = va * vb;
    box_valid(tmp.data(), s.h, s.w, window, mab.data());
    ma *= inv_n;
    mb *= inv_n;
    maa *= inv_n;
    mbb *= inv_n;
    mab *= inv_n;
    const ArrayXd A1 = 2.0 * ma * mb + c1;
    const ArrayXd A2 = 2.0 * (mab - ma * mb) + c2;
    const ArrayXd B1 = ma.square() + mb.square() + c1;
    const ArrayXd B2 = (maa - ma.square()) + (mbb - mb.square()) + c2;
    const ArrayXd S = (A1 * A2) / (B1 * B2);
    total += S.sum();
    (*partials)[5 * i + 0] = S * (2.0 * mb / A1 - 2.0 * mb / A2 - 2.0 * ma / B1 + 2.0 * ma / B2);  // d/d ma
    (*partials)[5 * i + 1] = S * (2.0 * ma / A1 - 2.0 * ma / A2 - 2.0 * mb / B1 + 2.0 * mb / B2);  // d/d mb
    (*partials)[5 * i + 2] = -S / B2;                                                              // d/d maa
    (*partials)[5 * i + 3] = -S / B2;                                                              // d/d mbb
    (*partials)[5 * i + 4] = 2.0 * S / A2;                                                         // d/d mab
  }
  const int ia = a.id(), ib = b.id();
  return tagged(
      g.make(Shape{}, ArrayXd::Constant(1, total / count), {ia, ib},
             [ia, ib, s, window, hp, wp, p, q, planes, inv_n, count, partials](Graph& g, int self) {
               const double scale = g.grad(self)(0) * inv_n / count;
               ArrayXd sa(p), sb(p), saa(p), sbb(p), sab(p), gw(q);
               auto scatter = [&](int k, Index i, ArrayXd& dst) {
                 gw = (*partials)[5 * i + k];
                 box_scatter(gw.data(), s.h, s.w, window, dst.data());
               };
               for (Index i = 0; i < planes; ++i) {
                 const auto va = g.value(ia).segment(i * p, p);
                 const auto vb = g.value(ib).segment(i * p, p);
                 scatter(0, i, sa);
                 scatter(1, i, sb);
                 scatter(2, i, saa);
                 scatter(3, i, sbb);
                 scatter(4, i, sab);
                 if (g.requires_grad(ia)) g.grad(ia).segment(i * p, p) += scale * (sa + 2.0 * va * saa + vb * sab);
                 if (g.requires_grad(ib)) g.grad(ib).segment(i * p, p) += scale * (sb + 2.0 * vb * sbb + va * sab);
               }
               (void)hp;
               (void)wp;
             }),
      "ssim_mean");
}

Var masked_adain(Var content, Var style, Var mask, double eps) {
  Graph& g = graph_of(content, style);
  require_equal(content, style, "masked_adain");
  const Shape s = content.shape();
  const Shape sm = mask.shape();
  if (sm.n != s.n || sm.c != 1 || sm.h != s.h || sm.w != s.w)
    throw ShapeError("masked_adain: mask " + sm.str() + " incompatible with " + s.str());
  const Index p = s.plane();
  const Index planes = static_cast<Index>(s.n) * s.c;

  struct Stats {
    double weight, mu_c, sd_c, mu_s, sd_s, eps;
  };
  auto stats = std::make_shared<std::vector<Stats>>(planes);
  ArrayXd out = content.value();
  for (int n = 0; n < s.n; ++n) {
    const auto m = mask.value().segment(n * p, p);
    const double weight = m.sum();
    for (int c = 0; c < s.c; ++c) {
      const Index i = static_cast<Index>(n) * s.c + c;
      Stats st{weight, 0, 1, 0, 1, eps};
      if (weight > 0.0) {
        const auto vc = content.value().segment(i * p, p);
        const auto vs = style.value().segment(i * p, p);
        st.mu_c = (m * vc).sum() / weight;
        st.mu_s = (m * vs).sum() / weight;
        const double var_c = (m * (vc - st.mu_c).square()).sum() / weight;
        const double var_s = (m * (vs - st.mu_s).square()).sum() / weight;
        if (var_c + eps <= 0.0)
          throw DegenerateStyleError("masked_adain: content has zero std inside the mask (channel " +
                                     std::to_string(c) + ")");
        st.sd_c = std::sqrt(var_c + eps);
        st.sd_s = std::sqrt(var_s + eps);
        out.segment(i * p, p) = (m > 0.0).select(st.sd_s * (vc - st.mu_c) / st.sd_c + st.mu_s, vc);
      }
      (*stats)[i] = st;
    }
  }
  const int ic = content.id(), is = style.id(), im = mask.id();
  return tagged(g.make(s, std::move(out), {ic, is, im},
                       [ic, is, im, s, p, stats](Graph& g, int self) {
                         const auto& gs = g.grad(self);
                         for (int n = 0; n < s.n; ++n) {
                           const auto m = g.value(im).segment(n * p, p);
                           const ArrayXd support = (m > 0.0).cast<double>();
                           for (int c = 0; c < s.c; ++c) {
                             const Index i = static_cast<Index>(n) * s.c + c;
                             const Stats& st = (*stats)[i];
                             const ArrayXd go = gs.segment(i * p, p);
                             if (st.weight <= 0.0) {
                               if (g.requires_grad(ic)) g.grad(ic).segment(i * p, p) += go;
                               continue;
                             }
                             const ArrayXd xhat = (g.value(ic).segment(i * p, p) - st.mu_c) / st.sd_c;
                             const ArrayXd gin = go * support;
                             const double sum_g = gin.sum();
                             const double sum_gx = (gin * xhat).sum();
                             if (g.requires_grad(ic)) {
                               const ArrayXd h = gin * st.sd_s;
                               const double sum_h = sum_g * st.sd_s, sum_hx = sum_gx * st.sd_s;
                               g.grad(ic).segment(i * p, p) +=
                                   (h - m / st.weight * sum_h - m * xhat / st.weight * sum_hx) / st.sd_c +
                                   go * (1.0 - support);
                             }
                             const ArrayXd yhat = (g.value(is).segment(i * p, p) - st.mu_s) / st.sd_s;
                             if (g.requires_grad(is))
                               g.grad(is).segment(i * p, p) += m / st.weight * (sum_g + yhat * sum_gx);
                             if (g.requires_grad(im)) {
                               // Through the four weighted moments; the support indicator is piecewise constant.
                               // ∂μ/∂m_k = (v_k − μ)/W and ∂σ/∂m_k = ((v_k − μ)² − σ² + eps)/(2σW).
                               const double ratio = st.sd_s / st.sd_c;
                               const ArrayXd d_sd_s = ((yhat.square() - 1.0) * st.sd_s + st.eps / st.sd_s) / 2.0;
                               const ArrayXd d_sd_c = ((xhat.square() - 1.0) * st.sd_c + st.eps / st.sd_c) / 2.0;
                               g.grad(im).segment(n * p, p) +=
                                   (sum_g * (yhat * st.sd_s - ratio * xhat * st.sd_c) + sum_gx * (d_sd_s - ratio * d_sd_c)) /
                                   st.weight;
                             }
                           }
                         }
                       }),
                "masked_adain");
}

Var soft_block_flow(Var a, Var b, int block, int radius, double temperature) {
  Graph& g = graph_of(a, b);
  require_equal(a, b, "soft_block_flow");
  const Shape s = a.shape();
  if (block < 1 || s.h % block != 0 || s.w % block != 0)
    throw ShapeError("soft_block_flow: block " + std::to_string(block) + " does not divide " + s.str());
  if (radius < 0 || !(temperature > 0.0)) throw DomainError("soft_block_flow: radius < 0 or temperature <= 0");
  const int side = 2 * radius + 1, nd = side * side;
  const int by = s.h / block, bx = s.w / block;
  const Index p = s.plane();
  const double norm = 1.0 / (static_cast<double>(s.c) * block * block);
  // Softmax weights per (sample, block, displacement), kept for backward.
  auto weights = std::make_shared<ArrayXd>(static_cast<Index>(s.n) * by * bx * nd);
  ArrayXd out(static_cast<Index>(s.n) * 2 * p);
  std::vector<double> cost(nd);
  const auto& va = a.value();
  const auto& vb = b.value();
  for (int n = 0; n < s.n; ++n)
    for (int bj = 0; bj < by; ++bj)
      for (int bi = 0; bi < bx; ++bi) {
        for (int d = 0; d < nd; ++d) {
          const int du = d % side - radius, dv = d / side - radius;
          double acc = 0.0;
          const int x0 = bi * block, x1 = x0 + block;
          const bool inside_x = x0 + du >= 0 && x1 - 1 + du < s.w;
          for (int c = 0; c < s.c; ++c) {
            const double* pa = va.data() + (static_cast<Index>(n) * s.c + c) * p;
            const double* pb = vb.data() + (static_cast<Index>(n) * s.c + c) * p;
            for (int y = bj * block; y < (bj + 1) * block; ++y) {
              const double* ra = pa + static_cast<Index>(y) * s.w;
              const double* rb = pb + static_cast<Index>(std::clamp(y + dv, 0, s.h - 1)) * s.w;
              if (inside_x) {
                for (int x = x0; x < x1; ++x) acc += std::abs(ra[x] - rb[x + du]);
              } else {
                for (int x = x0; x < x1; ++x) acc += std::abs(ra[x] - rb[std::clamp(x + du, 0, s.w - 1)]);
              }
            }
          }
          cost[d] = acc * norm;
        }
        const double cmin = *std::min_element(cost.begin(), cost.end());
        double z = 0.0;
        const Index base = ((static_cast<Index>(n) * by + bj) * bx + bi) * nd;
        for (int d = 0; d < nd; ++d) z += ((*weights)(base + d) = std::exp(-(cost[d] - cmin) / temperature));
        double fu = 0.0, fv = 0.0;
        for (int d = 0; d < nd; ++d) {
          (*weights)(base + d) /= z;
          fu += (*weights)(base + d) * (d % side - radius);
          fv += (*weights)(base + d) * (d / side - radius);
        }
        for (int y = bj * block; y < (bj + 1) * block; ++y)
          for (int x = bi * block; x < (bi + 1) * block; ++x) {
            out((static_cast<Index>(n) * 2 + 0) * p + y * s.w + x) = fu;
            out((static_cast<Index>(n) * 2 + 1) * p + y * s.w + x) = fv;
          }
      }
  const int ia = a.id(), ib = b.id();
  return tagged(
      g.make(Shape{s.n, 2, s.h, s.w}, std::move(out), {ia, ib},
             [ia, ib, s, block, radius, temperature, side, nd, by, bx, p, norm, weights](Graph& g, int self) {
               const auto& gs = g.grad(self);
               const auto& flow = g.value(self);
               const auto& va = g.value(ia);
               const auto& vb = g.value(ib);
               const bool need_a = g.requires_grad(ia), need_b = g.requires_grad(ib);
               double* ga = need_a ? g.grad(ia).data() : nullptr;
               double* gb = need_b ? g.grad(ib).data() : nullptr;
               for (int n = 0; n < s.n; ++n)
                 for (int bj = 0; bj < by; ++bj)
                   for (int bi = 0; bi < bx; ++bi) {
                     double gu = 0.0, gv = 0.0;
                     for (int y = bj * block; y < (bj + 1) * block; ++y)
                       for (int x = bi * block; x < (bi + 1) * block; ++x) {
                         gu += gs((static_cast<Index>(n) * 2 + 0) * p + y * s.w + x);
                         gv += gs((static_cast<Index>(n) * 2 + 1) * p + y * s.w + x);
                       }
                     const Index corner = static_cast<Index>(bj) * block * s.w + bi * block;
                     const double fu = flow((static_cast<Index>(n) * 2 + 0) * p + corner);
                     const double fv = flow((static_cast<Index>(n) * 2 + 1) * p + corner);
                     const Index base = ((static_cast<Index>(n) * by + bj) * bx + bi) * nd;
                     for (int d = 0; d < nd; ++d) {
                       const int du = d % side - radius, dv = d / side - radius;
                       const double gcost =
                           -(*weights)(base + d) / temperature * (gu * (du - fu) + gv * (dv - fv)) * norm;
                       if (gcost == 0.0) continue;
                       for (int c = 0; c < s.c; ++c) {
                         const Index off = (static_cast<Index>(n) * s.c + c) * p;
                         for (int y = bj * block; y < (bj + 1) * block; ++y) {
                           const Index ra = off + static_cast<Index>(y) * s.w;
                           const Index rb = off + static_cast<Index>(std::clamp(y + dv, 0, s.h - 1)) * s.w;
                           for (int x = bi * block; x < (bi + 1) * block; ++x) {
                             const int xx = std::clamp(x + du, 0, s.w - 1);
                             const double diff = va(ra + x) - vb(rb + xx);
                             const double sg = gcost * ((diff > 0.0) - (diff < 0.0));
                             if (ga) ga[ra + x] += sg;
                             if (gb) gb[rb + xx] -= sg;
                           }
                         }
                       }
                     }
                   }
             }),
      "soft_block_flow");
}

}  // namespace dfvae::ad
