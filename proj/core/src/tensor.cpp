#include "hylite/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace hylite {

namespace {

constexpr double kGeluCoef = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / 3.14159265358979323846);

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2)
    fail(Err::ShapeMismatch, std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

Graph& common_graph(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph())
    throw std::logic_error(std::string(op) + ": operands belong to different graphs");
  return *a.graph();
}

/// Grad buffer of a node if it participates in backward, else nullptr.
double* grad_sink(Graph& g, std::size_t id);

void matmul_accum(const double* a, const double* b, double* c, std::size_t r, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// ---------------------------------------------------------------------------
// Tensor handle

const Shape& Tensor::shape() const { return graph_->node(id_).shape; }
std::size_t Tensor::numel() const { return graph_->node(id_).value.size(); }

std::size_t Tensor::rows() const {
  require_2d(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_2d(*this, "cols");
  return shape()[1];
}

bool Tensor::requires_grad() const { return graph_->node(id_).requires_grad; }

std::span<const double> Tensor::value() const {
  const auto& n = graph_->node(id_);
  return {n.value.data(), n.value.size()};
}

std::span<double> Tensor::value_mut() {
  auto& n = graph_->node(id_);
  return {n.value.data(), n.value.size()};
}

std::span<const double> Tensor::grad() const {
  const auto& n = graph_->node(id_);
  if (!n.requires_grad) throw std::logic_error("grad(): tensor does not require gradients");
  return {n.grad.data(), n.grad.size()};
}

double Tensor::item() const {
  if (numel() != 1) fail(Err::NotScalar, "item() on tensor of shape " + shape_str(shape()));
  return graph_->node(id_).value[0];
}

// ---------------------------------------------------------------------------
// Graph

Tensor Graph::leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    fail(Err::ShapeMismatch, "leaf data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
  for (std::size_t e : shape)
    if (e == 0) fail(Err::ShapeMismatch, "zero extent in shape " + shape_str(shape));
  Node n;
  n.op = "leaf";
  n.shape = std::move(shape);
  n.value = std::move(data);
  n.requires_grad = requires_grad;
  n.leaf = true;
  if (requires_grad) n.grad.assign(n.value.size(), 0.0);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), 0.0);
  return leaf(std::move(shape), std::move(d), requires_grad);
}

Tensor Graph::full(Shape shape, double v, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), v);
  return leaf(std::move(shape), std::move(d), requires_grad);
}

Tensor Graph::scalar(double v, bool requires_grad) { return leaf({1}, {v}, requires_grad); }

Tensor Graph::make_node(const char* op, Shape shape, std::vector<double> value,
                        std::vector<std::size_t> inputs,
                        std::function<void(Graph&, std::size_t)> backward) {
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  for (std::size_t in : n.inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  if (n.requires_grad) {
    n.grad.assign(n.value.size(), 0.0);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

void Graph::backward(Tensor loss) {
  if (loss.graph() != this) throw std::logic_error("backward(): loss from another graph");
  const std::size_t root = loss.id();
  if (nodes_[root].value.size() != 1)
    fail(Err::NotScalar, "backward() needs a scalar loss, got " + shape_str(nodes_[root].shape));
  if (!nodes_[root].requires_grad) return;

  // Non-leaf grads are per-call scratch; leaf grads persist and accumulate.
  for (std::size_t i = 0; i <= root; ++i) {
    Node& n = nodes_[i];
    n.grad_live = false;
    if (n.requires_grad && !n.leaf) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }
  nodes_[root].grad[0] += 1.0;
  nodes_[root].grad_live = true;

  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.grad_live && n.backward) n.backward(*this, i);
  }
}

void Graph::zero_grad() {
  for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Graph::truncate(std::size_t mark) {
  if (mark > nodes_.size()) throw std::logic_error("truncate() beyond tape end");
  nodes_.resize(mark);
}

namespace {

double* grad_sink(Graph& g, std::size_t id) {
  auto& n = g.node(id);
  if (!n.requires_grad) return nullptr;
  n.grad_live = true;
  return n.grad.data();
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(Tensor a, Tensor b) {
  Graph& g = common_graph(a, b, "matmul");
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t r = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], c = b.shape()[1];
  if (k != k2)
    fail(Err::ShapeMismatch,
         "matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(r * c, 0.0);
  matmul_accum(a.value().data(), b.value().data(), out.data(), r, k, c);

  const std::size_t ida = a.id(), idb = b.id();
  return g.make_node("matmul", {r, c}, std::move(out), {ida, idb},
                     [ida, idb, r, k, c](Graph& gg, std::size_t self) {
                       const double* gout = gg.node(self).grad.data();
                       const double* av = gg.node(ida).value.data();
                       const double* bv = gg.node(idb).value.data();
                       if (double* da = grad_sink(gg, ida)) {
                         // dA = G * B^T
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             double acc = 0.0;
                             const double* grow = gout + i * c;
                             const double* brow = bv + kk * c;
                             for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
                             da[i * k + kk] += acc;
                           }
                       }
                       if (double* db = grad_sink(gg, idb)) {
                         // dB = A^T * G
                         for (std::size_t i = 0; i < r; ++i) {
                           const double* grow = gout + i * c;
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             const double av_ik = av[i * k + kk];
                             if (av_ik == 0.0) continue;
                             double* dbrow = db + kk * c;
                             for (std::size_t j = 0; j < c; ++j) dbrow[j] += av_ik * grow[j];
                           }
                         }
                       }
                     });
}

Tensor softmax_rows(Tensor x) {
  Graph& g = *x.graph();
  require_2d(x, "softmax_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  const auto xv = x.value();
  for (double v : xv)
    if (!std::isfinite(v)) fail(Err::NonFinite, "softmax_rows input contains NaN/Inf");

  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      sum += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= sum;
  }

  const std::size_t idx = x.id();
  return g.make_node("softmax_rows", {r, c}, std::move(out), {idx},
                     [idx, r, c](Graph& gg, std::size_t self) {
                       double* dx = grad_sink(gg, idx);
                       if (!dx) return;
                       const double* s = gg.node(self).value.data();
                       const double* gout = gg.node(self).grad.data();
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* srow = s + i * c;
                         const double* grow = gout + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += srow[j] * grow[j];
                         double* drow = dx + i * c;
                         for (std::size_t j = 0; j < c; ++j) drow[j] += srow[j] * (grow[j] - dot);
                       }
                     });
}

Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, double eps) {
  Graph& g = common_graph(x, gamma, "layer_norm");
  require_2d(x, "layer_norm");
  const std::size_t r = x.shape()[0], d = x.shape()[1];
  if (gamma.numel() != d || beta.numel() != d)
    fail(Err::ShapeMismatch, "layer_norm affine params must have length " + std::to_string(d));
  if (eps <= 0.0) fail(Err::InvalidConfig, "layer_norm eps must be > 0");

  const auto xv = x.value();
  const auto gv = gamma.value();
  const auto bv = beta.value();
  std::vector<double> out(r * d);
  std::vector<double> mu(r), rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * d;
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += row[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - m) * (row[j] - m);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    mu[i] = m;
    rstd[i] = rs;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (row[j] - m) * rs * gv[j] + bv[j];
  }

  const std::size_t idx = x.id(), idg = gamma.id(), idb = beta.id();
  return g.make_node(
      "layer_norm", {r, d}, std::move(out), {idx, idg, idb},
      [idx, idg, idb, r, d, mu = std::move(mu), rstd = std::move(rstd)](Graph& gg,
                                                                        std::size_t self) {
        const double* gout = gg.node(self).grad.data();
        const double* xv = gg.node(idx).value.data();
        const double* gv = gg.node(idg).value.data();
        double* dx = grad_sink(gg, idx);
        double* dg = grad_sink(gg, idg);
        double* db = grad_sink(gg, idb);
        std::vector<double> xhat(d), dxh(d);
        for (std::size_t i = 0; i < r; ++i) {
          const double* xrow = xv + i * d;
          const double* grow = gout + i * d;
          for (std::size_t j = 0; j < d; ++j) xhat[j] = (xrow[j] - mu[i]) * rstd[i];
          if (dg)
            for (std::size_t j = 0; j < d; ++j) dg[j] += grow[j] * xhat[j];
          if (db)
            for (std::size_t j = 0; j < d; ++j) db[j] += grow[j];
          if (dx) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxh[j] = grow[j] * gv[j];
              m1 += dxh[j];
              m2 += dxh[j] * xhat[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            double* drow = dx + i * d;
            for (std::size_t j = 0; j < d; ++j)
              drow[j] += rstd[i] * (dxh[j] - m1 - xhat[j] * m2);
          }
        }
      });
}

Tensor transpose2d(Tensor x) {
  Graph& g = *x.graph();
  require_2d(x, "transpose2d");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  const auto xv = x.value();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];

  const std::size_t idx = x.id();
  return g.make_node("transpose2d", {c, r}, std::move(out), {idx},
                     [idx, r, c](Graph& gg, std::size_t self) {
                       double* dx = grad_sink(gg, idx);
                       if (!dx) return;
                       const double* gout = gg.node(self).grad.data();
                       for (std::size_t j = 0; j < c; ++j)
                         for (std::size_t i = 0; i < r; ++i) dx[i * c + j] += gout[j * r + i];
                     });
}

namespace {

enum class Broadcast { none, left_row, right_row };

Broadcast classify_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (same_shape(a, b)) return Broadcast::none;
  if (a.size() == 2 && b.size() == 2 && a[1] == b[1]) {
    if (a[0] == 1) return Broadcast::left_row;
    if (b[0] == 1) return Broadcast::right_row;
  }
  fail(Err::ShapeMismatch,
       std::string(op) + " shapes " + shape_str(a) + " vs " + shape_str(b));
}

Tensor add_sub(Tensor a, Tensor b, double sign, const char* op) {
  Graph& g = common_graph(a, b, op);
  const Broadcast bc = classify_broadcast(a.shape(), b.shape(), op);
  const Shape out_shape = bc == Broadcast::left_row ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto av = a.value(), bv = b.value();
  std::vector<double> out(n);
  if (bc == Broadcast::none) {
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + sign * bv[i];
  } else {
    const std::size_t d = out_shape[1], rows = out_shape[0];
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double x = bc == Broadcast::left_row ? av[j] : av[i * d + j];
        const double y = bc == Broadcast::right_row ? bv[j] : bv[i * d + j];
        out[i * d + j] = x + sign * y;
      }
  }

  const std::size_t ida = a.id(), idb = b.id();
  return g.make_node(op, out_shape, std::move(out), {ida, idb},
                     [ida, idb, sign, bc, out_shape](Graph& gg, std::size_t self) {
                       const double* gout = gg.node(self).grad.data();
                       const std::size_t n = shape_numel(out_shape);
                       auto pull = [&](std::size_t id, double factor, bool reduced) {
                         double* dst = grad_sink(gg, id);
                         if (!dst) return;
                         if (!reduced) {
                           for (std::size_t i = 0; i < n; ++i) dst[i] += factor * gout[i];
                         } else {
                           const std::size_t d = out_shape[1], rows = out_shape[0];
                           for (std::size_t i = 0; i < rows; ++i)
                             for (std::size_t j = 0; j < d; ++j) dst[j] += factor * gout[i * d + j];
                         }
                       };
                       pull(ida, 1.0, bc == Broadcast::left_row);
                       pull(idb, sign, bc == Broadcast::right_row);
                     });
}

}  // namespace

Tensor add(Tensor a, Tensor b) { return add_sub(a, b, 1.0, "add"); }
Tensor sub(Tensor a, Tensor b) { return add_sub(a, b, -1.0, "sub"); }

Tensor mul_scalar(Tensor x, double s) {
  Graph& g = *x.graph();
  const auto xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  const std::size_t idx = x.id();
  return g.make_node("mul_scalar", x.shape(), std::move(out), {idx},
                     [idx, s](Graph& gg, std::size_t self) {
                       double* dx = grad_sink(gg, idx);
                       if (!dx) return;
                       const auto& gout = gg.node(self).grad;
                       for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += s * gout[i];
                     });
}

Tensor gelu(Tensor x) {
  Graph& g = *x.graph();
  const auto xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    const double u = kSqrt2OverPi * (v + kGeluCoef * v * v * v);
    out[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  const std::size_t idx = x.id();
  return g.make_node("gelu", x.shape(), std::move(out), {idx},
                     [idx](Graph& gg, std::size_t self) {
                       double* dx = grad_sink(gg, idx);
                       if (!dx) return;
                       const auto& gout = gg.node(self).grad;
                       const double* xv = gg.node(idx).value.data();
                       for (std::size_t i = 0; i < gout.size(); ++i) {
                         const double v = xv[i];
                         const double u = kSqrt2OverPi * (v + kGeluCoef * v * v * v);
                         const double t = std::tanh(u);
                         const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoef * v * v);
                         dx[i] += gout[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                       }
                     });
}

Tensor mean_axis0(Tensor x) {
  Graph& g = *x.graph();
  require_2d(x, "mean_axis0");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  if (m == 0) fail(Err::EmptyAxis, "mean_axis0 over empty axis");
  const auto xv = x.value();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(m);

  const std::size_t idx = x.id();
  return g.make_node("mean_axis0", {1, d}, std::move(out), {idx},
                     [idx, m, d](Graph& gg, std::size_t self) {
                       double* dx = grad_sink(gg, idx);
                       if (!dx) return;
                       const double* gout = gg.node(self).grad.data();
                       const double inv = 1.0 / static_cast<double>(m);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += gout[j] * inv;
                     });
}

Tensor l2_sq(Tensor x) {
  Graph& g = *x.graph();
  const auto xv = x.value();
  double s = 0.0;
  for (double v : xv) s += v * v;
  const std::size_t idx = x.id();
  return g.make_node("l2_sq", {1}, {s}, {idx}, [idx](Graph& gg, std::size_t self) {
    double* dx = grad_sink(gg, idx);
    if (!dx) return;
    const double gout = gg.node(self).grad[0];
    const double* xv = gg.node(idx).value.data();
    const std::size_t n = gg.node(idx).value.size();
    for (std::size_t i = 0; i < n; ++i) dx[i] += 2.0 * xv[i] * gout;
  });
}

Tensor conv_pair(Tensor a, Tensor b, Tensor kernel) {
  Graph& g = common_graph(a, b, "conv_pair");
  if (!same_shape(a.shape(), b.shape()))
    fail(Err::ShapeMismatch,
         "conv_pair operands " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (kernel.numel() != 2) fail(Err::ShapeMismatch, "conv_pair kernel must have 2 entries");
  const auto av = a.value(), bv = b.value(), kv = kernel.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kv[0] * av[i] + kv[1] * bv[i];

  const std::size_t ida = a.id(), idb = b.id(), idk = kernel.id();
  return g.make_node("conv_pair", a.shape(), std::move(out), {ida, idb, idk},
                     [ida, idb, idk](Graph& gg, std::size_t self) {
                       const auto& gout = gg.node(self).grad;
                       const double* av = gg.node(ida).value.data();
                       const double* bv = gg.node(idb).value.data();
                       const double* kv = gg.node(idk).value.data();
                       const std::size_t n = gout.size();
                       if (double* da = grad_sink(gg, ida))
                         for (std::size_t i = 0; i < n; ++i) da[i] += kv[0] * gout[i];
                       if (double* db = grad_sink(gg, idb))
                         for (std::size_t i = 0; i < n; ++i) db[i] += kv[1] * gout[i];
                       if (double* dk = grad_sink(gg, idk)) {
                         double s0 = 0.0, s1 = 0.0;
                         for (std::size_t i = 0; i < n; ++i) {
                           s0 += gout[i] * av[i];
                           s1 += gout[i] * bv[i];
                         }
                         dk[0] += s0;
                         dk[1] += s1;
                       }
                     });
}

Tensor slice_rows(Tensor x, std::size_t r0, std::size_t r1) {
  Graph& g = *x.graph();
  require_2d(x, "slice_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (r0 >= r1 || r1 > r) fail(Err::ShapeMismatch, "slice_rows range out of bounds");
  const auto xv = x.value();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(r0 * c),
                          xv.begin() + static_cast<std::ptrdiff_t>(r1 * c));
  const std::size_t idx = x.id();
  return g.make_node("slice_rows", {r1 - r0, c}, std::move(out), {idx},
                     [idx, r0, c](Graph& gg, std::size_t self) {
                       double* dx = grad_sink(gg, idx);
                       if (!dx) return;
                       const auto& gout = gg.node(self).grad;
                       for (std::size_t i = 0; i < gout.size(); ++i) dx[r0 * c + i] += gout[i];
                     });
}

Tensor slice_cols(Tensor x, std::size_t c0, std::size_t c1) {
  Graph& g = *x.graph();
  require_2d(x, "slice_cols");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (c0 >= c1 || c1 > c) fail(Err::ShapeMismatch, "slice_cols range out of bounds");
  const std::size_t w = c1 - c0;
  const auto xv = x.value();
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * c + c0 + j];
  const std::size_t idx = x.id();
  return g.make_node("slice_cols", {r, w}, std::move(out), {idx},
                     [idx, r, c, c0, w](Graph& gg, std::size_t self) {
                       double* dx = grad_sink(gg, idx);
                       if (!dx) return;
                       const double* gout = gg.node(self).grad.data();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           dx[i * c + c0 + j] += gout[i * w + j];
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) fail(Err::ShapeMismatch, "concat_rows needs at least one part");
  Graph& g = *parts[0].graph();
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Tensor& t : parts) {
    require_2d(t, "concat_rows");
    if (t.cols() != c) fail(Err::ShapeMismatch, "concat_rows column mismatch");
    rows += t.rows();
    ids.push_back(t.id());
  }
  std::vector<double> out;
  out.reserve(rows * c);
  for (const Tensor& t : parts) out.insert(out.end(), t.value().begin(), t.value().end());

  return g.make_node("concat_rows", {rows, c}, std::move(out), ids,
                     [ids, c](Graph& gg, std::size_t self) {
                       const double* gout = gg.node(self).grad.data();
                       std::size_t off = 0;
                       for (std::size_t id : ids) {
                         const std::size_t n = gg.node(id).value.size();
                         if (double* dst = grad_sink(gg, id))
                           for (std::size_t i = 0; i < n; ++i) dst[i] += gout[off + i];
                         off += n;
                       }
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) fail(Err::ShapeMismatch, "concat_cols needs at least one part");
  Graph& g = *parts[0].graph();
  const std::size_t r = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Tensor& t : parts) {
    require_2d(t, "concat_cols");
    if (t.rows() != r) fail(Err::ShapeMismatch, "concat_cols row mismatch");
    cols += t.cols();
    ids.push_back(t.id());
    widths.push_back(t.cols());
  }
  std::vector<double> out(r * cols);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = parts[p].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out[i * cols + off + j] = v[i * widths[p] + j];
    off += widths[p];
  }

  return g.make_node("concat_cols", {r, cols}, std::move(out), ids,
                     [ids, widths, r, cols](Graph& gg, std::size_t self) {
                       const double* gout = gg.node(self).grad.data();
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < ids.size(); ++p) {
                         const std::size_t w = widths[p];
                         if (double* dst = grad_sink(gg, ids[p]))
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < w; ++j)
                               dst[i * w + j] += gout[i * cols + off + j];
                         off += w;
                       }
                     });
}

Tensor cross_entropy(Tensor logits, std::span<const int> targets) {
  Graph& g = *logits.graph();
  require_2d(logits, "cross_entropy");
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (targets.size() != n)
    fail(Err::LengthMismatch, "cross_entropy: " + std::to_string(targets.size()) +
                                  " targets for " + std::to_string(n) + " rows");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= c)
      fail(Err::TargetOutOfRange, "target " + std::to_string(t) + " outside [0," +
                                      std::to_string(c) + ")");

  const auto lv = logits.value();
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      sum += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= sum;
    const double lse = mx + std::log(sum);
    loss += lse - row[targets[i]];
  }
  loss /= static_cast<double>(n);

  const std::size_t idl = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return g.make_node("cross_entropy", {1}, {loss}, {idl},
                     [idl, n, c, probs = std::move(probs), tg = std::move(tg)](
                         Graph& gg, std::size_t self) {
                       double* dl = grad_sink(gg, idl);
                       if (!dl) return;
                       const double gout = gg.node(self).grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < c; ++j)
                           dl[i * c + j] += gout * probs[i * c + j];
                         dl[i * c + static_cast<std::size_t>(tg[i])] -= gout;
                       }
                     });
}

GradCheckResult grad_check(const std::function<Tensor(Graph&, Tensor)>& f, const Shape& shape,
                           std::span<const double> x0, double h) {
  std::vector<double> base(x0.begin(), x0.end());

  std::vector<double> analytic;
  {
    Graph g;
    Tensor x = g.leaf(shape, base, true);
    Tensor y = f(g, x);
    if (y.numel() != 1) fail(Err::NotScalar, "grad_check function must return a scalar");
    g.backward(y);
    analytic.assign(x.grad().begin(), x.grad().end());
  }

  auto eval = [&](const std::vector<double>& point) {
    Graph g;
    Tensor x = g.leaf(shape, point, false);
    return f(g, x).item();
  };

  GradCheckResult res;
  std::vector<double> pt = base;
  for (std::size_t i = 0; i < base.size(); ++i) {
    pt[i] = base[i] + h;
    const double up = eval(pt);
    pt[i] = base[i] - h;
    const double dn = eval(pt);
    pt[i] = base[i];
    const double numeric = (up - dn) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1.0});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.argmax = i;
    }
  }
  return res;
}

}  // namespace hylite
