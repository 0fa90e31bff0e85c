#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hylite/error.hpp"

namespace hylite {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

class Graph;

/// Handle into a Graph's tape. Cheap to copy. A default-constructed handle is
/// empty; every other handle stays valid until the owning Graph truncates past
/// its node.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return graph_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;
  bool requires_grad() const;

  std::span<const double> value() const;
  std::span<double> value_mut();
  std::span<const double> grad() const;

  /// Scalar tensors only.
  double item() const;

  std::size_t id() const { return id_; }
  Graph* graph() const { return graph_; }

 private:
  friend class Graph;
  Tensor(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in execution order; backward() visits
/// them in strict reverse insertion order, so every node's inputs are handled
/// after the node itself. truncate() rolls the tape back to an earlier size,
/// which keeps leaf parameters (created first) alive across training steps.
class Graph {
 public:
  struct Node {
    const char* op = "";
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized only when requires_grad
    std::vector<std::size_t> inputs;
    std::function<void(Graph&, std::size_t)> backward;
    bool requires_grad = false;
    bool leaf = false;
    bool grad_live = false;  // scratch flag owned by backward()
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad);
  Tensor zeros(Shape shape, bool requires_grad);
  Tensor full(Shape shape, double v, bool requires_grad);
  Tensor scalar(double v, bool requires_grad = false);

  /// Appends a computed node. `backward` receives this graph and the node's
  /// own id, reads its grad, and accumulates into the input nodes' grads. It
  /// is dropped when no input requires gradients.
  Tensor make_node(const char* op, Shape shape, std::vector<double> value,
                   std::vector<std::size_t> inputs,
                   std::function<void(Graph&, std::size_t)> backward);

  /// Accumulates d(loss)/d(leaf) into every requires_grad leaf. Non-leaf
  /// grads are scratch: they are reset at the start of each call, so repeated
  /// calls accumulate exactly one extra copy of the gradient into the leaves.
  void backward(Tensor loss);

  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  void truncate(std::size_t mark);

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

 private:
  std::vector<Node> nodes_;
};

// Primitive ops. All are pure w.r.t. values and register exact backward rules.
Tensor matmul(Tensor a, Tensor b);
Tensor softmax_rows(Tensor x);
Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, double eps = 1e-5);
Tensor transpose2d(Tensor x);
Tensor add(Tensor a, Tensor b);  // equal shapes, or one operand 1 x d row-broadcast
Tensor sub(Tensor a, Tensor b);
Tensor mul_scalar(Tensor x, double s);
Tensor gelu(Tensor x);
Tensor mean_axis0(Tensor x);
Tensor l2_sq(Tensor x);
Tensor conv_pair(Tensor a, Tensor b, Tensor kernel);  // kernel[0]*a + kernel[1]*b
Tensor slice_rows(Tensor x, std::size_t r0, std::size_t r1);
Tensor slice_cols(Tensor x, std::size_t c0, std::size_t c1);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

/// Mean over the batch of -log softmax(logits)[target], stabilized with
/// per-row max subtraction. Targets are 0-based class indices.
Tensor cross_entropy(Tensor logits, std::span<const int> targets);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t argmax = 0;
  bool pass(double tol) const { return max_rel_err <= tol; }
};

/// Compares the analytic gradient of the scalar-valued `f` at `x0` against
/// central finite differences with step `h`. The relative error at entry i is
/// |a_i - n_i| / max(|a_i|, |n_i|, 1).
GradCheckResult grad_check(const std::function<Tensor(Graph&, Tensor)>& f, const Shape& shape,
                           std::span<const double> x0, double h);

}  // namespace hylite
