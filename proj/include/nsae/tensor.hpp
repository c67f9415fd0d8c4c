#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nsae/error.hpp"

namespace nsae {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // same size as value once touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
/// handle onto a graph node; ops build the graph, backward() walks it.
/// Values produced by an op are treated as immutable; only leaf tensors
/// (parameters) may be updated in place between graphs.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, T v);
  static Tensor from(const Shape& shape, std::vector<T> data);
  static Tensor scalar(T v) { return full({1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  const std::vector<T>& values() const { return node_->value; }
  /// Mutable access; meant for leaf tensors (parameter updates, buffers).
  std::vector<T>& values() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  /// Value of a one-element tensor.
  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor of size " + std::to_string(size()));
    return node_->value[0];
  }

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// Reverse-mode accumulation from a scalar loss. Gradients accumulate into
/// every reachable requires_grad tensor; call zero_grad between steps.
template <class T>
void backward(const Tensor<T>& loss);

// ---- elementwise ----
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T c);
template <class T> Tensor<T> relu(const Tensor<T>& a);
template <class T> Tensor<T> sigmoid(const Tensor<T>& a);
/// Elementwise sqrt; subgradient 0 at 0.
template <class T> Tensor<T> sqrt_elem(const Tensor<T>& a);

// ---- shape ----
template <class T> Tensor<T> reshape(const Tensor<T>& a, const Shape& shape);

// ---- reductions ----
template <class T> Tensor<T> sum(const Tensor<T>& a);
template <class T> Tensor<T> mean(const Tensor<T>& a);
/// [B x D] -> [B], sum over the second axis.
template <class T> Tensor<T> sum_cols(const Tensor<T>& a);

// ---- linear algebra ----
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a [M x K] times b^T where b is [N x K]; result [M x N].
template <class T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
/// x [B x I], weight [I x O], bias [O] -> [B x O].
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                                    const Tensor<T>& bias);

// ---- classification helpers ----
/// Row-wise log-softmax with max subtraction, [B x C].
template <class T> Tensor<T> log_softmax(const Tensor<T>& logits);
/// Mean over rows of -logp[i, labels[i]].
template <class T> Tensor<T> gather_nll(const Tensor<T>& logp,
                                        const std::vector<int>& labels);
/// Rows scaled to unit L2 norm. Throws DegeneracyError on a zero-norm row.
template <class T> Tensor<T> l2_normalize_rows(const Tensor<T>& x);
/// Mean of rows sharing a group id; groups must cover [0, n_groups) and
/// every group must be non-empty.
template <class T> Tensor<T> group_means(const Tensor<T>& x,
                                         const std::vector<int>& groups,
                                         int n_groups);

}  // namespace nsae
