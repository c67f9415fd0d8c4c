#include "nsae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "detail/gemm.hpp"

namespace nsae {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

using nsae::detail::Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
Tensor<T> make_leaf(Shape shape, std::vector<T> value) {
  if (shape_numel(shape) != static_cast<std::int64_t>(value.size()))
    throw DimensionError("data length " + std::to_string(value.size()) +
                         " does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return Tensor<T>(std::move(n));
}

template <class T, class Backprop>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<NodePtr<T>> parents, Backprop bp) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return Tensor<T>(std::move(n));
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

template <class T>
Tensor<T> Tensor<T>::zeros(const Shape& shape) {
  return make_leaf<T>(shape, std::vector<T>(shape_numel(shape), T(0)));
}

template <class T>
Tensor<T> Tensor<T>::full(const Shape& shape, T v) {
  return make_leaf<T>(shape, std::vector<T>(shape_numel(shape), v));
}

template <class T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> data) {
  return make_leaf<T>(shape, std::move(data));
}

template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw DimensionError("backward() requires a scalar loss, got " +
                         shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Reverse post-order DFS over the recorded graph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  struct Frame {
    Node<T>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<T>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backprop) continue;
    n->ensure_grad();
    for (auto& p : n->parents) p->ensure_grad();
    n->backprop(*n);
  }
}

// ---------------- elementwise ----------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> v(a.size());
  const auto &av = a.values(), &bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>(a.shape(), std::move(v), {pa, pb}, [pa, pb](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      pa->grad[i] += n.grad[i];
      pb->grad[i] += n.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> v(a.size());
  const auto &av = a.values(), &bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>(a.shape(), std::move(v), {pa, pb}, [pa, pb](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      pa->grad[i] += n.grad[i];
      pb->grad[i] -= n.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> v(a.size());
  const auto &av = a.values(), &bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  auto pa = a.node(), pb = b.node();
  return make_op<T>(a.shape(), std::move(v), {pa, pb}, [pa, pb](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      pa->grad[i] += n.grad[i] * pb->value[i];
      pb->grad[i] += n.grad[i] * pa->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> v(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * c;
  auto pa = a.node();
  return make_op<T>(a.shape(), std::move(v), {pa}, [pa, c](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += c * n.grad[i];
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] > T(0) ? av[i] : T(0);
  auto pa = a.node();
  return make_op<T>(a.shape(), std::move(v), {pa}, [pa](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (pa->value[i] > T(0)) pa->grad[i] += n.grad[i];
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(1) / (T(1) + std::exp(-av[i]));
  auto pa = a.node();
  return make_op<T>(a.shape(), std::move(v), {pa}, [pa](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const T s = n.value[i];
      pa->grad[i] += n.grad[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Tensor<T> sqrt_elem(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(av[i]);
  auto pa = a.node();
  return make_op<T>(a.shape(), std::move(v), {pa}, [pa](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (n.value[i] > T(0)) pa->grad[i] += n.grad[i] / (T(2) * n.value[i]);
  });
}

// ---------------- shape ----------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (shape_numel(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  auto pa = a.node();
  return make_op<T>(shape, a.values(), {pa}, [pa](Node<T>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
  });
}

// ---------------- reductions ----------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  auto pa = a.node();
  return make_op<T>({1}, {acc}, {pa}, [pa](Node<T>& n) {
    const T g = n.grad[0];
    for (auto& gi : pa->grad) gi += g;
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  const T inv = T(1) / static_cast<T>(a.size());
  auto pa = a.node();
  return make_op<T>({1}, {acc * inv}, {pa}, [pa, inv](Node<T>& n) {
    const T g = n.grad[0] * inv;
    for (auto& gi : pa->grad) gi += g;
  });
}

template <class T>
Tensor<T> sum_cols(const Tensor<T>& a) {
  if (a.shape().size() != 2)
    throw DimensionError("sum_cols: expected 2-d tensor, got " + shape_str(a.shape()));
  const int rows = a.shape()[0], cols = a.shape()[1];
  std::vector<T> v(rows, T(0));
  const auto& av = a.values();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) v[i] += av[static_cast<long>(i) * cols + j];
  auto pa = a.node();
  return make_op<T>({rows}, std::move(v), {pa}, [pa, rows, cols](Node<T>& n) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        pa->grad[static_cast<long>(i) * cols + j] += n.grad[i];
  });
}

// ---------------- linear algebra ----------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> v(static_cast<long>(m) * n, T(0));
  detail::gemm_nn_acc(v.data(), a.values().data(), b.values().data(), m, k, n);
  auto pa = a.node(), pb = b.node();
  return make_op<T>({m, n}, std::move(v), {pa, pb}, [pa, pb, m, k, n](Node<T>& nd) {
    detail::gemm_nt_acc(pa->grad.data(), nd.grad.data(), pb->value.data(), m, n, k);
    detail::gemm_tn_acc(pb->grad.data(), pa->value.data(), nd.grad.data(), k, m, n);
  });
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  std::vector<T> v(static_cast<long>(m) * n, T(0));
  detail::gemm_nt_acc(v.data(), a.values().data(), b.values().data(), m, k, n);
  auto pa = a.node(), pb = b.node();
  return make_op<T>({m, n}, std::move(v), {pa, pb}, [pa, pb, m, k, n](Node<T>& nd) {
    detail::gemm_nn_acc(pa->grad.data(), nd.grad.data(), pb->value.data(), m, n, k);
    detail::gemm_tn_acc(pb->grad.data(), nd.grad.data(), pa->value.data(), n, m, k);
  });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2 ||
      x.shape()[1] != weight.shape()[0])
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) +
                         " and " + shape_str(weight.shape()));
  const int b = x.shape()[0], in = x.shape()[1], out = weight.shape()[1];
  if (bias.size() != out)
    throw DimensionError("linear: bias size " + std::to_string(bias.size()) +
                         " != output width " + std::to_string(out));
  std::vector<T> v(static_cast<long>(b) * out);
  for (int i = 0; i < b; ++i)
    std::copy(bias.values().begin(), bias.values().end(),
              v.begin() + static_cast<long>(i) * out);
  detail::gemm_nn_acc(v.data(), x.values().data(), weight.values().data(), b, in, out);
  auto px = x.node(), pw = weight.node(), pb = bias.node();
  return make_op<T>({b, out}, std::move(v), {px, pw, pb},
                    [px, pw, pb, b, in, out](Node<T>& nd) {
    detail::gemm_nt_acc(px->grad.data(), nd.grad.data(), pw->value.data(), b, out, in);
    detail::gemm_tn_acc(pw->grad.data(), px->value.data(), nd.grad.data(), in, b, out);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < out; ++j)
        pb->grad[j] += nd.grad[static_cast<long>(i) * out + j];
  });
}

// ---------------- classification ----------------

template <class T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  if (logits.shape().size() != 2)
    throw DimensionError("log_softmax: expected 2-d logits, got " +
                         shape_str(logits.shape()));
  const int b = logits.shape()[0], c = logits.shape()[1];
  std::vector<T> v(logits.values());
  for (int i = 0; i < b; ++i) {
    T* row = v.data() + static_cast<long>(i) * c;
    T m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    T lse = T(0);
    for (int j = 0; j < c; ++j) lse += std::exp(row[j] - m);
    lse = std::log(lse) + m;
    for (int j = 0; j < c; ++j) row[j] -= lse;
  }
  auto pa = logits.node();
  return make_op<T>({b, c}, std::move(v), {pa}, [pa, b, c](Node<T>& n) {
    for (int i = 0; i < b; ++i) {
      const T* g = n.grad.data() + static_cast<long>(i) * c;
      const T* o = n.value.data() + static_cast<long>(i) * c;
      T gsum = T(0);
      for (int j = 0; j < c; ++j) gsum += g[j];
      T* pg = pa->grad.data() + static_cast<long>(i) * c;
      for (int j = 0; j < c; ++j) pg[j] += g[j] - std::exp(o[j]) * gsum;
    }
  });
}

template <class T>
Tensor<T> gather_nll(const Tensor<T>& logp, const std::vector<int>& labels) {
  if (logp.shape().size() != 2)
    throw DimensionError("gather_nll: expected 2-d log-probs");
  const int b = logp.shape()[0], c = logp.shape()[1];
  if (static_cast<int>(labels.size()) != b)
    throw DimensionError("gather_nll: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
  for (int y : labels)
    if (y < 0 || y >= c)
      throw DimensionError("gather_nll: label " + std::to_string(y) +
                           " out of range [0, " + std::to_string(c) + ")");
  T acc = T(0);
  for (int i = 0; i < b; ++i) acc -= logp.values()[static_cast<long>(i) * c + labels[i]];
  acc /= static_cast<T>(b);
  auto pa = logp.node();
  return make_op<T>({1}, {acc}, {pa}, [pa, labels, b, c](Node<T>& n) {
    const T g = n.grad[0] / static_cast<T>(b);
    for (int i = 0; i < b; ++i) pa->grad[static_cast<long>(i) * c + labels[i]] -= g;
  });
}

template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  if (x.shape().size() != 2)
    throw DimensionError("l2_normalize_rows: expected 2-d tensor");
  const int b = x.shape()[0], d = x.shape()[1];
  std::vector<T> v(x.size());
  std::vector<T> norms(b);
  for (int i = 0; i < b; ++i) {
    const T* row = x.values().data() + static_cast<long>(i) * d;
    T s = T(0);
    for (int j = 0; j < d; ++j) s += row[j] * row[j];
    const T nrm = std::sqrt(s);
    if (!(nrm > T(0)))
      throw DegeneracyError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    norms[i] = nrm;
    for (int j = 0; j < d; ++j) v[static_cast<long>(i) * d + j] = row[j] / nrm;
  }
  auto pa = x.node();
  return make_op<T>({b, d}, std::move(v), {pa}, [pa, norms, b, d](Node<T>& n) {
    for (int i = 0; i < b; ++i) {
      const T* g = n.grad.data() + static_cast<long>(i) * d;
      const T* o = n.value.data() + static_cast<long>(i) * d;
      T dot = T(0);
      for (int j = 0; j < d; ++j) dot += g[j] * o[j];
      T* pg = pa->grad.data() + static_cast<long>(i) * d;
      for (int j = 0; j < d; ++j) pg[j] += (g[j] - o[j] * dot) / norms[i];
    }
  });
}

template <class T>
Tensor<T> group_means(const Tensor<T>& x, const std::vector<int>& groups,
                      int n_groups) {
  if (x.shape().size() != 2)
    throw DimensionError("group_means: expected 2-d tensor");
  const int b = x.shape()[0], d = x.shape()[1];
  if (static_cast<int>(groups.size()) != b)
    throw DimensionError("group_means: group list length mismatch");
  std::vector<int> counts(n_groups, 0);
  for (int g : groups) {
    if (g < 0 || g >= n_groups)
      throw DimensionError("group_means: group id " + std::to_string(g) + " out of range");
    ++counts[g];
  }
  for (int g = 0; g < n_groups; ++g)
    if (counts[g] == 0)
      throw DegeneracyError("group_means: empty group " + std::to_string(g));
  std::vector<T> v(static_cast<long>(n_groups) * d, T(0));
  for (int i = 0; i < b; ++i) {
    const T* row = x.values().data() + static_cast<long>(i) * d;
    T* out = v.data() + static_cast<long>(groups[i]) * d;
    for (int j = 0; j < d; ++j) out[j] += row[j];
  }
  for (int g = 0; g < n_groups; ++g) {
    T* out = v.data() + static_cast<long>(g) * d;
    const T inv = T(1) / static_cast<T>(counts[g]);
    for (int j = 0; j < d; ++j) out[j] *= inv;
  }
  auto pa = x.node();
  return make_op<T>({n_groups, d}, std::move(v), {pa},
                    [pa, groups, counts, b, d](Node<T>& n) {
    for (int i = 0; i < b; ++i) {
      const T inv = T(1) / static_cast<T>(counts[groups[i]]);
      const T* g = n.grad.data() + static_cast<long>(groups[i]) * d;
      T* pg = pa->grad.data() + static_cast<long>(i) * d;
      for (int j = 0; j < d; ++j) pg[j] += g[j] * inv;
    }
  });
}

// ---------------- instantiations ----------------

#define NSAE_INSTANTIATE_TENSOR(T)                                            \
  template class Tensor<T>;                                                   \
  template void backward<T>(const Tensor<T>&);                                \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                           \
  template Tensor<T> relu<T>(const Tensor<T>&);                               \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                            \
  template Tensor<T> sqrt_elem<T>(const Tensor<T>&);                          \
  template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);              \
  template Tensor<T> sum<T>(const Tensor<T>&);                                \
  template Tensor<T> mean<T>(const Tensor<T>&);                               \
  template Tensor<T> sum_cols<T>(const Tensor<T>&);                           \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&,            \
                               const Tensor<T>&);                             \
  template Tensor<T> log_softmax<T>(const Tensor<T>&);                        \
  template Tensor<T> gather_nll<T>(const Tensor<T>&, const std::vector<int>&);\
  template Tensor<T> l2_normalize_rows<T>(const Tensor<T>&);                  \
  template Tensor<T> group_means<T>(const Tensor<T>&, const std::vector<int>&,\
                                    int);

NSAE_INSTANTIATE_TENSOR(float)
NSAE_INSTANTIATE_TENSOR(double)

}  // namespace nsae
