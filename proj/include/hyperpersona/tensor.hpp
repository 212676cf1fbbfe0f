#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle to a node holding values, an optional
// gradient buffer and the closure that pushes its gradient to its parents.
// Results of ops on tracked tensors are tracked; calling backward() on a
// scalar walks the recorded graph in reverse topological order. A graph and
// its tensors must stay on one thread at a time.
//
// All ops treat tensors as matrices: rank-1 shape {n} is a 1 x n row and a
// scalar is 1 x 1. Every op rejects non-finite results with NumericError.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "util.hpp"

namespace hyperpersona::ad {

enum class Mode { Train, Eval };

using Shape = std::vector<std::size_t>;

[[nodiscard]] inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

[[nodiscard]] inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // null for leaves

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<T> values) { return make(std::move(shape), std::move(values), false); }
    static Tensor parameter(Shape shape, std::vector<T> values) { return make(std::move(shape), std::move(values), true); }
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return make(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }
    static Tensor scalar(T v, bool requires_grad = false) { return make({}, {v}, requires_grad); }

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    [[nodiscard]] std::size_t rows() const { return shape().size() == 2 ? shape()[0] : 1; }
    [[nodiscard]] std::size_t cols() const { return shape().empty() ? 1 : shape().back(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }

    [[nodiscard]] std::span<const T> value() const { return node_->value; }
    [[nodiscard]] std::span<T> value_mut() { return node_->value; }
    [[nodiscard]] T item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    [[nodiscard]] T operator()(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    /// Gradient buffer; zeros if backward has not reached this tensor.
    [[nodiscard]] std::span<const T> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

    /// Same values, detached from the graph.
    [[nodiscard]] Tensor detach() const { return constant(shape(), node_->value); }

    [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<Node<T>> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    static Tensor make(Shape shape, std::vector<T> values, bool requires_grad) {
        if (shape_size(shape) != values.size())
            throw DimensionError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) + " values");
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return from_node(std::move(n));
    }

    std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
void check_finite(const std::vector<T>& v, const char* op) {
    for (const T& x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value produced");
}

/// Builds an op result. `backward` receives the result node; parents are
/// reachable through node.parents in the order given here.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
    check_finite(values, op);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
    if (n->requires_grad) {
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(n));
}

/// Grad buffer of parent i if it participates in backprop, else nullptr.
template <class T>
T* parent_grad(Node<T>& self, std::size_t i) {
    auto& p = *self.parents[i];
    if (!p.requires_grad) return nullptr;
    p.ensure_grad();
    return p.grad.data();
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

template <class T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p)
            if (T* g = detail::parent_grad(self, p))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (T* g = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        if (T* g = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.value().begin(), a.value().end());
    for (auto& x : out) x *= c;
    return detail::make_result<T>("scale", a.shape(), std::move(out), {a}, [c](Node<T>& self) {
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += c * self.grad[i];
    });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(a.value()[i]);
    return detail::make_result<T>("sigmoid", a.shape(), std::move(out), {a}, [](Node<T>& self) {
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const T s = self.value[i];
                g[i] += self.grad[i] * s * (T(1) - s);
            }
    });
}

enum class Elementwise { Add, Mul, Sigmoid };

/// Dispatch form over the pointwise kinds; sigmoid takes one operand.
template <class T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const std::optional<Tensor<T>>& b = std::nullopt) {
    switch (kind) {
        case Elementwise::Sigmoid: return sigmoid(a);
        case Elementwise::Add:
        case Elementwise::Mul:
            if (!b) throw ContractError("elementwise: binary kind needs two operands");
            return kind == Elementwise::Add ? add(a, *b) : mul(a, *b);
    }
    throw ContractError("elementwise: unknown kind");
}

// ---------------------------------------------------------------------------
// Row broadcasts: X is n x d, v has d elements.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    const std::size_t n = x.rows(), d = x.cols();
    if (v.size() != d) throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
    std::vector<T> out(x.value().begin(), x.value().end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] += v.value()[j];
    return detail::make_result<T>("add_rowvec", x.shape(), std::move(out), {x, v}, [n, d](Node<T>& self) {
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < n * d; ++i) g[i] += self.grad[i];
        if (T* g = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    });
}

template <class T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    const std::size_t n = x.rows(), d = x.cols();
    if (v.size() != d) throw DimensionError("mul_rowvec: " + shape_str(x.shape()) + " * " + shape_str(v.shape()));
    std::vector<T> out(x.value().begin(), x.value().end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= v.value()[j];
    return detail::make_result<T>("mul_rowvec", x.shape(), std::move(out), {x, v}, [n, d](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& vv = self.parents[1]->value;
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i * d + j] * vv[j];
        if (T* g = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j] * xv[i * d + j];
    });
}

/// Scales row i of X (n x d) by s[i]; s has n elements.
template <class T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& s) {
    const std::size_t n = x.rows(), d = x.cols();
    if (s.size() != n) throw DimensionError("mul_rows: " + shape_str(x.shape()) + " by " + shape_str(s.shape()));
    std::vector<T> out(x.value().begin(), x.value().end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= s.value()[i];
    return detail::make_result<T>("mul_rows", x.shape(), std::move(out), {x, s}, [n, d](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& sv = self.parents[1]->value;
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i * d + j] * sv[i];
        if (T* g = detail::parent_grad(self, 1))
            for (std::size_t i = 0; i < n; ++i) {
                T acc = T(0);
                for (std::size_t j = 0; j < d; ++j) acc += self.grad[i * d + j] * xv[i * d + j];
                g[i] += acc;
            }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> out(m * n, T(0));
    const T* A = a.value().data();
    const T* B = b.value().data();
    for (std::size_t i = 0; i < m; ++i) {
        T* c = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = A[i * k + p];
            const T* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += aip * brow[j];
        }
    }
    return detail::make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        const T* A = self.parents[0]->value.data();
        const T* B = self.parents[1]->value.data();
        const T* G = self.grad.data();
        if (T* ga = detail::parent_grad(self, 0)) {  // dA = dC . B^T
            std::vector<T> bt(k * n);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
            for (std::size_t i = 0; i < m; ++i) {
                T* garow = ga + i * k;
                const T* grow = G + i * n;
                for (std::size_t j = 0; j < n; ++j) {
                    const T g = grow[j];
                    const T* btrow = bt.data() + j * k;
                    for (std::size_t p = 0; p < k; ++p) garow[p] += g * btrow[p];
                }
            }
        }
        if (T* gb = detail::parent_grad(self, 1))  // dB = A^T . dC
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T aip = A[i * k + p];
                    T* gbrow = gb + p * n;
                    const T* grow = G + i * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T x : a.value()) acc += x;
    return detail::make_result<T>("sum", {}, {acc}, {a}, [](Node<T>& self) {
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
    });
}

/// Row i of the result is the sum of rows r with ids[r] == i; rows are added in
/// index order. Segments without members are zero.
template <class T>
Tensor<T> segment_sum(const Tensor<T>& x, std::vector<std::size_t> ids, std::size_t num_segments) {
    const std::size_t n = x.rows(), d = x.cols();
    if (ids.size() != n) throw DimensionError("segment_sum: " + std::to_string(ids.size()) + " ids for " + std::to_string(n) + " rows");
    for (auto s : ids)
        if (s >= num_segments) throw IndexError("segment_sum: id " + std::to_string(s) + " out of range " + std::to_string(num_segments));
    std::vector<T> out(num_segments * d, T(0));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) out[ids[r] * d + j] += x.value()[r * d + j];
    return detail::make_result<T>("segment_sum", {num_segments, d}, std::move(out), {x},
                                  [ids = std::move(ids), d](Node<T>& self) {
                                      if (T* g = detail::parent_grad(self, 0))
                                          for (std::size_t r = 0; r < ids.size(); ++r)
                                              for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[ids[r] * d + j];
                                  });
}

/// Row r of the result is row idx[r] of x.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> idx) {
    const std::size_t n = x.rows(), d = x.cols();
    for (auto i : idx)
        if (i >= n) throw IndexError("gather_rows: index " + std::to_string(i) + " out of range " + std::to_string(n));
    std::vector<T> out(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(x.value().data() + idx[r] * d, d, out.data() + r * d);
    const std::size_t m = idx.size();
    return detail::make_result<T>("gather_rows", {m, d}, std::move(out), {x}, [idx = std::move(idx), d](Node<T>& self) {
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += self.grad[r * d + j];
    });
}

/// out[r] = <a_r, b_r>, shape n x 1.
template <class T>
Tensor<T> row_dot(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "row_dot");
    const std::size_t n = a.rows(), d = a.cols();
    std::vector<T> out(n, T(0));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r] += a.value()[r * d + j] * b.value()[r * d + j];
    return detail::make_result<T>("row_dot", {n, 1}, std::move(out), {a, b}, [n, d](Node<T>& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r] * bv[r * d + j];
        if (T* g = detail::parent_grad(self, 1))
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r] * av[r * d + j];
    });
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const std::size_t n = x.rows(), d = x.cols();
    if (d == 0) throw DimensionError("softmax_rows: empty rows");
    std::vector<T> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = x.value().data() + i * d;
        const T mx = *std::max_element(row, row + d);
        T z = T(0);
        for (std::size_t j = 0; j < d; ++j) z += (out[i * d + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= z;
    }
    return detail::make_result<T>("softmax_rows", x.shape(), std::move(out), {x}, [n, d](Node<T>& self) {
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < n; ++i) {
                T dot = T(0);
                for (std::size_t j = 0; j < d; ++j) dot += self.grad[i * d + j] * self.value[i * d + j];
                for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.value[i * d + j] * (self.grad[i * d + j] - dot);
            }
    });
}

/// Softmax over groups of a score vector: entries sharing a segment id form one
/// distribution. Shape is preserved.
template <class T>
Tensor<T> segment_softmax(const Tensor<T>& scores, std::vector<std::size_t> ids, std::size_t num_segments) {
    const std::size_t e = scores.size();
    if (ids.size() != e) throw DimensionError("segment_softmax: id count mismatch");
    for (auto s : ids)
        if (s >= num_segments) throw IndexError("segment_softmax: id out of range");
    std::vector<T> mx(num_segments, -std::numeric_limits<T>::infinity());
    for (std::size_t i = 0; i < e; ++i) mx[ids[i]] = std::max(mx[ids[i]], scores.value()[i]);
    std::vector<T> out(e), z(num_segments, T(0));
    for (std::size_t i = 0; i < e; ++i) z[ids[i]] += (out[i] = std::exp(scores.value()[i] - mx[ids[i]]));
    for (std::size_t i = 0; i < e; ++i) out[i] /= z[ids[i]];
    return detail::make_result<T>("segment_softmax", scores.shape(), std::move(out), {scores},
                                  [ids = std::move(ids), num_segments](Node<T>& self) {
                                      if (T* g = detail::parent_grad(self, 0)) {
                                          std::vector<T> dot(num_segments, T(0));
                                          for (std::size_t i = 0; i < ids.size(); ++i) dot[ids[i]] += self.grad[i] * self.value[i];
                                          for (std::size_t i = 0; i < ids.size(); ++i)
                                              g[i] += self.value[i] * (self.grad[i] - dot[ids[i]]);
                                      }
                                  });
}

/// Row-wise (x - mean) / sqrt(var + eps) * gamma + beta, biased variance.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const std::size_t n = x.rows(), d = x.cols();
    if (d == 0) throw DimensionError("layer_norm: empty rows");
    if (gamma.size() != d || beta.size() != d) throw DimensionError("layer_norm: affine parameters must have " + std::to_string(d) + " elements");
    std::vector<T> xhat(n * d), out(n * d), inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = x.value().data() + i * d;
        T mean = T(0);
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(d);
        inv_std[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (row[j] - mean) * inv_std[i];
            out[i * d + j] = xhat[i * d + j] * gamma.value()[j] + beta.value()[j];
        }
    }
    return detail::make_result<T>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            const auto& gv = self.parents[1]->value;
            if (T* gg = detail::parent_grad(self, 1))
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += self.grad[i * d + j] * xhat[i * d + j];
            if (T* gb = detail::parent_grad(self, 2))
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad[i * d + j];
            if (T* gx = detail::parent_grad(self, 0))
                for (std::size_t i = 0; i < n; ++i) {
                    T s1 = T(0), s2 = T(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dxh = self.grad[i * d + j] * gv[j];
                        s1 += dxh;
                        s2 += dxh * xhat[i * d + j];
                    }
                    const T inv_d = T(1) / static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dxh = self.grad[i * d + j] * gv[j];
                        gx[i * d + j] += inv_std[i] * (dxh - inv_d * s1 - xhat[i * d + j] * inv_d * s2);
                    }
                }
        });
}

// ---------------------------------------------------------------------------
// Stochastic
// ---------------------------------------------------------------------------

/// Inverted dropout: in Train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Eval mode (or rate 0)
/// returns the input handle unchanged.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, RngStream& rng, Mode mode) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0,1)");
    if (mode == Mode::Eval || rate == 0.0) return x;
    const T keep_scale = T(1) / static_cast<T>(1.0 - rate);
    std::vector<T> mask(x.size());
    for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
    return detail::make_result<T>("dropout", x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
        if (T* g = detail::parent_grad(self, 0))
            for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Accumulates d(loss)/d(leaf) into every tracked leaf reachable from `loss`.
/// Intermediate gradients are recomputed from scratch on every call; leaf
/// gradients accumulate across calls until zero_grad().
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order) {
        if (n->backward) n->grad.assign(n->value.size(), T(0));
        else n->ensure_grad();
    }
    loss.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). The
/// values of `x` are perturbed in place (and restored), so `f` may read x
/// through any handle sharing its node. When `coords` is given only those
/// coordinates are evaluated; the others are left at zero.
template <class T, class F>
std::vector<T> finite_diff_grad(F&& f, Tensor<T>& x, T eps = T(1e-5), const std::vector<std::size_t>* coords = nullptr) {
    std::vector<T> g(x.size(), T(0));
    auto vals = x.value_mut();
    auto probe = [&](std::size_t i) {
        const T orig = vals[i];
        vals[i] = orig + eps;
        const T fp = static_cast<T>(f(x));
        vals[i] = orig - eps;
        const T fm = static_cast<T>(f(x));
        vals[i] = orig;
        g[i] = (fp - fm) / (T(2) * eps);
    };
    if (coords)
        for (auto i : *coords) probe(i);
    else
        for (std::size_t i = 0; i < x.size(); ++i) probe(i);
    return g;
}

/// |a - b| / max(|a|, |b|), or |a - b| when both magnitudes are below `floor`.
template <class T>
T relative_error(T a, T b, T floor = T(1e-7)) {
    const T scale = std::max(std::abs(a), std::abs(b));
    return scale < floor ? std::abs(a - b) : std::abs(a - b) / scale;
}

}  // namespace hyperpersona::ad
