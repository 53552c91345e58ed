#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lacos/errors.hpp"

namespace lacos {

namespace detail {

inline std::string shape_str(std::size_t rows, std::size_t cols) {
    std::ostringstream os;
    os << rows << "x" << cols;
    return os.str();
}

// C[m x n] += A[m x k] * B[k x n]
template <class S>
void mm_nn_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        S* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const S aik = a[i * k + kk];
            if (aik == S(0)) continue;
            const S* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class S>
void mm_nt_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const S* brow = b + j * k;
            S acc = S(0);
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <class S>
void mm_tn_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        const S* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const S aki = a[kk * m + i];
            if (aki == S(0)) continue;
            S* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

} // namespace detail

template <class S>
struct TensorNodeT {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<S> values;
    bool requires_grad = false;
    std::vector<S> grad; // allocated (zeroed) iff requires_grad
    std::vector<std::shared_ptr<TensorNodeT>> parents;
    std::function<void()> backward_fn; // empty for leaves

    std::size_t size() const { return rows * cols; }
};

/// Dense 2-D float tensor participating in reverse-mode autodiff.
/// Values are row-major. A tensor is a shared handle to its node, so copies
/// alias the same storage; only grad buffers (and, for leaves, explicit calls
/// to mutable_values) change after construction.
template <class S>
class TensorT {
public:
    using Node = TensorNodeT<S>;

    TensorT() = default;

    static TensorT zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
        return from_values(rows, cols, std::vector<S>(rows * cols, S(0)), requires_grad);
    }

    static TensorT full(std::size_t rows, std::size_t cols, S value, bool requires_grad = false) {
        return from_values(rows, cols, std::vector<S>(rows * cols, value), requires_grad);
    }

    static TensorT from_values(std::size_t rows, std::size_t cols, std::vector<S> values,
                               bool requires_grad = false, bool allow_nonfinite = false) {
        if (values.size() != rows * cols) {
            throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                             detail::shape_str(rows, cols));
        }
        if (!allow_nonfinite) {
            for (const S v : values) {
                if (!std::isfinite(static_cast<double>(v))) {
                    throw NumericError("tensor: non-finite element at construction");
                }
            }
        }
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->rows = rows;
        t.node_->cols = cols;
        t.node_->values = std::move(values);
        t.node_->requires_grad = requires_grad;
        if (requires_grad) t.node_->grad.assign(rows * cols, S(0));
        return t;
    }

    static TensorT from_rows(const std::vector<std::vector<S>>& rows, bool requires_grad = false) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows[0].size();
        std::vector<S> flat;
        flat.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("tensor: ragged row initializer");
            flat.insert(flat.end(), row.begin(), row.end());
        }
        return from_values(r, c, std::move(flat), requires_grad);
    }

    bool valid() const { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->size(); }

    S at(std::size_t r, std::size_t c) const { return node_->values[r * node_->cols + c]; }
    S item() const {
        if (size() != 1) throw ShapeError("item: tensor is " + shape_str() + ", not scalar");
        return node_->values[0];
    }

    std::span<const S> values() const { return node_->values; }
    /// Leaf mutation hook for initializers and the optimizer. Must not be used
    /// on tensors that already participate in a recorded graph.
    std::span<S> mutable_values() { return node_->values; }

    bool requires_grad() const { return node_->requires_grad; }

    std::span<const S> grad() const {
        if (!node_->requires_grad) throw Error("grad: tensor does not require gradients");
        return node_->grad;
    }

    void zero_grad() {
        if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    std::string shape_str() const { return detail::shape_str(rows(), cols()); }

    bool same_node(const TensorT& other) const { return node_ == other.node_; }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;

    template <class T>
    friend class GraphT;
};

/// Tape of recorded operations. Nodes are appended in execution order, so the
/// tape is topologically sorted by construction; backward() walks it once in
/// reverse. A graph and its non-leaf tensors are confined to one thread.
template <class S>
class GraphT {
public:
    using Tensor = TensorT<S>;
    using Node = TensorNodeT<S>;

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.cols() != b.rows()) {
            throw ShapeError("matmul: inner dimensions mismatch: " + a.shape_str() + " vs " +
                             b.shape_str());
        }
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        std::vector<S> out(m * n, S(0));
        detail::mm_nn_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
        Tensor y = make_node(m, n, std::move(out), {a.node_, b.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            Node* bn = b.node_.get();
            y.node_->backward_fn = [yn, an, bn, m, k, n]() {
                if (an->requires_grad) {
                    detail::mm_nt_acc(yn->grad.data(), bn->values.data(), an->grad.data(), m, n, k);
                }
                if (bn->requires_grad) {
                    detail::mm_tn_acc(an->values.data(), yn->grad.data(), bn->grad.data(), k, m, n);
                }
            };
        }
        return y;
    }

    /// y = a * b^T. Shapes: a[m x k], b[n x k] -> y[m x n].
    Tensor matmul_nt(const Tensor& a, const Tensor& b) {
        if (a.cols() != b.cols()) {
            throw ShapeError("matmul_nt: inner dimensions mismatch: " + a.shape_str() + " vs " +
                             b.shape_str() + "^T");
        }
        const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
        std::vector<S> out(m * n, S(0));
        detail::mm_nt_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
        Tensor y = make_node(m, n, std::move(out), {a.node_, b.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            Node* bn = b.node_.get();
            y.node_->backward_fn = [yn, an, bn, m, k, n]() {
                if (an->requires_grad) {
                    detail::mm_nn_acc(yn->grad.data(), bn->values.data(), an->grad.data(), m, n, k);
                }
                if (bn->requires_grad) {
                    detail::mm_tn_acc(yn->grad.data(), an->values.data(), bn->grad.data(), n, m, k);
                }
            };
        }
        return y;
    }

    enum class Elementwise { add, sub, mul };

    Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
        if (a.rows() != b.rows() || a.cols() != b.cols()) {
            throw ShapeError("elementwise: shape mismatch: " + a.shape_str() + " vs " +
                             b.shape_str());
        }
        const std::size_t sz = a.size();
        std::vector<S> out(sz);
        const S* av = a.values().data();
        const S* bv = b.values().data();
        switch (kind) {
        case Elementwise::add:
            for (std::size_t i = 0; i < sz; ++i) out[i] = av[i] + bv[i];
            break;
        case Elementwise::sub:
            for (std::size_t i = 0; i < sz; ++i) out[i] = av[i] - bv[i];
            break;
        case Elementwise::mul:
            for (std::size_t i = 0; i < sz; ++i) out[i] = av[i] * bv[i];
            break;
        }
        Tensor y = make_node(a.rows(), a.cols(), std::move(out), {a.node_, b.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            Node* bn = b.node_.get();
            y.node_->backward_fn = [yn, an, bn, kind, sz]() {
                const S* g = yn->grad.data();
                switch (kind) {
                case Elementwise::add:
                    if (an->requires_grad)
                        for (std::size_t i = 0; i < sz; ++i) an->grad[i] += g[i];
                    if (bn->requires_grad)
                        for (std::size_t i = 0; i < sz; ++i) bn->grad[i] += g[i];
                    break;
                case Elementwise::sub:
                    if (an->requires_grad)
                        for (std::size_t i = 0; i < sz; ++i) an->grad[i] += g[i];
                    if (bn->requires_grad)
                        for (std::size_t i = 0; i < sz; ++i) bn->grad[i] -= g[i];
                    break;
                case Elementwise::mul:
                    if (an->requires_grad)
                        for (std::size_t i = 0; i < sz; ++i) an->grad[i] += g[i] * bn->values[i];
                    if (bn->requires_grad)
                        for (std::size_t i = 0; i < sz; ++i) bn->grad[i] += g[i] * an->values[i];
                    break;
                }
            };
        }
        return y;
    }

    Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::add); }
    Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::sub); }
    Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::mul); }

    /// The one permitted broadcast: add a 1 x n bias row to every row of a.
    Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
        if (bias.rows() != 1 || bias.cols() != a.cols()) {
            throw ShapeError("add_row_bias: bias " + bias.shape_str() + " does not match " +
                             a.shape_str());
        }
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<S> out(m * n);
        const S* av = a.values().data();
        const S* bv = bias.values().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
        Tensor y = make_node(m, n, std::move(out), {a.node_, bias.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            Node* bn = bias.node_.get();
            y.node_->backward_fn = [yn, an, bn, m, n]() {
                const S* g = yn->grad.data();
                if (an->requires_grad)
                    for (std::size_t i = 0; i < m * n; ++i) an->grad[i] += g[i];
                if (bn->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) bn->grad[j] += g[i * n + j];
            };
        }
        return y;
    }

    /// Multiply every row of a elementwise by a 1 x n row vector.
    Tensor mul_row(const Tensor& a, const Tensor& row) {
        if (row.rows() != 1 || row.cols() != a.cols()) {
            throw ShapeError("mul_row: row " + row.shape_str() + " does not match " +
                             a.shape_str());
        }
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<S> out(m * n);
        const S* av = a.values().data();
        const S* rv = row.values().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] * rv[j];
        Tensor y = make_node(m, n, std::move(out), {a.node_, row.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            Node* rn = row.node_.get();
            y.node_->backward_fn = [yn, an, rn, m, n]() {
                const S* g = yn->grad.data();
                if (an->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            an->grad[i * n + j] += g[i * n + j] * rn->values[j];
                if (rn->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            rn->grad[j] += g[i * n + j] * an->values[i * n + j];
            };
        }
        return y;
    }

    Tensor scale(const Tensor& a, S c) {
        const std::size_t sz = a.size();
        std::vector<S> out(sz);
        const S* av = a.values().data();
        for (std::size_t i = 0; i < sz; ++i) out[i] = av[i] * c;
        Tensor y = make_node(a.rows(), a.cols(), std::move(out), {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, c, sz]() {
                for (std::size_t i = 0; i < sz; ++i) an->grad[i] += yn->grad[i] * c;
            };
        }
        return y;
    }

    /// Row-wise softmax with per-row max subtraction.
    Tensor softmax_rows(const Tensor& a) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<S> out(m * n);
        const S* av = a.values().data();
        for (std::size_t i = 0; i < m; ++i) {
            const S* x = av + i * n;
            S mx = x[0];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            S sum = S(0);
            for (std::size_t j = 0; j < n; ++j) {
                const S e = std::exp(x[j] - mx);
                out[i * n + j] = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= inv;
        }
        Tensor y = make_node(m, n, std::move(out), {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, m, n]() {
                for (std::size_t i = 0; i < m; ++i) {
                    const S* g = yn->grad.data() + i * n;
                    const S* yv = yn->values.data() + i * n;
                    S dot = S(0);
                    for (std::size_t j = 0; j < n; ++j) dot += g[j] * yv[j];
                    S* ag = an->grad.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) ag[j] += yv[j] * (g[j] - dot);
                }
            };
        }
        return y;
    }

    /// Mean of the rows whose mask entry is 1; returns a 1 x d row.
    Tensor masked_mean_rows(const Tensor& h, const std::vector<std::uint8_t>& mask) {
        const std::size_t t = h.rows(), d = h.cols();
        if (mask.size() != t) {
            throw ShapeError("masked_mean_rows: mask length " + std::to_string(mask.size()) +
                             " for " + h.shape_str());
        }
        std::size_t count = 0;
        for (const auto mv : mask) count += (mv != 0);
        if (count == 0) throw DegenerateError("masked_mean_rows: all-zero mask");
        std::vector<S> out(d, S(0));
        const S* hv = h.values().data();
        for (std::size_t i = 0; i < t; ++i) {
            if (!mask[i]) continue;
            for (std::size_t j = 0; j < d; ++j) out[j] += hv[i * d + j];
        }
        const S inv = S(1) / static_cast<S>(count);
        for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
        Tensor y = make_node(1, d, std::move(out), {h.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* hn = h.node_.get();
            y.node_->backward_fn = [yn, hn, mask, t, d, inv]() {
                for (std::size_t i = 0; i < t; ++i) {
                    if (!mask[i]) continue;
                    for (std::size_t j = 0; j < d; ++j) hn->grad[i * d + j] += yn->grad[j] * inv;
                }
            };
        }
        return y;
    }

    /// Tanh-approximate GELU.
    Tensor gelu(const Tensor& a) {
        const std::size_t sz = a.size();
        const S c0 = static_cast<S>(0.7978845608028654); // sqrt(2/pi)
        const S c1 = static_cast<S>(0.044715);
        std::vector<S> out(sz);
        const S* av = a.values().data();
        for (std::size_t i = 0; i < sz; ++i) {
            const S x = av[i];
            const S u = c0 * (x + c1 * x * x * x);
            out[i] = S(0.5) * x * (S(1) + std::tanh(u));
        }
        Tensor y = make_node(a.rows(), a.cols(), std::move(out), {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, c0, c1, sz]() {
                for (std::size_t i = 0; i < sz; ++i) {
                    const S x = an->values[i];
                    const S u = c0 * (x + c1 * x * x * x);
                    const S th = std::tanh(u);
                    const S du = c0 * (S(1) + S(3) * c1 * x * x);
                    const S dy = S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * du;
                    an->grad[i] += yn->grad[i] * dy;
                }
            };
        }
        return y;
    }

    /// Per-row standardization: (x - mean) / sqrt(var + eps), population variance.
    Tensor layer_norm_rows(const Tensor& a, S eps) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<S> out(m * n);
        std::vector<S> inv_std(m);
        const S* av = a.values().data();
        for (std::size_t i = 0; i < m; ++i) {
            const S* x = av + i * n;
            S mean = S(0);
            for (std::size_t j = 0; j < n; ++j) mean += x[j];
            mean /= static_cast<S>(n);
            S var = S(0);
            for (std::size_t j = 0; j < n; ++j) {
                const S dxj = x[j] - mean;
                var += dxj * dxj;
            }
            var /= static_cast<S>(n);
            const S inv = S(1) / std::sqrt(var + eps);
            inv_std[i] = inv;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (x[j] - mean) * inv;
        }
        Tensor y = make_node(m, n, std::move(out), {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, inv_std = std::move(inv_std), m, n]() {
                for (std::size_t i = 0; i < m; ++i) {
                    const S* g = yn->grad.data() + i * n;
                    const S* yv = yn->values.data() + i * n;
                    S gmean = S(0), gymean = S(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        gmean += g[j];
                        gymean += g[j] * yv[j];
                    }
                    gmean /= static_cast<S>(n);
                    gymean /= static_cast<S>(n);
                    S* ag = an->grad.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j)
                        ag[j] += inv_std[i] * (g[j] - gmean - yv[j] * gymean);
                }
            };
        }
        return y;
    }

    /// Columns [c0, c1) of a.
    Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
        if (c0 >= c1 || c1 > a.cols()) {
            throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " +
                             std::to_string(c1) + ") out of " + a.shape_str());
        }
        const std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
        std::vector<S> out(m * w);
        const S* av = a.values().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * n + c0 + j];
        Tensor y = make_node(m, w, std::move(out), {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, m, n, w, c0]() {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        an->grad[i * n + c0 + j] += yn->grad[i * w + j];
            };
        }
        return y;
    }

    Tensor concat_cols(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw ShapeError("concat_cols: no parts");
        const std::size_t m = parts[0].rows();
        std::size_t n = 0;
        std::vector<std::shared_ptr<Node>> pn;
        for (const auto& p : parts) {
            if (p.rows() != m) throw ShapeError("concat_cols: row mismatch");
            n += p.cols();
            pn.push_back(p.node_);
        }
        std::vector<S> out(m * n);
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t w = p.cols();
            const S* pv = p.values().data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) out[i * n + off + j] = pv[i * w + j];
            off += w;
        }
        Tensor y = make_node(m, n, std::move(out), pn);
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            auto parents = y.node_->parents;
            y.node_->backward_fn = [yn, parents, m, n]() {
                std::size_t off = 0;
                for (const auto& p : parents) {
                    const std::size_t w = p->cols;
                    if (p->requires_grad) {
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < w; ++j)
                                p->grad[i * w + j] += yn->grad[i * n + off + j];
                    }
                    off += w;
                }
            };
        }
        return y;
    }

    /// Vertical concatenation of parts with equal column counts.
    Tensor stack_rows(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw ShapeError("stack_rows: no parts");
        const std::size_t n = parts[0].cols();
        std::size_t m = 0;
        std::vector<std::shared_ptr<Node>> pn;
        for (const auto& p : parts) {
            if (p.cols() != n) throw ShapeError("stack_rows: column mismatch");
            m += p.rows();
            pn.push_back(p.node_);
        }
        std::vector<S> out;
        out.reserve(m * n);
        for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
        Tensor y = make_node(m, n, std::move(out), pn);
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            auto parents = y.node_->parents;
            y.node_->backward_fn = [yn, parents, n]() {
                std::size_t row0 = 0;
                for (const auto& p : parents) {
                    if (p->requires_grad) {
                        for (std::size_t i = 0; i < p->rows * n; ++i)
                            p->grad[i] += yn->grad[row0 * n + i];
                    }
                    row0 += p->rows;
                }
            };
        }
        return y;
    }

    /// Gather rows of a table by integer index (embedding lookup).
    Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
        const std::size_t v = table.rows(), d = table.cols(), t = ids.size();
        if (t == 0) throw ShapeError("gather_rows: empty index list");
        for (const int id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= v) {
                throw ShapeError("gather_rows: index " + std::to_string(id) + " out of " +
                                 std::to_string(v) + " rows");
            }
        }
        std::vector<S> out(t * d);
        const S* tv = table.values().data();
        for (std::size_t i = 0; i < t; ++i) {
            const S* src = tv + static_cast<std::size_t>(ids[i]) * d;
            std::copy(src, src + d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
        Tensor y = make_node(t, d, std::move(out), {table.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* tn = table.node_.get();
            y.node_->backward_fn = [yn, tn, ids, d]() {
                for (std::size_t i = 0; i < ids.size(); ++i) {
                    S* dst = tn->grad.data() + static_cast<std::size_t>(ids[i]) * d;
                    const S* g = yn->grad.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
                }
            };
        }
        return y;
    }

    /// Scale each row to unit L2 norm. Zero-norm rows are an error.
    Tensor row_l2_normalize(const Tensor& a) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<S> out(m * n);
        std::vector<S> inv_norm(m);
        const S* av = a.values().data();
        for (std::size_t i = 0; i < m; ++i) {
            const S* x = av + i * n;
            S ss = S(0);
            for (std::size_t j = 0; j < n; ++j) ss += x[j] * x[j];
            const S norm = std::sqrt(ss);
            if (!(norm > S(0))) {
                throw NumericError("row_l2_normalize: zero-norm row " + std::to_string(i));
            }
            inv_norm[i] = S(1) / norm;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[j] * inv_norm[i];
        }
        Tensor y = make_node(m, n, std::move(out), {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, inv_norm = std::move(inv_norm), m, n]() {
                for (std::size_t i = 0; i < m; ++i) {
                    const S* g = yn->grad.data() + i * n;
                    const S* yv = yn->values.data() + i * n;
                    S dot = S(0);
                    for (std::size_t j = 0; j < n; ++j) dot += g[j] * yv[j];
                    S* ag = an->grad.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j)
                        ag[j] += (g[j] - yv[j] * dot) * inv_norm[i];
                }
            };
        }
        return y;
    }

    /// Per-row log(sum(exp(x))) with max subtraction; returns m x 1.
    Tensor logsumexp_rows(const Tensor& a) {
        const std::size_t m = a.rows(), n = a.cols();
        std::vector<S> out(m);
        const S* av = a.values().data();
        for (std::size_t i = 0; i < m; ++i) {
            const S* x = av + i * n;
            S mx = x[0];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            S sum = S(0);
            for (std::size_t j = 0; j < n; ++j) sum += std::exp(x[j] - mx);
            out[i] = mx + std::log(sum);
        }
        Tensor y = make_node(m, 1, std::move(out), {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, m, n]() {
                for (std::size_t i = 0; i < m; ++i) {
                    const S lse = yn->values[i];
                    const S g = yn->grad[i];
                    const S* x = an->values.data() + i * n;
                    S* ag = an->grad.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) ag[j] += g * std::exp(x[j] - lse);
                }
            };
        }
        return y;
    }

    /// Diagonal of a square matrix as an n x 1 column.
    Tensor diag(const Tensor& a) {
        if (a.rows() != a.cols()) throw ShapeError("diag: matrix " + a.shape_str() + " not square");
        const std::size_t n = a.rows();
        std::vector<S> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = a.at(i, i);
        Tensor y = make_node(n, 1, std::move(out), {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, n]() {
                for (std::size_t i = 0; i < n; ++i) an->grad[i * n + i] += yn->grad[i];
            };
        }
        return y;
    }

    /// Sum of all elements as a 1 x 1 scalar.
    Tensor sum(const Tensor& a) {
        const std::size_t sz = a.size();
        S total = S(0);
        const S* av = a.values().data();
        for (std::size_t i = 0; i < sz; ++i) total += av[i];
        Tensor y = make_node(1, 1, std::vector<S>{total}, {a.node_});
        if (y.requires_grad()) {
            Node* yn = y.node_.get();
            Node* an = a.node_.get();
            y.node_->backward_fn = [yn, an, sz]() {
                const S g = yn->grad[0];
                for (std::size_t i = 0; i < sz; ++i) an->grad[i] += g;
            };
        }
        return y;
    }

    /// Wrap a constant (no-grad) tensor so it participates in this graph's ops.
    Tensor constant(std::size_t rows, std::size_t cols, std::vector<S> values) {
        return Tensor::from_values(rows, cols, std::move(values), false);
    }

    /// Reverse-mode sweep from a scalar loss. Each recorded node is visited at
    /// most once; gradients accumulate into every reachable requires_grad leaf.
    void backward(const Tensor& loss) {
        if (!loss.valid() || loss.rows() != 1 || loss.cols() != 1) {
            throw ShapeError("backward: loss must be a 1x1 scalar, got " +
                             (loss.valid() ? loss.shape_str() : std::string("null")));
        }
        if (!loss.requires_grad()) {
            last_backward_visits_ = 0;
            return; // nothing trainable upstream
        }
        std::unordered_set<const Node*> reachable;
        mark_reachable(loss.node_.get(), reachable);
        loss.node_->grad[0] += S(1);
        std::size_t visits = 0;
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            Node* nd = it->get();
            if (!nd->backward_fn) continue;
            if (!nd->requires_grad) continue;
            if (reachable.find(nd) == reachable.end()) continue;
            nd->backward_fn();
            ++visits;
        }
        last_backward_visits_ = visits;
    }

    std::size_t op_count() const { return tape_.size(); }
    std::size_t last_backward_visits() const { return last_backward_visits_; }

    /// True when every recorded node's parents were created before it.
    bool check_topological() const {
        std::unordered_set<const Node*> seen;
        for (const auto& nd : tape_) {
            for (const auto& p : nd->parents) {
                if (p->backward_fn && seen.find(p.get()) == seen.end()) return false;
            }
            seen.insert(nd.get());
        }
        return true;
    }

private:
    std::vector<std::shared_ptr<Node>> tape_;
    std::size_t last_backward_visits_ = 0;

    Tensor make_node(std::size_t rows, std::size_t cols, std::vector<S> values,
                     std::vector<std::shared_ptr<Node>> parents) {
        bool rg = false;
        for (const auto& p : parents) rg = rg || p->requires_grad;
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->rows = rows;
        t.node_->cols = cols;
        t.node_->values = std::move(values);
        t.node_->requires_grad = rg;
        if (rg) t.node_->grad.assign(rows * cols, S(0));
        t.node_->parents = std::move(parents);
        tape_.push_back(t.node_);
        return t;
    }

    static void mark_reachable(const Node* from, std::unordered_set<const Node*>& seen) {
        std::vector<const Node*> stack{from};
        while (!stack.empty()) {
            const Node* nd = stack.back();
            stack.pop_back();
            if (!seen.insert(nd).second) continue;
            for (const auto& p : nd->parents) {
                if (p->requires_grad) stack.push_back(p.get());
            }
        }
    }
};

using Tensor = TensorT<float>;
using Graph = GraphT<float>;

} // namespace lacos
