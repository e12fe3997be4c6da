#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "jmvl/common.hpp"

namespace jmvl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Named trainable array. Owned by networks; tapes reference it through leaf
/// nodes so gradients can be keyed back to it.
template <typename T>
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<T> value;

    Parameter() = default;
    Parameter(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)) {
        value.assign(shape_numel(shape), T(0));
    }
    std::size_t numel() const { return value.size(); }
};

enum class Op : std::uint8_t {
    leaf,
    constant,
    matmul,
    add,  // same shape, or [B,d] + [d] row broadcast
    mul,
    div,
    exp,
    log,
    sqrt,
    square,
    relu,
    sigmoid,
    softplus,
    softmax_rows,
    concat_cols,
    slice_cols,
    sum_all,
    sum_rows,
    mean_all,
    scale,       // x * c
    add_scalar,  // x + c
    clamp,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "constant";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::sqrt: return "sqrt";
        case Op::square: return "square";
        case Op::relu: return "relu";
        case Op::sigmoid: return "sigmoid";
        case Op::softplus: return "softplus";
        case Op::softmax_rows: return "softmax_rows";
        case Op::concat_cols: return "concat_cols";
        case Op::slice_cols: return "slice_cols";
        case Op::sum_all: return "sum_all";
        case Op::sum_rows: return "sum_rows";
        case Op::mean_all: return "mean_all";
        case Op::scale: return "scale";
        case Op::add_scalar: return "add_scalar";
        case Op::clamp: return "clamp";
    }
    return "?";
}

namespace detail {

// C[M,N] += A[M,K] * B[K,N]. Rows of C are independent, so a static OpenMP
// schedule stays bit-deterministic for any thread count.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T aik = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
    for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(k); ++p) {
        T* crow = c + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T apk = a[i * k + p];
            const T* brow = b + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += apk * brow[j];
        }
    }
}

template <typename T>
T stable_softplus(T x) {
    // max(x,0) + log1p(exp(-|x|))
    T m = x > T(0) ? x : T(0);
    return m + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
class Tape;

/// Handle to a node on a tape. Shape and values live in the tape record.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    const Shape& shape() const;
    const std::vector<T>& values() const;
    std::size_t numel() const { return values().size(); }
    std::size_t rank() const { return shape().size(); }
    T scalar_value() const {
        if (!shape().empty()) throw ShapeError("scalar_value on non-scalar tensor " + shape_str(shape()));
        return values()[0];
    }
    int id() const { return id_; }
    Tape<T>* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr && id_ >= 0; }

private:
    friend class Tape<T>;
    Tensor(Tape<T>* t, int id) : tape_(t), id_(id) {}
    Tape<T>* tape_ = nullptr;
    int id_ = -1;
};

/// Gradients from one backward pass, keyed by parameter. Parameters that did
/// not feed the loss read back as zeros.
template <typename T>
class GradMap {
public:
    const std::vector<T>& grad(const Parameter<T>& p) const {
        auto it = grads_.find(&p);
        if (it != grads_.end()) return it->second;
        zero_.assign(p.numel(), T(0));
        return zero_;
    }
    bool contains(const Parameter<T>& p) const { return grads_.count(&p) != 0; }
    std::size_t size() const { return grads_.size(); }

private:
    template <typename U>
    friend class Tape;
    std::unordered_map<const Parameter<T>*, std::vector<T>> grads_;
    mutable std::vector<T> zero_;
};

/// Append-only record of primitives. Node inputs always precede the node, so
/// tape order is a topological order; backward walks it once in reverse.
template <typename T>
class Tape {
public:
    Tensor<T> constant(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("constant: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
        Node n;
        n.op = Op::constant;
        n.shape = std::move(shape);
        n.value = std::move(data);
        return append(std::move(n));
    }

    Tensor<T> scalar(T v) { return constant(Shape{}, std::vector<T>{v}); }

    Tensor<T> leaf(Parameter<T>& p) {
        Node n;
        n.op = Op::leaf;
        n.shape = p.shape;
        n.value = p.value;
        n.param = &p;
        n.needs_grad = true;
        return append(std::move(n));
    }

    // ---- primitives ------------------------------------------------------

    Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
        check_mine(a), check_mine(b);
        const Shape &sa = a.shape(), &sb = b.shape();
        if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
            throw ShapeError(std::string("matmul: incompatible shapes ") + shape_str(sa) + " x " + shape_str(sb));
        return record(Op::matmul, a, b, Shape{sa[0], sb[1]});
    }

    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
        check_mine(a), check_mine(b);
        const Shape &sa = a.shape(), &sb = b.shape();
        bool same = sa == sb;
        bool rowb = sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0];
        if (!same && !rowb)
            throw ShapeError(std::string("add: shapes ") + shape_str(sa) + " and " + shape_str(sb) +
                             " are neither equal nor row-broadcastable");
        return record(Op::add, a, b, sa);
    }

    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary_same(Op::mul, a, b); }
    Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary_same(Op::div, a, b); }

    Tensor<T> exp(const Tensor<T>& a) { return unary(Op::exp, a); }
    Tensor<T> log(const Tensor<T>& a) { return unary(Op::log, a); }
    Tensor<T> sqrt(const Tensor<T>& a) { return unary(Op::sqrt, a); }
    Tensor<T> square(const Tensor<T>& a) { return unary(Op::square, a); }
    Tensor<T> relu(const Tensor<T>& a) { return unary(Op::relu, a); }
    Tensor<T> sigmoid(const Tensor<T>& a) { return unary(Op::sigmoid, a); }
    Tensor<T> softplus(const Tensor<T>& a) { return unary(Op::softplus, a); }

    Tensor<T> softmax_rows(const Tensor<T>& a) {
        check_mine(a);
        if (a.rank() != 2) throw ShapeError("softmax_rows: expected rank-2, got " + shape_str(a.shape()));
        return record(Op::softmax_rows, a, Tensor<T>{}, a.shape());
    }

    Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
        check_mine(a), check_mine(b);
        const Shape &sa = a.shape(), &sb = b.shape();
        if (sa.size() != 2 || sb.size() != 2 || sa[0] != sb[0])
            throw ShapeError(std::string("concat_cols: shapes ") + shape_str(sa) + " and " + shape_str(sb));
        return record(Op::concat_cols, a, b, Shape{sa[0], sa[1] + sb[1]});
    }

    Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
        check_mine(a);
        const Shape& sa = a.shape();
        if (sa.size() != 2 || c0 >= c1 || c1 > sa[1])
            throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") invalid for " + shape_str(sa));
        Node n;
        n.op = Op::slice_cols;
        n.a = a.id();
        n.i0 = c0;
        n.i1 = c1;
        n.shape = Shape{sa[0], c1 - c0};
        n.needs_grad = node(a.id()).needs_grad;
        return append_compute(std::move(n));
    }

    Tensor<T> sum_all(const Tensor<T>& a) {
        check_mine(a);
        return record(Op::sum_all, a, Tensor<T>{}, Shape{});
    }

    Tensor<T> sum_rows(const Tensor<T>& a) {
        check_mine(a);
        if (a.rank() != 2) throw ShapeError("sum_rows: expected rank-2, got " + shape_str(a.shape()));
        return record(Op::sum_rows, a, Tensor<T>{}, Shape{a.shape()[0]});
    }

    Tensor<T> mean_all(const Tensor<T>& a) {
        check_mine(a);
        return record(Op::mean_all, a, Tensor<T>{}, Shape{});
    }

    Tensor<T> scale(const Tensor<T>& a, T c) {
        check_mine(a);
        Node n;
        n.op = Op::scale;
        n.a = a.id();
        n.c0 = c;
        n.shape = a.shape();
        n.needs_grad = node(a.id()).needs_grad;
        return append_compute(std::move(n));
    }

    Tensor<T> add_scalar(const Tensor<T>& a, T c) {
        check_mine(a);
        Node n;
        n.op = Op::add_scalar;
        n.a = a.id();
        n.c0 = c;
        n.shape = a.shape();
        n.needs_grad = node(a.id()).needs_grad;
        return append_compute(std::move(n));
    }

    Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
        check_mine(a);
        if (!(lo < hi)) throw ShapeError("clamp: lo must be < hi");
        Node n;
        n.op = Op::clamp;
        n.a = a.id();
        n.c0 = lo;
        n.c1 = hi;
        n.shape = a.shape();
        n.needs_grad = node(a.id()).needs_grad;
        return append_compute(std::move(n));
    }

    // ---- reverse pass ----------------------------------------------------

    GradMap<T> backward(const Tensor<T>& loss) {
        check_mine(loss);
        if (!loss.shape().empty())
            throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
        GradMap<T> out;
        std::vector<std::vector<T>> grads(nodes_.size());
        grads[loss.id()] = {T(1)};
        for (int idx = loss.id(); idx >= 0; --idx) {
            Node& n = nodes_[idx];
            if (grads[idx].empty() || !n.needs_grad) continue;
            if (n.op == Op::leaf) {
                auto& g = out.grads_[n.param];
                if (g.empty()) g = std::move(grads[idx]);
                else
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += grads[idx][i];
                continue;
            }
            backward_node(n, grads[idx], grads);
        }
        return out;
    }

    /// Recomputes every recorded primitive from the stored leaf/constant
    /// values and reports whether all outputs match bit for bit.
    bool replay_matches() const {
        for (const Node& n : nodes_) {
            if (n.op == Op::leaf || n.op == Op::constant) continue;
            std::vector<T> v = compute_value(n);
            if (v != n.value) return false;
        }
        return true;
    }

    std::size_t size() const { return nodes_.size(); }

    const Shape& shape_of(int id) const { return nodes_[id].shape; }
    const std::vector<T>& values_of(int id) const { return nodes_[id].value; }

private:
    struct Node {
        Op op = Op::constant;
        int a = -1, b = -1;
        T c0 = 0, c1 = 0;
        std::size_t i0 = 0, i1 = 0;  // slice column range
        Shape shape;
        std::vector<T> value;
        Parameter<T>* param = nullptr;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;

    const Node& node(int id) const { return nodes_[id]; }

    void check_mine(const Tensor<T>& t) const {
        if (t.tape() != this || t.id() < 0 || t.id() >= static_cast<int>(nodes_.size()))
            throw Error("tensor does not belong to this tape");
    }

    Tensor<T> append(Node&& n) {
        nodes_.push_back(std::move(n));
        return Tensor<T>(this, static_cast<int>(nodes_.size()) - 1);
    }

    Tensor<T> append_compute(Node&& n) {
        n.value = compute_value(n);
        check_finite(n);
        return append(std::move(n));
    }

    Tensor<T> record(Op op, const Tensor<T>& a, const Tensor<T>& b, Shape out_shape) {
        Node n;
        n.op = op;
        n.a = a.id();
        n.b = b.valid() ? b.id() : -1;
        n.shape = std::move(out_shape);
        n.needs_grad = node(n.a).needs_grad || (n.b >= 0 && node(n.b).needs_grad);
        return append_compute(std::move(n));
    }

    Tensor<T> unary(Op op, const Tensor<T>& a) {
        check_mine(a);
        return record(op, a, Tensor<T>{}, a.shape());
    }

    Tensor<T> binary_same(Op op, const Tensor<T>& a, const Tensor<T>& b) {
        check_mine(a), check_mine(b);
        if (a.shape() != b.shape())
            throw ShapeError(std::string(op_name(op)) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
        return record(op, a, b, a.shape());
    }

    void check_finite(const Node& n) const {
        for (const T& v : n.value)
            if (!std::isfinite(v))
                throw NumericsError(std::string("op ") + op_name(n.op) + " produced a non-finite value");
    }

    std::vector<T> compute_value(const Node& n) const {
        const std::vector<T>* av = n.a >= 0 ? &nodes_[n.a].value : nullptr;
        const std::vector<T>* bv = n.b >= 0 ? &nodes_[n.b].value : nullptr;
        std::vector<T> out(shape_numel(n.shape), T(0));
        switch (n.op) {
            case Op::leaf:
            case Op::constant:
                return n.value;
            case Op::matmul: {
                const Shape& sa = nodes_[n.a].shape;
                detail::mm_nn(av->data(), bv->data(), out.data(), sa[0], sa[1], n.shape[1]);
                break;
            }
            case Op::add: {
                if (nodes_[n.a].shape == nodes_[n.b].shape) {
                    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] + (*bv)[i];
                } else {  // [B,d] + [d]
                    std::size_t d = nodes_[n.b].shape[0];
                    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] + (*bv)[i % d];
                }
                break;
            }
            case Op::mul:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] * (*bv)[i];
                break;
            case Op::div:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] / (*bv)[i];
                break;
            case Op::exp:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp((*av)[i]);
                break;
            case Op::log:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log((*av)[i]);
                break;
            case Op::sqrt:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt((*av)[i]);
                break;
            case Op::square:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] * (*av)[i];
                break;
            case Op::relu:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] > T(0) ? (*av)[i] : T(0);
                break;
            case Op::sigmoid:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid((*av)[i]);
                break;
            case Op::softplus:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_softplus((*av)[i]);
                break;
            case Op::softmax_rows: {
                std::size_t rows = n.shape[0], cols = n.shape[1];
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* in = av->data() + r * cols;
                    T* o = out.data() + r * cols;
                    T mx = in[0];
                    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
                    T sum = 0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        o[j] = std::exp(in[j] - mx);
                        sum += o[j];
                    }
                    for (std::size_t j = 0; j < cols; ++j) o[j] /= sum;
                }
                break;
            }
            case Op::concat_cols: {
                std::size_t rows = n.shape[0];
                std::size_t ca = nodes_[n.a].shape[1], cb = nodes_[n.b].shape[1];
                for (std::size_t r = 0; r < rows; ++r) {
                    std::copy_n(av->data() + r * ca, ca, out.data() + r * (ca + cb));
                    std::copy_n(bv->data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
                }
                break;
            }
            case Op::slice_cols: {
                std::size_t rows = n.shape[0], w = n.i1 - n.i0;
                std::size_t ca = nodes_[n.a].shape[1];
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(av->data() + r * ca + n.i0, w, out.data() + r * w);
                break;
            }
            case Op::sum_all: {
                T acc = 0;
                for (const T& v : *av) acc += v;
                out[0] = acc;
                break;
            }
            case Op::sum_rows: {
                std::size_t rows = n.shape[0];
                std::size_t cols = nodes_[n.a].shape[1];
                for (std::size_t r = 0; r < rows; ++r) {
                    T acc = 0;
                    const T* in = av->data() + r * cols;
                    for (std::size_t j = 0; j < cols; ++j) acc += in[j];
                    out[r] = acc;
                }
                break;
            }
            case Op::mean_all: {
                T acc = 0;
                for (const T& v : *av) acc += v;
                out[0] = acc / static_cast<T>(av->size());
                break;
            }
            case Op::scale:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] * n.c0;
                break;
            case Op::add_scalar:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] + n.c0;
                break;
            case Op::clamp:
                for (std::size_t i = 0; i < out.size(); ++i)
                    out[i] = std::min(std::max((*av)[i], n.c0), n.c1);
                break;
        }
        return out;
    }

    static std::vector<T>& touch(std::vector<std::vector<T>>& grads, int id, std::size_t numel) {
        if (grads[id].empty()) grads[id].assign(numel, T(0));
        return grads[id];
    }

    void backward_node(const Node& n, const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        const Node* na = n.a >= 0 ? &nodes_[n.a] : nullptr;
        const Node* nb = n.b >= 0 ? &nodes_[n.b] : nullptr;
        const std::vector<T>* av = na ? &na->value : nullptr;
        const std::vector<T>* bv = nb ? &nb->value : nullptr;
        bool wa = na && na->needs_grad;
        bool wb = nb && nb->needs_grad;
        switch (n.op) {
            case Op::leaf:
            case Op::constant:
                break;
            case Op::matmul: {
                std::size_t m = na->shape[0], k = na->shape[1], out_n = n.shape[1];
                if (wa) detail::mm_nt(g.data(), bv->data(), touch(grads, n.a, m * k).data(), m, out_n, k);
                if (wb) detail::mm_tn(av->data(), g.data(), touch(grads, n.b, k * out_n).data(), m, k, out_n);
                break;
            }
            case Op::add: {
                if (wa) {
                    auto& ga = touch(grads, n.a, av->size());
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (wb) {
                    auto& gb = touch(grads, n.b, bv->size());
                    if (na->shape == nb->shape) {
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    } else {
                        std::size_t d = nb->shape[0];
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                    }
                }
                break;
            }
            case Op::mul: {
                if (wa) {
                    auto& ga = touch(grads, n.a, av->size());
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bv)[i];
                }
                if (wb) {
                    auto& gb = touch(grads, n.b, bv->size());
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*av)[i];
                }
                break;
            }
            case Op::div: {
                if (wa) {
                    auto& ga = touch(grads, n.a, av->size());
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*bv)[i];
                }
                if (wb) {
                    auto& gb = touch(grads, n.b, bv->size());
                    for (std::size_t i = 0; i < g.size(); ++i)
                        gb[i] -= g[i] * (*av)[i] / ((*bv)[i] * (*bv)[i]);
                }
                break;
            }
            case Op::exp: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
                break;
            }
            case Op::log: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*av)[i];
                break;
            }
            case Op::sqrt: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * T(0.5) / n.value[i];
                break;
            }
            case Op::square: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * T(2) * (*av)[i];
                break;
            }
            case Op::relu: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i)
                    if ((*av)[i] > T(0)) ga[i] += g[i];
                break;
            }
            case Op::sigmoid: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i] * (T(1) - n.value[i]);
                break;
            }
            case Op::softplus: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * detail::stable_sigmoid((*av)[i]);
                break;
            }
            case Op::softmax_rows: {
                auto& ga = touch(grads, n.a, av->size());
                std::size_t rows = n.shape[0], cols = n.shape[1];
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* s = n.value.data() + r * cols;
                    const T* gr = g.data() + r * cols;
                    T dot = 0;
                    for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * s[j];
                    T* o = ga.data() + r * cols;
                    for (std::size_t j = 0; j < cols; ++j) o[j] += (gr[j] - dot) * s[j];
                }
                break;
            }
            case Op::concat_cols: {
                std::size_t rows = n.shape[0];
                std::size_t ca = na->shape[1], cb = nb->shape[1];
                if (wa) {
                    auto& ga = touch(grads, n.a, av->size());
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * (ca + cb) + j];
                }
                if (wb) {
                    auto& gb = touch(grads, n.b, bv->size());
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * (ca + cb) + ca + j];
                }
                break;
            }
            case Op::slice_cols: {
                auto& ga = touch(grads, n.a, av->size());
                std::size_t rows = n.shape[0], w = n.i1 - n.i0;
                std::size_t ca = na->shape[1];
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < w; ++j) ga[r * ca + n.i0 + j] += g[r * w + j];
                break;
            }
            case Op::sum_all: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                break;
            }
            case Op::sum_rows: {
                auto& ga = touch(grads, n.a, av->size());
                std::size_t rows = n.shape[0];
                std::size_t cols = na->shape[1];
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += g[r];
                break;
            }
            case Op::mean_all: {
                auto& ga = touch(grads, n.a, av->size());
                T inv = T(1) / static_cast<T>(av->size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * inv;
                break;
            }
            case Op::scale: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.c0;
                break;
            }
            case Op::add_scalar: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                break;
            }
            case Op::clamp: {
                auto& ga = touch(grads, n.a, av->size());
                for (std::size_t i = 0; i < g.size(); ++i)
                    if ((*av)[i] >= n.c0 && (*av)[i] <= n.c1) ga[i] += g[i];
                break;
            }
        }
    }
};

template <typename T>
const Shape& Tensor<T>::shape() const {
    return tape_->shape_of(id_);
}

template <typename T>
const std::vector<T>& Tensor<T>::values() const {
    return tape_->values_of(id_);
}

// Free-function spellings so expression code reads algebraically.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) { return a.tape()->matmul(a, b); }
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return a.tape()->add(a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return a.tape()->mul(a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return a.tape()->div(a, b); }
template <typename T> Tensor<T> exp(const Tensor<T>& a) { return a.tape()->exp(a); }
template <typename T> Tensor<T> log(const Tensor<T>& a) { return a.tape()->log(a); }
template <typename T> Tensor<T> sqrt(const Tensor<T>& a) { return a.tape()->sqrt(a); }
template <typename T> Tensor<T> square(const Tensor<T>& a) { return a.tape()->square(a); }
template <typename T> Tensor<T> relu(const Tensor<T>& a) { return a.tape()->relu(a); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a) { return a.tape()->sigmoid(a); }
template <typename T> Tensor<T> softplus(const Tensor<T>& a) { return a.tape()->softplus(a); }
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a) { return a.tape()->softmax_rows(a); }
template <typename T> Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) { return a.tape()->concat_cols(a, b); }
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) { return a.tape()->slice_cols(a, c0, c1); }
template <typename T> Tensor<T> sum_all(const Tensor<T>& a) { return a.tape()->sum_all(a); }
template <typename T> Tensor<T> sum_rows(const Tensor<T>& a) { return a.tape()->sum_rows(a); }
template <typename T> Tensor<T> mean_all(const Tensor<T>& a) { return a.tape()->mean_all(a); }
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c) { return a.tape()->scale(a, c); }
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c) { return a.tape()->add_scalar(a, c); }
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) { return a.tape()->clamp(a, lo, hi); }

}  // namespace jmvl
