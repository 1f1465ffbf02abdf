#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ldk/tensor.hpp"

namespace ldk {

// Named trainable tensor. Gradients accumulate into `g` across backward
// passes until zero_grad().
template <class T>
struct Param {
    std::string name;
    Tensor<T> v;
    Tensor<T> g;

    Param() = default;
    Param(std::string n, Tensor<T> value) : name(std::move(n)), v(std::move(value)), g(v.shape()) {}

    void zero_grad() { g.fill(T(0)); }
};

template <class T>
struct Var;

// Reverse-mode tape over dense tensors. One Graph per forward pass; ops
// append nodes eagerly and (when recording) a backward closure that adds
// into the gradients of its inputs.
template <class T>
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    Var<T> constant(Tensor<T> v) { return make(std::move(v), false, nullptr); }
    Var<T> input(Tensor<T> v) { return make(std::move(v), true, nullptr); }

    Var<T> param(Param<T>& p) {
        int id = push(p.v, true, nullptr);
        if (recording_) {
            Param<T>* pp = &p;
            nodes_[id].back = [this, id, pp]() {
                const Tensor<T>& gd = nodes_[id].grad;
                for (int64_t i = 0; i < gd.size(); ++i) pp->g[i] += gd[i];
            };
        }
        return Var<T>{this, id};
    }

    const Tensor<T>& val(int id) const { return nodes_[id].value; }
    Tensor<T>& val_mut(int id) { return nodes_[id].value; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }

    Tensor<T>& grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    // Appends a node; `back` may be nullptr for leaves and constants.
    int push(Tensor<T> value, bool needs_grad, std::function<void()> back) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), needs_grad && recording_, std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Var<T> make(Tensor<T> value, bool needs_grad, std::function<void()> back) {
        return Var<T>{this, push(std::move(value), needs_grad, std::move(back))};
    }

    void backward(Var<T> loss) {
        LDK_CHECK(loss.g == this && nodes_[loss.id].value.size() == 1, ErrKind::shape, "graph",
                  "backward expects a scalar loss on this graph");
        grad(loss.id)[0] = T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.back && n.needs_grad && !n.grad.empty()) n.back();
        }
    }

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    bool recording_ = true;
};

template <class T>
struct Var {
    Graph<T>* g = nullptr;
    int id = -1;

    // Both references live inside the graph's node vector and are invalidated
    // by the next op pushed onto the graph; copy before building further.
    const Tensor<T>& val() const { return g->val(id); }
    const Shape& shape() const { return g->val(id).shape(); }
    bool valid() const { return g != nullptr; }
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
CMapMat<T> as_mat(const Tensor<T>& t, int rows, int cols) {
    return CMapMat<T>(t.data(), rows, cols);
}
template <class T>
MapMat<T> as_mat(Tensor<T>& t, int rows, int cols) {
    return MapMat<T>(t.data(), rows, cols);
}

}  // namespace detail

// ---- elementwise ----

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    Graph<T>* g = a.g;
    check_same_shape(a.val(), b.val(), "graph.add");
    Tensor<T> out = a.val() + b.val();
    bool ng = g->needs_grad(a.id) || g->needs_grad(b.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int aid = a.id, bid = b.id;
        back = [g, aid, bid, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            if (g->needs_grad(aid)) {
                Tensor<T>& ga = g->grad(aid);
                for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (g->needs_grad(bid)) {
                Tensor<T>& gb = g->grad(bid);
                for (int64_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    Graph<T>* g = a.g;
    check_same_shape(a.val(), b.val(), "graph.sub");
    Tensor<T> out = a.val() - b.val();
    bool ng = g->needs_grad(a.id) || g->needs_grad(b.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int aid = a.id, bid = b.id;
        back = [g, aid, bid, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            if (g->needs_grad(aid)) {
                Tensor<T>& ga = g->grad(aid);
                for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (g->needs_grad(bid)) {
                Tensor<T>& gb = g->grad(bid);
                for (int64_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    Graph<T>* g = a.g;
    check_same_shape(a.val(), b.val(), "graph.mul");
    Tensor<T> out(a.val().shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a.val()[i] * b.val()[i];
    bool ng = g->needs_grad(a.id) || g->needs_grad(b.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int aid = a.id, bid = b.id;
        back = [g, aid, bid, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            const Tensor<T>& av = g->val(aid);
            const Tensor<T>& bv = g->val(bid);
            if (g->needs_grad(aid)) {
                Tensor<T>& ga = g->grad(aid);
                for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
            }
            if (g->needs_grad(bid)) {
                Tensor<T>& gb = g->grad(bid);
                for (int64_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> scale(Var<T> x, T s) {
    Graph<T>* g = x.g;
    Tensor<T> out = x.val() * s;
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, s, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += s * go[i];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> add_scalar(Var<T> x, T c) {
    Graph<T>* g = x.g;
    Tensor<T> out = x.val();
    for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

namespace detail {

// Shared scaffolding for pointwise activations with derivative expressed in
// terms of input and output values.
template <class T, class F, class D>
Var<T> pointwise(Var<T> x, F f, D dfdx_from_x_y) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    Tensor<T> out(xv.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, dfdx_from_x_y, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            const Tensor<T>& xin = g->val(xid);
            const Tensor<T>& yout = g->val(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i] * dfdx_from_x_y(xin[i], yout[i]);
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

}  // namespace detail

template <class T>
Var<T> silu(Var<T> x) {
    return detail::pointwise(
        x, [](T v) { T s = T(1) / (T(1) + std::exp(-v)); return v * s; },
        [](T v, T) {
            T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) + v * (T(1) - s));
        });
}

template <class T>
Var<T> gelu(Var<T> x) {
    return detail::pointwise(
        x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(0.70710678118654752440))); },
        [](T v, T) {
            T c = T(0.70710678118654752440);
            T cdf = T(0.5) * (T(1) + std::erf(v * c));
            T pdf = T(0.39894228040143267794) * std::exp(T(-0.5) * v * v);
            return cdf + v * pdf;
        });
}

template <class T>
Var<T> relu(Var<T> x) {
    return detail::pointwise(x, [](T v) { return v > T(0) ? v : T(0); },
                             [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope) {
    return detail::pointwise(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                             [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Var<T> tanh_act(Var<T> x) {
    return detail::pointwise(x, [](T v) { return std::tanh(v); },
                             [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid_act(Var<T> x) {
    return detail::pointwise(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                             [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> exp_op(Var<T> x) {
    return detail::pointwise(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Var<T> abs_op(Var<T> x) {
    return detail::pointwise(x, [](T v) { return std::abs(v); },
                             [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Var<T> square(Var<T> x) {
    return detail::pointwise(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// ---- reductions ----

template <class T>
Var<T> sum_all(Var<T> x) {
    Graph<T>* g = x.g;
    T s = 0;
    const Tensor<T>& xv = x.val();
    for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, oid = static_cast<int>(g->num_nodes())]() {
            T go = g->grad(oid)[0];
            Tensor<T>& gx = g->grad(xid);
            for (int64_t i = 0; i < gx.size(); ++i) gx[i] += go;
        };
    }
    return g->make(Tensor<T>::scalar(s), ng, std::move(back));
}

template <class T>
Var<T> mean_all(Var<T> x) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    T inv = T(1) / static_cast<T>(xv.size());
    T s = 0;
    for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
    s *= inv;
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, inv, oid = static_cast<int>(g->num_nodes())]() {
            T go = g->grad(oid)[0] * inv;
            Tensor<T>& gx = g->grad(xid);
            for (int64_t i = 0; i < gx.size(); ++i) gx[i] += go;
        };
    }
    return g->make(Tensor<T>::scalar(s), ng, std::move(back));
}

// ---- shape ----

template <class T>
Var<T> reshape(Var<T> x, Shape s) {
    Graph<T>* g = x.g;
    Tensor<T> out = x.val().reshaped(s);
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> detach(Var<T> x) {
    return x.g->constant(x.val());
}

// Columns [c0, c1) of a row-major matrix [R, C].
template <class T>
Var<T> slice_cols(Var<T> x, int c0, int c1) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int R = xv.dim(0), C = xv.dim(1), W = c1 - c0;
    LDK_CHECK(c0 >= 0 && c1 <= C && W >= 1, ErrKind::shape, "graph.slice_cols", "bad column range");
    Tensor<T> out({R, W});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < W; ++c) out[r * W + c] = xv[r * C + c0 + c];
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, R, C, W, c0, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < W; ++c) gx[r * C + c0 + c] += go[r * W + c];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    LDK_CHECK(!parts.empty(), ErrKind::shape, "graph.concat_cols", "empty part list");
    Graph<T>* g = parts[0].g;
    int R = parts[0].val().dim(0);
    int C = 0;
    bool ng = false;
    for (const auto& p : parts) {
        LDK_CHECK(p.val().dim(0) == R, ErrKind::shape, "graph.concat_cols", "row mismatch");
        C += p.val().dim(1);
        ng = ng || g->needs_grad(p.id);
    }
    Tensor<T> out({R, C});
    int off = 0;
    for (const auto& p : parts) {
        int w = p.val().dim(1);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < w; ++c) out[r * C + off + c] = p.val()[r * w + c];
        off += w;
    }
    std::function<void()> back;
    if (g->recording() && ng) {
        std::vector<int> ids;
        std::vector<int> widths;
        for (const auto& p : parts) {
            ids.push_back(p.id);
            widths.push_back(p.val().dim(1));
        }
        back = [g, ids, widths, R, C, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            int off2 = 0;
            for (size_t k = 0; k < ids.size(); ++k) {
                int w = widths[k];
                if (g->needs_grad(ids[k])) {
                    Tensor<T>& gx = g->grad(ids[k]);
                    for (int r = 0; r < R; ++r)
                        for (int c = 0; c < w; ++c) gx[r * w + c] += go[r * C + off2 + c];
                }
                off2 += w;
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// ---- linear algebra ----

enum class MatOp { nn, nt, tn };  // C = A*B, A*B^T, A^T*B

template <class T>
Var<T> matmul(Var<T> a, Var<T> b, MatOp op = MatOp::nn) {
    Graph<T>* g = a.g;
    const Tensor<T>& av = a.val();
    const Tensor<T>& bv = b.val();
    LDK_CHECK(av.ndim() == 2 && bv.ndim() == 2, ErrKind::shape, "graph.matmul", "expects matrices");
    int m, k, n;
    if (op == MatOp::nn) {
        m = av.dim(0); k = av.dim(1); n = bv.dim(1);
        LDK_CHECK(bv.dim(0) == k, ErrKind::shape, "graph.matmul", "inner dim mismatch");
    } else if (op == MatOp::nt) {
        m = av.dim(0); k = av.dim(1); n = bv.dim(0);
        LDK_CHECK(bv.dim(1) == k, ErrKind::shape, "graph.matmul", "inner dim mismatch");
    } else {
        m = av.dim(1); k = av.dim(0); n = bv.dim(1);
        LDK_CHECK(bv.dim(0) == k, ErrKind::shape, "graph.matmul", "inner dim mismatch");
    }
    Tensor<T> out({m, n});
    {
        auto A = detail::as_mat(av, av.dim(0), av.dim(1));
        auto B = detail::as_mat(bv, bv.dim(0), bv.dim(1));
        auto C = detail::as_mat(out, m, n);
        if (op == MatOp::nn) C.noalias() = A * B;
        else if (op == MatOp::nt) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B;
    }
    bool ng = g->needs_grad(a.id) || g->needs_grad(b.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int aid = a.id, bid = b.id;
        back = [g, aid, bid, op, m, n, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            const Tensor<T>& av2 = g->val(aid);
            const Tensor<T>& bv2 = g->val(bid);
            auto dC = detail::as_mat(go, m, n);
            auto A = detail::as_mat(av2, av2.dim(0), av2.dim(1));
            auto B = detail::as_mat(bv2, bv2.dim(0), bv2.dim(1));
            if (g->needs_grad(aid)) {
                auto dA = detail::as_mat(g->grad(aid), av2.dim(0), av2.dim(1));
                if (op == MatOp::nn) dA.noalias() += dC * B.transpose();
                else if (op == MatOp::nt) dA.noalias() += dC * B;
                else dA.noalias() += B * dC.transpose();
            }
            if (g->needs_grad(bid)) {
                auto dB = detail::as_mat(g->grad(bid), bv2.dim(0), bv2.dim(1));
                if (op == MatOp::nn) dB.noalias() += A.transpose() * dC;
                else if (op == MatOp::nt) dB.noalias() += dC.transpose() * A;
                else dB.noalias() += A * dC;
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// x [R,C] + b [C]
template <class T>
Var<T> add_bias_cols(Var<T> x, Var<T> b) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    const Tensor<T>& bv = b.val();
    int R = xv.dim(0), C = xv.dim(1);
    LDK_CHECK(bv.size() == C, ErrKind::shape, "graph.add_bias_cols", "bias length mismatch");
    Tensor<T> out = xv;
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out[r * C + c] += bv[c];
    bool ng = g->needs_grad(x.id) || g->needs_grad(b.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id, bid = b.id;
        back = [g, xid, bid, R, C, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            if (g->needs_grad(xid)) {
                Tensor<T>& gx = g->grad(xid);
                for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (g->needs_grad(bid)) {
                Tensor<T>& gb = g->grad(bid);
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c) gb[c] += go[r * C + c];
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Row-wise softmax over [R,C].
template <class T>
Var<T> softmax_rows(Var<T> x) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int R = xv.dim(0), C = xv.dim(1);
    Tensor<T> out(xv.shape());
    for (int r = 0; r < R; ++r) {
        T mx = xv[r * C];
        for (int c = 1; c < C; ++c) mx = std::max(mx, xv[r * C + c]);
        T s = 0;
        for (int c = 0; c < C; ++c) {
            T e = std::exp(xv[r * C + c] - mx);
            out[r * C + c] = e;
            s += e;
        }
        T inv = T(1) / s;
        for (int c = 0; c < C; ++c) out[r * C + c] *= inv;
    }
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, R, C, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            const Tensor<T>& y = g->val(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int r = 0; r < R; ++r) {
                T dot = 0;
                for (int c = 0; c < C; ++c) dot += go[r * C + c] * y[r * C + c];
                for (int c = 0; c < C; ++c)
                    gx[r * C + c] += y[r * C + c] * (go[r * C + c] - dot);
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Row-wise layer normalization over [R,C] with per-column gain/bias.
template <class T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int R = xv.dim(0), C = xv.dim(1);
    LDK_CHECK(gain.val().size() == C && bias.val().size() == C, ErrKind::shape, "graph.layer_norm",
              "gain/bias length mismatch");
    Tensor<T> out(xv.shape());
    Tensor<T> xhat(xv.shape());
    Tensor<T> rstd({R});
    for (int r = 0; r < R; ++r) {
        T mu = 0;
        for (int c = 0; c < C; ++c) mu += xv[r * C + c];
        mu /= static_cast<T>(C);
        T var = 0;
        for (int c = 0; c < C; ++c) {
            T d = xv[r * C + c] - mu;
            var += d * d;
        }
        var /= static_cast<T>(C);
        T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (int c = 0; c < C; ++c) {
            T xh = (xv[r * C + c] - mu) * rs;
            xhat[r * C + c] = xh;
            out[r * C + c] = gain.val()[c] * xh + bias.val()[c];
        }
    }
    bool ng = g->needs_grad(x.id) || g->needs_grad(gain.id) || g->needs_grad(bias.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id, gid = gain.id, bid = bias.id;
        auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
        auto rs = std::make_shared<Tensor<T>>(std::move(rstd));
        back = [g, xid, gid, bid, xh, rs, R, C, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            const Tensor<T>& gainv = g->val(gid);
            if (g->needs_grad(gid)) {
                Tensor<T>& gg = g->grad(gid);
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c) gg[c] += go[r * C + c] * (*xh)[r * C + c];
            }
            if (g->needs_grad(bid)) {
                Tensor<T>& gb = g->grad(bid);
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c) gb[c] += go[r * C + c];
            }
            if (g->needs_grad(xid)) {
                Tensor<T>& gx = g->grad(xid);
                for (int r = 0; r < R; ++r) {
                    T sum_dxhat = 0, sum_dxhat_xhat = 0;
                    for (int c = 0; c < C; ++c) {
                        T dxh = go[r * C + c] * gainv[c];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * (*xh)[r * C + c];
                    }
                    T invC = T(1) / static_cast<T>(C);
                    for (int c = 0; c < C; ++c) {
                        T dxh = go[r * C + c] * gainv[c];
                        gx[r * C + c] += (*rs)[r] * (dxh - invC * sum_dxhat -
                                                     (*xh)[r * C + c] * invC * sum_dxhat_xhat);
                    }
                }
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Forward takes the value of `value_from`; backward passes the gradient to
// `x` unchanged. This is the straight-through estimator: the surrogate
// gradient for maps (like nearest-codebook rounding) whose true derivative
// is zero almost everywhere.
template <class T>
Var<T> straight_through(Var<T> x, Var<T> value_from) {
    Graph<T>* g = x.g;
    check_same_shape(x.val(), value_from.val(), "graph.straight_through");
    Tensor<T> out = value_from.val();
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        back = [g, xid = x.id, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Rows of `table` selected by ids; backward scatter-adds into the table.
template <class T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
    Graph<T>* g = table.g;
    const Tensor<T>& tv = table.val();
    int V = tv.dim(0), D = tv.dim(1);
    int M = static_cast<int>(ids.size());
    for (int id : ids)
        LDK_CHECK(id >= 0 && id < V, ErrKind::vocab, "graph.embedding",
                  "id " + std::to_string(id) + " out of range [0," + std::to_string(V) + ")");
    Tensor<T> out({M, D});
    for (int m = 0; m < M; ++m)
        for (int d = 0; d < D; ++d) out[m * D + d] = tv[ids[m] * D + d];
    bool ng = g->needs_grad(table.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int tid = table.id;
        back = [g, tid, ids, M, D, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gt = g->grad(tid);
            for (int m = 0; m < M; ++m)
                for (int d = 0; d < D; ++d) gt[ids[m] * D + d] += go[m * D + d];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Mean cross-entropy of logits [N,K] against integer labels.
template <class T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels) {
    Graph<T>* g = logits.g;
    const Tensor<T>& lv = logits.val();
    int N = lv.dim(0), K = lv.dim(1);
    LDK_CHECK(static_cast<int>(labels.size()) == N, ErrKind::shape, "graph.cross_entropy",
              "label count mismatch");
    Tensor<T> probs(lv.shape());
    T loss = 0;
    for (int n = 0; n < N; ++n) {
        T mx = lv[n * K];
        for (int k = 1; k < K; ++k) mx = std::max(mx, lv[n * K + k]);
        T s = 0;
        for (int k = 0; k < K; ++k) {
            T e = std::exp(lv[n * K + k] - mx);
            probs[n * K + k] = e;
            s += e;
        }
        T inv = T(1) / s;
        for (int k = 0; k < K; ++k) probs[n * K + k] *= inv;
        loss -= std::log(std::max(probs[n * K + labels[n]], T(1e-30)));
    }
    loss /= static_cast<T>(N);
    bool ng = g->needs_grad(logits.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int lid = logits.id;
        auto pr = std::make_shared<Tensor<T>>(std::move(probs));
        back = [g, lid, pr, labels, N, K, oid = static_cast<int>(g->num_nodes())]() {
            T go = g->grad(oid)[0] / static_cast<T>(N);
            Tensor<T>& gl = g->grad(lid);
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < K; ++k)
                    gl[n * K + k] += go * ((*pr)[n * K + k] - (k == labels[n] ? T(1) : T(0)));
        };
    }
    return g->make(Tensor<T>::scalar(loss), ng, std::move(back));
}

// ---- convenience compositions ----

template <class T>
Var<T> mse_loss(Var<T> a, Var<T> b) {
    return mean_all(square(sub(a, b)));
}

template <class T>
Var<T> l1_loss(Var<T> a, Var<T> b) {
    return mean_all(abs_op(sub(a, b)));
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {  // x [R,In] * w [In,Out] + b
    return add_bias_cols(matmul(x, w), b);
}

}  // namespace ldk
