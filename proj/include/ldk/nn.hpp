#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ldk/graph.hpp"
#include "ldk/rng.hpp"

namespace ldk {

// ---- parameter registry ----

// Owns parameters in insertion order (serialization order is the insertion
// order, so checkpoints are stable for a fixed architecture).
template <class T>
class ParamStore {
public:
    Param<T>& create(const std::string& name, Shape shape) {
        LDK_CHECK(!index_.count(name), ErrKind::config, "nn.params", "duplicate param " + name);
        params_.push_back(std::make_unique<Param<T>>(name, Tensor<T>(std::move(shape))));
        index_[name] = params_.size() - 1;
        return *params_.back();
    }

    Param<T>& at(const std::string& name) {
        auto it = index_.find(name);
        LDK_CHECK(it != index_.end(), ErrKind::checkpoint, "nn.params", "unknown param " + name);
        return *params_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    size_t size() const { return params_.size(); }
    Param<T>& operator[](size_t i) { return *params_[i]; }
    const Param<T>& operator[](size_t i) const { return *params_[i]; }

    int64_t num_scalars() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->v.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
    std::map<std::string, size_t> index_;
};

// ---- initialization ----

template <class T>
void init_normal(Param<T>& p, Rng& rng, T std_dev) {
    for (int64_t i = 0; i < p.v.size(); ++i) p.v[i] = static_cast<T>(rng.normal()) * std_dev;
}

// Kaiming-style fan-in scaling; fan_in passed explicitly because conv and
// linear weights pack dimensions differently.
template <class T>
void init_he(Param<T>& p, Rng& rng, int64_t fan_in) {
    T s = std::sqrt(T(2) / static_cast<T>(fan_in));
    init_normal(p, rng, s);
}

template <class T>
void init_zeros(Param<T>& p) {
    p.v.fill(T(0));
}

template <class T>
void init_ones(Param<T>& p) {
    p.v.fill(T(1));
}

// ---- NCHW graph ops ----

namespace detail {

// Shared builders for conv/norm parameter pairs under a common name stem.
template <class T>
void create_conv(ParamStore<T>& ps, Rng& rng, const std::string& stem, int cin, int cout, int k,
                 double gain = 1.0) {
    auto& w = ps.create(stem + ".w", {cout, cin, k, k});
    init_he(w, rng, static_cast<int64_t>(cin) * k * k);
    if (gain != 1.0)
        for (int64_t i = 0; i < w.v.size(); ++i) w.v[i] = static_cast<T>(w.v[i] * gain);
    init_zeros(ps.create(stem + ".b", {cout}));
}

template <class T>
void create_norm(ParamStore<T>& ps, const std::string& stem, int ch) {
    init_ones(ps.create(stem + ".g", {ch}));
    init_zeros(ps.create(stem + ".b", {ch}));
}

// Expands x[n] into columns [Cin*kh*kw, OH*OW] for a GEMM-based convolution.
template <class T>
void im2col(const Tensor<T>& x, int n, int kh, int kw, int stride, int pad, int oh, int ow,
            T* cols) {
    int C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const T* xp = x.data() + static_cast<int64_t>(n) * C * H * W;
    int64_t col = 0;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kx;
                        T v = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                  ? xp[(static_cast<int64_t>(c) * H + iy) * W + ix]
                                  : T(0);
                        cols[col * (static_cast<int64_t>(oh) * ow) + oy * ow + ox] = v;
                    }
                }
                ++col;
            }
}

// Transpose of im2col: scatter-adds columns back into dx[n].
template <class T>
void col2im_add(const T* cols, int n, int C, int H, int W, int kh, int kw, int stride, int pad,
                int oh, int ow, Tensor<T>& dx) {
    T* dp = dx.data() + static_cast<int64_t>(n) * C * H * W;
    int64_t col = 0;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        dp[(static_cast<int64_t>(c) * H + iy) * W + ix] +=
                            cols[col * (static_cast<int64_t>(oh) * ow) + oy * ow + ox];
                    }
                }
                ++col;
            }
}

}  // namespace detail

// 2-D convolution, x [N,Cin,H,W] * w [Cout,Cin,kh,kw] + b [Cout].
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride = 1, int pad = -1) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    const Tensor<T>& wv = w.val();
    LDK_CHECK(xv.ndim() == 4 && wv.ndim() == 4, ErrKind::shape, "nn.conv2d", "expects NCHW / OIHW");
    int N = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    LDK_CHECK(wv.dim(1) == Cin, ErrKind::shape, "nn.conv2d",
              "channel mismatch: input " + std::to_string(Cin) + " vs weight " +
                  std::to_string(wv.dim(1)));
    if (pad < 0) pad = kh / 2;  // "same" for odd kernels at stride 1
    int OH = (H + 2 * pad - kh) / stride + 1;
    int OW = (W + 2 * pad - kw) / stride + 1;
    LDK_CHECK(OH >= 1 && OW >= 1, ErrKind::shape, "nn.conv2d", "output collapsed to zero size");

    int K = Cin * kh * kw;
    int64_t P = static_cast<int64_t>(OH) * OW;
    Tensor<T> out({N, Cout, OH, OW});
    Tensor<T> cols({K, static_cast<int>(P)});
    const Tensor<T>& bv = b.val();
    LDK_CHECK(bv.size() == Cout, ErrKind::shape, "nn.conv2d", "bias length mismatch");
    {
        auto Wm = detail::as_mat(wv, Cout, K);
        for (int n = 0; n < N; ++n) {
            detail::im2col(xv, n, kh, kw, stride, pad, OH, OW, cols.data());
            auto Cm = detail::as_mat(cols, K, static_cast<int>(P));
            detail::MapMat<T> Om(out.data() + static_cast<int64_t>(n) * Cout * P, Cout,
                                 static_cast<int>(P));
            Om.noalias() = Wm * Cm;
            for (int c = 0; c < Cout; ++c) Om.row(c).array() += bv[c];
        }
    }
    bool ng = g->needs_grad(x.id) || g->needs_grad(w.id) || g->needs_grad(b.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id, wid = w.id, bid = b.id;
        back = [g, xid, wid, bid, N, Cin, H, W, Cout, kh, kw, stride, pad, OH, OW, K, P,
                oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            const Tensor<T>& xv2 = g->val(xid);
            const Tensor<T>& wv2 = g->val(wid);
            auto Wm = detail::as_mat(wv2, Cout, K);
            Tensor<T> cols({K, static_cast<int>(P)});
            Tensor<T> dcols({K, static_cast<int>(P)});
            bool need_x = g->needs_grad(xid);
            bool need_w = g->needs_grad(wid);
            bool need_b = g->needs_grad(bid);
            for (int n = 0; n < N; ++n) {
                detail::CMapMat<T> dOm(go.data() + static_cast<int64_t>(n) * Cout * P, Cout,
                                       static_cast<int>(P));
                if (need_b) {
                    Tensor<T>& gb = g->grad(bid);
                    for (int c = 0; c < Cout; ++c) gb[c] += dOm.row(c).sum();
                }
                if (need_w) {
                    detail::im2col(xv2, n, kh, kw, stride, pad, OH, OW, cols.data());
                    auto Cm = detail::as_mat(cols, K, static_cast<int>(P));
                    auto dWm = detail::as_mat(g->grad(wid), Cout, K);
                    dWm.noalias() += dOm * Cm.transpose();
                }
                if (need_x) {
                    auto dCm = detail::as_mat(dcols, K, static_cast<int>(P));
                    dCm.noalias() = Wm.transpose() * dOm;
                    detail::col2im_add(dcols.data(), n, Cin, H, W, kh, kw, stride, pad, OH, OW,
                                       g->grad(xid));
                }
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// x [N,C,H,W] -> [N,C,2H,2W] by pixel duplication.
template <class T>
Var<T> upsample_nearest2x(Var<T> x) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor<T> out({N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x2 = 0; x2 < W; ++x2) {
                    T v = xv.at4(n, c, y, x2);
                    out.at4(n, c, 2 * y, 2 * x2) = v;
                    out.at4(n, c, 2 * y, 2 * x2 + 1) = v;
                    out.at4(n, c, 2 * y + 1, 2 * x2) = v;
                    out.at4(n, c, 2 * y + 1, 2 * x2 + 1) = v;
                }
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, N, C, H, W, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < H; ++y)
                        for (int x2 = 0; x2 < W; ++x2)
                            gx.at4(n, c, y, x2) += go.at4(n, c, 2 * y, 2 * x2) +
                                                   go.at4(n, c, 2 * y, 2 * x2 + 1) +
                                                   go.at4(n, c, 2 * y + 1, 2 * x2) +
                                                   go.at4(n, c, 2 * y + 1, 2 * x2 + 1);
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Group normalization over NCHW with per-channel affine.
template <class T>
Var<T> group_norm(Var<T> x, Var<T> gain, Var<T> bias, int groups, T eps = T(1e-5)) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    LDK_CHECK(C % groups == 0, ErrKind::shape, "nn.group_norm",
              "channels " + std::to_string(C) + " not divisible by groups " + std::to_string(groups));
    LDK_CHECK(gain.val().size() == C && bias.val().size() == C, ErrKind::shape, "nn.group_norm",
              "affine length mismatch");
    int cpg = C / groups;
    int64_t m = static_cast<int64_t>(cpg) * H * W;
    Tensor<T> out(xv.shape());
    Tensor<T> xhat(xv.shape());
    Tensor<T> rstd({N, groups});
    const Tensor<T>& gv = gain.val();
    const Tensor<T>& bv = bias.val();
    for (int n = 0; n < N; ++n)
        for (int gi = 0; gi < groups; ++gi) {
            const T* base = xv.data() + ((static_cast<int64_t>(n) * C + gi * cpg) * H) * W;
            T mu = 0;
            for (int64_t i = 0; i < m; ++i) mu += base[i];
            mu /= static_cast<T>(m);
            T var = 0;
            for (int64_t i = 0; i < m; ++i) {
                T d = base[i] - mu;
                var += d * d;
            }
            var /= static_cast<T>(m);
            T rs = T(1) / std::sqrt(var + eps);
            rstd[n * groups + gi] = rs;
            int64_t off = (static_cast<int64_t>(n) * C + gi * cpg) * H * W;
            for (int c = 0; c < cpg; ++c) {
                T gn = gv[gi * cpg + c], bn = bv[gi * cpg + c];
                for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                    int64_t idx = off + c * static_cast<int64_t>(H) * W + i;
                    T xh = (xv[idx] - mu) * rs;
                    xhat[idx] = xh;
                    out[idx] = gn * xh + bn;
                }
            }
        }
    bool ng = g->needs_grad(x.id) || g->needs_grad(gain.id) || g->needs_grad(bias.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id, gid = gain.id, bid = bias.id;
        auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
        auto rs = std::make_shared<Tensor<T>>(std::move(rstd));
        back = [g, xid, gid, bid, xh, rs, N, C, H, W, groups, cpg, m,
                oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            const Tensor<T>& gv2 = g->val(gid);
            int64_t hw = static_cast<int64_t>(H) * W;
            if (g->needs_grad(gid) || g->needs_grad(bid)) {
                Tensor<T>& gg = g->grad(gid);
                Tensor<T>& gb = g->grad(bid);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
                        T sg = 0, sb = 0;
                        for (int64_t i = 0; i < hw; ++i) {
                            sg += go[off + i] * (*xh)[off + i];
                            sb += go[off + i];
                        }
                        gg[c] += sg;
                        gb[c] += sb;
                    }
            }
            if (g->needs_grad(xid)) {
                Tensor<T>& gx = g->grad(xid);
                T invm = T(1) / static_cast<T>(m);
                for (int n = 0; n < N; ++n)
                    for (int gi = 0; gi < groups; ++gi) {
                        int64_t off = (static_cast<int64_t>(n) * C + gi * cpg) * hw;
                        T sum_dxh = 0, sum_dxh_xh = 0;
                        for (int c = 0; c < cpg; ++c) {
                            T gn = gv2[gi * cpg + c];
                            for (int64_t i = 0; i < hw; ++i) {
                                int64_t idx = off + c * hw + i;
                                T dxh = go[idx] * gn;
                                sum_dxh += dxh;
                                sum_dxh_xh += dxh * (*xh)[idx];
                            }
                        }
                        T r = (*rs)[n * groups + gi];
                        for (int c = 0; c < cpg; ++c) {
                            T gn = gv2[gi * cpg + c];
                            for (int64_t i = 0; i < hw; ++i) {
                                int64_t idx = off + c * hw + i;
                                T dxh = go[idx] * gn;
                                gx[idx] += r * (dxh - invm * sum_dxh -
                                                (*xh)[idx] * invm * sum_dxh_xh);
                            }
                        }
                    }
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// x [N,C,H,W] + v [N,C] broadcast over spatial dims (time-embedding inject).
template <class T>
Var<T> add_channel_vec(Var<T> x, Var<T> v) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    const Tensor<T>& vv = v.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    LDK_CHECK(vv.ndim() == 2 && vv.dim(0) == N && vv.dim(1) == C, ErrKind::shape,
              "nn.add_channel_vec", "vector shape mismatch");
    Tensor<T> out = xv;
    int64_t hw = static_cast<int64_t>(H) * W;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T a = vv[n * C + c];
            int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) out[off + i] += a;
        }
    bool ng = g->needs_grad(x.id) || g->needs_grad(v.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id, vid = v.id;
        back = [g, xid, vid, N, C, hw, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            if (g->needs_grad(xid)) {
                Tensor<T>& gx = g->grad(xid);
                for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (g->needs_grad(vid)) {
                Tensor<T>& gv = g->grad(vid);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
                        T s = 0;
                        for (int64_t i = 0; i < hw; ++i) s += go[off + i];
                        gv[n * C + c] += s;
                    }
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
    Graph<T>* g = a.g;
    const Tensor<T>& av = a.val();
    const Tensor<T>& bv = b.val();
    int N = av.dim(0), Ca = av.dim(1), H = av.dim(2), W = av.dim(3);
    int Cb = bv.dim(1);
    LDK_CHECK(bv.dim(0) == N && bv.dim(2) == H && bv.dim(3) == W, ErrKind::shape,
              "nn.concat_channels", "spatial/batch mismatch");
    Tensor<T> out({N, Ca + Cb, H, W});
    int64_t hw = static_cast<int64_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::copy(av.data() + n * Ca * hw, av.data() + (n + 1) * Ca * hw,
                  out.data() + static_cast<int64_t>(n) * (Ca + Cb) * hw);
        std::copy(bv.data() + n * Cb * hw, bv.data() + (n + 1) * Cb * hw,
                  out.data() + static_cast<int64_t>(n) * (Ca + Cb) * hw + Ca * hw);
    }
    bool ng = g->needs_grad(a.id) || g->needs_grad(b.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int aid = a.id, bid = b.id;
        back = [g, aid, bid, N, Ca, Cb, hw, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            for (int n = 0; n < N; ++n) {
                int64_t off = static_cast<int64_t>(n) * (Ca + Cb) * hw;
                if (g->needs_grad(aid)) {
                    Tensor<T>& ga = g->grad(aid);
                    for (int64_t i = 0; i < Ca * hw; ++i) ga[n * Ca * hw + i] += go[off + i];
                }
                if (g->needs_grad(bid)) {
                    Tensor<T>& gb = g->grad(bid);
                    for (int64_t i = 0; i < Cb * hw; ++i)
                        gb[n * Cb * hw + i] += go[off + Ca * hw + i];
                }
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Channels [c0, c1) of NCHW input.
template <class T>
Var<T> slice_channels(Var<T> x, int c0, int c1) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    LDK_CHECK(c0 >= 0 && c1 <= C && c1 > c0, ErrKind::shape, "nn.slice_channels",
              "bad channel range");
    int Cs = c1 - c0;
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor<T> out({N, Cs, H, W});
    for (int n = 0; n < N; ++n)
        std::copy(xv.data() + (static_cast<int64_t>(n) * C + c0) * hw,
                  xv.data() + (static_cast<int64_t>(n) * C + c1) * hw,
                  out.data() + static_cast<int64_t>(n) * Cs * hw);
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, N, C, Cs, c0, hw, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int n = 0; n < N; ++n)
                for (int64_t i = 0; i < Cs * hw; ++i)
                    gx[(static_cast<int64_t>(n) * C + c0) * hw + i] += go[n * Cs * hw + i];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// [N,C,H,W] -> [N,C] spatial mean.
template <class T>
Var<T> global_avg_pool(Var<T> x) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int64_t hw = static_cast<int64_t>(H) * W;
    T inv = T(1) / static_cast<T>(hw);
    Tensor<T> out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
            T s = 0;
            for (int64_t i = 0; i < hw; ++i) s += xv[off + i];
            out[n * C + c] = s * inv;
        }
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, N, C, hw, inv, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    T a = go[n * C + c] * inv;
                    int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) gx[off + i] += a;
                }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Tokens for attention: [N,C,H,W] -> [N*H*W, C], sample-major then
// scanline-major. rows_to_nchw is its inverse.
template <class T>
Var<T> nchw_to_rows(Var<T> x) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor<T> out({static_cast<int>(N * hw), C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i)
                out[(n * hw + i) * C + c] = xv[(static_cast<int64_t>(n) * C + c) * hw + i];
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, N, C, hw, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int64_t i = 0; i < hw; ++i)
                        gx[(static_cast<int64_t>(n) * C + c) * hw + i] += go[(n * hw + i) * C + c];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> rows_to_nchw(Var<T> x, int N, int C, int H, int W) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int64_t hw = static_cast<int64_t>(H) * W;
    LDK_CHECK(xv.dim(0) == N * hw && xv.dim(1) == C, ErrKind::shape, "nn.rows_to_nchw",
              "row count mismatch");
    Tensor<T> out({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i)
                out[(static_cast<int64_t>(n) * C + c) * hw + i] = xv[(n * hw + i) * C + c];
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, N, C, hw, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int64_t i = 0; i < hw; ++i)
                        gx[(n * hw + i) * C + c] += go[(static_cast<int64_t>(n) * C + c) * hw + i];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Rows [r0, r1) of a matrix [R,C].
template <class T>
Var<T> slice_rows(Var<T> x, int r0, int r1) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    int R = xv.dim(0), C = xv.dim(1);
    LDK_CHECK(r0 >= 0 && r1 <= R && r1 > r0, ErrKind::shape, "nn.slice_rows", "bad row range");
    int Rs = r1 - r0;
    Tensor<T> out({Rs, C});
    std::copy(xv.data() + static_cast<int64_t>(r0) * C, xv.data() + static_cast<int64_t>(r1) * C,
              out.data());
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        back = [g, xid, r0, Rs, C, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int64_t i = 0; i < static_cast<int64_t>(Rs) * C; ++i)
                gx[static_cast<int64_t>(r0) * C + i] += go[i];
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    LDK_CHECK(!parts.empty(), ErrKind::shape, "nn.concat_rows", "empty part list");
    Graph<T>* g = parts[0].g;
    int C = parts[0].val().dim(1);
    int R = 0;
    bool ng = false;
    for (const auto& p : parts) {
        LDK_CHECK(p.val().dim(1) == C, ErrKind::shape, "nn.concat_rows", "column mismatch");
        R += p.val().dim(0);
        ng = ng || g->needs_grad(p.id);
    }
    Tensor<T> out({R, C});
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.val().data(), p.val().data() + p.val().size(), out.data() + off);
        off += p.val().size();
    }
    std::function<void()> back;
    if (g->recording() && ng) {
        std::vector<int> ids;
        std::vector<int64_t> sizes;
        for (const auto& p : parts) {
            ids.push_back(p.id);
            sizes.push_back(p.val().size());
        }
        back = [g, ids, sizes, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            int64_t off2 = 0;
            for (size_t k = 0; k < ids.size(); ++k) {
                if (g->needs_grad(ids[k])) {
                    Tensor<T>& gx = g->grad(ids[k]);
                    for (int64_t i = 0; i < sizes[k]; ++i) gx[i] += go[off2 + i];
                }
                off2 += sizes[k];
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// ---- optimizer ----

// Adam with bias correction. State lives beside the store so a fresh
// optimizer restarts cleanly from a loaded checkpoint.
template <class T>
class Adam {
public:
    Adam(ParamStore<T>& store, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : store_(store), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.resize(store.size());
        v_.resize(store.size());
        for (size_t i = 0; i < store.size(); ++i) {
            m_[i] = Tensor<T>(store[i].v.shape());
            v_[i] = Tensor<T>(store[i].v.shape());
        }
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }
    int64_t step_count() const { return t_; }

    void step() {
        ++t_;
        T c1 = T(1) - std::pow(b1_, static_cast<T>(t_));
        T c2 = T(1) - std::pow(b2_, static_cast<T>(t_));
        for (size_t i = 0; i < store_.size(); ++i) {
            Param<T>& p = store_[i];
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (int64_t j = 0; j < p.v.size(); ++j) {
                T gj = p.g[j];
                m[j] = b1_ * m[j] + (T(1) - b1_) * gj;
                v[j] = b2_ * v[j] + (T(1) - b2_) * gj * gj;
                T mh = m[j] / c1;
                T vh = v[j] / c2;
                p.v[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

private:
    ParamStore<T>& store_;
    T lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

}  // namespace ldk
