#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "ldk/graph.hpp"

namespace ldk {

// ---- bicubic resampling ----
//
// Catmull-Rom style cubic kernel (a = -0.5), separable, edge-replicated,
// with kernel-width scaling when minifying so downsampling is antialiased.
// The same tap tables drive both the plain tensor path and the autodiff op,
// so the guidance transform differentiates the exact resize used elsewhere.

namespace detail {

inline double cubic_kernel(double x) {
    const double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

}  // namespace detail

struct ResampleTap {
    int index;
    double weight;
};

// Weights along one axis for in_size -> out_size; each output coordinate
// gets a normalized list of source taps (edge-clamped).
inline std::vector<std::vector<ResampleTap>> bicubic_taps(int in_size, int out_size) {
    LDK_CHECK(in_size >= 1 && out_size >= 1, ErrKind::shape, "image.bicubic",
              "sizes must be positive");
    double scale = static_cast<double>(in_size) / out_size;
    double kscale = std::max(scale, 1.0);  // widen kernel when minifying
    int support = static_cast<int>(std::ceil(2.0 * kscale));
    std::vector<std::vector<ResampleTap>> taps(out_size);
    for (int i = 0; i < out_size; ++i) {
        double u = (i + 0.5) * scale - 0.5;
        int lo = static_cast<int>(std::floor(u)) - support + 1;
        int hi = static_cast<int>(std::floor(u)) + support;
        std::vector<double> dense(in_size, 0.0);
        double total = 0.0;
        for (int j = lo; j <= hi; ++j) {
            double w = detail::cubic_kernel((u - j) / kscale) / kscale;
            if (w == 0.0) continue;
            int jc = j < 0 ? 0 : (j >= in_size ? in_size - 1 : j);
            dense[jc] += w;
            total += w;
        }
        LDK_CHECK(total > 0.0, ErrKind::shape, "image.bicubic", "degenerate kernel row");
        for (int j = 0; j < in_size; ++j)
            if (dense[j] != 0.0) taps[i].push_back({j, dense[j] / total});
    }
    return taps;
}

namespace detail {

// Applies separable taps to one [H,W] plane.
template <class T>
void resample_plane(const T* src, int H, int W, const std::vector<std::vector<ResampleTap>>& ty,
                    const std::vector<std::vector<ResampleTap>>& tx, int OH, int OW, T* dst,
                    std::vector<double>& scratch) {
    scratch.assign(static_cast<size_t>(OH) * W, 0.0);
    for (int oy = 0; oy < OH; ++oy)
        for (const ResampleTap& t : ty[oy]) {
            const T* row = src + static_cast<int64_t>(t.index) * W;
            double* out = scratch.data() + static_cast<int64_t>(oy) * W;
            for (int x = 0; x < W; ++x) out[x] += t.weight * static_cast<double>(row[x]);
        }
    for (int oy = 0; oy < OH; ++oy) {
        const double* row = scratch.data() + static_cast<int64_t>(oy) * W;
        for (int ox = 0; ox < OW; ++ox) {
            double acc = 0.0;
            for (const ResampleTap& t : tx[ox]) acc += t.weight * row[t.index];
            dst[static_cast<int64_t>(oy) * OW + ox] = static_cast<T>(acc);
        }
    }
}

}  // namespace detail

// Resizes [C,H,W] or [N,C,H,W] to the given spatial size.
template <class T>
Tensor<T> bicubic_resize(const Tensor<T>& x, int OH, int OW) {
    LDK_CHECK(x.ndim() == 3 || x.ndim() == 4, ErrKind::shape, "image.bicubic",
              "expects CHW or NCHW, got " + shape_str(x.shape()));
    int H = x.dim(x.ndim() - 2), W = x.dim(x.ndim() - 1);
    int planes = static_cast<int>(x.size() / (static_cast<int64_t>(H) * W));
    auto ty = bicubic_taps(H, OH);
    auto tx = bicubic_taps(W, OW);
    Shape out_shape = x.shape();
    out_shape[x.ndim() - 2] = OH;
    out_shape[x.ndim() - 1] = OW;
    Tensor<T> out(out_shape);
    std::vector<double> scratch;
    for (int p = 0; p < planes; ++p)
        detail::resample_plane(x.data() + static_cast<int64_t>(p) * H * W, H, W, ty, tx, OH, OW,
                               out.data() + static_cast<int64_t>(p) * OH * OW, scratch);
    return out;
}

// Differentiable bicubic resize on [N,C,H,W]; backward scatters through the
// transposed taps.
template <class T>
Var<T> bicubic_resize_op(Var<T> x, int OH, int OW) {
    Graph<T>* g = x.g;
    const Tensor<T>& xv = x.val();
    LDK_CHECK(xv.ndim() == 4, ErrKind::shape, "image.bicubic", "op expects NCHW");
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor<T> out = bicubic_resize(xv, OH, OW);
    bool ng = g->needs_grad(x.id);
    std::function<void()> back;
    if (g->recording() && ng) {
        int xid = x.id;
        auto ty = std::make_shared<std::vector<std::vector<ResampleTap>>>(bicubic_taps(H, OH));
        auto tx = std::make_shared<std::vector<std::vector<ResampleTap>>>(bicubic_taps(W, OW));
        back = [g, xid, ty, tx, N, C, H, W, OH, OW, oid = static_cast<int>(g->num_nodes())]() {
            const Tensor<T>& go = g->grad(oid);
            Tensor<T>& gx = g->grad(xid);
            for (int p = 0; p < N * C; ++p) {
                const T* gout = go.data() + static_cast<int64_t>(p) * OH * OW;
                T* gin = gx.data() + static_cast<int64_t>(p) * H * W;
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        T v = gout[static_cast<int64_t>(oy) * OW + ox];
                        if (v == T(0)) continue;
                        for (const ResampleTap& a : (*ty)[oy])
                            for (const ResampleTap& b : (*tx)[ox])
                                gin[static_cast<int64_t>(a.index) * W + b.index] +=
                                    static_cast<T>(a.weight * b.weight) * v;
                    }
            }
        };
    }
    return g->make(std::move(out), ng, std::move(back));
}

// Nearest-neighbor resize for label maps (no new values introduced).
template <class T>
Tensor<T> nearest_resize(const Tensor<T>& x, int OH, int OW) {
    LDK_CHECK(x.ndim() == 3 || x.ndim() == 4, ErrKind::shape, "image.nearest",
              "expects CHW or NCHW");
    int H = x.dim(x.ndim() - 2), W = x.dim(x.ndim() - 1);
    int planes = static_cast<int>(x.size() / (static_cast<int64_t>(H) * W));
    Shape out_shape = x.shape();
    out_shape[x.ndim() - 2] = OH;
    out_shape[x.ndim() - 1] = OW;
    Tensor<T> out(out_shape);
    for (int p = 0; p < planes; ++p)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                int iy = std::min(H - 1, static_cast<int>((oy + 0.5) * H / OH));
                int ix = std::min(W - 1, static_cast<int>((ox + 0.5) * W / OW));
                out[(static_cast<int64_t>(p) * OH + oy) * OW + ox] =
                    x[(static_cast<int64_t>(p) * H + iy) * W + ix];
            }
    return out;
}

// ---- pixel value mapping ----

// [-1,1] float -> 8-bit, round half away from zero, clamped.
template <class T>
inline uint8_t to_u8(T v) {
    double scaled = (static_cast<double>(v) + 1.0) * 0.5 * 255.0;
    double rounded = scaled >= 0.0 ? std::floor(scaled + 0.5) : std::ceil(scaled - 0.5);
    if (rounded < 0.0) rounded = 0.0;
    if (rounded > 255.0) rounded = 255.0;
    return static_cast<uint8_t>(rounded);
}

template <class T>
inline T from_u8(uint8_t v) {
    return static_cast<T>(v / 255.0 * 2.0 - 1.0);
}

template <class T>
std::vector<uint8_t> image_to_bytes(const Tensor<T>& chw) {
    LDK_CHECK(chw.ndim() == 3 && chw.dim(0) == 3, ErrKind::shape, "image",
              "expects [3,H,W], got " + shape_str(chw.shape()));
    int H = chw.dim(1), W = chw.dim(2);
    std::vector<uint8_t> rgb(static_cast<size_t>(H) * W * 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<size_t>(y) * W + x) * 3 + c] = to_u8(chw.at3(c, y, x));
    return rgb;
}

template <class T>
Tensor<T> image_from_bytes(const std::vector<uint8_t>& rgb, int H, int W) {
    LDK_CHECK(rgb.size() == static_cast<size_t>(H) * W * 3, ErrKind::shape, "image",
              "byte count does not match dimensions");
    Tensor<T> out({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                out.at3(c, y, x) = from_u8<T>(rgb[(static_cast<size_t>(y) * W + x) * 3 + c]);
    return out;
}

}  // namespace ldk
