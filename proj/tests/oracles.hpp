#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is deliberately written the slow, obvious way and must not
// call into the code paths under test.

#include <cmath>
#include <functional>
#include <vector>

#include "ldk/tensor.hpp"

namespace oracle {

inline double rel_err(double a, double b) {
    double d = std::abs(a - b);
    double n = std::abs(a) + std::abs(b);
    return n < 1e-300 ? d : d / n;
}

template <class T>
double tensor_rel_err(const ldk::Tensor<T>& a, const ldk::Tensor<T>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        diff += d * d;
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    double denom = std::sqrt(na) + std::sqrt(nb);
    return denom < 1e-300 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

// Central finite-difference gradient of a scalar-valued function w.r.t. the
// entries of `x` (mutated in place and restored).
template <class T, class F>
ldk::Tensor<T> fd_gradient(ldk::Tensor<T>& x, F eval, T h = T(1e-5)) {
    ldk::Tensor<T> grad(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        T keep = x[i];
        T step = h * std::max(T(1), std::abs(keep));
        x[i] = keep + step;
        double up = eval();
        x[i] = keep - step;
        double down = eval();
        x[i] = keep;
        grad[i] = static_cast<T>((up - down) / (2.0 * static_cast<double>(step)));
    }
    return grad;
}

// Plain quadruple-loop convolution, zero padding.
template <class T>
ldk::Tensor<T> conv2d_naive(const ldk::Tensor<T>& x, const ldk::Tensor<T>& w,
                            const ldk::Tensor<T>& b, int stride, int pad) {
    int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int OH = (H + 2 * pad - kh) / stride + 1;
    int OW = (W + 2 * pad - kw) / stride + 1;
    ldk::Tensor<T> out({N, Cout, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = b[co];
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                int iy = oy * stride - pad + ky;
                                int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += static_cast<double>(x.at4(n, ci, iy, ix)) *
                                       static_cast<double>(w.at4(co, ci, ky, kx));
                            }
                    out.at4(n, co, oy, ox) = static_cast<T>(acc);
                }
    return out;
}

// Direct softmax(Q K^T / sqrt(d)) V on row-major matrices.
template <class T>
ldk::Tensor<T> attention_naive(const ldk::Tensor<T>& q, const ldk::Tensor<T>& k,
                               const ldk::Tensor<T>& v) {
    int N = q.dim(0), d = q.dim(1), M = k.dim(0), dv = v.dim(1);
    ldk::Tensor<T> out({N, dv});
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < N; ++i) {
        std::vector<double> logits(M);
        double mx = -1e300;
        for (int j = 0; j < M; ++j) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c)
                dot += static_cast<double>(q[i * d + c]) * static_cast<double>(k[j * d + c]);
            logits[j] = dot * inv_sqrt_d;
            mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (int j = 0; j < M; ++j) {
            logits[j] = std::exp(logits[j] - mx);
            z += logits[j];
        }
        for (int c = 0; c < dv; ++c) {
            double acc = 0.0;
            for (int j = 0; j < M; ++j)
                acc += logits[j] / z * static_cast<double>(v[j * dv + c]);
            out[i * dv + c] = static_cast<T>(acc);
        }
    }
    return out;
}

// Exhaustive nearest-codebook search, lowest index wins ties.
inline int nearest_code_naive(const std::vector<double>& vec,
                              const std::vector<std::vector<double>>& codebook) {
    int best = 0;
    double best_d = 1e300;
    for (size_t k = 0; k < codebook.size(); ++k) {
        double d = 0.0;
        for (size_t c = 0; c < vec.size(); ++c) {
            double diff = vec[c] - codebook[k][c];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

}  // namespace oracle
