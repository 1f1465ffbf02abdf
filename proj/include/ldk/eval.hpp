#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ldk/diffusion.hpp"
#include "ldk/nn.hpp"

namespace ldk {

// ---- pixel metrics ----

// 10 log10(peak^2 / MSE); identical inputs report the +infinity sentinel.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
    check_same_shape(a, b, "eval.psnr");
    LDK_CHECK(peak > 0.0, ErrKind::config, "eval.psnr", "peak must be positive");
    double mse = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

// Mean structural similarity over sliding window x window patches of every
// channel plane, with the standard stabilizers C1 = (0.01 peak)^2 and
// C2 = (0.03 peak)^2.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak, int window = 8) {
    check_same_shape(a, b, "eval.ssim");
    LDK_CHECK(peak > 0.0 && window >= 2, ErrKind::config, "eval.ssim",
              "peak must be positive and the window at least 2");
    LDK_CHECK(a.ndim() == 3 || a.ndim() == 4, ErrKind::shape, "eval.ssim",
              "expects CHW or NCHW");
    int H = a.dim(a.ndim() - 2), W = a.dim(a.ndim() - 1);
    LDK_CHECK(H >= window && W >= window, ErrKind::shape, "eval.ssim",
              "image smaller than the SSIM window");
    int planes = static_cast<int>(a.size() / (static_cast<int64_t>(H) * W));
    double c1 = 0.01 * peak * 0.01 * peak;
    double c2 = 0.03 * peak * 0.03 * peak;
    double total = 0.0;
    int64_t windows = 0;
    double inv_n = 1.0 / (window * window);
    for (int p = 0; p < planes; ++p) {
        const T* pa = a.data() + static_cast<int64_t>(p) * H * W;
        const T* pb = b.data() + static_cast<int64_t>(p) * H * W;
        for (int y = 0; y + window <= H; ++y)
            for (int x = 0; x + window <= W; ++x) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = 0; dy < window; ++dy)
                    for (int dx = 0; dx < window; ++dx) {
                        double va = pa[(y + dy) * W + x + dx];
                        double vb = pb[(y + dy) * W + x + dx];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                double mu_a = sa * inv_n, mu_b = sb * inv_n;
                double var_a = saa * inv_n - mu_a * mu_a;
                double var_b = sbb * inv_n - mu_b * mu_b;
                double cov = sab * inv_n - mu_a * mu_b;
                total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                ++windows;
            }
    }
    return total / static_cast<double>(windows);
}

// ---- fixed random feature extractor ----

// An untrained, seeded conv stack standing in for a pretrained perceptual
// network: scores computed with it are stable and comparable across runs of
// this toolkit, but are NOT comparable to any published FID numbers — hence
// the distinct name "feature-Frechet distance" (FFD) everywhere.
struct FeatureExtractorConfig {
    int in_ch = 3;
    std::vector<int> widths = {16, 32, 64, 128};  // one stride-2 stage each
    uint64_t seed = 0x1DDF;
};

template <class T>
struct FeatureExtractor {
    FeatureExtractorConfig cfg;
    ParamStore<T> params;

    int d_feat() const { return cfg.widths.back(); }
};

template <class T = float>
FeatureExtractor<T> make_feature_extractor(const FeatureExtractorConfig& cfg = {}) {
    LDK_CHECK(!cfg.widths.empty(), ErrKind::config, "eval.features", "widths must be non-empty");
    FeatureExtractor<T> fx;
    fx.cfg = cfg;
    Rng rng(cfg.seed, "feature_extractor");
    int cin = cfg.in_ch;
    for (size_t i = 0; i < cfg.widths.size(); ++i) {
        detail::create_conv(fx.params, rng, "fx.conv" + std::to_string(i), cin, cfg.widths[i], 3);
        cin = cfg.widths[i];
    }
    return fx;
}

// [N,C,H,W] -> [N,d_feat]: stride-2 convs with SiLU, then global average
// pooling per channel.
template <class T>
Tensor<T> extract_features(FeatureExtractor<T>& fx, const Tensor<T>& images) {
    LDK_CHECK(images.ndim() == 4 && images.dim(1) == fx.cfg.in_ch, ErrKind::shape,
              "eval.features",
              "expected [N," + std::to_string(fx.cfg.in_ch) + ",H,W], got " +
                  shape_str(images.shape()));
    int min_dim = 1 << static_cast<int>(fx.cfg.widths.size());
    LDK_CHECK(images.dim(2) >= min_dim && images.dim(3) >= min_dim, ErrKind::shape,
              "eval.features",
              "spatial dims must be at least " + std::to_string(min_dim));
    Graph<T> g(false);
    Var<T> h = g.constant(images);
    for (size_t i = 0; i < fx.cfg.widths.size(); ++i) {
        std::string stem = "fx.conv" + std::to_string(i);
        h = silu(conv2d(h, g.param(fx.params.at(stem + ".w")),
                        g.param(fx.params.at(stem + ".b")), 2));
    }
    const Tensor<T>& hv = h.val();
    int N = hv.dim(0), C = hv.dim(1);
    int64_t hw = static_cast<int64_t>(hv.dim(2)) * hv.dim(3);
    Tensor<T> out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const T* p = hv.data() + (static_cast<int64_t>(n) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) acc += p[i];
            out[static_cast<int64_t>(n) * C + c] = static_cast<T>(acc / hw);
        }
    return out;
}

// ---- Frechet feature distance ----

namespace detail {

struct FeatureMoments {
    Eigen::VectorXd mu;
    Eigen::MatrixXd cov;  // unbiased, with +1e-6 I shrinkage applied
};

template <class T>
FeatureMoments feature_moments(const Tensor<T>& feats) {
    int n = feats.dim(0), d = feats.dim(1);
    FeatureMoments m;
    m.mu = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = static_cast<double>(feats[i * d + j]);
    m.mu = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - m.mu.transpose();
    m.cov = centered.transpose() * centered / static_cast<double>(n - 1);
    m.cov.diagonal().array() += 1e-6;
    return m;
}

// sqrt of a symmetric PSD matrix, clamping tiny negative eigenvalues to 0.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

// d^2 = ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), computed in double
// regardless of the feature type. Requires d_feat + 1 samples per side so
// the shrunk covariances are well conditioned.
template <class T>
double frechet_feature_distance(const Tensor<T>& feats_a, const Tensor<T>& feats_b) {
    LDK_CHECK(feats_a.ndim() == 2 && feats_b.ndim() == 2 && feats_a.dim(1) == feats_b.dim(1),
              ErrKind::shape, "eval.ffd", "expects [N,d] feature matrices with equal d");
    int d = feats_a.dim(1);
    LDK_CHECK(feats_a.dim(0) >= d + 1 && feats_b.dim(0) >= d + 1, ErrKind::config, "eval.ffd",
              "need at least d_feat + 1 = " + std::to_string(d + 1) + " samples per set, got " +
                  std::to_string(feats_a.dim(0)) + " and " + std::to_string(feats_b.dim(0)));
    detail::FeatureMoments a = detail::feature_moments(feats_a);
    detail::FeatureMoments b = detail::feature_moments(feats_b);

    Eigen::MatrixXd sa = detail::psd_sqrt(a.cov);
    Eigen::MatrixXd m = sa * b.cov * sa;  // similar to S1 S2, symmetric by construction
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    LDK_CHECK(asym <= 1e-8 * scale, ErrKind::divergence, "eval.ffd",
              "matrix square root lost symmetry; covariance is ill-conditioned");
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    double tr_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double dist = (a.mu - b.mu).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, dist);  // exact-zero case can land at tiny negatives
}

template <class T>
double frechet_feature_distance(const Tensor<T>& images_a, const Tensor<T>& images_b,
                                FeatureExtractor<T>& fx) {
    Tensor<T> fa = extract_features(fx, images_a);
    Tensor<T> fb = extract_features(fx, images_b);
    return frechet_feature_distance(fa, fb);
}

// ---- throughput ----

struct MetricReport {
    std::string name;
    double value = 0.0;
    int64_t count = 0;
    uint64_t seed = 0;
    double wall_ms = 0.0;   // zeroed in deterministic mode
    double per_sec = 0.0;   // samples per second; zeroed in deterministic mode
};

// Times DDIM sampling at each step-count grid point. `score` (optional)
// turns the sampled batch into the report's metric value, e.g. an FFD
// against a reference set. Deterministic mode blanks the timing fields so
// reports are bit-reproducible.
template <class T>
std::vector<MetricReport> throughput(const DenoiserFn<T>& model, const Shape& shape,
                                     const NoiseSchedule& ns, const std::vector<int>& step_grid,
                                     int count, Rng rng, bool deterministic = false,
                                     const std::function<double(const std::vector<Tensor<T>>&)>&
                                         score = nullptr) {
    LDK_CHECK(count > 0, ErrKind::config, "eval.throughput", "sample count must be positive");
    LDK_CHECK(!step_grid.empty(), ErrKind::config, "eval.throughput", "step grid is empty");
    std::vector<MetricReport> out;
    for (int steps : step_grid) {
        std::vector<int> subset = ddim_subset(ns.T, steps);
        Rng r = rng.child("ddim_" + std::to_string(steps));
        auto start = std::chrono::steady_clock::now();
        std::vector<Tensor<T>> samples;
        samples.reserve(count);
        for (int i = 0; i < count; ++i)
            samples.push_back(sample_ddim(model, shape, ns, subset, 0.0, r));
        double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start)
                        .count();
        MetricReport rep;
        rep.name = "ddim_" + std::to_string(steps);
        rep.value = score ? score(samples) : 0.0;
        rep.count = count;
        rep.seed = rng.seed();
        if (!deterministic) {
            rep.wall_ms = ms;
            rep.per_sec = ms > 0.0 ? count / (ms / 1000.0) : 0.0;
        }
        out.push_back(std::move(rep));
    }
    return out;
}

}  // namespace ldk
