#pragma once

#include <functional>
#include <vector>

#include "ldk/rng.hpp"
#include "ldk/schedule.hpp"
#include "ldk/tensor.hpp"

namespace ldk {

// Noise-prediction model: (x_t, t) -> eps_hat of the same shape. Conditioning
// and guidance are closed over by the caller, keeping the samplers generic.
template <class T>
using DenoiserFn = std::function<Tensor<T>(const Tensor<T>&, int)>;

// x_t = alpha_t * x0 + sigma_t * eps
template <class T>
Tensor<T> forward_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                         const NoiseSchedule& ns) {
    check_same_shape(x0, eps, "diffusion.forward_sample");
    T a = static_cast<T>(ns.alpha(t));
    T s = static_cast<T>(ns.sigma(t));
    Tensor<T> out(x0.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

// Inverts the eps parameterization: x0_hat = (x_t - sigma_t * eps_hat) / alpha_t
template <class T>
Tensor<T> predict_x0_from_eps(const Tensor<T>& xt, const Tensor<T>& eps_hat, int t,
                              const NoiseSchedule& ns) {
    check_same_shape(xt, eps_hat, "diffusion.predict_x0_from_eps");
    double a = ns.alpha(t);
    LDK_CHECK(a > 0.0, ErrKind::degenerate_step, "diffusion",
              "alpha_t = 0 at t=" + std::to_string(t) + ": x0 not recoverable");
    T inv_a = static_cast<T>(1.0 / a);
    T s = static_cast<T>(ns.sigma(t));
    Tensor<T> out(xt.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = (xt[i] - s * eps_hat[i]) * inv_a;
    return out;
}

template <class T>
struct PosteriorParams {
    Tensor<T> mean;
    double variance;
};

// Gaussian parameters of p(x_{t-1} | x_t) with x0 replaced by x0_hat:
// mean = coef_xt * x_t + coef_x0 * x0_hat, fixed variance from the schedule.
template <class T>
PosteriorParams<T> posterior_mean_variance(const Tensor<T>& xt, const Tensor<T>& x0_hat, int t,
                                           const NoiseSchedule& ns) {
    check_same_shape(xt, x0_hat, "diffusion.posterior_mean_variance");
    PosteriorCoeffs pc = ns.posterior(t - 1, t);
    T cxt = static_cast<T>(pc.coef_xt);
    T cx0 = static_cast<T>(pc.coef_x0);
    Tensor<T> mean(xt.shape());
    for (int64_t i = 0; i < mean.size(); ++i) mean[i] = cxt * xt[i] + cx0 * x0_hat[i];
    return {std::move(mean), pc.variance};
}

// Mean squared error between eps and the model prediction at
// x_t = forward_sample(x0, t, eps).
template <class T>
double loss_simple(const DenoiserFn<T>& model, const Tensor<T>& x0, int t, const Tensor<T>& eps,
                   const NoiseSchedule& ns) {
    Tensor<T> xt = forward_sample(x0, t, eps, ns);
    Tensor<T> pred = model(xt, t);
    check_same_shape(eps, pred, "diffusion.loss_simple");
    double acc = 0.0;
    for (int64_t i = 0; i < eps.size(); ++i) {
        double d = static_cast<double>(eps[i]) - static_cast<double>(pred[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(eps.size());
}

struct ElboReport {
    std::vector<double> terms;       // terms[t-1] for t = 1..T (sum-norm, nats)
    std::vector<double> std_errors;  // Monte-Carlo SE per term
    double prior = 0.0;              // KL(q(x_T|x0) || N(0,I)), closed form

    double total() const {
        double s = prior;
        for (double v : terms) s += v;
        return s;
    }
    double total_std_error() const {
        double v = 0.0;
        for (double se : std_errors) v += se * se;
        return std::sqrt(v);
    }
};

// Stratified Monte-Carlo estimate of the per-step ELBO terms
// term_t = E[ 0.5 * (SNR(t-1) - SNR(t)) * ||x0 - x_theta(x_t, t)||^2 ]
// plus the closed-form prior KL. The t=1 reverse transition has zero
// posterior variance under the sigma_0 = 0 convention (both q and p collapse
// to point masses), so its KL contribution is reported as 0.
template <class T>
ElboReport elbo_terms(const DenoiserFn<T>& model, const Tensor<T>& x0, const NoiseSchedule& ns,
                      int n_mc, Rng& rng) {
    LDK_CHECK(n_mc >= 1, ErrKind::config, "diffusion.elbo", "n_mc must be >= 1");
    ElboReport rep;
    rep.terms.assign(ns.T, 0.0);
    rep.std_errors.assign(ns.T, 0.0);
    for (int t = 2; t <= ns.T; ++t) {
        double w = 0.5 * (ns.snr(t - 1) - ns.snr(t));
        double sum = 0.0, sum_sq = 0.0;
        for (int k = 0; k < n_mc; ++k) {
            Tensor<T> eps(x0.shape());
            for (int64_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<T>(rng.normal());
            Tensor<T> xt = forward_sample(x0, t, eps, ns);
            Tensor<T> x0_hat = predict_x0_from_eps(xt, model(xt, t), t, ns);
            double sq = 0.0;
            for (int64_t i = 0; i < x0.size(); ++i) {
                double d = static_cast<double>(x0[i]) - static_cast<double>(x0_hat[i]);
                sq += d * d;
            }
            double v = w * sq;
            sum += v;
            sum_sq += v * v;
        }
        double mean = sum / n_mc;
        rep.terms[t - 1] = mean;
        if (n_mc > 1) {
            double var = (sum_sq - sum * sum / n_mc) / (n_mc - 1);
            if (var < 0.0) var = 0.0;
            rep.std_errors[t - 1] = std::sqrt(var / n_mc);
        }
    }
    double aT = ns.alpha(ns.T), sT = ns.sigma(ns.T);
    LDK_CHECK(sT > 0.0, ErrKind::infinite_snr, "diffusion.elbo",
              "prior KL needs sigma_T > 0");
    double s2 = sT * sT;
    double prior = 0.0;
    for (int64_t i = 0; i < x0.size(); ++i) {
        double m = aT * static_cast<double>(x0[i]);
        prior += 0.5 * (m * m + s2 - 1.0 - std::log(s2));
    }
    rep.prior = prior;
    return rep;
}

namespace detail {

template <class T>
void check_sample_finite(const Tensor<T>& x, int t, const char* where) {
    if (!x.all_finite())
        fail(ErrKind::divergence, where,
             "non-finite sample state at step t=" + std::to_string(t));
}

}  // namespace detail

// Ancestral reverse sampling from t=T down to 0. x_init (defaults to
// N(0,I)) allows oracle tests to start from a known terminal state.
template <class T>
Tensor<T> sample_ancestral(const DenoiserFn<T>& model, const Shape& shape,
                           const NoiseSchedule& ns, Rng& rng,
                           const Tensor<T>* x_init = nullptr) {
    Tensor<T> x = x_init ? *x_init : rng.normal_tensor<T>(shape);
    LDK_CHECK(x.shape() == shape, ErrKind::shape, "diffusion.sample_ancestral",
              "x_init shape mismatch");
    for (int t = ns.T; t >= 1; --t) {
        Tensor<T> eps_hat = model(x, t);
        Tensor<T> x0_hat = predict_x0_from_eps(x, eps_hat, t, ns);
        PosteriorParams<T> post = posterior_mean_variance(x, x0_hat, t, ns);
        x = std::move(post.mean);
        if (post.variance > 0.0) {
            T sd = static_cast<T>(std::sqrt(post.variance));
            for (int64_t i = 0; i < x.size(); ++i) x[i] += sd * static_cast<T>(rng.normal());
        }
        detail::check_sample_finite(x, t, "diffusion.sample_ancestral");
    }
    return x;
}

// DDIM over a strictly increasing step subset ending at T:
// x_s = alpha_s * x0_hat + sqrt(sigma_s^2 - eta^2 sigma_tilde^2) * eps_hat
//       + eta * sigma_tilde * z,
// with sigma_tilde the ancestral posterior std of the subsampled (s, t) pair.
template <class T>
Tensor<T> sample_ddim(const DenoiserFn<T>& model, const Shape& shape, const NoiseSchedule& ns,
                      const std::vector<int>& step_subset, double eta, Rng& rng,
                      const Tensor<T>* x_init = nullptr) {
    LDK_CHECK(!step_subset.empty(), ErrKind::ordering, "diffusion.sample_ddim",
              "empty step subset");
    LDK_CHECK(step_subset.back() == ns.T, ErrKind::ordering, "diffusion.sample_ddim",
              "step subset must end at T=" + std::to_string(ns.T));
    for (size_t i = 0; i < step_subset.size(); ++i) {
        LDK_CHECK(step_subset[i] >= 1 && step_subset[i] <= ns.T, ErrKind::ordering,
                  "diffusion.sample_ddim", "step outside [1,T]");
        if (i > 0)
            LDK_CHECK(step_subset[i] > step_subset[i - 1], ErrKind::ordering,
                      "diffusion.sample_ddim", "step subset must be strictly increasing");
    }
    LDK_CHECK(eta >= 0.0 && eta <= 1.0, ErrKind::config, "diffusion.sample_ddim",
              "eta must be in [0,1]");
    Tensor<T> x = x_init ? *x_init : rng.normal_tensor<T>(shape);
    LDK_CHECK(x.shape() == shape, ErrKind::shape, "diffusion.sample_ddim",
              "x_init shape mismatch");
    for (int k = static_cast<int>(step_subset.size()) - 1; k >= 0; --k) {
        int t = step_subset[k];
        int s = (k > 0) ? step_subset[k - 1] : 0;
        Tensor<T> eps_hat = model(x, t);
        Tensor<T> x0_hat = predict_x0_from_eps(x, eps_hat, t, ns);
        PosteriorCoeffs pc = ns.posterior(s, t);
        double sig_s = ns.sigma(s);
        double dir2 = sig_s * sig_s - eta * eta * pc.variance;
        if (dir2 < 0.0) dir2 = 0.0;
        T a_s = static_cast<T>(ns.alpha(s));
        T dir = static_cast<T>(std::sqrt(dir2));
        for (int64_t i = 0; i < x.size(); ++i) x[i] = a_s * x0_hat[i] + dir * eps_hat[i];
        if (eta > 0.0 && pc.variance > 0.0) {
            T sd = static_cast<T>(eta * std::sqrt(pc.variance));
            for (int64_t i = 0; i < x.size(); ++i) x[i] += sd * static_cast<T>(rng.normal());
        }
        detail::check_sample_finite(x, t, "diffusion.sample_ddim");
    }
    return x;
}

// Evenly spaced DDIM subset of n steps ending at T (n = T gives 1..T).
inline std::vector<int> ddim_subset(int T, int n) {
    LDK_CHECK(n >= 1 && n <= T, ErrKind::config, "diffusion.ddim_subset",
              "need 1 <= n <= T");
    std::vector<int> out(n);
    for (int i = 0; i < n; ++i)
        out[i] = static_cast<int>(std::llround(static_cast<double>(T) * (i + 1) / n));
    for (int i = 1; i < n; ++i)
        LDK_CHECK(out[i] > out[i - 1], ErrKind::ordering, "diffusion.ddim_subset",
                  "rounding collapsed steps; choose smaller n");
    return out;
}

}  // namespace ldk
