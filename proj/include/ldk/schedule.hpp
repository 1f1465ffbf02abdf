#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ldk/common.hpp"

namespace ldk {

enum class ScheduleKind { linear_beta, cosine };

inline const char* schedule_kind_name(ScheduleKind k) {
    return k == ScheduleKind::linear_beta ? "linear_beta" : "cosine";
}

inline ScheduleKind schedule_kind_from(const std::string& s) {
    if (s == "linear_beta") return ScheduleKind::linear_beta;
    if (s == "cosine") return ScheduleKind::cosine;
    fail(ErrKind::config, "schedule", "unknown schedule kind '" + s + "'");
}

struct TransitionCoeffs {
    double alpha_ts;   // alpha_t / alpha_s
    double sigma2_ts;  // sigma_t^2 - alpha_ts^2 * sigma_s^2
};

struct PosteriorCoeffs {
    double coef_xt;   // alpha_{t|s} * sigma_s^2 / sigma_t^2
    double coef_x0;   // alpha_s * sigma_{t|s}^2 / sigma_t^2
    double variance;  // sigma_{t|s}^2 * sigma_s^2 / sigma_t^2
};

// Discrete-time noise schedule. Index 0 is the virtual clean-data step
// (alpha=1, sigma=0); model steps are 1..T. All arithmetic is double; cast
// down only where values enter model tensors.
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::linear_beta;
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    bool variance_preserving = true;
    std::vector<double> alpha_v;  // size T+1, alpha_v[0] = 1
    std::vector<double> sigma_v;  // size T+1, sigma_v[0] = 0

    double alpha(int t) const {
        check_step(t);
        return alpha_v[t];
    }
    double sigma(int t) const {
        check_step(t);
        return sigma_v[t];
    }

    double snr(int t) const {
        LDK_CHECK(t >= 1 && t <= T, ErrKind::config, "schedule",
                  "snr step " + std::to_string(t) + " outside [1," + std::to_string(T) + "]");
        double s = sigma_v[t];
        LDK_CHECK(s > 0.0, ErrKind::infinite_snr, "schedule",
                  "sigma_t = 0 at t=" + std::to_string(t) + ": SNR is infinite");
        double a = alpha_v[t];
        return (a * a) / (s * s);
    }

    // Markov coefficients of q(x_t | x_s) for s <= t (s may be the virtual
    // step 0).
    TransitionCoeffs transition(int s, int t) const {
        check_step(s);
        check_step(t);
        LDK_CHECK(s <= t, ErrKind::ordering, "schedule",
                  "transition requires s <= t, got s=" + std::to_string(s) +
                      " t=" + std::to_string(t));
        double ats = alpha_v[t] / alpha_v[s];
        double s2 = sigma_v[t] * sigma_v[t] - ats * ats * sigma_v[s] * sigma_v[s];
        if (s2 < 0.0) s2 = 0.0;  // roundoff guard; algebraically >= 0
        return {ats, s2};
    }

    // Coefficients of the Gaussian q(x_s | x_t, x_0) for the (possibly
    // subsampled) pair s < t: mean = coef_xt * x_t + coef_x0 * x0.
    PosteriorCoeffs posterior(int s, int t) const {
        check_step(s);
        check_step(t);
        LDK_CHECK(s < t, ErrKind::ordering, "schedule",
                  "posterior requires s < t, got s=" + std::to_string(s) +
                      " t=" + std::to_string(t));
        double st2 = sigma_v[t] * sigma_v[t];
        LDK_CHECK(st2 > 0.0, ErrKind::degenerate_step, "schedule",
                  "posterior at t=" + std::to_string(t) + " needs sigma_t > 0");
        TransitionCoeffs tc = transition(s, t);
        double ss2 = sigma_v[s] * sigma_v[s];
        return {tc.alpha_ts * ss2 / st2, alpha_v[s] * tc.sigma2_ts / st2,
                tc.sigma2_ts * ss2 / st2};
    }

private:
    void check_step(int t) const {
        LDK_CHECK(t >= 0 && t <= T, ErrKind::config, "schedule",
                  "step " + std::to_string(t) + " outside [0," + std::to_string(T) + "]");
    }
};

// Builds a variance-preserving schedule. linear_beta interpolates beta over
// T steps and sets alpha_t = sqrt(prod(1-beta_i)); cosine follows the
// squared-cosine cumulative profile (offset 0.008, per-step retention
// clamped at 1e-3) and ignores the beta arguments.
inline NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_start, double beta_end) {
    LDK_CHECK(T >= 1, ErrKind::config, "schedule", "T must be >= 1, got " + std::to_string(T));
    LDK_CHECK(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrKind::config,
              "schedule", "need 0 <= beta_start <= beta_end < 1");
    NoiseSchedule ns;
    ns.kind = kind;
    ns.T = T;
    ns.beta_start = beta_start;
    ns.beta_end = beta_end;
    ns.alpha_v.assign(T + 1, 1.0);
    ns.sigma_v.assign(T + 1, 0.0);
    double alpha_bar = 1.0;
    if (kind == ScheduleKind::linear_beta) {
        for (int t = 1; t <= T; ++t) {
            double beta = (T == 1) ? beta_start
                                   : beta_start + (beta_end - beta_start) *
                                                      static_cast<double>(t - 1) /
                                                      static_cast<double>(T - 1);
            alpha_bar *= (1.0 - beta);
            ns.alpha_v[t] = std::sqrt(alpha_bar);
            ns.sigma_v[t] = std::sqrt(1.0 - alpha_bar);
        }
    } else {
        const double s = 0.008;
        auto profile = [&](double u) {
            double c = std::cos((u + s) / (1.0 + s) * 1.57079632679489661923);
            return c * c;
        };
        double f0 = profile(0.0);
        double prev_bar = 1.0;
        for (int t = 1; t <= T; ++t) {
            double bar = profile(static_cast<double>(t) / T) / f0;
            double keep = bar / prev_bar;
            if (keep < 1e-3) keep = 1e-3;
            if (keep > 1.0) keep = 1.0;
            alpha_bar = prev_bar * keep;
            prev_bar = alpha_bar;
            ns.alpha_v[t] = std::sqrt(alpha_bar);
            ns.sigma_v[t] = std::sqrt(1.0 - alpha_bar);
        }
    }
    // Monotone by construction whenever noise is actually added; verify so a
    // bad parameterization cannot slip through silently.
    for (int t = 1; t <= T; ++t) {
        LDK_CHECK(ns.alpha_v[t] > 0.0 && ns.alpha_v[t] <= 1.0, ErrKind::config, "schedule",
                  "alpha out of (0,1] at t=" + std::to_string(t));
        LDK_CHECK(ns.alpha_v[t] <= ns.alpha_v[t - 1] + 1e-15, ErrKind::config, "schedule",
                  "alpha not non-increasing at t=" + std::to_string(t));
        LDK_CHECK(ns.sigma_v[t] + 1e-15 >= ns.sigma_v[t - 1], ErrKind::config, "schedule",
                  "sigma not non-decreasing at t=" + std::to_string(t));
        if (ns.sigma_v[t] > 0.0 && ns.sigma_v[t - 1] > 0.0) {
            double snr_prev = ns.alpha_v[t - 1] * ns.alpha_v[t - 1] /
                              (ns.sigma_v[t - 1] * ns.sigma_v[t - 1]);
            double snr_cur = ns.alpha_v[t] * ns.alpha_v[t] / (ns.sigma_v[t] * ns.sigma_v[t]);
            LDK_CHECK(snr_cur < snr_prev, ErrKind::config, "schedule",
                      "SNR not strictly decreasing at t=" + std::to_string(t));
        }
    }
    return ns;
}

}  // namespace ldk
