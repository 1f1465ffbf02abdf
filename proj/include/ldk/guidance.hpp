#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "ldk/autoencoder.hpp"
#include "ldk/diffusion.hpp"
#include "ldk/image.hpp"

namespace ldk {

// ---- test-time guidance ----
//
// Two mechanisms for steering a frozen sampler: mixing conditional and
// unconditional predictions (classifier-free), and following the gradient of
// a Gaussian image-matching objective through the frozen decoder (image
// guiding). Neither touches parameters.

// eps_hat = (1-s) * eps_uncond + s * eps_cond. Written in barycentric form so
// the endpoints s=0 and s=1 reproduce the inputs bit-exactly; algebraically
// identical to eps_uncond + s * (eps_cond - eps_uncond).
template <class T>
Tensor<T> guide_cfg(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double scale) {
    check_same_shape(eps_cond, eps_uncond, "guidance.cfg");
    if (scale == 0.0) return eps_uncond;
    if (scale == 1.0) return eps_cond;
    T s = static_cast<T>(scale);
    Tensor<T> out(eps_cond.shape());
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = (T(1) - s) * eps_uncond[i] + s * eps_cond[i];
    return out;
}

enum class GuiderTransform { identity, bicubic_downsample_2x, bicubic_downsample_4x };

inline const char* guider_transform_name(GuiderTransform t) {
    switch (t) {
        case GuiderTransform::identity: return "identity";
        case GuiderTransform::bicubic_downsample_2x: return "bicubic_downsample_2x";
        case GuiderTransform::bicubic_downsample_4x: return "bicubic_downsample_4x";
    }
    return "?";
}

inline GuiderTransform guider_transform_from(const std::string& s) {
    if (s == "identity") return GuiderTransform::identity;
    if (s == "bicubic_downsample_2x") return GuiderTransform::bicubic_downsample_2x;
    if (s == "bicubic_downsample_4x") return GuiderTransform::bicubic_downsample_4x;
    fail(ErrKind::config, "guidance",
         "unknown guider transform '" + s +
             "' (identity|bicubic_downsample_2x|bicubic_downsample_4x)");
}

enum class GuiderKind { none, classifier_free, image };

template <class T>
struct GuiderSpec {
    GuiderKind kind = GuiderKind::none;
    double scale = 0.0;
    Tensor<T> target;  // image kind only
    GuiderTransform transform = GuiderTransform::identity;
};

// Image guider that steers 2x-resolution synthesis toward an already decoded
// low-resolution sample.
template <class T>
GuiderSpec<T> upsample_guider(const Tensor<T>& low_res_sample, double scale = 1.0) {
    GuiderSpec<T> spec;
    spec.kind = GuiderKind::image;
    spec.scale = scale;
    spec.target = low_res_sample;
    spec.transform = GuiderTransform::bicubic_downsample_2x;
    return spec;
}

// Decoder as a graph builder, so guiders work with the real first-stage
// decoder or with synthetic decoders in tests.
template <class T>
using DecoderG = std::function<Var<T>(Graph<T>&, Var<T>)>;

template <class T>
DecoderG<T> decoder_of(Autoencoder<T>& ae) {
    return [&ae](Graph<T>& g, Var<T> z) { return decode_g(ae, g, z).x; };
}

namespace detail {

template <class T>
Var<T> apply_guider_transform(Var<T> x, GuiderTransform tr) {
    if (tr == GuiderTransform::identity) return x;
    Shape s = x.shape();  // copy: node storage moves as ops append
    int d = tr == GuiderTransform::bicubic_downsample_2x ? 2 : 4;
    LDK_CHECK(s[2] % d == 0 && s[3] % d == 0, ErrKind::shape, "guidance",
              "image dims not divisible by the downsampling factor");
    return bicubic_resize_op(x, s[2] / d, s[3] / d);
}

inline void check_vp_at(const NoiseSchedule& ns, int t) {
    double a = ns.alpha(t), s = ns.sigma(t);
    LDK_CHECK(ns.variance_preserving && std::abs(a * a + s * s - 1.0) < 1e-9, ErrKind::guidance,
              "guidance",
              "image guiding assumes a variance-preserving schedule (sigma^2 = 1 - alpha^2)");
}

// Builds log p(y | z_t) = -0.5 * ||y - T(D(z0(z_t)))||^2 on the given graph.
// The prediction eps is held constant: the gradient path is z_t -> z0 -> D
// -> T only, with dz0/dz_t = 1/alpha_t.
template <class T>
std::pair<Var<T>, Var<T>> guider_logp_graph(Graph<T>& g, const Tensor<T>& y,
                                            const Tensor<T>& z_t, int t, const Tensor<T>& eps,
                                            const DecoderG<T>& dec, GuiderTransform tr,
                                            const NoiseSchedule& ns) {
    check_same_shape(z_t, eps, "guidance.image");
    double a = ns.alpha(t);
    LDK_CHECK(a > 0.0, ErrKind::degenerate_step, "guidance",
              "alpha_t = 0 at t=" + std::to_string(t) + ": z0 not recoverable");
    Var<T> zt = g.input(z_t);
    Var<T> z0 = scale(sub(zt, scale(g.constant(eps), static_cast<T>(ns.sigma(t)))),
                      static_cast<T>(1.0 / a));
    Var<T> pred = apply_guider_transform(dec(g, z0), tr);
    LDK_CHECK(pred.val().shape() == y.shape(), ErrKind::shape, "guidance",
              "target shape " + shape_str(y.shape()) + " != transformed decode " +
                  shape_str(pred.val().shape()));
    Var<T> logp = scale(sum_all(square(sub(g.constant(y), pred))), T(-0.5));
    return {zt, logp};
}

}  // namespace detail

// log p(y | z_t) under the fixed-variance Gaussian guider.
template <class T>
double gaussian_guider_logp(const Tensor<T>& y, const Tensor<T>& z_t, int t,
                            const DecoderG<T>& dec, GuiderTransform tr, const NoiseSchedule& ns,
                            const Tensor<T>& eps_pred) {
    Graph<T> g(false);
    auto [zt, logp] = detail::guider_logp_graph(g, y, z_t, t, eps_pred, dec, tr, ns);
    return static_cast<double>(logp.val()[0]);
}

// grad_{z_t} log p(y | z_t), computed by reverse-mode differentiation through
// the prediction z0, the frozen decoder, and the transform.
template <class T>
Tensor<T> image_guidance_grad(const Tensor<T>& y, const Tensor<T>& z_t, int t,
                              const Tensor<T>& eps, const DecoderG<T>& dec, GuiderTransform tr,
                              const NoiseSchedule& ns) {
    Graph<T> g;
    auto [zt, logp] = detail::guider_logp_graph(g, y, z_t, t, eps, dec, tr, ns);
    g.backward(logp);
    Tensor<T> grad = g.grad(zt.id);
    for (int64_t i = 0; i < grad.size(); ++i)
        LDK_CHECK(std::isfinite(static_cast<double>(grad[i])), ErrKind::guidance, "guidance",
                  "non-finite guidance gradient at t=" + std::to_string(t));
    return grad;
}

// Correct the prediction toward the guider target. The correction direction
// is chosen so that larger scale decreases ||y - T(D(z0))||: with
// eps = -sigma * score, ascending the guider log-density means subtracting
// its gradient from eps (the commonly printed "+" moves away from y).
template <class T>
Tensor<T> guide_image(const Tensor<T>& eps, const Tensor<T>& z_t, int t,
                      const GuiderSpec<T>& spec, const DecoderG<T>& dec,
                      const NoiseSchedule& ns) {
    LDK_CHECK(spec.kind == GuiderKind::image, ErrKind::config, "guidance",
              "guide_image needs an image guider spec");
    LDK_CHECK(std::isfinite(spec.scale) && spec.scale >= 0.0, ErrKind::config, "guidance",
              "guider scale must be finite and >= 0");
    detail::check_vp_at(ns, t);
    if (spec.scale == 0.0) return eps;
    Tensor<T> grad = image_guidance_grad(spec.target, z_t, t, eps, dec, spec.transform, ns);
    double a = ns.alpha(t);
    double coeff = std::sqrt(std::max(0.0, 1.0 - a * a)) * spec.scale;
    Tensor<T> out(eps.shape());
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = eps[i] - static_cast<T>(coeff) * grad[i];
    return out;
}

// Wraps a denoiser so every sampler step applies the image guider.
template <class T>
DenoiserFn<T> guided_denoiser(DenoiserFn<T> model, GuiderSpec<T> spec, DecoderG<T> dec,
                              const NoiseSchedule& ns) {
    return [model = std::move(model), spec = std::move(spec), dec = std::move(dec),
            &ns](const Tensor<T>& x, int t) {
        return guide_image(model(x, t), x, t, spec, dec, ns);
    };
}

}  // namespace ldk
