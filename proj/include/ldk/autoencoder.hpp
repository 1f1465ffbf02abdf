#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ldk/nn.hpp"
#include "ldk/rng.hpp"

namespace ldk {

// ---- first-stage compression models ----
//
// Encoder/decoder pair with m = log2(f) stride-2 stages and one of two
// latent regularizers: a weak Gaussian pull toward N(0,1) ("kl") or a
// learned codebook with straight-through quantization absorbed into the
// decoder ("vq"). Width grows by 2x per stage up to a cap; all norms are
// GroupNorm and all activations SiLU, pre-activation style.

enum class LatentReg { kl, vq };

inline const char* latent_reg_name(LatentReg r) { return r == LatentReg::kl ? "kl" : "vq"; }

inline LatentReg latent_reg_from(const std::string& s) {
    if (s == "kl") return LatentReg::kl;
    if (s == "vq") return LatentReg::vq;
    fail(ErrKind::config, "autoencoder", "unknown regularizer '" + s + "' (kl|vq)");
}

struct AutoencoderConfig {
    int f = 4;  // spatial downsampling factor, power of two
    int in_ch = 3;
    int z_ch = 4;
    int base = 16;       // stem width
    int max_width = 64;  // growth cap
    int res_blocks = 1;  // residual blocks at the bottleneck
    int gn_groups = 4;
    LatentReg reg = LatentReg::kl;
    int codebook_size = 256;
};

template <class T>
struct Autoencoder {
    AutoencoderConfig cfg;
    ParamStore<T> params;
    std::vector<int> widths;  // per stage, widths[0] at full resolution

    int stages() const { return static_cast<int>(widths.size()) - 1; }

    Var<T> P(Graph<T>& g, const std::string& name) { return g.param(params.at(name)); }
};

namespace detail {

inline std::vector<int> ae_widths(const AutoencoderConfig& cfg, int m) {
    std::vector<int> w(m + 1);
    for (int i = 0; i <= m; ++i) w[i] = std::min(cfg.base << i, cfg.max_width);
    return w;
}

template <class T>
void create_res_block(ParamStore<T>& ps, Rng& rng, const std::string& stem, int ch) {
    create_norm(ps, stem + ".norm1", ch);
    create_conv(ps, rng, stem + ".conv1", ch, ch, 3);
    create_norm(ps, stem + ".norm2", ch);
    create_conv(ps, rng, stem + ".conv2", ch, ch, 3);
}

template <class T>
Var<T> apply_conv(Autoencoder<T>& m, Graph<T>& g, const std::string& stem, Var<T> x,
                  int stride = 1) {
    return conv2d(x, m.P(g, stem + ".w"), m.P(g, stem + ".b"), stride);
}

template <class T>
Var<T> apply_norm_act(Autoencoder<T>& m, Graph<T>& g, const std::string& stem, Var<T> x) {
    return silu(group_norm(x, m.P(g, stem + ".g"), m.P(g, stem + ".b"), m.cfg.gn_groups));
}

template <class T>
Var<T> apply_res_block(Autoencoder<T>& m, Graph<T>& g, const std::string& stem, Var<T> x) {
    Var<T> h = apply_conv(m, g, stem + ".conv1", apply_norm_act(m, g, stem + ".norm1", x));
    h = apply_conv(m, g, stem + ".conv2", apply_norm_act(m, g, stem + ".norm2", h));
    return add(x, h);
}

}  // namespace detail

template <class T>
Autoencoder<T> make_autoencoder(const AutoencoderConfig& cfg, Rng rng) {
    LDK_CHECK(cfg.f >= 1 && (cfg.f & (cfg.f - 1)) == 0, ErrKind::config, "autoencoder",
              "downsampling factor must be a power of two, got " + std::to_string(cfg.f));
    int m = 0;
    while ((1 << m) < cfg.f) ++m;
    Autoencoder<T> ae;
    ae.cfg = cfg;
    ae.widths = detail::ae_widths(cfg, m);
    for (int w : ae.widths)
        LDK_CHECK(w % cfg.gn_groups == 0, ErrKind::config, "autoencoder",
                  "width " + std::to_string(w) + " not divisible by gn_groups");
    ParamStore<T>& ps = ae.params;

    detail::create_conv(ps, rng, "enc.stem", cfg.in_ch, ae.widths[0], 3);
    for (int i = 0; i < m; ++i) {
        detail::create_norm(ps, "enc.down" + std::to_string(i) + ".norm", ae.widths[i]);
        detail::create_conv(ps, rng, "enc.down" + std::to_string(i) + ".conv", ae.widths[i],
                            ae.widths[i + 1], 3);
    }
    for (int r = 0; r < cfg.res_blocks; ++r)
        detail::create_res_block(ps, rng, "enc.res" + std::to_string(r), ae.widths[m]);
    detail::create_norm(ps, "enc.out_norm", ae.widths[m]);
    if (cfg.reg == LatentReg::kl) {
        detail::create_conv(ps, rng, "enc.mu", ae.widths[m], cfg.z_ch, 3);
        // start near logvar = 0 so early reparameterization noise is tame
        detail::create_conv(ps, rng, "enc.logvar", ae.widths[m], cfg.z_ch, 3, 0.1);
    } else {
        LDK_CHECK(cfg.codebook_size > 0, ErrKind::config, "autoencoder",
                  "vq regularizer needs a non-empty codebook");
        detail::create_conv(ps, rng, "enc.latent", ae.widths[m], cfg.z_ch, 3);
        auto& cb = ps.create("reg.codebook", {cfg.codebook_size, cfg.z_ch});
        init_normal(cb, rng, T(1.0));
    }

    detail::create_conv(ps, rng, "dec.stem", cfg.z_ch, ae.widths[m], 3);
    for (int r = 0; r < cfg.res_blocks; ++r)
        detail::create_res_block(ps, rng, "dec.res" + std::to_string(r), ae.widths[m]);
    for (int i = m - 1; i >= 0; --i) {
        detail::create_norm(ps, "dec.up" + std::to_string(i) + ".norm", ae.widths[i + 1]);
        detail::create_conv(ps, rng, "dec.up" + std::to_string(i) + ".conv", ae.widths[i + 1],
                            ae.widths[i], 3);
    }
    detail::create_norm(ps, "dec.out_norm", ae.widths[0]);
    detail::create_conv(ps, rng, "dec.final", ae.widths[0], cfg.in_ch, 3, 0.1);
    return ae;
}

// ---- codebook quantization ----

template <class T>
struct QuantizeResult {
    Tensor<T> z_q;             // same shape as z
    std::vector<int> indices;  // one per spatial position, scanline order
    double codebook_loss = 0;  // mean over elements of ||sg[z] - z_q||^2
    double commitment_loss = 0;
};

// Nearest codebook entry per position, Euclidean metric, lowest index wins
// ties. z is [N,C,H,W], codebook is [K,C].
template <class T>
QuantizeResult<T> vq_quantize(const Tensor<T>& z, const Tensor<T>& codebook) {
    LDK_CHECK(z.ndim() == 4, ErrKind::shape, "autoencoder.vq", "latent must be NCHW");
    LDK_CHECK(codebook.ndim() == 2 && codebook.dim(0) > 0, ErrKind::config, "autoencoder.vq",
              "codebook must be [K,C] with K > 0");
    int N = z.dim(0), C = z.dim(1), H = z.dim(2), W = z.dim(3);
    LDK_CHECK(codebook.dim(1) == C, ErrKind::shape, "autoencoder.vq",
              "codebook entry dim != latent channels");
    int K = codebook.dim(0);
    QuantizeResult<T> out;
    out.z_q = Tensor<T>(z.shape());
    out.indices.resize(static_cast<size_t>(N) * H * W);
    double cb_acc = 0.0, cm_acc = 0.0;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (int k = 0; k < K; ++k) {
                    double d = 0.0;
                    for (int c = 0; c < C; ++c) {
                        double diff = static_cast<double>(z.at4(n, c, y, x)) -
                                      static_cast<double>(codebook[k * C + c]);
                        d += diff * diff;
                    }
                    if (d < best_d) {  // strict: earlier index wins exact ties
                        best_d = d;
                        best = k;
                    }
                }
                out.indices[(static_cast<size_t>(n) * H + y) * W + x] = best;
                for (int c = 0; c < C; ++c) out.z_q.at4(n, c, y, x) = codebook[best * C + c];
                cb_acc += best_d;
                cm_acc += best_d;
            }
    double denom = static_cast<double>(z.size());
    out.codebook_loss = cb_acc / denom;
    out.commitment_loss = cm_acc / denom;
    return out;
}

// ---- KL regularizer ----

// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2) against a standard normal.
template <class T>
double kl_regularizer(const Tensor<T>& mu, const Tensor<T>& log_var) {
    check_same_shape(mu, log_var, "autoencoder.kl");
    double acc = 0.0;
    for (int64_t i = 0; i < mu.size(); ++i) {
        double m = mu[i], lv = log_var[i];
        acc += m * m + std::exp(lv) - 1.0 - lv;
    }
    return 0.5 * acc;
}

template <class T>
Var<T> kl_regularizer_g(Graph<T>& g, Var<T> mu, Var<T> log_var) {
    Var<T> inner =
        sub(add(square(mu), exp_op(log_var)), add_scalar(log_var, T(1)));
    return scale(sum_all(inner), T(0.5));
}

// ---- forward passes ----

template <class T>
struct EncodeOut {
    Var<T> z;           // KL: mu + sigma*eps; VQ: pre-quantization latent
    Var<T> mu, logvar;  // KL only
};

// eps: externally drawn N(0,1) noise for the reparameterization (KL mode);
// pass nullptr to get z = mu exactly.
template <class T>
EncodeOut<T> encode_g(Autoencoder<T>& m, Graph<T>& g, Var<T> x, const Tensor<T>* eps = nullptr) {
    Shape s = x.shape();  // copy: node storage moves as ops append
    LDK_CHECK(s.size() == 4 && s[1] == m.cfg.in_ch, ErrKind::shape, "autoencoder.encode",
              "expected [N," + std::to_string(m.cfg.in_ch) + ",H,W], got " + shape_str(s));
    LDK_CHECK(s[2] % m.cfg.f == 0 && s[3] % m.cfg.f == 0, ErrKind::shape, "autoencoder.encode",
              "spatial dims must be divisible by f=" + std::to_string(m.cfg.f));
    Var<T> h = detail::apply_conv(m, g, "enc.stem", x);
    for (int i = 0; i < m.stages(); ++i) {
        std::string stem = "enc.down" + std::to_string(i);
        h = detail::apply_conv(m, g, stem + ".conv",
                               detail::apply_norm_act(m, g, stem + ".norm", h), 2);
    }
    for (int r = 0; r < m.cfg.res_blocks; ++r)
        h = detail::apply_res_block(m, g, "enc.res" + std::to_string(r), h);
    h = detail::apply_norm_act(m, g, "enc.out_norm", h);

    EncodeOut<T> out;
    if (m.cfg.reg == LatentReg::kl) {
        out.mu = detail::apply_conv(m, g, "enc.mu", h);
        out.logvar = detail::apply_conv(m, g, "enc.logvar", h);
        if (eps) {
            LDK_CHECK(eps->shape() == out.mu.shape(), ErrKind::shape, "autoencoder.encode",
                      "noise shape mismatch");
            Var<T> sigma = exp_op(scale(out.logvar, T(0.5)));
            out.z = add(out.mu, mul(sigma, g.constant(*eps)));
        } else {
            out.z = out.mu;
        }
    } else {
        out.z = detail::apply_conv(m, g, "enc.latent", h);
    }
    return out;
}

template <class T>
struct DecodeOut {
    Var<T> x;                  // reconstructed image
    Var<T> codebook_loss;      // VQ only (valid() false otherwise)
    Var<T> commitment_loss;    // VQ only
    std::vector<int> indices;  // VQ only: chosen code per position
};

// VQ models quantize as the first decoder step, with a straight-through
// gradient so the encoder trains through the rounding.
template <class T>
DecodeOut<T> decode_g(Autoencoder<T>& m, Graph<T>& g, Var<T> z) {
    Shape s = z.shape();  // copy: node storage moves as ops append
    LDK_CHECK(s.size() == 4 && s[1] == m.cfg.z_ch, ErrKind::shape, "autoencoder.decode",
              "expected [N," + std::to_string(m.cfg.z_ch) + ",h,w], got " + shape_str(s));
    DecodeOut<T> out;
    Var<T> dec_in = z;
    if (m.cfg.reg == LatentReg::vq) {
        QuantizeResult<T> q = vq_quantize(z.val(), m.params.at("reg.codebook").v);
        out.indices = q.indices;
        Var<T> z_rows = nchw_to_rows(z);
        Var<T> zq_rows = embedding(m.P(g, "reg.codebook"), q.indices);
        out.codebook_loss = mse_loss(zq_rows, detach(z_rows));
        out.commitment_loss = mse_loss(z_rows, detach(zq_rows));
        Var<T> st = straight_through(z_rows, zq_rows);  // value z_q, gradient into z
        dec_in = rows_to_nchw(st, s[0], s[1], s[2], s[3]);
    }
    Var<T> h = detail::apply_conv(m, g, "dec.stem", dec_in);
    for (int r = 0; r < m.cfg.res_blocks; ++r)
        h = detail::apply_res_block(m, g, "dec.res" + std::to_string(r), h);
    for (int i = m.stages() - 1; i >= 0; --i) {
        std::string stem = "dec.up" + std::to_string(i);
        h = upsample_nearest2x(detail::apply_norm_act(m, g, stem + ".norm", h));
        h = detail::apply_conv(m, g, stem + ".conv", h);
    }
    out.x = detail::apply_conv(m, g, "dec.final",
                               detail::apply_norm_act(m, g, "dec.out_norm", h));
    return out;
}

// Plain-tensor conveniences over a non-recording graph.

template <class T>
struct EncodeResult {
    Tensor<T> z;
    Tensor<T> mu, logvar;  // empty for VQ
};

template <class T>
EncodeResult<T> encode(Autoencoder<T>& m, const Tensor<T>& x, Rng* rng = nullptr) {
    Graph<T> g(false);
    std::optional<Tensor<T>> eps;
    if (m.cfg.reg == LatentReg::kl && rng) {
        Shape zs = {x.dim(0), m.cfg.z_ch, x.dim(2) / m.cfg.f, x.dim(3) / m.cfg.f};
        eps = rng->template normal_tensor<T>(zs);
    }
    EncodeOut<T> out = encode_g(m, g, g.constant(x), eps ? &*eps : nullptr);
    EncodeResult<T> res;
    res.z = out.z.val();
    if (m.cfg.reg == LatentReg::kl) {
        res.mu = out.mu.val();
        res.logvar = out.logvar.val();
    }
    return res;
}

template <class T>
Tensor<T> decode(Autoencoder<T>& m, const Tensor<T>& z) {
    Graph<T> g(false);
    return decode_g(m, g, g.constant(z)).x.val();
}

// ---- patch discriminator ----

// Small fully convolutional stack emitting one logit per receptive-field
// patch; trained with the hinge objective against reconstructions.
struct DiscriminatorConfig {
    int in_ch = 3;
    int base = 16;
    int gn_groups = 4;
};

template <class T>
struct Discriminator {
    DiscriminatorConfig cfg;
    ParamStore<T> params;

    Var<T> P(Graph<T>& g, const std::string& name) { return g.param(params.at(name)); }
};

template <class T>
Discriminator<T> make_discriminator(const DiscriminatorConfig& cfg, Rng rng) {
    Discriminator<T> d;
    d.cfg = cfg;
    detail::create_conv(d.params, rng, "disc.conv0", cfg.in_ch, cfg.base, 3);
    detail::create_conv(d.params, rng, "disc.conv1", cfg.base, 2 * cfg.base, 3);
    detail::create_norm(d.params, "disc.norm1", 2 * cfg.base);
    detail::create_conv(d.params, rng, "disc.head", 2 * cfg.base, 1, 3);
    return d;
}

template <class T>
Var<T> discriminator_logits_g(Discriminator<T>& d, Graph<T>& g, Var<T> x) {
    Var<T> h = leaky_relu(conv2d(x, d.P(g, "disc.conv0.w"), d.P(g, "disc.conv0.b"), 2), T(0.2));
    h = conv2d(h, d.P(g, "disc.conv1.w"), d.P(g, "disc.conv1.b"), 2);
    h = leaky_relu(group_norm(h, d.P(g, "disc.norm1.g"), d.P(g, "disc.norm1.b"), d.cfg.gn_groups),
                   T(0.2));
    return conv2d(h, d.P(g, "disc.head.w"), d.P(g, "disc.head.b"));
}

template <class T>
Tensor<T> discriminator_logits(Discriminator<T>& d, const Tensor<T>& x) {
    Graph<T> g(false);
    return discriminator_logits_g(d, g, g.constant(x)).val();
}

// ---- training objective ----

struct AeLossWeights {
    double w_kl = 1e-6;        // KL pull toward the standard normal
    double w_vq = 1.0;         // codebook + commitment term
    double beta_commit = 0.25; // commitment fraction inside the VQ term
    double w_adv = 0.5;        // generator adversarial weight
    int adv_warmup = 1000;     // steps before the adversarial term switches on
    double w_feat = 0.0;       // seeded random-feature matching loss
    uint64_t feat_seed = 0x5EED;
};

template <class T>
struct AeLossOut {
    Var<T> generator_loss;
    Var<T> discriminator_loss;
    Var<T> recon;  // decoder output, reusable for logging/metrics
    std::map<std::string, double> components;
    std::vector<int> vq_indices;
};

namespace detail {

// Fixed random two-stage conv features; weights are seeded constants, so the
// term is differentiable w.r.t. the reconstruction only.
template <class T>
Var<T> random_features(Graph<T>& g, Var<T> x, int in_ch, uint64_t seed) {
    Rng rng(seed, 0);
    Tensor<T> w0 = rng.template normal_tensor<T>({8, in_ch, 3, 3});
    Tensor<T> b0({8}, T(0));
    Tensor<T> w1 = rng.template normal_tensor<T>({16, 8, 3, 3});
    Tensor<T> b1({16}, T(0));
    T s0 = static_cast<T>(std::sqrt(2.0 / (in_ch * 9.0)));
    T s1 = static_cast<T>(std::sqrt(2.0 / (8 * 9.0)));
    for (int64_t i = 0; i < w0.size(); ++i) w0[i] *= s0;
    for (int64_t i = 0; i < w1.size(); ++i) w1[i] *= s1;
    Var<T> h = silu(conv2d(x, g.constant(w0), g.constant(b0), 2));
    return silu(conv2d(h, g.constant(w1), g.constant(b1), 2));
}

}  // namespace detail

// Builds the full min/max objective on one graph: L1 reconstruction plus the
// latent regularizer for the generator, hinge real/fake for the
// discriminator (against a detached reconstruction). Callers run backward on
// at most ONE of the two returned losses per graph instance; training loops
// that update the discriminator on a separate graph pass build_disc = false
// to skip the hinge branch here.
template <class T>
AeLossOut<T> autoencoder_loss(Autoencoder<T>& m, Discriminator<T>& d, Graph<T>& g, Var<T> x,
                              const AeLossWeights& w, int64_t step, Rng& noise_rng,
                              bool build_disc = true) {
    AeLossOut<T> out;
    std::optional<Tensor<T>> eps;
    if (m.cfg.reg == LatentReg::kl) {
        Shape zs = {x.shape()[0], m.cfg.z_ch, x.shape()[2] / m.cfg.f, x.shape()[3] / m.cfg.f};
        eps = noise_rng.template normal_tensor<T>(zs);
    }
    EncodeOut<T> enc = encode_g(m, g, x, eps ? &*eps : nullptr);
    DecodeOut<T> dec = decode_g(m, g, enc.z);
    out.recon = dec.x;
    out.vq_indices = dec.indices;
    int batch = x.shape()[0];

    Var<T> gen = l1_loss(dec.x, x);
    out.components["recon_l1"] = static_cast<double>(gen.val()[0]);

    if (w.w_feat > 0.0) {
        Var<T> fx = detail::random_features(g, x, m.cfg.in_ch, w.feat_seed);
        Var<T> fr = detail::random_features(g, dec.x, m.cfg.in_ch, w.feat_seed);
        Var<T> feat = l1_loss(fr, fx);
        out.components["feat_match"] = static_cast<double>(feat.val()[0]);
        gen = add(gen, scale(feat, static_cast<T>(w.w_feat)));
    }

    if (m.cfg.reg == LatentReg::kl) {
        // sum over latent dims, mean over the batch
        Var<T> kl = scale(kl_regularizer_g(g, enc.mu, enc.logvar), static_cast<T>(1.0 / batch));
        out.components["kl"] = static_cast<double>(kl.val()[0]);
        gen = add(gen, scale(kl, static_cast<T>(w.w_kl)));
    } else {
        Var<T> vq = add(dec.codebook_loss,
                        scale(dec.commitment_loss, static_cast<T>(w.beta_commit)));
        out.components["codebook"] = static_cast<double>(dec.codebook_loss.val()[0]);
        out.components["commitment"] = static_cast<double>(dec.commitment_loss.val()[0]);
        gen = add(gen, scale(vq, static_cast<T>(w.w_vq)));
    }

    Var<T> logits_fake_gen = discriminator_logits_g(d, g, dec.x);
    bool adv_on = step >= w.adv_warmup && w.w_adv > 0.0;
    if (adv_on) {
        // generator pushes fake logits up: -mean D(recon)
        Var<T> adv = scale(mean_all(logits_fake_gen), T(-1));
        out.components["adv_gen"] = static_cast<double>(adv.val()[0]);
        gen = add(gen, scale(adv, static_cast<T>(w.w_adv)));
    }
    out.generator_loss = gen;

    // Hinge objective on real vs detached reconstruction; gradients reach
    // only the discriminator through this branch.
    if (build_disc) {
        Var<T> logits_real = discriminator_logits_g(d, g, detach(x));
        Var<T> logits_fake = discriminator_logits_g(d, g, detach(dec.x));
        Var<T> hinge_real = mean_all(relu(add_scalar(scale(logits_real, T(-1)), T(1))));
        Var<T> hinge_fake = mean_all(relu(add_scalar(logits_fake, T(1))));
        out.discriminator_loss = add(hinge_real, hinge_fake);
        out.components["disc_real_logit"] =
            static_cast<double>(mean_all(logits_real).val()[0]);
        out.components["disc_fake_logit"] =
            static_cast<double>(mean_all(logits_fake).val()[0]);
    }
    return out;
}

// ---- latent scale ----

// Scalar mean/std over every batch/channel/spatial component of a latent
// batch, used to rescale latents to unit variance before the second stage.
struct LatentScale {
    double mu_hat = 0.0;
    double sigma_hat = 1.0;
    std::string source;  // free-form batch descriptor
};

template <class T>
LatentScale estimate_latent_scale(const Tensor<T>& latents, const std::string& source = "") {
    LDK_CHECK(latents.size() > 0, ErrKind::shape, "autoencoder.scale", "empty latent batch");
    double mean = 0.0;
    for (int64_t i = 0; i < latents.size(); ++i) mean += latents[i];
    mean /= static_cast<double>(latents.size());
    double var = 0.0;
    for (int64_t i = 0; i < latents.size(); ++i) {
        double d = latents[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(latents.size());
    LDK_CHECK(var > 0.0, ErrKind::degenerate_scale, "autoencoder.scale",
              "latent batch has zero variance");
    LatentScale s;
    s.mu_hat = mean;
    s.sigma_hat = std::sqrt(var);
    s.source = source;
    return s;
}

// z <- z / sigma_hat (the mean is reported but deliberately not subtracted,
// so the mapping stays linear and exactly invertible by multiplication).
template <class T>
Tensor<T> rescale_latent(const Tensor<T>& z, const LatentScale& s) {
    LDK_CHECK(s.sigma_hat > 0.0, ErrKind::degenerate_scale, "autoencoder.scale",
              "sigma_hat must be positive");
    Tensor<T> out = z;
    T inv = static_cast<T>(1.0 / s.sigma_hat);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
    return out;
}

template <class T>
Tensor<T> unrescale_latent(const Tensor<T>& z, const LatentScale& s) {
    LDK_CHECK(s.sigma_hat > 0.0, ErrKind::degenerate_scale, "autoencoder.scale",
              "sigma_hat must be positive");
    Tensor<T> out = z;
    T mul_by = static_cast<T>(s.sigma_hat);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= mul_by;
    return out;
}

// ---- dead code reseeding ----

// Codebook entries unused for a while collapse the effective vocabulary;
// reassigning them to random encoder outputs keeps the codebook live.
template <class T>
int reseed_dead_codes(Param<T>& codebook, const std::vector<int64_t>& usage,
                      const Tensor<T>& z_rows, Rng& rng) {
    int K = codebook.v.dim(0), C = codebook.v.dim(1);
    LDK_CHECK(static_cast<int>(usage.size()) == K, ErrKind::shape, "autoencoder.vq",
              "usage count size != codebook size");
    LDK_CHECK(z_rows.ndim() == 2 && z_rows.dim(1) == C, ErrKind::shape, "autoencoder.vq",
              "latent rows must be [M,C]");
    int M = z_rows.dim(0), reseeded = 0;
    for (int k = 0; k < K; ++k) {
        if (usage[k] > 0) continue;
        int pick = static_cast<int>(rng.below(static_cast<uint64_t>(M)));
        for (int c = 0; c < C; ++c) codebook.v[k * C + c] = z_rows[pick * C + c];
        ++reseeded;
    }
    return reseeded;
}

}  // namespace ldk
