#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "ldk/autoencoder.hpp"
#include "ldk/backbone.hpp"
#include "ldk/config.hpp"
#include "ldk/dataset.hpp"
#include "ldk/eval.hpp"
#include "ldk/guidance.hpp"
#include "ldk/serialize.hpp"

namespace ldk {

// Two-stage orchestration: stage 1 trains the compression autoencoder once,
// stage 2 trains a denoiser on its (frozen) latents. Conditioning comes in
// three flavors — a learned class row, caption tokens through the token
// encoder, or a spatial map concatenated to the latent — and every task is
// a choice among them plus a conditioning-map construction.

enum class TaskKind {
    unconditional,
    class_conditional,
    token_conditional,
    super_resolution,
    inpainting,
    semantic
};

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::unconditional: return "unconditional";
        case TaskKind::class_conditional: return "class";
        case TaskKind::token_conditional: return "tokens";
        case TaskKind::super_resolution: return "sr";
        case TaskKind::inpainting: return "inpainting";
        case TaskKind::semantic: return "semantic";
    }
    return "?";
}

inline TaskKind task_from(const std::string& s) {
    for (TaskKind k : {TaskKind::unconditional, TaskKind::class_conditional,
                       TaskKind::token_conditional, TaskKind::super_resolution,
                       TaskKind::inpainting, TaskKind::semantic})
        if (s == task_name(k)) return k;
    fail(ErrKind::config, "pipelines", "unknown task '" + s + "'");
}

// Channels the task concatenates onto the latent (0 for non-spatial tasks).
inline int task_cond_channels(TaskKind k) {
    switch (k) {
        case TaskKind::super_resolution: return 3;
        case TaskKind::inpainting: return 4;  // masked image + mask
        case TaskKind::semantic: return kSemanticChannels;
        default: return 0;
    }
}

inline CondMode task_cond_mode(TaskKind k) {
    switch (k) {
        case TaskKind::class_conditional: return CondMode::class_id;
        case TaskKind::token_conditional: return CondMode::tokens;
        case TaskKind::super_resolution:
        case TaskKind::inpainting:
        case TaskKind::semantic: return CondMode::spatial_concat;
        default: return CondMode::none;
    }
}

// The null conditioning used for condition dropout and the unconditional
// branch of classifier-free guidance: class -> the embedder's extra row,
// tokens -> a single padding token, spatial -> an all-zero map.
inline std::vector<int> null_tokens() { return {0}; }

// ---- task samples ----

template <class T>
struct TaskSample {
    Tensor<T> image;          // [3,H,W] target
    int class_id = -1;        // class task only
    std::vector<int> tokens;  // token task only
    Tensor<T> cond_map;       // [cond_ch,h,w] at the latent grid; empty otherwise
};

namespace detail {

// [N,...] batch helpers; slices are contiguous in NCHW.
template <class T>
Tensor<T> nth(const Tensor<T>& batch, int n) {
    Shape s = batch.shape();
    int64_t block = batch.size() / s[0];
    s[0] = 1;
    Tensor<T> out(s);
    std::copy_n(batch.data() + n * block, block, out.data());
    return out;
}

template <class T>
void set_nth(Tensor<T>& batch, int n, const Tensor<T>& x) {
    int64_t block = batch.size() / batch.dim(0);
    LDK_CHECK(x.size() == block, ErrKind::shape, "pipelines", "batch slice size mismatch");
    std::copy_n(x.data(), block, batch.data() + n * block);
}

// Value copy between identically built stores (same factory, same config);
// insertion order is the contract, names are re-checked per entry.
template <class T>
void clone_store(ParamStore<T>& dst, const ParamStore<T>& src) {
    LDK_CHECK(dst.size() == src.size(), ErrKind::checkpoint, "pipelines",
              "parameter stores differ in layout");
    for (size_t i = 0; i < dst.size(); ++i) {
        LDK_CHECK(dst[i].name == src[i].name, ErrKind::checkpoint, "pipelines",
                  "parameter stores differ at " + dst[i].name);
        dst[i].v = src[i].v;
    }
}

template <class T>
uint64_t param_store_hash(const ParamStore<T>& ps) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (size_t i = 0; i < ps.size(); ++i) {
        mix(ps[i].name.data(), ps[i].name.size());
        mix(ps[i].v.data(), static_cast<size_t>(ps[i].v.size()) * sizeof(T));
    }
    return h;
}

}  // namespace detail

template <class T>
TaskSample<T> build_sr_sample(const Sample<T>& s, int f) {
    int H = s.image.dim(1), W = s.image.dim(2);
    LDK_CHECK(H % (4 * f) == 0 && W % (4 * f) == 0, ErrKind::shape, "pipelines.sr",
              "image dims must be divisible by 4*f");
    TaskSample<T> out;
    out.image = s.image;
    Tensor<T> lr = bicubic_resize(s.image, H / 4, W / 4);
    out.cond_map = bicubic_resize(lr, H / f, W / f);  // LR carried to the latent grid
    return out;
}

// Conditioning for inpainting: the image with masked pixels zeroed, carried
// to the latent grid, plus the (nearest-downsampled) mask as a fourth plane.
template <class T>
Tensor<T> inpaint_cond(const Tensor<T>& image, const std::vector<uint8_t>& mask, int f) {
    LDK_CHECK(image.ndim() == 3 && image.dim(0) == 3, ErrKind::shape, "pipelines.inpaint",
              "image must be [3,H,W]");
    int H = image.dim(1), W = image.dim(2);
    LDK_CHECK(H % f == 0 && W % f == 0, ErrKind::shape, "pipelines.inpaint",
              "image dims must be divisible by f");
    LDK_CHECK(static_cast<int64_t>(mask.size()) == static_cast<int64_t>(H) * W, ErrKind::shape,
              "pipelines.inpaint", "mask size does not match the image");
    Tensor<T> masked = image;
    Tensor<T> mask_plane({1, H, W});
    for (int i = 0; i < H * W; ++i) {
        LDK_CHECK(mask[i] <= 1, ErrKind::config, "pipelines.inpaint", "mask must be binary");
        mask_plane[i] = static_cast<T>(mask[i]);
        if (mask[i])
            for (int c = 0; c < 3; ++c) masked[static_cast<int64_t>(c) * H * W + i] = T(0);
    }
    Tensor<T> masked_small = bicubic_resize(masked, H / f, W / f);
    Tensor<T> mask_small = nearest_resize(mask_plane, H / f, W / f);
    Tensor<T> cond({4, H / f, W / f});
    std::copy_n(masked_small.data(), masked_small.size(), cond.data());
    std::copy_n(mask_small.data(), mask_small.size(), cond.data() + masked_small.size());
    return cond;
}

template <class T>
TaskSample<T> build_inpaint_sample(const Sample<T>& s, int f, Rng& mask_rng) {
    TaskSample<T> out;
    out.image = s.image;
    out.cond_map = inpaint_cond(s.image, make_inpaint_mask(s.image.dim(1), s.image.dim(2),
                                                           mask_rng), f);
    return out;
}

template <class T>
TaskSample<T> build_semantic_sample(const Sample<T>& s, int f) {
    int H = s.image.dim(1), W = s.image.dim(2);
    TaskSample<T> out;
    out.image = s.image;
    std::vector<uint8_t> small = majority_downsample(s.labels, H, W, f);
    Tensor<T> onehot = one_hot_map<T>(small, H / f, W / f);  // [1,C,h,w]
    out.cond_map = Tensor<T>({kSemanticChannels, H / f, W / f});
    std::copy_n(onehot.data(), onehot.size(), out.cond_map.data());
    return out;
}

// Turns raw dataset samples into task supervision. Inpainting masks are the
// only random ingredient; everything else is a deterministic function of the
// sample, so conditioning maps round-trip reproducibly.
template <class T>
std::vector<TaskSample<T>> build_task_samples(TaskKind kind, const std::vector<Sample<T>>& data,
                                              int f, Rng mask_rng = Rng(0, 0)) {
    std::vector<TaskSample<T>> out;
    out.reserve(data.size());
    for (const Sample<T>& s : data) {
        switch (kind) {
            case TaskKind::super_resolution:
                out.push_back(build_sr_sample(s, f));
                break;
            case TaskKind::inpainting:
                out.push_back(build_inpaint_sample(s, f, mask_rng));
                break;
            case TaskKind::semantic:
                out.push_back(build_semantic_sample(s, f));
                break;
            default: {
                TaskSample<T> t;
                t.image = s.image;
                t.class_id = s.class_id;
                t.tokens = s.tokens;
                out.push_back(std::move(t));
            }
        }
    }
    return out;
}

template <class T>
std::vector<TaskSample<T>> build_sr_task(const std::vector<Sample<T>>& data, int f) {
    return build_task_samples(TaskKind::super_resolution, data, f);
}

template <class T>
std::vector<TaskSample<T>> build_inpainting_task(const std::vector<Sample<T>>& data, int f,
                                                 Rng mask_rng) {
    return build_task_samples(TaskKind::inpainting, data, f, mask_rng);
}

template <class T>
std::vector<TaskSample<T>> build_semantic_task(const std::vector<Sample<T>>& data, int f) {
    return build_task_samples(TaskKind::semantic, data, f);
}

// ---- training configuration ----

struct TrainConfig {
    TaskKind task = TaskKind::unconditional;
    DatasetSpec data;
    int holdout = 8;  // tail of the dataset reserved for evaluation

    ScheduleKind sched = ScheduleKind::linear_beta;
    int T = 200;
    double beta_start = 1e-4, beta_end = 2e-2;

    AutoencoderConfig ae;       // stage 1 (and the expected first stage in stage 2)
    DiscriminatorConfig disc;
    AeLossWeights loss;
    UnetConfig unet;            // conditioning fields are overwritten per task
    TokenEncoderConfig tok;

    double lr = 1e-4;           // stage defaults: 1e-4 autoencoder, 2e-4 denoiser
    double adam_beta1 = 0.9, adam_beta2 = 0.999;
    int batch = 8;
    int64_t steps = 1000;
    double cond_dropout = 0.1;
    uint64_t seed = 0;
    bool rescale_latents = true;
    int log_every = 50;
    int vq_reseed_every = 500;  // dead-code refresh interval; 0 disables
};

struct LogEntry {
    int64_t step = 0;
    std::map<std::string, double> values;
};

using LogFn = std::function<void(const LogEntry&)>;

namespace detail {

inline void validate_train_config(const TrainConfig& cfg) {
    LDK_CHECK(cfg.batch > 0 && cfg.steps >= 0, ErrKind::config, "pipelines",
              "batch and steps must be positive");
    LDK_CHECK(cfg.cond_dropout >= 0.0 && cfg.cond_dropout <= 1.0, ErrKind::config, "pipelines",
              "condition-dropout probability must lie in [0,1]");
    LDK_CHECK(cfg.holdout >= 0 && cfg.holdout < cfg.data.count, ErrKind::config, "pipelines",
              "holdout must leave at least one training sample");
    LDK_CHECK(cfg.lr > 0.0, ErrKind::config, "pipelines", "learning rate must be positive");
}

template <class T>
Tensor<T> stack_images(const std::vector<Sample<T>>& data, const std::vector<int>& idx) {
    int H = data[0].image.dim(1), W = data[0].image.dim(2);
    Tensor<T> out({static_cast<int>(idx.size()), 3, H, W});
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(data[idx[i]].image.data(), data[idx[i]].image.size(),
                    out.data() + static_cast<int64_t>(i) * 3 * H * W);
    return out;
}

}  // namespace detail

// ---- stage 1: autoencoder training ----

template <class T = float>
struct AeTrainResult {
    Autoencoder<T> ae;
    Discriminator<T> disc;
    std::vector<LogEntry> log;
    double final_recon = 0.0;  // exponentially smoothed L1
};

template <class T = float>
AeTrainResult<T> train_autoencoder(const TrainConfig& cfg, const LogFn& on_log = nullptr) {
    detail::validate_train_config(cfg);
    LDK_CHECK(cfg.data.resolution % cfg.ae.f == 0, ErrKind::config, "pipelines.train_ae",
              "resolution must be divisible by the autoencoder factor");

    std::vector<Sample<T>> data;
    for (int i = 0; i < cfg.data.count - cfg.holdout; ++i)
        data.push_back(make_sample<T>(cfg.data, i));

    AeTrainResult<T> out{make_autoencoder<T>(cfg.ae, Rng(cfg.seed, "ae_init")),
                         Discriminator<T>{},
                         {},
                         0.0};
    DiscriminatorConfig dcfg = cfg.disc;
    dcfg.in_ch = cfg.ae.in_ch;
    out.disc = make_discriminator<T>(dcfg, Rng(cfg.seed, "disc_init"));

    Adam<T> opt_g(out.ae.params, static_cast<T>(cfg.lr), static_cast<T>(cfg.adam_beta1),
                  static_cast<T>(cfg.adam_beta2));
    Adam<T> opt_d(out.disc.params, static_cast<T>(cfg.lr), static_cast<T>(cfg.adam_beta1),
                  static_cast<T>(cfg.adam_beta2));
    Rng batch_rng(cfg.seed, "ae_batches");
    Rng noise_rng(cfg.seed, "ae_noise");
    Rng reseed_rng(cfg.seed, "vq_reseed");

    std::vector<int64_t> code_hits;
    if (cfg.ae.reg == LatentReg::vq) code_hits.assign(cfg.ae.codebook_size, 0);

    double smoothed = -1.0;
    int n_train = static_cast<int>(data.size());
    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<int> idx(cfg.batch);
        for (int& i : idx) i = static_cast<int>(batch_rng.below(n_train));
        Tensor<T> x = detail::stack_images(data, idx);

        Graph<T> g;
        AeLossOut<T> lo = autoencoder_loss(out.ae, out.disc, g, g.constant(x), cfg.loss, step,
                                           noise_rng, /*build_disc=*/false);
        double gen = static_cast<double>(lo.generator_loss.val()[0]);
        LDK_CHECK(std::isfinite(gen), ErrKind::divergence, "pipelines.train_ae",
                  "non-finite generator loss at step " + std::to_string(step));
        g.backward(lo.generator_loss);
        opt_g.step();
        out.ae.params.zero_grad();
        out.disc.params.zero_grad();

        // the discriminator trains on its own graph, against constants, from
        // the moment the adversarial term switches on
        std::map<std::string, double> disc_comps;
        if (cfg.loss.w_adv > 0.0 && step >= cfg.loss.adv_warmup) {
            Graph<T> gd;
            Var<T> logits_real = discriminator_logits_g(out.disc, gd, gd.constant(x));
            Var<T> logits_fake =
                discriminator_logits_g(out.disc, gd, gd.constant(lo.recon.val()));
            Var<T> hinge =
                add(mean_all(relu(add_scalar(scale(logits_real, T(-1)), T(1)))),
                    mean_all(relu(add_scalar(logits_fake, T(1)))));
            double dv = static_cast<double>(hinge.val()[0]);
            LDK_CHECK(std::isfinite(dv), ErrKind::divergence, "pipelines.train_ae",
                      "non-finite discriminator loss at step " + std::to_string(step));
            gd.backward(hinge);
            opt_d.step();
            out.disc.params.zero_grad();
            disc_comps["disc_hinge"] = dv;
        }

        if (cfg.ae.reg == LatentReg::vq) {
            for (int c : lo.vq_indices) ++code_hits[c];
            if (cfg.vq_reseed_every > 0 && (step + 1) % cfg.vq_reseed_every == 0) {
                // dead codes are re-seeded near live encoder outputs so the
                // codebook keeps covering the latent distribution
                EncodeResult<T> er = encode(out.ae, x, nullptr);
                Tensor<T>& cb = out.ae.params.at("reg.codebook").v;
                int C = out.ae.cfg.z_ch;
                int64_t rows = er.z.size() / C;
                int64_t hw = static_cast<int64_t>(er.z.dim(2)) * er.z.dim(3);
                for (int k = 0; k < cfg.ae.codebook_size; ++k) {
                    if (code_hits[k] > 0) continue;
                    int64_t r = static_cast<int64_t>(reseed_rng.below(rows));
                    int64_t n = r / hw, p = r % hw;
                    for (int c = 0; c < C; ++c)
                        cb[static_cast<int64_t>(k) * C + c] =
                            er.z[(n * C + c) * hw + p] +
                            static_cast<T>(0.01 * reseed_rng.normal());
                }
                std::fill(code_hits.begin(), code_hits.end(), 0);
            }
        }

        double recon = lo.components.at("recon_l1");
        smoothed = smoothed < 0 ? recon : 0.99 * smoothed + 0.01 * recon;
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            LogEntry e;
            e.step = step + 1;
            e.values = lo.components;
            for (const auto& [k, v] : disc_comps) e.values[k] = v;
            e.values["recon_smoothed"] = smoothed;
            out.log.push_back(e);
            if (on_log) on_log(e);
        }
    }
    out.final_recon = smoothed;
    return out;
}

// Mean reconstruction quality over a held-out set (encoder mode, no noise).
template <class T>
std::pair<double, double> eval_autoencoder(Autoencoder<T>& ae,
                                           const std::vector<Sample<T>>& held) {
    LDK_CHECK(!held.empty(), ErrKind::config, "pipelines.eval_ae", "empty evaluation set");
    double p = 0, s = 0;
    for (const Sample<T>& smp : held) {
        Tensor<T> x = smp.image;
        Shape batched = {1, x.dim(0), x.dim(1), x.dim(2)};
        Tensor<T> xb(batched);
        std::copy_n(x.data(), x.size(), xb.data());
        Tensor<T> recon = decode(ae, encode(ae, xb, nullptr).z);
        p += psnr(recon, xb, 2.0);  // pixel range is [-1,1]
        s += ssim(recon, xb, 2.0);
    }
    return {p / held.size(), s / held.size()};
}

// ---- stage 2: latent diffusion training ----

// A trained denoiser plus everything needed to sample from it. For f = 1 the
// "latent" is the pixel image itself and no first stage exists.
template <class T = float>
struct Ldm {
    TaskKind task = TaskKind::unconditional;
    NoiseSchedule ns;
    Unet<T> unet;
    TokenEncoder<T> tok;    // token task only
    ClassEmbedder<T> cls;   // class task only
    LatentScale zscale;     // identity unless KL latents were rescaled
    int f = 1;
    int z_ch = 3;
    int latent_h = 0, latent_w = 0;  // latent grid at training resolution

    int64_t num_scalars() {
        int64_t n = unet.params.num_scalars();
        if (task == TaskKind::token_conditional) n += tok.params.num_scalars();
        if (task == TaskKind::class_conditional) n += cls.params.num_scalars();
        return n;
    }
};

template <class T = float>
struct LdmTrainResult {
    Ldm<T> ldm;
    std::vector<LogEntry> log;
    double final_loss = 0.0;  // exponentially smoothed denoising MSE
};

namespace detail {

// Latent for one image batch: encode + rescale, or the image itself at f=1.
template <class T>
Tensor<T> to_latent(Autoencoder<T>* ae, const Tensor<T>& x, const LatentScale& zs, Rng* rng) {
    if (!ae) return x;
    Tensor<T> z = encode(*ae, x, rng).z;
    return zs.sigma_hat == 1.0 ? z : rescale_latent(z, zs);
}

}  // namespace detail

// Trains the denoiser on latents of a frozen first stage. `first_stage` may
// be null only when cfg.ae.f == 1 (pixel-space baseline). `init` continues
// from an existing model (fine-tuning) instead of a fresh one.
template <class T = float>
LdmTrainResult<T> train_ldm(const TrainConfig& cfg, Autoencoder<T>* first_stage,
                            const LogFn& on_log = nullptr, const Ldm<T>* init = nullptr) {
    detail::validate_train_config(cfg);
    int f = first_stage ? first_stage->cfg.f : 1;
    if (first_stage) {
        LDK_CHECK(first_stage->cfg.f == cfg.ae.f && first_stage->cfg.z_ch == cfg.ae.z_ch,
                  ErrKind::checkpoint, "pipelines.train_ldm",
                  "first-stage checkpoint does not match the configured f/z_ch");
    } else {
        LDK_CHECK(cfg.ae.f == 1, ErrKind::config, "pipelines.train_ldm",
                  "missing first stage: only f=1 may train without one");
    }
    LDK_CHECK(cfg.data.resolution % f == 0, ErrKind::config, "pipelines.train_ldm",
              "resolution must be divisible by f");
    uint64_t stage1_hash = first_stage ? detail::param_store_hash(first_stage->params) : 0;

    std::vector<Sample<T>> data;
    for (int i = 0; i < cfg.data.count - cfg.holdout; ++i)
        data.push_back(make_sample<T>(cfg.data, i));
    std::vector<TaskSample<T>> tasks =
        build_task_samples(cfg.task, data, f, Rng(cfg.data.seed, "train_masks"));

    LdmTrainResult<T> out;
    Ldm<T>& ldm = out.ldm;
    ldm.task = cfg.task;
    ldm.ns = make_schedule(cfg.sched, cfg.T, cfg.beta_start, cfg.beta_end);
    ldm.f = f;
    ldm.z_ch = first_stage ? first_stage->cfg.z_ch : 3;
    ldm.latent_h = cfg.data.resolution / f;
    ldm.latent_w = cfg.data.resolution / f;

    UnetConfig ucfg = cfg.unet;
    ucfg.in_ch = ldm.z_ch;
    ucfg.mode = task_cond_mode(cfg.task);
    ucfg.cond_ch = task_cond_channels(cfg.task);
    if (ucfg.mode == CondMode::class_id || ucfg.mode == CondMode::tokens) {
        LDK_CHECK(ucfg.d_tau > 0, ErrKind::config, "pipelines.train_ldm",
                  "class/token conditioning needs d_tau > 0");
    } else {
        ucfg.d_tau = 0;
    }
    if (init) {
        LDK_CHECK(init->task == cfg.task, ErrKind::config, "pipelines.train_ldm",
                  "fine-tuning must keep the task kind");
        ucfg = init->unet.cfg;
        ldm.unet = make_unet<T>(ucfg, Rng(0, 0));
        detail::clone_store(ldm.unet.params, init->unet.params);
        if (ucfg.mode == CondMode::tokens) {
            ldm.tok = make_token_encoder<T>(init->tok.cfg, Rng(0, 0));
            detail::clone_store(ldm.tok.params, init->tok.params);
        }
        if (ucfg.mode == CondMode::class_id) {
            ldm.cls = make_class_embedder<T>(init->cls.cfg, Rng(0, 0));
            detail::clone_store(ldm.cls.params, init->cls.params);
        }
        ldm.zscale = init->zscale;
    } else {
        ldm.unet = make_unet<T>(ucfg, Rng(cfg.seed, "unet_init"));
        if (ucfg.mode == CondMode::tokens) {
            TokenEncoderConfig tcfg = cfg.tok;
            tcfg.vocab = static_cast<int>(caption_vocab().size());
            tcfg.d_tau = ucfg.d_tau;
            ldm.tok = make_token_encoder<T>(tcfg, Rng(cfg.seed, "tok_init"));
        }
        if (ucfg.mode == CondMode::class_id) {
            ClassEmbedderConfig ccfg;
            ccfg.num_classes = kNumClasses;
            ccfg.d_tau = ucfg.d_tau;
            ldm.cls = make_class_embedder<T>(ccfg, Rng(cfg.seed, "cls_init"));
        }
    }

    Adam<T> opt(ldm.unet.params, static_cast<T>(cfg.lr), static_cast<T>(cfg.adam_beta1),
                static_cast<T>(cfg.adam_beta2));
    std::optional<Adam<T>> opt_cond;
    if (ucfg.mode == CondMode::tokens)
        opt_cond.emplace(ldm.tok.params, static_cast<T>(cfg.lr),
                         static_cast<T>(cfg.adam_beta1), static_cast<T>(cfg.adam_beta2));
    if (ucfg.mode == CondMode::class_id)
        opt_cond.emplace(ldm.cls.params, static_cast<T>(cfg.lr),
                         static_cast<T>(cfg.adam_beta1), static_cast<T>(cfg.adam_beta2));

    Rng batch_rng(cfg.seed, "ldm_batches");
    Rng enc_rng(cfg.seed, "ldm_encoder_noise");
    Rng t_rng(cfg.seed, "ldm_timesteps");
    Rng eps_rng(cfg.seed, "ldm_noise");
    Rng drop_rng(cfg.seed, "cond_dropout");

    int n_train = static_cast<int>(tasks.size());
    double smoothed = -1.0;
    int64_t dropped = 0, seen = 0;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<int> idx(cfg.batch);
        for (int& i : idx) i = static_cast<int>(batch_rng.below(n_train));
        Tensor<T> x({cfg.batch, 3, cfg.data.resolution, cfg.data.resolution});
        for (int b = 0; b < cfg.batch; ++b) {
            Tensor<T> img({1, 3, cfg.data.resolution, cfg.data.resolution});
            std::copy_n(tasks[idx[b]].image.data(), tasks[idx[b]].image.size(), img.data());
            detail::set_nth(x, b, img);
        }

        // the latent scale comes from the very first batch and then stays
        if (step == 0 && !init && first_stage && cfg.ae.reg == LatentReg::kl &&
            cfg.rescale_latents) {
            Tensor<T> z0 = detail::to_latent(first_stage, x, LatentScale{}, &enc_rng);
            ldm.zscale = estimate_latent_scale(z0, "first training batch");
        }
        Tensor<T> z0 = detail::to_latent(first_stage, x, ldm.zscale, &enc_rng);

        std::vector<int> ts(cfg.batch);
        for (int& t : ts) t = 1 + static_cast<int>(t_rng.below(cfg.T));
        Tensor<T> eps = eps_rng.template normal_tensor<T>(z0.shape());
        Tensor<T> zt(z0.shape());
        int64_t block = z0.size() / cfg.batch;
        for (int b = 0; b < cfg.batch; ++b) {
            T a = static_cast<T>(ldm.ns.alpha(ts[b]));
            T s = static_cast<T>(ldm.ns.sigma(ts[b]));
            for (int64_t i = b * block; i < (b + 1) * block; ++i)
                zt[i] = a * z0[i] + s * eps[i];
        }

        Graph<T> g;
        Var<T> x_in = g.constant(zt);
        std::vector<Var<T>> ctx;
        if (ucfg.mode == CondMode::spatial_concat) {
            Tensor<T> cond({cfg.batch, ucfg.cond_ch, ldm.latent_h, ldm.latent_w});
            for (int b = 0; b < cfg.batch; ++b) {
                ++seen;
                bool drop = drop_rng.uniform() < cfg.cond_dropout;
                if (drop) {
                    ++dropped;
                    Tensor<T> zero({1, ucfg.cond_ch, ldm.latent_h, ldm.latent_w});
                    zero.fill(T(0));
                    detail::set_nth(cond, b, zero);
                } else {
                    const Tensor<T>& m = tasks[idx[b]].cond_map;
                    Tensor<T> one({1, ucfg.cond_ch, ldm.latent_h, ldm.latent_w});
                    LDK_CHECK(m.size() == one.size(), ErrKind::shape, "pipelines.train_ldm",
                              "conditioning map does not match the latent grid");
                    std::copy_n(m.data(), m.size(), one.data());
                    detail::set_nth(cond, b, one);
                }
            }
            x_in = concat_conditioning(x_in, g.constant(cond));
        } else if (ucfg.mode == CondMode::class_id) {
            for (int b = 0; b < cfg.batch; ++b) {
                ++seen;
                bool drop = drop_rng.uniform() < cfg.cond_dropout;
                if (drop) ++dropped;
                int id = drop ? ldm.cls.null_id() : tasks[idx[b]].class_id;
                ctx.push_back(embed_class(ldm.cls, g, id));
            }
        } else if (ucfg.mode == CondMode::tokens) {
            for (int b = 0; b < cfg.batch; ++b) {
                ++seen;
                bool drop = drop_rng.uniform() < cfg.cond_dropout;
                if (drop) ++dropped;
                ctx.push_back(encode_tokens(ldm.tok, g,
                                            drop ? null_tokens() : tasks[idx[b]].tokens));
            }
        }

        Var<T> eps_hat = unet_forward(ldm.unet, g, x_in, ts, ctx);
        Var<T> loss = mse_loss(eps_hat, g.constant(eps));
        double lv = static_cast<double>(loss.val()[0]);
        LDK_CHECK(std::isfinite(lv), ErrKind::divergence, "pipelines.train_ldm",
                  "non-finite loss at step " + std::to_string(step));
        g.backward(loss);
        opt.step();
        if (opt_cond) opt_cond->step();
        ldm.unet.params.zero_grad();
        ldm.tok.params.zero_grad();
        ldm.cls.params.zero_grad();

        smoothed = smoothed < 0 ? lv : 0.99 * smoothed + 0.01 * lv;
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            LogEntry e;
            e.step = step + 1;
            e.values["mse"] = lv;
            e.values["mse_smoothed"] = smoothed;
            if (seen > 0) e.values["drop_rate"] = static_cast<double>(dropped) / seen;
            out.log.push_back(e);
            if (on_log) on_log(e);
        }
    }
    out.final_loss = smoothed;

    if (first_stage)
        LDK_CHECK(detail::param_store_hash(first_stage->params) == stage1_hash,
                  ErrKind::divergence, "pipelines.train_ldm",
                  "first-stage parameters changed during denoiser training");
    return out;
}

// ---- sampling ----

struct SamplerOpts {
    bool ddim = true;
    int ddim_steps = 50;  // <= 0 or >= T means every step
    double eta = 0.0;
    double cfg_scale = 1.0;  // 1 = plain conditional, 0 = unconditional
    int resolution_multiplier = 1;
    int count = 1;
    uint64_t seed = 0;
};

// What the caller conditions on; leave fields at defaults for tasks that do
// not use them. Spatial maps must already be at the (multiplied) latent grid.
template <class T>
struct TaskCond {
    int class_id = -1;
    std::vector<int> tokens;
    Tensor<T> cond_map;
};

namespace detail {

// Decoder for guidance/decoding in sampling space: undoes latent rescaling,
// then runs the frozen first stage (or nothing at f=1).
template <class T>
DecoderG<T> sampling_decoder(Autoencoder<T>* ae, const LatentScale& zs) {
    if (!ae) return [](Graph<T>&, Var<T> z) { return z; };
    T s = static_cast<T>(zs.sigma_hat);
    return [ae, s](Graph<T>& g, Var<T> z) {
        return decode_g(*ae, g, s == T(1) ? z : scale(z, s)).x;
    };
}

}  // namespace detail

// The denoiser the samplers see: runs the model with the task conditioning,
// and blends in the null-conditioned prediction when cfg_scale != 1.
template <class T>
DenoiserFn<T> task_denoiser(Ldm<T>& ldm, const TaskCond<T>& cond, double cfg_scale,
                            int multiplier = 1) {
    UnetConfig& ucfg = ldm.unet.cfg;
    int h = ldm.latent_h * multiplier, w = ldm.latent_w * multiplier;
    if (ucfg.mode == CondMode::spatial_concat) {
        LDK_CHECK(cond.cond_map.ndim() == 3 && cond.cond_map.dim(0) == ucfg.cond_ch &&
                      cond.cond_map.dim(1) == h && cond.cond_map.dim(2) == w,
                  ErrKind::shape, "pipelines.sample",
                  "conditioning map must be [" + std::to_string(ucfg.cond_ch) + "," +
                      std::to_string(h) + "," + std::to_string(w) + "]");
    }
    if (ucfg.mode == CondMode::class_id)
        LDK_CHECK(cond.class_id >= 0 && cond.class_id < kNumClasses, ErrKind::config,
                  "pipelines.sample", "class id out of range");
    if (ucfg.mode == CondMode::tokens)
        LDK_CHECK(!cond.tokens.empty(), ErrKind::config, "pipelines.sample",
                  "token conditioning needs a caption");

    Ldm<T>* m = &ldm;
    TaskCond<T> c = cond;
    return [m, c, cfg_scale](const Tensor<T>& zt, int t) {
        Graph<T> g(false);
        UnetConfig& uc = m->unet.cfg;
        std::vector<int> ts{t};

        auto run = [&](bool null_cond) {
            Var<T> x_in = g.constant(zt);
            std::vector<Var<T>> ctx;
            if (uc.mode == CondMode::spatial_concat) {
                Tensor<T> map({1, uc.cond_ch, zt.dim(2), zt.dim(3)});
                if (null_cond) {
                    map.fill(T(0));
                } else {
                    std::copy_n(c.cond_map.data(), c.cond_map.size(), map.data());
                }
                x_in = concat_conditioning(x_in, g.constant(map));
            } else if (uc.mode == CondMode::class_id) {
                ctx.push_back(embed_class(m->cls, g,
                                          null_cond ? m->cls.null_id() : c.class_id));
            } else if (uc.mode == CondMode::tokens) {
                ctx.push_back(encode_tokens(m->tok, g, null_cond ? null_tokens() : c.tokens));
            }
            return unet_forward(m->unet, g, x_in, ts, ctx).val();
        };

        if (uc.mode == CondMode::none) return run(false);
        if (cfg_scale == 1.0) return run(false);
        if (cfg_scale == 0.0) return run(true);
        return guide_cfg(run(false), run(true), cfg_scale);
    };
}

// Samples `count` images: draw latents, undo rescaling, decode. At
// multiplier k the latent grid is k times larger and the decoder emits a
// k-times-larger image. An image guider (e.g. from upsample_guider) may be
// attached; its target must live in decoded-image space.
template <class T>
std::vector<Tensor<T>> sample_task(Ldm<T>& ldm, std::type_identity_t<Autoencoder<T>*> first_stage,
                                   const TaskCond<T>& cond, const SamplerOpts& opts,
                                   const GuiderSpec<T>* guider = nullptr) {
    LDK_CHECK(opts.resolution_multiplier == 1 || opts.resolution_multiplier == 2 ||
                  opts.resolution_multiplier == 4,
              ErrKind::config, "pipelines.sample", "resolution multiplier must be 1, 2, or 4");
    LDK_CHECK(opts.count > 0, ErrKind::config, "pipelines.sample", "count must be positive");
    LDK_CHECK((first_stage != nullptr) == (ldm.f > 1), ErrKind::checkpoint, "pipelines.sample",
              "first stage required exactly when f > 1");
    if (first_stage)
        LDK_CHECK(first_stage->cfg.z_ch == ldm.z_ch, ErrKind::checkpoint, "pipelines.sample",
                  "first-stage latent channels do not match the denoiser");

    int k = opts.resolution_multiplier;
    DenoiserFn<T> fn = task_denoiser(ldm, cond, opts.cfg_scale, k);
    if (guider) {
        LDK_CHECK(guider->kind == GuiderKind::image, ErrKind::config, "pipelines.sample",
                  "only image guiders attach to sampling");
        fn = guided_denoiser(fn, *guider, detail::sampling_decoder(first_stage, ldm.zscale),
                             ldm.ns);
    }
    Shape zshape{1, ldm.z_ch, ldm.latent_h * k, ldm.latent_w * k};

    std::vector<Tensor<T>> images;
    images.reserve(opts.count);
    Rng base(opts.seed, "sample");
    for (int i = 0; i < opts.count; ++i) {
        Rng rng = base.child(static_cast<uint64_t>(i));
        Tensor<T> z;
        if (opts.ddim) {
            int n = opts.ddim_steps <= 0 ? ldm.ns.T : std::min(opts.ddim_steps, ldm.ns.T);
            z = sample_ddim(fn, zshape, ldm.ns, ddim_subset(ldm.ns.T, n), opts.eta, rng);
        } else {
            z = sample_ancestral(fn, zshape, ldm.ns, rng);
        }
        if (first_stage) {
            if (ldm.zscale.sigma_hat != 1.0) z = unrescale_latent(z, ldm.zscale);
            images.push_back(decode(*first_stage, z));
        } else {
            images.push_back(std::move(z));
        }
    }
    return images;
}

// ---- LDM-f sweep ----

// Trains one denoiser per downsampling factor under an identical budget and
// scores each against the training distribution with the feature-Frechet
// distance. Parameter counts across entries must agree within 10% so the
// comparison isolates the factor, not capacity.
struct SweepRow {
    int f = 1;
    int64_t params = 0;
    int64_t steps = 0;
    double mean_loss = 0.0;            // final smoothed MSE, averaged over seeds
    double mean_ffd = 0.0;
    std::vector<double> ffd_seeds;     // one entry per seed
};

struct SweepOpts {
    int n_seeds = 3;
    int eval_samples = 160;  // per FFD measurement; must exceed d_feat
    int ddim_steps = 20;
    std::map<int, int> unet_base;  // per-f width override for parameter parity
};

template <class T = float>
std::vector<SweepRow> ldm_f_sweep(const std::vector<int>& fs, const TrainConfig& base_cfg,
                                  const std::map<int, Autoencoder<T>*>& stages,
                                  FeatureExtractor<T>& fx, const SweepOpts& opts,
                                  const LogFn& on_log = nullptr) {
    LDK_CHECK(!fs.empty(), ErrKind::config, "pipelines.sweep", "need at least one factor");
    for (int f : fs)
        LDK_CHECK(f == 1 || stages.count(f), ErrKind::checkpoint, "pipelines.sweep",
                  "missing first stage for f=" + std::to_string(f));

    // reference features from the real data
    std::vector<Sample<T>> ref;
    for (int i = 0; i < opts.eval_samples; ++i) ref.push_back(make_sample<T>(base_cfg.data, i));
    Tensor<T> ref_imgs({opts.eval_samples, 3, base_cfg.data.resolution, base_cfg.data.resolution});
    for (int i = 0; i < opts.eval_samples; ++i)
        std::copy_n(ref[i].image.data(), ref[i].image.size(),
                    ref_imgs.data() + static_cast<int64_t>(i) * ref[i].image.size());
    Tensor<T> ref_feats = extract_features(fx, ref_imgs);

    std::vector<SweepRow> rows;
    for (int f : fs) {
        TrainConfig cfg = base_cfg;
        cfg.task = TaskKind::unconditional;
        Autoencoder<T>* stage = f == 1 ? nullptr : stages.at(f);
        cfg.ae = stage ? stage->cfg : AutoencoderConfig{};
        if (!stage) cfg.ae.f = 1;
        if (opts.unet_base.count(f)) cfg.unet.base = opts.unet_base.at(f);

        SweepRow row;
        row.f = f;
        row.steps = cfg.steps;
        for (int s = 0; s < opts.n_seeds; ++s) {
            cfg.seed = base_cfg.seed + static_cast<uint64_t>(s);
            LdmTrainResult<T> r = train_ldm<T>(cfg, stage, on_log);
            row.params = r.ldm.num_scalars();
            row.mean_loss += r.final_loss / opts.n_seeds;

            SamplerOpts so;
            so.ddim_steps = opts.ddim_steps;
            so.count = opts.eval_samples;
            so.seed = cfg.seed + 9000;
            std::vector<Tensor<T>> imgs = sample_task(r.ldm, stage, TaskCond<T>{}, so);
            Tensor<T> batch({opts.eval_samples, 3, base_cfg.data.resolution,
                             base_cfg.data.resolution});
            for (int i = 0; i < opts.eval_samples; ++i) detail::set_nth(batch, i, imgs[i]);
            double ffd = frechet_feature_distance(extract_features(fx, batch), ref_feats);
            row.ffd_seeds.push_back(ffd);
            row.mean_ffd += ffd / opts.n_seeds;
        }
        rows.push_back(std::move(row));
    }

    int64_t pmin = rows[0].params, pmax = rows[0].params;
    for (const SweepRow& r : rows) {
        pmin = std::min(pmin, r.params);
        pmax = std::max(pmax, r.params);
    }
    LDK_CHECK(pmax <= pmin + pmin / 10, ErrKind::config, "pipelines.sweep",
              "entry parameter counts differ by more than 10% (" + std::to_string(pmin) +
                  " vs " + std::to_string(pmax) + "); adjust unet_base");
    return rows;
}

// ---- checkpoint packing ----

namespace detail {

template <class T>
void copy_params_in(ParamStore<float>& dst, const ParamStore<T>& src,
                    const std::string& prefix = "") {
    for (size_t i = 0; i < src.size(); ++i) {
        Param<float>& p = dst.create(prefix + src[i].name, src[i].v.shape());
        for (int64_t j = 0; j < p.v.size(); ++j) p.v[j] = static_cast<float>(src[i].v[j]);
    }
}

template <class T>
void copy_params_out(ParamStore<float>& src, ParamStore<T>& dst,
                     const std::string& prefix = "") {
    for (size_t i = 0; i < dst.size(); ++i) {
        const Param<float>& p = src.at(prefix + dst[i].name);
        LDK_CHECK(p.v.shape() == dst[i].v.shape(), ErrKind::checkpoint, "pipelines",
                  "shape mismatch restoring " + prefix + dst[i].name);
        for (int64_t j = 0; j < p.v.size(); ++j) dst[i].v[j] = static_cast<T>(p.v[j]);
    }
}

inline void put_ae_config(Config& doc, const AutoencoderConfig& ae) {
    doc.set_int("autoencoder", "f", ae.f);
    doc.set_int("autoencoder", "in_ch", ae.in_ch);
    doc.set_int("autoencoder", "z_ch", ae.z_ch);
    doc.set_int("autoencoder", "base", ae.base);
    doc.set_int("autoencoder", "max_width", ae.max_width);
    doc.set_int("autoencoder", "res_blocks", ae.res_blocks);
    doc.set_int("autoencoder", "gn_groups", ae.gn_groups);
    doc.set_str("autoencoder", "reg", latent_reg_name(ae.reg));
    doc.set_int("autoencoder", "codebook_size", ae.codebook_size);
}

inline AutoencoderConfig get_ae_config(const Config& doc) {
    AutoencoderConfig ae;
    ae.f = static_cast<int>(doc.get_int("autoencoder", "f", ae.f));
    ae.in_ch = static_cast<int>(doc.get_int("autoencoder", "in_ch", ae.in_ch));
    ae.z_ch = static_cast<int>(doc.get_int("autoencoder", "z_ch", ae.z_ch));
    ae.base = static_cast<int>(doc.get_int("autoencoder", "base", ae.base));
    ae.max_width = static_cast<int>(doc.get_int("autoencoder", "max_width", ae.max_width));
    ae.res_blocks = static_cast<int>(doc.get_int("autoencoder", "res_blocks", ae.res_blocks));
    ae.gn_groups = static_cast<int>(doc.get_int("autoencoder", "gn_groups", ae.gn_groups));
    ae.reg = latent_reg_from(doc.get_str("autoencoder", "reg", "kl"));
    ae.codebook_size =
        static_cast<int>(doc.get_int("autoencoder", "codebook_size", ae.codebook_size));
    return ae;
}

inline std::string ints_to_csv(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::vector<int> csv_to_ints(const std::string& s) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        out.push_back(std::stoi(s.substr(pos, next - pos)));
        pos = next + 1;
    }
    LDK_CHECK(!out.empty(), ErrKind::config, "pipelines", "empty channel-multiplier list");
    return out;
}

inline void put_unet_config(Config& doc, const UnetConfig& u) {
    doc.set_int("unet", "in_ch", u.in_ch);
    doc.set_int("unet", "cond_ch", u.cond_ch);
    doc.set_int("unet", "base", u.base);
    doc.set_str("unet", "ch_mult", ints_to_csv(u.ch_mult));
    doc.set_int("unet", "res_blocks", u.res_blocks);
    doc.set_int("unet", "gn_groups", u.gn_groups);
    doc.set_int("unet", "time_dim", u.time_dim);
    doc.set_int("unet", "heads", u.heads);
    doc.set_int("unet", "attn_levels", u.attn_levels);
    doc.set_int("unet", "d_tau", u.d_tau);
    doc.set_int("unet", "mlp_mult", u.mlp_mult);
    doc.set_str("unet", "cond_mode", cond_mode_name(u.mode));
}

inline UnetConfig get_unet_config(const Config& doc) {
    UnetConfig u;
    u.in_ch = static_cast<int>(doc.get_int("unet", "in_ch", u.in_ch));
    u.cond_ch = static_cast<int>(doc.get_int("unet", "cond_ch", u.cond_ch));
    u.base = static_cast<int>(doc.get_int("unet", "base", u.base));
    u.ch_mult = csv_to_ints(doc.get_str("unet", "ch_mult", ints_to_csv(u.ch_mult)));
    u.res_blocks = static_cast<int>(doc.get_int("unet", "res_blocks", u.res_blocks));
    u.gn_groups = static_cast<int>(doc.get_int("unet", "gn_groups", u.gn_groups));
    u.time_dim = static_cast<int>(doc.get_int("unet", "time_dim", u.time_dim));
    u.heads = static_cast<int>(doc.get_int("unet", "heads", u.heads));
    u.attn_levels = static_cast<int>(doc.get_int("unet", "attn_levels", u.attn_levels));
    u.d_tau = static_cast<int>(doc.get_int("unet", "d_tau", u.d_tau));
    u.mlp_mult = static_cast<int>(doc.get_int("unet", "mlp_mult", u.mlp_mult));
    u.mode = cond_mode_from(doc.get_str("unet", "cond_mode", "none"));
    return u;
}

}  // namespace detail

// Stage-1 checkpoints carry the autoencoder config so loading needs nothing
// but the file.
inline void save_autoencoder_checkpoint(const std::string& path, const Autoencoder<float>& ae,
                                        uint64_t seed, const std::string& extra_config = "") {
    Config doc = extra_config.empty() ? Config{} : Config::parse(extra_config);
    detail::put_ae_config(doc, ae.cfg);
    CheckpointMeta meta;
    meta.config_text = doc.serialize();
    meta.seed = seed;
    meta.strings["kind"] = "autoencoder";
    ParamStore<float> store;
    detail::copy_params_in(store, ae.params);
    save_checkpoint(path, store, meta);
}

inline Autoencoder<float> load_autoencoder_checkpoint(const std::string& path,
                                                      CheckpointMeta* meta_out = nullptr) {
    CheckpointReader reader(path);
    LDK_CHECK(reader.meta().strings.count("kind") &&
                  reader.meta().strings.at("kind") == "autoencoder",
              ErrKind::checkpoint, "pipelines", path + ": not an autoencoder checkpoint");
    Config doc = Config::parse(reader.meta().config_text);
    Autoencoder<float> ae = make_autoencoder<float>(detail::get_ae_config(doc), Rng(0, 0));
    ParamStore<float> store;
    detail::copy_params_in(store, ae.params);
    reader.read_into(store);
    detail::copy_params_out(store, ae.params);
    if (meta_out) *meta_out = reader.meta();
    return ae;
}

// Stage-2 checkpoints are fully self-describing: they embed the denoiser,
// conditioner, and the entire frozen first stage (prefixed "firststage."),
// so sampling needs only this file plus the conditioning input.
inline void save_ldm_checkpoint(const std::string& path, const Ldm<float>& ldm,
                                const Autoencoder<float>* first_stage, uint64_t seed,
                                const std::string& extra_config = "") {
    Config doc = extra_config.empty() ? Config{} : Config::parse(extra_config);
    detail::put_unet_config(doc, ldm.unet.cfg);
    doc.set_str("ldm", "task", task_name(ldm.task));
    doc.set_str("ldm", "schedule", schedule_kind_name(ldm.ns.kind));
    doc.set_int("ldm", "T", ldm.ns.T);
    doc.set_real("ldm", "beta_start", ldm.ns.beta_start);
    doc.set_real("ldm", "beta_end", ldm.ns.beta_end);
    doc.set_int("ldm", "f", ldm.f);
    doc.set_int("ldm", "z_ch", ldm.z_ch);
    doc.set_int("ldm", "latent_h", ldm.latent_h);
    doc.set_int("ldm", "latent_w", ldm.latent_w);
    if (ldm.task == TaskKind::token_conditional) {
        doc.set_int("token_encoder", "vocab", ldm.tok.cfg.vocab);
        doc.set_int("token_encoder", "max_tokens", ldm.tok.cfg.max_tokens);
        doc.set_int("token_encoder", "blocks", ldm.tok.cfg.blocks);
        doc.set_int("token_encoder", "heads", ldm.tok.cfg.heads);
        doc.set_int("token_encoder", "mlp_mult", ldm.tok.cfg.mlp_mult);
    }
    if (first_stage) detail::put_ae_config(doc, first_stage->cfg);

    CheckpointMeta meta;
    meta.config_text = doc.serialize();
    meta.seed = seed;
    meta.strings["kind"] = "ldm";
    meta.scalars["latent_mu"] = ldm.zscale.mu_hat;
    meta.scalars["latent_sigma"] = ldm.zscale.sigma_hat;

    ParamStore<float> store;
    detail::copy_params_in(store, ldm.unet.params);
    if (ldm.task == TaskKind::token_conditional) detail::copy_params_in(store, ldm.tok.params);
    if (ldm.task == TaskKind::class_conditional) detail::copy_params_in(store, ldm.cls.params);
    if (first_stage) detail::copy_params_in(store, first_stage->params, "firststage.");
    save_checkpoint(path, store, meta);
}

struct LoadedLdm {
    Ldm<float> ldm;
    std::optional<Autoencoder<float>> first_stage;
    CheckpointMeta meta;
};

inline LoadedLdm load_ldm_checkpoint(const std::string& path) {
    CheckpointReader reader(path);
    LDK_CHECK(reader.meta().strings.count("kind") && reader.meta().strings.at("kind") == "ldm",
              ErrKind::checkpoint, "pipelines", path + ": not a denoiser checkpoint");
    Config doc = Config::parse(reader.meta().config_text);

    LoadedLdm out;
    out.meta = reader.meta();
    Ldm<float>& ldm = out.ldm;
    ldm.task = task_from(doc.get_str("ldm", "task", "unconditional"));
    ldm.ns = make_schedule(schedule_kind_from(doc.get_str("ldm", "schedule", "linear_beta")),
                           static_cast<int>(doc.get_int("ldm", "T", 200)),
                           doc.get_real("ldm", "beta_start", 1e-4),
                           doc.get_real("ldm", "beta_end", 2e-2));
    ldm.f = static_cast<int>(doc.get_int("ldm", "f", 1));
    ldm.z_ch = static_cast<int>(doc.get_int("ldm", "z_ch", 3));
    ldm.latent_h = static_cast<int>(doc.get_int("ldm", "latent_h", 0));
    ldm.latent_w = static_cast<int>(doc.get_int("ldm", "latent_w", 0));
    ldm.zscale.mu_hat = out.meta.scalars.count("latent_mu") ? out.meta.scalars.at("latent_mu") : 0.0;
    ldm.zscale.sigma_hat =
        out.meta.scalars.count("latent_sigma") ? out.meta.scalars.at("latent_sigma") : 1.0;

    UnetConfig ucfg = detail::get_unet_config(doc);
    ldm.unet = make_unet<float>(ucfg, Rng(0, 0));
    if (ldm.task == TaskKind::token_conditional) {
        TokenEncoderConfig tcfg;
        tcfg.vocab = static_cast<int>(doc.get_int("token_encoder", "vocab", 32));
        tcfg.d_tau = ucfg.d_tau;
        tcfg.max_tokens = static_cast<int>(doc.get_int("token_encoder", "max_tokens", 8));
        tcfg.blocks = static_cast<int>(doc.get_int("token_encoder", "blocks", 2));
        tcfg.heads = static_cast<int>(doc.get_int("token_encoder", "heads", 4));
        tcfg.mlp_mult = static_cast<int>(doc.get_int("token_encoder", "mlp_mult", 2));
        ldm.tok = make_token_encoder<float>(tcfg, Rng(0, 0));
    }
    if (ldm.task == TaskKind::class_conditional) {
        ClassEmbedderConfig ccfg;
        ccfg.num_classes = kNumClasses;
        ccfg.d_tau = ucfg.d_tau;
        ldm.cls = make_class_embedder<float>(ccfg, Rng(0, 0));
    }
    if (ldm.f > 1)
        out.first_stage = make_autoencoder<float>(detail::get_ae_config(doc), Rng(0, 0));

    ParamStore<float> store;
    detail::copy_params_in(store, ldm.unet.params);
    if (ldm.task == TaskKind::token_conditional) detail::copy_params_in(store, ldm.tok.params);
    if (ldm.task == TaskKind::class_conditional) detail::copy_params_in(store, ldm.cls.params);
    if (out.first_stage) detail::copy_params_in(store, out.first_stage->params, "firststage.");
    reader.read_into(store);
    detail::copy_params_out(store, ldm.unet.params);
    if (ldm.task == TaskKind::token_conditional) detail::copy_params_out(store, ldm.tok.params);
    if (ldm.task == TaskKind::class_conditional) detail::copy_params_out(store, ldm.cls.params);
    if (out.first_stage) detail::copy_params_out(store, out.first_stage->params, "firststage.");
    return out;
}

}  // namespace ldk
