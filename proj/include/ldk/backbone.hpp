#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ldk/diffusion.hpp"
#include "ldk/nn.hpp"
#include "ldk/rng.hpp"

namespace ldk {

// ---- denoiser backbone ----
//
// A small time-conditional UNet over latents plus the conditioning stack:
// sinusoidal step embeddings, a token encoder, a class-embedding table,
// cross-attention, and channel concatenation for spatially aligned inputs.
//
// Checkpoint naming scheme (portable across implementations):
//   stem.{w,b}                      input conv
//   time.fc{1,2}.{w,b}              step-embedding MLP
//   down{L}.{J}.{role}              res block J at down level L
//   down{L}.attn.{role}             attention block at down level L
//   down{L}.down.{w,b}              stride-2 conv to the next level
//   mid.{0,1}.{role}, mid.attn.*    bottleneck
//   up{L}.up.{w,b}                  post-upsample conv back to level L width
//   up{L}.{J}.{role}, up{L}.attn.*  mirrored decoder side
//   out.norm.{g,b}, out.final.{w,b} output head
// Res-block roles: norm1/conv1/temb/norm2/conv2 (+skip for width changes).
// Attention roles: ln1, sa.{q,k,v,o}, ln2, mlp.fc{1,2}, ln3, ca.{q,k,v,o}.

// Sinusoidal step embedding, [sin(t*f_0..f_{h-1}), cos(t*f_0..f_{h-1})] with
// geometrically spaced frequencies f_i = 10000^(-i/h). The raw pattern feeds
// a learned MLP inside the UNet; on its own it is deterministic and (for
// dim >= 8) injective over the step ranges used here.
template <class T = double>
Tensor<T> time_embedding(int t, int dim) {
    LDK_CHECK(t >= 0, ErrKind::config, "backbone.time_embedding", "t must be >= 0");
    LDK_CHECK(dim >= 2 && dim % 2 == 0, ErrKind::config, "backbone.time_embedding",
              "dim must be even and >= 2");
    int half = dim / 2;
    Tensor<T> out({dim});
    for (int i = 0; i < half; ++i) {
        double f = std::pow(10000.0, -static_cast<double>(i) / half);
        out[i] = static_cast<T>(std::sin(t * f));
        out[half + i] = static_cast<T>(std::cos(t * f));
    }
    return out;
}

// ---- attention ----

// softmax(Q K^T / sqrt(d_head)) V over rows, multi-head along columns.
// q [R,d], k [M,d], v [M,dv]; d and dv must be divisible by heads.
template <class T>
Var<T> attention_rows(Var<T> q, Var<T> k, Var<T> v, int heads = 1) {
    int d = q.val().dim(1);
    int M = k.val().dim(0), dv = v.val().dim(1);
    LDK_CHECK(k.val().dim(1) == d, ErrKind::shape, "backbone.attention", "q/k dim mismatch");
    LDK_CHECK(v.val().dim(0) == M, ErrKind::shape, "backbone.attention", "k/v row mismatch");
    LDK_CHECK(heads >= 1 && d % heads == 0 && dv % heads == 0, ErrKind::shape,
              "backbone.attention", "dims not divisible by head count");
    int dh = d / heads, dvh = dv / heads;
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Var<T> qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
        Var<T> kh = heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
        Var<T> vh = heads == 1 ? v : slice_cols(v, h * dvh, (h + 1) * dvh);
        Var<T> w = softmax_rows(scale(matmul(qh, kh, MatOp::nt),
                                      static_cast<T>(1.0 / std::sqrt(double(dh)))));
        outs.push_back(matmul(w, vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

// Attend from a flattened feature map into an external context: Q comes from
// the features, K and V from the context rows. Output keeps the feature row
// count; the caller reshapes back to the spatial map and applies its own
// output projection.
template <class T>
Var<T> cross_attention(Var<T> features, Var<T> context, Var<T> wq, Var<T> wk, Var<T> wv,
                       int heads = 1) {
    LDK_CHECK(features.val().dim(1) == wq.val().dim(0), ErrKind::shape,
              "backbone.cross_attention", "feature dim does not match W_Q");
    LDK_CHECK(context.val().dim(1) == wk.val().dim(0) &&
                  context.val().dim(1) == wv.val().dim(0),
              ErrKind::shape, "backbone.cross_attention", "context dim does not match W_K/W_V");
    return attention_rows(matmul(features, wq), matmul(context, wk), matmul(context, wv), heads);
}

// ---- token encoder ----

struct TokenEncoderConfig {
    int vocab = 32;      // id 0 reserved as padding
    int d_tau = 512;     // context width
    int max_tokens = 8;  // learned position table size
    int blocks = 2;      // transformer depth (0 = embeddings + final norm only)
    int heads = 4;
    int mlp_mult = 2;
};

template <class T>
struct TokenEncoder {
    TokenEncoderConfig cfg;
    ParamStore<T> params;

    Var<T> P(Graph<T>& g, const std::string& name) { return g.param(params.at(name)); }
};

namespace detail {

template <class T>
void create_linear(ParamStore<T>& ps, Rng& rng, const std::string& stem, int in, int out,
                   double gain = 1.0) {
    auto& w = ps.create(stem + ".w", {in, out});
    init_he(w, rng, in);
    if (gain != 1.0)
        for (int64_t i = 0; i < w.v.size(); ++i) w.v[i] = static_cast<T>(w.v[i] * gain);
    init_zeros(ps.create(stem + ".b", {out}));
}

template <class T>
void create_ln(ParamStore<T>& ps, const std::string& stem, int ch) {
    init_ones(ps.create(stem + ".g", {ch}));
    init_zeros(ps.create(stem + ".b", {ch}));
}

// Projections of one attention block: q/k/v without bias, output with bias.
// `ctx_dim` is the key/value source width (== `ch` for self-attention).
template <class T>
void create_attn(ParamStore<T>& ps, Rng& rng, const std::string& stem, int ch, int ctx_dim) {
    init_he(ps.create(stem + ".q.w", {ch, ch}), rng, ch);
    init_he(ps.create(stem + ".k.w", {ctx_dim, ch}), rng, ctx_dim);
    init_he(ps.create(stem + ".v.w", {ctx_dim, ch}), rng, ctx_dim);
    create_linear(ps, rng, stem + ".o", ch, ch, 0.1);  // soft start for the residual branch
}

template <class M, class T>
Var<T> apply_self_attn(M& m, Graph<T>& g, const std::string& stem, Var<T> rows, int heads) {
    Var<T> a = attention_rows(matmul(rows, m.P(g, stem + ".q.w")),
                              matmul(rows, m.P(g, stem + ".k.w")),
                              matmul(rows, m.P(g, stem + ".v.w")), heads);
    return linear(a, m.P(g, stem + ".o.w"), m.P(g, stem + ".o.b"));
}

template <class M, class T>
Var<T> apply_cross_attn(M& m, Graph<T>& g, const std::string& stem, Var<T> rows, Var<T> ctx,
                        int heads) {
    Var<T> a = cross_attention(rows, ctx, m.P(g, stem + ".q.w"), m.P(g, stem + ".k.w"),
                               m.P(g, stem + ".v.w"), heads);
    return linear(a, m.P(g, stem + ".o.w"), m.P(g, stem + ".o.b"));
}

template <class M, class T>
Var<T> apply_mlp(M& m, Graph<T>& g, const std::string& stem, Var<T> rows) {
    Var<T> h = gelu(linear(rows, m.P(g, stem + ".fc1.w"), m.P(g, stem + ".fc1.b")));
    return linear(h, m.P(g, stem + ".fc2.w"), m.P(g, stem + ".fc2.b"));
}

template <class M, class T>
Var<T> apply_ln(M& m, Graph<T>& g, const std::string& stem, Var<T> rows) {
    return layer_norm_rows(rows, m.P(g, stem + ".g"), m.P(g, stem + ".b"));
}

}  // namespace detail

template <class T>
TokenEncoder<T> make_token_encoder(const TokenEncoderConfig& cfg, Rng rng) {
    LDK_CHECK(cfg.vocab >= 1 && cfg.max_tokens >= 1 && cfg.blocks >= 0, ErrKind::config,
              "backbone.token_encoder", "invalid size parameters");
    LDK_CHECK(cfg.d_tau >= 1 && cfg.d_tau % cfg.heads == 0, ErrKind::config,
              "backbone.token_encoder", "d_tau must be divisible by heads");
    TokenEncoder<T> enc;
    enc.cfg = cfg;
    ParamStore<T>& ps = enc.params;
    init_normal(ps.create("tok.emb", {cfg.vocab, cfg.d_tau}), rng, T(0.02));
    init_normal(ps.create("tok.pos", {cfg.max_tokens, cfg.d_tau}), rng, T(0.02));
    for (int i = 0; i < cfg.blocks; ++i) {
        std::string stem = "tok.blk" + std::to_string(i);
        detail::create_ln(ps, stem + ".ln1", cfg.d_tau);
        detail::create_attn(ps, rng, stem + ".sa", cfg.d_tau, cfg.d_tau);
        detail::create_ln(ps, stem + ".ln2", cfg.d_tau);
        detail::create_linear(ps, rng, stem + ".mlp.fc1", cfg.d_tau, cfg.mlp_mult * cfg.d_tau);
        detail::create_linear(ps, rng, stem + ".mlp.fc2", cfg.mlp_mult * cfg.d_tau, cfg.d_tau,
                              0.1);
    }
    detail::create_ln(ps, "tok.final_ln", cfg.d_tau);
    return enc;
}

// zeta = TokEmb + PosEmb, then `blocks` rounds of pre-norm self-attention and
// MLP with residuals, then a final LayerNorm. Unmasked: padding positions
// (id 0) participate in attention like any other token.
template <class T>
Var<T> encode_tokens(TokenEncoder<T>& enc, Graph<T>& g, const std::vector<int>& tokens) {
    int M = static_cast<int>(tokens.size());
    LDK_CHECK(M >= 1 && M <= enc.cfg.max_tokens, ErrKind::shape, "backbone.token_encoder",
              "token count " + std::to_string(M) + " outside [1," +
                  std::to_string(enc.cfg.max_tokens) + "]");
    Var<T> zeta = add(embedding(enc.P(g, "tok.emb"), tokens),
                      slice_rows(enc.P(g, "tok.pos"), 0, M));
    for (int i = 0; i < enc.cfg.blocks; ++i) {
        std::string stem = "tok.blk" + std::to_string(i);
        zeta = add(zeta, detail::apply_self_attn(enc, g, stem + ".sa",
                                                 detail::apply_ln(enc, g, stem + ".ln1", zeta),
                                                 enc.cfg.heads));
        zeta = add(zeta, detail::apply_mlp(enc, g, stem + ".mlp",
                                           detail::apply_ln(enc, g, stem + ".ln2", zeta)));
    }
    return detail::apply_ln(enc, g, "tok.final_ln", zeta);
}

// ---- class embedding ----

struct ClassEmbedderConfig {
    int num_classes = 3;
    int d_tau = 512;
};

// One learned row per class plus a trailing null row (id == num_classes) used
// as the unconditional branch during condition dropout and guided sampling.
template <class T>
struct ClassEmbedder {
    ClassEmbedderConfig cfg;
    ParamStore<T> params;

    int null_id() const { return cfg.num_classes; }
    Var<T> P(Graph<T>& g, const std::string& name) { return g.param(params.at(name)); }
};

template <class T>
ClassEmbedder<T> make_class_embedder(const ClassEmbedderConfig& cfg, Rng rng) {
    LDK_CHECK(cfg.num_classes >= 1 && cfg.d_tau >= 1, ErrKind::config, "backbone.class_embedder",
              "invalid size parameters");
    ClassEmbedder<T> ce;
    ce.cfg = cfg;
    init_normal(ce.params.create("cls.table", {cfg.num_classes + 1, cfg.d_tau}), rng, T(0.02));
    return ce;
}

// Row y of the table as a 1-token context.
template <class T>
Var<T> embed_class(ClassEmbedder<T>& ce, Graph<T>& g, int y) {
    return embedding(ce.P(g, "cls.table"), std::vector<int>{y});
}

// ---- spatial concatenation ----

// Channel-stack spatially aligned conditioning onto the latent. Order is part
// of the format contract: latent channels first, conditioning appended after.
template <class T>
Var<T> concat_conditioning(Var<T> z, Var<T> cond) {
    return concat_channels(z, cond);
}

template <class T>
Tensor<T> concat_conditioning(const Tensor<T>& z, const Tensor<T>& cond) {
    Graph<T> g(false);
    return concat_channels(g.constant(z), g.constant(cond)).val();
}

// ---- UNet ----

enum class CondMode { none, class_id, tokens, spatial_concat, hybrid };

inline const char* cond_mode_name(CondMode m) {
    switch (m) {
        case CondMode::none: return "none";
        case CondMode::class_id: return "class";
        case CondMode::tokens: return "tokens";
        case CondMode::spatial_concat: return "spatial_concat";
        case CondMode::hybrid: return "hybrid";
    }
    return "?";
}

inline CondMode cond_mode_from(const std::string& s) {
    if (s == "none") return CondMode::none;
    if (s == "class") return CondMode::class_id;
    if (s == "tokens") return CondMode::tokens;
    if (s == "spatial_concat") return CondMode::spatial_concat;
    if (s == "hybrid") return CondMode::hybrid;
    fail(ErrKind::config, "backbone.unet",
         "unknown conditioning mode '" + s + "' (none|class|tokens|spatial_concat|hybrid)");
}

struct UnetConfig {
    int in_ch = 4;    // latent channels (also the output channel count)
    int cond_ch = 0;  // spatially concatenated conditioning channels
    int base = 32;
    std::vector<int> ch_mult = {1, 2};  // one entry per resolution level
    int res_blocks = 1;                 // per level, each side
    int gn_groups = 4;
    int time_dim = 64;
    int heads = 4;
    int attn_levels = 2;  // this many lowest-resolution levels get attention
    int d_tau = 0;        // context width; 0 disables cross-attention entirely
    int mlp_mult = 2;
    CondMode mode = CondMode::none;
};

template <class T>
struct Unet {
    UnetConfig cfg;
    ParamStore<T> params;
    std::vector<int> widths;  // per level, widths[0] at full latent resolution

    int levels() const { return static_cast<int>(widths.size()); }
    bool attended(int level) const { return level >= levels() - cfg.attn_levels; }
    bool cross() const { return cfg.d_tau > 0; }
    Var<T> P(Graph<T>& g, const std::string& name) { return g.param(params.at(name)); }
};

namespace detail {

template <class T>
void create_res_block_t(ParamStore<T>& ps, Rng& rng, const std::string& stem, int cin, int cout,
                        int time_dim) {
    create_norm(ps, stem + ".norm1", cin);
    create_conv(ps, rng, stem + ".conv1", cin, cout, 3);
    create_linear(ps, rng, stem + ".temb", time_dim, cout);
    create_norm(ps, stem + ".norm2", cout);
    create_conv(ps, rng, stem + ".conv2", cout, cout, 3, 0.1);
    if (cin != cout) create_conv(ps, rng, stem + ".skip", cin, cout, 1);
}

template <class T>
void create_tblock(ParamStore<T>& ps, Rng& rng, const std::string& stem, int ch, int d_tau,
                   int mlp_mult) {
    create_ln(ps, stem + ".ln1", ch);
    create_attn(ps, rng, stem + ".sa", ch, ch);
    create_ln(ps, stem + ".ln2", ch);
    create_linear(ps, rng, stem + ".mlp.fc1", ch, mlp_mult * ch);
    create_linear(ps, rng, stem + ".mlp.fc2", mlp_mult * ch, ch, 0.1);
    if (d_tau > 0) {
        create_ln(ps, stem + ".ln3", ch);
        create_attn(ps, rng, stem + ".ca", ch, d_tau);
    }
}

template <class T>
Var<T> apply_norm_act_u(Unet<T>& m, Graph<T>& g, const std::string& stem, Var<T> x) {
    return silu(group_norm(x, m.P(g, stem + ".g"), m.P(g, stem + ".b"), m.cfg.gn_groups));
}

template <class T>
Var<T> apply_res_block_t(Unet<T>& m, Graph<T>& g, const std::string& stem, Var<T> x,
                         Var<T> temb_rows) {
    Var<T> h = conv2d(apply_norm_act_u(m, g, stem + ".norm1", x), m.P(g, stem + ".conv1.w"),
                      m.P(g, stem + ".conv1.b"));
    h = add_channel_vec(h, linear(temb_rows, m.P(g, stem + ".temb.w"), m.P(g, stem + ".temb.b")));
    h = conv2d(apply_norm_act_u(m, g, stem + ".norm2", h), m.P(g, stem + ".conv2.w"),
               m.P(g, stem + ".conv2.b"));
    Var<T> skip = m.params.has(stem + ".skip.w")
                      ? conv2d(x, m.P(g, stem + ".skip.w"), m.P(g, stem + ".skip.b"))
                      : x;
    return add(skip, h);
}

// Alternating self-attention / MLP / cross-attention over the flattened map,
// processed per batch element so positions never attend across images. The
// context is one row block per element (or one shared block).
template <class T>
Var<T> apply_tblock(Unet<T>& m, Graph<T>& g, const std::string& stem, Var<T> x,
                    const std::vector<Var<T>>& ctx) {
    Shape s = x.shape();  // copy: node storage moves as ops append
    int N = s[0], HW = s[2] * s[3];
    Var<T> rows = nchw_to_rows(x);
    std::vector<Var<T>> parts;
    parts.reserve(N);
    for (int n = 0; n < N; ++n) {
        Var<T> r = N == 1 ? rows : slice_rows(rows, n * HW, (n + 1) * HW);
        r = add(r, apply_self_attn(m, g, stem + ".sa", apply_ln(m, g, stem + ".ln1", r),
                                   m.cfg.heads));
        r = add(r, apply_mlp(m, g, stem + ".mlp", apply_ln(m, g, stem + ".ln2", r)));
        if (!ctx.empty()) {
            Var<T> c = ctx.size() == 1 ? ctx[0] : ctx[n];
            r = add(r, apply_cross_attn(m, g, stem + ".ca", apply_ln(m, g, stem + ".ln3", r), c,
                                        m.cfg.heads));
        }
        parts.push_back(r);
    }
    return rows_to_nchw(N == 1 ? parts[0] : concat_rows(parts), s[0], s[1], s[2], s[3]);
}

}  // namespace detail

template <class T>
Unet<T> make_unet(const UnetConfig& cfg, Rng rng) {
    LDK_CHECK(cfg.in_ch >= 1 && cfg.cond_ch >= 0 && cfg.base >= 1 && !cfg.ch_mult.empty(),
              ErrKind::config, "backbone.unet", "invalid size parameters");
    LDK_CHECK(cfg.time_dim >= 2 && cfg.time_dim % 2 == 0, ErrKind::config, "backbone.unet",
              "time_dim must be even and >= 2");
    LDK_CHECK(cfg.res_blocks >= 1 && cfg.heads >= 1 && cfg.attn_levels >= 0, ErrKind::config,
              "backbone.unet", "invalid block parameters");
    bool wants_ctx =
        cfg.mode == CondMode::class_id || cfg.mode == CondMode::tokens || cfg.mode == CondMode::hybrid;
    bool wants_spatial = cfg.mode == CondMode::spatial_concat || cfg.mode == CondMode::hybrid;
    LDK_CHECK(!wants_ctx || cfg.d_tau > 0, ErrKind::config, "backbone.unet",
              "conditioning mode needs d_tau > 0");
    LDK_CHECK(wants_spatial == (cfg.cond_ch > 0), ErrKind::config, "backbone.unet",
              "cond_ch must match the conditioning mode");

    Unet<T> m;
    m.cfg = cfg;
    for (int mult : cfg.ch_mult) {
        LDK_CHECK(mult >= 1, ErrKind::config, "backbone.unet", "channel multipliers must be >= 1");
        m.widths.push_back(cfg.base * mult);
    }
    for (int i = 0; i < m.levels(); ++i) {
        LDK_CHECK(m.widths[i] % cfg.gn_groups == 0, ErrKind::config, "backbone.unet",
                  "width " + std::to_string(m.widths[i]) + " not divisible by gn_groups");
        LDK_CHECK(!m.attended(i) || m.widths[i] % cfg.heads == 0, ErrKind::config,
                  "backbone.unet",
                  "attended width " + std::to_string(m.widths[i]) + " not divisible by heads");
    }

    ParamStore<T>& ps = m.params;
    Rng r = rng;
    detail::create_conv(ps, r, "stem", cfg.in_ch + cfg.cond_ch, m.widths[0], 3);
    detail::create_linear(ps, r, "time.fc1", cfg.time_dim, cfg.time_dim);
    detail::create_linear(ps, r, "time.fc2", cfg.time_dim, cfg.time_dim);
    int L = m.levels();
    for (int l = 0; l < L; ++l) {
        std::string lv = "down" + std::to_string(l);
        for (int j = 0; j < cfg.res_blocks; ++j)
            detail::create_res_block_t(ps, r, lv + "." + std::to_string(j), m.widths[l],
                                       m.widths[l], cfg.time_dim);
        if (m.attended(l))
            detail::create_tblock(ps, r, lv + ".attn", m.widths[l], cfg.d_tau, cfg.mlp_mult);
        if (l + 1 < L) detail::create_conv(ps, r, lv + ".down", m.widths[l], m.widths[l + 1], 3);
    }
    detail::create_res_block_t(ps, r, "mid.0", m.widths[L - 1], m.widths[L - 1], cfg.time_dim);
    if (cfg.attn_levels > 0)
        detail::create_tblock(ps, r, "mid.attn", m.widths[L - 1], cfg.d_tau, cfg.mlp_mult);
    detail::create_res_block_t(ps, r, "mid.1", m.widths[L - 1], m.widths[L - 1], cfg.time_dim);
    for (int l = L - 2; l >= 0; --l) {
        std::string lv = "up" + std::to_string(l);
        detail::create_conv(ps, r, lv + ".up", m.widths[l + 1], m.widths[l], 3);
        for (int j = 0; j < cfg.res_blocks; ++j)
            detail::create_res_block_t(ps, r, lv + "." + std::to_string(j),
                                       j == 0 ? 2 * m.widths[l] : m.widths[l], m.widths[l],
                                       cfg.time_dim);
        if (m.attended(l))
            detail::create_tblock(ps, r, lv + ".attn", m.widths[l], cfg.d_tau, cfg.mlp_mult);
    }
    detail::create_norm(ps, "out.norm", m.widths[0]);
    detail::create_conv(ps, r, "out.final", m.widths[0], cfg.in_ch, 3, 0.1);
    return m;
}

// Noise prediction. `x` carries in_ch (+cond_ch for concat modes) channels;
// `t` holds one step index per batch element (or a single shared one);
// `context` holds one [M,d_tau] row block per element (or a single shared
// block) for the cross-attention modes. Fully convolutional: any H, W
// divisible by 2^(levels-1) works with the same parameters.
template <class T>
Var<T> unet_forward(Unet<T>& m, Graph<T>& g, Var<T> x, const std::vector<int>& t,
                    const std::vector<Var<T>>& context = {}) {
    Shape s = x.shape();  // copy: node storage moves as ops append
    LDK_CHECK(s.size() == 4, ErrKind::shape, "backbone.unet", "input must be NCHW");
    int N = s[0];
    LDK_CHECK(s[1] == m.cfg.in_ch + m.cfg.cond_ch, ErrKind::config, "backbone.unet",
              "input channels " + std::to_string(s[1]) + " do not match mode (want " +
                  std::to_string(m.cfg.in_ch + m.cfg.cond_ch) + ")");
    int div = 1 << (m.levels() - 1);
    LDK_CHECK(s[2] % div == 0 && s[3] % div == 0, ErrKind::shape, "backbone.unet",
              "spatial dims must be divisible by " + std::to_string(div));
    LDK_CHECK(t.size() == 1 || static_cast<int>(t.size()) == N, ErrKind::shape, "backbone.unet",
              "need one step index per element or a shared one");
    if (m.cross()) {
        LDK_CHECK(!context.empty(), ErrKind::config, "backbone.unet",
                  "conditioning mode expects a context");
        LDK_CHECK(context.size() == 1 || static_cast<int>(context.size()) == N, ErrKind::shape,
                  "backbone.unet", "need one context per element or a shared one");
        for (const auto& c : context)
            LDK_CHECK(c.val().dim(1) == m.cfg.d_tau, ErrKind::shape, "backbone.unet",
                      "context width != d_tau");
    } else {
        LDK_CHECK(context.empty(), ErrKind::config, "backbone.unet",
                  "model has no cross-attention but was given a context");
    }

    Tensor<T> emb({N, m.cfg.time_dim});
    for (int n = 0; n < N; ++n) {
        Tensor<T> e = time_embedding<T>(t.size() == 1 ? t[0] : t[n], m.cfg.time_dim);
        std::copy(e.data(), e.data() + e.size(), emb.data() + static_cast<int64_t>(n) * e.size());
    }
    Var<T> temb = linear(silu(linear(g.constant(std::move(emb)), m.P(g, "time.fc1.w"),
                                     m.P(g, "time.fc1.b"))),
                         m.P(g, "time.fc2.w"), m.P(g, "time.fc2.b"));

    Var<T> h = conv2d(x, m.P(g, "stem.w"), m.P(g, "stem.b"));
    int L = m.levels();
    std::vector<Var<T>> skips;
    for (int l = 0; l < L; ++l) {
        std::string lv = "down" + std::to_string(l);
        for (int j = 0; j < m.cfg.res_blocks; ++j)
            h = detail::apply_res_block_t(m, g, lv + "." + std::to_string(j), h, temb);
        if (m.attended(l)) h = detail::apply_tblock(m, g, lv + ".attn", h, context);
        if (l + 1 < L) {
            skips.push_back(h);
            h = conv2d(h, m.P(g, lv + ".down.w"), m.P(g, lv + ".down.b"), 2);
        }
    }
    h = detail::apply_res_block_t(m, g, "mid.0", h, temb);
    if (m.cfg.attn_levels > 0) h = detail::apply_tblock(m, g, "mid.attn", h, context);
    h = detail::apply_res_block_t(m, g, "mid.1", h, temb);
    for (int l = L - 2; l >= 0; --l) {
        std::string lv = "up" + std::to_string(l);
        h = conv2d(upsample_nearest2x(h), m.P(g, lv + ".up.w"), m.P(g, lv + ".up.b"));
        h = concat_channels(h, skips.back());
        skips.pop_back();
        for (int j = 0; j < m.cfg.res_blocks; ++j)
            h = detail::apply_res_block_t(m, g, lv + "." + std::to_string(j), h, temb);
        if (m.attended(l)) h = detail::apply_tblock(m, g, lv + ".attn", h, context);
    }
    return conv2d(detail::apply_norm_act_u(m, g, "out.norm", h), m.P(g, "out.final.w"),
                  m.P(g, "out.final.b"));
}

// Plain-tensor adapter for the samplers: evaluates the frozen model on a
// non-recording graph. Captured contexts are shared across the batch.
template <class T>
DenoiserFn<T> make_denoiser_fn(Unet<T>* m, std::vector<Tensor<T>> context = {}) {
    return [m, context = std::move(context)](const Tensor<T>& x, int t) {
        Graph<T> g(false);
        std::vector<Var<T>> ctx;
        ctx.reserve(context.size());
        for (const auto& c : context) ctx.push_back(g.constant(c));
        return unet_forward(*m, g, g.constant(x), {t}, ctx).val();
    };
}

}  // namespace ldk
