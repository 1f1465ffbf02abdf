#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "../oracles.hpp"
#include "helpers.hpp"
#include "ldk/backbone.hpp"

using namespace ldk;

namespace {

UnetConfig tiny_unet_cfg() {
    UnetConfig cfg;
    cfg.in_ch = 2;
    cfg.base = 4;
    cfg.ch_mult = {1, 2};
    cfg.res_blocks = 1;
    cfg.gn_groups = 2;
    cfg.time_dim = 4;
    cfg.heads = 2;
    cfg.attn_levels = 2;
    cfg.mlp_mult = 2;
    return cfg;
}

TokenEncoderConfig tiny_tok_cfg() {
    TokenEncoderConfig cfg;
    cfg.vocab = 6;
    cfg.d_tau = 4;
    cfg.max_tokens = 3;
    cfg.blocks = 1;
    cfg.heads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("time embedding base pattern, determinism, injectivity") {
    Tensor<double> e0 = time_embedding(0, 8);
    for (int i = 0; i < 4; ++i) {
        CHECK(e0[i] == 0.0);      // sin(0)
        CHECK(e0[4 + i] == 1.0);  // cos(0)
    }
    CHECK(max_abs_diff(time_embedding(17, 64), time_embedding(17, 64)) == 0.0);

    // pairwise distinct over the step range actually used by the samplers
    std::vector<Tensor<double>> embs;
    for (int t = 0; t <= 200; ++t) embs.push_back(time_embedding(t, 64));
    for (size_t a = 0; a < embs.size(); ++a)
        for (size_t b = a + 1; b < embs.size(); ++b)
            if (max_abs_diff(embs[a], embs[b]) == 0.0) FAIL("steps " << a << " and " << b);

    CHECK_THROWS_MATCHES(time_embedding(-1, 8), Error, ErrorKindIs(ErrKind::config));
    CHECK_THROWS_MATCHES(time_embedding(3, 7), Error, ErrorKindIs(ErrKind::config));
}

TEST_CASE("column slice and concat round-trip with gradients") {
    Rng rng(5, 0);
    Tensor<double> xv = rng.normal_tensor<double>({3, 5});
    Graph<double> g;
    auto x = g.input(xv);
    auto left = slice_cols(x, 0, 2);
    auto right = slice_cols(x, 2, 5);
    CHECK(left.val().dim(1) == 2);
    CHECK(right.val().dim(1) == 3);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c) {
            double got = c < 2 ? left.val()[r * 2 + c] : right.val()[r * 3 + (c - 2)];
            CHECK(got == xv[r * 5 + c]);
        }
    auto roundtrip = concat_cols<double>({left, right});
    CHECK(max_abs_diff(roundtrip.val(), xv) == 0.0);
    // gradient of <roundtrip, w> w.r.t. x is w itself
    Tensor<double> wv = rng.normal_tensor<double>({3, 5});
    g.backward(sum_all(mul(roundtrip, g.constant(wv))));
    CHECK(max_abs_diff(g.grad(x.id), wv) == 0.0);
    CHECK_THROWS_MATCHES(slice_cols(x, 2, 2), Error, ErrorKindIs(ErrKind::shape));
}

TEST_CASE("attention matches the direct evaluation oracle") {
    Rng rng(7, 0);
    Tensor<double> q = rng.normal_tensor<double>({4, 2});
    Tensor<double> k = rng.normal_tensor<double>({3, 2});
    Tensor<double> v = rng.normal_tensor<double>({3, 2});
    Graph<double> g(false);
    Tensor<double> got = attention_rows(g.constant(q), g.constant(k), g.constant(v)).val();
    CHECK(max_abs_diff(got, oracle::attention_naive(q, k, v)) < 1e-14);

    // multi-head = per-column-block single-head attention
    Tensor<double> q2 = rng.normal_tensor<double>({5, 4});
    Tensor<double> k2 = rng.normal_tensor<double>({3, 4});
    Tensor<double> v2 = rng.normal_tensor<double>({3, 4});
    Tensor<double> got2 =
        attention_rows(g.constant(q2), g.constant(k2), g.constant(v2), 2).val();
    auto half = [](const Tensor<double>& m, int h) {
        Tensor<double> out({m.dim(0), 2});
        for (int r = 0; r < m.dim(0); ++r)
            for (int c = 0; c < 2; ++c) out[r * 2 + c] = m[r * 4 + h * 2 + c];
        return out;
    };
    for (int h = 0; h < 2; ++h) {
        Tensor<double> ref = oracle::attention_naive(half(q2, h), half(k2, h), half(v2, h));
        CHECK(max_abs_diff(half(got2, h), ref) < 1e-14);
    }
    CHECK_THROWS_MATCHES(
        attention_rows(g.constant(q2), g.constant(k2), g.constant(v2), 3), Error,
        ErrorKindIs(ErrKind::shape));
}

TEST_CASE("attention weights are probability rows") {
    // with V = identity the output rows are the softmax weights themselves
    Rng rng(9, 0);
    Tensor<double> q = rng.normal_tensor<double>({6, 3});
    Tensor<double> k = rng.normal_tensor<double>({4, 3});
    Tensor<double> v({4, 4});
    v.fill(0.0);
    for (int i = 0; i < 4; ++i) v[i * 4 + i] = 1.0;
    Graph<double> g(false);
    Tensor<double> w = attention_rows(g.constant(q), g.constant(k), g.constant(v)).val();
    for (int r = 0; r < 6; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 4; ++c) {
            CHECK(w[r * 4 + c] >= 0.0);
            sum += w[r * 4 + c];
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("single-key and identical-key contexts collapse to a broadcast") {
    Rng rng(11, 0);
    Tensor<double> feats = rng.normal_tensor<double>({5, 3});
    Tensor<double> ctx1 = rng.normal_tensor<double>({1, 2});
    Tensor<double> wq = rng.normal_tensor<double>({3, 2});
    Tensor<double> wk = rng.normal_tensor<double>({2, 2});
    Tensor<double> wv = rng.normal_tensor<double>({2, 2});
    Graph<double> g(false);
    Tensor<double> out1 = cross_attention(g.constant(feats), g.constant(ctx1), g.constant(wq),
                                          g.constant(wk), g.constant(wv))
                              .val();
    // M = 1: softmax over one key is 1, so every row equals that context's V
    Graph<double> g2(false);
    Tensor<double> vrow = matmul(g2.constant(ctx1), g2.constant(wv)).val();
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 2; ++c) CHECK(out1[r * 2 + c] == Catch::Approx(vrow[c]).margin(1e-14));

    // three identical context rows give the same result as the single row
    Tensor<double> ctx3({3, 2});
    for (int m = 0; m < 3; ++m)
        for (int c = 0; c < 2; ++c) ctx3[m * 2 + c] = ctx1[c];
    Tensor<double> out3 = cross_attention(g.constant(feats), g.constant(ctx3), g.constant(wq),
                                          g.constant(wk), g.constant(wv))
                              .val();
    CHECK(max_abs_diff(out1, out3) < 1e-14);
}

TEST_CASE("cross-attention is invariant to context row order") {
    Rng rng(13, 0);
    Tensor<double> feats = rng.normal_tensor<double>({4, 3});
    Tensor<double> ctx = rng.normal_tensor<double>({5, 2});
    Tensor<double> perm({5, 2});
    int order[5] = {3, 0, 4, 2, 1};
    for (int m = 0; m < 5; ++m)
        for (int c = 0; c < 2; ++c) perm[m * 2 + c] = ctx[order[m] * 2 + c];
    Tensor<double> wq = rng.normal_tensor<double>({3, 2});
    Tensor<double> wk = rng.normal_tensor<double>({2, 2});
    Tensor<double> wv = rng.normal_tensor<double>({2, 2});
    Graph<double> g(false);
    Tensor<double> a = cross_attention(g.constant(feats), g.constant(ctx), g.constant(wq),
                                       g.constant(wk), g.constant(wv))
                           .val();
    Tensor<double> b = cross_attention(g.constant(feats), g.constant(perm), g.constant(wq),
                                       g.constant(wk), g.constant(wv))
                           .val();
    CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("token encoder: degenerate depth equals normalized embeddings") {
    TokenEncoderConfig cfg = tiny_tok_cfg();
    cfg.blocks = 0;
    auto enc = make_token_encoder<double>(cfg, Rng(15, 0));
    std::vector<int> tokens = {2, 0, 5};
    Graph<double> g(false);
    Tensor<double> got = encode_tokens(enc, g, tokens).val();

    const Tensor<double>& emb = enc.params.at("tok.emb").v;
    const Tensor<double>& pos = enc.params.at("tok.pos").v;
    int D = cfg.d_tau;
    Tensor<double> want({3, D});
    for (int m = 0; m < 3; ++m) {
        std::vector<double> row(D);
        double mean = 0.0;
        for (int c = 0; c < D; ++c) {
            row[c] = emb[tokens[m] * D + c] + pos[m * D + c];
            mean += row[c];
        }
        mean /= D;
        double var = 0.0;
        for (int c = 0; c < D; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= D;
        for (int c = 0; c < D; ++c) want[m * D + c] = (row[c] - mean) / std::sqrt(var + 1e-5);
    }
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("token encoder output rows are normalized") {
    TokenEncoderConfig cfg = tiny_tok_cfg();
    cfg.d_tau = 64;
    cfg.heads = 4;
    auto enc = make_token_encoder<double>(cfg, Rng(17, 0));
    Graph<double> g(false);
    Tensor<double> out = encode_tokens(enc, g, {1, 4, 3}).val();
    // fresh final LayerNorm has gain 1 / bias 0, so rows have zero mean and
    // (up to the eps in the denominator) unit variance
    for (int m = 0; m < 3; ++m) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 64; ++c) mean += out[m * 64 + c];
        mean /= 64;
        for (int c = 0; c < 64; ++c) {
            double d = out[m * 64 + c] - mean;
            var += d * d;
        }
        var /= 64;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(var == Catch::Approx(1.0).margin(0.05));
    }
}

TEST_CASE("token encoder is order-sensitive and deterministic") {
    auto enc = make_token_encoder<double>(tiny_tok_cfg(), Rng(19, 0));
    Graph<double> g(false);
    Tensor<double> ab = encode_tokens(enc, g, {1, 2}).val();
    Tensor<double> ba = encode_tokens(enc, g, {2, 1}).val();
    CHECK(max_abs_diff(ab, ba) > 1e-6);  // position embedding breaks symmetry
    Tensor<double> ab2 = encode_tokens(enc, g, {1, 2}).val();
    CHECK(max_abs_diff(ab, ab2) == 0.0);
}

TEST_CASE("token encoder rejects bad ids and bad lengths") {
    auto enc = make_token_encoder<double>(tiny_tok_cfg(), Rng(21, 0));
    Graph<double> g(false);
    CHECK_THROWS_MATCHES(encode_tokens(enc, g, {0, 6}), Error, ErrorKindIs(ErrKind::vocab));
    CHECK_THROWS_MATCHES(encode_tokens(enc, g, {0, -1}), Error, ErrorKindIs(ErrKind::vocab));
    CHECK_THROWS_MATCHES(encode_tokens(enc, g, {}), Error, ErrorKindIs(ErrKind::shape));
    CHECK_THROWS_MATCHES(encode_tokens(enc, g, {1, 1, 1, 1}), Error,
                         ErrorKindIs(ErrKind::shape));
}

TEST_CASE("class embedding is a table lookup with a null row") {
    CHECK(ClassEmbedderConfig{}.d_tau == 512);
    CHECK(TokenEncoderConfig{}.d_tau == 512);

    ClassEmbedderConfig cfg;
    cfg.num_classes = 3;
    cfg.d_tau = 8;
    auto ce = make_class_embedder<double>(cfg, Rng(23, 0));
    CHECK(ce.null_id() == 3);
    CHECK(ce.params.at("cls.table").v.dim(0) == 4);  // classes + null

    Graph<double> g(false);
    Tensor<double> c0 = embed_class(ce, g, 0).val();
    Tensor<double> c1 = embed_class(ce, g, 1).val();
    CHECK(c0.shape() == Shape{1, 8});
    CHECK(max_abs_diff(c0, c1) > 0.0);  // distinct classes, distinct contexts

    Param<double>& table = ce.params.at("cls.table");
    for (int c = 0; c < 8; ++c) table.v[2 * 8 + c] = 0.0;
    Tensor<double> c2 = embed_class(ce, g, 2).val();
    for (int c = 0; c < 8; ++c) CHECK(c2[c] == 0.0);

    CHECK(embed_class(ce, g, ce.null_id()).val().dim(0) == 1);  // null row is addressable
    CHECK_THROWS_MATCHES(embed_class(ce, g, 4), Error, ErrorKindIs(ErrKind::vocab));
    CHECK_THROWS_MATCHES(embed_class(ce, g, -1), Error, ErrorKindIs(ErrKind::vocab));
}

TEST_CASE("concat conditioning stacks latent channels first") {
    Rng rng(25, 0);
    Tensor<double> z = rng.normal_tensor<double>({1, 4, 8, 8});
    Tensor<double> cond = rng.normal_tensor<double>({1, 3, 8, 8});
    Tensor<double> stacked = concat_conditioning(z, cond);
    CHECK(stacked.shape() == Shape{1, 7, 8, 8});
    for (int64_t i = 0; i < z.size(); ++i) CHECK(stacked[i] == z[i]);
    for (int64_t i = 0; i < cond.size(); ++i) CHECK(stacked[z.size() + i] == cond[i]);

    Tensor<double> small = rng.normal_tensor<double>({1, 3, 4, 4});
    CHECK_THROWS_MATCHES(concat_conditioning(z, small), Error, ErrorKindIs(ErrKind::shape));
}

TEST_CASE("unet output matches input shape and is deterministic") {
    auto m = make_unet<double>(tiny_unet_cfg(), Rng(27, 0));
    Rng rng(28, 0);
    Tensor<double> x = rng.normal_tensor<double>({2, 2, 8, 8});
    Graph<double> g(false);
    Tensor<double> a = unet_forward(m, g, g.constant(x), {3}).val();
    CHECK(a.shape() == x.shape());
    for (int64_t i = 0; i < a.size(); ++i) CHECK(std::isfinite(a[i]));
    Tensor<double> b = unet_forward(m, g, g.constant(x), {3}).val();
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("unet is fully convolutional across resolutions") {
    auto m = make_unet<double>(tiny_unet_cfg(), Rng(29, 0));
    Rng rng(30, 0);
    Graph<double> g(false);
    for (int hw : {8, 16}) {
        Tensor<double> x = rng.normal_tensor<double>({1, 2, hw, hw});
        CHECK(unet_forward(m, g, g.constant(x), {5}).val().shape() == x.shape());
    }
    // rectangular works too, as long as both dims stay divisible
    Tensor<double> rect = rng.normal_tensor<double>({1, 2, 8, 16});
    CHECK(unet_forward(m, g, g.constant(rect), {5}).val().shape() == rect.shape());
    Tensor<double> odd = rng.normal_tensor<double>({1, 2, 9, 9});
    CHECK_THROWS_MATCHES(unet_forward(m, g, g.constant(odd), {5}), Error,
                         ErrorKindIs(ErrKind::shape));
}

TEST_CASE("unet batch elements do not interact") {
    auto m = make_unet<double>(tiny_unet_cfg(), Rng(31, 0));
    Rng rng(32, 0);
    Tensor<double> x0 = rng.normal_tensor<double>({1, 2, 8, 8});
    Tensor<double> x1 = rng.normal_tensor<double>({1, 2, 8, 8});
    Tensor<double> both({2, 2, 8, 8});
    std::copy(x0.data(), x0.data() + x0.size(), both.data());
    std::copy(x1.data(), x1.data() + x1.size(), both.data() + x0.size());

    Graph<double> g(false);
    Tensor<double> y = unet_forward(m, g, g.constant(both), {4, 9}).val();
    Tensor<double> y0 = unet_forward(m, g, g.constant(x0), {4}).val();
    Tensor<double> y1 = unet_forward(m, g, g.constant(x1), {9}).val();
    for (int64_t i = 0; i < y0.size(); ++i) {
        CHECK(y[i] == Catch::Approx(y0[i]).margin(1e-12));
        CHECK(y[y0.size() + i] == Catch::Approx(y1[i]).margin(1e-12));
    }
}

TEST_CASE("unet conditioning modes: context plumbing and validation") {
    UnetConfig cfg = tiny_unet_cfg();
    cfg.mode = CondMode::tokens;
    cfg.d_tau = 4;
    auto m = make_unet<double>(cfg, Rng(33, 0));
    auto enc = make_token_encoder<double>(tiny_tok_cfg(), Rng(34, 0));
    Rng rng(35, 0);
    Tensor<double> x = rng.normal_tensor<double>({2, 2, 8, 8});

    Graph<double> g(false);
    Var<double> ctx = encode_tokens(enc, g, {1, 2, 3});
    Tensor<double> shared = unet_forward(m, g, g.constant(x), {3}, {ctx}).val();
    Tensor<double> per_elem = unet_forward(m, g, g.constant(x), {3}, {ctx, ctx}).val();
    CHECK(max_abs_diff(shared, per_elem) == 0.0);
    CHECK(shared.shape() == x.shape());

    // different context, different prediction
    Var<double> ctx2 = encode_tokens(enc, g, {5, 5, 5});
    Tensor<double> other = unet_forward(m, g, g.constant(x), {3}, {ctx2}).val();
    CHECK(max_abs_diff(shared, other) > 0.0);

    // a 1-token class context drives the same cross-attention path
    ClassEmbedderConfig ccfg;
    ccfg.num_classes = 3;
    ccfg.d_tau = 4;
    auto ce = make_class_embedder<double>(ccfg, Rng(36, 0));
    CHECK(unet_forward(m, g, g.constant(x), {3}, {embed_class(ce, g, 1)}).val().shape() ==
          x.shape());

    CHECK_THROWS_MATCHES(unet_forward(m, g, g.constant(x), {3}), Error,
                         ErrorKindIs(ErrKind::config));  // missing context
    auto uncond = make_unet<double>(tiny_unet_cfg(), Rng(37, 0));
    CHECK_THROWS_MATCHES(unet_forward(uncond, g, g.constant(x), {3}, {ctx}), Error,
                         ErrorKindIs(ErrKind::config));  // unexpected context
}

TEST_CASE("unet spatial concat mode and order sensitivity") {
    UnetConfig cfg = tiny_unet_cfg();
    cfg.mode = CondMode::spatial_concat;
    cfg.cond_ch = 3;
    auto m = make_unet<double>(cfg, Rng(39, 0));
    Rng rng(40, 0);
    Tensor<double> z = rng.normal_tensor<double>({1, 2, 8, 8});
    Tensor<double> cond = rng.normal_tensor<double>({1, 3, 8, 8});

    Graph<double> g(false);
    Tensor<double> out =
        unet_forward(m, g, concat_conditioning(g.constant(z), g.constant(cond)), {7}).val();
    CHECK(out.shape() == z.shape());  // prediction lives in latent channels only

    // the channel order is part of the format: a swapped stack (conditioning
    // first) feeds different channels into the same weights
    Tensor<double> z_pad = rng.normal_tensor<double>({1, 2, 8, 8});
    Graph<double> g2(false);
    Tensor<double> swapped({1, 5, 8, 8});
    std::copy(cond.data(), cond.data() + cond.size(), swapped.data());
    std::copy(z.data(), z.data() + z.size(), swapped.data() + cond.size());
    Tensor<double> out_swapped = unet_forward(m, g2, g2.constant(swapped), {7}).val();
    CHECK(max_abs_diff(out, out_swapped) > 0.0);

    CHECK_THROWS_MATCHES(unet_forward(m, g, g.constant(z), {7}), Error,
                         ErrorKindIs(ErrKind::config));  // missing conditioning channels
}

TEST_CASE("unet config validation") {
    UnetConfig cfg = tiny_unet_cfg();
    cfg.gn_groups = 3;  // does not divide width 4
    CHECK_THROWS_MATCHES(make_unet<double>(cfg, Rng(1, 0)), Error, ErrorKindIs(ErrKind::config));
    cfg = tiny_unet_cfg();
    cfg.heads = 3;  // does not divide attended width
    CHECK_THROWS_MATCHES(make_unet<double>(cfg, Rng(1, 0)), Error, ErrorKindIs(ErrKind::config));
    cfg = tiny_unet_cfg();
    cfg.time_dim = 5;
    CHECK_THROWS_MATCHES(make_unet<double>(cfg, Rng(1, 0)), Error, ErrorKindIs(ErrKind::config));
    cfg = tiny_unet_cfg();
    cfg.mode = CondMode::tokens;  // needs d_tau > 0
    CHECK_THROWS_MATCHES(make_unet<double>(cfg, Rng(1, 0)), Error, ErrorKindIs(ErrKind::config));
    cfg = tiny_unet_cfg();
    cfg.cond_ch = 2;  // spatial channels without a concat mode
    CHECK_THROWS_MATCHES(make_unet<double>(cfg, Rng(1, 0)), Error, ErrorKindIs(ErrKind::config));
    CHECK(cond_mode_from("spatial_concat") == CondMode::spatial_concat);
    CHECK_THROWS_MATCHES(cond_mode_from("cfg"), Error, ErrorKindIs(ErrKind::config));
}

TEST_CASE("denoiser adapter evaluates the frozen model") {
    auto m = make_unet<double>(tiny_unet_cfg(), Rng(41, 0));
    Rng rng(42, 0);
    Tensor<double> x = rng.normal_tensor<double>({1, 2, 8, 8});
    DenoiserFn<double> fn = make_denoiser_fn(&m);
    Graph<double> g(false);
    CHECK(max_abs_diff(fn(x, 6), unet_forward(m, g, g.constant(x), {6}).val()) == 0.0);
}

TEST_CASE("denoising objective gradients match finite differences jointly") {
    UnetConfig cfg = tiny_unet_cfg();
    cfg.mode = CondMode::tokens;
    cfg.d_tau = 4;
    auto m = make_unet<double>(cfg, Rng(43, 0));
    auto enc = make_token_encoder<double>(tiny_tok_cfg(), Rng(44, 0));
    Rng rng(45, 0);
    Tensor<double> x = rng.normal_tensor<double>({1, 2, 4, 4});
    Tensor<double> target = rng.normal_tensor<double>({1, 2, 4, 4});
    std::vector<int> tokens = {1, 4, 2};

    auto eval = [&]() {
        Graph<double> g(false);
        Var<double> pred =
            unet_forward(m, g, g.constant(x), {3}, {encode_tokens(enc, g, tokens)});
        return mse_loss(pred, g.constant(target)).val()[0];
    };
    Graph<double> g;
    Var<double> pred = unet_forward(m, g, g.constant(x), {3}, {encode_tokens(enc, g, tokens)});
    Var<double> loss = mse_loss(pred, g.constant(target));
    for (size_t i = 0; i < m.params.size(); ++i) m.params[i].zero_grad();
    for (size_t i = 0; i < enc.params.size(); ++i) enc.params[i].zero_grad();
    g.backward(loss);

    int64_t total = m.params.num_scalars() + enc.params.num_scalars();
    CHECK(total < 20000);
    for (auto* store : {&m.params, &enc.params}) {
        for (size_t i = 0; i < store->size(); ++i) {
            Param<double>& p = (*store)[i];
            Tensor<double> fd = oracle::fd_gradient(p.v, eval, 1e-6);
            INFO("grad for " << p.name);
            CHECK(oracle::tensor_rel_err(p.g, fd) < 1e-4);
        }
    }
}
