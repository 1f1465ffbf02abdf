#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "ldk/backbone.hpp"
#include "ldk/eval.hpp"

using namespace ldk;

TEST_CASE("psnr matches the closed form and is symmetric") {
    Tensor<double> a({1, 1, 4, 4}, 0.0);
    Tensor<double> b({1, 1, 4, 4}, 0.1);  // MSE = 0.01
    CHECK(psnr(a, b, 1.0) == Catch::Approx(20.0).margin(1e-12));
    CHECK(psnr(a, b, 1.0) == psnr(b, a, 1.0));
    CHECK(std::isinf(psnr(a, a, 1.0)));
    CHECK(psnr(a, a, 1.0) > 0);

    Tensor<double> c({1, 1, 2, 2});
    CHECK_THROWS_MATCHES(psnr(a, c, 1.0), Error, ErrorKindIs(ErrKind::shape));
    CHECK_THROWS_MATCHES(psnr(a, b, 0.0), Error, ErrorKindIs(ErrKind::config));
}

TEST_CASE("ssim is 1 on identical images and negative on opposed constants") {
    Rng rng(5, 0);
    Tensor<double> a = rng.normal_tensor<double>({1, 2, 12, 12});
    CHECK(ssim(a, a, 2.0) == Catch::Approx(1.0).margin(1e-12));

    Tensor<double> pos({1, 1, 8, 8}, 0.8);
    Tensor<double> neg({1, 1, 8, 8}, -0.8);
    CHECK(ssim(pos, neg, 1.0) < 0.0);

    Tensor<double> small({1, 1, 4, 4});
    CHECK_THROWS_MATCHES(ssim(small, small, 1.0), Error, ErrorKindIs(ErrKind::shape));
    CHECK_THROWS_MATCHES(ssim(a, a, -1.0), Error, ErrorKindIs(ErrKind::config));
}

TEST_CASE("ssim ignores a shared luminance shift") {
    // b differs from a by a pattern with zero mean over every 8x8 window, so
    // the luminance ratio is exactly 1 and a constant shift must not move
    // the score.
    Rng rng(6, 0);
    Tensor<double> a = rng.normal_tensor<double>({1, 1, 16, 16});
    Tensor<double> b = a;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) b[y * 16 + x] += ((x + y) % 2 ? 0.1 : -0.1);
    double base = ssim(a, b, 2.0);
    CHECK(base < 1.0);
    for (double c : {0.05, -0.3}) {
        Tensor<double> a2 = a, b2 = b;
        for (int64_t i = 0; i < a2.size(); ++i) {
            a2[i] += c;
            b2[i] += c;
        }
        CHECK(ssim(a2, b2, 2.0) == Catch::Approx(base).margin(1e-6));
    }
}

TEST_CASE("feature extractor is deterministic with the documented width") {
    FeatureExtractorConfig cfg;
    FeatureExtractor<float> fx1 = make_feature_extractor<float>(cfg);
    FeatureExtractor<float> fx2 = make_feature_extractor<float>(cfg);
    CHECK(fx1.d_feat() == 128);

    Rng rng(7, 0);
    Tensor<float> imgs = rng.normal_tensor<float>({3, 3, 16, 16});
    Tensor<float> f1 = extract_features(fx1, imgs);
    Tensor<float> f2 = extract_features(fx2, imgs);
    REQUIRE(f1.shape() == Shape{3, 128});
    CHECK(max_abs_diff(f1, f2) == 0.0);

    Tensor<float> tiny = rng.normal_tensor<float>({1, 3, 8, 8});
    CHECK_THROWS_MATCHES(extract_features(fx1, tiny), Error, ErrorKindIs(ErrKind::shape));
}

TEST_CASE("frechet distance: zero on identical sets, symmetric, non-negative") {
    Rng rng(11, 0);
    Tensor<float> a = rng.normal_tensor<float>({8, 3});
    Tensor<float> b = rng.normal_tensor<float>({9, 3});
    CHECK(frechet_feature_distance(a, a) == Catch::Approx(0.0).margin(1e-6));
    double ab = frechet_feature_distance(a, b);
    CHECK(ab >= 0.0);
    CHECK(frechet_feature_distance(b, a) == Catch::Approx(ab).margin(1e-9));

    Tensor<float> thin = rng.normal_tensor<float>({3, 3});
    CHECK_THROWS_MATCHES(frechet_feature_distance(thin, b), Error,
                         ErrorKindIs(ErrKind::config));
    Tensor<float> wide = rng.normal_tensor<float>({8, 4});
    CHECK_THROWS_MATCHES(frechet_feature_distance(a, wide), Error, ErrorKindIs(ErrKind::shape));
}

TEST_CASE("frechet distance matches the 1-d closed form on gaussian draws") {
    Rng rng(13, 0);
    int n = 10000;
    Tensor<float> a({n, 1});
    Tensor<float> b({n, 1});
    for (int i = 0; i < n; ++i) {
        a[i] = static_cast<float>(rng.normal());
        b[i] = static_cast<float>(rng.normal() + 1.0);
    }
    // (mu1-mu2)^2 + (sd1-sd2)^2 = 1; sample moments wander by O(1/sqrt(n))
    CHECK(frechet_feature_distance(a, b) == Catch::Approx(1.0).margin(0.1));
}

TEST_CASE("frechet trace term matches the diagonal oracle by hand") {
    // Rows are axis-aligned, so sample covariances are exactly diagonal and
    // the trace reduces to sum_i (sqrt(l1_i) - sqrt(l2_i))^2.
    auto axis_set = [](double sa, double sb) {
        Tensor<float> f({4, 2});
        f[0] = static_cast<float>(sa);
        f[2] = static_cast<float>(-sa);
        f[5] = static_cast<float>(sb);
        f[7] = static_cast<float>(-sb);
        return f;
    };
    Tensor<float> f1 = axis_set(0.9, 0.4);
    Tensor<float> f2 = axis_set(0.5, 1.3);
    // unbiased variance + shrinkage, from the float-rounded entries
    auto lam = [](float s) {
        double d = static_cast<double>(s);
        return 2.0 * d * d / 3.0 + 1e-6;
    };
    double want = 0.0;
    want += std::pow(std::sqrt(lam(0.9f)) - std::sqrt(lam(0.5f)), 2);
    want += std::pow(std::sqrt(lam(0.4f)) - std::sqrt(lam(1.3f)), 2);
    CHECK(frechet_feature_distance(f1, f2) == Catch::Approx(want).margin(1e-9));
}

TEST_CASE("throughput reports one row per grid point with increasing cost") {
    // tiny unconditional model, pixel space
    UnetConfig ucfg;
    ucfg.in_ch = 2;
    ucfg.base = 4;
    ucfg.ch_mult = {1, 2};
    ucfg.res_blocks = 1;
    ucfg.gn_groups = 2;
    ucfg.time_dim = 8;
    ucfg.heads = 2;
    ucfg.d_tau = 0;
    Unet<float> unet = make_unet<float>(ucfg, Rng(17, 0));
    NoiseSchedule ns = make_schedule(ScheduleKind::linear_beta, 64, 1e-4, 2e-2);

    Rng rng(18, 0);
    std::vector<MetricReport> rows =
        throughput(make_denoiser_fn(&unet), Shape{1, 2, 8, 8}, ns, {4, 16, 64}, 2, rng);
    REQUIRE(rows.size() == 3u);
    CHECK(rows[0].name == "ddim_4");
    CHECK(rows[2].name == "ddim_64");
    for (const MetricReport& r : rows) {
        CHECK(r.count == 2);
        CHECK(r.wall_ms > 0.0);
        CHECK(r.per_sec > 0.0);
    }
    CHECK(rows[0].wall_ms < rows[1].wall_ms);
    CHECK(rows[1].wall_ms < rows[2].wall_ms);

    Rng rng2(18, 0);
    std::vector<MetricReport> det =
        throughput(make_denoiser_fn(&unet), Shape{1, 2, 8, 8}, ns, {4}, 1, rng2,
                   /*deterministic=*/true);
    CHECK(det[0].wall_ms == 0.0);
    CHECK(det[0].per_sec == 0.0);

    CHECK_THROWS_MATCHES(
        throughput(make_denoiser_fn(&unet), Shape{1, 2, 8, 8}, ns, {}, 1, rng2), Error,
        ErrorKindIs(ErrKind::config));
}
