#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssrl/kernels.hpp"
#include "ssrl/rng.hpp"

using namespace ssrl;

namespace {

float rel_tol(int64_t reduction) { return 1e-4f * std::sqrt(float(reduction)); }

struct ConvShape {
    int64_t n, ci, h, w, co, k, stride;
};

}  // namespace

TEST_CASE("conv2d serial/parallel parity") {
    Rng rng(42);
    for (const ConvShape& s : {ConvShape{2, 3, 13, 13, 8, 3, 1}, ConvShape{3, 5, 12, 12, 7, 3, 2},
                               ConvShape{2, 4, 9, 9, 6, 1, 1}, ConvShape{1, 3, 17, 17, 4, 7, 2},
                               ConvShape{2, 6, 8, 8, 4, 1, 2}}) {
        Tensor x(s.n, s.ci, s.h, s.w), w(s.co, s.ci, s.k, s.k);
        x.randn(rng);
        w.randn(rng, 0.2f);
        kern::ConvGeom g{s.k, s.stride, s.k / 2};

        Tensor ys, yp;
        kern::serial::conv2d_fwd(x, w, g, ys);
        kern::parallel::conv2d_fwd(x, w, g, yp);
        REQUIRE(ys.same_shape(yp));
        CHECK(max_abs_diff(ys, yp) < rel_tol(s.ci * s.k * s.k));

        Tensor dy(ys.n(), ys.c(), ys.h(), ys.w());
        dy.randn(rng);
        Tensor dxs(s.n, s.ci, s.h, s.w), dxp(s.n, s.ci, s.h, s.w);
        kern::serial::conv2d_bwd_data(dy, w, g, dxs);
        kern::parallel::conv2d_bwd_data(dy, w, g, dxp);
        CHECK(max_abs_diff(dxs, dxp) < rel_tol(s.co * s.k * s.k));

        Tensor dws(s.co, s.ci, s.k, s.k), dwp(s.co, s.ci, s.k, s.k);
        kern::serial::conv2d_bwd_weights(x, dy, g, dws);
        kern::parallel::conv2d_bwd_weights(x, dy, g, dwp);
        CHECK(max_abs_diff(dws, dwp) < rel_tol(s.n * ys.h() * ys.w()));
    }
}

TEST_CASE("conv2d identity kernel") {
    Rng rng(1);
    Tensor x(1, 1, 5, 5), w(1, 1, 1, 1);
    x.randn(rng);
    w[0] = 1.0f;
    Tensor y;
    kern::conv2d_fwd(x, w, {1, 1, 0}, y);
    CHECK(max_abs_diff(x, y) == 0.0f);
}

TEST_CASE("conv2d known 3x3 sum kernel") {
    // all-ones input and kernel: interior outputs equal 9
    Tensor x(1, 1, 5, 5), w(1, 1, 3, 3);
    x.fill(1.0f);
    w.fill(1.0f);
    Tensor y;
    kern::conv2d_fwd(x, w, {3, 1, 1}, y);
    CHECK(y.at(0, 0, 2, 2) == doctest::Approx(9.0f));
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.0f));  // corner sees a 2x2 patch
    CHECK(y.at(0, 0, 0, 2) == doctest::Approx(6.0f));  // edge sees a 2x3 patch
}

TEST_CASE("batchnorm parity and semantics") {
    Rng rng(7);
    const int64_t C = 6;
    Tensor x(4, C, 5, 5);
    x.randn(rng);
    for (int64_t i = 0; i < x.numel(); ++i) x[size_t(i)] = x[size_t(i)] * 2.0f + 0.5f;
    std::vector<float> gamma(C, 1.2f), beta(C, -0.3f);

    std::vector<float> rm_s(C, 0.0f), rv_s(C, 1.0f), rm_p(C, 0.0f), rv_p(C, 1.0f);
    Tensor ys, yp, xh_s, xh_p;
    std::vector<float> is_s, is_p;
    kern::serial::bn_fwd_train(x, gamma, beta, rm_s, rv_s, 0.9f, 1e-5f, ys, xh_s, is_s);
    kern::parallel::bn_fwd_train(x, gamma, beta, rm_p, rv_p, 0.9f, 1e-5f, yp, xh_p, is_p);
    CHECK(max_abs_diff(ys, yp) < 1e-5f);
    for (int64_t c = 0; c < C; ++c) {
        CHECK(rm_s[size_t(c)] == doctest::Approx(rm_p[size_t(c)]).epsilon(1e-5));
        CHECK(rv_s[size_t(c)] == doctest::Approx(rv_p[size_t(c)]).epsilon(1e-5));
    }

    // train-mode output is per-channel standardized then affine
    for (int64_t c = 0; c < C; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int64_t n = 0; n < 4; ++n)
            for (int64_t h = 0; h < 5; ++h)
                for (int64_t w2 = 0; w2 < 5; ++w2) {
                    double v = (ys.at(n, c, h, w2) + 0.3) / 1.2;
                    sum += v;
                    sq += v * v;
                }
        double mean = sum / 100.0, var = sq / 100.0 - mean * mean;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-2);
    }

    Tensor dy(4, C, 5, 5);
    dy.randn(rng);
    std::vector<float> dg_s(C, 0.0f), db_s(C, 0.0f), dg_p(C, 0.0f), db_p(C, 0.0f);
    Tensor dxs, dxp;
    kern::serial::bn_bwd(dy, xh_s, is_s, gamma, dxs, dg_s, db_s);
    kern::parallel::bn_bwd(dy, xh_p, is_p, gamma, dxp, dg_p, db_p);
    CHECK(max_abs_diff(dxs, dxp) < 1e-4f);

    // eval mode uses the running stats
    Tensor ye_s, ye_p;
    kern::serial::bn_fwd_eval(x, gamma, beta, rm_s, rv_s, 1e-5f, ye_s);
    kern::parallel::bn_fwd_eval(x, gamma, beta, rm_p, rv_p, 1e-5f, ye_p);
    CHECK(max_abs_diff(ye_s, ye_p) < 1e-5f);
}

TEST_CASE("maxpool parity and clipped windows") {
    Rng rng(5);
    for (auto [h, k, s] : {std::tuple<int64_t, int64_t, int64_t>{12, 3, 2},
                           {13, 3, 2},
                           {7, 2, 2},
                           {3, 2, 2},
                           {1, 2, 2}}) {
        Tensor x(2, 3, h, h);
        x.randn(rng);
        Tensor ys, yp;
        std::vector<int32_t> as, ap;
        kern::serial::maxpool_fwd(x, k, s, ys, as);
        kern::parallel::maxpool_fwd(x, k, s, yp, ap);
        REQUIRE(ys.same_shape(yp));
        CHECK(max_abs_diff(ys, yp) == 0.0f);
        CHECK(as == ap);
        CHECK(ys.h() == kern::pool_out_size(h, k, s));

        Tensor dy(ys.n(), ys.c(), ys.h(), ys.w());
        dy.randn(rng);
        Tensor dxs(2, 3, h, h), dxp(2, 3, h, h);
        kern::serial::maxpool_bwd(dy, as, dxs);
        kern::parallel::maxpool_bwd(dy, ap, dxp);
        CHECK(max_abs_diff(dxs, dxp) == 0.0f);
    }
}

TEST_CASE("pool_out_size ceil behaviour") {
    CHECK(kern::pool_out_size(48, 3, 2) == 24);
    CHECK(kern::pool_out_size(12, 3, 2) == 6);
    CHECK(kern::pool_out_size(6, 2, 2) == 3);
    CHECK(kern::pool_out_size(3, 2, 2) == 2);
    CHECK(kern::pool_out_size(1, 2, 2) == 1);
}

TEST_CASE("gap, relu, dense parity") {
    Rng rng(11);
    Tensor x(3, 8, 6, 6);
    x.randn(rng);
    Tensor ys, yp;
    kern::serial::gap_fwd(x, ys);
    kern::parallel::gap_fwd(x, yp);
    CHECK(max_abs_diff(ys, yp) < 1e-6f);
    CHECK(ys.at(0, 0, 0, 0) != 0.0f);

    Tensor dy = ys;
    dy.randn(rng);
    Tensor dxs, dxp;
    kern::serial::gap_bwd(dy, 6, 6, dxs);
    kern::parallel::gap_bwd(dy, 6, 6, dxp);
    CHECK(max_abs_diff(dxs, dxp) == 0.0f);

    Tensor rs, rp;
    kern::serial::relu_fwd(x, rs);
    kern::parallel::relu_fwd(x, rp);
    CHECK(max_abs_diff(rs, rp) == 0.0f);

    Tensor xm = Tensor::matrix(5, 17), w = Tensor::matrix(9, 17);
    xm.randn(rng);
    w.randn(rng, 0.3f);
    std::vector<float> b(9, 0.25f);
    Tensor ds, dp;
    kern::serial::dense_fwd(xm, w, b, ds);
    kern::parallel::dense_fwd(xm, w, b, dp);
    CHECK(max_abs_diff(ds, dp) < 1e-4f);

    Tensor dyd = Tensor::matrix(5, 9);
    dyd.randn(rng);
    Tensor dxds, dxdp;
    kern::serial::dense_bwd_data(dyd, w, dxds);
    kern::parallel::dense_bwd_data(dyd, w, dxdp);
    CHECK(max_abs_diff(dxds, dxdp) < 1e-4f);

    Tensor dws = Tensor::matrix(9, 17), dwp = Tensor::matrix(9, 17);
    std::vector<float> dbs(9, 0.0f), dbp(9, 0.0f);
    kern::serial::dense_bwd_weights(xm, dyd, dws, dbs);
    kern::parallel::dense_bwd_weights(xm, dyd, dwp, dbp);
    CHECK(max_abs_diff(dws, dwp) < 1e-4f);
    for (int i = 0; i < 9; ++i) CHECK(dbs[size_t(i)] == doctest::Approx(dbp[size_t(i)]).epsilon(1e-4));
}

TEST_CASE("backend dispatch honors the active backend") {
    kern::Backend before = kern::active_backend();
    kern::set_backend(kern::Backend::Serial);
    CHECK(kern::active_backend() == kern::Backend::Serial);
    Rng rng(3);
    Tensor x(1, 2, 6, 6), w(3, 2, 3, 3), y1, y2;
    x.randn(rng);
    w.randn(rng, 0.2f);
    kern::conv2d_fwd(x, w, {3, 1, 1}, y1);
    kern::set_backend(kern::Backend::Parallel);
    kern::conv2d_fwd(x, w, {3, 1, 1}, y2);
    CHECK(max_abs_diff(y1, y2) < 1e-4f);
    kern::set_backend(before);
}
