#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ssrl/layers.hpp"
#include "ssrl/modelzoo.hpp"

using namespace ssrl;

namespace {

Tensor random_input(Rng& rng, int64_t n, int64_t c, int64_t h, int64_t w) {
    Tensor x(n, c, h, w);
    x.randn(rng);
    return x;
}

}  // namespace

TEST_CASE("gradient check: conv variants") {
    Rng rng(21);
    for (auto [k, s] : {std::pair<int64_t, int64_t>{3, 1}, {3, 2}, {1, 1}, {7, 2}}) {
        Conv2d conv(3, 5, k, s);
        conv.init(rng);
        Tensor x = random_input(rng, 2, 3, 9, 9);
        auto res = grad_check_layer(conv, x, rng);
        INFO("conv k=", k, " s=", s, " rel=", res.max_rel_err);
        CHECK(res.ok);
    }
}

TEST_CASE("gradient check: batchnorm (train-mode batch statistics)") {
    Rng rng(22);
    BatchNorm2d bn(4);
    Tensor x = random_input(rng, 3, 4, 5, 5);
    auto res = grad_check_layer(bn, x, rng);
    INFO("bn rel=", res.max_rel_err);
    CHECK(res.ok);
}

TEST_CASE("gradient check: pooling variants and dense") {
    Rng rng(23);
    {
        MaxPool2d pool(3, 2);
        Tensor x = random_input(rng, 2, 3, 9, 9);
        auto res = grad_check_layer(pool, x, rng);
        CHECK(res.ok);
    }
    {
        MaxPool2d pool(2, 2);
        Tensor x = random_input(rng, 2, 3, 7, 7);  // odd side exercises clipped windows
        auto res = grad_check_layer(pool, x, rng);
        CHECK(res.ok);
    }
    {
        GlobalAvgPool gap;
        Tensor x = random_input(rng, 2, 6, 5, 5);
        auto res = grad_check_layer(gap, x, rng);
        CHECK(res.ok);
    }
    {
        Dense dense(11, 7);
        dense.init(rng);
        Tensor x = random_input(rng, 4, 11, 1, 1);
        auto res = grad_check_layer(dense, x, rng);
        CHECK(res.ok);
    }
    {
        Flatten fl;
        Tensor x = random_input(rng, 2, 3, 4, 4);
        auto res = grad_check_layer(fl, x, rng);
        CHECK(res.ok);
    }
}

TEST_CASE("gradient check: rep-size layer behind pooling") {
    Rng rng(24);
    Sequential seq;
    seq.add(std::make_unique<GlobalAvgPool>());
    seq.add(std::make_unique<Dense>(6, 3));  // the rep_size control layer shape
    seq.init(rng);
    Tensor x = random_input(rng, 2, 6, 4, 4);
    auto res = grad_check_layer(seq, x, rng);
    CHECK(res.ok);
}

TEST_CASE("gradient check: rev unit") {
    Rng rng(25);
    RevUnit unit(8, 2);
    unit.init(rng);
    Tensor x = random_input(rng, 2, 8, 6, 6);
    auto res = grad_check_layer(unit, x, rng);
    INFO("rev unit rel=", res.max_rel_err);
    CHECK(res.ok);
}

TEST_CASE("gradient check: dropout with reseeded mask") {
    Rng rng(26);
    Dropout drop(0.5f, 99);
    Tensor x = random_input(rng, 3, 10, 1, 1);
    // fixed mask: reseed before the analytic pass and before every FD pass
    // via probes=1 with a wrapper is overkill; instead check dx == dy*mask.
    drop.reseed(7);
    const Tensor& y = drop.forward(x, true);
    Tensor dy(3, 10, 1, 1);
    dy.randn(rng);
    Tensor dx = drop.backward(dy);
    for (int64_t i = 0; i < x.numel(); ++i) {
        float mask = x[size_t(i)] != 0.0f ? y[size_t(i)] / x[size_t(i)] : 0.0f;
        CHECK(dx[size_t(i)] == doctest::Approx(dy[size_t(i)] * mask).epsilon(1e-4));
    }
    // inference passes are identity and deterministic
    const Tensor& e1 = drop.forward(x, false);
    Tensor c1 = e1;
    const Tensor& e2 = drop.forward(x, false);
    CHECK(max_abs_diff(c1, e2) == 0.0f);
    CHECK(max_abs_diff(c1, x) == 0.0f);
}

TEST_CASE("softmax cross-entropy values and gradient") {
    // uniform logits: loss = ln C
    Tensor logits = Tensor::matrix(2, 10);
    logits.fill(0.37f);
    XentResult r = softmax_xent(logits, {3, 7});
    CHECK(r.loss == doctest::Approx(std::log(10.0)).epsilon(1e-5));

    Tensor big = Tensor::matrix(1, 4);
    big.fill(0.0f);
    big[2] = 50.0f;
    XentResult r2 = softmax_xent(big, {2});
    CHECK(r2.loss < 1e-6f);
    CHECK(r2.correct == 1);

    // FD check of dlogits
    Rng rng(31);
    Tensor l = Tensor::matrix(3, 5);
    l.randn(rng);
    std::vector<int32_t> t{0, 4, 2};
    XentResult base = softmax_xent(l, t);
    const float eps = 1e-3f;
    for (int64_t i = 0; i < l.numel(); i += 3) {
        Tensor lp = l, lm = l;
        lp[size_t(i)] += eps;
        lm[size_t(i)] -= eps;
        float fd = (softmax_xent(lp, t).loss - softmax_xent(lm, t).loss) / (2 * eps);
        CHECK(fd == doctest::Approx(base.dlogits[size_t(i)]).epsilon(2e-2).scale(1.0));
    }

    CHECK_THROWS_AS(softmax_xent(l, {0, 9, 2}), UsageError);  // label out of range
}

TEST_CASE("gradient check: full backbone composites") {
    Rng rng(27);
    struct Adapter : Layer {
        Model& m;
        explicit Adapter(Model& model) : m(model) {}
        const Tensor& forward(const Tensor& x, bool train) override {
            return m.forward(x, train);
        }
        Tensor backward(const Tensor& dy) override { return m.backward(dy); }
        void collect_params(const std::string& p, std::vector<ParamRef>& out) override {
            for (auto& pr : m.params()) out.push_back(pr);
        }
    };
    for (Family fam : {Family::ResNetV1, Family::ResNetV2, Family::RevNet50, Family::Vgg19Bn}) {
        ModelSpec spec;
        spec.family = fam;
        spec.widening_k = 2;
        spec.input_side = 32;
        // k=2, batch 16: keeps every train-mode batch norm away from
        // degenerate few-sample statistics at the 1x1 stages
        Model model(spec, 5);
        Adapter adapter(model);
        Tensor x = random_input(rng, 16, 3, 32, 32);
        // Composites chain 15+ train-mode batch norms whose batch-statistic
        // curvature caps what float32 central differences can resolve. 5e-2
        // still flags any mis-wired shortcut or dropped term; the 1e-3 bound
        // is enforced on the individual layers above.
        auto res = grad_check_layer(adapter, x, rng, 4, 2e-3f, 5e-2f);
        INFO(family_to_string(fam), " rel=", res.max_rel_err);
        CHECK(res.ok);
    }
}
