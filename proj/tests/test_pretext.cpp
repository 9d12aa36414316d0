#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ssrl/pretext.hpp"

using namespace ssrl;

namespace {

Tensor random_image(Rng& rng, int64_t side) {
    Tensor img(1, 3, side, side);
    for (int64_t i = 0; i < img.numel(); ++i) img[size_t(i)] = rng.uniform();
    return img;
}

// brute-force oracle for the semi-hard triplet loss
float triplet_brute_force(const Tensor& e, const std::vector<int32_t>& ids, float margin) {
    const int64_t N = e.n(), D = e.c();
    auto dist = [&](int64_t i, int64_t j) {
        double s = 0.0;
        for (int64_t d = 0; d < D; ++d) {
            double diff = double(e.at(i, d, 0, 0)) - double(e.at(j, d, 0, 0));
            s += diff * diff;
        }
        return s;
    };
    double total = 0.0;
    int64_t pairs = 0;
    for (int64_t a = 0; a < N; ++a)
        for (int64_t p = 0; p < N; ++p) {
            if (a == p || ids[size_t(a)] != ids[size_t(p)]) continue;
            ++pairs;
            double dap = dist(a, p);
            double best_outside = 1e300, best_inside = -1e300;
            for (int64_t n = 0; n < N; ++n) {
                if (ids[size_t(n)] == ids[size_t(a)]) continue;
                double dan = dist(a, n);
                if (dan > dap) best_outside = std::min(best_outside, dan);
                best_inside = std::max(best_inside, dan);
            }
            double dan = best_outside < 1e299 ? best_outside : best_inside;
            total += std::max(0.0, double(margin) + dap - dan);
        }
    return float(total / double(pairs));
}

}  // namespace

TEST_CASE("rotation batch: labels, balance, pixel maps") {
    Rng rng(4);
    Tensor imgs(3, 3, 8, 8);
    for (int64_t i = 0; i < imgs.numel(); ++i) imgs[size_t(i)] = rng.uniform();
    PretextBatch batch = make_rotation_batch(imgs);
    CHECK(batch.examples() == 12);
    CHECK(batch.inputs.n() == 12);

    int counts[4] = {0, 0, 0, 0};
    for (int32_t t : batch.targets) ++counts[t];
    for (int c = 0; c < 4; ++c) CHECK(counts[c] == 3);

    // label r stores exactly rotate(image, r)
    for (int64_t n = 0; n < 3; ++n) {
        Tensor img = image_slice(imgs, n);
        for (int r = 0; r < 4; ++r) {
            Tensor expect = rot90(img, r);
            Tensor got = image_slice(batch.inputs, 4 * n + r);
            CHECK(max_abs_diff(expect, got) == 0.0f);
        }
    }

    // label 0 is unchanged
    Tensor img0 = image_slice(imgs, 0);
    CHECK(max_abs_diff(image_slice(batch.inputs, 0), img0) == 0.0f);

    // rot90 applied four times is the identity
    Tensor four = rot90(rot90(rot90(rot90(img0, 1), 1), 1), 1);
    CHECK(max_abs_diff(four, img0) == 0.0f);

    // 180 degrees maps (0,0) to (H-1, W-1)
    Tensor r2 = rot90(img0, 2);
    CHECK(r2.at(0, 0, 7, 7) == img0.at(0, 0, 0, 0));
    CHECK(r2.at(0, 1, 7, 7) == img0.at(0, 1, 0, 0));

    Tensor rect(2, 3, 6, 8);
    CHECK_THROWS_AS(make_rotation_batch(rect), UsageError);
}

TEST_CASE("exemplar batch structure") {
    Rng rng(8);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 64; ++i) imgs.push_back(random_image(rng, 20));
    AugmentParams aug;
    PretextBatch batch = make_exemplar_batch(imgs, 16, 8, aug, rng);
    CHECK(batch.examples() == 512);
    std::map<int32_t, int> counts;
    for (int32_t id : batch.targets) ++counts[id];
    CHECK(counts.size() == 64);
    for (const auto& [id, c] : counts) CHECK(c == 8);

    CHECK_THROWS_AS(make_exemplar_batch(imgs, 16, 1, aug, rng), UsageError);
}

TEST_CASE("triplet loss: brute-force oracle on random batches") {
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const int64_t N = 12, D = 6;
        Tensor e = Tensor::matrix(N, D);
        e.randn(rng);
        std::vector<int32_t> ids;
        for (int64_t i = 0; i < N; ++i) ids.push_back(int32_t(i % 3));
        TripletResult got = triplet_loss(e, ids, 0.5f, false);
        float want = triplet_brute_force(e, ids, 0.5f);
        CHECK(got.loss == doctest::Approx(want).epsilon(1e-4));
    }
}

TEST_CASE("triplet loss: degenerate and analytic cases") {
    // all embeddings identical -> every pair hinge equals the margin
    Tensor e = Tensor::matrix(6, 4);
    e.fill(0.25f);
    std::vector<int32_t> ids{0, 0, 0, 1, 1, 1};
    TripletResult r = triplet_loss(e, ids, 0.5f, true);
    CHECK(r.loss == doctest::Approx(0.5f));
    CHECK(triplet_brute_force(e, ids, 0.5f) == doctest::Approx(0.5f));
    // equal embeddings: gradient contribution of positives cancels to zero
    for (int64_t i = 0; i < r.dembeddings.numel(); ++i)
        CHECK(r.dembeddings[size_t(i)] == doctest::Approx(0.0f).epsilon(1e-6));

    // two tight clusters separated by 10: hinge inactive
    Tensor far = Tensor::matrix(4, 2);
    far.at(0, 0, 0, 0) = 0.0f;
    far.at(1, 0, 0, 0) = 0.0f;
    far.at(2, 0, 0, 0) = 10.0f;
    far.at(3, 0, 0, 0) = 10.0f;
    TripletResult rf = triplet_loss(far, {0, 0, 1, 1}, 0.5f, false);
    CHECK(rf.loss == doctest::Approx(0.0f));
    CHECK(rf.accuracy == doctest::Approx(1.0f));

    // margin-tight configuration: scaling the embeddings changes the loss
    Tensor tight = Tensor::matrix(4, 1);
    tight.at(0, 0, 0, 0) = 0.0f;
    tight.at(1, 0, 0, 0) = 0.3f;
    tight.at(2, 0, 0, 0) = 0.8f;
    tight.at(3, 0, 0, 0) = 1.1f;
    std::vector<int32_t> tids{0, 0, 1, 1};
    float loss1 = triplet_loss(tight, tids, 0.5f, false).loss;
    Tensor scaled = tight;
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled[size_t(i)] *= 2.0f;
    float loss2 = triplet_loss(scaled, tids, 0.5f, false).loss;
    CHECK(loss2 < loss1);
    CHECK(loss1 == doctest::Approx(triplet_brute_force(tight, tids, 0.5f)).epsilon(1e-4));
    CHECK(loss2 == doctest::Approx(triplet_brute_force(scaled, tids, 0.5f)).epsilon(1e-4));

    // a single id cannot form triplets
    CHECK_THROWS_AS(triplet_loss(e, {2, 2, 2, 2, 2, 2}, 0.5f, false), UsageError);
}

TEST_CASE("triplet loss gradient matches finite differences") {
    Rng rng(14);
    const int64_t N = 8, D = 3;
    Tensor e = Tensor::matrix(N, D);
    e.randn(rng);
    std::vector<int32_t> ids{0, 0, 1, 1, 2, 2, 3, 3};
    TripletResult base = triplet_loss(e, ids, 0.5f, true);
    const float eps = 1e-3f;
    for (int64_t i = 0; i < N * D; i += 2) {
        Tensor ep = e, em = e;
        ep[size_t(i)] += eps;
        em[size_t(i)] -= eps;
        float fd = (triplet_loss(ep, ids, 0.5f, false).loss -
                    triplet_loss(em, ids, 0.5f, false).loss) /
                   (2 * eps);
        CHECK(base.dembeddings[size_t(i)] == doctest::Approx(fd).epsilon(5e-2).scale(0.1));
    }
}

TEST_CASE("permutation set generation") {
    PermutationSet one = PermutationSet::generate(3, 1);
    REQUIRE(one.perms.size() == 1);
    for (int i = 0; i < 9; ++i) CHECK(one.perms[0][size_t(i)] == i);

    PermutationSet two = PermutationSet::generate(3, 2);
    int hd = 0;
    for (int i = 0; i < 9; ++i) hd += two.perms[0][size_t(i)] != two.perms[1][size_t(i)];
    CHECK(hd == 9);  // a derangement of 9 elements exists and is found

    PermutationSet full = PermutationSet::generate(7, 100);
    REQUIRE(full.perms.size() == 100);
    std::set<std::array<int, 9>> uniq(full.perms.begin(), full.perms.end());
    CHECK(uniq.size() == 100);
    for (const auto& p : full.perms) {
        std::set<int> vals(p.begin(), p.end());
        CHECK(vals.size() == 9);
        CHECK(*vals.begin() == 0);
        CHECK(*vals.rbegin() == 8);
    }
    CHECK(full.min_hamming >= 2);
    CHECK(full.index_of_identity() == 0);

    CHECK_THROWS_AS(PermutationSet::generate(1, 362881), UsageError);
}

TEST_CASE("permutation set file round trip is byte identical") {
    namespace fs = std::filesystem;
    PermutationSet a = PermutationSet::generate(42, 100);
    a.save("permset_a.txt");
    PermutationSet b = PermutationSet::generate(42, 100);
    b.save("permset_b.txt");
    std::ifstream fa("permset_a.txt", std::ios::binary), fb("permset_b.txt", std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
    CHECK(ca.substr(0, 32).find("jigsaw-permset v1 seed=42") == 0);

    PermutationSet loaded = PermutationSet::load("permset_a.txt");
    CHECK(loaded.perms == a.perms);
    CHECK(loaded.seed == 42);
    fs::remove("permset_a.txt");
    fs::remove("permset_b.txt");
}

TEST_CASE("patch geometry base and scaling") {
    PatchGeometry base = PatchGeometry::base();
    base.validate();
    CHECK(base.crop_side == 255);
    CHECK(base.cell_side == 85);
    CHECK(base.patch_side == 64);
    CHECK(base.eval_center_side == 192);
    CHECK(base.jitter_range() == 21);

    PatchGeometry g96 = PatchGeometry::scaled(96);
    CHECK(g96.cell_side == 32);
    CHECK(g96.crop_side == 96);
    CHECK(g96.patch_side == 24);
    CHECK(g96.eval_center_side == 72);
    CHECK(g96.eval_scale_side == 96);
    CHECK(g96.jitter_range() == 8);

    PatchGeometry g32 = PatchGeometry::scaled(32);
    CHECK(g32.crop_side == 3 * g32.cell_side);
    CHECK(g32.eval_center_side == 3 * g32.patch_side);

    PatchGeometry bad = base;
    bad.crop_side = 200;
    CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("patch pipeline: standardization and eval-grid offsets") {
    Rng rng(5);
    // base geometry, 292x292 source so the train resize is identity
    Tensor img(1, 3, 292, 292);
    for (int64_t i = 0; i < img.numel(); ++i) img[size_t(i)] = rng.uniform();

    PatchGeometry base = PatchGeometry::base();
    PatchGridResult train = extract_patch_grid(img, base, true, rng);
    REQUIRE(train.patches.size() == 9);
    for (const auto& p : train.patches) {
        CHECK(p.h() == 64);
        double sum = 0.0, sq = 0.0;
        for (int64_t i = 0; i < p.numel(); ++i) {
            sum += p[size_t(i)];
            sq += double(p[size_t(i)]) * double(p[size_t(i)]);
        }
        double mean = sum / double(p.numel());
        double sd = std::sqrt(std::max(0.0, sq / double(p.numel()) - mean * mean));
        CHECK(std::abs(mean) <= 1e-5);
        CHECK(std::abs(sd - 1.0) <= 1e-3);
    }

    // eval mode: patch (0,0) comes from rows/cols [31, 95) of the 255px view
    Tensor img255(1, 3, 255, 255);
    for (int64_t i = 0; i < img255.numel(); ++i) img255[size_t(i)] = rng.uniform();
    PatchGridResult ev = extract_patch_grid(img255, base, false, rng);
    Tensor expected = crop(img255, 31, 31, 64, 64);
    standardize(expected);
    CHECK(max_abs_diff(ev.patches[0], expected) <= 1e-5f);
    // center patch (1,1) from offset 31 + 64
    Tensor center = crop(img255, 95, 95, 64, 64);
    standardize(center);
    CHECK(max_abs_diff(ev.patches[4], center) <= 1e-5f);

    // eval extraction is deterministic
    Rng rng2(999);
    PatchGridResult ev2 = extract_patch_grid(img255, base, false, rng2);
    for (int i = 0; i < 9; ++i) CHECK(max_abs_diff(ev.patches[size_t(i)], ev2.patches[size_t(i)]) == 0.0f);
}

TEST_CASE("train-mode jitter stays inside its cell") {
    Rng rng(6);
    // custom geometry with resize == crop so absolute positions are known
    PatchGeometry g;
    g.cell_side = 32;
    g.crop_side = 96;
    g.patch_side = 24;
    g.eval_center_side = 72;
    g.eval_scale_side = 96;
    g.resize_side = 96;
    g.validate();

    // nonlinear position encoding so standardization cannot hide the offset
    Tensor img(1, 3, 96, 96);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 96; ++y)
            for (int64_t x = 0; x < 96; ++x)
                img.at(0, c, y, x) = float((y * y + x * x + c * 37) % 97) / 97.0f;

    const int64_t jr = g.jitter_range();
    CHECK(jr == 8);
    for (int trial = 0; trial < 6; ++trial) {
        PatchGridResult res = extract_patch_grid(img, g, true, rng);
        // color kept or grayscale: build the comparable source image
        Tensor source = res.grayscaled ? grayscale(img) : img;
        for (int cell = 0; cell < 9; ++cell) {
            int cy = cell / 3, cx = cell % 3;
            bool matched = false;
            for (int64_t oy = 0; oy <= jr && !matched; ++oy)
                for (int64_t ox = 0; ox <= jr && !matched; ++ox) {
                    Tensor cand = crop(source, cy * 32 + oy, cx * 32 + ox, 24, 24);
                    standardize(cand);
                    if (max_abs_diff(cand, res.patches[size_t(cell)]) < 1e-6f) matched = true;
                }
            CHECK(matched);  // the patch lies inside its cell at a legal jitter
        }
    }
}

TEST_CASE("grayscale fraction near two thirds") {
    Rng rng(77);
    PatchGeometry g = PatchGeometry::scaled(48);
    Tensor img = random_image(rng, 64);
    int gray = 0;
    const int draws = 3000;
    for (int i = 0; i < draws; ++i)
        gray += extract_patch_grid(img, g, true, rng).grayscaled ? 1 : 0;
    double frac = double(gray) / draws;
    CHECK(frac > 0.63);
    CHECK(frac < 0.70);
}

TEST_CASE("jigsaw batch construction") {
    Rng rng(9);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 4; ++i) imgs.push_back(random_image(rng, 96));
    PermutationSet perms = PermutationSet::generate(1, 100);
    PatchGeometry g = PatchGeometry::scaled(96);
    PretextBatch batch = make_jigsaw_batch(imgs, perms, g, 16, false, rng);
    CHECK(batch.examples() == 64);  // 4 images x 16 permutations
    CHECK(batch.inputs.n() == 64 * 9);
    CHECK(batch.patches_per_example == 9);
    for (int32_t t : batch.targets) {
        CHECK(t >= 0);
        CHECK(t < 100);
    }

    // identity permutation leaves raster order: request all perms on 1 image,
    // find the identity example and compare patch stacks
    PretextBatch all = make_jigsaw_batch({imgs[0]}, perms, g, 100, false, rng);
    int id_idx = perms.index_of_identity();
    REQUIRE(id_idx >= 0);
    int ex = -1;
    for (int64_t e = 0; e < all.examples(); ++e)
        if (all.targets[size_t(e)] == id_idx) ex = int(e);
    REQUIRE(ex >= 0);
    Rng rng_eval(1);
    PatchGridResult grid = extract_patch_grid(imgs[0], g, false, rng_eval);
    for (int s = 0; s < 9; ++s) {
        Tensor got = image_slice(all.inputs, int64_t(ex) * 9 + s);
        CHECK(max_abs_diff(got, grid.patches[size_t(s)]) == 0.0f);
    }

    // applying p then its inverse restores raster order
    const auto& p = perms.perms[5];
    std::array<int, 9> inv{};
    for (int i = 0; i < 9; ++i) inv[size_t(p[size_t(i)])] = i;
    std::array<int, 9> composed{};
    for (int i = 0; i < 9; ++i) composed[size_t(i)] = p[size_t(inv[size_t(i)])];
    for (int i = 0; i < 9; ++i) CHECK(composed[size_t(i)] == i);
}

TEST_CASE("relative patch location labels and frequencies") {
    CHECK(relpatchloc_label(-1, -1) == 0);
    CHECK(relpatchloc_label(-1, 0) == 1);   // directly above
    CHECK(relpatchloc_label(-1, 1) == 2);
    CHECK(relpatchloc_label(0, -1) == 3);
    CHECK(relpatchloc_label(0, 1) == 4);    // on the right
    CHECK(relpatchloc_label(1, -1) == 5);
    CHECK(relpatchloc_label(1, 0) == 6);
    CHECK(relpatchloc_label(1, 1) == 7);
    CHECK_THROWS_AS(relpatchloc_label(0, 0), UsageError);

    Rng rng(15);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 40; ++i) imgs.push_back(random_image(rng, 48));
    std::vector<int64_t> counts(8, 0);
    int total = 0;
    PatchGeometry g = PatchGeometry::scaled(48);
    for (int rep = 0; rep < 200; ++rep) {
        PretextBatch b = make_relpatchloc_batch(imgs, g, true, rng);
        CHECK(b.patches_per_example == 2);
        for (int32_t t : b.targets) {
            ++counts[size_t(t)];
            ++total;
        }
    }
    CHECK(total == 8000);
    for (int64_t c : counts) {
        double f = double(c) / double(total);
        CHECK(f >= 0.10);
        CHECK(f <= 0.15);
    }
}

TEST_CASE("supervised baseline batch") {
    Rng rng(20);
    Tensor imgs(4, 3, 16, 16);
    imgs.randn(rng);
    PretextBatch b = supervised_baseline_batch(imgs, {0, 3, 2, 1}, 4);
    CHECK(b.examples() == 4);
    CHECK_THROWS_AS(supervised_baseline_batch(imgs, {0, 4, 2, 1}, 4), UsageError);
}

TEST_CASE("average patch representation") {
    ModelSpec spec;
    spec.family = Family::ResNetV2;
    spec.widening_k = 1;
    spec.input_side = 24;  // patch side for 96px geometry
    Model model(spec, 6);
    PatchGeometry g = PatchGeometry::scaled(96);

    // periodic image: every eval-grid patch is identical
    Tensor img(1, 3, 96, 96);
    Rng rng(2);
    Tensor tile(1, 3, 24, 24);
    for (int64_t i = 0; i < tile.numel(); ++i) tile[size_t(i)] = rng.uniform();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 96; ++y)
            for (int64_t x = 0; x < 96; ++x)
                img.at(0, c, y, x) = tile.at(0, c, y % 24, x % 24);

    Tensor mean_rep = average_patch_representation(model, img, g);
    CHECK(mean_rep.c() == 512);

    // compare against a single patch pushed through the model
    Rng unused(0);
    PatchGridResult grid = extract_patch_grid(img, g, false, unused);
    for (int i = 1; i < 9; ++i)
        CHECK(max_abs_diff(grid.patches[0], grid.patches[size_t(i)]) <= 1e-6f);
    Tensor one(1, 3, 24, 24);
    put_image(one, 0, grid.patches[0]);
    const Tensor& single = model.forward(one, false);
    for (int64_t d = 0; d < 512; ++d)
        CHECK(mean_rep.at(0, d, 0, 0) == doctest::Approx(single.at(0, d, 0, 0)).epsilon(1e-4));
}
