#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <cblas.h>

#include "ssrl/pretext.hpp"

namespace ssrl {

Task task_from_string(const std::string& s) {
    if (s == "rotation") return Task::Rotation;
    if (s == "exemplar") return Task::Exemplar;
    if (s == "jigsaw") return Task::Jigsaw;
    if (s == "relpatchloc") return Task::RelPatchLoc;
    if (s == "supervised") return Task::Supervised;
    throw UsageError("unknown task: " + s);
}

std::string task_to_string(Task t) {
    switch (t) {
        case Task::Rotation: return "rotation";
        case Task::Exemplar: return "exemplar";
        case Task::Jigsaw: return "jigsaw";
        case Task::RelPatchLoc: return "relpatchloc";
        case Task::Supervised: return "supervised";
    }
    throw UsageError("unknown task enum");
}

bool task_uses_patches(Task t) { return t == Task::Jigsaw || t == Task::RelPatchLoc; }

int64_t PretextSpec::head_classes() const {
    switch (task) {
        case Task::Rotation: return rotation_count;
        case Task::Exemplar: return embed_dim;
        case Task::Jigsaw: return permset_count;
        case Task::RelPatchLoc: return 8;
        case Task::Supervised: return num_classes;
    }
    throw UsageError("unknown task enum");
}

// ---------------------------------------------------------------------------
// Patch geometry
// ---------------------------------------------------------------------------

PatchGeometry PatchGeometry::base() { return PatchGeometry{}; }

PatchGeometry PatchGeometry::scaled(int64_t input_side) {
    require(input_side > 0, "geometry: input_side must be positive");
    PatchGeometry g;
    g.cell_side = 85 * input_side / 255;
    g.crop_side = 3 * g.cell_side;
    g.patch_side = std::min<int64_t>(64 * input_side / 255, g.cell_side);
    g.eval_center_side = 3 * g.patch_side;
    g.eval_scale_side = input_side;
    g.resize_side = 292 * input_side / 255;
    g.validate();
    return g;
}

void PatchGeometry::validate() const {
    require(cell_side > 0 && patch_side > 0, "geometry: degenerate cell or patch");
    require(crop_side == 3 * cell_side, "geometry: crop_side must equal 3*cell_side");
    require(patch_side <= cell_side, "geometry: patch larger than cell");
    require(eval_center_side == 3 * patch_side,
            "geometry: eval_center_side must equal 3*patch_side");
    require(resize_side >= crop_side, "geometry: resize smaller than crop");
    require(eval_scale_side >= eval_center_side, "geometry: eval scale smaller than center");
}

// ---------------------------------------------------------------------------
// Permutation set
// ---------------------------------------------------------------------------

namespace {

int hamming(const std::array<int, 9>& a, const std::array<int, 9>& b) {
    int d = 0;
    for (int i = 0; i < 9; ++i) d += a[i] != b[i];
    return d;
}

constexpr int64_t kNineFactorial = 362880;

}  // namespace

PermutationSet PermutationSet::generate(uint64_t seed, int count) {
    require(count >= 1 && int64_t(count) <= kNineFactorial,
            "permutation count must be in [1, 9!]");
    PermutationSet set;
    set.seed = seed;
    std::array<int, 9> ident;
    std::iota(ident.begin(), ident.end(), 0);
    set.perms.push_back(ident);

    Rng rng(seed);
    const int kCandidates = 512;
    while (int(set.perms.size()) < count) {
        std::array<int, 9> best{};
        int best_score = -1;
        for (int c = 0; c < kCandidates; ++c) {
            std::array<int, 9> cand = ident;
            for (int i = 8; i > 0; --i)
                std::swap(cand[size_t(i)], cand[size_t(rng.uniform_int(i + 1))]);
            int score = 9;
            for (const auto& p : set.perms) score = std::min(score, hamming(cand, p));
            if (score > best_score) {
                best_score = score;
                best = cand;
            }
        }
        if (best_score <= 0) continue;  // duplicate batch, resample
        set.perms.push_back(best);
    }

    set.min_hamming = 9;
    for (size_t i = 0; i < set.perms.size(); ++i)
        for (size_t j = i + 1; j < set.perms.size(); ++j)
            set.min_hamming = std::min(set.min_hamming, hamming(set.perms[i], set.perms[j]));
    if (set.perms.size() == 1) set.min_hamming = 0;
    return set;
}

void PermutationSet::save(const std::string& path) const {
    std::ofstream f(path);
    require(f.good(), "cannot write permutation set: " + path);
    f << "jigsaw-permset v1 seed=" << seed << " count=" << perms.size() << "\n";
    for (const auto& p : perms) {
        for (int i = 0; i < 9; ++i) f << p[size_t(i)] << (i == 8 ? '\n' : ' ');
    }
}

PermutationSet PermutationSet::load(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot read permutation set: " + path);
    std::string header;
    std::getline(f, header);
    PermutationSet set;
    size_t count = 0;
    {
        std::istringstream hs(header);
        std::string tag, ver, kv;
        hs >> tag >> ver;
        require(tag == "jigsaw-permset" && ver == "v1", "bad permset header: " + header);
        while (hs >> kv) {
            auto eq = kv.find('=');
            require(eq != std::string::npos, "bad permset header field: " + kv);
            std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
            if (key == "seed") set.seed = std::stoull(val);
            if (key == "count") count = std::stoul(val);
        }
    }
    for (size_t i = 0; i < count; ++i) {
        std::array<int, 9> p{};
        for (int j = 0; j < 9; ++j) f >> p[size_t(j)];
        require(f.good() || f.eof(), "truncated permset file");
        set.perms.push_back(p);
    }
    require(set.perms.size() == count, "permset count mismatch");
    set.min_hamming = 9;
    for (size_t i = 0; i < set.perms.size(); ++i)
        for (size_t j = i + 1; j < set.perms.size(); ++j)
            set.min_hamming = std::min(set.min_hamming, hamming(set.perms[i], set.perms[j]));
    if (set.perms.size() <= 1) set.min_hamming = 0;
    return set;
}

int PermutationSet::index_of_identity() const {
    for (size_t i = 0; i < perms.size(); ++i) {
        bool id = true;
        for (int j = 0; j < 9; ++j) id &= perms[i][size_t(j)] == j;
        if (id) return int(i);
    }
    return -1;
}

// ---------------------------------------------------------------------------
// Batch builders
// ---------------------------------------------------------------------------

PretextBatch make_rotation_batch(const Tensor& images) {
    require(images.h() == images.w(), "rotation: non-square input would change shape");
    const int64_t N = images.n(), S = images.h();
    PretextBatch batch;
    batch.task = Task::Rotation;
    batch.inputs = Tensor(4 * N, 3, S, S);
    batch.targets.resize(size_t(4 * N));
    for (int64_t n = 0; n < N; ++n) {
        Tensor img = image_slice(images, n);
        for (int r = 0; r < 4; ++r) {
            put_image(batch.inputs, 4 * n + r, rot90(img, r));
            batch.targets[size_t(4 * n + r)] = r;
        }
    }
    return batch;
}

PretextBatch make_exemplar_batch(const std::vector<Tensor>& images, int64_t side,
                                 int n_examples, const AugmentParams& aug, Rng& rng) {
    require(n_examples >= 2, "exemplar: n_examples must be at least 2");
    const int64_t N = int64_t(images.size());
    PretextBatch batch;
    batch.task = Task::Exemplar;
    batch.inputs = Tensor(N * n_examples, 3, side, side);
    batch.targets.resize(size_t(N * n_examples));
    int64_t out = 0;
    for (int64_t n = 0; n < N; ++n) {
        for (int e = 0; e < n_examples; ++e, ++out) {
            Tensor v = random_area_crop(images[size_t(n)], side, rng, aug.area_lo, aug.area_hi);
            if (rng.uniform() < aug.flip_prob) v = hflip(v);
            if (aug.jitter > 0.0f) v = color_jitter(v, rng, aug.jitter);
            put_image(batch.inputs, out, v);
            batch.targets[size_t(out)] = int32_t(n);
        }
    }
    return batch;
}

PatchGridResult extract_patch_grid(const Tensor& image, const PatchGeometry& geom,
                                   bool train_mode, Rng& rng) {
    geom.validate();
    PatchGridResult res;
    res.patches.reserve(9);
    if (train_mode) {
        Tensor im = resize_smallest_side(image, geom.resize_side);
        require(im.h() >= geom.crop_side && im.w() >= geom.crop_side,
                "patch pipeline: image smaller than crop after resize");
        int64_t y0 = rng.uniform_int(im.h() - geom.crop_side + 1);
        int64_t x0 = rng.uniform_int(im.w() - geom.crop_side + 1);
        im = crop(im, y0, x0, geom.crop_side, geom.crop_side);
        if (rng.uniform() < 2.0f / 3.0f) {
            im = grayscale(im);
            res.grayscaled = true;
        }
        const int64_t jr = geom.jitter_range();
        for (int64_t cy = 0; cy < 3; ++cy)
            for (int64_t cx = 0; cx < 3; ++cx) {
                int64_t oy = jr > 0 ? rng.uniform_int(jr + 1) : 0;
                int64_t ox = jr > 0 ? rng.uniform_int(jr + 1) : 0;
                Tensor patch = crop(im, cy * geom.cell_side + oy, cx * geom.cell_side + ox,
                                    geom.patch_side, geom.patch_side);
                res.sigma_clamps += standardize(patch) ? 1 : 0;
                res.patches.push_back(std::move(patch));
            }
    } else {
        Tensor im = resize_bilinear(image, geom.eval_scale_side, geom.eval_scale_side);
        im = center_crop(im, geom.eval_center_side);
        for (int64_t cy = 0; cy < 3; ++cy)
            for (int64_t cx = 0; cx < 3; ++cx) {
                Tensor patch = crop(im, cy * geom.patch_side, cx * geom.patch_side,
                                    geom.patch_side, geom.patch_side);
                res.sigma_clamps += standardize(patch) ? 1 : 0;
                res.patches.push_back(std::move(patch));
            }
    }
    return res;
}

PretextBatch make_jigsaw_batch(const std::vector<Tensor>& images, const PermutationSet& perms,
                               const PatchGeometry& geom, int perms_per_image, bool train_mode,
                               Rng& rng) {
    require(!perms.perms.empty(), "jigsaw: empty permutation set");
    require(perms_per_image >= 1 && size_t(perms_per_image) <= perms.perms.size(),
            "jigsaw: perms_per_image out of range");
    const int64_t N = int64_t(images.size());
    const int64_t E = N * perms_per_image;
    PretextBatch batch;
    batch.task = Task::Jigsaw;
    batch.patches_per_example = 9;
    batch.inputs = Tensor(E * 9, 3, geom.patch_side, geom.patch_side);
    batch.targets.resize(size_t(E));
    int64_t ex = 0;
    for (int64_t n = 0; n < N; ++n) {
        PatchGridResult grid = extract_patch_grid(images[size_t(n)], geom, train_mode, rng);
        // sample perms_per_image distinct permutation indices
        std::vector<int> idx(perms.perms.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < perms_per_image; ++i) {
            int j = i + int(rng.uniform_int(int64_t(idx.size()) - i));
            std::swap(idx[size_t(i)], idx[size_t(j)]);
        }
        for (int p = 0; p < perms_per_image; ++p, ++ex) {
            const auto& perm = perms.perms[size_t(idx[size_t(p)])];
            // slot s of the example holds the patch whose raster index is perm[s]
            for (int s = 0; s < 9; ++s)
                put_image(batch.inputs, ex * 9 + s, grid.patches[size_t(perm[size_t(s)])]);
            batch.targets[size_t(ex)] = int32_t(idx[size_t(p)]);
        }
    }
    return batch;
}

int relpatchloc_label(int dy, int dx) {
    static const int table[3][3] = {{0, 1, 2}, {3, -1, 4}, {5, 6, 7}};
    require(dy >= -1 && dy <= 1 && dx >= -1 && dx <= 1 && !(dy == 0 && dx == 0),
            "relpatchloc: offset outside the 8-neighborhood");
    return table[dy + 1][dx + 1];
}

PretextBatch make_relpatchloc_batch(const std::vector<Tensor>& images,
                                    const PatchGeometry& geom, bool train_mode, Rng& rng) {
    const int64_t N = int64_t(images.size());
    PretextBatch batch;
    batch.task = Task::RelPatchLoc;
    batch.patches_per_example = 2;
    batch.inputs = Tensor(N * 2, 3, geom.patch_side, geom.patch_side);
    batch.targets.resize(size_t(N));
    static const int offsets[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                      {0, 1},   {1, -1}, {1, 0},  {1, 1}};
    for (int64_t n = 0; n < N; ++n) {
        PatchGridResult grid = extract_patch_grid(images[size_t(n)], geom, train_mode, rng);
        int pick = int(rng.uniform_int(8));
        int dy = offsets[pick][0], dx = offsets[pick][1];
        int neighbor = (1 + dy) * 3 + (1 + dx);
        put_image(batch.inputs, n * 2 + 0, grid.patches[4]);  // center cell (1,1)
        put_image(batch.inputs, n * 2 + 1, grid.patches[size_t(neighbor)]);
        batch.targets[size_t(n)] = int32_t(relpatchloc_label(dy, dx));
    }
    return batch;
}

PretextBatch supervised_baseline_batch(const Tensor& images, const std::vector<int32_t>& labels,
                                       int num_classes) {
    require(int64_t(labels.size()) == images.n(), "supervised: label count mismatch");
    for (int32_t l : labels)
        require(l >= 0 && l < num_classes, "supervised: label out of range");
    PretextBatch batch;
    batch.task = Task::Supervised;
    batch.inputs = images;
    batch.targets = labels;
    return batch;
}

Tensor average_patch_representation(Model& model, const Tensor& image,
                                    const PatchGeometry& geom) {
    Rng unused(0);
    PatchGridResult grid = extract_patch_grid(image, geom, false, unused);
    Tensor stack(9, 3, geom.patch_side, geom.patch_side);
    for (int i = 0; i < 9; ++i) put_image(stack, i, grid.patches[size_t(i)]);
    const Tensor& reps = model.forward(stack, false);
    Tensor mean = Tensor::matrix(1, reps.c());
    for (int64_t d = 0; d < reps.c(); ++d) {
        double acc = 0.0;
        for (int i = 0; i < 9; ++i) acc += reps.at(i, d, 0, 0);
        mean.at(0, d, 0, 0) = float(acc / 9.0);
    }
    return mean;
}

// ---------------------------------------------------------------------------
// Triplet loss (semi-hard mining)
// ---------------------------------------------------------------------------

TripletResult triplet_loss(const Tensor& embeddings, const std::vector<int32_t>& ids,
                           float margin, bool need_grad) {
    const int64_t N = embeddings.n(), D = embeddings.c();
    require(int64_t(ids.size()) == N, "triplet: id count mismatch");
    require(N >= 2, "triplet: need at least two embeddings");
    {
        bool multi = false;
        for (size_t i = 1; i < ids.size(); ++i) multi |= ids[i] != ids[0];
        require(multi, "triplet: a batch with a single id has no negatives");
    }

    // Squared distances via the Gram matrix.
    std::vector<float> gram(size_t(N * N));
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(N), int(N), int(D), 1.0f,
                embeddings.data(), int(D), embeddings.data(), int(D), 0.0f, gram.data(),
                int(N));
    std::vector<float> sqnorm(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) sqnorm[size_t(i)] = gram[size_t(i * N + i)];
    auto dist = [&](int64_t i, int64_t j) {
        float d = sqnorm[size_t(i)] + sqnorm[size_t(j)] - 2.0f * gram[size_t(i * N + j)];
        return d > 0.0f ? d : 0.0f;
    };

    TripletResult res;
    if (need_grad) res.dembeddings = Tensor::matrix(N, D);

    // Pairs (anchor, positive, chosen negative) that have non-zero hinge.
    struct ActiveTriple {
        int64_t a, p, n;
    };
    std::vector<ActiveTriple> active;
    int64_t num_pos_pairs = 0;
    double total = 0.0;
    int64_t nn_hits = 0;

    std::vector<std::pair<float, int64_t>> negs;
    for (int64_t a = 0; a < N; ++a) {
        negs.clear();
        float best_any = std::numeric_limits<float>::infinity();
        int64_t best_idx = -1;
        for (int64_t j = 0; j < N; ++j) {
            if (j == a) continue;
            float d = dist(a, j);
            if (d < best_any) {
                best_any = d;
                best_idx = j;
            }
            if (ids[size_t(j)] != ids[size_t(a)]) negs.emplace_back(d, j);
        }
        if (best_idx >= 0 && ids[size_t(best_idx)] == ids[size_t(a)]) ++nn_hits;
        if (negs.empty()) continue;
        std::sort(negs.begin(), negs.end());
        for (int64_t p = 0; p < N; ++p) {
            if (p == a || ids[size_t(p)] != ids[size_t(a)]) continue;
            ++num_pos_pairs;
            float d_ap = dist(a, p);
            // smallest negative distance strictly greater than d_ap, else the
            // largest negative distance
            auto it = std::upper_bound(negs.begin(), negs.end(),
                                       std::make_pair(d_ap, std::numeric_limits<int64_t>::max()));
            int64_t n_idx = (it != negs.end()) ? it->second : negs.back().second;
            float d_an = dist(a, n_idx);
            float hinge = margin + d_ap - d_an;
            if (hinge > 0.0f) {
                total += hinge;
                if (need_grad) active.push_back({a, p, n_idx});
            }
        }
    }
    require(num_pos_pairs > 0, "triplet: every id needs at least two embeddings");
    res.loss = float(total / double(num_pos_pairs));
    res.accuracy = float(nn_hits) / float(N);

    if (need_grad) {
        const float scale = 1.0f / float(num_pos_pairs);
        float* g = res.dembeddings.data();
        const float* e = embeddings.data();
        for (const auto& t : active) {
            const float* ea = e + t.a * D;
            const float* ep = e + t.p * D;
            const float* en = e + t.n * D;
            float* ga = g + t.a * D;
            float* gp = g + t.p * D;
            float* gn = g + t.n * D;
            for (int64_t d = 0; d < D; ++d) {
                // d(d_ap - d_an)/d(e): 2(a-p) - 2(a-n) on the anchor, etc.
                float ap = ea[d] - ep[d];
                float an = ea[d] - en[d];
                ga[d] += scale * 2.0f * (ap - an);
                gp[d] += scale * -2.0f * ap;
                gn[d] += scale * 2.0f * an;
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Task heads
// ---------------------------------------------------------------------------

std::unique_ptr<Sequential> build_task_head(const PretextSpec& spec, int64_t rep_dim,
                                            uint64_t seed) {
    auto head = std::make_unique<Sequential>();
    const int64_t classes = spec.head_classes();
    require(classes > 0, "task head: class count not set");
    switch (spec.task) {
        case Task::Rotation:
        case Task::Supervised:
        case Task::Exemplar:
            head->add(std::make_unique<Dense>(rep_dim, classes));
            break;
        case Task::Jigsaw:
        case Task::RelPatchLoc: {
            const int64_t patches = spec.task == Task::Jigsaw ? 9 : 2;
            head->add(std::make_unique<Dense>(patches * rep_dim, spec.head_hidden));
            head->add(std::make_unique<ReLU>());
            head->add(std::make_unique<Dense>(spec.head_hidden, spec.head_hidden));
            head->add(std::make_unique<ReLU>());
            head->add(std::make_unique<Dense>(spec.head_hidden, classes));
            break;
        }
    }
    Rng rng(seed);
    head->init(rng);
    return head;
}

}  // namespace ssrl
