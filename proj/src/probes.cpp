#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <cblas.h>

#include "ssrl/probes.hpp"

namespace ssrl {

// ---------------------------------------------------------------------------
// RepresentationMatrix
// ---------------------------------------------------------------------------

void RepresentationMatrix::validate(int num_classes) const {
    require(x.n() == int64_t(y.size()), "representation matrix: rows/labels mismatch");
    require(x.all_finite(), "representation matrix: non-finite entries");
    for (int32_t l : y)
        require(l >= 0 && l < num_classes, "representation matrix: label out of range");
}

RepresentationMatrix RepresentationMatrix::select(const std::vector<int64_t>& rows) const {
    RepresentationMatrix out;
    out.model_id = model_id;
    out.layer = layer;
    out.dataset = dataset;
    out.split = split;
    out.fraction = fraction;
    out.x = Tensor::matrix(int64_t(rows.size()), m());
    out.y.reserve(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        std::memcpy(out.x.data() + int64_t(i) * m(), x.data() + rows[i] * m(),
                    size_t(m()) * sizeof(float));
        out.y.push_back(y[size_t(rows[i])]);
    }
    return out;
}

void RepresentationMatrix::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot write representation cache: " + path);
    f << "repcache v1 model=" << model_id << " layer=" << layer << " dataset=" << dataset
      << " split=" << split << " n=" << n() << " m=" << m() << " dtype=f32\n";
    f.write(reinterpret_cast<const char*>(x.data()),
            std::streamsize(size_t(x.numel()) * sizeof(float)));
    f.write(reinterpret_cast<const char*>(y.data()),
            std::streamsize(y.size() * sizeof(int32_t)));
}

RepresentationMatrix RepresentationMatrix::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot read representation cache: " + path);
    std::string header;
    std::getline(f, header);
    RepresentationMatrix rm;
    int64_t n = -1, m = -1;
    {
        std::istringstream hs(header);
        std::string tag, ver, kv;
        hs >> tag >> ver;
        require(tag == "repcache" && ver == "v1", "bad repcache header: " + header);
        while (hs >> kv) {
            auto eq = kv.find('=');
            require(eq != std::string::npos, "bad repcache field: " + kv);
            std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
            if (key == "model") rm.model_id = val;
            if (key == "layer") rm.layer = val;
            if (key == "dataset") rm.dataset = val;
            if (key == "split") rm.split = val;
            if (key == "n") n = std::stoll(val);
            if (key == "m") m = std::stoll(val);
            if (key == "dtype") require(val == "f32", "repcache dtype must be f32");
        }
    }
    require(n >= 0 && m > 0, "repcache header missing n/m");
    rm.x = Tensor::matrix(n, m);
    rm.y.resize(size_t(n));
    f.read(reinterpret_cast<char*>(rm.x.data()),
           std::streamsize(size_t(rm.x.numel()) * sizeof(float)));
    f.read(reinterpret_cast<char*>(rm.y.data()), std::streamsize(rm.y.size() * sizeof(int32_t)));
    require(f.good(), "truncated repcache: " + path);
    return rm;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

ProbeKind probe_kind_from_string(const std::string& s) {
    if (s == "convex_linear") return ProbeKind::ConvexLinear;
    if (s == "sgd_linear") return ProbeKind::SgdLinear;
    if (s == "mlp") return ProbeKind::Mlp;
    throw UsageError("unknown probe kind: " + s);
}

std::string probe_kind_to_string(ProbeKind k) {
    switch (k) {
        case ProbeKind::ConvexLinear: return "convex_linear";
        case ProbeKind::SgdLinear: return "sgd_linear";
        case ProbeKind::Mlp: return "mlp";
    }
    throw UsageError("unknown probe kind enum");
}

Tensor linear_scores(const LinearModel& m, const Tensor& x) {
    Tensor scores;
    kern::dense_fwd(x, m.w, m.b, scores);
    return scores;
}

float top_k_accuracy(const Tensor& scores, const std::vector<int32_t>& y, int k) {
    const int64_t N = scores.n(), C = scores.c();
    require(k > 0, "top_k_accuracy: k must be positive");
    require(k <= C, "top_k_accuracy: k exceeds the class count");
    require(int64_t(y.size()) == N, "top_k_accuracy: label count mismatch");
    int64_t hits = 0;
    for (int64_t n = 0; n < N; ++n) {
        const float* row = scores.data() + n * C;
        const int32_t t = y[size_t(n)];
        const float st = row[t];
        // rank of the true class under (score desc, index asc)
        int64_t ahead = 0;
        for (int64_t c = 0; c < C; ++c)
            if (row[c] > st || (row[c] == st && c < t)) ++ahead;
        if (ahead < k) ++hits;
    }
    return float(double(hits) / double(std::max<int64_t>(1, N)));
}

// ---------------------------------------------------------------------------
// Convex linear probe
// ---------------------------------------------------------------------------

ConvexFitResult fit_convex_linear(const RepresentationMatrix& train, int num_classes,
                                  const ConvexLinearSpec& spec) {
    require(num_classes >= 2, "convex probe: need at least two classes");
    train.validate(num_classes);
    {
        bool multi = false;
        for (size_t i = 1; i < train.y.size(); ++i) multi |= train.y[i] != train.y[0];
        require(multi, "convex probe: degenerate single-class labels");
    }
    const int64_t N = train.n(), M = train.m(), C = num_classes;
    const double lambda = spec.lambda_numerator / double(M * C);

    // theta = [W row-major (C,M), b (C)]
    std::vector<double> theta(size_t(C * M + C), 0.0);
    std::vector<float> wf(size_t(C * M));
    std::vector<float> scores(size_t(N * C));
    std::vector<float> gmat(size_t(N * C));
    std::vector<float> gw(size_t(C * M));

    LbfgsObjective objective = [&](const std::vector<double>& th,
                                   std::vector<double>& grad) -> double {
        for (size_t i = 0; i < wf.size(); ++i) wf[i] = float(th[i]);
        // scores = X * W^T
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(N), int(C), int(M), 1.0f,
                    train.x.data(), int(M), wf.data(), int(M), 0.0f, scores.data(), int(C));
        double ce = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            float* row = scores.data() + n * C;
            const int32_t t = train.y[size_t(n)];
            double mx = -1e30;
            for (int64_t c = 0; c < C; ++c) {
                row[c] += float(th[size_t(C * M + c)]);
                mx = std::max(mx, double(row[c]));
            }
            double z = 0.0;
            for (int64_t c = 0; c < C; ++c) z += std::exp(double(row[c]) - mx);
            ce += -(double(row[t]) - mx - std::log(z));
            float* grow = gmat.data() + n * C;
            for (int64_t c = 0; c < C; ++c)
                grow[c] = float(std::exp(double(row[c]) - mx) / z - (c == t ? 1.0 : 0.0)) /
                          float(N);
        }
        ce /= double(N);
        // dW = G^T X + 2*lambda*W
        cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(C), int(M), int(N), 1.0f,
                    gmat.data(), int(C), train.x.data(), int(M), 0.0f, gw.data(), int(M));
        double reg = 0.0;
        for (int64_t i = 0; i < C * M; ++i) {
            reg += th[size_t(i)] * th[size_t(i)];
            grad[size_t(i)] = double(gw[size_t(i)]) + 2.0 * lambda * th[size_t(i)];
        }
        for (int64_t c = 0; c < C; ++c) {
            double gb = 0.0;
            for (int64_t n = 0; n < N; ++n) gb += double(gmat[size_t(n * C + c)]);
            grad[size_t(C * M + c)] = gb;  // bias column is unregularized
        }
        return ce + lambda * reg;
    };

    LbfgsOptions opt;
    opt.max_iters = spec.max_updates;
    opt.grad_tol = spec.grad_tol;
    LbfgsResult lr = lbfgs_minimize(objective, theta, opt);

    ConvexFitResult res;
    res.lambda = lambda;
    res.iterations = lr.iterations;
    res.objective = lr.value;
    res.grad_norm = lr.grad_norm;
    res.model.w = Tensor::matrix(C, M);
    res.model.b.assign(size_t(C), 0.0f);
    for (int64_t i = 0; i < C * M; ++i) res.model.w[size_t(i)] = float(theta[size_t(i)]);
    for (int64_t c = 0; c < C; ++c) res.model.b[size_t(c)] = float(theta[size_t(C * M + c)]);
    res.train_top1 = top_k_accuracy(linear_scores(res.model, train.x), train.y, 1);
    return res;
}

ProbeOutcome eval_linear(const LinearModel& m, const RepresentationMatrix& train,
                         const RepresentationMatrix& eval) {
    ProbeOutcome out;
    out.train_top1 = top_k_accuracy(linear_scores(m, train.x), train.y, 1);
    Tensor scores = linear_scores(m, eval.x);
    out.top1 = top_k_accuracy(scores, eval.y, 1);
    out.top5 = top_k_accuracy(scores, eval.y, int(std::min<int64_t>(5, m.w.n())));
    return out;
}

// ---------------------------------------------------------------------------
// SGD linear probe
// ---------------------------------------------------------------------------

float SgdLinearSpec::lr_at_epoch(int epoch) const {
    float v = lr * float(batch) / float(reference_batch);
    if (epoch >= first_decay_epoch) v *= decay_factor;
    if (epoch >= first_decay_epoch + second_decay_after) v *= decay_factor;
    return v;
}

namespace {

struct LinearSgdState {
    LinearModel m;
    std::vector<float> vw, vb;  // momentum buffers
};

void linear_sgd_epoch(LinearSgdState& st, const Tensor& x, const std::vector<int32_t>& y,
                      int batch, float lr, float momentum, Rng& rng) {
    const int64_t N = x.n(), M = x.c(), C = st.m.w.n();
    std::vector<int64_t> order(static_cast<size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    Tensor xb, dw = Tensor::matrix(C, M);
    std::vector<float> db(size_t(C), 0.0f);
    for (int64_t start = 0; start < N; start += batch) {
        const int64_t take = std::min<int64_t>(batch, N - start);
        xb = Tensor::matrix(take, M);
        std::vector<int32_t> yb(static_cast<size_t>(take));
        for (int64_t i = 0; i < take; ++i) {
            std::memcpy(xb.data() + i * M, x.data() + order[size_t(start + i)] * M,
                        size_t(M) * sizeof(float));
            yb[size_t(i)] = y[size_t(order[size_t(start + i)])];
        }
        Tensor scores = linear_scores(st.m, xb);
        XentResult xr = softmax_xent(scores, yb);
        if (!std::isfinite(xr.loss)) throw ComputeError("sgd probe diverged: non-finite loss");
        dw.zero();
        std::fill(db.begin(), db.end(), 0.0f);
        kern::dense_bwd_weights(xb, xr.dlogits, dw, db);
        for (int64_t i = 0; i < C * M; ++i) {
            st.vw[size_t(i)] = momentum * st.vw[size_t(i)] + dw[size_t(i)];
            st.m.w[size_t(i)] -= lr * st.vw[size_t(i)];
        }
        for (int64_t c = 0; c < C; ++c) {
            st.vb[size_t(c)] = momentum * st.vb[size_t(c)] + db[size_t(c)];
            st.m.b[size_t(c)] -= lr * st.vb[size_t(c)];
        }
    }
}

LinearSgdState make_linear_state(int64_t M, int64_t C, uint64_t seed) {
    LinearSgdState st;
    st.m.w = Tensor::matrix(C, M);
    st.m.b.assign(size_t(C), 0.0f);
    Rng rng(seed);
    st.m.w.randn(rng, std::sqrt(1.0f / float(M)));
    st.vw.assign(size_t(C * M), 0.0f);
    st.vb.assign(size_t(C), 0.0f);
    return st;
}

}  // namespace

ProbeOutcome fit_sgd_linear_features(const RepresentationMatrix& train,
                                     const RepresentationMatrix& eval, int num_classes,
                                     const SgdLinearSpec& spec, uint64_t seed) {
    train.validate(num_classes);
    const int64_t M = train.m(), C = num_classes;
    LinearSgdState st = make_linear_state(M, C, seed);
    ProbeOutcome out;
    for (int epoch = 0; epoch < spec.total_epochs(); ++epoch) {
        Rng rng = Rng(seed).derive(0x56D, uint64_t(epoch));
        linear_sgd_epoch(st, train.x, train.y, spec.batch, spec.lr_at_epoch(epoch),
                         spec.momentum, rng);
        out.curve.push_back(top_k_accuracy(linear_scores(st.m, eval.x), eval.y, 1));
    }
    ProbeOutcome fin = eval_linear(st.m, train, eval);
    fin.curve = std::move(out.curve);
    return fin;
}

ProbeOutcome fit_sgd_linear(Model& model, const std::string& layer, const Dataset& data,
                            const std::vector<int64_t>& train_idx,
                            const std::vector<int64_t>& eval_idx, const SgdLinearSpec& spec,
                            uint64_t seed) {
    const bool patch_mode = false;
    RepresentationMatrix eval_rm =
        extract_features(model, layer, data, eval_idx, patch_mode, "eval");
    if (!spec.augment) {
        RepresentationMatrix train_rm =
            extract_features(model, layer, data, train_idx, patch_mode, "train");
        return fit_sgd_linear_features(train_rm, eval_rm, data.num_classes(), spec, seed);
    }

    const int64_t side = model.spec().input_side;
    const int64_t M = eval_rm.m(), C = data.num_classes();
    LinearSgdState st = make_linear_state(M, C, seed);
    ProbeOutcome out;
    const int64_t fwd_batch = 64;
    for (int epoch = 0; epoch < spec.total_epochs(); ++epoch) {
        // Fresh augmented views of the training set, features recomputed
        // through the frozen backbone.
        Rng rng = Rng(seed).derive(0xA6, uint64_t(epoch));
        Tensor feats = Tensor::matrix(int64_t(train_idx.size()), M);
        std::vector<int32_t> labels;
        labels.reserve(train_idx.size());
        for (int64_t start = 0; start < int64_t(train_idx.size()); start += fwd_batch) {
            const int64_t take = std::min<int64_t>(fwd_batch, int64_t(train_idx.size()) - start);
            Tensor batch(take, 3, side, side);
            for (int64_t i = 0; i < take; ++i) {
                int64_t idx = train_idx[size_t(start + i)];
                put_image(batch, i, standard_augment(data.image(idx), side, rng));
                labels.push_back(data.items[size_t(idx)].label);
            }
            model.forward(batch, false);
            const Tensor* tap = nullptr;
            for (const auto& t : model.taps())
                if (t.name == layer) tap = t.value;
            require(tap != nullptr, "unknown layer name: " + layer);
            Tensor pooled;
            if (tap->h() * tap->w() > 1)
                kern::gap_fwd(*tap, pooled);
            else
                pooled = *tap;
            std::memcpy(feats.data() + start * M, pooled.data(),
                        size_t(pooled.numel()) * sizeof(float));
        }
        Rng order_rng = Rng(seed).derive(0x56D, uint64_t(epoch));
        linear_sgd_epoch(st, feats, labels, spec.batch, spec.lr_at_epoch(epoch), spec.momentum,
                         order_rng);
        out.curve.push_back(top_k_accuracy(linear_scores(st.m, eval_rm.x), eval_rm.y, 1));
    }
    Tensor scores = linear_scores(st.m, eval_rm.x);
    out.top1 = top_k_accuracy(scores, eval_rm.y, 1);
    out.top5 = top_k_accuracy(scores, eval_rm.y, int(std::min<int64_t>(5, C)));
    out.train_top1 = out.curve.empty() ? 0.0f : out.curve.back();
    return out;
}

// ---------------------------------------------------------------------------
// MLP probe
// ---------------------------------------------------------------------------

ProbeOutcome fit_mlp_probe(const RepresentationMatrix& train, const RepresentationMatrix& eval,
                           int num_classes, const MlpProbeSpec& spec, uint64_t seed) {
    train.validate(num_classes);
    const int64_t M = train.m(), C = num_classes, N = train.n();

    Sequential net;
    net.add(std::make_unique<Dense>(M, spec.hidden));
    net.add(std::make_unique<ReLU>());
    net.add(std::make_unique<Dropout>(spec.dropout, seed ^ 0xD50));
    net.add(std::make_unique<Dense>(spec.hidden, C));
    Rng init_rng(seed);
    net.init(init_rng);

    std::vector<ParamRef> params;
    net.collect_params("mlp", params);
    std::vector<std::vector<float>> vel;
    for (const auto& p : params) vel.emplace_back(size_t(p.size), 0.0f);

    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        float lr = spec.lr;
        for (int d : spec.decay_epochs)
            if (epoch >= d) lr *= spec.decay_factor;
        Rng rng = Rng(seed).derive(0x31A, uint64_t(epoch));
        std::vector<int64_t> order(static_cast<size_t>(N));
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (int64_t start = 0; start < N; start += spec.batch) {
            const int64_t take = std::min<int64_t>(spec.batch, N - start);
            Tensor xb = Tensor::matrix(take, M);
            std::vector<int32_t> yb(static_cast<size_t>(take));
            for (int64_t i = 0; i < take; ++i) {
                std::memcpy(xb.data() + i * M, train.x.data() + order[size_t(start + i)] * M,
                            size_t(M) * sizeof(float));
                yb[size_t(i)] = train.y[size_t(order[size_t(start + i)])];
            }
            const Tensor& logits = net.forward(xb, true);
            XentResult xr = softmax_xent(logits, yb);
            if (!std::isfinite(xr.loss))
                throw ComputeError("mlp probe diverged: non-finite loss");
            net.backward(xr.dlogits);
            for (size_t pi = 0; pi < params.size(); ++pi) {
                ParamRef& p = params[pi];
                float* v = vel[pi].data();
                // lambda = 100 / numel(W) per weight matrix, the convex
                // probe's rule applied to each layer; biases stay free
                const float l2 =
                    p.decay ? float(2.0 * spec.lambda_numerator / double(p.size)) : 0.0f;
                for (int64_t j = 0; j < p.size; ++j) {
                    float g = p.grad[j] + l2 * p.value[j];
                    v[j] = spec.momentum * v[j] + g;
                    p.value[j] -= lr * v[j];
                    p.grad[j] = 0.0f;
                }
            }
        }
    }

    ProbeOutcome out;
    const Tensor& train_scores = net.forward(train.x, false);
    out.train_top1 = top_k_accuracy(train_scores, train.y, 1);
    const Tensor& eval_scores = net.forward(eval.x, false);
    out.top1 = top_k_accuracy(eval_scores, eval.y, 1);
    out.top5 = top_k_accuracy(eval_scores, eval.y, int(std::min<int64_t>(5, C)));
    return out;
}

ProbeOutcome run_probe(const RepresentationMatrix& train, const RepresentationMatrix& eval,
                       int num_classes, const ProbeSpec& spec) {
    switch (spec.kind) {
        case ProbeKind::ConvexLinear: {
            ConvexFitResult fit = fit_convex_linear(train, num_classes, spec.convex);
            return eval_linear(fit.model, train, eval);
        }
        case ProbeKind::SgdLinear:
            return fit_sgd_linear_features(train, eval, num_classes, spec.sgd, spec.seed);
        case ProbeKind::Mlp:
            return fit_mlp_probe(train, eval, num_classes, spec.mlp, spec.seed);
    }
    throw UsageError("unknown probe kind");
}

// ---------------------------------------------------------------------------
// Extraction, layerwise, subsampling
// ---------------------------------------------------------------------------

RepresentationMatrix extract_features(Model& model, const std::string& layer,
                                      const Dataset& data, const std::vector<int64_t>& idx,
                                      bool patch_mode, const std::string& split_name,
                                      int64_t batch) {
    bool known = false;
    for (const auto& n : Model::tap_names()) known |= n == layer;
    require(known, "unknown layer name: " + layer);

    const int64_t N = int64_t(idx.size());
    const int64_t side = model.spec().input_side;
    RepresentationMatrix rm;
    rm.model_id = model.spec().id();
    rm.layer = layer;
    rm.dataset = data.name;
    rm.split = split_name;
    rm.y.reserve(size_t(N));
    int64_t dim = -1;

    PatchGeometry geom;
    if (patch_mode) {
        geom = PatchGeometry::scaled(data.items.empty() ? 255 : data.items[0].h);
        require(geom.patch_side == side,
                "patch extraction: model input_side must equal the scaled patch_side");
    }

    auto tap_value = [&]() -> const Tensor* {
        for (const auto& t : model.taps())
            if (t.name == layer) return t.value;
        return nullptr;
    };

    if (patch_mode) {
        Rng unused(0);
        for (int64_t i = 0; i < N; ++i) {
            PatchGridResult grid = extract_patch_grid(data.image(idx[size_t(i)]), geom, false,
                                                      unused);
            Tensor stack(9, 3, side, side);
            for (int p = 0; p < 9; ++p) put_image(stack, p, grid.patches[size_t(p)]);
            model.forward(stack, false);
            const Tensor* tap = tap_value();
            Tensor pooled;
            if (tap->h() * tap->w() > 1)
                kern::gap_fwd(*tap, pooled);
            else
                pooled = *tap;
            if (dim < 0) {
                dim = pooled.c();
                rm.x = Tensor::matrix(N, dim);
            }
            for (int64_t d = 0; d < dim; ++d) {
                double acc = 0.0;
                for (int p = 0; p < 9; ++p) acc += pooled.at(p, d, 0, 0);
                rm.x.at(i, d, 0, 0) = float(acc / 9.0);
            }
            rm.y.push_back(data.items[size_t(idx[size_t(i)])].label);
        }
        return rm;
    }

    for (int64_t start = 0; start < N; start += batch) {
        const int64_t take = std::min(batch, N - start);
        Tensor imgs(take, 3, side, side);
        for (int64_t i = 0; i < take; ++i) {
            int64_t di = idx[size_t(start + i)];
            Tensor raw = data.image(di);
            put_image(imgs, i,
                      raw.h() == side && raw.w() == side ? raw : standard_eval_view(raw, side));
            rm.y.push_back(data.items[size_t(di)].label);
        }
        model.forward(imgs, false);
        const Tensor* tap = tap_value();
        Tensor pooled;
        if (tap->h() * tap->w() > 1)
            kern::gap_fwd(*tap, pooled);
        else
            pooled = *tap;
        if (dim < 0) {
            dim = pooled.c();
            rm.x = Tensor::matrix(N, dim);
        }
        std::memcpy(rm.x.data() + start * dim, pooled.data(),
                    size_t(pooled.numel()) * sizeof(float));
    }
    return rm;
}

std::vector<std::pair<std::string, float>> layerwise_eval(Model& model, const Dataset& data,
                                                          const std::vector<int64_t>& train_idx,
                                                          const std::vector<int64_t>& eval_idx,
                                                          const ProbeSpec& probe,
                                                          bool patch_mode) {
    std::vector<std::pair<std::string, float>> out;
    for (const auto& tap : Model::tap_names()) {
        RepresentationMatrix tr = extract_features(model, tap, data, train_idx, patch_mode,
                                                   "train");
        RepresentationMatrix ev = extract_features(model, tap, data, eval_idx, patch_mode,
                                                   "eval");
        ProbeOutcome oc = run_probe(tr, ev, data.num_classes(), probe);
        out.emplace_back(tap, oc.top1);
    }
    return out;
}

std::vector<int64_t> stratified_subsample(const std::vector<int32_t>& y, double fraction,
                                          uint64_t seed) {
    require(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0, 1]");
    int32_t max_label = 0;
    for (int32_t l : y) max_label = std::max(max_label, l);
    std::vector<std::vector<int64_t>> per_class(size_t(max_label) + 1);
    for (size_t i = 0; i < y.size(); ++i) per_class[size_t(y[i])].push_back(int64_t(i));

    std::vector<int64_t> rows;
    Rng rng(seed);
    for (size_t c = 0; c < per_class.size(); ++c) {
        auto& cls = per_class[c];
        if (cls.empty()) continue;
        int64_t take = fraction >= 1.0 ? int64_t(cls.size())
                                       : int64_t(std::floor(fraction * double(cls.size())));
        require(take > 0, "fraction so small that class " + std::to_string(c) +
                              " becomes empty");
        rng.shuffle(cls);
        cls.resize(size_t(take));
        rows.insert(rows.end(), cls.begin(), cls.end());
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

float subsample_eval(const RepresentationMatrix& train, const RepresentationMatrix& eval,
                     int num_classes, double fraction, uint64_t seed, const ProbeSpec& probe) {
    if (fraction >= 1.0) return run_probe(train, eval, num_classes, probe).top1;
    RepresentationMatrix sub = train.select(stratified_subsample(train.y, fraction, seed));
    sub.fraction = float(fraction);
    return run_probe(sub, eval, num_classes, probe).top1;
}

}  // namespace ssrl
