#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "ssrl/blobio.hpp"
#include "ssrl/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ssrl {

void TrainSchedule::validate() const {
    require(base_lr > 0.0f && batch_size > 0 && reference_batch > 0,
            "schedule: positive lr and batch sizes required");
    require(total_epochs > 0, "schedule: total_epochs must be positive");
    for (size_t i = 0; i < decay_epochs.size(); ++i) {
        require(decay_epochs[i] < total_epochs, "schedule: decay epoch beyond total");
        if (i > 0)
            require(decay_epochs[i] > decay_epochs[i - 1],
                    "schedule: decay epochs must be strictly increasing");
    }
    if (!decay_epochs.empty())
        require(warmup_epochs < decay_epochs.front(),
                "schedule: warmup must end before the first decay");
    require(warmup_epochs >= 0 && warmup_epochs <= total_epochs, "schedule: bad warmup");
}

float lr_at(int64_t step, int64_t steps_per_epoch, const TrainSchedule& s) {
    require(steps_per_epoch > 0, "lr_at: zero steps_per_epoch");
    require(step >= 0, "lr_at: negative step");
    const float peak = s.peak_lr();
    const int64_t warmup_steps = int64_t(s.warmup_epochs) * steps_per_epoch;
    if (warmup_steps > 0 && step < warmup_steps)
        return peak * float(step) / float(warmup_steps);
    float lr = peak;
    const int64_t epoch = step / steps_per_epoch;
    for (int d : s.decay_epochs)
        if (epoch >= d) lr *= s.decay_factor;
    return lr;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

SgdMomentum::SgdMomentum(std::vector<ParamRef> params, float momentum)
    : params_(std::move(params)), momentum_(momentum) {
    for (const auto& p : params_) vel_.emplace_back(size_t(p.size), 0.0f);
}

void SgdMomentum::step(float lr, float weight_decay) {
    for (size_t i = 0; i < params_.size(); ++i) {
        ParamRef& p = params_[i];
        float* v = vel_[i].data();
        const float wd = p.decay ? weight_decay : 0.0f;
        for (int64_t j = 0; j < p.size; ++j) {
            float g = p.grad[j] + wd * p.value[j];
            v[j] = momentum_ * v[j] + g;
            p.value[j] -= lr * v[j];
            p.grad[j] = 0.0f;
        }
    }
}

void SgdMomentum::save(std::ofstream& f) const {
    for (size_t i = 0; i < params_.size(); ++i)
        write_named_blob(f, "vel." + params_[i].name, vel_[i].data(), params_[i].size);
}

void SgdMomentum::load(std::ifstream& f) {
    for (size_t i = 0; i < params_.size(); ++i)
        read_named_blob(f, "vel." + params_[i].name, vel_[i].data(), params_[i].size);
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

namespace {

struct StepBatch {
    PretextBatch batch;
    int64_t sources = 0;
};

int64_t sources_per_step(const PretextSpec& spec, int batch_size) {
    switch (spec.task) {
        case Task::Rotation:
            require(batch_size % spec.rotation_count == 0,
                    "batch size must be divisible by the rotation count");
            return batch_size / spec.rotation_count;
        case Task::Exemplar:
            require(batch_size % spec.examples_per_image == 0,
                    "batch size must be divisible by examples_per_image");
            return batch_size / spec.examples_per_image;
        case Task::Jigsaw:
            require(batch_size % spec.perms_per_image == 0,
                    "batch size must be divisible by perms_per_image");
            return batch_size / spec.perms_per_image;
        case Task::RelPatchLoc:
        case Task::Supervised: return batch_size;
    }
    throw UsageError("unknown task");
}

// Train-time view of one source image for the full-image tasks.
Tensor augmented_view(const Tensor& raw, int64_t side, const AugmentParams& aug, Rng& rng) {
    Tensor v = random_area_crop(raw, side, rng, aug.area_lo, aug.area_hi);
    if (rng.uniform() < aug.flip_prob) v = hflip(v);
    if (aug.jitter > 0.0f) v = color_jitter(v, rng, aug.jitter);
    return v;
}

Tensor eval_view(const Tensor& raw, int64_t side) {
    if (raw.h() == side && raw.w() == side) return raw;
    return standard_eval_view(raw, side);
}

StepBatch assemble_batch(const PretextSpec& spec, const Dataset& data,
                         const std::vector<int64_t>& order, int64_t start, int64_t n_src,
                         int64_t side, bool train_mode, const PermutationSet* perms,
                         const PatchGeometry* geom, Rng& rng) {
    StepBatch out;
    out.sources = n_src;
    switch (spec.task) {
        case Task::Rotation: {
            Tensor imgs(n_src, 3, side, side);
            for (int64_t i = 0; i < n_src; ++i) {
                Tensor raw = data.image(order[size_t(start + i)]);
                put_image(imgs, i,
                          train_mode ? augmented_view(raw, side, spec.augment, rng)
                                     : eval_view(raw, side));
            }
            out.batch = make_rotation_batch(imgs);
            break;
        }
        case Task::Supervised: {
            Tensor imgs(n_src, 3, side, side);
            std::vector<int32_t> labels(static_cast<size_t>(n_src));
            for (int64_t i = 0; i < n_src; ++i) {
                int64_t idx = order[size_t(start + i)];
                Tensor raw = data.image(idx);
                put_image(imgs, i,
                          train_mode ? augmented_view(raw, side, spec.augment, rng)
                                     : eval_view(raw, side));
                labels[size_t(i)] = data.items[size_t(idx)].label;
            }
            out.batch = supervised_baseline_batch(imgs, labels, spec.num_classes);
            break;
        }
        case Task::Exemplar: {
            std::vector<Tensor> raws;
            raws.reserve(size_t(n_src));
            for (int64_t i = 0; i < n_src; ++i)
                raws.push_back(data.image(order[size_t(start + i)]));
            out.batch = make_exemplar_batch(raws, side, spec.examples_per_image, spec.augment,
                                            rng);
            break;
        }
        case Task::Jigsaw: {
            std::vector<Tensor> raws;
            for (int64_t i = 0; i < n_src; ++i)
                raws.push_back(data.image(order[size_t(start + i)]));
            out.batch = make_jigsaw_batch(raws, *perms, *geom, spec.perms_per_image,
                                          train_mode, rng);
            break;
        }
        case Task::RelPatchLoc: {
            std::vector<Tensor> raws;
            for (int64_t i = 0; i < n_src; ++i)
                raws.push_back(data.image(order[size_t(start + i)]));
            out.batch = make_relpatchloc_batch(raws, *geom, train_mode, rng);
            break;
        }
    }
    return out;
}

Tensor regroup_rows(const Tensor& reps, int64_t group) {
    // (E*group, M) -> (E, group*M); storage order is already example-major.
    Tensor out = Tensor::matrix(reps.n() / group, group * reps.c());
    std::memcpy(out.data(), reps.data(), size_t(reps.numel()) * sizeof(float));
    return out;
}

struct BatchOutcome {
    float loss = 0.0f;
    int64_t correct = 0;   // or nn hits for exemplar
    int64_t examples = 0;
};

// Forward + loss (+ optional backward) through backbone and head.
BatchOutcome run_batch(Model& model, Sequential& head, const PretextSpec& spec,
                       const PretextBatch& batch, bool train) {
    BatchOutcome out;
    const Tensor& reps = model.forward(batch.inputs, train);
    const int64_t group = batch.patches_per_example;
    Tensor head_in = group > 1 ? regroup_rows(reps, group) : reps;
    const Tensor& logits = head.forward(group > 1 ? head_in : reps, train);
    out.examples = batch.examples();

    Tensor dlogits;
    if (spec.task == Task::Exemplar) {
        TripletResult tr = triplet_loss(logits, batch.targets, spec.triplet_margin, train);
        out.loss = tr.loss;
        out.correct = int64_t(std::lround(double(tr.accuracy) * double(out.examples)));
        if (train) dlogits = std::move(tr.dembeddings);
    } else {
        XentResult xr = softmax_xent(logits, batch.targets);
        out.loss = xr.loss;
        out.correct = xr.correct;
        if (train) dlogits = std::move(xr.dlogits);
    }

    if (train) {
        if (!std::isfinite(out.loss))
            throw ComputeError("pretext training diverged: non-finite loss");
        Tensor d_head_in = head.backward(dlogits);
        if (group > 1) {
            Tensor d_reps = Tensor::matrix(reps.n(), reps.c());
            std::memcpy(d_reps.data(), d_head_in.data(),
                        size_t(d_head_in.numel()) * sizeof(float));
            model.backward(d_reps);
        } else {
            model.backward(d_head_in);
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_trainer_state(const std::string& dir, Sequential& head, const SgdMomentum& opt,
                        int epoch, int64_t step) {
    fs::create_directories(dir);
    const std::string tmp = dir + "/trainer_state.bin.tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        require(f.good(), "cannot write trainer state in " + dir);
        const char magic[] = "ssrltrainer v1\n";
        f.write(magic, sizeof(magic) - 1);
        int64_t e = epoch;
        f.write(reinterpret_cast<const char*>(&e), sizeof(e));
        f.write(reinterpret_cast<const char*>(&step), sizeof(step));
        std::vector<ParamRef> hp;
        head.collect_params("head", hp);
        for (const auto& p : hp) write_named_blob(f, p.name, p.value, p.size);
        opt.save(f);
    }
    fs::rename(tmp, dir + "/trainer_state.bin");
}

TrainerState load_trainer_state(const std::string& dir, Sequential* head, SgdMomentum* opt) {
    TrainerState st;
    std::ifstream f(dir + "/trainer_state.bin", std::ios::binary);
    if (!f.good()) return st;
    char magic[15];
    f.read(magic, 15);
    require(std::memcmp(magic, "ssrltrainer v1\n", 15) == 0, "bad trainer state magic");
    int64_t e = 0;
    f.read(reinterpret_cast<char*>(&e), sizeof(e));
    f.read(reinterpret_cast<char*>(&st.step), sizeof(st.step));
    st.epoch = int(e);
    if (head) {
        std::vector<ParamRef> hp;
        head->collect_params("head", hp);
        for (const auto& p : hp) read_named_blob(f, p.name, p.value, p.size);
    }
    if (opt) opt->load(f);
    st.found = true;
    return st;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

PretrainResult train_pretext(Model& model, Sequential& head, const Dataset& data,
                             const std::vector<int64_t>& train_idx,
                             const std::vector<int64_t>& val_idx, const PretrainConfig& cfg) {
    cfg.schedule.validate();
    require(!train_idx.empty(), "train_pretext: empty training set");
    const PretextSpec& spec = cfg.task;
    const int64_t side = model.spec().input_side;

    PermutationSet perms;
    PatchGeometry geom;
    if (task_uses_patches(spec.task)) {
        perms = PermutationSet::generate(spec.permset_seed, spec.permset_count);
        // Geometry scales with the dataset image side; the backbone for patch
        // tasks must be built at patch resolution by the caller.
        geom = PatchGeometry::scaled(data.items.empty() ? 255 : data.items[0].h);
        require(geom.patch_side == side,
                "patch task: model input_side must equal the scaled patch_side (" +
                    std::to_string(geom.patch_side) + ")");
    }

    const int64_t n_src = int64_t(train_idx.size());
    const int64_t src_per_step = sources_per_step(spec, cfg.schedule.batch_size);
    const int64_t steps_per_epoch = (n_src + src_per_step - 1) / src_per_step;

    // Optimizer over backbone + head.
    std::vector<ParamRef> all_params = model.params();
    head.collect_params("head", all_params);
    SgdMomentum opt(all_params, cfg.schedule.momentum);

    PretrainResult res;
    int start_epoch = 0;
    if (!cfg.out_dir.empty()) {
        TrainerState st = load_trainer_state(cfg.out_dir, &head, &opt);
        if (st.found) {
            LoadedModel lm = load_model(cfg.out_dir);
            require(lm.model->spec().id() == model.spec().id(),
                    "checkpoint/model spec mismatch in " + cfg.out_dir);
            auto src = lm.model->params();
            auto dst = model.params();
            for (size_t i = 0; i < src.size(); ++i)
                std::memcpy(dst[i].value, src[i].value, size_t(src[i].size) * sizeof(float));
            auto s_state = lm.model->state();
            auto d_state = model.state();
            for (size_t i = 0; i < s_state.size(); ++i)
                std::memcpy(d_state[i].value, s_state[i].value,
                            size_t(s_state[i].size) * sizeof(float));
            start_epoch = st.epoch;
            res.steps = st.step;
        }
    }

    for (int epoch = start_epoch; epoch < cfg.schedule.total_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        Rng order_rng = Rng(cfg.seed).derive(0xE90C, uint64_t(epoch));
        std::vector<int64_t> order = train_idx;
        order_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t correct = 0, seen = 0;
        float epoch_lr = lr_at(int64_t(epoch) * steps_per_epoch, steps_per_epoch, cfg.schedule);

        for (int64_t start = 0, step_in_epoch = 0; start < n_src;
             start += src_per_step, ++step_in_epoch) {
            const int64_t take = std::min(src_per_step, n_src - start);
            if (spec.task == Task::Exemplar && take < 2) break;  // triplet needs two ids
            Rng batch_rng = Rng(cfg.seed).derive(0xBA7C, uint64_t(epoch), uint64_t(step_in_epoch));
            StepBatch sb = assemble_batch(spec, data, order, start, take, side, true,
                                          task_uses_patches(spec.task) ? &perms : nullptr,
                                          task_uses_patches(spec.task) ? &geom : nullptr,
                                          batch_rng);
            const int64_t gstep = int64_t(epoch) * steps_per_epoch + step_in_epoch;
            const float lr = lr_at(gstep, steps_per_epoch, cfg.schedule);
            BatchOutcome oc = run_batch(model, head, spec, sb.batch, true);
            opt.step(lr, cfg.schedule.weight_decay);
            loss_sum += double(oc.loss) * double(oc.examples);
            correct += oc.correct;
            seen += oc.examples;
            ++res.steps;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = epoch_lr;
        rec.train_loss = float(loss_sum / double(std::max<int64_t>(1, seen)));
        rec.train_metric = float(double(correct) / double(std::max<int64_t>(1, seen)));
        rec.val_metric = val_idx.empty()
                             ? 0.0f
                             : pretext_metric(model, head, spec, data, val_idx,
                                              cfg.seed ^ 0x5a5a, cfg.val_cap);
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.trace.push_back(rec);
        res.final_val_metric = rec.val_metric;

        if (!cfg.out_dir.empty()) {
            save_model(cfg.out_dir, model, task_to_string(spec.task), res.steps);
            save_trainer_state(cfg.out_dir, head, opt, epoch + 1, res.steps);
            std::ofstream mf(cfg.out_dir + "/metrics.jsonl", std::ios::app);
            json j{{"epoch", rec.epoch},
                   {"lr", rec.lr},
                   {"train_metric", rec.train_metric},
                   {"val_metric", rec.val_metric},
                   {"wall_seconds", rec.wall_seconds}};
            mf << j.dump() << "\n";
        }
    }
    return res;
}

float pretext_metric(Model& model, Sequential& head, const PretextSpec& spec,
                     const Dataset& data, const std::vector<int64_t>& indices, uint64_t seed,
                     int64_t cap) {
    require(!indices.empty(), "pretext_metric: empty evaluation set");
    std::vector<int64_t> order = indices;
    if (cap > 0 && int64_t(order.size()) > cap) order.resize(size_t(cap));

    PermutationSet perms;
    PatchGeometry geom;
    if (task_uses_patches(spec.task)) {
        perms = PermutationSet::generate(spec.permset_seed, spec.permset_count);
        geom = PatchGeometry::scaled(data.items.empty() ? 255 : data.items[0].h);
    }
    const int64_t side = model.spec().input_side;
    int64_t chunk = 64;
    if (spec.task == Task::Rotation || spec.task == Task::Exemplar) chunk = 16;
    if (spec.task == Task::Jigsaw) chunk = 4;

    int64_t correct = 0, seen = 0;
    for (int64_t start = 0; start < int64_t(order.size()); start += chunk) {
        const int64_t take = std::min(chunk, int64_t(order.size()) - start);
        if (spec.task == Task::Exemplar && take < 2) break;  // triplet needs two ids
        Rng rng = Rng(seed).derive(0xE7A1, uint64_t(start));
        StepBatch sb = assemble_batch(spec, data, order, start, take, side, false,
                                      task_uses_patches(spec.task) ? &perms : nullptr,
                                      task_uses_patches(spec.task) ? &geom : nullptr, rng);
        BatchOutcome oc = run_batch(model, head, spec, sb.batch, false);
        correct += oc.correct;
        seen += oc.examples;
    }
    return float(double(correct) / double(std::max<int64_t>(1, seen)));
}

}  // namespace ssrl
