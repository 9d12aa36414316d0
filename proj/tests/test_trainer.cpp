#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ssrl/synthdata.hpp"
#include "ssrl/trainer.hpp"

using namespace ssrl;
namespace fs = std::filesystem;

namespace {

Dataset tiny_synth(const std::string& dir, int side, int per_class_train, int per_class_val) {
    fs::remove_all(dir);
    generate_synth_dataset(dir, side, per_class_train, per_class_val, 5);
    DatasetSpec spec;
    spec.root = dir;
    spec.name = "tiny";
    return load_dataset(spec, "train");
}

}  // namespace

TEST_CASE("lr_at reproduces the appendix schedule") {
    TrainSchedule s;  // defaults: base 0.1, epochs 35, decays {15,25}, warmup 5
    s.batch_size = 256;
    s.validate();
    const int64_t spe = 100;

    CHECK(lr_at(0, spe, s) == doctest::Approx(0.0f));                 // warmup origin
    CHECK(lr_at(10 * spe, spe, s) == doctest::Approx(0.1f));          // post-warmup plateau
    CHECK(lr_at(5 * spe, spe, s) == doctest::Approx(0.1f));           // warmup ends at peak
    CHECK(lr_at(5 * spe - 1, spe, s) ==
          doctest::Approx(0.1f * float(5 * spe - 1) / float(5 * spe)));  // continuous junction
    CHECK(lr_at(15 * spe, spe, s) == doctest::Approx(0.01f));         // first decay
    CHECK(lr_at(25 * spe, spe, s) == doctest::Approx(0.001f));        // second decay
    CHECK(lr_at(34 * spe, spe, s) == doctest::Approx(0.001f));

    TrainSchedule big = s;
    big.batch_size = 1024;
    CHECK(big.peak_lr() == doctest::Approx(0.4f));                    // 0.1 * 1024/256
    CHECK(lr_at(16 * spe, spe, big) == doctest::Approx(0.04f));       // 0.1*(1024/256)*0.1

    CHECK_THROWS_AS(lr_at(10, 0, s), UsageError);

    TrainSchedule bad = s;
    bad.decay_epochs = {25, 15};
    CHECK_THROWS_AS(bad.validate(), UsageError);
    TrainSchedule bad2 = s;
    bad2.warmup_epochs = 20;
    CHECK_THROWS_AS(bad2.validate(), UsageError);
}

TEST_CASE("lr_at piecewise structure") {
    TrainSchedule s;
    s.batch_size = 512;
    const int64_t spe = 50;
    float peak = s.peak_lr();
    CHECK(peak == doctest::Approx(0.2f));
    // linear during warmup
    for (int64_t step : {1, 57, 133, 249})
        CHECK(lr_at(step, spe, s) == doctest::Approx(peak * float(step) / float(5 * spe)));
    // constant between decays, exact powers after each decay
    CHECK(lr_at(14 * spe + 49, spe, s) == doctest::Approx(peak));
    CHECK(lr_at(20 * spe, spe, s) == doctest::Approx(peak * 0.1f));
    CHECK(lr_at(30 * spe, spe, s) == doctest::Approx(peak * 0.01f));
}

TEST_CASE("one momentum-free step is exactly -lr * grad") {
    // quadratic toy loss L = 0.5*||w - a||^2 -> grad = w - a
    std::vector<float> w{0.5f, -1.25f, 2.0f}, a{1.0f, 1.0f, 1.0f};
    std::vector<float> g(3), w0 = w;
    for (int i = 0; i < 3; ++i) g[size_t(i)] = w[size_t(i)] - a[size_t(i)];
    std::vector<ParamRef> params{{"w", w.data(), g.data(), 3, false}};
    SgdMomentum opt(params, 0.0f);
    const float lr = 0.03f;
    opt.step(lr, 0.0f);
    for (int i = 0; i < 3; ++i)
        CHECK(w[size_t(i)] == doctest::Approx(w0[size_t(i)] - lr * (w0[size_t(i)] - 1.0f)));
    // grads are zeroed after the step
    for (int i = 0; i < 3; ++i) CHECK(g[size_t(i)] == 0.0f);
}

TEST_CASE("heavy-ball momentum accumulates velocity") {
    std::vector<float> w{0.0f}, g{1.0f};
    std::vector<ParamRef> params{{"w", w.data(), g.data(), 1, false}};
    SgdMomentum opt(params, 0.9f);
    opt.step(1.0f, 0.0f);  // v=1, w=-1
    CHECK(w[0] == doctest::Approx(-1.0f));
    g[0] = 1.0f;
    opt.step(1.0f, 0.0f);  // v=1.9, w=-2.9
    CHECK(w[0] == doctest::Approx(-2.9f));
}

TEST_CASE("weight decay applies only to decay-flagged params") {
    std::vector<float> w{2.0f}, g{0.0f}, b{2.0f}, gb{0.0f};
    std::vector<ParamRef> params{{"w", w.data(), g.data(), 1, true},
                                 {"b", b.data(), gb.data(), 1, false}};
    SgdMomentum opt(params, 0.0f);
    opt.step(0.1f, 1e-1f);
    CHECK(w[0] == doctest::Approx(2.0f - 0.1f * 0.2f));
    CHECK(b[0] == doctest::Approx(2.0f));
}

TEST_CASE("rotation pretext training learns above chance on the desk set") {
    Dataset ds = tiny_synth("tmp_trainer_synth", 32, 12, 3);
    REQUIRE(ds.size() == 120);

    ModelSpec spec;
    spec.family = Family::ResNetV2;
    spec.widening_k = 1;
    spec.input_side = 32;
    Model model(spec, 1);

    PretextSpec task;
    task.task = Task::Rotation;
    task.augment.area_lo = 0.6f;  // gentle crops at this tiny scale
    task.augment.jitter = 0.2f;

    auto head = build_task_head(task, representation_dim(spec), 2);

    PretrainConfig cfg;
    cfg.task = task;
    cfg.schedule.total_epochs = 3;
    cfg.schedule.warmup_epochs = 1;
    cfg.schedule.decay_epochs = {2};
    cfg.schedule.batch_size = 32;
    cfg.seed = 3;

    std::vector<int64_t> train_idx, val_idx;
    for (int64_t i = 0; i < ds.size(); ++i)
        (i % 10 == 0 ? val_idx : train_idx).push_back(i);

    PretrainResult res = train_pretext(model, *head, ds, train_idx, val_idx, cfg);
    REQUIRE(res.trace.size() == 3);
    for (const auto& e : res.trace) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(e.wall_seconds > 0.0);
    }
    // chance is 0.25; even three short epochs clear it on the train metric
    CHECK(res.trace.back().train_metric > 0.25f);
    fs::remove_all("tmp_trainer_synth");
}

TEST_CASE("checkpoint resume reproduces the uninterrupted trajectory") {
    Dataset ds = tiny_synth("tmp_trainer_resume", 32, 6, 2);

    auto make_model = [&]() {
        ModelSpec spec;
        spec.family = Family::ResNetV2;
        spec.widening_k = 1;
        spec.input_side = 32;
        return Model(spec, 42);
    };
    PretextSpec task;
    task.task = Task::Rotation;
    task.augment.area_lo = 0.6f;

    std::vector<int64_t> train_idx, val_idx;
    for (int64_t i = 0; i < ds.size(); ++i) (i % 6 == 0 ? val_idx : train_idx).push_back(i);

    TrainSchedule sched;
    sched.total_epochs = 3;
    sched.warmup_epochs = 1;
    sched.decay_epochs = {2};
    sched.batch_size = 16;

    // uninterrupted run
    fs::remove_all("tmp_ckpt_a");
    Model m1 = make_model();
    auto h1 = build_task_head(task, 512, 7);
    PretrainConfig cfg1;
    cfg1.task = task;
    cfg1.schedule = sched;
    cfg1.seed = 11;
    cfg1.out_dir = "tmp_ckpt_a";
    PretrainResult full = train_pretext(m1, *h1, ds, train_idx, val_idx, cfg1);

    // interrupted at epoch 2, then resumed in a fresh process state
    fs::remove_all("tmp_ckpt_b");
    Model m2 = make_model();
    auto h2 = build_task_head(task, 512, 7);
    PretrainConfig cfg2 = cfg1;
    cfg2.out_dir = "tmp_ckpt_b";
    cfg2.schedule.total_epochs = 2;
    cfg2.schedule.decay_epochs = {};  // same prefix behaviour: no decay before epoch 2
    // run the exact same schedule but stop early: emulate by training 2 epochs
    // with an identical schedule object
    cfg2.schedule = sched;
    cfg2.schedule.total_epochs = 2;
    cfg2.schedule.decay_epochs = {};
    // decay at epoch 2 never fires within the first two epochs, so the
    // truncated schedule matches the full one step for step
    train_pretext(m2, *h2, ds, train_idx, val_idx, cfg2);

    Model m3 = make_model();
    auto h3 = build_task_head(task, 512, 7);
    PretrainConfig cfg3 = cfg1;
    cfg3.out_dir = "tmp_ckpt_b";
    PretrainResult resumed = train_pretext(m3, *h3, ds, train_idx, val_idx, cfg3);

    REQUIRE(full.trace.size() == 3);
    // the resumed run only executes the missing epoch
    REQUIRE(resumed.trace.size() == 1);
    CHECK(resumed.trace[0].epoch == 2);
    CHECK(std::abs(full.trace[2].train_loss - resumed.trace[0].train_loss) <= 1e-6f);
    CHECK(full.trace[2].train_metric == doctest::Approx(resumed.trace[0].train_metric));
    CHECK(full.trace[2].val_metric == doctest::Approx(resumed.trace[0].val_metric));

    // metrics.jsonl carries the five contract keys per epoch
    std::ifstream mf("tmp_ckpt_a/metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(mf, line)) {
        ++lines;
        CHECK(line.find("\"epoch\"") != std::string::npos);
        CHECK(line.find("\"lr\"") != std::string::npos);
        CHECK(line.find("\"train_metric\"") != std::string::npos);
        CHECK(line.find("\"val_metric\"") != std::string::npos);
        CHECK(line.find("\"wall_seconds\"") != std::string::npos);
    }
    CHECK(lines == 3);

    fs::remove_all("tmp_trainer_resume");
    fs::remove_all("tmp_ckpt_a");
    fs::remove_all("tmp_ckpt_b");
}

TEST_CASE("divergence aborts with an error") {
    Dataset ds = tiny_synth("tmp_trainer_diverge", 32, 4, 1);
    ModelSpec spec;
    spec.family = Family::ResNetV2;
    spec.widening_k = 1;
    spec.input_side = 32;
    Model model(spec, 1);
    PretextSpec task;
    task.task = Task::Rotation;
    auto head = build_task_head(task, 512, 2);
    PretrainConfig cfg;
    cfg.task = task;
    cfg.schedule.total_epochs = 4;
    cfg.schedule.warmup_epochs = 0;
    cfg.schedule.decay_epochs = {};
    cfg.schedule.base_lr = 1e7f;  // guaranteed blow-up
    cfg.schedule.batch_size = 16;
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < ds.size(); ++i) idx.push_back(i);
    CHECK_THROWS_AS(train_pretext(model, *head, ds, idx, {}, cfg), ComputeError);
    fs::remove_all("tmp_trainer_diverge");
}

TEST_CASE("pretext metric at chance for an untrained 4-way head") {
    Dataset ds = tiny_synth("tmp_trainer_chance", 32, 50, 2);
    ModelSpec spec;
    spec.family = Family::ResNetV2;
    spec.widening_k = 1;
    spec.input_side = 32;
    Model model(spec, 123);
    PretextSpec task;
    task.task = Task::Rotation;
    auto head = build_task_head(task, 512, 99);
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < ds.size(); ++i) idx.push_back(i);
    float acc = pretext_metric(model, *head, task, ds, idx, 1);
    // 500 source images -> 2000 rotation examples; binomial 4-sigma band
    CHECK(acc > 0.25 - 0.04);
    CHECK(acc < 0.25 + 0.04);
    fs::remove_all("tmp_trainer_chance");
}
