#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ssrl/bench.hpp"
#include "ssrl/synthdata.hpp"
#include "ssrl/version.hpp"

using namespace ssrl;
namespace fs = std::filesystem;

namespace {

ExperimentRecord rec(const std::string& family, int k, const std::string& task, double top1,
                     const std::string& tap = "pre_logits", uint64_t seed = 1,
                     double pretext = 0.5) {
    ExperimentRecord r;
    r.family = family;
    r.k = k;
    r.model_id = family + "_k" + std::to_string(k) + "_s32";
    r.task = task;
    r.probe = "convex_linear";
    r.dataset = "synth";
    r.tap = tap;
    r.seed = seed;
    r.pretext_metric = pretext;
    r.top1 = top1;
    r.top5 = std::min(1.0, top1 + 0.2);
    r.version = kVersion;
    return r;
}

}  // namespace

TEST_CASE("record json round trip is the identity") {
    ExperimentRecord r = rec("revnet50", 4, "rotation", 0.531);
    r.final_relu = false;
    r.rep_size = 128;
    r.fraction = 0.1;
    r.wall_seconds = 12.75;
    r.curve = {0.1f, 0.2f, 0.35f};
    ExperimentRecord back = ExperimentRecord::from_json_line(r.to_json_line());
    CHECK(back.key() == r.key());
    CHECK(back.family == r.family);
    CHECK(back.k == r.k);
    CHECK(back.final_relu == r.final_relu);
    CHECK(back.rep_size == r.rep_size);
    CHECK(back.fraction == doctest::Approx(r.fraction));
    CHECK(back.pretext_metric == doctest::Approx(r.pretext_metric));
    CHECK(back.top1 == doctest::Approx(r.top1));
    CHECK(back.top5 == doctest::Approx(r.top5));
    CHECK(back.wall_seconds == doctest::Approx(r.wall_seconds));
    CHECK(back.version == r.version);
    CHECK(back.curve == r.curve);
    CHECK(back.to_json_line() == r.to_json_line());
}

TEST_CASE("journal append, torn tail tolerance, compaction") {
    const std::string path = "tmp_journal.jsonl";
    fs::remove(path);
    journal_append(path, rec("resnet_v2", 1, "rotation", 0.4));
    journal_append(path, rec("resnet_v2", 2, "rotation", 0.5));
    auto recs = journal_read(path);
    REQUIRE(recs.size() == 2);

    {
        std::ofstream f(path, std::ios::app);
        f << "{\"family\": \"torn";  // interrupted writer
    }
    recs = journal_read(path);
    CHECK(recs.size() == 2);

    // duplicate key: compaction keeps the last
    ExperimentRecord dup = rec("resnet_v2", 1, "rotation", 0.45);
    journal_compact(path);  // first, drop the torn tail
    journal_append(path, dup);
    journal_compact(path);
    recs = journal_read(path);
    CHECK(recs.size() == 2);
    for (const auto& r : recs)
        if (r.k == 1) CHECK(r.top1 == doctest::Approx(0.45));
    fs::remove(path);
}

TEST_CASE("spearman correlation") {
    auto r1 = spearman({1, 2, 3, 4}, {10, 20, 30, 40});
    REQUIRE(r1.has_value());
    CHECK(*r1 == doctest::Approx(1.0));
    auto r2 = spearman({1, 2, 3, 4}, {4, 3, 2, 1});
    CHECK(*r2 == doctest::Approx(-1.0));
    CHECK(!spearman({1, 1, 1}, {1, 2, 3}).has_value());  // constant side
    CHECK(!spearman({1}, {2}).has_value());
    auto r3 = spearman({1, 2, 2, 3}, {1, 2, 2, 3});  // ties get average ranks
    CHECK(*r3 == doctest::Approx(1.0));
}

TEST_CASE("main table marks planted maxima and ties") {
    std::vector<ExperimentRecord> records;
    records.push_back(rec("resnet_v2", 4, "rotation", 0.50));
    records.push_back(rec("resnet_v2", 8, "rotation", 0.60));
    records.push_back(rec("revnet50", 4, "rotation", 0.70));  // column best 4x
    records.push_back(rec("revnet50", 8, "rotation", 0.70));  // tie: row best marks both
    records.push_back(rec("resnet_v2", 4, "jigsaw", 0.30));
    EmitterOutput out = emit_main_table(records);

    // revnet50 row: both 70.00 cells marked as row-best; both are column bests
    CHECK(out.data.find("70.00*^") != std::string::npos);
    // resnet_v2 8x rotation is that row's best and not a column best
    CHECK(out.data.find("60.00^") != std::string::npos);
    // resnet_v2 4x rotation: neither mark
    CHECK(out.data.find("50.00\t") != std::string::npos);

    // single record table: both marks on the one cell
    EmitterOutput single = emit_main_table({rec("vgg19_bn", 4, "rotation", 0.25)});
    CHECK(single.data.find("25.00*^") != std::string::npos);
}

TEST_CASE("pretext-vs-downstream emitter and correlations") {
    std::vector<ExperimentRecord> records;
    // downstream == pretext within one architecture -> within correlation 1.0
    records.push_back(rec("resnet_v2", 1, "rotation", 0.30, "pre_logits", 1, 0.30));
    records.push_back(rec("resnet_v2", 2, "rotation", 0.40, "pre_logits", 1, 0.40));
    records.push_back(rec("resnet_v2", 4, "rotation", 0.50, "pre_logits", 1, 0.50));
    EmitterOutput one = emit_pretext_vs_downstream(records);
    CHECK(one.data.find("#within\tresnet_v2\t1") != std::string::npos);
    CHECK(one.data.find("#across\tabsent") != std::string::npos);  // single architecture

    // planted anti-correlated architecture drags the pooled correlation down
    records.push_back(rec("vgg19_bn", 1, "rotation", 0.10, "pre_logits", 1, 0.80));
    records.push_back(rec("vgg19_bn", 2, "rotation", 0.05, "pre_logits", 1, 0.90));
    EmitterOutput two = emit_pretext_vs_downstream(records);
    CHECK(two.data.find("#across\tabsent") == std::string::npos);
    // extract the across value
    auto pos = two.data.find("#across\t");
    double across = std::stod(two.data.substr(pos + 8));
    CHECK(across < 1.0);
    CHECK(!two.image.empty());
}

TEST_CASE("layer curve and width grid emitters") {
    std::vector<ExperimentRecord> records;
    const char* taps[5] = {"block1", "block2", "block3", "block4", "pre_logits"};
    for (int i = 0; i < 5; ++i)
        records.push_back(rec("revnet50", 4, "rotation", 0.3 + 0.05 * i, taps[i]));
    EmitterOutput out = emit_layer_curves(records);
    // five data rows in depth order
    std::istringstream is(out.data);
    std::string line;
    std::getline(is, line);  // header
    std::vector<std::string> seen;
    while (std::getline(is, line)) {
        auto a = line.find('\t');
        auto b = line.find('\t', a + 1);
        auto c = line.find('\t', b + 1);
        auto d = line.find('\t', c + 1);
        seen.push_back(line.substr(c + 1, d - c - 1));
    }
    REQUIRE(seen.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(seen[size_t(i)] == taps[i]);

    std::vector<ExperimentRecord> wr;
    for (int k : {1, 2})
        for (int rep : {128, 512}) {
            ExperimentRecord r = rec("revnet50", k, "rotation", 0.1 * k + 0.0001 * rep);
            r.rep_size = rep;
            wr.push_back(r);
        }
    EmitterOutput wout = emit_width_repsize_grid(wr);
    int rows = 0;
    std::istringstream ws(wout.data);
    std::getline(ws, line);
    while (std::getline(ws, line)) ++rows;
    CHECK(rows == 4);
}

TEST_CASE("schedule curve emitter separates decay variants") {
    std::vector<ExperimentRecord> records;
    for (size_t len : {size_t(7), size_t(10), size_t(13)}) {
        ExperimentRecord r = rec("resnet_v2", 1, "rotation", 0.5);
        r.probe = "sgd_linear";
        for (size_t e = 0; e < len; ++e) r.curve.push_back(float(e) / float(len));
        records.push_back(r);
    }
    EmitterOutput out = emit_schedule_curves(records);
    CHECK(out.data.find("len7") != std::string::npos);
    CHECK(out.data.find("len10") != std::string::npos);
    CHECK(out.data.find("len13") != std::string::npos);
}

TEST_CASE("emitters are pure functions of the records") {
    std::vector<ExperimentRecord> records;
    records.push_back(rec("resnet_v2", 1, "rotation", 0.42));
    records.push_back(rec("revnet50", 2, "jigsaw", 0.37));
    EmitterOutput a = emit_main_table(records);
    EmitterOutput b = emit_main_table(records);
    CHECK(a.data == b.data);
    EmitterOutput c = emit_pretext_vs_downstream(records);
    EmitterOutput d = emit_pretext_vs_downstream(records);
    CHECK(c.data == d.data);
    CHECK(c.image == d.image);
}

TEST_CASE("micro grid runs, reruns idempotently, honors skips") {
    const std::string root = "tmp_grid_synth";
    const std::string out = "tmp_grid_out";
    fs::remove_all(root);
    fs::remove_all(out);
    generate_synth_dataset(root, 32, 6, 2, 21);

    GridConfig cfg;
    cfg.models = {{"resnet_v2", 1, true, 0}, {"vgg19_bn", 1, true, 0}};
    cfg.tasks = {"rotation", "none"};
    cfg.probes = {"convex_linear"};
    cfg.seeds = {1};
    cfg.dataset_name = "synth";
    cfg.dataset_root = root;
    cfg.input_side = 32;
    cfg.holdout_size = 12;
    cfg.split_seed = 3;
    cfg.schedule.total_epochs = 1;
    cfg.schedule.warmup_epochs = 0;
    cfg.schedule.decay_epochs = {};
    cfg.schedule.batch_size = 16;
    cfg.pretext.augment.area_lo = 0.6f;
    cfg.probe_params.convex.max_updates = 40;
    cfg.val_cap = 16;
    cfg.skips = {{"vgg19_bn", 1, "rotation"}};
    cfg.out_dir = out;

    // config file round trip mirrors field-for-field
    GridConfig parsed = GridConfig::from_json(cfg.to_json());
    CHECK(parsed.models.size() == 2);
    CHECK(parsed.tasks == cfg.tasks);
    CHECK(parsed.holdout_size == cfg.holdout_size);
    CHECK(parsed.schedule.batch_size == 16);
    CHECK(parsed.skips.size() == 1);

    GridResult first = run_grid(cfg);
    CHECK(first.failed_cells == 0);
    CHECK(first.trainings == 1);  // resnet rotation only; "none" and skip need none
    CHECK(first.skipped_cells == 1);
    // records: (resnet x {rotation, none} + vgg x {none}) x 1 probe x 1 tap
    CHECK(first.records.size() == 3);

    GridResult second = run_grid(cfg);
    CHECK(second.trainings == 0);  // completed grid retrains nothing
    CHECK(second.records.size() == 3);

    // journal round trip across the runs
    auto recs = journal_read(out + "/records.jsonl");
    REQUIRE(recs.size() == 3);
    std::set<std::string> keys;
    for (const auto& r : recs) {
        keys.insert(r.key());
        ExperimentRecord back = ExperimentRecord::from_json_line(r.to_json_line());
        CHECK(back.to_json_line() == r.to_json_line());
    }
    CHECK(keys.size() == 3);

    // report writes the data files
    write_report(recs, out + "/report");
    CHECK(fs::exists(out + "/report/main_table.tsv"));
    CHECK(fs::exists(out + "/report/pretext_vs_downstream.tsv"));
    CHECK(fs::exists(out + "/report/layer_curves.tsv"));
    CHECK(fs::exists(out + "/report/width_repsize.tsv"));
    CHECK(fs::exists(out + "/report/schedule_curves.tsv"));

    fs::remove_all(root);
    fs::remove_all(out);
}
