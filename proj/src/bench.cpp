#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "ssrl/bench.hpp"
#include "ssrl/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ssrl {

// ---------------------------------------------------------------------------
// Records and journal
// ---------------------------------------------------------------------------

namespace {

std::string format_fraction(double f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", f);
    return buf;
}

}  // namespace

std::string ExperimentRecord::key() const {
    std::ostringstream os;
    os << model_id << "|" << task << "|" << probe << "|" << dataset << "|"
       << format_fraction(fraction) << "|" << tap << "|" << seed;
    return os.str();
}

std::string ExperimentRecord::to_json_line() const {
    json j{{"family", family},
           {"k", k},
           {"final_relu", final_relu},
           {"rep_size", rep_size},
           {"model_id", model_id},
           {"task", task},
           {"probe", probe},
           {"dataset", dataset},
           {"fraction", fraction},
           {"tap", tap},
           {"seed", seed},
           {"pretext_metric", pretext_metric},
           {"top1", top1},
           {"top5", top5},
           {"wall_seconds", wall_seconds},
           {"version", version}};
    if (!curve.empty()) j["curve"] = curve;
    return j.dump();
}

ExperimentRecord ExperimentRecord::from_json_line(const std::string& line) {
    json j = json::parse(line);
    ExperimentRecord r;
    r.family = j.at("family").get<std::string>();
    r.k = j.at("k").get<int>();
    r.final_relu = j.at("final_relu").get<bool>();
    r.rep_size = j.at("rep_size").get<int>();
    r.model_id = j.at("model_id").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.probe = j.at("probe").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.fraction = j.at("fraction").get<double>();
    r.tap = j.at("tap").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.pretext_metric = j.at("pretext_metric").get<double>();
    r.top1 = j.at("top1").get<double>();
    r.top5 = j.at("top5").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.version = j.at("version").get<std::string>();
    if (j.contains("curve")) r.curve = j.at("curve").get<std::vector<float>>();
    return r;
}

void journal_append(const std::string& path, const ExperimentRecord& rec) {
    const std::string line = rec.to_json_line() + "\n";
    int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    require(fd >= 0, "cannot open journal for append: " + path);
    ::flock(fd, LOCK_EX);
    ssize_t n = ::write(fd, line.data(), line.size());
    ::flock(fd, LOCK_UN);
    ::close(fd);
    require(n == ssize_t(line.size()), "short write to journal: " + path);
}

std::vector<ExperimentRecord> journal_read(const std::string& path) {
    std::vector<ExperimentRecord> out;
    std::ifstream f(path);
    if (!f.good()) return out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(ExperimentRecord::from_json_line(line));
        } catch (const std::exception&) {
            // torn trailing line from an interrupted writer
            break;
        }
    }
    return out;
}

void journal_compact(const std::string& path) {
    std::vector<ExperimentRecord> recs = journal_read(path);
    std::map<std::string, size_t> last;
    for (size_t i = 0; i < recs.size(); ++i) last[recs[i].key()] = i;
    std::vector<size_t> keep;
    for (const auto& [k, i] : last) keep.push_back(i);
    std::sort(keep.begin(), keep.end());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        require(f.good(), "cannot write compacted journal: " + path);
        for (size_t i : keep) f << recs[i].to_json_line() << "\n";
    }
    fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// GridConfig JSON
// ---------------------------------------------------------------------------

namespace {

json schedule_to_json(const TrainSchedule& s) {
    return json{{"base_lr", s.base_lr},
                {"momentum", s.momentum},
                {"total_epochs", s.total_epochs},
                {"decay_epochs", s.decay_epochs},
                {"decay_factor", s.decay_factor},
                {"warmup_epochs", s.warmup_epochs},
                {"batch_size", s.batch_size},
                {"reference_batch", s.reference_batch},
                {"weight_decay", s.weight_decay}};
}

TrainSchedule schedule_from_json(const json& j) {
    TrainSchedule s;
    if (j.contains("base_lr")) s.base_lr = j["base_lr"].get<float>();
    if (j.contains("momentum")) s.momentum = j["momentum"].get<float>();
    if (j.contains("total_epochs")) s.total_epochs = j["total_epochs"].get<int>();
    if (j.contains("decay_epochs")) s.decay_epochs = j["decay_epochs"].get<std::vector<int>>();
    if (j.contains("decay_factor")) s.decay_factor = j["decay_factor"].get<float>();
    if (j.contains("warmup_epochs")) s.warmup_epochs = j["warmup_epochs"].get<int>();
    if (j.contains("batch_size")) s.batch_size = j["batch_size"].get<int>();
    if (j.contains("reference_batch")) s.reference_batch = j["reference_batch"].get<int>();
    if (j.contains("weight_decay")) s.weight_decay = j["weight_decay"].get<float>();
    return s;
}

json pretext_to_json(const PretextSpec& p) {
    return json{{"rotation_count", p.rotation_count},
                {"examples_per_image", p.examples_per_image},
                {"triplet_margin", p.triplet_margin},
                {"embed_dim", p.embed_dim},
                {"perms_per_image", p.perms_per_image},
                {"permset_count", p.permset_count},
                {"permset_seed", p.permset_seed},
                {"head_hidden", p.head_hidden},
                {"augment",
                 json{{"area_lo", p.augment.area_lo},
                      {"area_hi", p.augment.area_hi},
                      {"flip_prob", p.augment.flip_prob},
                      {"jitter", p.augment.jitter}}}};
}

PretextSpec pretext_from_json(const json& j) {
    PretextSpec p;
    if (j.contains("rotation_count")) p.rotation_count = j["rotation_count"].get<int>();
    if (j.contains("examples_per_image"))
        p.examples_per_image = j["examples_per_image"].get<int>();
    if (j.contains("triplet_margin")) p.triplet_margin = j["triplet_margin"].get<float>();
    if (j.contains("embed_dim")) p.embed_dim = j["embed_dim"].get<int>();
    if (j.contains("perms_per_image")) p.perms_per_image = j["perms_per_image"].get<int>();
    if (j.contains("permset_count")) p.permset_count = j["permset_count"].get<int>();
    if (j.contains("permset_seed")) p.permset_seed = j["permset_seed"].get<uint64_t>();
    if (j.contains("head_hidden")) p.head_hidden = j["head_hidden"].get<int>();
    if (j.contains("augment")) {
        const json& a = j["augment"];
        if (a.contains("area_lo")) p.augment.area_lo = a["area_lo"].get<float>();
        if (a.contains("area_hi")) p.augment.area_hi = a["area_hi"].get<float>();
        if (a.contains("flip_prob")) p.augment.flip_prob = a["flip_prob"].get<float>();
        if (a.contains("jitter")) p.augment.jitter = a["jitter"].get<float>();
    }
    return p;
}

json probe_params_to_json(const ProbeSpec& p) {
    return json{{"seed", p.seed},
                {"convex",
                 json{{"max_updates", p.convex.max_updates},
                      {"lambda_numerator", p.convex.lambda_numerator},
                      {"grad_tol", p.convex.grad_tol}}},
                {"sgd",
                 json{{"batch", p.sgd.batch},
                      {"lr", p.sgd.lr},
                      {"first_decay_epoch", p.sgd.first_decay_epoch},
                      {"extra_epochs", p.sgd.extra_epochs},
                      {"second_decay_after", p.sgd.second_decay_after},
                      {"decay_factor", p.sgd.decay_factor},
                      {"momentum", p.sgd.momentum},
                      {"reference_batch", p.sgd.reference_batch},
                      {"augment", p.sgd.augment}}},
                {"mlp",
                 json{{"hidden", p.mlp.hidden},
                      {"dropout", p.mlp.dropout},
                      {"epochs", p.mlp.epochs},
                      {"batch", p.mlp.batch},
                      {"lr", p.mlp.lr},
                      {"decay_epochs", p.mlp.decay_epochs},
                      {"decay_factor", p.mlp.decay_factor},
                      {"momentum", p.mlp.momentum},
                      {"lambda_numerator", p.mlp.lambda_numerator}}}};
}

ProbeSpec probe_params_from_json(const json& j) {
    ProbeSpec p;
    if (j.contains("seed")) p.seed = j["seed"].get<uint64_t>();
    if (j.contains("convex")) {
        const json& c = j["convex"];
        if (c.contains("max_updates")) p.convex.max_updates = c["max_updates"].get<int>();
        if (c.contains("lambda_numerator"))
            p.convex.lambda_numerator = c["lambda_numerator"].get<double>();
        if (c.contains("grad_tol")) p.convex.grad_tol = c["grad_tol"].get<double>();
    }
    if (j.contains("sgd")) {
        const json& c = j["sgd"];
        if (c.contains("batch")) p.sgd.batch = c["batch"].get<int>();
        if (c.contains("lr")) p.sgd.lr = c["lr"].get<float>();
        if (c.contains("first_decay_epoch"))
            p.sgd.first_decay_epoch = c["first_decay_epoch"].get<int>();
        if (c.contains("extra_epochs")) p.sgd.extra_epochs = c["extra_epochs"].get<int>();
        if (c.contains("second_decay_after"))
            p.sgd.second_decay_after = c["second_decay_after"].get<int>();
        if (c.contains("decay_factor")) p.sgd.decay_factor = c["decay_factor"].get<float>();
        if (c.contains("momentum")) p.sgd.momentum = c["momentum"].get<float>();
        if (c.contains("reference_batch"))
            p.sgd.reference_batch = c["reference_batch"].get<int>();
        if (c.contains("augment")) p.sgd.augment = c["augment"].get<bool>();
    }
    if (j.contains("mlp")) {
        const json& c = j["mlp"];
        if (c.contains("hidden")) p.mlp.hidden = c["hidden"].get<int>();
        if (c.contains("dropout")) p.mlp.dropout = c["dropout"].get<float>();
        if (c.contains("epochs")) p.mlp.epochs = c["epochs"].get<int>();
        if (c.contains("batch")) p.mlp.batch = c["batch"].get<int>();
        if (c.contains("lr")) p.mlp.lr = c["lr"].get<float>();
        if (c.contains("decay_epochs"))
            p.mlp.decay_epochs = c["decay_epochs"].get<std::vector<int>>();
        if (c.contains("decay_factor")) p.mlp.decay_factor = c["decay_factor"].get<float>();
        if (c.contains("momentum")) p.mlp.momentum = c["momentum"].get<float>();
        if (c.contains("lambda_numerator"))
            p.mlp.lambda_numerator = c["lambda_numerator"].get<double>();
    }
    return p;
}

}  // namespace

std::string GridConfig::to_json() const {
    json jm = json::array();
    for (const auto& m : models)
        jm.push_back(json{{"family", m.family},
                          {"k", m.k},
                          {"final_relu", m.final_relu},
                          {"rep_size", m.rep_size}});
    json js = json::array();
    for (const auto& s : skips)
        js.push_back(json{{"family", s.family}, {"k", s.k}, {"task", s.task}});
    json j{{"models", jm},
           {"tasks", tasks},
           {"probes", probes},
           {"fractions", fractions},
           {"taps", taps},
           {"seeds", seeds},
           {"dataset",
            json{{"name", dataset_name},
                 {"root", dataset_root},
                 {"input_side", input_side},
                 {"holdout_size", holdout_size},
                 {"split_seed", split_seed}}},
           {"schedule", schedule_to_json(schedule)},
           {"pretext", pretext_to_json(pretext)},
           {"probe_params", probe_params_to_json(probe_params)},
           {"val_cap", val_cap},
           {"skips", js},
           {"out_dir", out_dir},
           {"workers", workers}};
    return j.dump(2);
}

GridConfig GridConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    GridConfig c;
    for (const auto& m : j.at("models")) {
        GridModel gm;
        gm.family = m.at("family").get<std::string>();
        gm.k = m.at("k").get<int>();
        if (m.contains("final_relu")) gm.final_relu = m["final_relu"].get<bool>();
        if (m.contains("rep_size")) gm.rep_size = m["rep_size"].get<int>();
        c.models.push_back(gm);
    }
    c.tasks = j.at("tasks").get<std::vector<std::string>>();
    c.probes = j.at("probes").get<std::vector<std::string>>();
    if (j.contains("fractions")) c.fractions = j["fractions"].get<std::vector<double>>();
    if (j.contains("taps")) c.taps = j["taps"].get<std::vector<std::string>>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<uint64_t>>();
    const json& d = j.at("dataset");
    c.dataset_name = d.at("name").get<std::string>();
    c.dataset_root = d.at("root").get<std::string>();
    c.input_side = d.at("input_side").get<int>();
    if (d.contains("holdout_size")) c.holdout_size = d["holdout_size"].get<int64_t>();
    if (d.contains("split_seed")) c.split_seed = d["split_seed"].get<uint64_t>();
    if (j.contains("schedule")) c.schedule = schedule_from_json(j["schedule"]);
    if (j.contains("pretext")) c.pretext = pretext_from_json(j["pretext"]);
    if (j.contains("probe_params")) c.probe_params = probe_params_from_json(j["probe_params"]);
    if (j.contains("val_cap")) c.val_cap = j["val_cap"].get<int64_t>();
    if (j.contains("skips"))
        for (const auto& s : j["skips"]) {
            GridSkip gs;
            gs.family = s.at("family").get<std::string>();
            gs.k = s.at("k").get<int>();
            if (s.contains("task")) gs.task = s["task"].get<std::string>();
            c.skips.push_back(gs);
        }
    c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("workers")) c.workers = j["workers"].get<int>();
    return c;
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

namespace {

struct GridData {
    Dataset train_ds;
    Dataset val_ds;
    bool use_val = false;
    std::vector<int64_t> pretrain_idx;
    std::vector<int64_t> probe_train_idx;
    std::vector<int64_t> eval_idx;
    const Dataset& eval_ds() const { return use_val ? val_ds : train_ds; }
};

GridData prepare_data(const GridConfig& cfg) {
    GridData gd;
    DatasetSpec dspec;
    dspec.name = cfg.dataset_name;
    dspec.root = cfg.dataset_root;
    gd.train_ds = load_dataset(dspec, "train");
    if (cfg.holdout_size > 0) {
        const std::string split_path = cfg.out_dir + "/holdout_split.txt";
        SplitIndex holdout;
        if (fs::exists(split_path)) {
            holdout = SplitIndex::load(split_path);
        } else {
            HoldoutSplit hs =
                make_holdout_split(gd.train_ds.size(), cfg.holdout_size, cfg.split_seed);
            holdout = hs.holdout;
            fs::create_directories(cfg.out_dir);
            holdout.save(split_path);
        }
        std::vector<bool> held(size_t(gd.train_ds.size()), false);
        for (int64_t i : holdout.indices) held[size_t(i)] = true;
        for (int64_t i = 0; i < gd.train_ds.size(); ++i)
            if (!held[size_t(i)]) gd.pretrain_idx.push_back(i);
        gd.probe_train_idx = gd.pretrain_idx;
        gd.eval_idx = holdout.indices;
    } else {
        gd.use_val = true;
        gd.val_ds = load_dataset(dspec, "val");
        gd.pretrain_idx.resize(size_t(gd.train_ds.size()));
        std::iota(gd.pretrain_idx.begin(), gd.pretrain_idx.end(), 0);
        gd.probe_train_idx = gd.pretrain_idx;
        gd.eval_idx.resize(size_t(gd.val_ds.size()));
        std::iota(gd.eval_idx.begin(), gd.eval_idx.end(), 0);
    }
    if (!gd.use_val) {
        // probe training rows and evaluation rows must never intersect
        std::set<int64_t> eval_set(gd.eval_idx.begin(), gd.eval_idx.end());
        for (int64_t i : gd.probe_train_idx)
            require(!eval_set.count(i), "probe train/eval split overlap at index " +
                                            std::to_string(i));
    }
    return gd;
}

struct Cell {
    GridModel model;
    std::string task;
    uint64_t seed;
};

}  // namespace

GridResult run_grid(const GridConfig& cfg) {
    require(!cfg.out_dir.empty(), "grid: out_dir required");
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream cf(cfg.out_dir + "/grid_config.json");
        cf << cfg.to_json() << "\n";
    }
    GridData gd = prepare_data(cfg);
    const std::string journal_path = cfg.out_dir + "/records.jsonl";

    std::set<std::string> existing;
    for (const auto& r : journal_read(journal_path)) existing.insert(r.key());

    std::vector<Cell> cells;
    int skipped = 0;
    for (const auto& m : cfg.models)
        for (const auto& task : cfg.tasks) {
            bool skip = false;
            for (const auto& s : cfg.skips)
                skip |= s.family == m.family && s.k == m.k &&
                        (s.task.empty() || s.task == task);
            if (skip) {
                ++skipped;
                continue;
            }
            for (uint64_t seed : cfg.seeds) cells.push_back({m, task, seed});
        }

    GridResult result;
    result.skipped_cells = skipped;
    std::mutex mtx;
    std::atomic<size_t> next_cell{0};

    auto worker = [&]() {
        while (true) {
            size_t ci = next_cell.fetch_add(1);
            if (ci >= cells.size()) break;
            const Cell& cell = cells[ci];
            try {
                const bool is_patch_task =
                    cell.task != "none" && task_uses_patches(task_from_string(cell.task));
                PatchGeometry geom = PatchGeometry::scaled(cfg.input_side);
                ModelSpec spec;
                spec.family = family_from_string(cell.model.family);
                spec.widening_k = cell.model.k;
                spec.final_relu = cell.model.final_relu;
                spec.rep_size = cell.model.rep_size;
                spec.input_side = is_patch_task ? int(geom.patch_side) : cfg.input_side;

                Model model(spec, Rng(cell.seed).derive(0x90DE1).state());
                double pretext_val = 0.0;
                std::unique_ptr<Sequential> head;

                if (cell.task != "none") {
                    PretextSpec pspec = cfg.pretext;
                    pspec.task = task_from_string(cell.task);
                    pspec.num_classes = gd.train_ds.num_classes();
                    head = build_task_head(pspec, representation_dim(spec),
                                           Rng(cell.seed).derive(0x4EAD).state());
                    const std::string ckpt = cfg.out_dir + "/ckpt/" + spec.id() + "_" +
                                             cell.task + "_seed" + std::to_string(cell.seed);
                    TrainerState prior = load_trainer_state(ckpt, nullptr, nullptr);
                    const bool needs_training =
                        !prior.found || prior.epoch < cfg.schedule.total_epochs;

                    PretrainConfig tcfg;
                    tcfg.task = pspec;
                    tcfg.schedule = cfg.schedule;
                    tcfg.seed = cell.seed;
                    tcfg.out_dir = ckpt;
                    tcfg.val_cap = cfg.val_cap;
                    train_pretext(model, *head, gd.train_ds, gd.pretrain_idx, gd.eval_idx,
                                  tcfg);
                    if (needs_training) {
                        std::lock_guard<std::mutex> lk(mtx);
                        ++result.trainings;
                    }
                    pretext_val = pretext_metric(model, *head, pspec, gd.eval_ds(), gd.eval_idx,
                                                 cell.seed ^ 0x5a5a, cfg.val_cap);
                }

                // Feature extraction per tap, reused across probes/fractions.
                std::map<std::string, std::pair<RepresentationMatrix, RepresentationMatrix>>
                    feats;
                for (const auto& tap : cfg.taps) {
                    RepresentationMatrix tr = extract_features(
                        model, tap, gd.train_ds, gd.probe_train_idx, is_patch_task, "train");
                    tr.model_id = spec.id();
                    RepresentationMatrix ev = extract_features(model, tap, gd.eval_ds(),
                                                               gd.eval_idx, is_patch_task,
                                                               "eval");
                    ev.model_id = spec.id();
                    feats.emplace(tap, std::make_pair(std::move(tr), std::move(ev)));
                }

                for (const auto& probe_name : cfg.probes)
                    for (const auto& tap : cfg.taps)
                        for (double fraction : cfg.fractions) {
                            ExperimentRecord rec;
                            rec.family = cell.model.family;
                            rec.k = cell.model.k;
                            rec.final_relu = cell.model.final_relu;
                            rec.rep_size = cell.model.rep_size;
                            rec.model_id = spec.id();
                            rec.task = cell.task;
                            rec.probe = probe_name;
                            rec.dataset = cfg.dataset_name;
                            rec.fraction = fraction;
                            rec.tap = tap;
                            rec.seed = cell.seed;
                            {
                                std::lock_guard<std::mutex> lk(mtx);
                                if (existing.count(rec.key())) continue;
                            }
                            auto t0 = std::chrono::steady_clock::now();
                            ProbeSpec pp = cfg.probe_params;
                            pp.kind = probe_kind_from_string(probe_name);
                            pp.seed = cell.seed;
                            const auto& [tr, ev] = feats.at(tap);
                            RepresentationMatrix sub =
                                fraction >= 1.0
                                    ? tr
                                    : tr.select(stratified_subsample(tr.y, fraction,
                                                                     cell.seed ^ 0xF7AC));
                            sub.fraction = float(fraction);
                            ProbeOutcome oc =
                                run_probe(sub, ev, gd.train_ds.num_classes(), pp);
                            rec.pretext_metric = pretext_val;
                            rec.top1 = oc.top1;
                            rec.top5 = oc.top5;
                            rec.curve = oc.curve;
                            rec.wall_seconds = std::chrono::duration<double>(
                                                   std::chrono::steady_clock::now() - t0)
                                                   .count();
                            rec.version = kVersion;
                            {
                                std::lock_guard<std::mutex> lk(mtx);
                                journal_append(journal_path, rec);
                                existing.insert(rec.key());
                            }
                        }
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> lk(mtx);
                ++result.failed_cells;
                std::cerr << "grid cell failed (" << cell.model.family << " k" << cell.model.k
                          << " " << cell.task << " seed " << cell.seed << "): " << ex.what()
                          << "\n";
            }
        }
    };

    const int nworkers = std::max(1, cfg.workers);
    if (nworkers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nworkers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    result.records = journal_read(journal_path);
    return result;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    if (n != b.size() || n < 2) return std::nullopt;
    auto ranks = [](const std::vector<double>& v) {
        std::vector<size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        size_t i = 0;
        while (i < idx.size()) {
            size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            double avg = 0.5 * double(i + j) + 1.0;  // average rank of the tie group
            for (size_t t = i; t <= j; ++t) r[idx[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= double(n);
    mb /= double(n);
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0) return std::nullopt;
    return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Emitters
// ---------------------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string row_label(const ExperimentRecord& r) {
    std::string s = r.family;
    if (!r.final_relu) s += "(-)";
    if (r.rep_size > 0) s += "#rep" + std::to_string(r.rep_size);
    return s;
}

int task_order(const std::string& t) {
    const std::vector<std::string> order = {"rotation", "exemplar", "relpatchloc",
                                            "jigsaw", "supervised", "none"};
    for (size_t i = 0; i < order.size(); ++i)
        if (order[i] == t) return int(i);
    return int(order.size());
}

// Keep the headline protocol slice: pre-logits, full data, convex probe when
// present.
std::vector<ExperimentRecord> table_slice(const std::vector<ExperimentRecord>& records,
                                          bool tap_filter = true) {
    bool has_convex = false;
    for (const auto& r : records) has_convex |= r.probe == "convex_linear";
    std::vector<ExperimentRecord> out;
    for (const auto& r : records) {
        if (tap_filter && r.tap != "pre_logits") continue;
        if (r.fraction < 1.0) continue;
        if (has_convex && r.probe != "convex_linear") continue;
        out.push_back(r);
    }
    return out;
}

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return buf;
}

std::string svg_header(int w, int h) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
       << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    return os.str();
}

const char* kPalette[8] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                           "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

// Minimal multi-series line plot; series are (label, points(x, y)).
std::string svg_lines(const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series) {
    const int W = 640, H = 420, L = 60, B = 40, T = 20, R = 20;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& [label, pts] : series)
        for (const auto& [x, y] : pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) return svg_header(W, H) + "</svg>\n";
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - B - T); };
    std::ostringstream os;
    os << svg_header(W, H);
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\""
       << H - B << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    int si = 0;
    for (const auto& [label, pts] : series) {
        const char* color = kPalette[si % 8];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts) os << px(x) << "," << py(y) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 16 * (si + 1) << "\" fill=\""
           << color << "\" font-size=\"12\">" << label << "</text>\n";
        ++si;
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_scatter(const std::vector<std::tuple<double, double, int, int>>& pts) {
    // (x, y, color class, size class)
    const int W = 640, H = 420, L = 60, B = 40, T = 20, R = 20;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& [x, y, c, s] : pts) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    std::ostringstream os;
    os << svg_header(W, H);
    if (!pts.empty()) {
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
        auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
        auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - B - T); };
        for (const auto& [x, y, c, s] : pts)
            os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"" << 3 + 1.5 * s
               << "\" fill=\"" << kPalette[c % 8] << "\" fill-opacity=\"0.7\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace

EmitterOutput emit_main_table(const std::vector<ExperimentRecord>& records) {
    auto slice = table_slice(records);
    // (row, col) -> seeds' top1
    std::map<std::string, std::map<std::string, std::vector<double>>> cells;
    std::set<std::string> rows;
    std::map<std::string, std::pair<int, int>> col_sort;  // col -> (task order, k)
    for (const auto& r : slice) {
        std::string row = row_label(r);
        std::string col = r.task + ":" + std::to_string(r.k) + "x";
        cells[row][col].push_back(r.top1);
        rows.insert(row);
        col_sort[col] = {task_order(r.task), r.k};
    }
    std::vector<std::string> cols;
    for (const auto& [c, s] : col_sort) cols.push_back(c);
    std::sort(cols.begin(), cols.end(), [&](const std::string& a, const std::string& b) {
        return col_sort[a] < col_sort[b];
    });

    std::map<std::string, std::map<std::string, double>> value;
    for (const auto& [row, m] : cells)
        for (const auto& [col, v] : m) value[row][col] = median(v);

    // marks: per-column best (all maxima) and per-row best (all maxima)
    std::map<std::string, double> col_max;
    std::map<std::string, double> row_max;
    for (const auto& [row, m] : value)
        for (const auto& [col, v] : m) {
            if (!col_max.count(col) || v > col_max[col]) col_max[col] = v;
            if (!row_max.count(row) || v > row_max[row]) row_max[row] = v;
        }

    std::ostringstream data;
    data << "model";
    for (const auto& c : cols) data << "\t" << c;
    data << "\n";
    for (const auto& row : rows) {
        data << row;
        for (const auto& col : cols) {
            data << "\t";
            auto it = value[row].find(col);
            if (it == value[row].end()) {
                data << "-";
                continue;
            }
            data << fmt_pct(it->second);
            if (it->second == col_max[col]) data << "*";  // best in column
            if (it->second == row_max[row]) data << "^";  // best task for this model
        }
        data << "\n";
    }
    return {data.str(), ""};
}

EmitterOutput emit_pretext_vs_downstream(const std::vector<ExperimentRecord>& records) {
    auto slice = table_slice(records);
    // (family variant, k, task) -> medians
    std::map<std::tuple<std::string, int, std::string>, std::pair<std::vector<double>, std::vector<double>>>
        groups;
    for (const auto& r : slice) {
        if (r.task == "none") continue;
        auto& g = groups[{row_label(r), r.k, r.task}];
        g.first.push_back(r.pretext_metric);
        g.second.push_back(r.top1);
    }
    std::ostringstream data;
    data << "architecture\tk\ttask\tpretext_metric\ttop1\n";
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_arch;
    std::vector<double> all_x, all_y;
    std::vector<std::tuple<double, double, int, int>> pts;
    std::map<std::string, int> arch_color;
    for (const auto& [key, vals] : groups) {
        const auto& [arch, k, task] = key;
        double px = median(vals.first), py = median(vals.second);
        data << arch << "\t" << k << "\t" << task << "\t" << fmt_pct(px) << "\t" << fmt_pct(py)
             << "\n";
        per_arch[arch].first.push_back(px);
        per_arch[arch].second.push_back(py);
        all_x.push_back(px);
        all_y.push_back(py);
        if (!arch_color.count(arch)) arch_color[arch] = int(arch_color.size());
        pts.emplace_back(px, py, arch_color[arch], k);
    }
    data << "#correlations\n";
    for (const auto& [arch, v] : per_arch) {
        auto r = spearman(v.first, v.second);
        data << "#within\t" << arch << "\t";
        if (r)
            data << *r << "\n";
        else
            data << "absent\n";
    }
    {
        // across-architecture: pooled over all points; absent for a single
        // architecture
        data << "#across\t";
        auto r = per_arch.size() >= 2 ? spearman(all_x, all_y) : std::nullopt;
        if (r)
            data << *r << "\n";
        else
            data << "absent\n";
    }
    return {data.str(), svg_scatter(pts)};
}

EmitterOutput emit_layer_curves(const std::vector<ExperimentRecord>& records) {
    bool has_convex = false;
    for (const auto& r : records) has_convex |= r.probe == "convex_linear";
    std::map<std::tuple<std::string, int, std::string>, std::map<std::string, std::vector<double>>>
        groups;
    for (const auto& r : records) {
        if (r.fraction < 1.0) continue;
        if (has_convex && r.probe != "convex_linear") continue;
        groups[{row_label(r), r.k, r.task}][r.tap].push_back(r.top1);
    }
    const auto& tap_order = Model::tap_names();
    std::ostringstream data;
    data << "architecture\tk\ttask\ttap\ttop1\n";
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
    for (const auto& [key, taps] : groups) {
        const auto& [arch, k, task] = key;
        std::vector<std::pair<double, double>> line;
        for (size_t ti = 0; ti < tap_order.size(); ++ti) {
            auto it = taps.find(tap_order[ti]);
            if (it == taps.end()) continue;
            double v = median(it->second);
            data << arch << "\t" << k << "\t" << task << "\t" << tap_order[ti] << "\t"
                 << fmt_pct(v) << "\n";
            line.emplace_back(double(ti + 1), v);
        }
        if (!line.empty())
            series.emplace_back(arch + " k" + std::to_string(k) + " " + task, line);
    }
    return {data.str(), svg_lines(series)};
}

EmitterOutput emit_width_repsize_grid(const std::vector<ExperimentRecord>& records) {
    auto slice = table_slice(records);
    std::map<std::tuple<std::string, std::string, int, int>, std::vector<double>> cells;
    for (const auto& r : slice) {
        if (r.task == "none") continue;
        cells[{r.family, r.task, r.k, r.rep_size}].push_back(r.top1);
    }
    std::ostringstream data;
    data << "family\ttask\tk\trep_size\ttop1\n";
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
    std::map<std::string, std::vector<std::pair<double, double>>> by_rep;
    for (const auto& [key, v] : cells) {
        const auto& [family, task, k, rep] = key;
        double val = median(v);
        data << family << "\t" << task << "\t" << k << "\t" << rep << "\t" << fmt_pct(val)
             << "\n";
        by_rep["rep" + std::to_string(rep)].emplace_back(double(k), val);
    }
    for (auto& [label, pts] : by_rep) {
        std::sort(pts.begin(), pts.end());
        series.emplace_back(label, pts);
    }
    return {data.str(), svg_lines(series)};
}

EmitterOutput emit_schedule_curves(const std::vector<ExperimentRecord>& records) {
    // per (first decay variant) median curve across seeds
    std::map<std::tuple<std::string, std::string, size_t>, std::vector<const ExperimentRecord*>>
        groups;
    for (const auto& r : records) {
        if (r.probe != "sgd_linear" || r.curve.empty()) continue;
        groups[{r.model_id, r.task, r.curve.size()}].push_back(&r);
    }
    std::ostringstream data;
    data << "series\tepoch\tval_top1\n";
    std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
    for (const auto& [key, recs] : groups) {
        const auto& [model_id, task, len] = key;
        // curve length = first_decay + extra epochs
        std::string label = model_id + "|" + task + "|len" + std::to_string(len);
        std::vector<std::pair<double, double>> line;
        for (size_t e = 0; e < len; ++e) {
            std::vector<double> vals;
            for (const auto* r : recs) vals.push_back(double(r->curve[e]));
            double v = median(vals);
            data << label << "\t" << e << "\t" << fmt_pct(v) << "\n";
            line.emplace_back(double(e), v);
        }
        series.emplace_back(label, line);
    }
    return {data.str(), svg_lines(series)};
}

void write_report(const std::vector<ExperimentRecord>& records, const std::string& dir) {
    fs::create_directories(dir);
    auto put = [&](const std::string& name, const EmitterOutput& out) {
        std::ofstream f(dir + "/" + name + ".tsv");
        f << out.data;
        if (!out.image.empty()) {
            std::ofstream s(dir + "/" + name + ".svg");
            s << out.image;
        }
    };
    put("main_table", emit_main_table(records));
    put("pretext_vs_downstream", emit_pretext_vs_downstream(records));
    put("layer_curves", emit_layer_curves(records));
    put("width_repsize", emit_width_repsize_grid(records));
    put("schedule_curves", emit_schedule_curves(records));
}

}  // namespace ssrl
