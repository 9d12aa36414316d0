#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ssrl/data.hpp"
#include "ssrl/probes.hpp"
#include "ssrl/trainer.hpp"

namespace ssrl {

// One (model, task, probe, dataset, fraction, tap, seed) result.
struct ExperimentRecord {
    std::string family;  // family string, e.g. "resnet_v2"
    int k = 4;
    bool final_relu = true;
    int rep_size = 0;
    std::string model_id;
    std::string task;   // task string, or "none" for a random-init backbone
    std::string probe;  // probe kind string
    std::string dataset;
    double fraction = 1.0;
    std::string tap;
    uint64_t seed = 0;
    double pretext_metric = 0.0;
    double top1 = 0.0;
    double top5 = 0.0;
    double wall_seconds = 0.0;
    std::string version;
    std::vector<float> curve;  // per-epoch validation accuracy for SGD probes

    std::string key() const;
    std::string to_json_line() const;
    static ExperimentRecord from_json_line(const std::string& line);
};

// Append-only JSONL journal; single-writer append under an exclusive file
// lock, readers skip torn trailing lines.
void journal_append(const std::string& path, const ExperimentRecord& rec);
std::vector<ExperimentRecord> journal_read(const std::string& path);
// Rewrites the journal keeping the last record per key.
void journal_compact(const std::string& path);

struct GridSkip {
    std::string family;
    int k = 0;
    std::string task;
};

struct GridModel {
    std::string family;
    int k = 4;
    bool final_relu = true;
    int rep_size = 0;
};

struct GridConfig {
    std::vector<GridModel> models;
    std::vector<std::string> tasks;
    std::vector<std::string> probes;
    std::vector<double> fractions = {1.0};
    std::vector<std::string> taps = {"pre_logits"};
    std::vector<uint64_t> seeds = {1};
    // dataset binding
    std::string dataset_name;
    std::string dataset_root;
    int input_side = 96;
    int64_t holdout_size = 0;
    uint64_t split_seed = 1;
    // training + task parameters shared across cells
    TrainSchedule schedule;
    PretextSpec pretext;  // task field overridden per cell
    ProbeSpec probe_params;
    int64_t val_cap = 1000;
    std::vector<GridSkip> skips;
    std::string out_dir;
    int workers = 1;

    std::string to_json() const;
    static GridConfig from_json(const std::string& text);
};

struct GridResult {
    std::vector<ExperimentRecord> records;  //全 journal content after the run
    int trainings = 0;
    int failed_cells = 0;
    int skipped_cells = 0;
};

GridResult run_grid(const GridConfig& cfg);

// Emitters: pure functions of the record list; identical records give
// byte-identical files.
struct EmitterOutput {
    std::string data;           // plain-text table (the contract)
    std::string image;          // SVG rendering (convenience)
};

EmitterOutput emit_main_table(const std::vector<ExperimentRecord>& records);
EmitterOutput emit_pretext_vs_downstream(const std::vector<ExperimentRecord>& records);
EmitterOutput emit_layer_curves(const std::vector<ExperimentRecord>& records);
EmitterOutput emit_width_repsize_grid(const std::vector<ExperimentRecord>& records);
EmitterOutput emit_schedule_curves(const std::vector<ExperimentRecord>& records);

// Writes every emitter's files under dir.
void write_report(const std::vector<ExperimentRecord>& records, const std::string& dir);

// Spearman rank correlation with average ranks on ties; nullopt when either
// side is constant or fewer than two points exist.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace ssrl
