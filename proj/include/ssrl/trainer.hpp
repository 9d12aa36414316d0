#pragma once

#include <string>
#include <vector>

#include "ssrl/data.hpp"
#include "ssrl/modelzoo.hpp"
#include "ssrl/pretext.hpp"

namespace ssrl {

struct TrainSchedule {
    float base_lr = 0.1f;
    float momentum = 0.9f;
    int total_epochs = 35;
    std::vector<int> decay_epochs = {15, 25};
    float decay_factor = 0.1f;
    int warmup_epochs = 5;
    int batch_size = 256;
    int reference_batch = 256;
    float weight_decay = 1e-4f;

    void validate() const;
    float peak_lr() const { return base_lr * float(batch_size) / float(reference_batch); }
};

// Linear warmup from 0 to peak over warmup_epochs, then piecewise-constant
// with decay_factor drops after each decay epoch.
float lr_at(int64_t step, int64_t steps_per_epoch, const TrainSchedule& s);

// Heavy-ball momentum: v <- m*v + (g + wd*w), w <- w - lr*v. Grads are
// zeroed after the step.
class SgdMomentum {
public:
    SgdMomentum(std::vector<ParamRef> params, float momentum);
    void step(float lr, float weight_decay);
    void save(std::ofstream& f) const;
    void load(std::ifstream& f);

private:
    std::vector<ParamRef> params_;
    std::vector<std::vector<float>> vel_;
    float momentum_;
};

struct EpochRecord {
    int epoch = 0;
    float lr = 0.0f;
    float train_metric = 0.0f;
    float val_metric = 0.0f;
    double wall_seconds = 0.0;
    float train_loss = 0.0f;  // kept in memory; the trace file carries the five contract keys
};

struct PretrainConfig {
    PretextSpec task;
    TrainSchedule schedule;
    uint64_t seed = 1;
    std::string out_dir;    // checkpoint directory; empty = no persistence
    int64_t val_cap = 1000; // examples used for the per-epoch validation metric
};

struct PretrainResult {
    std::vector<EpochRecord> trace;
    float final_val_metric = 0.0f;
    int64_t steps = 0;
};

// Pretext training loop. Resumes from cfg.out_dir when a compatible
// checkpoint exists; per-epoch data order and augmentation streams are
// derived from (seed, epoch), so an interrupted and resumed run reproduces
// the uninterrupted trajectory exactly.
PretrainResult train_pretext(Model& model, Sequential& head, const Dataset& data,
                             const std::vector<int64_t>& train_idx,
                             const std::vector<int64_t>& val_idx, const PretrainConfig& cfg);

// Classification accuracy for the labeled tasks; within-batch triplet
// accuracy (nearest neighbor shares the id) for exemplar.
float pretext_metric(Model& model, Sequential& head, const PretextSpec& spec,
                     const Dataset& data, const std::vector<int64_t>& indices, uint64_t seed,
                     int64_t cap = -1);

// Head + optimizer persistence next to the model checkpoint.
void save_trainer_state(const std::string& dir, Sequential& head, const SgdMomentum& opt,
                        int epoch, int64_t step);
struct TrainerState {
    int epoch = 0;
    int64_t step = 0;
    bool found = false;
};
TrainerState load_trainer_state(const std::string& dir, Sequential* head, SgdMomentum* opt);

}  // namespace ssrl
