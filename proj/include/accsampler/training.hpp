#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "accsampler/losses.hpp"
#include "accsampler/model.hpp"
#include "accsampler/sampler.hpp"

namespace accsampler {

struct StageSchedule {
    int epochs = 1;
    double lr = 0.01;
    std::vector<int> milestones;  // epochs at which lr is multiplied by decay
    double decay = 0.1;
    std::string optimizer = "sgd";  // "sgd" | "adam"
    double momentum = 0.9;
    double weight_decay = 0.0;
    int batch_size = 16;
    double grad_clip = 0.0;  // max global gradient norm, 0 disables
    int patience = 0;        // early-stopping patience in epochs, 0 disables
};

/// Stage 1 as published: 100 epochs from 0.01, divided by 10 at 50, 70 and 90.
StageSchedule default_stage1_schedule();
StageSchedule default_stage2_schedule();
StageSchedule default_stage3_schedule();

/// Step-decayed learning rate. Throws ValidationError outside [0, epochs).
double lr_at(const StageSchedule& schedule, int epoch);

struct TauSchedule {
    double initial = 5.0;
    double minimum = 0.01;
    int epochs = 30;
};

/// max(initial * (1 - epoch / epochs), minimum).
double tau_at(const TauSchedule& schedule, int epoch);

struct StageConfig {
    int stage = 1;
    StageSchedule schedule;

    /// Groups that receive gradient updates in this stage.
    std::vector<ParamGroup> trainable() const;
    /// Stage whose checkpoint must exist before this one runs (0 for none).
    int prerequisite() const { return stage - 1; }
};

struct TrainingContext {
    ModelSpec spec;
    CostTable costs;
    MixupParams mixup;
    LossWeights weights;
    BalanceNorm balance_norm = BalanceNorm::Absolute;
    int num_stations = 2;
    bool include_station_cost = true;
    TauSchedule tau;
    double stage2_random_action_prob = 0.5;
    bool stage1_resolution_augment = false;
    uint64_t seed = 0;
    std::ostream* progress = nullptr;
};

struct EpochLog {
    int stage = 0;
    int epoch = 0;
    double lr = 0.0;
    double tau = 0.0;
    double l_c = 0.0;
    double l_b_soft = 0.0;
    double l_b_hard = 0.0;
    double l_g_soft = 0.0;
    double l_g_hard = 0.0;
    double total = 0.0;
    std::vector<double> usage;  // hard action histogram (stage 3)
    double val_accuracy = -1.0;
    double val_gflops = -1.0;
};

void to_json(nlohmann::json& j, const EpochLog& e);

struct StageResult {
    AccSamplerNet net{nullptr};
    CheckpointInfo info;
    std::vector<EpochLog> log;
};

/// Runs one training stage. Stage 1 trains the feature extractor on frame
/// labels; stage 2 the aggregator and classifier on clip labels; stage 3 the
/// policy head under the full weighted objective. Parameters outside the
/// stage's groups are left bit-identical. Throws PrerequisiteError when the
/// previous stage's checkpoint is absent.
StageResult run_stage(const StageConfig& config, const TrainingContext& ctx, const std::vector<VideoSample>& train,
                      const std::vector<VideoSample>& validation,
                      const std::optional<std::filesystem::path>& checkpoint_in);

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

/// Holds out the trailing `fraction` of videos (at least one when fraction > 0
/// and more than one video exists).
std::pair<std::vector<VideoSample>, std::vector<VideoSample>> split_validation(const std::vector<VideoSample>& videos,
                                                                              double fraction);

/// Policy-stage objective for a batch under fixed randomness: the full
/// weighted loss with soft balance and GFLOPs surrogates.
struct PolicyObjective {
    torch::Tensor total;
    torch::Tensor classification;
    torch::Tensor balance;
    torch::Tensor gflops;
    std::vector<EpisodeTrace> traces;
};

PolicyObjective policy_objective(AccSamplerNet& net, const std::vector<const VideoSample*>& batch,
                                 const CostTable& costs, const RolloutOptions& options, const LossWeights& weights,
                                 BalanceNorm norm, Rng& rng);

} // namespace accsampler
