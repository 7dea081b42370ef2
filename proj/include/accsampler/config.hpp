#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "accsampler/common.hpp"
#include "accsampler/compression.hpp"
#include "accsampler/datamodel.hpp"
#include "accsampler/distillation.hpp"
#include "accsampler/evaluation.hpp"
#include "accsampler/losses.hpp"
#include "accsampler/model.hpp"
#include "accsampler/training.hpp"

namespace accsampler {

/// Unknown or missing configuration keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

struct DataConfig {
    std::string train_manifest;  // empty: <output_dir>/data/train.jsonl
    std::string test_manifest;
    std::string ground_truth;
    std::string stream_train;  // per-frame labelled streams consumed by `prepare`
    std::string stream_test;
    int clip_len = 64;
    int clip_stride = 64;
    double validation_fraction = 0.1;
};

struct ModelConfig {
    std::string backbone = "tiny_conv";
    int feature_dim = 64;
    std::vector<int> widths{16, 32, 64};
    int hidden_dim = 512;
    int num_classes = 2;
    int gn_groups = 8;
};

struct TrainConfig {
    StageSchedule stage1 = default_stage1_schedule();
    StageSchedule stage2 = default_stage2_schedule();
    StageSchedule stage3 = default_stage3_schedule();
    double tau_initial = 5.0;
    double tau_minimum = 0.01;
    double stage2_random_action_prob = 0.5;
    bool stage1_resolution_augment = false;
};

struct DistillConfig {
    std::string variant = "S1";
    std::string decay = "geometric";
    double decay_rate = 0.1;
    std::vector<int> k_values{8, 20, 28};
    std::vector<std::string> selectors{"accsampler", "uniform", "random"};
    std::string rollout = "sample";  // "sample" | "eval"
    uint64_t seed = 0;
};

struct DownstreamSettings {
    int epochs = 10;
    double lr = 0.001;
    double weight_decay = 3e-6;
    int batch_size = 16;
    int input_size = 32;
    std::vector<uint64_t> seeds{0, 1, 2};
};

struct RunConfig {
    uint64_t seed = 0;
    std::string output_dir = "runs/default";
    DataConfig data;
    SyntheticSpec synthetic;
    ModelConfig model;
    ActionLadder ladder;
    MixupParams mixup;
    LossWeights loss;
    std::string balance_norm = "absolute";
    int stations = 2;
    bool station_cost = true;
    TrainConfig train;
    DistillConfig distill;
    DownstreamSettings downstream;

    void validate() const;
    ModelSpec model_spec() const;
    TrainingContext training_context(const CostTable& costs) const;
    DownstreamConfig downstream_config(uint64_t seed) const;
};

nlohmann::json to_json(const RunConfig& c);
/// Overlays `j` on the defaults. Throws ConfigError naming the first key that
/// has no counterpart in the defaults or carries the wrong type.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
/// Applies one "dotted.key=value" override; the value is read as JSON when it
/// parses and as a plain string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Paths of every run artifact, derived from the config alone.
struct RunLayout {
    std::filesystem::path root;
    std::filesystem::path data_dir() const { return root / "data"; }
    std::filesystem::path train_manifest(const RunConfig& c) const;
    std::filesystem::path test_manifest(const RunConfig& c) const;
    std::filesystem::path ground_truth(const RunConfig& c) const;
    std::filesystem::path cost_table() const { return root / "cost_table.csv"; }
    std::filesystem::path checkpoint(int stage) const;
    std::filesystem::path training_log(int stage) const;
    std::filesystem::path traces(const std::string& split) const;
    std::filesystem::path distill_dir(const std::string& selector, int k) const;
    std::filesystem::path eval_dir() const { return root / "eval"; }
    std::filesystem::path config_echo() const { return root / "config.json"; }
};

} // namespace accsampler
