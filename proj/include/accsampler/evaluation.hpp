#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "accsampler/datamodel.hpp"
#include "accsampler/model.hpp"
#include "accsampler/sampler.hpp"

namespace accsampler {

struct EvalMetrics {
    int videos = 0;
    double accuracy = 0.0;  // fraction in [0, 1]
    double gflops_per_video = 0.0;
    double gflops_per_frame = 0.0;
    std::vector<double> usage;  // share of steps that chose each ladder index
    std::vector<EpisodeTrace> traces;
};

/// Deterministic rollouts over `videos`. Throws ValidationError when empty.
EvalMetrics evaluate(AccSamplerNet& net, const std::vector<VideoSample>& videos, const CostTable& costs,
                     const RolloutOptions& options);

/// Zero-filled shift of [B, T, C, ...]: the first C/fold_div channels move one
/// step forward in time, the next C/fold_div one step backward.
torch::Tensor temporal_shift(const torch::Tensor& x, int fold_div = 8);

struct TsmLiteImpl : torch::nn::Module {
    TsmLiteImpl(int num_classes, std::vector<int> widths = {16, 32, 64, 64}, int fold_div = 8);
    /// [B, T, 3, H, W] -> [B, num_classes]
    torch::Tensor forward(const torch::Tensor& clips);

    std::vector<torch::nn::Conv2d> convs;
    std::vector<torch::nn::BatchNorm2d> norms;
    torch::nn::Linear head{nullptr};
    int fold_div;
};
TORCH_MODULE(TsmLite);

struct DownstreamConfig {
    int epochs = 10;
    double lr = 0.001;
    double weight_decay = 3e-6;
    int batch_size = 16;
    int input_size = 32;
    int num_classes = 2;
    uint64_t seed = 0;
};

struct DownstreamResult {
    double test_accuracy = 0.0;
    double train_accuracy = 0.0;
};

/// Trains a temporal-shift classifier on fixed-length frame sets and scores
/// it on `test`. Throws ValidationError when frame counts differ across videos.
DownstreamResult train_downstream(const std::vector<VideoSample>& train, const std::vector<VideoSample>& test,
                                  const DownstreamConfig& config);

struct ModelRow {
    std::string name;
    double test_accuracy = 0.0;  // percent
    double train_accuracy = -1.0;
    double gflops_per_video = 0.0;
    double gflops_per_frame = 0.0;
    std::vector<double> usage;
};

struct EvalReport {
    nlohmann::json config = nlohmann::json::object();
    std::vector<ModelRow> models;
    // selector -> K -> downstream test accuracy (percent, mean over seeds)
    std::map<std::string, std::map<int, double>> downstream;
};

void to_json(nlohmann::json& j, const ModelRow& r);
void from_json(const nlohmann::json& j, ModelRow& r);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

struct ReportFiles {
    std::filesystem::path json;
    std::filesystem::path table;
    std::optional<std::filesystem::path> plot;
};

/// Writes report.json, report.md and, when any selector has results,
/// accuracy_vs_k.svg. Output bytes depend only on the report.
ReportFiles emit_report(const EvalReport& report, const std::filesystem::path& dir);

} // namespace accsampler
