#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "accsampler/compression.hpp"
#include "accsampler/datamodel.hpp"
#include "accsampler/model.hpp"

namespace accsampler {

/// floor(m * N / (M + 1)) for m = 1..M, with duplicates (only possible when
/// N <= M) removed so the result stays strictly increasing.
std::vector<int> select_station_points(int num_frames, int num_stations);

using StationSet = std::vector<StationFeature>;

/// Position in the StationSet of the first station at or after `position`,
/// or of the last station when every station lies behind it.
std::size_t nearest_future_station_index(int position, const StationSet& stations);
const StationFeature& nearest_future_station(int position, const StationSet& stations);

/// G = -log(-log U), U ~ Uniform(0, 1), as a float64 tensor of length n.
torch::Tensor sample_gumbel(int64_t n, Rng& rng);

/// argmax(log_probs + noise).
int gumbel_max(const torch::Tensor& log_probs, const torch::Tensor& noise);
int gumbel_max(const torch::Tensor& log_probs, Rng& rng);

/// softmax((log_probs + noise) / tau); differentiable in log_probs.
torch::Tensor gumbel_softmax(const torch::Tensor& log_probs, double tau, const torch::Tensor& noise);
torch::Tensor gumbel_softmax(const torch::Tensor& log_probs, double tau, Rng& rng);

struct StepRecord {
    int step = 0;
    int start = 0;
    int end = 0;          // exclusive
    int clip_action = 1;  // frames fused into this step's input
    int resolution = 0;
    double cost = 0.0;
    int station = -1;  // frame index of the station fed to the policy, -1 without one
    std::vector<double> probs;  // a^p emitted after this step
    std::vector<double> soft;   // a^gs emitted after this step (sampled rollouts only)
    int decision = 0;           // ladder index chosen for the next step
};

struct EpisodeTrace {
    std::string video_id;
    int num_frames = 0;
    int label = -1;
    int prediction = -1;
    std::vector<int> station_indices;
    double station_cost = 0.0;
    std::vector<StepRecord> steps;

    double step_cost() const;
    double total_cost() const { return station_cost + step_cost(); }
    /// Throws ValidationError unless the spans partition [0, num_frames) in order.
    void validate_partition() const;
};

void to_json(nlohmann::json& j, const StepRecord& s);
void from_json(const nlohmann::json& j, StepRecord& s);
void to_json(nlohmann::json& j, const EpisodeTrace& t);
void from_json(const nlohmann::json& j, EpisodeTrace& t);

/// One rollout per line.
void write_traces(const std::vector<EpisodeTrace>& traces, const std::filesystem::path& path);
std::vector<EpisodeTrace> load_traces(const std::filesystem::path& path);

enum class RolloutMode {
    Train,   // Gumbel-max action, Gumbel-softmax gradient, lambda ~ Beta
    Eval,    // argmax of a^p, fixed lambda, no noise
    Sample,  // Gumbel-max action without gradients, fixed lambda (scoring rollouts)
};

enum class GradientPath {
    StraightThrough,  // forward follows the hard action, backward the soft one
    Soft,             // forward and backward both follow a^gs
};

struct DecisionContext {
    int step = 0;
    int position = 0;  // first unconsumed frame
    int num_frames = 0;
};

struct RolloutOptions {
    RolloutMode mode = RolloutMode::Eval;
    double tau = 1.0;
    GradientPath gradient = GradientPath::StraightThrough;
    MixupParams mixup;
    int num_stations = 2;
    bool include_station_cost = true;
    /// When set, replaces the policy: returns the ladder index of the next clip.
    std::function<int(const DecisionContext&)> forced_action;
};

struct RolloutOutput {
    torch::Tensor logits;        // [C]
    torch::Tensor soft_actions;  // [T, |A|]: a^gs (Train/Sample) or a^p (Eval)
    EpisodeTrace trace;
};

/// Consumes the video clip by clip. The first clip is one frame at full
/// resolution; each later clip follows the previous decision, clamped to the
/// frames that remain. Station features come from full-resolution frames
/// extracted once up front.
RolloutOutput rollout(AccSamplerNet& net, const VideoSample& video, const CostTable& costs,
                      const RolloutOptions& options, Rng& rng);

/// Always one frame at full resolution, no stations: the dense recurrent baseline.
RolloutOptions dense_baseline_options();

} // namespace accsampler
