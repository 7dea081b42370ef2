#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <torch/torch.h>

#include "accsampler/backbone_spec.hpp"
#include "accsampler/common.hpp"

namespace accsampler {

/// Paired clip lengths and resolutions. Action i fuses actions[i] frames into
/// one frame rendered at resolutions[i] pixels square.
struct ActionLadder {
    std::vector<int> actions{1, 3, 5, 7};
    std::vector<int> resolutions{224, 168, 112, 84};

    std::size_t size() const { return actions.size(); }
    int max_action() const { return actions.back(); }
    int full_resolution() const { return resolutions.front(); }
    /// Ladder index of a clip length; throws when k is not on the ladder.
    int index_of_action(int k) const;
    bool has_resolution(int r) const;
    void validate() const;

    bool operator==(const ActionLadder&) const = default;
};

struct MixupParams {
    double alpha = 0.3;
    double eval_lambda = 0.5;
    void validate() const;
};

/// Train: lambda ~ Beta(alpha, alpha), drawn fresh per call (one call per clip).
/// Eval: the fixed eval_lambda.
double sample_lambda(const MixupParams& params, Phase phase, Rng& rng);

/// Pixelwise lambda * first + (1 - lambda) * last. Labels are never mixed.
torch::Tensor clip_mixup(const torch::Tensor& first, const torch::Tensor& last, double lambda);

/// Bilinear resize (corners not aligned) of a [3, H, W] or [B, 3, H, W]
/// tensor to target x target.
torch::Tensor resize_square(const torch::Tensor& frames, int target);

/// Collapses a [k, 3, H, W] clip into one [3, target, target] frame: a single
/// frame is only resized; longer clips resize their first and last frames and
/// mix them.
torch::Tensor fuse_clip(const torch::Tensor& clip, double lambda, int target_resolution);

/// Multiply-accumulate count of one forward pass at a square input.
uint64_t count_macs(const BackboneSpec& spec, int resolution);

/// MACs of one gated-recurrent step with the given input and hidden widths.
uint64_t gru_step_macs(int input_dim, int hidden_dim);

/// GFLOPs per processed frame, keyed by resolution (1 MAC = 2 FLOPs).
struct CostTable {
    std::map<int, double> gflops;

    double at(int resolution) const;
    /// Costs in ladder order, as a float64 tensor of shape [|A|].
    torch::Tensor ladder_costs(const ActionLadder& ladder) const;
    double min() const;
    double max() const;
    void validate() const;

    bool operator==(const CostTable&) const = default;
};

CostTable build_cost_table(const BackboneSpec& backbone, const ActionLadder& ladder, int hidden_dim);

/// Text format: header line then "resolution_px,gflops_per_frame" rows.
void write_cost_table(const CostTable& table, const std::filesystem::path& path);
CostTable load_cost_table(const std::filesystem::path& path);

} // namespace accsampler
