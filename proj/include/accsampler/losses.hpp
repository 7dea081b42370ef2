#pragma once

#include <vector>

#include <torch/torch.h>

#include "accsampler/compression.hpp"
#include "accsampler/sampler.hpp"

namespace accsampler {

struct LossWeights {
    double beta = 0.3;   // balance
    double gamma = 0.1;  // GFLOPs
    void validate() const;
};

enum class BalanceNorm { Absolute, Squared };

/// Mean cross-entropy of [B, C] (or [C]) logits against class indices.
torch::Tensor classification_loss(const torch::Tensor& logits, const std::vector<int>& labels);

/// Per-action usage: each video's [T, |A|] rows are averaged over its own
/// steps, then over videos. Rows are a^gs for the differentiable surrogate or
/// one-hot decisions for the diagnostic value.
torch::Tensor action_usage(const std::vector<torch::Tensor>& per_video_actions);

/// sum_k |usage_k - 1/|A|| (or squared deviations).
torch::Tensor balance_loss(const std::vector<torch::Tensor>& per_video_actions,
                           BalanceNorm norm = BalanceNorm::Absolute);

/// Expected per-step cost sum_j a_j * cost(R_j), averaged per video then over videos.
torch::Tensor gflops_loss(const std::vector<torch::Tensor>& per_video_actions, const torch::Tensor& ladder_costs);

/// One-hot decision rows of a trace, shape [T, |A|].
torch::Tensor hard_actions(const EpisodeTrace& trace, int num_actions);
double balance_loss_hard(const std::vector<EpisodeTrace>& traces, int num_actions,
                         BalanceNorm norm = BalanceNorm::Absolute);
/// Mean over videos of the mean per-step cost actually spent.
double gflops_loss_hard(const std::vector<EpisodeTrace>& traces);

torch::Tensor total_loss(const torch::Tensor& classification, const torch::Tensor& balance,
                         const torch::Tensor& gflops, const LossWeights& weights);
double total_loss(double classification, double balance, double gflops, const LossWeights& weights);

} // namespace accsampler
