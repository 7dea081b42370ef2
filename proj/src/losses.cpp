#include "accsampler/losses.hpp"

namespace accsampler {

void LossWeights::validate() const {
    if (beta < 0.0 || gamma < 0.0) throw ValidationError("loss weights must be non-negative");
}

torch::Tensor classification_loss(const torch::Tensor& logits, const std::vector<int>& labels) {
    auto batch = logits.dim() == 1 ? logits.unsqueeze(0) : logits;
    if (static_cast<std::size_t>(batch.size(0)) != labels.size()) {
        throw ValidationError("classification_loss: batch and label counts differ");
    }
    const int classes = static_cast<int>(batch.size(1));
    for (int y : labels) {
        if (y < 0 || y >= classes) throw ValidationError("label " + std::to_string(y) + " out of range");
    }
    auto target = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()), torch::kInt64);
    return torch::nll_loss(torch::log_softmax(batch, 1), target);
}

torch::Tensor action_usage(const std::vector<torch::Tensor>& per_video_actions) {
    std::vector<torch::Tensor> means;
    for (const auto& rows : per_video_actions) {
        if (rows.size(0) > 0) means.push_back(rows.mean(0));
    }
    if (means.empty()) throw ValidationError("action usage over zero steps");
    return torch::stack(means).mean(0);
}

torch::Tensor balance_loss(const std::vector<torch::Tensor>& per_video_actions, BalanceNorm norm) {
    auto usage = action_usage(per_video_actions);
    auto dev = usage - 1.0 / static_cast<double>(usage.size(0));
    return norm == BalanceNorm::Absolute ? dev.abs().sum() : dev.pow(2).sum();
}

torch::Tensor gflops_loss(const std::vector<torch::Tensor>& per_video_actions, const torch::Tensor& ladder_costs) {
    std::vector<torch::Tensor> per_video;
    for (const auto& rows : per_video_actions) {
        if (rows.size(0) == 0) continue;
        per_video.push_back((rows * ladder_costs.to(rows.scalar_type())).sum(1).mean());
    }
    if (per_video.empty()) throw ValidationError("gflops loss over zero steps");
    return torch::stack(per_video).mean();
}

torch::Tensor hard_actions(const EpisodeTrace& trace, int num_actions) {
    auto rows = torch::zeros({static_cast<int64_t>(trace.steps.size()), num_actions}, torch::kFloat64);
    for (std::size_t t = 0; t < trace.steps.size(); ++t) rows[static_cast<int64_t>(t)][trace.steps[t].decision] = 1.0;
    return rows;
}

double balance_loss_hard(const std::vector<EpisodeTrace>& traces, int num_actions, BalanceNorm norm) {
    std::vector<torch::Tensor> rows;
    for (const auto& t : traces) rows.push_back(hard_actions(t, num_actions));
    return balance_loss(rows, norm).item<double>();
}

double gflops_loss_hard(const std::vector<EpisodeTrace>& traces) {
    double sum = 0.0;
    int videos = 0;
    for (const auto& t : traces) {
        if (t.steps.empty()) continue;
        sum += t.step_cost() / static_cast<double>(t.steps.size());
        ++videos;
    }
    if (videos == 0) throw ValidationError("gflops loss over zero steps");
    return sum / videos;
}

torch::Tensor total_loss(const torch::Tensor& classification, const torch::Tensor& balance,
                         const torch::Tensor& gflops, const LossWeights& weights) {
    return classification + weights.beta * balance + weights.gamma * gflops;
}

double total_loss(double classification, double balance, double gflops, const LossWeights& weights) {
    return classification + weights.beta * balance + weights.gamma * gflops;
}

} // namespace accsampler
