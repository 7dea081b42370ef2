#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "accsampler/backbone_spec.hpp"
#include "accsampler/compression.hpp"

namespace accsampler {

struct ModelSpec {
    BackboneSpec backbone = tiny_conv_spec(64);
    int hidden_dim = 512;
    int num_classes = 2;
    int gn_groups = 8;
    bool station_input = true;  // false for the no-station policy variant (M = 0)
    ActionLadder ladder;

    int feature_dim() const { return backbone.feature_dim; }
    int policy_input_dim() const { return hidden_dim + (station_input ? feature_dim() : 0); }
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);
void to_json(nlohmann::json& j, const ActionLadder& l);
void from_json(const nlohmann::json& j, ActionLadder& l);

struct RecurrentState {
    torch::Tensor h;  // [hidden] or [B, hidden]
    int step = 0;
};

struct StationFeature {
    int index = 0;
    torch::Tensor feature;  // [D]
};

/// One shape record per convolution, taken from a live forward pass.
struct ConvTrace {
    std::string name;
    std::vector<int64_t> output_shape;  // [B, C, H, W]
    std::vector<int64_t> weight_shape;  // [out, in / groups, k, k]
};

/// Spec-driven convolutional feature extractor ending in global pooling.
class FeatureExtractorImpl : public torch::nn::Module {
public:
    explicit FeatureExtractorImpl(const BackboneSpec& spec);
    torch::Tensor forward(const torch::Tensor& x);
    std::vector<ConvTrace> trace(const torch::Tensor& x);

private:
    BackboneSpec spec_;
    torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(FeatureExtractor);

enum class ParamGroup { Backbone, FrameHead, Aggregator, Classifier, Policy };

std::string to_string(ParamGroup g);
ParamGroup param_group_from_string(const std::string& s);

/// All learnable parts: shared frame/station feature extractor, a stage-1
/// frame classifier, the GRU aggregator, the video classifier and the
/// GroupNorm + linear policy head.
class AccSamplerNetImpl : public torch::nn::Module {
public:
    explicit AccSamplerNetImpl(ModelSpec spec);

    const ModelSpec& spec() const { return spec_; }
    torch::Dtype dtype() const;

    /// [3, r, r] -> [D] or [B, 3, r, r] -> [B, D]; r must be on the ladder.
    torch::Tensor extract_features(const torch::Tensor& frames);
    /// Same as extract_features without the ladder check (stage-1 training).
    torch::Tensor features_any_resolution(const torch::Tensor& frames);
    torch::Tensor frame_logits(const torch::Tensor& features);

    RecurrentState initial_state(int batch = 0) const;
    RecurrentState recurrent_step(const torch::Tensor& feature, const RecurrentState& state);
    torch::Tensor classify(const RecurrentState& state);

    torch::Tensor policy_input(const RecurrentState& state, const StationFeature* station) const;
    /// GroupNorm over the policy input; `affine=false` gives the raw normalized activations.
    torch::Tensor policy_normalize(const torch::Tensor& input, bool affine = true) const;
    /// Unnormalized action logits over the ladder.
    torch::Tensor policy_forward(const RecurrentState& state, const StationFeature* station);

    std::vector<torch::Tensor> group_parameters(ParamGroup group);
    std::vector<std::pair<std::string, torch::Tensor>> named_group_parameters(ParamGroup group);
    /// Sets every parameter of the model to zero.
    void zero_parameters();

    FeatureExtractor backbone{nullptr};
    torch::nn::Linear frame_head{nullptr};
    torch::nn::GRUCell aggregator{nullptr};
    torch::nn::Linear classifier{nullptr};
    torch::nn::GroupNorm policy_norm{nullptr};
    torch::nn::Linear policy_fc{nullptr};

private:
    ModelSpec spec_;
};
TORCH_MODULE(AccSamplerNet);

struct CheckpointInfo {
    ModelSpec spec;
    int stage = 0;
    nlohmann::json extra = nlohmann::json::object();
};

/// One archive: every named parameter and buffer plus a JSON metadata record.
void save_checkpoint(AccSamplerNet& net, const CheckpointInfo& info, const std::filesystem::path& path);
/// Throws PrerequisiteError when the file does not exist.
std::pair<AccSamplerNet, CheckpointInfo> load_checkpoint(const std::filesystem::path& path);

/// Deep copy of every parameter and buffer, keyed by name.
std::map<std::string, torch::Tensor> snapshot_parameters(AccSamplerNet& net);

} // namespace accsampler
