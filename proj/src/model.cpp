#include "accsampler/model.hpp"

#include <algorithm>
#include <sstream>

#include "accsampler/common.hpp"

namespace accsampler {

using nlohmann::json;

void ModelSpec::validate() const {
    ladder.validate();
    if (hidden_dim < 1 || num_classes < 2) throw ValidationError("hidden_dim >= 1 and num_classes >= 2 required");
    if (backbone.feature_dim < 1) throw ValidationError("feature_dim must be positive");
    if (gn_groups < 1 || policy_input_dim() % gn_groups != 0) {
        throw ValidationError("policy input width " + std::to_string(policy_input_dim()) +
                              " is not divisible by " + std::to_string(gn_groups) + " groups");
    }
}

void to_json(json& j, const ActionLadder& l) { j = json{{"actions", l.actions}, {"resolutions", l.resolutions}}; }

void from_json(const json& j, ActionLadder& l) {
    l.actions = j.at("actions").get<std::vector<int>>();
    l.resolutions = j.at("resolutions").get<std::vector<int>>();
}

void to_json(json& j, const ModelSpec& s) {
    j = json{{"backbone", s.backbone},       {"hidden_dim", s.hidden_dim}, {"num_classes", s.num_classes},
             {"gn_groups", s.gn_groups},     {"station_input", s.station_input}, {"ladder", s.ladder}};
}

void from_json(const json& j, ModelSpec& s) {
    s.backbone = j.at("backbone").get<BackboneSpec>();
    s.hidden_dim = j.at("hidden_dim").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.gn_groups = j.at("gn_groups").get<int>();
    s.station_input = j.at("station_input").get<bool>();
    s.ladder = j.at("ladder").get<ActionLadder>();
}

namespace {

class ResidualImpl : public torch::nn::Module {
public:
    explicit ResidualImpl(torch::nn::Sequential body) : body_(register_module("body", std::move(body))) {}
    torch::Tensor forward(const torch::Tensor& x) { return x + body_->forward(x); }
    torch::nn::Sequential& body() { return body_; }

private:
    torch::nn::Sequential body_;
};
TORCH_MODULE(Residual);

torch::nn::Sequential build_layers(const std::vector<LayerDesc>& descs) {
    torch::nn::Sequential seq;
    for (const auto& l : descs) {
        // "stem.conv" -> "stem_conv"
        std::string name = l.name;
        std::replace(name.begin(), name.end(), '.', '_');
        if (l.type == "conv2d") {
            seq->push_back(std::string(name), torch::nn::Conv2d(torch::nn::Conv2dOptions(l.in_channels, l.out_channels, l.kernel)
                                                         .stride(l.stride)
                                                         .padding(l.padding)
                                                         .groups(l.groups)
                                                         .bias(l.bias)));
        } else if (l.type == "batchnorm2d") {
            seq->push_back(std::string(name), torch::nn::BatchNorm2d(l.in_channels));
        } else if (l.type == "relu") {
            seq->push_back(std::string(name), torch::nn::Functional(torch::relu));
        } else if (l.type == "relu6") {
            seq->push_back(std::string(name), torch::nn::Functional([](const torch::Tensor& x) { return x.clamp(0.0, 6.0); }));
        } else if (l.type == "residual") {
            seq->push_back(std::string(name), Residual(build_layers(l.body)));
        } else if (l.type == "global_avg_pool") {
            seq->push_back(std::string(name), torch::nn::Functional([](const torch::Tensor& x) { return x.mean({2, 3}); }));
        } else {
            throw ValidationError("unsupported layer type '" + l.type + "' in layer '" + l.name + "'");
        }
    }
    return seq;
}

torch::Tensor trace_layers(torch::nn::Sequential& seq, const std::vector<LayerDesc>& descs, torch::Tensor x,
                           std::vector<ConvTrace>& out) {
    std::size_t i = 0;
    for (auto& any : *seq) {
        const auto& desc = descs[i++];
        if (desc.type == "residual") {
            auto res = std::dynamic_pointer_cast<ResidualImpl>(any.ptr());
            x = x + trace_layers(res->body(), desc.body, x, out);
            continue;
        }
        x = any.forward(x);
        if (auto conv = std::dynamic_pointer_cast<torch::nn::Conv2dImpl>(any.ptr())) {
            out.push_back({desc.name, x.sizes().vec(), conv->weight.sizes().vec()});
        }
    }
    return x;
}

} // namespace

FeatureExtractorImpl::FeatureExtractorImpl(const BackboneSpec& spec) : spec_(spec) {
    layers_ = register_module("layers", build_layers(spec.layers));
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& x) { return layers_->forward(x); }

std::vector<ConvTrace> FeatureExtractorImpl::trace(const torch::Tensor& x) {
    torch::NoGradGuard guard;
    std::vector<ConvTrace> out;
    trace_layers(layers_, spec_.layers, x, out);
    return out;
}

std::string to_string(ParamGroup g) {
    switch (g) {
    case ParamGroup::Backbone: return "backbone";
    case ParamGroup::FrameHead: return "frame_head";
    case ParamGroup::Aggregator: return "aggregator";
    case ParamGroup::Classifier: return "classifier";
    case ParamGroup::Policy: return "policy";
    }
    return "unknown";
}

ParamGroup param_group_from_string(const std::string& s) {
    for (auto g : {ParamGroup::Backbone, ParamGroup::FrameHead, ParamGroup::Aggregator, ParamGroup::Classifier,
                   ParamGroup::Policy}) {
        if (to_string(g) == s) return g;
    }
    throw ValidationError("unknown parameter group '" + s + "'");
}

AccSamplerNetImpl::AccSamplerNetImpl(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const int d = spec_.feature_dim();
    backbone = register_module("backbone", FeatureExtractor(spec_.backbone));
    frame_head = register_module("frame_head", torch::nn::Linear(d, spec_.num_classes));
    aggregator = register_module("aggregator", torch::nn::GRUCell(d, spec_.hidden_dim));
    classifier = register_module("classifier", torch::nn::Linear(spec_.hidden_dim, spec_.num_classes));
    policy_norm = register_module("policy_norm",
                                  torch::nn::GroupNorm(torch::nn::GroupNormOptions(spec_.gn_groups, spec_.policy_input_dim())));
    policy_fc = register_module("policy_fc",
                                torch::nn::Linear(spec_.policy_input_dim(), static_cast<int64_t>(spec_.ladder.size())));
}

torch::Dtype AccSamplerNetImpl::dtype() const { return classifier->weight.scalar_type(); }

torch::Tensor AccSamplerNetImpl::features_any_resolution(const torch::Tensor& frames) {
    const bool single = frames.dim() == 3;
    auto x = (single ? frames.unsqueeze(0) : frames).to(dtype());
    auto f = backbone->forward(x);
    return single ? f.squeeze(0) : f;
}

torch::Tensor AccSamplerNetImpl::extract_features(const torch::Tensor& frames) {
    const int64_t h = frames.size(-2);
    const int64_t w = frames.size(-1);
    if (h != w || !spec_.ladder.has_resolution(static_cast<int>(h))) {
        throw ValidationError("frame resolution " + std::to_string(h) + "x" + std::to_string(w) +
                              " is not on the ladder");
    }
    return features_any_resolution(frames);
}

torch::Tensor AccSamplerNetImpl::frame_logits(const torch::Tensor& features) { return frame_head->forward(features); }

RecurrentState AccSamplerNetImpl::initial_state(int batch) const {
    auto opts = torch::TensorOptions().dtype(dtype());
    if (batch <= 0) return {torch::zeros({spec_.hidden_dim}, opts), 0};
    return {torch::zeros({batch, spec_.hidden_dim}, opts), 0};
}

RecurrentState AccSamplerNetImpl::recurrent_step(const torch::Tensor& feature, const RecurrentState& state) {
    if (feature.size(-1) != spec_.feature_dim() || state.h.size(-1) != spec_.hidden_dim ||
        feature.dim() != state.h.dim()) {
        throw ValidationError("recurrent_step: feature/state dimensions do not match the aggregator");
    }
    const bool single = feature.dim() == 1;
    auto x = single ? feature.unsqueeze(0) : feature;
    auto h = single ? state.h.unsqueeze(0) : state.h;
    auto next = aggregator->forward(x.to(dtype()), h);
    return {single ? next.squeeze(0) : next, state.step + 1};
}

torch::Tensor AccSamplerNetImpl::classify(const RecurrentState& state) { return classifier->forward(state.h); }

torch::Tensor AccSamplerNetImpl::policy_input(const RecurrentState& state, const StationFeature* station) const {
    if (!spec_.station_input) return state.h;
    if (station == nullptr) throw ValidationError("policy expects a station feature");
    auto s = station->feature.to(dtype());
    if (s.size(-1) != spec_.feature_dim()) throw ValidationError("station feature width mismatch");
    if (state.h.dim() == 2 && s.dim() == 1) s = s.unsqueeze(0).expand({state.h.size(0), s.size(0)});
    return torch::cat({state.h, s}, -1);
}

torch::Tensor AccSamplerNetImpl::policy_normalize(const torch::Tensor& input, bool affine) const {
    const bool single = input.dim() == 1;
    auto x = single ? input.unsqueeze(0) : input;
    auto out = affine ? torch::group_norm(x, spec_.gn_groups, policy_norm->weight, policy_norm->bias,
                                          policy_norm->options.eps())
                      : torch::group_norm(x, spec_.gn_groups, {}, {}, policy_norm->options.eps());
    return single ? out.squeeze(0) : out;
}

torch::Tensor AccSamplerNetImpl::policy_forward(const RecurrentState& state, const StationFeature* station) {
    return policy_fc->forward(policy_normalize(policy_input(state, station)));
}

std::vector<std::pair<std::string, torch::Tensor>> AccSamplerNetImpl::named_group_parameters(ParamGroup group) {
    std::vector<std::string> prefixes;
    switch (group) {
    case ParamGroup::Backbone: prefixes = {"backbone."}; break;
    case ParamGroup::FrameHead: prefixes = {"frame_head."}; break;
    case ParamGroup::Aggregator: prefixes = {"aggregator."}; break;
    case ParamGroup::Classifier: prefixes = {"classifier."}; break;
    case ParamGroup::Policy: prefixes = {"policy_norm.", "policy_fc."}; break;
    }
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : named_parameters()) {
        for (const auto& prefix : prefixes) {
            if (p.key().rfind(prefix, 0) == 0) out.emplace_back(p.key(), p.value());
        }
    }
    return out;
}

std::vector<torch::Tensor> AccSamplerNetImpl::group_parameters(ParamGroup group) {
    std::vector<torch::Tensor> out;
    for (auto& [name, t] : named_group_parameters(group)) out.push_back(t);
    return out;
}

void AccSamplerNetImpl::zero_parameters() {
    torch::NoGradGuard guard;
    for (auto& p : parameters()) p.zero_();
}

void save_checkpoint(AccSamplerNet& net, const CheckpointInfo& info, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    torch::serialize::OutputArchive archive;
    json meta{{"spec", net->spec()}, {"stage", info.stage}, {"extra", info.extra}};
    archive.write("metadata", c10::IValue(meta.dump()));
    for (const auto& p : net->named_parameters()) archive.write("param." + p.key(), p.value().detach(), false);
    for (const auto& b : net->named_buffers()) archive.write("buffer." + b.key(), b.value(), true);
    archive.save_to(path.string());
}

std::pair<AccSamplerNet, CheckpointInfo> load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw PrerequisiteError("missing checkpoint: " + path.string());
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue meta_value;
    archive.read("metadata", meta_value);
    auto meta = json::parse(meta_value.toStringRef());
    CheckpointInfo info;
    info.spec = meta.at("spec").get<ModelSpec>();
    info.stage = meta.at("stage").get<int>();
    info.extra = meta.value("extra", json::object());
    AccSamplerNet net(info.spec);
    torch::NoGradGuard guard;
    {
        torch::Tensor probe;
        archive.read("param.classifier.weight", probe);
        if (probe.scalar_type() != net->dtype()) net->to(probe.scalar_type());
    }
    for (auto& p : net->named_parameters()) {
        torch::Tensor t;
        archive.read("param." + p.key(), t);
        p.value().copy_(t);
    }
    for (auto& b : net->named_buffers()) {
        torch::Tensor t;
        archive.read("buffer." + b.key(), t, true);
        b.value().copy_(t);
    }
    return {net, info};
}

std::map<std::string, torch::Tensor> snapshot_parameters(AccSamplerNet& net) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : net->named_parameters()) out[p.key()] = p.value().detach().clone();
    for (const auto& b : net->named_buffers()) out["buffer." + b.key()] = b.value().clone();
    return out;
}

} // namespace accsampler
