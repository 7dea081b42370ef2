#include "accsampler/config.hpp"

#include <fstream>

namespace accsampler {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json schedule_json(const StageSchedule& s) {
    return json{{"epochs", s.epochs},     {"lr", s.lr},
                {"milestones", s.milestones}, {"decay", s.decay},
                {"optimizer", s.optimizer},   {"momentum", s.momentum},
                {"weight_decay", s.weight_decay}, {"batch_size", s.batch_size},
                {"grad_clip", s.grad_clip},   {"patience", s.patience}};
}

StageSchedule schedule_from(const json& j) {
    StageSchedule s;
    s.epochs = j.at("epochs").get<int>();
    s.lr = j.at("lr").get<double>();
    s.milestones = j.at("milestones").get<std::vector<int>>();
    s.decay = j.at("decay").get<double>();
    s.optimizer = j.at("optimizer").get<std::string>();
    s.momentum = j.at("momentum").get<double>();
    s.weight_decay = j.at("weight_decay").get<double>();
    s.batch_size = j.at("batch_size").get<int>();
    s.grad_clip = j.at("grad_clip").get<double>();
    s.patience = j.at("patience").get<int>();
    return s;
}

std::string event_position_string(EventPosition p) { return p == EventPosition::Center ? "center" : "uniform"; }

EventPosition event_position_from(const std::string& s) {
    if (s == "center") return EventPosition::Center;
    if (s == "uniform") return EventPosition::Uniform;
    throw ConfigError("synthetic.event_position must be 'uniform' or 'center', got '" + s + "'");
}

bool compatible(const json& def, const json& val) {
    if (def.is_null()) return true;
    if (def.is_number()) return val.is_number();
    if (def.is_array()) return val.is_array();
    return def.type() == val.type();
}

void overlay(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (const auto& [key, val] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        auto& slot = base[key];
        if (slot.is_object()) {
            overlay(slot, val, path);
        } else {
            if (!compatible(slot, val)) throw ConfigError("config key '" + path + "' has the wrong type");
            slot = val;
        }
    }
}

template <typename T>
T read(const json& j, const char* section, const char* key) {
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + section + "." + key + "' is invalid");
    }
}

} // namespace

json to_json(const RunConfig& c) {
    const auto& s = c.synthetic;
    return json{
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"data",
         {{"train_manifest", c.data.train_manifest},
          {"test_manifest", c.data.test_manifest},
          {"ground_truth", c.data.ground_truth},
          {"stream_train", c.data.stream_train},
          {"stream_test", c.data.stream_test},
          {"clip_len", c.data.clip_len},
          {"clip_stride", c.data.clip_stride},
          {"validation_fraction", c.data.validation_fraction}}},
        {"synthetic",
         {{"num_train", s.num_train},
          {"num_test", s.num_test},
          {"frames_per_video", s.frames_per_video},
          {"frame_size", s.frame_size},
          {"event_length", s.event_length},
          {"event_position", event_position_string(s.event_position)},
          {"noise_amplitude", s.noise_amplitude},
          {"blob_amplitude", s.blob_amplitude},
          {"blob_sigma", s.blob_sigma},
          {"positive_fraction", s.positive_fraction},
          {"seed", s.seed}}},
        {"model",
         {{"backbone", c.model.backbone},
          {"feature_dim", c.model.feature_dim},
          {"widths", c.model.widths},
          {"hidden_dim", c.model.hidden_dim},
          {"num_classes", c.model.num_classes},
          {"gn_groups", c.model.gn_groups}}},
        {"ladder", {{"actions", c.ladder.actions}, {"resolutions", c.ladder.resolutions}}},
        {"mixup", {{"alpha", c.mixup.alpha}, {"eval_lambda", c.mixup.eval_lambda}}},
        {"loss", {{"beta", c.loss.beta}, {"gamma", c.loss.gamma}, {"balance_norm", c.balance_norm}}},
        {"stations", {{"count", c.stations}, {"include_cost", c.station_cost}}},
        {"train",
         {{"stage1", schedule_json(c.train.stage1)},
          {"stage2", schedule_json(c.train.stage2)},
          {"stage3", schedule_json(c.train.stage3)},
          {"tau_initial", c.train.tau_initial},
          {"tau_minimum", c.train.tau_minimum},
          {"stage2_random_action_prob", c.train.stage2_random_action_prob},
          {"stage1_resolution_augment", c.train.stage1_resolution_augment}}},
        {"distill",
         {{"variant", c.distill.variant},
          {"decay", c.distill.decay},
          {"decay_rate", c.distill.decay_rate},
          {"k_values", c.distill.k_values},
          {"selectors", c.distill.selectors},
          {"rollout", c.distill.rollout},
          {"seed", c.distill.seed}}},
        {"downstream",
         {{"epochs", c.downstream.epochs},
          {"lr", c.downstream.lr},
          {"weight_decay", c.downstream.weight_decay},
          {"batch_size", c.downstream.batch_size},
          {"input_size", c.downstream.input_size},
          {"seeds", c.downstream.seeds}}},
    };
}

RunConfig config_from_json(const json& user) {
    json j = to_json(RunConfig{});
    overlay(j, user, "");
    RunConfig c;
    try {
        c.seed = j.at("seed").get<uint64_t>();
        c.output_dir = j.at("output_dir").get<std::string>();
    } catch (const json::exception&) {
        throw ConfigError("config keys 'seed' / 'output_dir' are invalid");
    }
    c.data.train_manifest = read<std::string>(j, "data", "train_manifest");
    c.data.test_manifest = read<std::string>(j, "data", "test_manifest");
    c.data.ground_truth = read<std::string>(j, "data", "ground_truth");
    c.data.stream_train = read<std::string>(j, "data", "stream_train");
    c.data.stream_test = read<std::string>(j, "data", "stream_test");
    c.data.clip_len = read<int>(j, "data", "clip_len");
    c.data.clip_stride = read<int>(j, "data", "clip_stride");
    c.data.validation_fraction = read<double>(j, "data", "validation_fraction");

    auto& s = c.synthetic;
    s.num_train = read<int>(j, "synthetic", "num_train");
    s.num_test = read<int>(j, "synthetic", "num_test");
    s.frames_per_video = read<int>(j, "synthetic", "frames_per_video");
    s.frame_size = read<int>(j, "synthetic", "frame_size");
    s.event_length = read<int>(j, "synthetic", "event_length");
    s.event_position = event_position_from(read<std::string>(j, "synthetic", "event_position"));
    s.noise_amplitude = read<double>(j, "synthetic", "noise_amplitude");
    s.blob_amplitude = read<double>(j, "synthetic", "blob_amplitude");
    s.blob_sigma = read<double>(j, "synthetic", "blob_sigma");
    s.positive_fraction = read<double>(j, "synthetic", "positive_fraction");
    s.seed = read<uint64_t>(j, "synthetic", "seed");

    c.model.backbone = read<std::string>(j, "model", "backbone");
    c.model.feature_dim = read<int>(j, "model", "feature_dim");
    c.model.widths = read<std::vector<int>>(j, "model", "widths");
    c.model.hidden_dim = read<int>(j, "model", "hidden_dim");
    c.model.num_classes = read<int>(j, "model", "num_classes");
    c.model.gn_groups = read<int>(j, "model", "gn_groups");

    c.ladder.actions = read<std::vector<int>>(j, "ladder", "actions");
    c.ladder.resolutions = read<std::vector<int>>(j, "ladder", "resolutions");
    c.mixup.alpha = read<double>(j, "mixup", "alpha");
    c.mixup.eval_lambda = read<double>(j, "mixup", "eval_lambda");
    c.loss.beta = read<double>(j, "loss", "beta");
    c.loss.gamma = read<double>(j, "loss", "gamma");
    c.balance_norm = read<std::string>(j, "loss", "balance_norm");
    c.stations = read<int>(j, "stations", "count");
    c.station_cost = read<bool>(j, "stations", "include_cost");

    try {
        c.train.stage1 = schedule_from(j.at("train").at("stage1"));
        c.train.stage2 = schedule_from(j.at("train").at("stage2"));
        c.train.stage3 = schedule_from(j.at("train").at("stage3"));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid stage schedule: ") + e.what());
    }
    c.train.tau_initial = read<double>(j, "train", "tau_initial");
    c.train.tau_minimum = read<double>(j, "train", "tau_minimum");
    c.train.stage2_random_action_prob = read<double>(j, "train", "stage2_random_action_prob");
    c.train.stage1_resolution_augment = read<bool>(j, "train", "stage1_resolution_augment");

    c.distill.variant = read<std::string>(j, "distill", "variant");
    c.distill.decay = read<std::string>(j, "distill", "decay");
    c.distill.decay_rate = read<double>(j, "distill", "decay_rate");
    c.distill.k_values = read<std::vector<int>>(j, "distill", "k_values");
    c.distill.selectors = read<std::vector<std::string>>(j, "distill", "selectors");
    c.distill.rollout = read<std::string>(j, "distill", "rollout");
    c.distill.seed = read<uint64_t>(j, "distill", "seed");

    c.downstream.epochs = read<int>(j, "downstream", "epochs");
    c.downstream.lr = read<double>(j, "downstream", "lr");
    c.downstream.weight_decay = read<double>(j, "downstream", "weight_decay");
    c.downstream.batch_size = read<int>(j, "downstream", "batch_size");
    c.downstream.input_size = read<int>(j, "downstream", "input_size");
    c.downstream.seeds = read<std::vector<uint64_t>>(j, "downstream", "seeds");
    c.validate();
    return c;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPathError(path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a value");
        start = dot + 1;
    }
}

void RunConfig::validate() const {
    ladder.validate();
    mixup.validate();
    loss.validate();
    synthetic.validate();
    if (balance_norm != "absolute" && balance_norm != "squared") {
        throw ConfigError("loss.balance_norm must be 'absolute' or 'squared'");
    }
    if (stations < 0) throw ConfigError("stations.count must be >= 0");
    if (train.tau_minimum <= 0.0 || train.tau_initial < train.tau_minimum) {
        throw ConfigError("train.tau_initial must be >= train.tau_minimum > 0");
    }
    if (data.validation_fraction < 0.0 || data.validation_fraction >= 1.0) {
        throw ConfigError("data.validation_fraction must lie in [0, 1)");
    }
    score_variant_from_string(distill.variant);
    score_decay_from_string(distill.decay);
    for (const auto& s : distill.selectors) selector_from_string(s);
    if (distill.rollout != "sample" && distill.rollout != "eval") {
        throw ConfigError("distill.rollout must be 'sample' or 'eval'");
    }
    model_spec().validate();
}

ModelSpec RunConfig::model_spec() const {
    ModelSpec spec;
    if (model.backbone == "tiny_conv") {
        auto widths = model.widths;
        widths.push_back(model.feature_dim);
        spec.backbone = tiny_conv_spec(model.feature_dim, widths);
    } else {
        spec.backbone = backbone_spec_for(model.backbone, model.feature_dim);
    }
    spec.hidden_dim = model.hidden_dim;
    spec.num_classes = model.num_classes;
    spec.gn_groups = model.gn_groups;
    spec.station_input = stations > 0;
    spec.ladder = ladder;
    return spec;
}

TrainingContext RunConfig::training_context(const CostTable& costs) const {
    TrainingContext ctx;
    ctx.spec = model_spec();
    ctx.costs = costs;
    ctx.mixup = mixup;
    ctx.weights = loss;
    ctx.balance_norm = balance_norm == "squared" ? BalanceNorm::Squared : BalanceNorm::Absolute;
    ctx.num_stations = stations;
    ctx.include_station_cost = station_cost;
    ctx.tau = TauSchedule{train.tau_initial, train.tau_minimum, train.stage3.epochs};
    ctx.stage2_random_action_prob = train.stage2_random_action_prob;
    ctx.stage1_resolution_augment = train.stage1_resolution_augment;
    ctx.seed = seed;
    return ctx;
}

DownstreamConfig RunConfig::downstream_config(uint64_t s) const {
    DownstreamConfig d;
    d.epochs = downstream.epochs;
    d.lr = downstream.lr;
    d.weight_decay = downstream.weight_decay;
    d.batch_size = downstream.batch_size;
    d.input_size = downstream.input_size;
    d.num_classes = model.num_classes;
    d.seed = s;
    return d;
}

fs::path RunLayout::train_manifest(const RunConfig& c) const {
    return c.data.train_manifest.empty() ? data_dir() / "train.jsonl" : fs::path(c.data.train_manifest);
}

fs::path RunLayout::test_manifest(const RunConfig& c) const {
    return c.data.test_manifest.empty() ? data_dir() / "test.jsonl" : fs::path(c.data.test_manifest);
}

fs::path RunLayout::ground_truth(const RunConfig& c) const {
    return c.data.ground_truth.empty() ? data_dir() / "ground_truth.jsonl" : fs::path(c.data.ground_truth);
}

fs::path RunLayout::checkpoint(int stage) const { return root / "checkpoints" / ("stage" + std::to_string(stage) + ".pt"); }

fs::path RunLayout::training_log(int stage) const {
    return root / "logs" / ("stage" + std::to_string(stage) + ".jsonl");
}

fs::path RunLayout::traces(const std::string& split) const { return root / "traces" / (split + ".jsonl"); }

fs::path RunLayout::distill_dir(const std::string& selector, int k) const {
    return root / "distill" / (selector + "_k" + std::to_string(k));
}

} // namespace accsampler
