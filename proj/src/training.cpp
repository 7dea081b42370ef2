#include "accsampler/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace accsampler {

using nlohmann::json;

StageSchedule default_stage1_schedule() {
    StageSchedule s;
    s.epochs = 100;
    s.lr = 0.01;
    s.milestones = {50, 70, 90};
    s.batch_size = 64;
    return s;
}

StageSchedule default_stage2_schedule() {
    StageSchedule s;
    s.epochs = 20;
    s.lr = 1.45e-5;
    s.optimizer = "adam";
    s.batch_size = 16;
    return s;
}

StageSchedule default_stage3_schedule() {
    StageSchedule s;
    s.epochs = 30;
    s.lr = 0.01;
    s.batch_size = 16;
    s.patience = 5;
    return s;
}

double lr_at(const StageSchedule& schedule, int epoch) {
    if (epoch < 0 || epoch >= schedule.epochs) {
        throw ValidationError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(schedule.epochs) +
                              ")");
    }
    double lr = schedule.lr;
    for (int m : schedule.milestones) {
        if (epoch >= m) lr *= schedule.decay;
    }
    return lr;
}

double tau_at(const TauSchedule& schedule, int epoch) {
    if (schedule.epochs <= 0) return std::max(schedule.initial, schedule.minimum);
    const double frac = std::clamp(static_cast<double>(epoch) / schedule.epochs, 0.0, 1.0);
    return std::max(schedule.initial * (1.0 - frac), schedule.minimum);
}

std::vector<ParamGroup> StageConfig::trainable() const {
    switch (stage) {
    case 1: return {ParamGroup::Backbone, ParamGroup::FrameHead};
    case 2: return {ParamGroup::Aggregator, ParamGroup::Classifier};
    case 3: return {ParamGroup::Policy};
    default: throw ValidationError("unknown training stage " + std::to_string(stage));
    }
}

void to_json(json& j, const EpochLog& e) {
    j = json{{"stage", e.stage},       {"epoch", e.epoch},       {"lr", e.lr},
             {"tau", e.tau},           {"L_c", e.l_c},           {"L_b_soft", e.l_b_soft},
             {"L_b_hard", e.l_b_hard}, {"L_g_soft", e.l_g_soft}, {"L_g_hard", e.l_g_hard},
             {"L", e.total},           {"usage", e.usage},       {"val_accuracy", e.val_accuracy},
             {"val_gflops", e.val_gflops}};
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& e : log) out << json(e).dump() << '\n';
}

std::pair<std::vector<VideoSample>, std::vector<VideoSample>> split_validation(const std::vector<VideoSample>& videos,
                                                                              double fraction) {
    std::size_t held = 0;
    if (fraction > 0.0 && videos.size() > 1) {
        held = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * videos.size())));
        held = std::min(held, videos.size() - 1);
    }
    std::vector<VideoSample> train(videos.begin(), videos.end() - static_cast<std::ptrdiff_t>(held));
    std::vector<VideoSample> val(videos.end() - static_cast<std::ptrdiff_t>(held), videos.end());
    return {std::move(train), std::move(val)};
}

PolicyObjective policy_objective(AccSamplerNet& net, const std::vector<const VideoSample*>& batch,
                                 const CostTable& costs, const RolloutOptions& options, const LossWeights& weights,
                                 BalanceNorm norm, Rng& rng) {
    PolicyObjective obj;
    std::vector<torch::Tensor> logits;
    std::vector<torch::Tensor> soft;
    std::vector<int> labels;
    for (const auto* video : batch) {
        auto out = rollout(net, *video, costs, options, rng);
        logits.push_back(out.logits);
        soft.push_back(out.soft_actions);
        labels.push_back(video->label);
        obj.traces.push_back(std::move(out.trace));
    }
    obj.classification = classification_loss(torch::stack(logits), labels);
    obj.balance = balance_loss(soft, norm);
    obj.gflops = gflops_loss(soft, costs.ladder_costs(net->spec().ladder));
    obj.total = total_loss(obj.classification, obj.balance.to(obj.classification.scalar_type()),
                           obj.gflops.to(obj.classification.scalar_type()), weights);
    return obj;
}

namespace {

class StageOptimizer {
public:
    StageOptimizer(const StageSchedule& s, std::vector<torch::Tensor> params) : params_(std::move(params)) {
        if (s.optimizer == "sgd") {
            opt_ = std::make_unique<torch::optim::SGD>(
                params_, torch::optim::SGDOptions(s.lr).momentum(s.momentum).weight_decay(s.weight_decay));
        } else if (s.optimizer == "adam") {
            opt_ = std::make_unique<torch::optim::Adam>(params_,
                                                        torch::optim::AdamOptions(s.lr).weight_decay(s.weight_decay));
        } else {
            throw ValidationError("unknown optimizer '" + s.optimizer + "'");
        }
        clip_ = s.grad_clip;
    }

    void set_lr(double lr) {
        for (auto& group : opt_->param_groups()) group.options().set_lr(lr);
    }
    void zero_grad() { opt_->zero_grad(); }
    void step() {
        if (clip_ > 0.0) torch::nn::utils::clip_grad_norm_(params_, clip_);
        opt_->step();
    }

private:
    std::vector<torch::Tensor> params_;
    std::unique_ptr<torch::optim::Optimizer> opt_;
    double clip_ = 0.0;
};

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

void freeze_all_but(AccSamplerNet& net, const std::vector<ParamGroup>& trainable) {
    for (auto& p : net->parameters()) p.set_requires_grad(false);
    for (auto g : trainable) {
        for (auto& p : net->group_parameters(g)) p.set_requires_grad(true);
    }
}

std::vector<torch::Tensor> trainable_params(AccSamplerNet& net, const std::vector<ParamGroup>& groups) {
    std::vector<torch::Tensor> out;
    for (auto g : groups) {
        auto ps = net->group_parameters(g);
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

void report(const TrainingContext& ctx, const EpochLog& e) {
    if (ctx.progress == nullptr) return;
    auto& os = *ctx.progress;
    os << "stage " << e.stage << " epoch " << e.epoch << " lr " << e.lr << " L_c " << std::fixed
       << std::setprecision(4) << e.l_c;
    if (e.stage == 3) {
        os << " L_b " << e.l_b_soft << "/" << e.l_b_hard << " L_g " << std::setprecision(6) << e.l_g_soft << "/"
           << e.l_g_hard << " tau " << std::setprecision(3) << e.tau;
    }
    if (e.val_accuracy >= 0) os << " val_acc " << std::setprecision(2) << 100.0 * e.val_accuracy;
    if (e.val_gflops >= 0) os << " val_gflops " << std::setprecision(5) << e.val_gflops;
    os.unsetf(std::ios::fixed);
    os << std::setprecision(6) << '\n';
}

// Stage 1: per-frame classification with frame labels.
void train_frames(AccSamplerNet& net, const StageConfig& cfg, const TrainingContext& ctx,
                  const std::vector<VideoSample>& train, std::vector<EpochLog>& log, Rng& rng) {
    const int full = net->spec().ladder.full_resolution();
    std::vector<torch::Tensor> frames;
    std::vector<int64_t> labels;
    for (const auto& v : train) {
        for (const auto& f : v.frames) {
            if (!f.frame_label) throw ValidationError("stage 1 needs per-frame labels ('" + v.video_id + "')");
            auto raw = f.raw();
            if (raw.size(1) != full || raw.size(2) != full) raw = resize_square(f.pixels(), full).mul(255.0);
            frames.push_back(raw.to(torch::kFloat32));
            labels.push_back(*f.frame_label);
        }
    }
    if (frames.empty()) throw ValidationError("stage 1 has no training frames");
    auto all_frames = torch::stack(frames);
    auto all_labels = torch::tensor(labels, torch::kInt64);
    frames.clear();

    net->train();
    StageOptimizer opt(cfg.schedule, trainable_params(net, cfg.trainable()));
    const auto& res = net->spec().ladder.resolutions;
    const auto bs = static_cast<std::size_t>(std::max(1, cfg.schedule.batch_size));
    for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
        const double lr = lr_at(cfg.schedule, epoch);
        opt.set_lr(lr);
        auto order = shuffled(static_cast<std::size_t>(all_frames.size(0)), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += bs) {
            const std::size_t e = std::min(order.size(), b + bs);
            std::vector<int64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(e));
            auto index = torch::tensor(idx, torch::kInt64);
            auto x = all_frames.index_select(0, index).div(255.0);
            if (ctx.stage1_resolution_augment) {
                x = resize_square(x, res[static_cast<std::size_t>(rng() % res.size())]);
            }
            auto y = all_labels.index_select(0, index);
            opt.zero_grad();
            auto logits = net->frame_logits(net->features_any_resolution(x));
            auto loss = torch::nll_loss(torch::log_softmax(logits, 1), y);
            loss.backward();
            opt.step();
            loss_sum += loss.item<double>();
            ++batches;
        }
        EpochLog entry;
        entry.stage = 1;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.l_c = loss_sum / static_cast<double>(batches);
        entry.total = entry.l_c;
        report(ctx, entry);
        log.push_back(entry);
    }
    net->eval();
}

// Stage 2: recurrent aggregation + classification from clip labels. Part of
// each batch follows dense full-resolution rollouts (on cached features), the
// rest follows uniformly random ladder actions so the aggregator also sees
// fused, downscaled inputs.
void train_aggregator(AccSamplerNet& net, const StageConfig& cfg, const TrainingContext& ctx,
                      const std::vector<VideoSample>& train, const std::vector<VideoSample>& val,
                      std::vector<EpochLog>& log, Rng& rng) {
    net->eval();
    const int full = net->spec().ladder.full_resolution();
    std::vector<torch::Tensor> dense_features;
    {
        torch::NoGradGuard guard;
        for (const auto& v : train) {
            auto frames = resize_square(v.stack(0, v.num_frames()), full);
            dense_features.push_back(net->extract_features(frames));
        }
    }
    StageOptimizer opt(cfg.schedule, trainable_params(net, cfg.trainable()));
    const auto num_actions = static_cast<int>(net->spec().ladder.size());
    Rng action_rng(ctx.seed ^ 0x5eedULL);
    RolloutOptions random_opts;
    random_opts.mode = RolloutMode::Train;
    random_opts.mixup = ctx.mixup;
    random_opts.num_stations = 0;
    random_opts.forced_action = [&](const DecisionContext&) {
        return static_cast<int>(action_rng() % static_cast<uint64_t>(num_actions));
    };
    const auto bs = static_cast<std::size_t>(std::max(1, cfg.schedule.batch_size));
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
        const double lr = lr_at(cfg.schedule, epoch);
        opt.set_lr(lr);
        auto order = shuffled(train.size(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += bs) {
            const std::size_t e = std::min(order.size(), b + bs);
            std::vector<torch::Tensor> logits;
            std::vector<int> labels;
            std::map<int, std::vector<std::size_t>> dense_by_len;
            for (std::size_t i = b; i < e; ++i) {
                const auto& v = train[order[i]];
                if (coin(rng) < ctx.stage2_random_action_prob) {
                    logits.push_back(rollout(net, v, ctx.costs, random_opts, rng).logits);
                    labels.push_back(v.label);
                } else {
                    dense_by_len[v.num_frames()].push_back(order[i]);
                }
            }
            for (const auto& [len, members] : dense_by_len) {
                std::vector<torch::Tensor> feats;
                for (auto m : members) {
                    feats.push_back(dense_features[m]);
                    labels.push_back(train[m].label);
                }
                auto seq = torch::stack(feats);  // [b, N, D]
                auto state = net->initial_state(static_cast<int>(members.size()));
                for (int t = 0; t < len; ++t) state = net->recurrent_step(seq.select(1, t), state);
                auto out = net->classify(state);
                for (int64_t r = 0; r < out.size(0); ++r) logits.push_back(out[r]);
            }
            opt.zero_grad();
            auto loss = classification_loss(torch::stack(logits), labels);
            loss.backward();
            opt.step();
            loss_sum += loss.item<double>();
            ++batches;
        }
        EpochLog entry;
        entry.stage = 2;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.l_c = loss_sum / static_cast<double>(batches);
        entry.total = entry.l_c;
        if (!val.empty()) {
            auto opts = dense_baseline_options();
            int correct = 0;
            for (const auto& v : val) correct += rollout(net, v, ctx.costs, opts, rng).trace.prediction == v.label;
            entry.val_accuracy = static_cast<double>(correct) / static_cast<double>(val.size());
        }
        report(ctx, entry);
        log.push_back(entry);
    }
}

std::pair<double, double> validate_policy(AccSamplerNet& net, const TrainingContext& ctx,
                                          const std::vector<VideoSample>& val) {
    RolloutOptions opts;
    opts.mode = RolloutMode::Eval;
    opts.mixup = ctx.mixup;
    opts.num_stations = ctx.num_stations;
    opts.include_station_cost = ctx.include_station_cost;
    Rng unused(0);
    int correct = 0;
    double cost = 0.0;
    for (const auto& v : val) {
        auto out = rollout(net, v, ctx.costs, opts, unused);
        correct += out.trace.prediction == v.label;
        cost += out.trace.total_cost();
    }
    return {static_cast<double>(correct) / static_cast<double>(val.size()), cost / static_cast<double>(val.size())};
}

// Stage 3: policy head under L_c + beta L_b + gamma L_g with Gumbel-softmax
// straight-through gradients and an annealed temperature.
void train_policy(AccSamplerNet& net, const StageConfig& cfg, const TrainingContext& ctx,
                  const std::vector<VideoSample>& train, const std::vector<VideoSample>& val,
                  std::vector<EpochLog>& log, Rng& rng) {
    net->eval();
    auto params = trainable_params(net, cfg.trainable());
    StageOptimizer opt(cfg.schedule, params);
    const auto bs = static_cast<std::size_t>(std::max(1, cfg.schedule.batch_size));
    const int num_actions = static_cast<int>(net->spec().ladder.size());
    TauSchedule tau = ctx.tau;
    tau.epochs = cfg.schedule.epochs;

    double best_acc = -1.0;
    double best_cost = 0.0;
    int since_best = 0;
    std::vector<torch::Tensor> best_params;

    for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
        const double lr = lr_at(cfg.schedule, epoch);
        opt.set_lr(lr);
        RolloutOptions opts;
        opts.mode = RolloutMode::Train;
        opts.tau = tau_at(tau, epoch);
        opts.mixup = ctx.mixup;
        opts.num_stations = ctx.num_stations;
        opts.include_station_cost = ctx.include_station_cost;

        auto order = shuffled(train.size(), rng);
        EpochLog entry;
        entry.stage = 3;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.tau = opts.tau;
        std::vector<EpisodeTrace> traces;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += bs) {
            std::vector<const VideoSample*> batch;
            for (std::size_t i = b; i < std::min(order.size(), b + bs); ++i) batch.push_back(&train[order[i]]);
            opt.zero_grad();
            auto obj = policy_objective(net, batch, ctx.costs, opts, ctx.weights, ctx.balance_norm, rng);
            obj.total.backward();
            opt.step();
            entry.l_c += obj.classification.item<double>();
            entry.l_b_soft += obj.balance.item<double>();
            entry.l_g_soft += obj.gflops.item<double>();
            entry.total += obj.total.item<double>();
            for (auto& t : obj.traces) traces.push_back(std::move(t));
            ++batches;
        }
        const auto nb = static_cast<double>(batches);
        entry.l_c /= nb;
        entry.l_b_soft /= nb;
        entry.l_g_soft /= nb;
        entry.total /= nb;
        entry.l_b_hard = balance_loss_hard(traces, num_actions, ctx.balance_norm);
        entry.l_g_hard = gflops_loss_hard(traces);
        std::vector<torch::Tensor> hard;
        for (const auto& t : traces) hard.push_back(hard_actions(t, num_actions));
        auto usage = action_usage(hard);
        entry.usage.assign(usage.data_ptr<double>(), usage.data_ptr<double>() + usage.numel());

        bool stop = false;
        if (!val.empty()) {
            auto [acc, cost] = validate_policy(net, ctx, val);
            entry.val_accuracy = acc;
            entry.val_gflops = cost;
            // Accuracy first; equal accuracy at lower compute also counts as progress.
            if (acc > best_acc || (acc == best_acc && cost < best_cost)) {
                best_acc = acc;
                best_cost = cost;
                since_best = 0;
                best_params.clear();
                for (const auto& p : params) best_params.push_back(p.detach().clone());
            } else if (cfg.schedule.patience > 0 && ++since_best >= cfg.schedule.patience) {
                stop = true;
            }
        }
        report(ctx, entry);
        log.push_back(entry);
        if (stop) break;
    }
    if (!best_params.empty()) {
        torch::NoGradGuard guard;
        for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(best_params[i]);
    }
}

// Rebuilds the net when the requested policy layout differs from the
// checkpoint's (the policy head is untrained before stage 3).
AccSamplerNet adopt_policy_layout(AccSamplerNet net, const ModelSpec& wanted) {
    const auto& have = net->spec();
    if (have.station_input == wanted.station_input && have.gn_groups == wanted.gn_groups) return net;
    ModelSpec spec = have;
    spec.station_input = wanted.station_input;
    spec.gn_groups = wanted.gn_groups;
    AccSamplerNet fresh(spec);
    fresh->to(net->dtype());
    torch::NoGradGuard guard;
    auto src = net->named_parameters();
    for (auto& p : fresh->named_parameters()) {
        if (p.key().rfind("policy_", 0) == 0) continue;
        p.value().copy_(src[p.key()]);
    }
    auto src_buf = net->named_buffers();
    for (auto& b : fresh->named_buffers()) b.value().copy_(src_buf[b.key()]);
    return fresh;
}

} // namespace

StageResult run_stage(const StageConfig& config, const TrainingContext& ctx, const std::vector<VideoSample>& train,
                      const std::vector<VideoSample>& validation,
                      const std::optional<std::filesystem::path>& checkpoint_in) {
    if (train.empty()) throw ValidationError("stage " + std::to_string(config.stage) + " has no training videos");
    const auto trainable = config.trainable();
    StageResult result;
    if (config.stage == 1 && !checkpoint_in) {
        torch::manual_seed(ctx.seed);
        result.net = AccSamplerNet(ctx.spec);
    } else {
        if (!checkpoint_in) {
            throw PrerequisiteError("stage " + std::to_string(config.stage) + " needs the stage " +
                                    std::to_string(config.prerequisite()) + " checkpoint");
        }
        auto [net, info] = load_checkpoint(*checkpoint_in);
        if (info.stage < config.prerequisite()) {
            throw PrerequisiteError("checkpoint " + checkpoint_in->string() + " is from stage " +
                                    std::to_string(info.stage) + ", stage " + std::to_string(config.stage) +
                                    " needs stage " + std::to_string(config.prerequisite()));
        }
        result.net = config.stage == 3 ? adopt_policy_layout(net, ctx.spec) : net;
    }
    torch::manual_seed(ctx.seed + static_cast<uint64_t>(config.stage));
    freeze_all_but(result.net, trainable);
    Rng rng(ctx.seed * 1000003ULL + static_cast<uint64_t>(config.stage));

    switch (config.stage) {
    case 1: train_frames(result.net, config, ctx, train, result.log, rng); break;
    case 2: train_aggregator(result.net, config, ctx, train, validation, result.log, rng); break;
    case 3: train_policy(result.net, config, ctx, train, validation, result.log, rng); break;
    default: throw ValidationError("unknown training stage " + std::to_string(config.stage));
    }
    for (auto& p : result.net->parameters()) p.set_requires_grad(true);
    result.info.spec = result.net->spec();
    result.info.stage = config.stage;
    return result;
}

} // namespace accsampler
