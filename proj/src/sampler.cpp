#include "accsampler/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace accsampler {

using nlohmann::json;

std::vector<int> select_station_points(int num_frames, int num_stations) {
    if (num_frames < 1 || num_stations < 0) throw ValidationError("station selection needs N >= 1 and M >= 0");
    std::vector<int> idx;
    for (int m = 1; m <= num_stations; ++m) {
        const int i = static_cast<int>((static_cast<int64_t>(m) * num_frames) / (num_stations + 1));
        if (idx.empty() || i > idx.back()) idx.push_back(i);
    }
    return idx;
}

std::size_t nearest_future_station_index(int position, const StationSet& stations) {
    if (stations.empty()) throw ValidationError("no station points; use the no-station policy variant");
    for (std::size_t i = 0; i < stations.size(); ++i) {
        if (stations[i].index >= position) return i;
    }
    return stations.size() - 1;
}

const StationFeature& nearest_future_station(int position, const StationSet& stations) {
    return stations[nearest_future_station_index(position, stations)];
}

torch::Tensor sample_gumbel(int64_t n, Rng& rng) {
    auto g = torch::empty({n}, torch::kFloat64);
    auto acc = g.accessor<double, 1>();
    for (int64_t i = 0; i < n; ++i) {
        double u = std::generate_canonical<double, 53>(rng);
        u = std::clamp(u, std::numeric_limits<double>::min(), 1.0 - std::numeric_limits<double>::epsilon());
        acc[i] = -std::log(-std::log(u));
    }
    return g;
}

int gumbel_max(const torch::Tensor& log_probs, const torch::Tensor& noise) {
    auto lp = log_probs.detach().to(torch::kFloat64).reshape({-1});
    if (!torch::isfinite(lp).any().item<bool>()) throw ValidationError("gumbel_max: every probability is zero");
    auto perturbed = lp + noise.to(torch::kFloat64).reshape({-1});
    return static_cast<int>(perturbed.argmax().item<int64_t>());
}

int gumbel_max(const torch::Tensor& log_probs, Rng& rng) {
    return gumbel_max(log_probs, sample_gumbel(log_probs.numel(), rng));
}

torch::Tensor gumbel_softmax(const torch::Tensor& log_probs, double tau, const torch::Tensor& noise) {
    if (!(tau > 0.0)) throw ValidationError("gumbel_softmax: temperature must be > 0");
    return torch::softmax((log_probs + noise.to(log_probs.scalar_type())) / tau, -1);
}

torch::Tensor gumbel_softmax(const torch::Tensor& log_probs, double tau, Rng& rng) {
    return gumbel_softmax(log_probs, tau, sample_gumbel(log_probs.size(-1), rng));
}

double EpisodeTrace::step_cost() const {
    std::map<double, int> uses;
    for (const auto& s : steps) ++uses[s.cost];
    double c = 0.0;
    for (const auto& [cost, n] : uses) c += n * cost;
    return c;
}

void EpisodeTrace::validate_partition() const {
    int pos = 0;
    for (const auto& s : steps) {
        if (s.start != pos || s.end <= s.start) {
            throw ValidationError("trace '" + video_id + "' spans overlap or leave a gap at frame " +
                                  std::to_string(pos));
        }
        pos = s.end;
    }
    if (pos != num_frames) throw ValidationError("trace '" + video_id + "' does not cover every frame");
}

void to_json(json& j, const StepRecord& s) {
    j = json{{"step", s.step},         {"start", s.start},       {"end", s.end},   {"clip_action", s.clip_action},
             {"resolution", s.resolution}, {"cost", s.cost},     {"station", s.station},
             {"probs", s.probs},       {"soft", s.soft},         {"decision", s.decision}};
}

void from_json(const json& j, StepRecord& s) {
    s.step = j.at("step").get<int>();
    s.start = j.at("start").get<int>();
    s.end = j.at("end").get<int>();
    s.clip_action = j.at("clip_action").get<int>();
    s.resolution = j.at("resolution").get<int>();
    s.cost = j.at("cost").get<double>();
    s.station = j.at("station").get<int>();
    s.probs = j.at("probs").get<std::vector<double>>();
    s.soft = j.at("soft").get<std::vector<double>>();
    s.decision = j.at("decision").get<int>();
}

void to_json(json& j, const EpisodeTrace& t) {
    j = json{{"video_id", t.video_id},
             {"num_frames", t.num_frames},
             {"label", t.label},
             {"prediction", t.prediction},
             {"station_indices", t.station_indices},
             {"station_cost", t.station_cost},
             {"total_cost", t.total_cost()},
             {"steps", t.steps}};
}

void from_json(const json& j, EpisodeTrace& t) {
    t.video_id = j.at("video_id").get<std::string>();
    t.num_frames = j.at("num_frames").get<int>();
    t.label = j.at("label").get<int>();
    t.prediction = j.at("prediction").get<int>();
    t.station_indices = j.at("station_indices").get<std::vector<int>>();
    t.station_cost = j.at("station_cost").get<double>();
    t.steps = j.at("steps").get<std::vector<StepRecord>>();
}

void write_traces(const std::vector<EpisodeTrace>& traces, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& t : traces) out << json(t).dump() << '\n';
}

std::vector<EpisodeTrace> load_traces(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PrerequisiteError("missing trace file: " + path.string());
    std::vector<EpisodeTrace> traces;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            traces.push_back(json::parse(line).get<EpisodeTrace>());
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed trace: ") + e.what(), line_no);
        }
    }
    return traces;
}

namespace {

std::vector<double> to_vector(const torch::Tensor& t) {
    auto d = t.detach().to(torch::kFloat64).contiguous();
    return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

} // namespace

RolloutOutput rollout(AccSamplerNet& net, const VideoSample& video, const CostTable& costs,
                      const RolloutOptions& options, Rng& rng) {
    const auto& ladder = net->spec().ladder;
    const int num_actions = static_cast<int>(ladder.size());
    const int n = video.num_frames();
    if (n < 1) throw ValidationError("rollout: video '" + video.video_id + "' has no frames");

    const bool train = options.mode == RolloutMode::Train;
    const bool sampled = options.mode != RolloutMode::Eval;
    std::optional<torch::NoGradGuard> no_grad;
    if (!train) no_grad.emplace();
    const Phase mix_phase = train ? Phase::Train : Phase::Eval;

    RolloutOutput out;
    auto& trace = out.trace;
    trace.video_id = video.video_id;
    trace.num_frames = n;
    trace.label = video.label;

    // Station features at full resolution, extracted once.
    StationSet stations;
    const int full = ladder.full_resolution();
    if (options.num_stations > 0) {
        trace.station_indices = select_station_points(n, options.num_stations);
        std::vector<torch::Tensor> frames;
        for (int idx : trace.station_indices) frames.push_back(resize_square(video.frames[idx].pixels(), full));
        torch::Tensor feats;
        {
            torch::NoGradGuard guard;
            feats = net->extract_features(torch::stack(frames));
        }
        for (std::size_t m = 0; m < trace.station_indices.size(); ++m) {
            stations.push_back({trace.station_indices[m], feats[static_cast<int64_t>(m)]});
        }
        if (options.include_station_cost) {
            trace.station_cost = static_cast<double>(stations.size()) * costs.at(full);
        }
    }

    const bool use_policy = !options.forced_action;
    if (use_policy && net->spec().station_input && stations.empty()) {
        throw ValidationError("policy expects station features but the rollout has none");
    }

    auto state = net->initial_state();
    std::vector<torch::Tensor> soft_rows;
    torch::Tensor prev_weights;  // per-candidate weights of the pending decision (train only)
    int pending = 0;             // ladder index that sizes the next clip; step 0 is one full-res frame
    int pos = 0;

    while (pos < n) {
        StepRecord rec;
        rec.step = static_cast<int>(trace.steps.size());
        rec.start = pos;

        if (train && use_policy && rec.step > 0) {
            // Every candidate clip is fused and aggregated so the soft action
            // weights can carry a gradient; the chosen one drives the forward.
            std::vector<torch::Tensor> feats;
            for (int j = 0; j < num_actions; ++j) {
                const int end = std::min(pos + ladder.actions[j], n);
                const double lam = sample_lambda(options.mixup, mix_phase, rng);
                auto fused = fuse_clip(video.stack(pos, end), lam, ladder.resolutions[j]);
                feats.push_back(net->extract_features(fused));
            }
            // Resolutions differ, so features are stacked after extraction.
            auto candidates =
                net->recurrent_step(torch::stack(feats), {state.h.unsqueeze(0).expand({num_actions, -1}), state.step});
            state = {(prev_weights.to(candidates.h.scalar_type()).unsqueeze(1) * candidates.h).sum(0),
                     candidates.step};
        } else {
            const int end = std::min(pos + ladder.actions[pending], n);
            const double lam = sample_lambda(options.mixup, mix_phase, rng);
            auto fused = fuse_clip(video.stack(pos, end), lam, ladder.resolutions[pending]);
            state = net->recurrent_step(net->extract_features(fused), state);
        }

        rec.clip_action = ladder.actions[pending];
        rec.resolution = ladder.resolutions[pending];
        rec.end = std::min(pos + rec.clip_action, n);
        rec.cost = costs.at(rec.resolution);
        pos = rec.end;

        const DecisionContext ctx{rec.step, pos, n};
        if (!use_policy) {
            rec.decision = options.forced_action(ctx);
            if (rec.decision < 0 || rec.decision >= num_actions) throw ValidationError("forced action off the ladder");
            auto onehot = torch::zeros({num_actions}, torch::kFloat64);
            onehot[rec.decision] = 1.0;
            rec.probs = to_vector(onehot);
            if (sampled) rec.soft = rec.probs;
            soft_rows.push_back(onehot.to(net->dtype()));
            prev_weights = onehot;
        } else {
            const StationFeature* station = nullptr;
            if (net->spec().station_input) {
                station = &nearest_future_station(pos, stations);
                rec.station = station->index;
            }
            auto log_probs = torch::log_softmax(net->policy_forward(state, station), -1);
            rec.probs = to_vector(log_probs.exp());
            if (!sampled) {
                rec.decision = static_cast<int>(log_probs.argmax().item<int64_t>());
                soft_rows.push_back(log_probs.exp());
            } else {
                auto noise = sample_gumbel(num_actions, rng);
                rec.decision = gumbel_max(log_probs, noise);
                auto soft = gumbel_softmax(log_probs, options.tau, noise);
                rec.soft = to_vector(soft);
                soft_rows.push_back(soft);
                if (train) {
                    auto hard = torch::zeros_like(soft);
                    hard[rec.decision] = 1.0;
                    prev_weights = options.gradient == GradientPath::StraightThrough
                                       ? hard + soft - soft.detach()
                                       : soft;
                }
            }
        }
        pending = rec.decision;
        trace.steps.push_back(std::move(rec));
    }

    out.logits = net->classify(state);
    out.soft_actions = torch::stack(soft_rows);
    trace.prediction = static_cast<int>(out.logits.detach().argmax().item<int64_t>());
    return out;
}

RolloutOptions dense_baseline_options() {
    RolloutOptions o;
    o.mode = RolloutMode::Eval;
    o.num_stations = 0;
    o.forced_action = [](const DecisionContext&) { return 0; };
    return o;
}

} // namespace accsampler
