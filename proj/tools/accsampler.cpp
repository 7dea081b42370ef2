// Command-line driver: data preparation, staged training, rollouts,
// distillation, evaluation and reporting over one run directory.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "accsampler/config.hpp"

using namespace accsampler;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { Ok = 0, Usage = 1, Missing = 2, Runtime = 3 };

struct Globals {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;
    std::optional<uint64_t> seed;
};

RunConfig resolve_config(const Globals& g) {
    json j = json::object();
    std::string path = g.config_path;
    if (path.empty()) {
        if (const char* env = std::getenv("ACCSAMPLER_CONFIG")) path = env;
    }
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("cannot parse config " + path + ": " + e.what());
        }
    }
    for (const auto& o : g.overrides) apply_override(j, o);
    if (!g.output_dir.empty()) j["output_dir"] = g.output_dir;
    if (g.seed) j["seed"] = *g.seed;
    try {
        return config_from_json(j);
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
}

void echo_config(const RunConfig& c, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir / "config.json");
    out << to_json(c).dump(2) << '\n';
}

std::string require_key(const std::string& value, const std::string& key) {
    if (value.empty()) throw ConfigError("config key '" + key + "' is not set");
    return value;
}

CostTable cost_table_for(const RunConfig& c, const RunLayout& layout) {
    const auto spec = c.model_spec();
    auto table = build_cost_table(spec.backbone, spec.ladder, spec.hidden_dim);
    write_cost_table(table, layout.cost_table());
    return table;
}

std::vector<VideoSample> load_split(const fs::path& manifest) {
    if (!fs::exists(manifest)) throw PrerequisiteError("missing manifest " + manifest.string() + " (run synth or prepare)");
    return load_videos(manifest);
}

AccSamplerNet load_trained(const fs::path& path, int min_stage) {
    auto [net, info] = load_checkpoint(path);
    if (info.stage < min_stage) {
        throw PrerequisiteError("checkpoint " + path.string() + " is from stage " + std::to_string(info.stage) +
                                ", need stage " + std::to_string(min_stage));
    }
    net->eval();
    return net;
}

RolloutOptions policy_options(const RunConfig& c, RolloutMode mode) {
    RolloutOptions o;
    o.mode = mode;
    o.mixup = c.mixup;
    o.num_stations = c.stations;
    o.include_station_cost = c.station_cost;
    o.tau = c.train.tau_minimum;
    return o;
}

ManifestEntry entry_for(const VideoSample& v, const fs::path& out_dir) {
    ManifestEntry e;
    e.video_id = v.video_id;
    e.label = v.label;
    const auto base = fs::absolute(out_dir);
    for (const auto& f : v.frames) {
        e.frames.push_back(fs::absolute(f.path()).lexically_normal().lexically_relative(base).generic_string());
        if (f.frame_label) e.frame_labels.push_back(*f.frame_label);
    }
    if (e.frame_labels.size() != e.frames.size()) e.frame_labels.clear();
    return e;
}

int cmd_prepare(const RunConfig& c) {
    RunLayout layout{c.output_dir};
    for (const auto& [key, src, dst, split] :
         {std::tuple{"data.stream_train", c.data.stream_train, layout.train_manifest(c), Split::Train},
          std::tuple{"data.stream_test", c.data.stream_test, layout.test_manifest(c), Split::Test}}) {
        const fs::path stream_path = require_key(src, key);
        auto streams = to_videos(load_manifest(stream_path), stream_path.parent_path());
        Manifest out;
        out.split = split;
        for (const auto& s : streams) {
            for (const auto& clip : build_clips(s.frames, c.data.clip_len, c.data.clip_stride, s.video_id)) {
                out.entries.push_back(entry_for(clip, dst.parent_path()));
            }
        }
        write_manifest(out, dst);
        std::cout << "wrote " << out.entries.size() << " clips to " << dst.string() << '\n';
    }
    echo_config(c, layout.root);
    return Ok;
}

int cmd_synth(const RunConfig& c) {
    RunLayout layout{c.output_dir};
    auto data = generate_synthetic(c.synthetic);
    auto [train, test] = write_synthetic(data, layout.data_dir());
    std::cout << "wrote " << train.entries.size() << " train and " << test.entries.size() << " test videos to "
              << layout.data_dir().string() << '\n';
    echo_config(c, layout.root);
    return Ok;
}

StageSchedule schedule_for(const RunConfig& c, int stage) {
    switch (stage) {
    case 1: return c.train.stage1;
    case 2: return c.train.stage2;
    case 3: return c.train.stage3;
    default: throw ConfigError("--stage must be 1, 2 or 3");
    }
}

int cmd_train(const RunConfig& c, int stage) {
    RunLayout layout{c.output_dir};
    StageConfig sc{stage, schedule_for(c, stage)};
    std::optional<fs::path> prev;
    if (stage > 1) {
        prev = layout.checkpoint(stage - 1);
        if (!fs::exists(*prev)) throw PrerequisiteError("missing checkpoint " + prev->string());
    }
    auto ctx = c.training_context(cost_table_for(c, layout));
    ctx.progress = &std::cerr;
    auto videos = load_split(layout.train_manifest(c));
    auto [train, val] = split_validation(videos, c.data.validation_fraction);
    auto result = run_stage(sc, ctx, train, val, prev);
    result.info.extra = json{{"seed", c.seed}};
    save_checkpoint(result.net, result.info, layout.checkpoint(stage));
    write_training_log(result.log, layout.training_log(stage));
    echo_config(c, layout.root);
    std::cout << "saved " << layout.checkpoint(stage).string() << '\n';
    return Ok;
}

RolloutMode rollout_mode(const std::string& s) {
    if (s == "sample") return RolloutMode::Sample;
    if (s == "eval") return RolloutMode::Eval;
    throw ConfigError("rollout mode must be 'sample' or 'eval'");
}

int cmd_rollout(const RunConfig& c, const std::string& mode_flag) {
    RunLayout layout{c.output_dir};
    auto net = load_trained(layout.checkpoint(3), 3);
    auto costs = cost_table_for(c, layout);
    auto opts = policy_options(c, rollout_mode(mode_flag.empty() ? c.distill.rollout : mode_flag));
    for (const auto& [split, manifest] :
         {std::pair{std::string("train"), layout.train_manifest(c)}, std::pair{std::string("test"), layout.test_manifest(c)}}) {
        auto videos = load_split(manifest);
        Rng rng(c.distill.seed);
        std::vector<EpisodeTrace> traces;
        for (const auto& v : videos) traces.push_back(rollout(net, v, costs, opts, rng).trace);
        write_traces(traces, layout.traces(split));
        std::cout << "wrote " << traces.size() << " traces to " << layout.traces(split).string() << '\n';
    }
    echo_config(c, layout.root);
    return Ok;
}

int cmd_distill(const RunConfig& c, const std::string& selector_name, int k) {
    RunLayout layout{c.output_dir};
    const auto selector = selector_from_string(selector_name);
    const auto variant = score_variant_from_string(c.distill.variant);
    const auto decay = score_decay_from_string(c.distill.decay);
    const auto dir = layout.distill_dir(selector_name, k);
    for (const auto& [split, manifest_path] :
         {std::pair{std::string("train"), layout.train_manifest(c)}, std::pair{std::string("test"), layout.test_manifest(c)}}) {
        if (!fs::exists(manifest_path)) throw PrerequisiteError("missing manifest " + manifest_path.string());
        auto manifest = load_manifest(manifest_path);
        std::vector<SelectionResult> selections;
        std::vector<json> scores;
        if (selector == SelectorKind::AccSampler) {
            auto traces = load_traces(layout.traces(split));
            for (const auto& t : traces) {
                auto fs_ = frame_scores(t, variant, c.ladder, decay, c.distill.decay_rate);
                selections.push_back(select_topk(fs_, k));
                scores.push_back(json{{"video_id", t.video_id}, {"variant", to_string(variant)}, {"scores", fs_.scores}});
            }
        } else {
            for (const auto& e : manifest.entries) {
                const int n = static_cast<int>(e.frames.size());
                selections.push_back(selector == SelectorKind::Uniform
                                         ? uniform_select(e.video_id, n, k)
                                         : random_select(e.video_id, n, k, c.distill.seed));
            }
        }
        write_selections(selections, dir / ("selections_" + split + ".jsonl"));
        if (!scores.empty()) {
            std::ofstream out(dir / ("scores_" + split + ".jsonl"));
            for (const auto& s : scores) out << s.dump() << '\n';
        }
        write_distilled(manifest, manifest_path.parent_path(), selections, dir / (split + ".jsonl"));
    }
    echo_config(c, dir);
    std::cout << "wrote distilled manifests to " << dir.string() << '\n';
    return Ok;
}

ModelRow row_for(const std::string& name, const EvalMetrics& test, const EvalMetrics& train) {
    return {name, 100.0 * test.accuracy, 100.0 * train.accuracy, test.gflops_per_video, test.gflops_per_frame,
            test.usage};
}

int cmd_eval(const RunConfig& c, bool model_metrics, bool downstream) {
    RunLayout layout{c.output_dir};
    EvalReport report;
    report.config = to_json(c);
    if (model_metrics) {
        auto net = load_trained(layout.checkpoint(3), 3);
        auto costs = cost_table_for(c, layout);
        auto test = load_split(layout.test_manifest(c));
        auto train = load_split(layout.train_manifest(c));
        auto dense = dense_baseline_options();
        auto policy = policy_options(c, RolloutMode::Eval);
        auto dense_test = evaluate(net, test, costs, dense);
        auto dense_train = evaluate(net, train, costs, dense);
        auto pol_test = evaluate(net, test, costs, policy);
        auto pol_train = evaluate(net, train, costs, policy);
        report.models.push_back(row_for("dense", dense_test, dense_train));
        report.models.push_back(row_for("accsampler", pol_test, pol_train));
        write_traces(pol_test.traces, layout.eval_dir() / "traces_test.jsonl");
    }
    if (downstream) {
        for (const auto& sel : c.distill.selectors) {
            for (int k : c.distill.k_values) {
                const auto dir = layout.distill_dir(sel, k);
                if (!fs::exists(dir / "train.jsonl") || !fs::exists(dir / "test.jsonl")) {
                    std::cerr << "skipping " << sel << " K=" << k << ": no distilled manifests in " << dir.string()
                              << '\n';
                    continue;
                }
                auto train = load_videos(dir / "train.jsonl");
                auto test = load_videos(dir / "test.jsonl");
                double sum = 0.0;
                for (auto seed : c.downstream.seeds) {
                    sum += train_downstream(train, test, c.downstream_config(seed)).test_accuracy;
                }
                const double acc = 100.0 * sum / static_cast<double>(c.downstream.seeds.size());
                report.downstream[sel][k] = acc;
                std::cerr << "downstream " << sel << " K=" << k << ": " << acc << "%\n";
            }
        }
    }
    fs::create_directories(layout.eval_dir());
    {
        std::ofstream out(layout.eval_dir() / "metrics.json");
        out << json(report).dump(2) << '\n';
    }
    auto files = emit_report(report, layout.eval_dir());
    echo_config(c, layout.eval_dir());
    std::cout << "wrote " << files.table.string() << '\n';
    return Ok;
}

int cmd_report(const RunConfig& c) {
    RunLayout layout{c.output_dir};
    const auto metrics = layout.eval_dir() / "metrics.json";
    std::ifstream in(metrics);
    if (!in) throw PrerequisiteError("missing " + metrics.string() + " (run eval first)");
    auto report = json::parse(in).get<EvalReport>();
    auto files = emit_report(report, layout.eval_dir());
    std::cout << "wrote " << files.table.string() << '\n';
    return Ok;
}

} // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"AccSampler: adaptive clip compression, frame sampling and distillation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("-c,--config", g.config_path, "Run config (JSON); defaults to $ACCSAMPLER_CONFIG");
    app.add_option("--set", g.overrides, "Override a config key: dotted.key=value (repeatable)");
    app.add_option("-o,--output-dir", g.output_dir, "Override output_dir");
    app.add_option("--seed", g.seed, "Override seed");

    auto* prepare = app.add_subcommand("prepare", "Cut labelled frame streams into fixed-length clips");
    auto* synth = app.add_subcommand("synth", "Generate the synthetic event-video dataset");
    auto* train = app.add_subcommand("train", "Run one training stage");
    int stage = 0;
    train->add_option("--stage", stage, "Stage 1, 2 or 3")->required()->check(CLI::Range(1, 3));
    auto* roll = app.add_subcommand("rollout", "Write rollout traces for both splits");
    std::string mode;
    roll->add_option("--mode", mode, "sample | eval (default: distill.rollout)");
    auto* distill = app.add_subcommand("distill", "Select K frames per video and write distilled manifests");
    std::string selector;
    int k = 0;
    distill->add_option("--selector", selector, "accsampler | uniform | random")
        ->required()
        ->check(CLI::IsMember({"accsampler", "uniform", "random"}));
    distill->add_option("--k", k, "Frames kept per video")->required()->check(CLI::PositiveNumber);
    auto* eval = app.add_subcommand("eval", "Evaluate the policy, the dense baseline and distilled sets");
    bool skip_model = false;
    bool skip_downstream = false;
    eval->add_flag("--skip-model", skip_model, "Skip the classification metrics");
    eval->add_flag("--skip-downstream", skip_downstream, "Skip downstream training on distilled sets");
    auto* report = app.add_subcommand("report", "Re-emit report files from eval/metrics.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? Ok : Usage;
    }

    try {
        const RunConfig cfg = resolve_config(g);
        if (*prepare) return cmd_prepare(cfg);
        if (*synth) return cmd_synth(cfg);
        if (*train) return cmd_train(cfg, stage);
        if (*roll) return cmd_rollout(cfg, mode);
        if (*distill) return cmd_distill(cfg, selector, k);
        if (*eval) return cmd_eval(cfg, !skip_model, !skip_downstream);
        if (*report) return cmd_report(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Usage;
    } catch (const PrerequisiteError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Missing;
    } catch (const MissingPathError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Missing;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Runtime;
    }
    return Usage;
}
