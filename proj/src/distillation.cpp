#include "accsampler/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

namespace accsampler {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(ScoreVariant v) {
    switch (v) {
    case ScoreVariant::S1: return "S1";
    case ScoreVariant::S2: return "S2";
    case ScoreVariant::S3: return "S3";
    }
    return "S1";
}

ScoreVariant score_variant_from_string(const std::string& s) {
    if (s == "S1" || s == "s1") return ScoreVariant::S1;
    if (s == "S2" || s == "s2") return ScoreVariant::S2;
    if (s == "S3" || s == "s3") return ScoreVariant::S3;
    throw ValidationError("unknown score variant '" + s + "' (expected S1, S2 or S3)");
}

std::string to_string(ScoreDecay d) { return d == ScoreDecay::Geometric ? "geometric" : "arithmetic"; }

ScoreDecay score_decay_from_string(const std::string& s) {
    if (s == "geometric") return ScoreDecay::Geometric;
    if (s == "arithmetic") return ScoreDecay::Arithmetic;
    throw ValidationError("unknown score decay '" + s + "' (expected geometric or arithmetic)");
}

std::string to_string(SelectorKind k) {
    switch (k) {
    case SelectorKind::AccSampler: return "accsampler";
    case SelectorKind::Uniform: return "uniform";
    case SelectorKind::Random: return "random";
    }
    return "accsampler";
}

SelectorKind selector_from_string(const std::string& s) {
    if (s == "accsampler") return SelectorKind::AccSampler;
    if (s == "uniform") return SelectorKind::Uniform;
    if (s == "random") return SelectorKind::Random;
    throw ValidationError("unknown selector '" + s + "' (expected accsampler, uniform or random)");
}

double preference_score(const std::vector<double>& a, const ActionLadder& ladder) {
    if (a.size() != ladder.size()) {
        throw ValidationError("action vector has " + std::to_string(a.size()) + " entries, ladder has " +
                              std::to_string(ladder.size()));
    }
    double mass = 0.0;
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j] < 0.0) throw ValidationError("negative action weight");
        mass += a[j];
        s += a[j] / ladder.actions[j];
    }
    if (mass > 1.0 + 1e-6) throw ValidationError("action weights sum above one");
    return s;
}

FrameScores frame_scores(const EpisodeTrace& trace, ScoreVariant variant, const ActionLadder& ladder, ScoreDecay decay,
                         double rate) {
    trace.validate_partition();
    FrameScores out;
    out.video_id = trace.video_id;
    out.variant = variant;
    out.scores.assign(static_cast<std::size_t>(trace.num_frames), 0.0);
    const std::vector<double> neutral(ladder.size(), 1.0 / static_cast<double>(ladder.size()));

    for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        std::vector<double> a = neutral;
        if (t > 0) {
            const auto& prev = trace.steps[t - 1];
            switch (variant) {
            case ScoreVariant::S1:
                a.assign(ladder.size(), 0.0);
                a.at(static_cast<std::size_t>(prev.decision)) = 1.0;
                break;
            case ScoreVariant::S2: a = prev.probs; break;
            case ScoreVariant::S3:
                if (prev.soft.empty()) throw ValidationError("S3 scores need a sampled rollout trace");
                a = prev.soft;
                break;
            }
        }
        const double s = preference_score(a, ladder);
        const auto& step = trace.steps[t];
        const int mid = (step.start + step.end - 1) / 2;
        for (int f = step.start; f < step.end; ++f) {
            const int d = std::abs(f - mid);
            const double v = decay == ScoreDecay::Geometric ? s * std::pow(1.0 - rate, d)
                                                            : std::max(0.0, s * (1.0 - rate * d));
            out.scores[static_cast<std::size_t>(f)] = v;
        }
    }
    return out;
}

namespace {

void check_k(int n, int k) {
    if (k < 1 || k > n) {
        throw ValidationError("K = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    }
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

SelectionResult select_topk(const FrameScores& scores, int k) {
    const int n = static_cast<int>(scores.scores.size());
    check_k(n, k);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores.scores[a] > scores.scores[b]; });
    SelectionResult r;
    r.video_id = scores.video_id;
    r.selector = SelectorKind::AccSampler;
    r.k = k;
    r.indices.assign(order.begin(), order.begin() + k);
    std::sort(r.indices.begin(), r.indices.end());
    return r;
}

SelectionResult uniform_select(const std::string& video_id, int num_frames, int k) {
    check_k(num_frames, k);
    SelectionResult r{video_id, SelectorKind::Uniform, k, {}};
    for (int i = 0; i < k; ++i) {
        r.indices.push_back(static_cast<int>((static_cast<int64_t>(i) * num_frames) / k));
    }
    return r;
}

SelectionResult random_select(const std::string& video_id, int num_frames, int k, uint64_t seed) {
    check_k(num_frames, k);
    std::mt19937_64 rng(seed ^ fnv1a(video_id));
    std::vector<int> all(static_cast<std::size_t>(num_frames));
    std::iota(all.begin(), all.end(), 0);
    SelectionResult r{video_id, SelectorKind::Random, k, {}};
    std::sample(all.begin(), all.end(), std::back_inserter(r.indices), k, rng);
    std::sort(r.indices.begin(), r.indices.end());
    return r;
}

void to_json(json& j, const SelectionResult& s) {
    j = json{{"video_id", s.video_id}, {"selector", to_string(s.selector)}, {"K", s.k}, {"indices", s.indices}};
}

void from_json(const json& j, SelectionResult& s) {
    s.video_id = j.at("video_id").get<std::string>();
    s.selector = selector_from_string(j.at("selector").get<std::string>());
    s.k = j.at("K").get<int>();
    s.indices = j.at("indices").get<std::vector<int>>();
}

void write_selections(const std::vector<SelectionResult>& selections, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& s : selections) out << json(s).dump() << '\n';
}

std::vector<SelectionResult> load_selections(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw PrerequisiteError("missing selection file: " + path.string());
    std::vector<SelectionResult> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line).get<SelectionResult>());
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed selection: ") + e.what(), line_no);
        }
    }
    return out;
}

Manifest write_distilled(const Manifest& source, const fs::path& source_dir,
                         const std::vector<SelectionResult>& selections, const fs::path& path) {
    const fs::path out_dir = fs::absolute(path).parent_path();
    const fs::path src_dir = fs::absolute(source_dir);
    Manifest out;
    out.split = source.split;
    for (const auto& sel : selections) {
        const auto* entry = source.find(sel.video_id);
        if (entry == nullptr) throw ValidationError("selection names unknown video '" + sel.video_id + "'");
        ManifestEntry e;
        e.video_id = entry->video_id;
        e.label = entry->label;
        e.selector = to_string(sel.selector);
        for (int idx : sel.indices) {
            if (idx < 0 || idx >= static_cast<int>(entry->frames.size())) {
                throw ValidationError("selection index " + std::to_string(idx) + " outside video '" + sel.video_id +
                                      "'");
            }
            fs::path f = entry->frames[static_cast<std::size_t>(idx)];
            if (f.is_relative()) f = (src_dir / f).lexically_normal().lexically_relative(out_dir);
            e.frames.push_back(f.generic_string());
            if (!entry->frame_labels.empty()) e.frame_labels.push_back(entry->frame_labels[static_cast<std::size_t>(idx)]);
        }
        out.entries.push_back(std::move(e));
    }
    write_manifest(out, path);
    return out;
}

} // namespace accsampler
