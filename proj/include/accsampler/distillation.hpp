#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "accsampler/compression.hpp"
#include "accsampler/datamodel.hpp"
#include "accsampler/sampler.hpp"

namespace accsampler {

/// S1 scores hard Gumbel-max decisions, S2 the policy distribution, S3 the
/// Gumbel-softmax relaxation.
enum class ScoreVariant { S1, S2, S3 };
std::string to_string(ScoreVariant v);
ScoreVariant score_variant_from_string(const std::string& s);

enum class ScoreDecay { Geometric, Arithmetic };
std::string to_string(ScoreDecay d);
ScoreDecay score_decay_from_string(const std::string& s);

/// sum_j a_j / A_j. Throws ValidationError on a length mismatch, a negative
/// entry or total mass above one.
double preference_score(const std::vector<double>& action_vector, const ActionLadder& ladder);

struct FrameScores {
    std::string video_id;
    ScoreVariant variant = ScoreVariant::S1;
    std::vector<double> scores;
};

/// Spreads each clip's score around its lower-middle frame, shrinking by
/// `rate` per frame of distance (multiplicatively, or linearly for
/// ScoreDecay::Arithmetic, floored at zero).
FrameScores frame_scores(const EpisodeTrace& trace, ScoreVariant variant, const ActionLadder& ladder,
                         ScoreDecay decay = ScoreDecay::Geometric, double rate = 0.1);

enum class SelectorKind { AccSampler, Uniform, Random };
std::string to_string(SelectorKind k);
SelectorKind selector_from_string(const std::string& s);

struct SelectionResult {
    std::string video_id;
    SelectorKind selector = SelectorKind::AccSampler;
    int k = 0;
    std::vector<int> indices;  // strictly increasing
    bool operator==(const SelectionResult&) const = default;
};

void to_json(nlohmann::json& j, const SelectionResult& s);
void from_json(const nlohmann::json& j, SelectionResult& s);

/// The K highest scores, earlier frames first on ties, in temporal order.
SelectionResult select_topk(const FrameScores& scores, int k);
/// Indices floor(i * N / K).
SelectionResult uniform_select(const std::string& video_id, int num_frames, int k);
/// K distinct sorted indices, a pure function of (video_id, N, K, seed).
SelectionResult random_select(const std::string& video_id, int num_frames, int k, uint64_t seed);

void write_selections(const std::vector<SelectionResult>& selections, const std::filesystem::path& path);
std::vector<SelectionResult> load_selections(const std::filesystem::path& path);

/// Keeps only the selected frames of every referenced video and writes the
/// result to `path`, re-anchoring relative frame paths from `source_dir`.
/// Throws ValidationError for a selection naming a video absent from `source`.
Manifest write_distilled(const Manifest& source, const std::filesystem::path& source_dir,
                         const std::vector<SelectionResult>& selections, const std::filesystem::path& path);

} // namespace accsampler
