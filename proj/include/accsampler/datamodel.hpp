#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "accsampler/common.hpp"

namespace accsampler {

/// One frame. Pixels live either on disk (decoded on demand) or in memory as a
/// [3, H, W] tensor (uint8 in [0, 255] or float in [0, 1]).
class FrameRecord {
public:
    FrameRecord() = default;
    FrameRecord(std::filesystem::path path, int height, int width, std::optional<int> label = std::nullopt);
    FrameRecord(torch::Tensor pixels, std::optional<int> label = std::nullopt);

    /// Float [3, H, W] tensor normalized to [0, 1].
    torch::Tensor pixels() const;
    /// Raw stored tensor (uint8 or float); decodes from disk when file-backed.
    torch::Tensor raw() const;

    bool in_memory() const { return pixels_.defined(); }
    const std::filesystem::path& path() const { return path_; }

    int height = 0;
    int width = 0;
    int channels = 3;
    std::optional<int> frame_label;

private:
    std::filesystem::path path_;
    torch::Tensor pixels_;
};

struct VideoSample {
    std::string video_id;
    std::vector<FrameRecord> frames;
    int label = 0;

    int num_frames() const { return static_cast<int>(frames.size()); }
    /// Float [k, 3, H, W] stack of frames [begin, end).
    torch::Tensor stack(int begin, int end) const;
    /// Decodes every file-backed frame into memory (uint8), keeping the path.
    void materialize();
};

enum class Split { Train, Test };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct ManifestEntry {
    std::string video_id;
    std::vector<std::string> frames;
    std::vector<int> frame_labels;
    int label = 0;
    std::string selector;  // set on distilled manifests only

    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    Split split = Split::Train;

    bool operator==(const Manifest&) const = default;
    const ManifestEntry* find(const std::string& video_id) const;
};

/// Reads a JSON-lines manifest. Relative frame paths resolve against the
/// manifest's directory. Throws ParseError (with line number) on a malformed
/// record and MissingPathError naming the first absent frame file.
Manifest load_manifest(const std::filesystem::path& path, bool check_files = true);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Turns manifest entries into VideoSamples with file-backed frames.
std::vector<VideoSample> to_videos(const Manifest& manifest, const std::filesystem::path& base_dir);
/// Loads the manifest and decodes every frame into memory.
std::vector<VideoSample> load_videos(const std::filesystem::path& manifest_path);

/// Cuts an ordered, per-frame labelled stream into fixed-length clips. A clip
/// is positive iff any member frame is positive; a short tail is dropped.
std::vector<VideoSample> build_clips(const std::vector<FrameRecord>& frame_stream, int clip_len = 64,
                                     int stride = 64, const std::string& stream_id = "clip");

enum class EventPosition { Uniform, Center };

struct SyntheticSpec {
    int num_train = 200;
    int num_test = 50;
    int frames_per_video = 64;
    int frame_size = 32;
    int event_length = 16;
    EventPosition event_position = EventPosition::Uniform;
    double noise_amplitude = 0.5;
    double blob_amplitude = 0.8;
    double blob_sigma = 2.0;
    double positive_fraction = 0.5;
    uint64_t seed = 7;

    void validate() const;
};

struct EventSpan {
    int start = 0;
    int end = 0;  // exclusive
    bool operator==(const EventSpan&) const = default;
};

struct SyntheticDataset {
    std::vector<VideoSample> train;
    std::vector<VideoSample> test;
    std::map<std::string, EventSpan> ground_truth;  // positive videos only
};

/// Pure function of the spec: noise-only negatives, positives carrying a
/// bright drifting blob over a contiguous event span.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

struct SyntheticFiles {
    std::filesystem::path train_manifest;
    std::filesystem::path test_manifest;
    std::filesystem::path ground_truth;
};

/// Writes PNG frames (one directory per video), both manifests and the
/// ground-truth span file under `dir`. Returns the written manifests.
std::pair<Manifest, Manifest> write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);
SyntheticFiles synthetic_paths(const std::filesystem::path& dir);

std::map<std::string, EventSpan> load_ground_truth(const std::filesystem::path& path);
void write_ground_truth(const std::map<std::string, EventSpan>& spans, const std::filesystem::path& path);

} // namespace accsampler
