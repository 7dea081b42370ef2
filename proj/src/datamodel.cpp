#include "accsampler/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "accsampler/image_io.hpp"

namespace accsampler {

namespace fs = std::filesystem;
using nlohmann::json;

FrameRecord::FrameRecord(fs::path path, int h, int w, std::optional<int> label)
    : height(h), width(w), frame_label(label), path_(std::move(path)) {}

FrameRecord::FrameRecord(torch::Tensor pixels, std::optional<int> label) : frame_label(label) {
    TORCH_CHECK(pixels.dim() == 3 && pixels.size(0) == 3, "frame must be [3, H, W]");
    height = static_cast<int>(pixels.size(1));
    width = static_cast<int>(pixels.size(2));
    pixels_ = std::move(pixels);
}

torch::Tensor FrameRecord::raw() const {
    if (pixels_.defined()) {
        return pixels_;
    }
    return read_png(path_);
}

torch::Tensor FrameRecord::pixels() const {
    auto t = raw();
    if (t.scalar_type() == torch::kUInt8) {
        return t.to(torch::kFloat32).div_(255.0);
    }
    return t.to(torch::kFloat32);
}

torch::Tensor VideoSample::stack(int begin, int end) const {
    TORCH_CHECK(0 <= begin && begin < end && end <= num_frames(), "frame range out of bounds");
    std::vector<torch::Tensor> parts;
    parts.reserve(static_cast<std::size_t>(end - begin));
    for (int i = begin; i < end; ++i) {
        parts.push_back(frames[static_cast<std::size_t>(i)].pixels());
    }
    return torch::stack(parts);
}

void VideoSample::materialize() {
    for (auto& f : frames) {
        if (!f.in_memory()) {
            auto px = read_png(f.path());
            auto label = f.frame_label;
            f = FrameRecord(px, label);
        }
    }
}

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw ValidationError("unknown split '" + s + "'");
}

const ManifestEntry* Manifest::find(const std::string& video_id) const {
    for (const auto& e : entries) {
        if (e.video_id == video_id) return &e;
    }
    return nullptr;
}

namespace {

ManifestEntry parse_entry(const std::string& text, std::size_t line_no, Split& split) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed manifest record: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("manifest record is not an object", line_no);
    ManifestEntry e;
    try {
        e.video_id = j.at("video_id").get<std::string>();
        e.frames = j.at("frames").get<std::vector<std::string>>();
        e.label = j.at("label").get<int>();
        if (j.contains("frame_labels")) e.frame_labels = j.at("frame_labels").get<std::vector<int>>();
        if (j.contains("selector")) e.selector = j.at("selector").get<std::string>();
        if (j.contains("split")) split = split_from_string(j.at("split").get<std::string>());
    } catch (const json::exception& ex) {
        throw ParseError(std::string("bad manifest field: ") + ex.what(), line_no);
    } catch (const ValidationError& ex) {
        throw ParseError(ex.what(), line_no);
    }
    if (e.frames.empty()) throw ParseError("video '" + e.video_id + "' has no frames", line_no);
    if (!e.frame_labels.empty()) {
        if (e.frame_labels.size() != e.frames.size()) {
            throw ParseError("frame_labels length differs from frames", line_no);
        }
        const bool binary = e.label >= 0 && e.label <= 1 &&
                            std::all_of(e.frame_labels.begin(), e.frame_labels.end(),
                                        [](int v) { return v == 0 || v == 1; });
        // Distilled entries keep the source clip's label over a frame subset.
        if (binary && e.selector.empty()) {
            const int any = std::any_of(e.frame_labels.begin(), e.frame_labels.end(),
                                        [](int v) { return v == 1; }) ? 1 : 0;
            if (any != e.label) throw ParseError("clip label disagrees with its frame labels", line_no);
        }
    }
    return e;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

} // namespace

Manifest load_manifest(const fs::path& path, bool check_files) {
    std::ifstream in(path);
    if (!in) throw MissingPathError(path.string());
    Manifest m;
    const fs::path base = path.parent_path();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto entry = parse_entry(line, line_no, m.split);
        if (check_files) {
            for (const auto& f : entry.frames) {
                auto full = resolve(base, f);
                if (!fs::exists(full)) throw MissingPathError(full.string());
            }
        }
        m.entries.push_back(std::move(entry));
    }
    return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest " + path.string());
    for (const auto& e : manifest.entries) {
        json j;
        j["video_id"] = e.video_id;
        j["split"] = to_string(manifest.split);
        j["frames"] = e.frames;
        j["frame_labels"] = e.frame_labels;
        j["label"] = e.label;
        if (!e.selector.empty()) j["selector"] = e.selector;
        out << j.dump() << '\n';
    }
}

std::vector<VideoSample> to_videos(const Manifest& manifest, const fs::path& base_dir) {
    std::vector<VideoSample> videos;
    videos.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        VideoSample v;
        v.video_id = e.video_id;
        v.label = e.label;
        for (std::size_t i = 0; i < e.frames.size(); ++i) {
            std::optional<int> fl;
            if (!e.frame_labels.empty()) fl = e.frame_labels[i];
            v.frames.emplace_back(resolve(base_dir, e.frames[i]), 0, 0, fl);
        }
        videos.push_back(std::move(v));
    }
    return videos;
}

std::vector<VideoSample> load_videos(const fs::path& manifest_path) {
    auto videos = to_videos(load_manifest(manifest_path), manifest_path.parent_path());
    for (auto& v : videos) v.materialize();
    return videos;
}

std::vector<VideoSample> build_clips(const std::vector<FrameRecord>& frame_stream, int clip_len, int stride,
                                     const std::string& stream_id) {
    if (clip_len < 1 || stride < 1) throw ValidationError("clip_len and stride must be positive");
    std::vector<VideoSample> clips;
    const int n = static_cast<int>(frame_stream.size());
    if (n < clip_len) {
        std::clog << "warning: stream '" << stream_id << "' has " << n << " frames, fewer than clip_len "
                  << clip_len << "; no clips built\n";
        return clips;
    }
    for (int start = 0, idx = 0; start + clip_len <= n; start += stride, ++idx) {
        VideoSample clip;
        std::ostringstream id;
        id << stream_id << '_' << std::setw(4) << std::setfill('0') << idx;
        clip.video_id = id.str();
        clip.label = 0;
        for (int i = start; i < start + clip_len; ++i) {
            const auto& f = frame_stream[static_cast<std::size_t>(i)];
            if (!f.frame_label) throw ValidationError("frame " + std::to_string(i) + " of '" + stream_id +
                                                      "' has no label");
            if (*f.frame_label == 1) clip.label = 1;
            clip.frames.push_back(f);
        }
        clips.push_back(std::move(clip));
    }
    return clips;
}

void SyntheticSpec::validate() const {
    if (num_train < 0 || num_test < 0) throw ValidationError("video counts must be non-negative");
    if (frames_per_video < 1) throw ValidationError("frames_per_video must be >= 1");
    if (frame_size != 32 && frame_size != 64) throw ValidationError("frame_size must be 32 or 64");
    if (event_length < 1 || event_length > frames_per_video) {
        throw ValidationError("event_length must lie in [1, frames_per_video]");
    }
    if (positive_fraction < 0.0 || positive_fraction > 1.0) {
        throw ValidationError("positive_fraction must lie in [0, 1]");
    }
    if (noise_amplitude < 0.0 || blob_amplitude < 0.0 || blob_sigma <= 0.0) {
        throw ValidationError("noise/blob parameters must be non-negative (sigma > 0)");
    }
}

namespace {

double uniform01(Rng& rng) { return std::generate_canonical<double, 53>(rng); }

VideoSample synth_video(const SyntheticSpec& spec, const std::string& id, bool positive, Rng& rng,
                        std::optional<EventSpan>& span) {
    const int n = spec.frames_per_video;
    const int s = spec.frame_size;
    const double base[3] = {0.15 + 0.1 * uniform01(rng), 0.25 + 0.15 * uniform01(rng), 0.12 + 0.1 * uniform01(rng)};
    static constexpr double kFireColor[3] = {1.0, 0.55, 0.12};

    span.reset();
    double cx = 0, cy = 0, vx = 0, vy = 0;
    if (positive) {
        const int start = spec.event_position == EventPosition::Center
                              ? (n - spec.event_length) / 2
                              : static_cast<int>(std::floor(uniform01(rng) * (n - spec.event_length + 1)));
        span = EventSpan{start, start + spec.event_length};
        const double margin = 2.0 * spec.blob_sigma;
        cx = margin + uniform01(rng) * (s - 2 * margin);
        cy = margin + uniform01(rng) * (s - 2 * margin);
        vx = (uniform01(rng) - 0.5) * 0.6;
        vy = (uniform01(rng) - 0.5) * 0.6;
    }

    VideoSample v;
    v.video_id = id;
    v.label = positive ? 1 : 0;
    std::vector<float> buf(static_cast<std::size_t>(3 * s * s));
    for (int t = 0; t < n; ++t) {
        const bool in_event = span && t >= span->start && t < span->end;
        const double bx = cx + vx * (in_event ? t - span->start : 0);
        const double by = cy + vy * (in_event ? t - span->start : 0);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    double value = base[c] + spec.noise_amplitude * (uniform01(rng) - 0.5);
                    if (in_event) {
                        const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                        value += spec.blob_amplitude * kFireColor[c] *
                                 std::exp(-d2 / (2.0 * spec.blob_sigma * spec.blob_sigma));
                    }
                    buf[static_cast<std::size_t>((c * s + y) * s + x)] = static_cast<float>(value);
                }
            }
        }
        auto px = torch::from_blob(buf.data(), {3, s, s}, torch::kFloat32)
                      .clamp(0.0, 1.0)
                      .mul(255.0)
                      .round()
                      .to(torch::kUInt8);
        v.frames.emplace_back(px, in_event ? 1 : 0);
    }
    return v;
}

void synth_split(const SyntheticSpec& spec, int count, const std::string& prefix, Rng& rng,
                 std::vector<VideoSample>& out, std::map<std::string, EventSpan>& truth) {
    const int positives = static_cast<int>(std::lround(spec.positive_fraction * count));
    std::vector<int> labels(static_cast<std::size_t>(count), 0);
    std::fill(labels.begin(), labels.begin() + positives, 1);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (int i = 0; i < count; ++i) {
        std::ostringstream id;
        id << prefix << '_' << std::setw(4) << std::setfill('0') << i;
        std::optional<EventSpan> span;
        out.push_back(synth_video(spec, id.str(), labels[static_cast<std::size_t>(i)] == 1, rng, span));
        if (span) truth[id.str()] = *span;
    }
}

} // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SyntheticDataset data;
    synth_split(spec, spec.num_train, "syn_train", rng, data.train, data.ground_truth);
    synth_split(spec, spec.num_test, "syn_test", rng, data.test, data.ground_truth);
    return data;
}

SyntheticFiles synthetic_paths(const fs::path& dir) {
    return {dir / "train.jsonl", dir / "test.jsonl", dir / "ground_truth.jsonl"};
}

namespace {

Manifest write_split(const std::vector<VideoSample>& videos, Split split, const fs::path& dir) {
    Manifest m;
    m.split = split;
    for (const auto& v : videos) {
        ManifestEntry e;
        e.video_id = v.video_id;
        e.label = v.label;
        for (int t = 0; t < v.num_frames(); ++t) {
            std::ostringstream name;
            name << std::setw(4) << std::setfill('0') << t << ".png";
            const fs::path rel = fs::path("frames") / v.video_id / name.str();
            const auto& frame = v.frames[static_cast<std::size_t>(t)];
            write_png(dir / rel, frame.raw());
            e.frames.push_back(rel.generic_string());
            e.frame_labels.push_back(frame.frame_label.value_or(0));
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

} // namespace

std::pair<Manifest, Manifest> write_synthetic(const SyntheticDataset& data, const fs::path& dir) {
    fs::create_directories(dir);
    const auto paths = synthetic_paths(dir);
    auto train = write_split(data.train, Split::Train, dir);
    auto test = write_split(data.test, Split::Test, dir);
    write_manifest(train, paths.train_manifest);
    write_manifest(test, paths.test_manifest);
    write_ground_truth(data.ground_truth, paths.ground_truth);
    return {std::move(train), std::move(test)};
}

std::map<std::string, EventSpan> load_ground_truth(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPathError(path.string());
    std::map<std::string, EventSpan> spans;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = json::parse(line);
            spans[j.at("video_id").get<std::string>()] = {j.at("start").get<int>(), j.at("end").get<int>()};
        } catch (const json::exception& e) {
            throw ParseError(std::string("malformed ground-truth record: ") + e.what(), line_no);
        }
    }
    return spans;
}

void write_ground_truth(const std::map<std::string, EventSpan>& spans, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& [id, span] : spans) {
        out << json{{"video_id", id}, {"start", span.start}, {"end", span.end}}.dump() << '\n';
    }
}

} // namespace accsampler
