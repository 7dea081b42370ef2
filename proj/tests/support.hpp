#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <torch/torch.h>

#include "accsampler/compression.hpp"
#include "accsampler/datamodel.hpp"
#include "accsampler/model.hpp"

namespace testing {

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("accsampler_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Ladder small enough for millisecond rollouts.
inline accsampler::ActionLadder tiny_ladder() {
    accsampler::ActionLadder l;
    l.resolutions = {16, 12, 8, 6};
    return l;
}

/// D = 8, hidden = 16: policy input 24 wide, 8 GroupNorm groups.
inline accsampler::ModelSpec tiny_spec(bool stations = true) {
    accsampler::ModelSpec s;
    s.backbone = accsampler::tiny_conv_spec(8, {4, 8, 8, 8});
    s.hidden_dim = 16;
    s.gn_groups = 8;
    s.station_input = stations;
    s.ladder = tiny_ladder();
    return s;
}

inline accsampler::VideoSample random_video(const std::string& id, int frames, int size, int label, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    accsampler::VideoSample v;
    v.video_id = id;
    v.label = label;
    for (int i = 0; i < frames; ++i) {
        v.frames.emplace_back(torch::rand({3, size, size}, gen, torch::kFloat32));
    }
    return v;
}

} // namespace testing
