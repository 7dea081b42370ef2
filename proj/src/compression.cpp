#include "accsampler/compression.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <tuple>

namespace accsampler {

int ActionLadder::index_of_action(int k) const {
    auto it = std::find(actions.begin(), actions.end(), k);
    if (it == actions.end()) throw ValidationError("clip length " + std::to_string(k) + " is not on the ladder");
    return static_cast<int>(it - actions.begin());
}

bool ActionLadder::has_resolution(int r) const {
    return std::find(resolutions.begin(), resolutions.end(), r) != resolutions.end();
}

void ActionLadder::validate() const {
    if (actions.empty() || actions.size() != resolutions.size()) {
        throw ValidationError("ladder needs as many resolutions as actions");
    }
    if (actions.front() != 1) throw ValidationError("ladder must start with a single-frame action");
    for (std::size_t i = 1; i < actions.size(); ++i) {
        if (actions[i] <= actions[i - 1]) throw ValidationError("ladder actions must be strictly increasing");
        if (resolutions[i] >= resolutions[i - 1]) {
            throw ValidationError("ladder resolutions must be strictly decreasing");
        }
    }
    if (resolutions.back() < 1) throw ValidationError("ladder resolutions must be positive");
}

void MixupParams::validate() const {
    if (!(alpha > 0.0)) throw ValidationError("mixup alpha must be > 0");
    if (eval_lambda < 0.0 || eval_lambda > 1.0) throw ValidationError("eval_lambda must lie in [0, 1]");
}

double sample_lambda(const MixupParams& params, Phase phase, Rng& rng) {
    if (phase == Phase::Eval) return params.eval_lambda;
    std::gamma_distribution<double> gamma(params.alpha, 1.0);
    const double x = gamma(rng);
    const double y = gamma(rng);
    if (x + y <= 0.0) return 0.5;
    return std::clamp(x / (x + y), 0.0, 1.0);
}

torch::Tensor clip_mixup(const torch::Tensor& first, const torch::Tensor& last, double lambda) {
    if (first.sizes() != last.sizes()) {
        throw ValidationError("clip_mixup: frame shapes differ");
    }
    if (lambda < 0.0 || lambda > 1.0) throw ValidationError("clip_mixup: lambda outside [0, 1]");
    return first * lambda + last * (1.0 - lambda);
}

torch::Tensor resize_square(const torch::Tensor& frames, int target) {
    namespace F = torch::nn::functional;
    const bool single = frames.dim() == 3;
    auto batch = single ? frames.unsqueeze(0) : frames;
    TORCH_CHECK(batch.dim() == 4, "resize_square expects [3,H,W] or [B,3,H,W]");
    torch::Tensor out;
    if (batch.size(2) == target && batch.size(3) == target) {
        out = batch;
    } else {
        out = F::interpolate(batch, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{target, target})
                                        .mode(torch::kBilinear)
                                        .align_corners(false));
    }
    return single ? out.squeeze(0) : out;
}

torch::Tensor fuse_clip(const torch::Tensor& clip, double lambda, int target_resolution) {
    if (clip.dim() != 4 || clip.size(0) == 0) throw ValidationError("fuse_clip: empty clip");
    if (clip.size(0) == 1) return resize_square(clip[0], target_resolution);
    auto ends = resize_square(torch::stack({clip[0], clip[clip.size(0) - 1]}), target_resolution);
    return clip_mixup(ends[0], ends[1], lambda);
}

namespace {

struct Shape {
    int64_t c, h, w;
};

uint64_t walk(const std::vector<LayerDesc>& layers, Shape& shape) {
    uint64_t macs = 0;
    for (const auto& l : layers) {
        if (l.type == "conv2d") {
            if (l.in_channels != shape.c) {
                throw ValidationError("layer '" + l.name + "' expects " + std::to_string(l.in_channels) +
                                      " channels, got " + std::to_string(shape.c));
            }
            if (l.groups < 1 || l.in_channels % l.groups != 0 || l.out_channels % l.groups != 0) {
                throw ValidationError("layer '" + l.name + "' has an invalid group count");
            }
            const int64_t oh = (shape.h + 2 * l.padding - l.kernel) / l.stride + 1;
            const int64_t ow = (shape.w + 2 * l.padding - l.kernel) / l.stride + 1;
            if (oh < 1 || ow < 1) throw ValidationError("layer '" + l.name + "' collapses the input");
            macs += static_cast<uint64_t>(oh * ow * l.out_channels * (l.in_channels / l.groups) * l.kernel *
                                          l.kernel);
            shape = {l.out_channels, oh, ow};
        } else if (l.type == "batchnorm2d") {
            if (l.in_channels != shape.c) throw ValidationError("layer '" + l.name + "' channel mismatch");
        } else if (l.type == "relu" || l.type == "relu6") {
        } else if (l.type == "residual") {
            Shape inner = shape;
            macs += walk(l.body, inner);
            if (inner.c != shape.c || inner.h != shape.h || inner.w != shape.w) {
                throw ValidationError("residual '" + l.name + "' changes the tensor shape");
            }
        } else if (l.type == "global_avg_pool") {
            shape.h = 1;
            shape.w = 1;
        } else {
            throw ValidationError("unsupported layer type '" + l.type + "' in layer '" + l.name + "'");
        }
    }
    return macs;
}

} // namespace

uint64_t count_macs(const BackboneSpec& spec, int resolution) {
    Shape shape{3, resolution, resolution};
    const auto macs = walk(spec.layers, shape);
    if (shape.c != spec.feature_dim || shape.h != 1 || shape.w != 1) {
        throw ValidationError("backbone '" + spec.arch + "' does not end in a pooled feature_dim vector");
    }
    return macs;
}

uint64_t gru_step_macs(int input_dim, int hidden_dim) {
    // reset, update and candidate gates each see the input and the hidden state
    return 3ull * (static_cast<uint64_t>(input_dim) * hidden_dim + static_cast<uint64_t>(hidden_dim) * hidden_dim);
}

double CostTable::at(int resolution) const {
    auto it = gflops.find(resolution);
    if (it == gflops.end()) throw ValidationError("cost table has no entry for " + std::to_string(resolution) + " px");
    return it->second;
}

torch::Tensor CostTable::ladder_costs(const ActionLadder& ladder) const {
    std::vector<double> c;
    for (int r : ladder.resolutions) c.push_back(at(r));
    return torch::tensor(c, torch::kFloat64);
}

double CostTable::min() const {
    if (gflops.empty()) throw ValidationError("empty cost table");
    return gflops.begin()->second;
}

double CostTable::max() const {
    if (gflops.empty()) throw ValidationError("empty cost table");
    return gflops.rbegin()->second;
}

void CostTable::validate() const {
    double prev = 0.0;
    for (const auto& [r, c] : gflops) {
        if (!(c > prev)) throw ValidationError("cost table must be positive and increase with resolution");
        prev = c;
    }
}

CostTable build_cost_table(const BackboneSpec& backbone, const ActionLadder& ladder, int hidden_dim) {
    ladder.validate();
    const uint64_t recurrent = gru_step_macs(backbone.feature_dim, hidden_dim);
    CostTable table;
    for (int r : ladder.resolutions) {
        const uint64_t macs = count_macs(backbone, r) + recurrent;
        table.gflops[r] = 2.0 * static_cast<double>(macs) / 1e9;
    }
    table.validate();
    return table;
}

void write_cost_table(const CostTable& table, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "resolution_px,gflops_per_frame\n";
    out << std::setprecision(17);
    for (const auto& [r, c] : table.gflops) out << r << ',' << c << '\n';
}

CostTable load_cost_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPathError(path.string());
    CostTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        std::istringstream row(line);
        int r = 0;
        char comma = 0;
        double c = 0;
        if (!(row >> r >> comma >> c) || comma != ',') throw ParseError("malformed cost row", line_no);
        table.gflops[r] = c;
    }
    table.validate();
    return table;
}

} // namespace accsampler
