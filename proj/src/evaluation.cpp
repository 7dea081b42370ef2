#include "accsampler/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "accsampler/compression.hpp"

namespace accsampler {

using nlohmann::json;
namespace fs = std::filesystem;

EvalMetrics evaluate(AccSamplerNet& net, const std::vector<VideoSample>& videos, const CostTable& costs,
                     const RolloutOptions& options) {
    if (videos.empty()) throw ValidationError("evaluation over an empty dataset");
    net->eval();
    EvalMetrics m;
    m.videos = static_cast<int>(videos.size());
    const auto num_actions = net->spec().ladder.size();
    m.usage.assign(num_actions, 0.0);
    Rng rng(0);
    int correct = 0;
    double cost = 0.0;
    double frames = 0.0;
    std::size_t steps = 0;
    for (const auto& v : videos) {
        auto out = rollout(net, v, costs, options, rng);
        correct += out.trace.prediction == v.label;
        cost += out.trace.total_cost();
        frames += v.num_frames();
        for (const auto& s : out.trace.steps) m.usage[static_cast<std::size_t>(s.decision)] += 1.0;
        steps += out.trace.steps.size();
        m.traces.push_back(std::move(out.trace));
    }
    const double n = static_cast<double>(videos.size());
    m.accuracy = correct / n;
    m.gflops_per_video = cost / n;
    m.gflops_per_frame = m.gflops_per_video / (frames / n);
    for (auto& u : m.usage) u /= static_cast<double>(steps);
    return m;
}

torch::Tensor temporal_shift(const torch::Tensor& x, int fold_div) {
    if (x.dim() < 3) throw ValidationError("temporal_shift expects [B, T, C, ...]");
    const int64_t t = x.size(1);
    const int64_t fold = x.size(2) / fold_div;
    auto out = torch::zeros_like(x);
    using torch::indexing::Slice;
    if (t > 1 && fold > 0) {
        out.index_put_({Slice(), Slice(1, t), Slice(0, fold)}, x.index({Slice(), Slice(0, t - 1), Slice(0, fold)}));
        out.index_put_({Slice(), Slice(0, t - 1), Slice(fold, 2 * fold)},
                       x.index({Slice(), Slice(1, t), Slice(fold, 2 * fold)}));
    }
    out.index_put_({Slice(), Slice(), Slice(2 * fold)}, x.index({Slice(), Slice(), Slice(2 * fold)}));
    return out;
}

TsmLiteImpl::TsmLiteImpl(int num_classes, std::vector<int> widths, int fold_div_) : fold_div(fold_div_) {
    int in = 3;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        convs.push_back(register_module("conv" + std::to_string(i),
                                        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, widths[i], 3)
                                                              .stride(i == 0 ? 1 : 2)
                                                              .padding(1)
                                                              .bias(false))));
        norms.push_back(register_module("bn" + std::to_string(i), torch::nn::BatchNorm2d(widths[i])));
        in = widths[i];
    }
    head = register_module("head", torch::nn::Linear(in, num_classes));
}

torch::Tensor TsmLiteImpl::forward(const torch::Tensor& clips) {
    const int64_t b = clips.size(0);
    const int64_t t = clips.size(1);
    auto x = clips.flatten(0, 1);
    for (std::size_t i = 0; i < convs.size(); ++i) {
        // The input image has only 3 channels, so the first block is not shifted.
        if (i > 0) x = temporal_shift(x.view({b, t, x.size(1), x.size(2), x.size(3)}), fold_div).flatten(0, 1);
        x = torch::relu(norms[i]->forward(convs[i]->forward(x)));
    }
    x = x.mean({2, 3}).view({b, t, -1}).mean(1);
    return head->forward(x);
}

namespace {

torch::Tensor clip_tensor(const VideoSample& v, int size) { return resize_square(v.stack(0, v.num_frames()), size); }

int fixed_k(const std::vector<VideoSample>& videos, const char* which) {
    if (videos.empty()) throw ValidationError(std::string("downstream ") + which + " set is empty");
    const int k = videos.front().num_frames();
    for (const auto& v : videos) {
        if (v.num_frames() != k) {
            throw ValidationError("inconsistent K: '" + v.video_id + "' has " + std::to_string(v.num_frames()) +
                                  " frames, expected " + std::to_string(k));
        }
    }
    return k;
}

double accuracy(TsmLite& net, const torch::Tensor& x, const torch::Tensor& y, int batch) {
    torch::NoGradGuard guard;
    net->eval();
    int64_t correct = 0;
    for (int64_t i = 0; i < x.size(0); i += batch) {
        const int64_t e = std::min<int64_t>(x.size(0), i + batch);
        auto pred = net->forward(x.slice(0, i, e)).argmax(1);
        correct += pred.eq(y.slice(0, i, e)).sum().item<int64_t>();
    }
    return static_cast<double>(correct) / static_cast<double>(x.size(0));
}

} // namespace

DownstreamResult train_downstream(const std::vector<VideoSample>& train, const std::vector<VideoSample>& test,
                                  const DownstreamConfig& config) {
    const int k = fixed_k(train, "training");
    if (fixed_k(test, "test") != k) throw ValidationError("inconsistent K between training and test sets");
    auto stack_set = [&](const std::vector<VideoSample>& vs) {
        std::vector<torch::Tensor> xs;
        std::vector<int64_t> ys;
        for (const auto& v : vs) {
            xs.push_back(clip_tensor(v, config.input_size));
            ys.push_back(v.label);
        }
        return std::make_pair(torch::stack(xs), torch::tensor(ys, torch::kInt64));
    };
    auto [xtr, ytr] = stack_set(train);
    auto [xte, yte] = stack_set(test);

    torch::manual_seed(config.seed);
    TsmLite net(config.num_classes);
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.lr).weight_decay(config.weight_decay));
    Rng rng(config.seed);
    const int bs = std::max(1, config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        net->train();
        std::vector<int64_t> order(static_cast<std::size_t>(xtr.size(0)));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(bs)) {
            const std::size_t e = std::min(order.size(), i + static_cast<std::size_t>(bs));
            if (e - i < 2) continue;  // batch norm needs more than one sample
            auto idx = torch::tensor(std::vector<int64_t>(order.begin() + static_cast<std::ptrdiff_t>(i),
                                                          order.begin() + static_cast<std::ptrdiff_t>(e)),
                                     torch::kInt64);
            opt.zero_grad();
            auto loss = torch::nll_loss(torch::log_softmax(net->forward(xtr.index_select(0, idx)), 1),
                                        ytr.index_select(0, idx));
            loss.backward();
            opt.step();
        }
    }
    return {accuracy(net, xte, yte, bs), accuracy(net, xtr, ytr, bs)};
}

void to_json(json& j, const ModelRow& r) {
    j = json{{"name", r.name},
             {"test_accuracy", r.test_accuracy},
             {"train_accuracy", r.train_accuracy},
             {"gflops_per_video", r.gflops_per_video},
             {"gflops_per_frame", r.gflops_per_frame},
             {"usage", r.usage}};
}

void from_json(const json& j, ModelRow& r) {
    r.name = j.at("name").get<std::string>();
    r.test_accuracy = j.at("test_accuracy").get<double>();
    r.train_accuracy = j.value("train_accuracy", -1.0);
    r.gflops_per_video = j.at("gflops_per_video").get<double>();
    r.gflops_per_frame = j.at("gflops_per_frame").get<double>();
    r.usage = j.value("usage", std::vector<double>{});
}

void to_json(json& j, const EvalReport& r) {
    json ds = json::object();
    for (const auto& [sel, byk] : r.downstream) {
        json row = json::object();
        for (const auto& [k, acc] : byk) row[std::to_string(k)] = acc;
        ds[sel] = row;
    }
    j = json{{"config", r.config}, {"models", r.models}, {"downstream", ds}};
}

void from_json(const json& j, EvalReport& r) {
    r.config = j.value("config", json::object());
    r.models = j.value("models", std::vector<ModelRow>{});
    r.downstream.clear();
    if (j.contains("downstream")) {
        for (const auto& [sel, row] : j.at("downstream").items()) {
            for (const auto& [k, acc] : row.items()) r.downstream[sel][std::stoi(k)] = acc.get<double>();
        }
    }
}

namespace {

std::string fmt(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

std::string markdown(const EvalReport& r) {
    std::ostringstream os;
    os << "## Classification\n\n";
    os << "| Model | Test acc (%) | Train acc (%) | GFLOPs/v | GFLOPs/f |\n";
    os << "|---|---|---|---|---|\n";
    for (const auto& m : r.models) {
        os << "| " << m.name << " | " << fmt(m.test_accuracy, 2) << " | "
           << (m.train_accuracy >= 0 ? fmt(m.train_accuracy, 2) : std::string("-")) << " | "
           << fmt(m.gflops_per_video, 4) << " | " << fmt(m.gflops_per_frame, 6) << " |\n";
    }
    std::set<int> ks;
    for (const auto& [sel, byk] : r.downstream) {
        for (const auto& [k, acc] : byk) ks.insert(k);
    }
    os << "\n## Downstream accuracy by K (%)\n\n";
    os << "| Selector |";
    for (int k : ks) os << " K=" << k << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < ks.size(); ++i) os << "---|";
    os << "\n";
    for (const auto& [sel, byk] : r.downstream) {
        os << "| " << sel << " |";
        for (int k : ks) {
            auto it = byk.find(k);
            os << " " << (it == byk.end() ? std::string("-") : fmt(it->second, 2)) << " |";
        }
        os << "\n";
    }
    return os.str();
}

std::string svg_plot(const EvalReport& r) {
    const double w = 480, h = 320, left = 50, right = 110, top = 20, bottom = 40;
    std::set<int> kset;
    for (const auto& [sel, byk] : r.downstream) {
        for (const auto& [k, acc] : byk) kset.insert(k);
    }
    const std::vector<int> ks(kset.begin(), kset.end());
    const double kmin = ks.front(), kmax = ks.back();
    auto px = [&](int k) {
        return kmax == kmin ? left + (w - left - right) / 2 : left + (k - kmin) / (kmax - kmin) * (w - left - right);
    };
    auto py = [&](double acc) { return top + (100.0 - std::clamp(acc, 0.0, 100.0)) / 100.0 * (h - top - bottom); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
       << "\" stroke=\"black\"/>\n";
    for (int acc = 0; acc <= 100; acc += 20) {
        os << "<text x=\"" << left - 6 << "\" y=\"" << fmt(py(acc) + 4, 1) << "\" font-size=\"10\" text-anchor=\"end\">"
           << acc << "</text>\n";
    }
    for (int k : ks) {
        os << "<text x=\"" << fmt(px(k), 1) << "\" y=\"" << h - bottom + 14
           << "\" font-size=\"10\" text-anchor=\"middle\">" << k << "</text>\n";
    }
    os << "<text x=\"" << fmt((left + w - right) / 2, 1) << "\" y=\"" << h - 6
       << "\" font-size=\"11\" text-anchor=\"middle\">frames per video (K)</text>\n";
    os << "<text x=\"12\" y=\"" << fmt((top + h - bottom) / 2, 1) << "\" font-size=\"11\" text-anchor=\"middle\" "
       << "transform=\"rotate(-90 12 " << fmt((top + h - bottom) / 2, 1) << ")\">accuracy (%)</text>\n";
    std::size_t series = 0;
    for (const auto& [sel, byk] : r.downstream) {
        const char* color = colors[series % (sizeof colors / sizeof *colors)];
        os << "<polyline class=\"series\" data-selector=\"" << sel << "\" fill=\"none\" stroke=\"" << color
           << "\" points=\"";
        bool first = true;
        for (const auto& [k, acc] : byk) {
            os << (first ? "" : " ") << fmt(px(k), 1) << "," << fmt(py(acc), 1);
            first = false;
        }
        os << "\"/>\n";
        for (const auto& [k, acc] : byk) {
            os << "<circle class=\"point\" cx=\"" << fmt(px(k), 1) << "\" cy=\"" << fmt(py(acc), 1)
               << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        const double ly = top + 14.0 * static_cast<double>(series);
        os << "<text x=\"" << w - right + 10 << "\" y=\"" << fmt(ly + 4, 1) << "\" font-size=\"11\" fill=\"" << color
           << "\">" << sel << "</text>\n";
        ++series;
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace

ReportFiles emit_report(const EvalReport& report, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create report directory " + dir.string() + ": " + ec.message());
    ReportFiles files{dir / "report.json", dir / "report.md", std::nullopt};
    write_text(files.json, json(report).dump(2) + "\n");
    write_text(files.table, markdown(report));
    const fs::path plot = dir / "accuracy_vs_k.svg";
    bool any = false;
    for (const auto& [sel, byk] : report.downstream) any = any || !byk.empty();
    if (any) {
        write_text(plot, svg_plot(report));
        files.plot = plot;
    } else if (fs::exists(plot)) {
        fs::remove(plot);
    }
    return files;
}

} // namespace accsampler
