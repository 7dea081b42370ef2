#include <doctest.h>

#include "accsampler/evaluation.hpp"
#include "support.hpp"

using namespace accsampler;

namespace {

size_t count_of(const std::string& hay, const std::string& needle) {
    size_t n = 0;
    for (size_t p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
    return n;
}

EvalReport sample_report() {
    EvalReport r;
    r.config = {{"seed", 0}};
    r.models.push_back({"dense", 98.0, -1.0, 0.2, 0.003125, {}});
    r.models.push_back({"accsampler", 96.5, -1.0, 0.05, 0.00078, {0.5, 0.2, 0.2, 0.1}});
    int base = 60;
    for (const char* sel : {"accsampler", "uniform", "random"}) {
        for (int k : {4, 8, 20, 28}) r.downstream[sel][k] = base + k * 0.5;
        base -= 5;
    }
    return r;
}

} // namespace

TEST_SUITE("evaluation") {

TEST_CASE("evaluate") {
    torch::manual_seed(0);
    AccSamplerNet net(testing::tiny_spec());
    net->eval();
    auto costs = build_cost_table(net->spec().backbone, net->spec().ladder, net->spec().hidden_dim);
    CHECK_THROWS_AS(evaluate(net, {}, costs, RolloutOptions{}), ValidationError);

    std::vector<VideoSample> videos;
    for (int i = 0; i < 6; ++i) videos.push_back(testing::random_video("e" + std::to_string(i), 20, 16, i < 4 ? 1 : 0, i));

    auto dense = evaluate(net, videos, costs, dense_baseline_options());
    CHECK(dense.videos == 6);
    CHECK(dense.gflops_per_video == doctest::Approx(20 * costs.at(16)).epsilon(1e-12));
    CHECK(dense.gflops_per_frame == doctest::Approx(costs.at(16)).epsilon(1e-12));
    CHECK(dense.traces.size() == 6);

    SUBCASE("a classifier that always predicts the majority class scores its share") {
        torch::NoGradGuard guard;
        net->classifier->weight.zero_();
        net->classifier->bias.copy_(torch::tensor({0.0f, 1.0f}));
        auto m = evaluate(net, videos, costs, RolloutOptions{});
        CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
        double usage = 0;
        for (double u : m.usage) usage += u;
        CHECK(usage == doctest::Approx(1.0));
    }
}

TEST_CASE("temporal shift") {
    auto x = torch::arange(2 * 4 * 16 * 3, torch::kFloat32).view({2, 4, 16, 3});
    auto y = temporal_shift(x, 8);
    using torch::indexing::Slice;
    // channels 0..1 move forward in time, 2..3 backward, the rest stay
    CHECK(torch::equal(y.index({Slice(), Slice(1), Slice(0, 2)}), x.index({Slice(), Slice(0, 3), Slice(0, 2)})));
    CHECK(torch::equal(y.index({Slice(), 0, Slice(0, 2)}), torch::zeros({2, 2, 3})));
    CHECK(torch::equal(y.index({Slice(), Slice(0, 3), Slice(2, 4)}), x.index({Slice(), Slice(1), Slice(2, 4)})));
    CHECK(torch::equal(y.index({Slice(), 3, Slice(2, 4)}), torch::zeros({2, 2, 3})));
    CHECK(torch::equal(y.index({Slice(), Slice(), Slice(4)}), x.index({Slice(), Slice(), Slice(4)})));

    SUBCASE("time-constant input is unchanged away from the ends") {
        auto c = torch::rand({1, 1, 16, 5}).expand({1, 6, 16, 5}).contiguous();
        auto s = temporal_shift(c, 8);
        CHECK(torch::equal(s.index({Slice(), Slice(1, 5)}), c.index({Slice(), Slice(1, 5)})));
    }
    SUBCASE("single step only zeroes the shifted channels") {
        auto one = torch::ones({1, 1, 16});
        CHECK(temporal_shift(one, 8).sum().item<double>() == 12.0);
    }
    CHECK_THROWS_AS(temporal_shift(torch::zeros({4, 4})), ValidationError);
}

TEST_CASE("temporal-shift classifier") {
    torch::manual_seed(1);
    TsmLite net(3);
    auto out = net->forward(torch::rand({2, 5, 3, 32, 32}));
    CHECK(out.sizes() == torch::IntArrayRef({2, 3}));
}

TEST_CASE("downstream training") {
    auto make = [](int n, int k, int offset) {
        std::vector<VideoSample> v;
        for (int i = 0; i < n; ++i) {
            auto s = testing::random_video("d" + std::to_string(offset + i), k, 16, i % 2, offset + i);
            if (s.label == 1) {
                for (auto& f : s.frames) f = FrameRecord(f.pixels() * 0.2 + 0.8);
            } else {
                for (auto& f : s.frames) f = FrameRecord(f.pixels() * 0.2);
            }
            v.push_back(s);
        }
        return v;
    };
    DownstreamConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.input_size = 16;
    auto r = train_downstream(make(12, 4, 0), make(6, 4, 100), cfg);
    CHECK(r.test_accuracy >= 0.0);
    CHECK(r.test_accuracy <= 1.0);
    CHECK(r.test_accuracy >= 0.8);

    auto ragged = make(4, 4, 0);
    ragged[2].frames.pop_back();
    CHECK_THROWS_AS(train_downstream(ragged, make(2, 4, 9), cfg), ValidationError);
    CHECK_THROWS_AS(train_downstream(make(4, 4, 0), make(2, 3, 9), cfg), ValidationError);
    CHECK_THROWS_AS(train_downstream({}, make(2, 4, 9), cfg), ValidationError);
}

TEST_CASE("report emission") {
    testing::TempDir dir;
    auto report = sample_report();
    auto files = emit_report(report, dir / "a");
    REQUIRE(files.plot.has_value());
    const auto svg = testing::slurp(*files.plot);
    CHECK(count_of(svg, "<polyline class=\"series\"") == 3);
    CHECK(count_of(svg, "<circle class=\"point\"") == 12);
    const auto md = testing::slurp(files.table);
    CHECK(md.find("## Classification") != std::string::npos);
    CHECK(md.find("| Selector |") != std::string::npos);
    CHECK(md.find("accsampler") != std::string::npos);

    SUBCASE("re-emitting from the JSON reproduces every byte") {
        auto back = nlohmann::json::parse(testing::slurp(files.json)).get<EvalReport>();
        auto again = emit_report(back, dir / "b");
        CHECK(testing::slurp(again.json) == testing::slurp(files.json));
        CHECK(testing::slurp(again.table) == md);
        CHECK(testing::slurp(*again.plot) == svg);
    }

    SUBCASE("no downstream results gives a header-only table and no plot") {
        EvalReport empty;
        auto e = emit_report(empty, dir / "a");
        CHECK_FALSE(e.plot.has_value());
        CHECK_FALSE(std::filesystem::exists(dir / "a/accuracy_vs_k.svg"));
        const auto t = testing::slurp(e.table);
        CHECK(t.find("| Selector |") != std::string::npos);
        CHECK(t.find("| accsampler |") == std::string::npos);
    }
}

}
