#include <doctest.h>

#include <cmath>

#include "accsampler/losses.hpp"
#include "support.hpp"

using namespace accsampler;

namespace {

torch::Tensor rows(std::initializer_list<std::initializer_list<double>> values) {
    std::vector<torch::Tensor> r;
    for (auto row : values) r.push_back(torch::tensor(std::vector<double>(row), torch::kFloat64));
    return torch::stack(r);
}

EpisodeTrace trace_with(const std::vector<int>& decisions, const std::vector<double>& costs) {
    EpisodeTrace t;
    int pos = 0;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        StepRecord s;
        s.step = static_cast<int>(i);
        s.start = pos;
        s.end = ++pos;
        s.cost = costs[i];
        s.decision = decisions[i];
        t.steps.push_back(s);
    }
    t.num_frames = pos;
    return t;
}

} // namespace

TEST_SUITE("losses") {

TEST_CASE("classification loss") {
    CHECK(classification_loss(torch::zeros({2}), {1}).item<double>() == doctest::Approx(std::log(2.0)));
    CHECK(classification_loss(torch::zeros({3, 5}), {0, 4, 2}).item<double>() == doctest::Approx(std::log(5.0)));
    CHECK(classification_loss(torch::tensor({-1e4, 1e4}), {1}).item<double>() == doctest::Approx(0.0));
    auto logits = torch::tensor({0.3, -1.1}, torch::kFloat64);
    const double expect = -std::log(std::exp(-1.1) / (std::exp(0.3) + std::exp(-1.1)));
    CHECK(classification_loss(logits, {1}).item<double>() == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(classification_loss(torch::zeros({2}), {2}), ValidationError);
    CHECK_THROWS_AS(classification_loss(torch::zeros({2}), {-1}), ValidationError);
    CHECK_THROWS_AS(classification_loss(torch::zeros({2, 2}), {0}), ValidationError);
}

TEST_CASE("balance loss") {
    SUBCASE("uniform usage costs nothing") {
        CHECK(balance_loss({torch::full({5, 4}, 0.25, torch::kFloat64)}).item<double>() == doctest::Approx(0.0));
    }
    SUBCASE("always the same action") {
        auto always = rows({{1, 0, 0, 0}, {1, 0, 0, 0}});
        CHECK(balance_loss({always}).item<double>() == doctest::Approx(1.5));
        CHECK(balance_loss({always}, BalanceNorm::Squared).item<double>() == doctest::Approx(0.75));
    }
    SUBCASE("two actions half the time each") {
        auto half = rows({{1, 0, 0, 0}, {0, 1, 0, 0}});
        CHECK(balance_loss({half}).item<double>() == doctest::Approx(1.0));
    }
    SUBCASE("videos weigh equally regardless of length") {
        auto a = rows({{1, 0, 0, 0}});
        auto b = rows({{0, 1, 0, 0}, {0, 1, 0, 0}, {0, 1, 0, 0}});
        CHECK(torch::allclose(action_usage({a, b}), torch::tensor({0.5, 0.5, 0.0, 0.0}, torch::kFloat64)));
    }
    SUBCASE("bounded by 2 (1 - 1/|A|)") {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(7);
        for (int i = 0; i < 100; ++i) {
            auto r = torch::softmax(torch::randn({6, 4}, gen, torch::kFloat64) * 3.0, 1);
            const double v = balance_loss({r}).item<double>();
            CHECK(v >= 0.0);
            CHECK(v <= 1.5 + 1e-12);
        }
    }
    CHECK_THROWS_AS(balance_loss({torch::zeros({0, 4}, torch::kFloat64)}), ValidationError);
}

TEST_CASE("gflops loss") {
    auto costs = torch::tensor({0.4, 0.2, 0.1, 0.05}, torch::kFloat64);
    CHECK(gflops_loss({rows({{0, 0, 1, 0}})}, costs).item<double>() == doctest::Approx(0.1));
    CHECK(gflops_loss({torch::full({3, 4}, 0.25, torch::kFloat64)}, costs).item<double>() ==
          doctest::Approx(0.1875));
    auto gen = at::make_generator<at::CPUGeneratorImpl>(9);
    for (int i = 0; i < 100; ++i) {
        auto r = torch::softmax(torch::randn({5, 4}, gen, torch::kFloat64), 1);
        const double v = gflops_loss({r}, costs).item<double>();
        CHECK(v >= 0.05 - 1e-12);
        CHECK(v <= 0.4 + 1e-12);
    }
}

TEST_CASE("hard diagnostics") {
    auto t = trace_with({0, 0, 1, 3}, {0.4, 0.4, 0.2, 0.05});
    auto h = hard_actions(t, 4);
    CHECK(torch::equal(h.sum(0), torch::tensor({2.0, 1.0, 0.0, 1.0}, torch::kFloat64)));
    // usage (0.5, 0.25, 0, 0.25)
    CHECK(balance_loss_hard({t}, 4) == doctest::Approx(0.5));
    CHECK(gflops_loss_hard({t}) == doctest::Approx((0.4 + 0.4 + 0.2 + 0.05) / 4));
    auto u = trace_with({2}, {0.1});
    CHECK(gflops_loss_hard({t, u}) == doctest::Approx(((0.4 + 0.4 + 0.2 + 0.05) / 4 + 0.1) / 2));
}

TEST_CASE("total loss") {
    LossWeights w;
    CHECK(total_loss(0.5, 1.0, 0.4, w) == doctest::Approx(0.84));
    CHECK(total_loss(torch::tensor(0.5), torch::tensor(1.0), torch::tensor(0.4), w).item<double>() ==
          doctest::Approx(0.84));
    LossWeights off{0.0, 0.0};
    CHECK(total_loss(0.7, 3.0, 9.0, off) == 0.7);
    CHECK_THROWS_AS((LossWeights{-0.1, 0.1}.validate()), ValidationError);
}

TEST_CASE("surrogate gradients") {
    auto logits = torch::randn({3, 4}, torch::kFloat64).requires_grad_(true);
    auto p = torch::softmax(logits, 1);
    auto costs = torch::tensor({0.4, 0.2, 0.1, 0.05}, torch::kFloat64);
    auto loss = balance_loss({p}) + gflops_loss({p}, costs);
    loss.backward();
    CHECK(logits.grad().abs().sum().item<double>() > 0.0);
}

}
