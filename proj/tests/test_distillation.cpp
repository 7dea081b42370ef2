#include <doctest.h>

#include <cmath>
#include <set>

#include "accsampler/distillation.hpp"
#include "accsampler/image_io.hpp"
#include "support.hpp"

using namespace accsampler;

namespace {

StepRecord step(int start, int end, int decision, std::vector<double> probs = {}, std::vector<double> soft = {}) {
    StepRecord s;
    s.start = start;
    s.end = end;
    s.decision = decision;
    s.probs = std::move(probs);
    s.soft = std::move(soft);
    return s;
}

EpisodeTrace make_trace(std::vector<StepRecord> steps) {
    EpisodeTrace t;
    t.video_id = "v";
    for (std::size_t i = 0; i < steps.size(); ++i) steps[i].step = static_cast<int>(i);
    t.num_frames = steps.empty() ? 0 : steps.back().end;
    t.steps = std::move(steps);
    return t;
}

} // namespace

TEST_SUITE("distillation") {

TEST_CASE("preference score closed forms") {
    ActionLadder l;
    CHECK(preference_score({1, 0, 0, 0}, l) == doctest::Approx(1.0));
    CHECK(preference_score({0, 0, 0, 1}, l) == doctest::Approx(1.0 / 7.0));
    CHECK(preference_score({0.25, 0.25, 0.25, 0.25}, l) == doctest::Approx(0.419048).epsilon(1e-6));
    CHECK_THROWS_AS(preference_score({1, 0, 0}, l), ValidationError);
    CHECK_THROWS_AS(preference_score({-0.1, 0.6, 0.5, 0}, l), ValidationError);
    CHECK_THROWS_AS(preference_score({0.6, 0.6, 0, 0}, l), ValidationError);
}

TEST_CASE("preference score is monotone and bounded") {
    ActionLadder l;
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> a(4);
        double sum = 0;
        for (auto& x : a) sum += (x = u(rng));
        for (auto& x : a) x /= sum;
        const double s = preference_score(a, l);
        CHECK(s >= 1.0 / 7.0 - 1e-12);
        CHECK(s <= 1.0 + 1e-12);
        // moving mass to a shorter clip never lowers the score
        auto b = a;
        const double move = b[3] * 0.5;
        b[3] -= move;
        b[0] += move;
        CHECK(preference_score(b, l) >= s - 1e-12);
    }
}

TEST_CASE("frame scores spread around the clip middle") {
    ActionLadder l;
    SUBCASE("five-frame clip centred on its middle") {
        auto t = make_trace({step(0, 10, 0), step(10, 15, 0)});
        auto fs = frame_scores(t, ScoreVariant::S1, l);
        for (int f = 10; f < 15; ++f) CHECK(fs.scores[f] == doctest::Approx(std::pow(0.9, std::abs(f - 12))));
    }
    SUBCASE("even-length clip uses the lower middle") {
        auto t = make_trace({step(0, 4, 1)});
        auto fs = frame_scores(t, ScoreVariant::S1, l);
        const double s = 0.419048;
        CHECK(fs.scores[0] == doctest::Approx(s * 0.9).epsilon(1e-5));
        CHECK(fs.scores[1] == doctest::Approx(s).epsilon(1e-5));
        CHECK(fs.scores[2] == doctest::Approx(s * 0.9).epsilon(1e-5));
        CHECK(fs.scores[3] == doctest::Approx(s * 0.81).epsilon(1e-5));
    }
    SUBCASE("single-frame clip keeps the full score") {
        auto t = make_trace({step(0, 1, 3), step(1, 2, 0)});
        auto fs = frame_scores(t, ScoreVariant::S1, l);
        CHECK(fs.scores[1] == doctest::Approx(1.0 / 7.0));
    }
    SUBCASE("arithmetic decay floors at zero") {
        auto t = make_trace({step(0, 1, 0), step(1, 26, 0)});
        auto fs = frame_scores(t, ScoreVariant::S1, l, ScoreDecay::Arithmetic, 0.1);
        CHECK(fs.scores[13] == doctest::Approx(1.0));
        CHECK(fs.scores[10] == doctest::Approx(0.7));
        CHECK(fs.scores[1] == 0.0);
        CHECK(fs.scores[25] == 0.0);
    }
}

TEST_CASE("score variants read the matching action vector") {
    ActionLadder l;
    auto t = make_trace({step(0, 1, 2, {0.1, 0.2, 0.3, 0.4}, {0.7, 0.1, 0.1, 0.1}), step(1, 6, 0)});
    CHECK(frame_scores(t, ScoreVariant::S1, l).scores[3] == doctest::Approx(0.2));
    CHECK(frame_scores(t, ScoreVariant::S2, l).scores[3] ==
          doctest::Approx(0.1 + 0.2 / 3 + 0.3 / 5 + 0.4 / 7));
    CHECK(frame_scores(t, ScoreVariant::S3, l).scores[3] ==
          doctest::Approx(0.7 + 0.1 / 3 + 0.1 / 5 + 0.1 / 7));
    auto no_soft = make_trace({step(0, 1, 2, {0.1, 0.2, 0.3, 0.4}), step(1, 6, 0)});
    CHECK_THROWS_AS(frame_scores(no_soft, ScoreVariant::S3, l), ValidationError);
    CHECK(score_variant_from_string("s2") == ScoreVariant::S2);
    CHECK_THROWS_AS(score_variant_from_string("S4"), ValidationError);
}

TEST_CASE("frame scores are non-negative and never exceed their clip score") {
    ActionLadder l;
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<StepRecord> steps;
        int pos = 0;
        const int n = 1 + static_cast<int>(rng() % 64);
        int prev = 0;
        while (pos < n) {
            const int k = pos == 0 ? 1 : l.actions[prev];
            const int end = std::min(n, pos + k);
            prev = static_cast<int>(rng() % 4);
            steps.push_back(step(pos, end, prev));
            pos = end;
        }
        auto t = make_trace(steps);
        auto fs = frame_scores(t, ScoreVariant::S1, l);
        REQUIRE(fs.scores.size() == static_cast<std::size_t>(n));
        for (double s : fs.scores) {
            CHECK(s >= 0.0);
            CHECK(s <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("top-K selection") {
    FrameScores fs{"v", ScoreVariant::S1, {0.1, 0.5, 0.5, 0.2, 0.5, 0.9}};
    CHECK(select_topk(fs, 3).indices == std::vector<int>{1, 2, 5});
    CHECK(select_topk(fs, 6).indices == std::vector<int>{0, 1, 2, 3, 4, 5});
    FrameScores flat{"v", ScoreVariant::S1, std::vector<double>(10, 0.3)};
    CHECK(select_topk(flat, 4).indices == std::vector<int>{0, 1, 2, 3});
    CHECK_THROWS_AS(select_topk(fs, 7), ValidationError);
    CHECK_THROWS_AS(select_topk(fs, 0), ValidationError);

    SUBCASE("selection ignores positive rescaling and shifts of the scores") {
        Rng rng(6);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int trial = 0; trial < 50; ++trial) {
            FrameScores a{"v", ScoreVariant::S1, {}};
            for (int i = 0; i < 40; ++i) a.scores.push_back(std::round(u(rng) * 10) / 10);
            FrameScores b = a;
            for (auto& s : b.scores) s = 3.5 * s + 0.25;
            for (int k : {1, 8, 20, 40}) CHECK(select_topk(a, k).indices == select_topk(b, k).indices);
        }
    }
    SUBCASE("raising one score never drops that frame from the selection") {
        Rng rng(8);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int trial = 0; trial < 50; ++trial) {
            FrameScores a{"v", ScoreVariant::S1, {}};
            for (int i = 0; i < 30; ++i) a.scores.push_back(u(rng));
            const int k = 1 + static_cast<int>(rng() % 30);
            auto sel = select_topk(a, k).indices;
            for (int idx : sel) {
                FrameScores b = a;
                b.scores[idx] += 0.5;
                auto again = select_topk(b, k).indices;
                CHECK(std::find(again.begin(), again.end(), idx) != again.end());
            }
        }
    }
}

TEST_CASE("uniform and random selection") {
    auto u = uniform_select("v", 64, 8);
    CHECK(u.indices == std::vector<int>{0, 8, 16, 24, 32, 40, 48, 56});
    CHECK(u.selector == SelectorKind::Uniform);
    CHECK(uniform_select("v", 10, 3).indices == std::vector<int>{0, 3, 6});
    CHECK(uniform_select("v", 5, 5).indices == std::vector<int>{0, 1, 2, 3, 4});
    CHECK_THROWS_AS(uniform_select("v", 5, 6), ValidationError);

    auto r = random_select("clip_7", 64, 20, 3);
    CHECK(r == random_select("clip_7", 64, 20, 3));
    CHECK(r.indices.size() == 20);
    CHECK(std::set<int>(r.indices.begin(), r.indices.end()).size() == 20);
    CHECK(std::is_sorted(r.indices.begin(), r.indices.end()));
    CHECK(r.indices.back() < 64);
    CHECK(random_select("clip_8", 64, 20, 3).indices != r.indices);
    CHECK(random_select("clip_7", 64, 20, 4).indices != r.indices);
    CHECK_THROWS_AS(random_select("v", 4, 8, 0), ValidationError);

    SUBCASE("every frame is equally likely") {
        std::vector<int> hits(16, 0);
        for (int i = 0; i < 4000; ++i) {
            for (int idx : random_select("v" + std::to_string(i), 16, 4, 0).indices) ++hits[idx];
        }
        for (int h : hits) CHECK(std::abs(h - 1000) < 150);
    }
}

TEST_CASE("selection files") {
    testing::TempDir dir;
    std::vector<SelectionResult> sel{uniform_select("a", 10, 3), random_select("b", 20, 5, 1)};
    write_selections(sel, dir / "s.jsonl");
    CHECK((load_selections(dir / "s.jsonl") == sel));
    CHECK(nlohmann::json(sel[0]).contains("K"));
    CHECK_THROWS_AS(load_selections(dir / "none.jsonl"), PrerequisiteError);
    std::ofstream(dir / "bad.jsonl") << "{}\n";
    CHECK_THROWS_AS(load_selections(dir / "bad.jsonl"), ParseError);
}

TEST_CASE("distilled manifest") {
    testing::TempDir dir;
    Manifest src;
    src.split = Split::Train;
    for (int v = 0; v < 2; ++v) {
        ManifestEntry e;
        e.video_id = "v" + std::to_string(v);
        for (int f = 0; f < 16; ++f) {
            const std::string rel = "frames/" + e.video_id + "/" + std::to_string(f) + ".png";
            write_png(dir / ("src/" + rel), torch::full({3, 4, 4}, f / 16.0));
            e.frames.push_back(rel);
            e.frame_labels.push_back(v == 1 && f == 3 ? 1 : 0);
        }
        e.label = v;
        src.entries.push_back(e);
    }
    std::vector<SelectionResult> sel{uniform_select("v0", 16, 8), uniform_select("v1", 16, 8)};
    auto out = write_distilled(src, dir / "src", sel, dir / "out/k8/train.jsonl");
    REQUIRE(out.entries.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(out.entries[i].frames.size() == 8);
        CHECK(out.entries[i].label == src.entries[i].label);
        CHECK(out.entries[i].selector == "uniform");
    }
    // the event frame (3) is not among the uniform picks, yet the clip label survives
    CHECK(out.entries[1].label == 1);
    auto videos = load_videos(dir / "out/k8/train.jsonl");
    REQUIRE(videos.size() == 2);
    CHECK(videos[0].num_frames() == 8);
    CHECK(torch::equal(videos[0].frames[1].raw(), read_png(dir / "src/frames/v0/2.png")));

    CHECK_THROWS_AS(write_distilled(src, dir / "src", {uniform_select("ghost", 16, 8)}, dir / "x.jsonl"),
                    ValidationError);
    SelectionResult bad = uniform_select("v0", 16, 8);
    bad.indices.back() = 16;
    CHECK_THROWS_AS(write_distilled(src, dir / "src", {bad}, dir / "y.jsonl"), ValidationError);
}

}
