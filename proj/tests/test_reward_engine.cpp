#include "support.hpp"

#include "uicoder/reward_engine.hpp"

#include <doctest.h>

#include <map>

using namespace uicoder;
using namespace uicoder::testing;

namespace {

// Judge whose answers depend on the attached images: verifier scores come
// from `scores[candidate hash]`; comparator scores from the same table.
struct TableJudge {
    std::map<std::string, double> scores;
    std::string operator()(const ChatRequest& req) const {
        auto imgs = request_images(req);
        if (imgs.size() == 2) return score_reply(scores.at(imgs[1].hash));
        const double a = scores.at(imgs[1].hash), b = scores.at(imgs[2].hash);
        return triplet_reply(a, b, conclusion_for(a, b));
    }
};

JudgeOptions test_judge(std::size_t concurrency = 1) {
    JudgeOptions o;
    o.model = ModelRef::parse("test:judge");
    o.concurrency = concurrency;
    return o;
}

Candidate rendered(const std::string& id, const ImageRef& img) {
    return Candidate{id, HtmlDocument("<p>" + id + "</p>"), RenderResult::success(img, img.height)};
}

Candidate failed(const std::string& id) {
    return Candidate{id, HtmlDocument("<p>" + id + "</p>"), RenderResult::failure(RenderFailure::script_fatal)};
}

}  // namespace

TEST_CASE("parse_score_verdict reads the boxed score") {
    CHECK(parse_score_verdict("\\boxed{85} close match").scores == std::vector<double>{85});
    CHECK(parse_score_verdict("<think>hmm \\boxed{3}</think><answer>\\boxed{62}</answer>").scores ==
          std::vector<double>{62});
    CHECK_THROWS_AS(parse_score_verdict("\\boxed{105}"), Error);
    CHECK_THROWS_AS(parse_score_verdict("score 85"), Error);
}

TEST_CASE("parse_triplet_verdict reads both scores and the conclusion") {
    auto v = parse_triplet_verdict("second: 85 … third: 78 … \\boxed{The second image is better}");
    CHECK(v.scores == std::vector<double>{85, 78});
    CHECK(v.conclusion == "The second image is better");

    auto w = parse_triplet_verdict(triplet_reply(62.5, 71, "The third image is better"));
    CHECK(w.scores == std::vector<double>{62.5, 71});

    try {
        parse_triplet_verdict("Second image score: 85\n\\boxed{The second image is better}");
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::parse_error);
    }
}

TEST_CASE("preference_from_conclusion") {
    CHECK(preference_from_conclusion("The second image is better") == Preference::a);
    CHECK(preference_from_conclusion("The third image is better") == Preference::b);
    CHECK(preference_from_conclusion("Both images are equally close") == Preference::tie);
    CHECK(preference_from_conclusion("The second and third image are the same") == Preference::tie);
    CHECK(!preference_from_conclusion("no idea").has_value());
}

TEST_CASE("verifier_score normalizes to [0,1]") {
    Env env([](const ChatRequest&) { return std::string("\\boxed{85} mostly right"); });
    Judge judge(env.client, env.prompts, test_judge());
    auto t = solid_image(env.store, 255, 255, 255);
    auto c = solid_image(env.store, 0, 0, 0);
    CHECK(verifier_score(judge, t, c) == 0.85);
}

TEST_CASE("verifier_score surfaces an out-of-range score after retries") {
    Env env([](const ChatRequest&) { return std::string("\\boxed{105}"); });
    JudgeOptions o = test_judge();
    o.parse_retries = 2;
    Judge judge(env.client, env.prompts, o);
    auto t = solid_image(env.store, 255, 255, 255);
    auto c = solid_image(env.store, 0, 0, 0);
    try {
        verifier_score(judge, t, c);
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::parse_error);
    }
    CHECK(env.backend->calls == 3);
}

TEST_CASE("verifier_score retries an unparseable answer") {
    std::atomic<int> n{0};
    Env env([&](const ChatRequest&) { return std::string(n++ == 0 ? "looks fine" : "\\boxed{40}"); });
    Judge judge(env.client, env.prompts, test_judge());
    auto t = solid_image(env.store, 1, 1, 1);
    auto c = solid_image(env.store, 2, 2, 2);
    CHECK(verifier_score(judge, t, c) == doctest::Approx(0.40));
    CHECK(judge.model_calls() == 2);
    CHECK(judge.invocations() == 1);
}

TEST_CASE("faithful mock scores identical images 1.0") {
    Env env;
    JudgeOptions o;
    o.model = ModelRef::parse("mock:faithful");
    Judge judge(env.client, env.prompts, o);
    auto t = solid_image(env.store, 10, 20, 30);
    CHECK(verifier_score(judge, t, t) == 1.0);
}

TEST_CASE("comp_score preference") {
    auto run = [](const std::string& reply) {
        Env env([reply](const ChatRequest&) { return reply; });
        Judge judge(env.client, env.prompts, test_judge());
        auto t = solid_image(env.store, 0, 0, 0);
        auto a = solid_image(env.store, 1, 1, 1);
        auto b = solid_image(env.store, 2, 2, 2);
        return comp_score(judge, t, a, b);
    };
    SUBCASE("conclusion and scores agree") {
        auto c = run("second: 85 … third: 78 … \\boxed{The second image is better}");
        CHECK(c.score_a == 85);
        CHECK(c.score_b == 78);
        CHECK(c.preferred == Preference::a);
    }
    SUBCASE("tie") {
        CHECK(run(triplet_reply(70, 70, "Both images are equally close")).preferred == Preference::tie);
    }
    SUBCASE("conclusion wins over contradicting scores") {
        CHECK(run(triplet_reply(85, 78, "The third image is better")).preferred == Preference::b);
    }
    SUBCASE("unreadable conclusion falls back to scores") {
        CHECK(run(triplet_reply(60, 78, "hard to say")).preferred == Preference::b);
    }
}

TEST_CASE("score_algo1 rules") {
    Env env;
    auto t = solid_image(env.store, 0, 0, 0);
    auto ref = solid_image(env.store, 1, 1, 1);
    auto c1 = solid_image(env.store, 2, 2, 2);
    auto c2 = solid_image(env.store, 3, 3, 3);
    auto c3 = solid_image(env.store, 4, 4, 4);
    TableJudge table{{{ref.hash, 70}, {c1.hash, 90}, {c2.hash, 60}, {c3.hash, 70}}};
    env.client.add_backend("table", std::make_shared<FnBackend>(table));
    JudgeOptions o = test_judge(4);
    o.model = ModelRef::parse("table:judge");
    Judge judge(env.client, env.prompts, o);

    RolloutBatch batch{1, t, ref, {rendered("a", c1), rendered("b", c2), failed("c"), rendered("d", c3)}};
    RewardMap m = score_algo1(batch, judge);
    CHECK(m.entries.at("a") == 0.9);
    CHECK(m.entries.at("b") == 0.0);
    CHECK(m.entries.at("c") == -1.0);
    CHECK(m.entries.at("d") == 0.0);  // S_i == S_ref
    CHECK(m.judge_calls == 4);        // S_ref once + three rendered candidates
}

TEST_CASE("score_algo1 with only failures calls no judge") {
    Env env;
    Judge judge(env.client, env.prompts, test_judge());
    auto t = solid_image(env.store, 0, 0, 0);
    RolloutBatch batch{1, t, t, {failed("a"), failed("b")}};
    RewardMap m = score_algo1(batch, judge);
    CHECK(m.entries.at("a") == -1.0);
    CHECK(m.entries.at("b") == -1.0);
    CHECK(env.backend->calls == 0);
}

TEST_CASE("score_algo2 rules") {
    std::string reply;
    Env env([&](const ChatRequest&) { return reply; });
    Judge judge(env.client, env.prompts, test_judge());
    auto t = solid_image(env.store, 0, 0, 0);
    auto ref = solid_image(env.store, 1, 1, 1);
    auto c = solid_image(env.store, 2, 2, 2);

    reply = triplet_reply(70, 90, "The third image is better");
    CHECK(score_algo2({1, t, ref, {rendered("a", c)}}, judge).entries.at("a") == 0.9);
    reply = triplet_reply(70, 70, "Both images are equally close");
    CHECK(score_algo2({1, t, ref, {rendered("a", c)}}, judge).entries.at("a") == 0.0);
    const auto before = env.backend->calls.load();
    CHECK(score_algo2({1, t, ref, {failed("a")}}, judge).entries.at("a") == -1.0);
    CHECK(env.backend->calls == before);
}

TEST_CASE("score_algo3 hand-evaluated round robin") {
    Env env;
    auto t = solid_image(env.store, 0, 0, 0);
    auto ref = solid_image(env.store, 1, 1, 1);
    auto a = solid_image(env.store, 2, 2, 2);
    auto b = solid_image(env.store, 3, 3, 3);
    auto c = solid_image(env.store, 4, 4, 4);
    auto s = solid_image(env.store, 5, 5, 5);
    // a beats b and c; b ties c; s does not beat the reference.
    TableJudge table{{{ref.hash, 50}, {a.hash, 90}, {b.hash, 70}, {c.hash, 70}, {s.hash, 40}}};
    env.client.add_backend("table", std::make_shared<FnBackend>(table));
    JudgeOptions o = test_judge(3);
    o.model = ModelRef::parse("table:judge");
    Judge judge(env.client, env.prompts, o);

    SUBCASE("pool of three") {
        RewardMap m = score_algo3({1, t, ref, {rendered("a", a), rendered("b", b), rendered("c", c)}}, judge);
        CHECK(m.entries.at("a") == 3.0);
        CHECK(m.entries.at("b") == 1.5);
        CHECK(m.entries.at("c") == 1.5);
        CHECK(m.pair_log.size() == 3);
        CHECK(m.judge_calls == 3 + 3);
    }
    SUBCASE("full trace with failure and screening") {
        RewardMap m =
            score_algo3({1, t, ref, {rendered("a", a), rendered("b", b), rendered("s", s), failed("f")}}, judge);
        CHECK(m.entries == std::map<std::string, double>{{"a", 2}, {"b", 1}, {"s", 0}, {"f", -1}});
        CHECK(m.pool == std::vector<std::string>{"a", "b"});
        auto j = to_json(m);
        CHECK(j["pair_log"][0]["outcome"] == "a-wins");
    }
    SUBCASE("singleton pool keeps reward 1") {
        RewardMap m = score_algo3({1, t, ref, {rendered("a", a)}}, judge);
        CHECK(m.entries.at("a") == 1.0);
        CHECK(m.pair_log.empty());
    }
}

TEST_CASE("score_algo3 records an unresolvable pair as a tie") {
    Env env;
    auto t = solid_image(env.store, 0, 0, 0);
    auto ref = solid_image(env.store, 1, 1, 1);
    auto a = solid_image(env.store, 2, 2, 2);
    auto b = solid_image(env.store, 3, 3, 3);
    env.client.add_backend("flaky", std::make_shared<FnBackend>([&](const ChatRequest& req) {
        auto imgs = request_images(req);
        if (imgs[1].hash == ref.hash) return triplet_reply(10, 90, "The third image is better");
        return std::string("I cannot decide.");
    }));
    JudgeOptions o = test_judge();
    o.model = ModelRef::parse("flaky:judge");
    Judge judge(env.client, env.prompts, o);
    RewardMap m = score_algo3({1, t, ref, {rendered("a", a), rendered("b", b)}}, judge);
    CHECK(m.entries.at("a") == 1.5);
    CHECK(m.entries.at("b") == 1.5);
    CHECK(m.pair_log.at(0).unresolved);
}

TEST_CASE("position-bias mode combines both orderings") {
    Env env;
    auto t = solid_image(env.store, 0, 0, 0);
    auto ref = solid_image(env.store, 1, 1, 1);
    auto a = solid_image(env.store, 2, 2, 2);
    auto b = solid_image(env.store, 3, 3, 3);
    // A judge that always prefers whatever is shown second.
    env.client.add_backend("biased", std::make_shared<FnBackend>([&](const ChatRequest& req) {
        auto imgs = request_images(req);
        if (imgs[1].hash == ref.hash) return triplet_reply(10, 90, "The third image is better");
        return triplet_reply(80, 70, "The second image is better");
    }));
    JudgeOptions o = test_judge();
    o.model = ModelRef::parse("biased:judge");
    {
        Judge judge(env.client, env.prompts, o);
        RewardMap m = score_algo3({1, t, ref, {rendered("a", a), rendered("b", b)}}, judge);
        CHECK(m.entries.at("a") == 2.0);
    }
    o.both_orders = true;
    Judge judge(env.client, env.prompts, o);
    RewardMap m = score_algo3({1, t, ref, {rendered("a", a), rendered("b", b)}}, judge);
    CHECK(m.entries.at("a") == 1.5);
    CHECK(m.entries.at("b") == 1.5);
    CHECK(m.judge_calls == 2 + 2);
}

TEST_CASE("batch validation") {
    Env env;
    Judge judge(env.client, env.prompts, test_judge());
    auto t = solid_image(env.store, 0, 0, 0);
    CHECK_THROWS_AS(score_algo3({1, t, t, {}}, judge), Error);
    CHECK_THROWS_AS(score_algo3({1, t, t, {failed("a"), failed("a")}}, judge), Error);
}

TEST_CASE("judge cache serves repeated calls at temperature 0 only") {
    Env env([](const ChatRequest&) { return std::string("\\boxed{77}"); });
    auto t = solid_image(env.store, 0, 0, 0);
    auto c = solid_image(env.store, 9, 9, 9);
    {
        Judge judge(env.client, env.prompts, test_judge(), &env.store);
        verifier_score(judge, t, c);
        verifier_score(judge, t, c);
        CHECK(env.backend->calls == 1);
    }
    JudgeOptions hot = test_judge();
    hot.decode.temperature = 0.7;
    Judge judge(env.client, env.prompts, hot, &env.store);
    verifier_score(judge, t, c);
    CHECK(env.backend->calls == 2);
}

TEST_CASE("ui2code_reward") {
    std::string reply = "\\boxed{62}";
    Env env([&](const ChatRequest&) { return reply; });
    Judge judge(env.client, env.prompts, test_judge());
    auto t = solid_image(env.store, 0, 0, 0);
    const Viewport vp;
    CHECK(ui2code_reward(t, HtmlDocument(colored_page("00ff00", "render:fatal")), judge, env.renderer, vp,
                         std::chrono::seconds(1)) == -1.0);
    CHECK(ui2code_reward(t, HtmlDocument(colored_page("00ff00")), judge, env.renderer, vp, std::chrono::seconds(1)) ==
          0.62);
    reply = "\\boxed{100}";
    CHECK(ui2code_reward(t, HtmlDocument(colored_page("00ff00")), judge, env.renderer, vp, std::chrono::seconds(1)) ==
          1.0);
}
