#include "support.hpp"

#include "uicoder/session.hpp"

#include <doctest.h>

#include <future>
#include <thread>

using namespace uicoder;
using namespace uicoder::testing;

TEST_CASE("extract_html") {
    const std::string page = "<!DOCTYPE html><html><body><h1>Hi</h1></body></html>";
    SUBCASE("bare document") { CHECK(extract_html("  " + page + "\n").source() == page); }
    SUBCASE("bare <html> is case-insensitive") { CHECK(extract_html("<HTML><body></body></HTML>").source().size() > 0); }
    SUBCASE("single fence") { CHECK(extract_html(fenced(page)).source() == page + "\n"); }
    SUBCASE("json then html") {
        const std::string answer = "```json\n{\"a\": 1}\n```\nand\n```html\n" + page + "\n```";
        CHECK(extract_html(answer).source() == page + "\n");
    }
    SUBCASE("longest html block wins over short css") {
        const std::string css = "```css\nbody { color: red; margin: 0 }\n```\n";
        std::string big = "<!DOCTYPE html><html><body>" + std::string(860, 'x') + "</body></html>";
        auto doc = extract_html(css + "```html\n" + big + "\n```");
        CHECK(doc.source() == big + "\n");
    }
    SUBCASE("prose only") {
        try {
            extract_html("I would build a header and a footer.");
            FAIL("expected extraction failure");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::extraction_failed);
        }
    }
    SUBCASE("fences without markup") { CHECK_THROWS_AS(extract_html("```\nplain text\n```"), Error); }
}

namespace {

struct Harness {
    Env env;
    std::unique_ptr<Judge> judge;
    std::unique_ptr<SessionEngine> engine;
    ImageRef target;

    explicit Harness(FnBackend::Fn model, FnBackend::Fn judge_fn = nullptr) : env(std::move(model)) {
        if (judge_fn) env.client.add_backend("judge", std::make_shared<FnBackend>(std::move(judge_fn)));
        JudgeOptions jo;
        jo.model = ModelRef::parse("judge:x");
        judge = std::make_unique<Judge>(env.client, env.prompts, jo);
        SessionOptions so;
        so.model = ModelRef::parse("test:model");
        engine = std::make_unique<SessionEngine>(env.store, env.client, env.prompts, env.renderer, so, judge.get());
        target = solid_image(env.store, 255, 255, 255);
    }
};

// Model that emits a page whose color encodes the round: generation →
// "000001", each polish increments.
std::string counting_model(const ChatRequest& req) {
    static const std::regex color(R"re(data-color="#([0-9a-f]{6})")re");
    std::smatch m;
    const std::string text = request_text(req);
    int next = 1;
    if (req.template_id == "gen_polish" || req.template_id == "gen_edit") {
        if (std::regex_search(text, m, color)) next = std::stoi(m[1].str(), nullptr, 16) + 1;
    }
    char hex[7];
    std::snprintf(hex, sizeof hex, "%06x", next);
    return fenced(colored_page(hex));
}

}  // namespace

TEST_CASE("start_generate produces one accepted round") {
    Harness h(counting_model);
    Session s = h.engine->start_generate(h.target);
    REQUIRE(s.rounds.size() == 1);
    CHECK(s.rounds[0].kind == RoundKind::generate);
    CHECK(s.rounds[0].accepted);
    CHECK(s.rounds[0].output_render.ok());
    CHECK(h.env.store.load_session(s.id) == s);
}

TEST_CASE("start_generate without HTML fails extraction") {
    Harness h([](const ChatRequest&) { return std::string("A header, a hero and a footer."); });
    try {
        h.engine->start_generate(h.target);
        FAIL("expected failure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::extraction_failed);
    }
}

TEST_CASE("polish passes target, previous code and previous render") {
    std::vector<ChatRequest> seen;
    Harness h([&](const ChatRequest& r) {
        seen.push_back(r);
        return counting_model(r);
    });
    Session s = h.engine->start_generate(h.target);
    Round r = h.engine->polish_once(s);
    CHECK(r.accepted);
    CHECK(r.index == 1);
    REQUIRE(seen.size() == 2);
    auto imgs = request_images(seen[1]);
    REQUIRE(imgs.size() == 2);
    CHECK(imgs[0] == h.target);
    CHECK(imgs[1] == s.rounds[0].output_render.image());
    CHECK(request_text(seen[1]).find(s.rounds[0].output_code.source()) != std::string::npos);
    CHECK(*r.input_code == s.rounds[0].output_code);
}

TEST_CASE("accept-if-better rejection keeps the head; edit uses the last accepted round") {
    Harness h(counting_model, [](const ChatRequest&) {
        return triplet_reply(80, 60, "The second image is better");  // old render preferred
    });
    Session s = h.engine->start_generate(h.target, AdvancePolicy::accept_if_better);
    Round p = h.engine->polish_once(s);
    CHECK_FALSE(p.accepted);
    CHECK(s.head_index() == 0u);
    REQUIRE(p.verdicts.size() == 1);

    Round e = h.engine->edit(s, "make the header background red");
    CHECK(e.kind == RoundKind::edit);
    CHECK(*e.input_code == s.rounds[0].output_code);
    CHECK(e.instruction == "make the header background red");
}

TEST_CASE("edit guards") {
    Harness h(counting_model);
    Session s = h.engine->start_generate(h.target);
    try {
        h.engine->edit(s, "  ");
        FAIL("expected precondition");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::precondition);
    }
}

TEST_CASE("polish after a failed render is a precondition error") {
    Harness h([](const ChatRequest&) { return fenced(colored_page("123456", "render:fatal")); });
    Session s = h.engine->start_generate(h.target);
    CHECK_FALSE(s.rounds[0].output_render.ok());
    try {
        h.engine->polish_once(s);
        FAIL("expected precondition");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::precondition);
    }
}

TEST_CASE("run_tts round counts") {
    Harness h(counting_model);
    CHECK(h.engine->run_tts(h.target, 1).rounds.size() == 1);
    Session s = h.engine->run_tts(h.target, 4);
    REQUIRE(s.rounds.size() == 4);
    CHECK(s.mode_history() ==
          std::vector<RoundKind>{RoundKind::generate, RoundKind::polish, RoundKind::polish, RoundKind::polish});
    for (std::size_t i = 1; i < s.rounds.size(); ++i) CHECK(*s.rounds[i].input_code == s.rounds[i - 1].output_code);
    CHECK_THROWS_AS(h.engine->run_tts(h.target, 0), Error);
}

TEST_CASE("run_tts accept-if-better with a rejected round 2") {
    std::atomic<int> calls{0};
    Harness h(counting_model, [&](const ChatRequest&) {
        return calls++ == 0 ? triplet_reply(80, 60, "The second image is better")
                            : triplet_reply(60, 80, "The third image is better");
    });
    Session s = h.engine->run_tts(h.target, 3, AdvancePolicy::accept_if_better);
    REQUIRE(s.rounds.size() == 3);
    CHECK(s.rounds[0].accepted);
    CHECK_FALSE(s.rounds[1].accepted);
    CHECK(s.rounds[2].accepted);
    CHECK(*s.rounds[2].input_code == s.rounds[0].output_code);
}

TEST_CASE("run_tts aborts on a render failure under always-advance and keeps the partial session") {
    Harness h([](const ChatRequest& r) {
        if (r.template_id == "gen_polish") return fenced(colored_page("222222", "render:timeout"));
        return fenced(colored_page("111111"));
    });
    try {
        h.engine->run_tts(h.target, 4);
        FAIL("expected abort");
    } catch (const SessionAborted& e) {
        CHECK(e.partial().rounds.size() == 2);
        CHECK(h.env.store.load_session(e.partial().id).rounds.size() == 2);
    }
}

TEST_CASE("by-id operations enforce a single writer") {
    std::promise<void> entered, release;
    auto release_future = release.get_future().share();
    std::atomic<bool> block{false};
    Harness h([&](const ChatRequest& r) {
        if (block.exchange(false)) {
            entered.set_value();
            release_future.wait();
        }
        return counting_model(r);
    });
    Session s = h.engine->start_generate(h.target);
    block = true;
    std::thread first([&] { h.engine->polish_once(s.id); });
    entered.get_future().wait();
    CHECK(h.engine->busy(s.id));
    try {
        h.engine->polish_once(s.id, false);
        FAIL("expected conflict");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::conflict);
    }
    release.set_value();
    first.join();
    CHECK_FALSE(h.engine->busy(s.id));
    CHECK(h.env.store.load_session(s.id).rounds.size() == 2);
}
