#include "support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <deque>

using namespace uicoder;
using namespace uicoder::testing;

namespace {

class ScriptTransport final : public Transport {
public:
    std::deque<std::variant<HttpResponse, ErrorCode>> replies;
    std::vector<HttpRequest> requests;
    HttpResponse post(const HttpRequest& request) override {
        requests.push_back(request);
        auto next = replies.front();
        if (replies.size() > 1) replies.pop_front();
        if (auto* code = std::get_if<ErrorCode>(&next)) throw Error(*code, "scripted");
        return std::get<HttpResponse>(next);
    }
};

HttpResponse openai_ok(const std::string& text) {
    nlohmann::json j{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                     {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 3}}}};
    return {200, j.dump()};
}

struct HttpEnv {
    TempDir dir;
    Store store{dir.path()};
    ScriptTransport* transport;
    std::unique_ptr<VlmClient> client;
    std::vector<std::chrono::milliseconds> sleeps;

    HttpEnv() {
        auto t = std::make_unique<ScriptTransport>();
        transport = t.get();
        client = std::make_unique<VlmClient>(store, std::move(t), RetryPolicy{});
        client->set_sleeper([this](std::chrono::milliseconds d) { sleeps.push_back(d); });
        ProviderProfile p;
        p.id = "oa";
        p.shape = "openai-chat";
        p.base_url = "https://example.invalid/v1";
        p.api_key_env = "UICODER_TEST_KEY";
        client->add_profile(p);
        setenv("UICODER_TEST_KEY", "sk-test", 1);
    }

    ChatRequest request(const std::vector<ImageRef>& images = {}) {
        ChatRequest r;
        r.provider_id = "oa";
        r.model_id = "m";
        ChatMessage m;
        for (const auto& img : images) m.parts.push_back(ContentPart::from_image(img));
        m.parts.push_back(ContentPart::from_text("describe"));
        r.messages.push_back(m);
        return r;
    }
};

}  // namespace

TEST_CASE("extract_answer") {
    auto a = extract_answer("<think>reasoning</think><answer>final</answer>");
    CHECK(a.think == "reasoning");
    CHECK(a.answer == "final");
    CHECK(extract_answer("just text").answer == "just text");
    CHECK(extract_answer("<think>r</think> tail").answer == " tail");
    CHECK_THROWS_AS(extract_answer("<think>never closed"), Error);
    CHECK_THROWS_AS(extract_answer("<answer>x"), Error);
}

TEST_CASE("extract_boxed") {
    CHECK(extract_boxed("\\boxed{The second image is better}") == "The second image is better");
    CHECK(extract_boxed("a \\boxed{1} b \\boxed{2}") == "2");
    CHECK(extract_boxed("\\boxed{\\frac{1}{2}}") == "\\frac{1}{2}");
    try {
        extract_boxed("\\boxed{85");
        FAIL("expected");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unbalanced_braces);
    }
    try {
        extract_boxed("85");
        FAIL("expected");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::no_boxed_content);
    }
}

TEST_CASE("parse_score") {
    CHECK(parse_score("85") == 85);
    CHECK(parse_score(" 85/100 ") == 85);
    CHECK(parse_score("85%") == 85);
    CHECK(parse_score("72.5") == 72.5);
    CHECK_THROWS_AS(parse_score("105"), Error);
    CHECK_THROWS_AS(parse_score("eighty"), Error);
    CHECK_THROWS_AS(parse_score("-3"), Error);
}

TEST_CASE("ModelRef parsing") {
    auto m = ModelRef::parse("mock:/tmp/a:b.json");
    CHECK(m.provider_id == "mock");
    CHECK(m.model_id == "/tmp/a:b.json");
    CHECK_THROWS_AS(ModelRef::parse("nocolon"), Error);
}

TEST_CASE("openai wire format carries images as data URLs") {
    HttpEnv env;
    auto img = solid_image(env.store, 1, 2, 3);
    env.transport->replies = {openai_ok("hello")};
    auto resp = env.client->complete(env.request({img}));
    CHECK(resp.raw_text == "hello");
    REQUIRE(resp.token_usage);
    CHECK(resp.token_usage->completion == 3);
    const auto& req = env.transport->requests.at(0);
    CHECK(req.url == "https://example.invalid/v1/chat/completions");
    CHECK(req.headers.at("Authorization") == "Bearer sk-test");
    auto body = nlohmann::json::parse(req.body);
    const std::string url = body["messages"][0]["content"][0]["image_url"]["url"];
    CHECK(url.rfind("data:image/png;base64,", 0) == 0);
    CHECK(body["messages"][0]["content"][1]["text"] == "describe");
}

TEST_CASE("anthropic wire format") {
    HttpEnv env;
    ProviderProfile p;
    p.id = "an";
    p.shape = "anthropic-messages";
    p.base_url = "https://example.invalid";
    auto img = solid_image(env.store, 1, 2, 3);
    ChatRequest r = env.request({img});
    auto body = nlohmann::json::parse(env.client->encode_body(p, r));
    CHECK(body["messages"][0]["content"][0]["type"] == "image");
    CHECK(body["messages"][0]["content"][0]["source"]["media_type"] == "image/png");
}

TEST_CASE("retries on 429 and 5xx with backoff") {
    HttpEnv env;
    env.transport->replies = {HttpResponse{429, "slow down"}, HttpResponse{503, "busy"}, openai_ok("done")};
    auto resp = env.client->complete(env.request());
    CHECK(resp.raw_text == "done");
    CHECK(resp.retries == 2);
    REQUIRE(env.sleeps.size() == 2);
    CHECK(env.sleeps[1] > env.sleeps[0]);
}

TEST_CASE("retries are bounded") {
    HttpEnv env;
    env.transport->replies = {ErrorCode::timeout};
    try {
        env.client->complete(env.request());
        FAIL("expected timeout");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::timeout);
    }
    CHECK(env.transport->requests.size() == 4);
}

TEST_CASE("auth failures are not retried") {
    HttpEnv env;
    env.transport->replies = {HttpResponse{401, "bad key"}};
    try {
        env.client->complete(env.request());
        FAIL("expected auth failure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::auth_failure);
    }
    CHECK(env.transport->requests.size() == 1);
}

TEST_CASE("missing credential fails before any network call") {
    HttpEnv env;
    unsetenv("UICODER_TEST_KEY");
    CHECK_THROWS_AS(env.client->check_ready("oa"), Error);
    CHECK_THROWS_AS(env.client->complete(env.request()), Error);
    CHECK(env.transport->requests.empty());
}

TEST_CASE("unresolvable image fails before any network call") {
    HttpEnv env;
    ImageRef ghost{std::string(64, 'a'), 1, 1};
    try {
        env.client->complete(env.request({ghost}));
        FAIL("expected precondition");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::precondition);
    }
    CHECK(env.transport->requests.empty());
}

TEST_CASE("malformed provider body") {
    HttpEnv env;
    env.transport->replies = {HttpResponse{200, "{\"unexpected\":true}"}};
    try {
        env.client->complete(env.request());
        FAIL("expected malformed response");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::malformed_provider_response);
    }
}

TEST_CASE("scripted mock consumes responses in order") {
    TempDir dir;
    Store store(dir.path());
    ScriptedBackend script(nlohmann::json::parse(R"({
        "rules": [{"template": "gen_polish", "responses": ["one", "two"]}],
        "default": "fallback"})"));
    ChatRequest r;
    r.template_id = "gen_polish";
    CHECK(script.complete(r) == "one");
    CHECK(script.complete(r) == "two");
    CHECK(script.complete(r) == "two");
    r.template_id = "gen_edit";
    CHECK(script.complete(r) == "fallback");
    CHECK(script.calls() == 4);
}

TEST_CASE("faithful mock") {
    TempDir dir;
    Store store(dir.path());
    FaithfulJudge judge(store);
    auto white = solid_image(store, 255, 255, 255);
    auto black = solid_image(store, 0, 0, 0);
    CHECK(judge.score(white, white) == 100);
    CHECK(judge.score(white, black) == 0);
    auto grey = solid_image(store, 128, 128, 128);
    CHECK(judge.score(white, grey) > 0);
    CHECK(judge.score(white, grey) < 99);
}
