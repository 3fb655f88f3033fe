#pragma once

// Shared test doubles: a temp directory, an in-process judge/model backend
// driven by a lambda, and a renderer that paints a solid color chosen by the
// document so tests control render identity without a browser.

#include "uicoder/error.hpp"
#include "uicoder/image.hpp"
#include "uicoder/mock_providers.hpp"
#include "uicoder/prompts.hpp"
#include "uicoder/renderer.hpp"
#include "uicoder/store.hpp"
#include "uicoder/vlm_client.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <random>
#include <regex>
#include <string>

namespace uicoder::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("uicoder-test-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

class FnBackend final : public ProviderBackend {
public:
    using Fn = std::function<std::string(const ChatRequest&)>;
    explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}
    std::string complete(const ChatRequest& request) override {
        ++calls;
        return fn_(request);
    }
    std::atomic<std::size_t> calls{0};

private:
    Fn fn_;
};

class NoTransport final : public Transport {
public:
    HttpResponse post(const HttpRequest&) override {
        throw Error(ErrorCode::transport, "network disabled in tests");
    }
};

// Paints a 64x48 solid image. Color comes from data-color="#rrggbb" in the
// document, else from its hash. Markers force failures: "render:timeout",
// "render:fatal".
class FakeRenderer final : public Renderer {
public:
    explicit FakeRenderer(Store& store) : store_(store) {}
    RenderResult render(const HtmlDocument& doc, const Viewport&, std::chrono::milliseconds) override {
        ++calls;
        if (doc.source().find("render:timeout") != std::string::npos)
            return RenderResult::failure(RenderFailure::timeout);
        if (doc.source().find("render:fatal") != std::string::npos)
            return RenderResult::failure(RenderFailure::script_fatal);
        static const std::regex color(R"re(data-color="#([0-9a-fA-F]{6})")re");
        std::smatch m;
        std::string hex = doc.hash().substr(0, 6);
        if (std::regex_search(doc.source(), m, color)) hex = m[1].str();
        const auto v = std::stoul(hex, nullptr, 16);
        auto png = image::encode_png(image::solid(64, 48, (v >> 16) & 0xff, (v >> 8) & 0xff, v & 0xff));
        ImageRef img = store_.put_image(png);
        return RenderResult::success(img, 48);
    }
    std::atomic<std::size_t> calls{0};

private:
    Store& store_;
};

inline ImageRef solid_image(Store& store, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return store.put_image(image::encode_png(image::solid(64, 48, r, g, b)));
}

inline std::string colored_page(const std::string& hex, const std::string& marker = "") {
    return "<!DOCTYPE html><html><body data-color=\"#" + hex + "\"><!--" + marker + "--></body></html>";
}

inline std::string fenced(const std::string& html) { return "Here is the page.\n```html\n" + html + "\n```\n"; }

inline std::string score_reply(double score) {
    return "\\boxed{" + std::to_string(static_cast<int>(score)) + "}\nThe layouts match closely.";
}

inline std::string triplet_reply(double second, double third, const std::string& conclusion) {
    auto fmt = [](double v) {
        std::string s = std::to_string(v);
        s.erase(s.find_last_not_of('0') + 1);
        if (s.back() == '.') s.pop_back();
        return s;
    };
    return "Second image score: " + fmt(second) + "\n\nReason: layout is close.\n\nThird image score: " + fmt(third) +
           "\n\nReason: spacing differs.\n\n\\boxed{" + conclusion + "}";
}

inline std::string conclusion_for(double second, double third) {
    if (second > third) return "The second image is better";
    if (third > second) return "The third image is better";
    return "Both images are equally close to the reference";
}

// Store + client + prompts + fake renderer under a temp directory, with a
// "test" provider driven by `fn` and the built-in "mock" provider.
struct Env {
    TempDir dir;
    Store store{dir.path() / "store"};
    VlmClient client{store, std::make_unique<NoTransport>(), RetryPolicy{1, std::chrono::milliseconds(0),
                                                                         std::chrono::milliseconds(0), 0.0}};
    PromptRegistry prompts = PromptRegistry::load(default_prompts_dir());
    FakeRenderer renderer{store};
    std::shared_ptr<FnBackend> backend;

    explicit Env(FnBackend::Fn fn = [](const ChatRequest&) { return std::string("unused"); })
        : backend(std::make_shared<FnBackend>(std::move(fn))) {
        client.add_backend("test", backend, 16);
        client.add_backend("mock", std::make_shared<MockBackend>(store), 16);
    }
};

}  // namespace uicoder::testing
