// Runs against the pinned headless browser; exits 77 (skipped) when it has not
// been fetched.

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "support.hpp"

#include <chrono>
#include <iostream>

using namespace uicoder;
using namespace uicoder::testing;
using namespace std::chrono_literals;

namespace {

struct Shared {
    TempDir dir;
    Store store{dir.path() / "store"};
    ChromiumRenderer renderer;
    explicit Shared(ChromiumOptions options) : renderer(store, options) {}
};

Shared* g_shared = nullptr;

image::Rgba pixels(const RenderResult& r) {
    REQUIRE(r.ok());
    auto bytes = g_shared->store.get_blob(r.image().hash);
    REQUIRE(bytes);
    auto rgba = image::decode_png(*bytes);
    REQUIRE(rgba);
    return *rgba;
}

std::array<int, 3> pixel_at(const image::Rgba& img, std::uint32_t x, std::uint32_t y) {
    const auto* p = &img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 4];
    return {p[0], p[1], p[2]};
}

RenderResult render(const std::string& html, Viewport vp = {}, std::chrono::milliseconds timeout = 15s) {
    return g_shared->renderer.render(HtmlDocument(html), vp, timeout);
}

const char* kCard = R"(<!DOCTYPE html><html><head><style>
body { margin: 0; font-family: sans-serif; background: #f4f4f8; }
.card { margin: 40px; padding: 24px; background: white; border-radius: 12px; box-shadow: 0 2px 8px #0003; }
h1 { color: #223; } button { padding: 8px 16px; animation: pulse 1s infinite; }
@keyframes pulse { from { opacity: 1 } to { opacity: 0.2 } }
</style></head><body><div class="card"><h1>Pricing</h1><p>Simple plans for teams of every size.</p>
<input autofocus placeholder="Email"><button>Start</button></div></body></html>)";

}  // namespace

TEST_CASE("identical documents render to identical bytes") {
    auto a = render(kCard), b = render(kCard), c = render(kCard);
    REQUIRE(a.ok());
    CHECK(a == b);
    CHECK(b == c);
    CHECK(a.image().width == 1280);
}

TEST_CASE("a hanging script is a timeout and the renderer stays usable") {
    const auto start = std::chrono::steady_clock::now();
    auto hung = render("<html><body><script>while (true) {}</script></body></html>", {}, 3s);
    const auto elapsed = std::chrono::steady_clock::now() - start;
    REQUIRE_FALSE(hung.ok());
    CHECK(hung.reason() == RenderFailure::timeout);
    CHECK(elapsed < 20s);
    auto after = render(kCard);
    CHECK(after.ok());
}

TEST_CASE("viewport width and device scale set the capture width") {
    auto narrow = render(kCard, Viewport{480, 0, 1.0});
    REQUIRE(narrow.ok());
    CHECK(narrow.image().width == 480);
    auto retina = render(kCard, Viewport{480, 0, 2.0});
    REQUIRE(retina.ok());
    CHECK(retina.image().width == 960);
    auto fixed = render(kCard, Viewport{640, 400, 1.0});
    REQUIRE(fixed.ok());
    CHECK(fixed.image().height == 400);
}

TEST_CASE("tall pages are capped but report their full height") {
    auto tall = render("<html><body style='margin:0'><div style='height:12000px;background:#3a6'></div></body></html>");
    REQUIRE(tall.ok());
    CHECK(tall.image().height == kPageHeightCap);
    CHECK(tall.value().page_height_px >= 12000);
}

TEST_CASE("network access is blocked") {
    auto r = render(R"(<html><body style="margin:0;background:#fff">
<img src="https://example.com/logo.png" onerror="document.body.style.background='#ff0000'"
     onload="document.body.style.background='#00ff00'"></body></html>)");
    auto img = pixels(r);
    CHECK(pixel_at(img, img.width - 5, 5) == std::array<int, 3>{255, 0, 0});
}

TEST_CASE("each render gets a fresh browser context") {
    const std::string page = R"(<html><body style="margin:0"><script>
const seen = localStorage.getItem('k');
localStorage.setItem('k', '1');
document.body.style.background = seen ? '#ff0000' : '#0000ff';
</script></body></html>)";
    for (int i = 0; i < 2; ++i) {
        auto img = pixels(render(page));
        CHECK(pixel_at(img, 10, 10) == std::array<int, 3>{0, 0, 255});
    }
}

TEST_CASE("render_batch keeps positions aligned") {
    std::vector<HtmlDocument> docs;
    const char* colors[] = {"#ff0000", "#00ff00", "#0000ff"};
    for (const char* c : colors)
        docs.emplace_back(std::string("<html><body style='margin:0;background:") + c + "'></body></html>");
    docs.emplace_back("<html><body><script>while (true) {}</script></body></html>");
    auto results = g_shared->renderer.render_batch(docs, Viewport{}, 4s);
    REQUIRE(results.size() == 4);
    CHECK(pixel_at(pixels(results[0]), 10, 10) == std::array<int, 3>{255, 0, 0});
    CHECK(pixel_at(pixels(results[1]), 10, 10) == std::array<int, 3>{0, 255, 0});
    CHECK(pixel_at(pixels(results[2]), 10, 10) == std::array<int, 3>{0, 0, 255});
    CHECK_FALSE(results[3].ok());
}

int main(int argc, char** argv) {
    auto options = find_pinned_browser();
    if (!options) {
        std::cerr << "pinned browser not found; run scripts/fetch_browser.sh or set UICODER_BROWSER\n";
        return 77;
    }
    options->pool_size = 2;
    Shared shared(*options);
    g_shared = &shared;
    doctest::Context ctx(argc, argv);
    const int rc = ctx.run();
    g_shared = nullptr;
    return rc;
}
