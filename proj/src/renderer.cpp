#include "uicoder/renderer.hpp"

#include "uicoder/cdp.hpp"
#include "uicoder/error.hpp"
#include "uicoder/image.hpp"
#include "uicoder/parallel.hpp"
#include "uicoder/store.hpp"
#include "uicoder/vlm_client.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <mutex>
#include <semaphore>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;

namespace uicoder {

std::vector<RenderResult> Renderer::render_batch(std::span<const HtmlDocument> docs, const Viewport& viewport,
                                                 std::chrono::milliseconds timeout) {
    std::vector<RenderResult> results(docs.size());
    parallel_for(docs.size(), docs.size(), [&](std::size_t i) { results[i] = render(docs[i], viewport, timeout); });
    return results;
}

std::optional<ChromiumOptions> find_pinned_browser() {
    std::vector<fs::path> candidates;
    if (const char* env = std::getenv("UICODER_BROWSER"); env && *env) candidates.emplace_back(env);
#ifdef UICODER_BROWSER_DIR
    candidates.emplace_back(fs::path(UICODER_BROWSER_DIR) / "chromium");
#endif
    for (const auto& exe : candidates) {
        std::error_code ec;
        if (!fs::exists(exe, ec)) continue;
        ChromiumOptions options;
        options.executable = exe;
        if (fs::path conf = exe.parent_path() / "fonts.conf"; fs::exists(conf, ec)) options.fonts_conf = conf;
        return options;
    }
    return std::nullopt;
}

namespace {

using cdp::Clock;

constexpr const char* kDocumentUrl = "http://render.uicoder.invalid/index.html";
constexpr std::uint32_t kLayoutHeight = 800;  // initial viewport height for full-page captures

constexpr const char* kFreezeScript = R"JS((() => {
  const style = document.createElement('style');
  style.textContent = '*, *::before, *::after { animation: none !important; transition: none !important; caret-color: transparent !important; }';
  (document.head || document.documentElement).appendChild(style);
  if (document.activeElement && document.activeElement.blur) document.activeElement.blur();
  return true;
})())JS";

std::string base64_decode(const std::string& text) {
    std::string out(3 * (text.size() / 4), '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) throw Error(ErrorCode::protocol_error, "screenshot payload is not base64");
    std::size_t padding = 0;
    if (!text.empty() && text.back() == '=') ++padding;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

struct PageFailure {
    RenderFailure reason;
    std::string detail;
};

// One render inside one attached page session.
class PageRun {
public:
    PageRun(cdp::Connection& conn, std::string session, Clock::time_point deadline, bool offline,
            std::string html_b64)
        : conn_(conn), session_(std::move(session)), deadline_(deadline), offline_(offline),
          html_b64_(std::move(html_b64)) {}

    json command(const std::string& method, json params = json::object()) {
        auto future = conn_.send(method, std::move(params), session_);
        auto ready = [&] { return future.wait_for(std::chrono::seconds(0)) == std::future_status::ready; };
        pump_until(ready);
        const json response = future.get();
        if (response.contains("error")) {
            throw Error(ErrorCode::protocol_error, method + ": " + response["error"].value("message", "error"));
        }
        return response.value("result", json::object());
    }

    void pump_until(const std::function<bool()>& done) {
        for (;;) {
            if (crashed_) throw PageFailure{RenderFailure::script_fatal, "page crashed"};
            if (done()) return;
            if (conn_.closed()) throw Error(ErrorCode::protocol_error, "browser connection closed");
            if (Clock::now() >= deadline_) throw PageFailure{RenderFailure::timeout, "render deadline exceeded"};
            // Wake periodically: time-based conditions (idle, settle) get no notification.
            const auto wake = std::min(deadline_, Clock::now() + std::chrono::milliseconds(20));
            if (auto event = conn_.next_event(session_, wake, done)) handle(*event);
        }
    }

    void pump_for(std::chrono::milliseconds duration) {
        const auto until = Clock::now() + duration;
        if (until >= deadline_) {
            pump_until([] { return false; });
        }
        pump_until([&] { return Clock::now() >= until; });
    }

    void wait_network_idle(std::chrono::milliseconds quiet) {
        pump_until([&] { return inflight_.empty() && Clock::now() - last_activity_ >= quiet; });
    }

    bool load_fired() const { return load_fired_; }

private:
    void handle(const json& event) {
        const std::string method = event.value("method", "");
        const json& params = event.contains("params") ? event["params"] : json::object();
        if (method == "Fetch.requestPaused") {
            const std::string id = params.value("requestId", "");
            const std::string url = params["request"].value("url", "");
            if (url == kDocumentUrl) {
                conn_.send("Fetch.fulfillRequest",
                           {{"requestId", id},
                            {"responseCode", 200},
                            {"responseHeaders", json::array({{{"name", "Content-Type"},
                                                              {"value", "text/html; charset=utf-8"}}})},
                            {"body", html_b64_}},
                           session_);
            } else if (offline_ && (url.rfind("http:", 0) == 0 || url.rfind("https:", 0) == 0 ||
                                    url.rfind("ws:", 0) == 0 || url.rfind("wss:", 0) == 0)) {
                conn_.send("Fetch.failRequest", {{"requestId", id}, {"errorReason", "BlockedByClient"}}, session_);
            } else {
                conn_.send("Fetch.continueRequest", {{"requestId", id}}, session_);
            }
        } else if (method == "Network.requestWillBeSent") {
            inflight_.insert(params.value("requestId", ""));
            last_activity_ = Clock::now();
        } else if (method == "Network.loadingFinished" || method == "Network.loadingFailed") {
            inflight_.erase(params.value("requestId", ""));
            last_activity_ = Clock::now();
        } else if (method == "Page.loadEventFired") {
            load_fired_ = true;
        } else if (method == "Inspector.targetCrashed") {
            crashed_ = true;
        } else if (method == "Page.javascriptDialogOpening") {
            conn_.send("Page.handleJavaScriptDialog", {{"accept", true}}, session_);
        }
    }

    cdp::Connection& conn_;
    std::string session_;
    Clock::time_point deadline_;
    bool offline_;
    std::string html_b64_;
    std::set<std::string> inflight_;
    Clock::time_point last_activity_ = Clock::now();
    bool load_fired_ = false;
    bool crashed_ = false;
};

}  // namespace

class ChromiumRenderer::Impl {
public:
    Impl(Store& store, const ChromiumOptions& options)
        : store_(store), options_(options), slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options.pool_size))) {}

    RenderResult render(const HtmlDocument& doc, const Viewport& viewport, std::chrono::milliseconds timeout) {
        if (doc.empty()) throw Error(ErrorCode::precondition, "cannot render an empty document");
        viewport.validate();
        if (!slots_.try_acquire_for(options_.pool_wait)) {
            throw Error(ErrorCode::pool_exhausted, "no free browser context");
        }
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots_};

        std::shared_ptr<cdp::Connection> conn = connection();
        const auto deadline = Clock::now() + timeout;
        const auto admin_deadline = [] { return Clock::now() + std::chrono::seconds(10); };

        std::string context_id, target_id, session_id;
        auto cleanup = [&] {
            try {
                if (!session_id.empty()) conn->unsubscribe(session_id);
                if (!target_id.empty()) conn->call("Target.closeTarget", {{"targetId", target_id}}, {}, admin_deadline());
                if (!context_id.empty()) {
                    conn->call("Target.disposeBrowserContext", {{"browserContextId", context_id}}, {}, admin_deadline());
                }
            } catch (const Error& e) {
                spdlog::warn("renderer: cleanup failed ({}); restarting browser", e.what());
                invalidate(conn);
            }
        };

        try {
            context_id = conn->call("Target.createBrowserContext", json::object(), {}, admin_deadline())
                             .at("browserContextId").get<std::string>();
            target_id = conn->call("Target.createTarget", {{"url", "about:blank"}, {"browserContextId", context_id}},
                                   {}, admin_deadline())
                            .at("targetId").get<std::string>();
            session_id = conn->call("Target.attachToTarget", {{"targetId", target_id}, {"flatten", true}}, {},
                                    admin_deadline())
                             .at("sessionId").get<std::string>();
            conn->subscribe(session_id);

            RenderResult result = drive(*conn, session_id, doc, viewport, deadline);
            cleanup();
            return result;
        } catch (const PageFailure& failure) {
            spdlog::info("renderer: {} ({})", to_string(failure.reason), failure.detail);
            cleanup();
            return RenderResult::failure(failure.reason);
        } catch (const Error& e) {
            spdlog::warn("renderer: protocol failure: {}", e.what());
            cleanup();
            if (e.code() == ErrorCode::timeout) return RenderResult::failure(RenderFailure::timeout);
            if (conn->closed()) invalidate(conn);
            return RenderResult::failure(RenderFailure::protocol_error);
        } catch (const json::exception& e) {
            spdlog::warn("renderer: unexpected protocol payload: {}", e.what());
            cleanup();
            return RenderResult::failure(RenderFailure::protocol_error);
        }
    }

private:
    RenderResult drive(cdp::Connection& conn, const std::string& session, const HtmlDocument& doc,
                       const Viewport& viewport, Clock::time_point deadline) {
        PageRun page(conn, session, deadline, options_.offline, base64_encode(doc.source()));
        page.command("Inspector.enable");
        page.command("Page.enable");
        page.command("Network.enable");
        page.command("Emulation.setDeviceMetricsOverride",
                     {{"width", viewport.width_px},
                      {"height", viewport.height_px ? viewport.height_px : kLayoutHeight},
                      {"deviceScaleFactor", viewport.device_scale},
                      {"mobile", false}});
        page.command("Fetch.enable", {{"patterns", json::array({{{"urlPattern", "*"}}})}});

        const json nav = page.command("Page.navigate", {{"url", kDocumentUrl}});
        if (nav.contains("errorText") && !nav["errorText"].get<std::string>().empty()) {
            throw PageFailure{RenderFailure::navigation_error, nav["errorText"].get<std::string>()};
        }
        page.pump_until([&] { return page.load_fired(); });
        page.wait_network_idle(options_.network_idle);

        const json frozen = page.command("Runtime.evaluate", {{"expression", kFreezeScript}, {"returnByValue", true}});
        if (frozen.contains("exceptionDetails")) {
            throw PageFailure{RenderFailure::script_fatal, "settle script raised"};
        }
        page.pump_for(options_.settle);

        const json metrics = page.command("Page.getLayoutMetrics");
        const json& size = metrics.contains("cssContentSize") ? metrics["cssContentSize"] : metrics.at("contentSize");
        const auto page_height = static_cast<std::uint32_t>(std::ceil(size.at("height").get<double>()));
        std::uint32_t capture_height = viewport.height_px ? viewport.height_px : page_height;
        capture_height = std::clamp<std::uint32_t>(capture_height, 1, options_.page_height_cap);

        const json shot = page.command("Page.captureScreenshot",
                                       {{"format", "png"},
                                        {"captureBeyondViewport", true},
                                        {"clip",
                                         {{"x", 0},
                                          {"y", 0},
                                          {"width", viewport.width_px},
                                          {"height", capture_height},
                                          {"scale", 1}}}});
        const std::string png = base64_decode(shot.at("data").get<std::string>());
        ImageRef ref = store_.put_image(png);
        const auto expect_w = static_cast<std::uint32_t>(std::lround(viewport.width_px * viewport.device_scale));
        const auto expect_h = static_cast<std::uint32_t>(std::lround(capture_height * viewport.device_scale));
        if (ref.width != expect_w || ref.height != expect_h) {
            throw Error(ErrorCode::protocol_error, "screenshot is " + std::to_string(ref.width) + "x" +
                                                       std::to_string(ref.height) + ", expected " +
                                                       std::to_string(expect_w) + "x" + std::to_string(expect_h));
        }
        return RenderResult::success(std::move(ref), page_height);
    }

    std::shared_ptr<cdp::Connection> connection() {
        std::lock_guard lock(browser_mutex_);
        if (!conn_ || conn_->closed() || !browser_ || !browser_->alive()) {
            conn_.reset();
            browser_.reset();
            browser_ = std::make_unique<cdp::BrowserProcess>(
                cdp::BrowserProcess::Options{options_.executable, options_.fonts_conf, {}, options_.launch_timeout});
            conn_ = std::make_shared<cdp::Connection>(browser_->websocket_url());
        }
        return conn_;
    }

    void invalidate(const std::shared_ptr<cdp::Connection>& conn) {
        std::lock_guard lock(browser_mutex_);
        if (conn_ == conn) {
            conn_.reset();
            browser_.reset();
        }
    }

    Store& store_;
    ChromiumOptions options_;
    std::counting_semaphore<> slots_;
    std::mutex browser_mutex_;
    std::unique_ptr<cdp::BrowserProcess> browser_;
    std::shared_ptr<cdp::Connection> conn_;
};

ChromiumRenderer::ChromiumRenderer(Store& store, ChromiumOptions options)
    : impl_(std::make_unique<Impl>(store, options)), options_(std::move(options)) {}

ChromiumRenderer::~ChromiumRenderer() = default;

RenderResult ChromiumRenderer::render(const HtmlDocument& doc, const Viewport& viewport,
                                      std::chrono::milliseconds timeout) {
    return impl_->render(doc, viewport, timeout);
}

}  // namespace uicoder
