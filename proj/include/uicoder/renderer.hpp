#pragma once

// HTML → PNG rendering with explicit failure classification.
//
// Page-level problems (script hangs, crashes, navigation errors) come back as
// RenderResult failures; only infrastructure problems throw.

#include "uicoder/records.hpp"
#include "uicoder/types.hpp"

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace uicoder {

class Store;

inline constexpr std::uint32_t kPageHeightCap = 8192;

class Renderer {
public:
    virtual ~Renderer() = default;

    virtual RenderResult render(const HtmlDocument& doc, const Viewport& viewport,
                                std::chrono::milliseconds timeout) = 0;

    // Positionally aligned with `docs`; runs up to the pool size at once.
    virtual std::vector<RenderResult> render_batch(std::span<const HtmlDocument> docs, const Viewport& viewport,
                                                   std::chrono::milliseconds timeout);
};

struct ChromiumOptions {
    std::filesystem::path executable;
    std::optional<std::filesystem::path> fonts_conf;
    std::size_t pool_size = 4;
    bool offline = true;
    std::uint32_t page_height_cap = kPageHeightCap;
    std::chrono::milliseconds network_idle{500};
    std::chrono::milliseconds settle{300};
    std::chrono::milliseconds pool_wait{600000};
    std::chrono::milliseconds launch_timeout{30000};
};

// Locates the pinned browser: $UICODER_BROWSER, then the compiled-in
// third_party/browser install. fonts.conf is picked up next to the binary.
std::optional<ChromiumOptions> find_pinned_browser();

// Drives a headless Chromium over the DevTools protocol. One browser
// process, one isolated browser context per in-flight render.
//
// Settle protocol per render: navigate, wait for the load event, wait until
// no request has been in flight for `network_idle`, inject CSS that disables
// animations/transitions/caret, wait `settle`, capture the full page clipped
// to the viewport width and `page_height_cap`.
class ChromiumRenderer final : public Renderer {
public:
    ChromiumRenderer(Store& store, ChromiumOptions options);
    ~ChromiumRenderer() override;

    RenderResult render(const HtmlDocument& doc, const Viewport& viewport, std::chrono::milliseconds timeout) override;

    const ChromiumOptions& options() const noexcept { return options_; }

private:
    class Impl;
    std::unique_ptr<Impl> impl_;
    ChromiumOptions options_;
};

}  // namespace uicoder
