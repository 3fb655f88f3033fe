#pragma once

// Declarative JSON configuration plus the runtime that wires the modules
// together for the CLI and the API service.
//
// String values may reference environment variables as ${NAME}; an unset
// variable is a config error. Secrets are never inlined: providers name the
// variable holding their key (api_key_env) and it is read at call time.

#include "uicoder/evaluator.hpp"
#include "uicoder/prompts.hpp"
#include "uicoder/renderer.hpp"
#include "uicoder/reward_engine.hpp"
#include "uicoder/session.hpp"
#include "uicoder/store.hpp"
#include "uicoder/vlm_client.hpp"

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace uicoder {

struct RendererConfig {
    std::optional<std::filesystem::path> browser;  // default: pinned install
    std::optional<std::filesystem::path> fonts_conf;
    std::size_t pool_size = 4;
    bool offline = true;
    Viewport viewport;
    std::chrono::milliseconds timeout{30000};
    std::chrono::milliseconds network_idle{500};
    std::chrono::milliseconds settle{300};
};

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
};

struct Config {
    std::filesystem::path store_root = ".uicoder-store";
    std::filesystem::path prompts_dir;
    std::string model = "mock:echo";
    std::string judge = "mock:faithful";
    std::vector<ProviderProfile> providers;  // built-in openai/anthropic unless overridden
    RendererConfig renderer;
    std::size_t concurrency = 4;
    RetryPolicy retry;
    DecodeParams generation{8192, 0.0};
    JudgeOptions judge_options;
    ServerConfig server;

    // Defaults, then `path` if given, else $UICODER_CONFIG if set.
    static Config load(const std::optional<std::filesystem::path>& path);
    static Config from_json(const nlohmann::json& j);
    void validate() const;
};

// Replaces ${NAME} with the environment value; throws config_error if unset.
std::string interpolate_env(const std::string& text);

// Owns the long-lived pieces. The renderer is created on first use so
// commands that never render do not need a browser.
class Runtime {
public:
    explicit Runtime(Config config);
    ~Runtime();

    const Config& config() const noexcept { return config_; }
    Store& store() { return *store_; }
    VlmClient& client() { return *client_; }
    const PromptRegistry& prompts() const { return prompts_; }
    Renderer& renderer();
    void set_renderer(std::shared_ptr<Renderer> renderer);

    // Judge bound to `judge_model` (default: config.judge).
    std::unique_ptr<Judge> make_judge(const std::optional<std::string>& judge_model = std::nullopt);
    SessionOptions session_options(const std::optional<std::string>& model = std::nullopt) const;

private:
    Config config_;
    std::unique_ptr<Store> store_;
    std::unique_ptr<VlmClient> client_;
    PromptRegistry prompts_;
    std::mutex renderer_mutex_;
    std::shared_ptr<Renderer> renderer_;
};

}  // namespace uicoder
