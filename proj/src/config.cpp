#include "uicoder/config.hpp"

#include "uicoder/error.hpp"
#include "uicoder/mock_providers.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace uicoder {

namespace fs = std::filesystem;
using nlohmann::json;

std::string interpolate_env(const std::string& text) {
    static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
    std::string out;
    auto begin = std::sregex_iterator(text.begin(), text.end(), var);
    std::size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        out.append(text, last, m.position(0) - last);
        const std::string name = m[1].str();
        const char* value = std::getenv(name.c_str());
        if (!value) throw Error(ErrorCode::config_error, "environment variable " + name + " is not set");
        out += value;
        last = m.position(0) + m.length(0);
    }
    out.append(text, last);
    return out;
}

namespace {

json interpolate_all(const json& j) {
    if (j.is_string()) return interpolate_env(j.get<std::string>());
    if (j.is_object()) {
        json out = json::object();
        for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = interpolate_all(it.value());
        return out;
    }
    if (j.is_array()) {
        json out = json::array();
        for (const auto& v : j) out.push_back(interpolate_all(v));
        return out;
    }
    return j;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) throw Error(ErrorCode::config_error, "unknown key '" + it.key() + "' in " + where);
    }
}

std::vector<ProviderProfile> builtin_providers() {
    ProviderProfile openai;
    openai.id = "openai";
    openai.shape = "openai-chat";
    openai.base_url = "https://api.openai.com/v1";
    openai.api_key_env = "OPENAI_API_KEY";

    ProviderProfile anthropic;
    anthropic.id = "anthropic";
    anthropic.shape = "anthropic-messages";
    anthropic.base_url = "https://api.anthropic.com";
    anthropic.auth_header = "x-api-key";
    anthropic.auth_prefix = "";
    anthropic.api_key_env = "ANTHROPIC_API_KEY";
    return {openai, anthropic};
}

ProviderProfile provider_from_json(const json& p) {
    reject_unknown(p,
                   {"id", "shape", "base_url", "path", "auth_header", "auth_prefix", "api_key_env", "headers",
                    "concurrency", "timeout_ms"},
                   "provider");
    ProviderProfile profile;
    profile.id = p.at("id").get<std::string>();
    profile.shape = p.value("shape", std::string("openai-chat"));
    profile.base_url = p.at("base_url").get<std::string>();
    profile.path = p.value("path", std::string());
    profile.auth_header = p.value("auth_header", profile.auth_header);
    profile.auth_prefix = p.value("auth_prefix", profile.auth_prefix);
    profile.api_key_env = p.value("api_key_env", std::string());
    if (p.contains("headers")) profile.extra_headers = p.at("headers").get<std::map<std::string, std::string>>();
    profile.concurrency_limit = p.value("concurrency", profile.concurrency_limit);
    profile.timeout = std::chrono::milliseconds(p.value("timeout_ms", static_cast<int>(profile.timeout.count())));
    return profile;
}

DecodeParams decode_from_json(const json& j, DecodeParams d) {
    reject_unknown(j, {"max_output_tokens", "temperature"}, "decode settings");
    d.max_output_tokens = j.value("max_output_tokens", d.max_output_tokens);
    d.temperature = j.value("temperature", d.temperature);
    return d;
}

}  // namespace

Config Config::from_json(const json& raw) {
    const json j = interpolate_all(raw);
    Config c;
    c.providers = builtin_providers();
    try {
        reject_unknown(j,
                       {"store_root", "prompts_dir", "model", "judge", "providers", "renderer", "concurrency", "retry",
                        "generation", "judging", "server"},
                       "config");
        if (j.contains("store_root")) c.store_root = j["store_root"].get<std::string>();
        if (j.contains("prompts_dir")) c.prompts_dir = j["prompts_dir"].get<std::string>();
        c.model = j.value("model", c.model);
        c.judge = j.value("judge", c.judge);
        for (const auto& p : j.value("providers", json::array())) {
            ProviderProfile profile = provider_from_json(p);
            std::erase_if(c.providers, [&](const auto& existing) { return existing.id == profile.id; });
            c.providers.push_back(std::move(profile));
        }
        if (j.contains("renderer")) {
            const json& r = j["renderer"];
            reject_unknown(r,
                           {"browser", "fonts_conf", "pool_size", "offline", "viewport", "timeout_ms",
                            "network_idle_ms", "settle_ms"},
                           "renderer");
            if (r.contains("browser")) c.renderer.browser = r["browser"].get<std::string>();
            if (r.contains("fonts_conf")) c.renderer.fonts_conf = r["fonts_conf"].get<std::string>();
            c.renderer.pool_size = r.value("pool_size", c.renderer.pool_size);
            c.renderer.offline = r.value("offline", c.renderer.offline);
            if (r.contains("viewport")) c.renderer.viewport = r["viewport"].get<Viewport>();
            c.renderer.timeout = std::chrono::milliseconds(r.value("timeout_ms", 30000));
            c.renderer.network_idle = std::chrono::milliseconds(r.value("network_idle_ms", 500));
            c.renderer.settle = std::chrono::milliseconds(r.value("settle_ms", 300));
        }
        c.concurrency = j.value("concurrency", c.concurrency);
        if (j.contains("retry")) {
            const json& r = j["retry"];
            reject_unknown(r, {"max_attempts", "base_delay_ms", "max_delay_ms", "jitter"}, "retry");
            c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
            c.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", 500));
            c.retry.max_delay = std::chrono::milliseconds(r.value("max_delay_ms", 8000));
            c.retry.jitter = r.value("jitter", c.retry.jitter);
        }
        if (j.contains("generation")) c.generation = decode_from_json(j["generation"], c.generation);
        if (j.contains("judging")) {
            json r = j["judging"];
            reject_unknown(r, {"parse_retries", "cache", "both_orders", "max_output_tokens", "temperature"},
                           "judging");
            c.judge_options.parse_retries = r.value("parse_retries", c.judge_options.parse_retries);
            c.judge_options.use_cache = r.value("cache", c.judge_options.use_cache);
            c.judge_options.both_orders = r.value("both_orders", c.judge_options.both_orders);
            r.erase("parse_retries");
            r.erase("cache");
            r.erase("both_orders");
            c.judge_options.decode = decode_from_json(r, c.judge_options.decode);
        }
        if (j.contains("server")) {
            const json& s = j["server"];
            reject_unknown(s, {"host", "port"}, "server");
            c.server.host = s.value("host", c.server.host);
            c.server.port = s.value("port", c.server.port);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config_error, std::string("malformed config: ") + e.what());
    }
    c.validate();
    return c;
}

Config Config::load(const std::optional<fs::path>& path) {
    std::optional<fs::path> file = path;
    if (!file) {
        if (const char* env = std::getenv("UICODER_CONFIG"); env && *env) file = env;
    }
    if (!file) {
        Config c = from_json(json::object());
        return c;
    }
    std::ifstream in(*file);
    if (!in) throw Error(ErrorCode::config_error, "cannot read config " + file->string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config_error, file->string() + ": " + e.what());
    }
    Config c = from_json(j);
    // Relative paths in a config file are relative to the file.
    const fs::path base = file->parent_path();
    if (c.store_root.is_relative() && j.contains("store_root")) c.store_root = base / c.store_root;
    if (!c.prompts_dir.empty() && c.prompts_dir.is_relative()) c.prompts_dir = base / c.prompts_dir;
    return c;
}

void Config::validate() const {
    std::set<std::string> ids;
    for (const auto& p : providers) {
        if (p.id.empty()) throw Error(ErrorCode::config_error, "provider without id");
        if (p.id == "mock") throw Error(ErrorCode::config_error, "provider id 'mock' is reserved");
        if (!ids.insert(p.id).second) throw Error(ErrorCode::config_error, "duplicate provider " + p.id);
        if (p.shape != "openai-chat" && p.shape != "anthropic-messages")
            throw Error(ErrorCode::config_error, "provider " + p.id + ": unknown shape " + p.shape);
        if (p.concurrency_limit < 1) throw Error(ErrorCode::config_error, "provider " + p.id + ": concurrency < 1");
    }
    for (const auto* ref : {&model, &judge}) {
        ModelRef m = ModelRef::parse(*ref);
        if (m.provider_id != "mock" && !ids.count(m.provider_id))
            throw Error(ErrorCode::config_error, "model " + *ref + " names unknown provider " + m.provider_id);
    }
    try {
        renderer.viewport.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::config_error, e.what());
    }
    if (renderer.pool_size < 1) throw Error(ErrorCode::config_error, "renderer.pool_size must be >= 1");
    if (concurrency < 1) throw Error(ErrorCode::config_error, "concurrency must be >= 1");
    if (retry.max_attempts < 1) throw Error(ErrorCode::config_error, "retry.max_attempts must be >= 1");
}

// ---- runtime ---------------------------------------------------------------

Runtime::Runtime(Config config) : config_(std::move(config)) {
    store_ = std::make_unique<Store>(config_.store_root);
    client_ = std::make_unique<VlmClient>(*store_, make_https_transport(), config_.retry);
    for (const auto& p : config_.providers) client_->add_profile(p);
    client_->add_backend("mock", std::make_shared<MockBackend>(*store_), 64);
    prompts_ = PromptRegistry::load(config_.prompts_dir.empty() ? default_prompts_dir() : config_.prompts_dir);
}

Runtime::~Runtime() = default;

Renderer& Runtime::renderer() {
    std::lock_guard lock(renderer_mutex_);
    if (renderer_) return *renderer_;
    ChromiumOptions options;
    if (config_.renderer.browser) {
        options.executable = *config_.renderer.browser;
        auto conf = options.executable.parent_path() / "fonts.conf";
        if (fs::exists(conf)) options.fonts_conf = conf;
    } else if (auto pinned = find_pinned_browser()) {
        options = *pinned;
    } else {
        throw Error(ErrorCode::config_error,
                    "no browser found: run scripts/fetch_browser.sh, set $UICODER_BROWSER or renderer.browser");
    }
    if (config_.renderer.fonts_conf) options.fonts_conf = *config_.renderer.fonts_conf;
    options.pool_size = config_.renderer.pool_size;
    options.offline = config_.renderer.offline;
    options.network_idle = config_.renderer.network_idle;
    options.settle = config_.renderer.settle;
    renderer_ = std::make_shared<ChromiumRenderer>(*store_, options);
    return *renderer_;
}

void Runtime::set_renderer(std::shared_ptr<Renderer> renderer) {
    std::lock_guard lock(renderer_mutex_);
    renderer_ = std::move(renderer);
}

std::unique_ptr<Judge> Runtime::make_judge(const std::optional<std::string>& judge_model) {
    JudgeOptions options = config_.judge_options;
    options.model = ModelRef::parse(judge_model.value_or(config_.judge));
    options.concurrency = config_.concurrency;
    return std::make_unique<Judge>(*client_, prompts_, options, store_.get());
}

SessionOptions Runtime::session_options(const std::optional<std::string>& model) const {
    SessionOptions options;
    options.model = ModelRef::parse(model.value_or(config_.model));
    options.decode = config_.generation;
    options.viewport = config_.renderer.viewport;
    options.render_timeout = config_.renderer.timeout;
    return options;
}

}  // namespace uicoder
