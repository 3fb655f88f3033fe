#include "uicoder/vlm_client.hpp"

#include "uicoder/error.hpp"
#include "uicoder/image.hpp"
#include "uicoder/store.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <random>
#include <thread>

using nlohmann::json;

namespace uicoder {

std::string_view to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

ModelRef ModelRef::parse(std::string_view spec) {
    const auto colon = spec.find(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == spec.size()) {
        throw Error(ErrorCode::invalid_argument, "model must be <provider>:<model>, got '" + std::string(spec) + "'");
    }
    return {std::string(spec.substr(0, colon)), std::string(spec.substr(colon + 1))};
}

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

struct VlmClient::Provider {
    std::optional<ProviderProfile> profile;
    std::shared_ptr<ProviderBackend> backend;
    std::counting_semaphore<> slots;

    explicit Provider(int limit) : slots(std::max(1, limit)) {}
};

VlmClient::VlmClient(Store& store, std::unique_ptr<Transport> transport, RetryPolicy retry)
    : store_(store), transport_(std::move(transport)), retry_(retry),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

VlmClient::~VlmClient() = default;

void VlmClient::add_profile(ProviderProfile profile) {
    if (profile.shape != "openai-chat" && profile.shape != "anthropic-messages") {
        throw Error(ErrorCode::config_error, "provider " + profile.id + ": unknown request shape '" + profile.shape + "'");
    }
    if (profile.path.empty()) profile.path = profile.shape == "openai-chat" ? "/chat/completions" : "/v1/messages";
    std::lock_guard lock(mutex_);
    auto provider = std::make_unique<Provider>(profile.concurrency_limit);
    const std::string id = profile.id;
    provider->profile = std::move(profile);
    providers_[id] = std::move(provider);
}

void VlmClient::add_backend(std::string provider_id, std::shared_ptr<ProviderBackend> backend, int concurrency_limit) {
    std::lock_guard lock(mutex_);
    auto provider = std::make_unique<Provider>(concurrency_limit);
    provider->backend = std::move(backend);
    providers_[std::move(provider_id)] = std::move(provider);
}

bool VlmClient::has_provider(std::string_view provider_id) const {
    std::lock_guard lock(mutex_);
    return providers_.find(provider_id) != providers_.end();
}

VlmClient::Provider& VlmClient::provider(std::string_view id) const {
    std::lock_guard lock(mutex_);
    auto it = providers_.find(id);
    if (it == providers_.end()) throw Error(ErrorCode::precondition, "no provider registered as '" + std::string(id) + "'");
    return *it->second;
}

void VlmClient::check_ready(std::string_view provider_id) const {
    Provider& p = provider(provider_id);
    if (p.profile && !p.profile->api_key_env.empty()) {
        const char* key = std::getenv(p.profile->api_key_env.c_str());
        if (key == nullptr || *key == '\0') {
            throw Error(ErrorCode::auth_failure, "provider " + p.profile->id + ": environment variable " +
                                                     p.profile->api_key_env + " is not set");
        }
    }
}

void VlmClient::validate(const ChatRequest& request) const {
    if (request.messages.empty()) throw Error(ErrorCode::precondition, "chat request has no messages");
    if (request.decode.max_output_tokens < 1) throw Error(ErrorCode::precondition, "max_output_tokens must be >= 1");
    if (request.decode.temperature < 0) throw Error(ErrorCode::precondition, "temperature must be >= 0");
    for (const auto& message : request.messages) {
        for (const auto& part : message.parts) {
            if (part.kind == ContentPart::Kind::image && !store_.has_blob(part.image.hash)) {
                throw Error(ErrorCode::precondition, "image " + part.image.hash + " does not resolve in the blob store");
            }
        }
    }
}

std::string VlmClient::encode_body(const ProviderProfile& profile, const ChatRequest& request) const {
    auto image_payload = [&](const ImageRef& ref) {
        auto bytes = store_.get_blob(ref.hash);
        if (!bytes) throw Error(ErrorCode::precondition, "image " + ref.hash + " vanished from the blob store");
        auto info = image::sniff(*bytes);
        const std::string mime(mime_type(info ? info->format : MediaType::png));
        return std::make_pair(mime, base64_encode(*bytes));
    };

    json body;
    body["model"] = request.model_id;
    body["max_tokens"] = request.decode.max_output_tokens;
    body["temperature"] = request.decode.temperature;
    json messages = json::array();

    if (profile.shape == "openai-chat") {
        for (const auto& message : request.messages) {
            json content = json::array();
            for (const auto& part : message.parts) {
                if (part.kind == ContentPart::Kind::text) {
                    content.push_back({{"type", "text"}, {"text", part.text}});
                } else {
                    auto [mime, data] = image_payload(part.image);
                    content.push_back(
                        {{"type", "image_url"}, {"image_url", {{"url", "data:" + mime + ";base64," + data}}}});
                }
            }
            messages.push_back({{"role", to_string(message.role)}, {"content", content}});
        }
    } else {
        std::string system;
        for (const auto& message : request.messages) {
            if (message.role == Role::system) {
                for (const auto& part : message.parts) {
                    if (part.kind == ContentPart::Kind::text) system += part.text;
                }
                continue;
            }
            json content = json::array();
            for (const auto& part : message.parts) {
                if (part.kind == ContentPart::Kind::text) {
                    content.push_back({{"type", "text"}, {"text", part.text}});
                } else {
                    auto [mime, data] = image_payload(part.image);
                    content.push_back(
                        {{"type", "image"}, {"source", {{"type", "base64"}, {"media_type", mime}, {"data", data}}}});
                }
            }
            messages.push_back({{"role", to_string(message.role)}, {"content", content}});
        }
        if (!system.empty()) body["system"] = system;
    }
    body["messages"] = std::move(messages);
    return body.dump();
}

namespace {

struct Decoded {
    std::string text;
    std::optional<TokenUsage> usage;
};

Decoded decode_body(const std::string& shape, const std::string& body) {
    try {
        const json j = json::parse(body);
        Decoded out;
        if (shape == "openai-chat") {
            const json& content = j.at("choices").at(0).at("message").at("content");
            if (content.is_string()) {
                out.text = content.get<std::string>();
            } else {
                for (const auto& part : content) {
                    if (part.value("type", "") == "text") out.text += part.value("text", "");
                }
            }
            if (j.contains("usage") && j["usage"].is_object()) {
                out.usage = TokenUsage{j["usage"].value("prompt_tokens", 0ull), j["usage"].value("completion_tokens", 0ull)};
            }
        } else {
            for (const auto& part : j.at("content")) {
                if (part.value("type", "") == "text") out.text += part.value("text", "");
            }
            if (j.contains("usage") && j["usage"].is_object()) {
                out.usage = TokenUsage{j["usage"].value("input_tokens", 0ull), j["usage"].value("output_tokens", 0ull)};
            }
        }
        if (out.text.empty()) throw Error(ErrorCode::malformed_provider_response, "empty completion text");
        return out;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::malformed_provider_response, e.what());
    }
}

bool retryable(ErrorCode code) {
    return code == ErrorCode::rate_limited || code == ErrorCode::transport || code == ErrorCode::timeout;
}

}  // namespace

std::string VlmClient::call_http(Provider& p, const ChatRequest& request, ChatResponse& response) {
    const ProviderProfile& profile = *p.profile;
    check_ready(profile.id);
    if (!transport_) throw Error(ErrorCode::precondition, "no HTTP transport configured");

    HttpRequest http;
    http.url = profile.base_url + profile.path;
    http.timeout = profile.timeout;
    http.headers["Content-Type"] = "application/json";
    if (!profile.api_key_env.empty()) {
        http.headers[profile.auth_header] = profile.auth_prefix + std::getenv(profile.api_key_env.c_str());
    }
    if (profile.shape == "anthropic-messages" && !profile.extra_headers.count("anthropic-version")) {
        http.headers["anthropic-version"] = "2023-06-01";
    }
    for (const auto& [k, v] : profile.extra_headers) http.headers[k] = v;
    http.body = encode_body(profile, request);

    thread_local std::mt19937 rng{std::random_device{}()};
    for (int attempt = 1;; ++attempt) {
        ErrorCode failure;
        std::string detail;
        try {
            HttpResponse r = transport_->post(http);
            if (r.status >= 200 && r.status < 300) {
                Decoded d = decode_body(profile.shape, r.body);
                response.token_usage = d.usage;
                return std::move(d.text);
            }
            detail = "HTTP " + std::to_string(r.status) + ": " + r.body.substr(0, 200);
            if (r.status == 401 || r.status == 403) throw Error(ErrorCode::auth_failure, detail);
            if (r.status == 429) {
                failure = ErrorCode::rate_limited;
            } else if (r.status >= 500) {
                failure = ErrorCode::transport;
            } else {
                throw Error(ErrorCode::malformed_provider_response, detail);
            }
        } catch (const Error& e) {
            if (!retryable(e.code())) throw;
            failure = e.code();
            detail = e.what();
        }
        if (attempt >= retry_.max_attempts) {
            throw Error(failure, "provider " + profile.id + " failed after " + std::to_string(attempt) +
                                     " attempts: " + detail);
        }
        auto delay = retry_.base_delay * (1LL << (attempt - 1));
        delay = std::min<std::chrono::milliseconds>(delay, retry_.max_delay);
        std::uniform_real_distribution<double> jitter(1.0 - retry_.jitter, 1.0 + retry_.jitter);
        const auto wait = std::chrono::milliseconds(static_cast<long long>(double(delay.count()) * jitter(rng)));
        spdlog::warn("provider {} attempt {} failed ({}); retrying in {} ms", profile.id, attempt, detail, wait.count());
        ++response.retries;
        sleeper_(wait);
    }
}

ChatResponse VlmClient::complete(const ChatRequest& request) {
    Provider& p = provider(request.provider_id);
    validate(request);

    p.slots.acquire();
    struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
    } release{p.slots};

    ChatResponse response;
    const auto start = std::chrono::steady_clock::now();
    if (p.backend) {
        response.raw_text = p.backend->complete(request);
    } else {
        response.raw_text = call_http(p, request, response);
    }
    response.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    if (response.raw_text.empty()) {
        throw Error(ErrorCode::malformed_provider_response, "provider " + request.provider_id + " returned no text");
    }
    return response;
}

StructuredAnswer extract_answer(std::string_view raw) {
    constexpr std::string_view kThinkOpen = "<think>", kThinkClose = "</think>";
    constexpr std::string_view kAnswerOpen = "<answer>", kAnswerClose = "</answer>";

    const auto think_open = raw.find(kThinkOpen);
    const auto answer_open = raw.find(kAnswerOpen);
    if (think_open == std::string_view::npos && answer_open == std::string_view::npos) {
        if (raw.find(kThinkClose) != std::string_view::npos || raw.find(kAnswerClose) != std::string_view::npos) {
            throw Error(ErrorCode::malformed_tags, "closing tag without an opening tag");
        }
        if (raw.empty()) throw Error(ErrorCode::malformed_tags, "empty answer");
        return {"", std::string(raw)};
    }

    StructuredAnswer out;
    std::size_t answer_from = 0;
    if (think_open != std::string_view::npos) {
        const auto body = think_open + kThinkOpen.size();
        const auto close = raw.find(kThinkClose, body);
        if (close == std::string_view::npos) throw Error(ErrorCode::malformed_tags, "<think> is never closed");
        if (answer_open != std::string_view::npos && answer_open < close) {
            throw Error(ErrorCode::malformed_tags, "<answer> opens inside <think>");
        }
        out.think = std::string(raw.substr(body, close - body));
        answer_from = close + kThinkClose.size();
    }
    if (answer_open != std::string_view::npos) {
        const auto body = answer_open + kAnswerOpen.size();
        const auto close = raw.rfind(kAnswerClose);
        if (close == std::string_view::npos || close < body) {
            throw Error(ErrorCode::malformed_tags, "<answer> is never closed");
        }
        out.answer = std::string(raw.substr(body, close - body));
    } else {
        if (raw.find(kAnswerClose) != std::string_view::npos) {
            throw Error(ErrorCode::malformed_tags, "</answer> without <answer>");
        }
        out.answer = std::string(raw.substr(answer_from));
    }
    if (out.answer.empty()) throw Error(ErrorCode::malformed_tags, "empty answer");
    return out;
}

std::string extract_boxed(std::string_view raw) {
    constexpr std::string_view kMarker = "\\boxed{";
    std::optional<std::string> last;
    bool saw_marker = false;
    for (auto pos = raw.find(kMarker); pos != std::string_view::npos; pos = raw.find(kMarker, pos + 1)) {
        saw_marker = true;
        const std::size_t body = pos + kMarker.size();
        int depth = 1;
        std::size_t i = body;
        for (; i < raw.size() && depth > 0; ++i) {
            if (raw[i] == '{') ++depth;
            else if (raw[i] == '}') --depth;
        }
        if (depth == 0) last = std::string(raw.substr(body, i - 1 - body));
    }
    if (last) return *last;
    if (saw_marker) throw Error(ErrorCode::unbalanced_braces, "\\boxed{ is never closed");
    throw Error(ErrorCode::no_boxed_content, "no \\boxed{} span in judge output");
}

double parse_score(std::string_view text) {
    // Accepts "85", "77.5", "90/100", "64%", optionally wrapped in ** and spaces.
    const auto fail = [&] { return Error(ErrorCode::parse_error, "not a numeric score: '" + std::string(text) + "'"); };
    std::string_view t = text;
    auto trim = [&] {
        while (!t.empty() && (std::isspace(static_cast<unsigned char>(t.front())) || t.front() == '*')) t.remove_prefix(1);
        while (!t.empty() && (std::isspace(static_cast<unsigned char>(t.back())) || t.back() == '*')) t.remove_suffix(1);
    };
    trim();
    if (!t.empty() && t.back() == '%') {
        t.remove_suffix(1);
    } else if (auto slash = t.rfind('/'); slash != std::string_view::npos) {
        std::string_view denom = t.substr(slash + 1);
        while (!denom.empty() && std::isspace(static_cast<unsigned char>(denom.front()))) denom.remove_prefix(1);
        if (denom != "100") throw fail();
        t = t.substr(0, slash);
    }
    while (!t.empty() && std::isspace(static_cast<unsigned char>(t.back()))) t.remove_suffix(1);
    std::size_t i = 0;
    while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
    if (i == 0) throw fail();
    if (i < t.size() && t[i] == '.') {
        const std::size_t frac = ++i;
        while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
        if (i == frac) throw fail();
    }
    if (i != t.size()) throw fail();
    const std::string number(t);
    const double value = std::stod(number);
    if (value < 0.0 || value > 100.0) {
        throw Error(ErrorCode::parse_error, "score " + number + " is outside [0, 100]");
    }
    return value;
}

}  // namespace uicoder
