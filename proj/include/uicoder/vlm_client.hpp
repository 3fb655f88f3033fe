#pragma once

// Provider-agnostic multimodal chat-completion client.
//
// Providers are described by data (ProviderProfile). HTTP providers speak
// one of the known request shapes over a Transport; in-process backends
// (mocks, tests) register under a provider id and bypass the transport.

#include "uicoder/types.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

namespace uicoder {

class Store;

enum class Role { system, user, assistant };
std::string_view to_string(Role role);

struct ContentPart {
    enum class Kind { text, image };
    Kind kind = Kind::text;
    std::string text;
    ImageRef image;

    static ContentPart from_text(std::string text) { return {Kind::text, std::move(text), {}}; }
    static ContentPart from_image(ImageRef image) { return {Kind::image, {}, std::move(image)}; }
    bool operator==(const ContentPart&) const = default;
};

struct ChatMessage {
    Role role = Role::user;
    std::vector<ContentPart> parts;
    bool operator==(const ChatMessage&) const = default;
};

struct DecodeParams {
    std::uint32_t max_output_tokens = 4096;
    double temperature = 0.0;
    bool operator==(const DecodeParams&) const = default;
};

struct ChatRequest {
    std::string provider_id;
    std::string model_id;
    std::vector<ChatMessage> messages;
    DecodeParams decode;
    // Not sent over the wire; lets in-process backends and logs identify the prompt.
    std::string template_id;
    int template_version = 0;
};

struct TokenUsage {
    std::uint64_t prompt = 0;
    std::uint64_t completion = 0;
};

struct ChatResponse {
    std::string raw_text;
    std::chrono::milliseconds latency{0};
    std::optional<TokenUsage> token_usage;
    int retries = 0;
};

// "<provider>:<model>", e.g. "openai:gpt-4o" or "mock:faithful".
struct ModelRef {
    std::string provider_id;
    std::string model_id;

    static ModelRef parse(std::string_view spec);
    std::string str() const { return provider_id + ":" + model_id; }
};

struct ProviderProfile {
    std::string id;
    std::string shape;  // "openai-chat" | "anthropic-messages"
    std::string base_url;
    std::string path;  // appended to base_url; defaulted from shape when empty
    std::string auth_header = "Authorization";
    std::string auth_prefix = "Bearer ";
    std::string api_key_env;
    std::map<std::string, std::string> extra_headers;
    int concurrency_limit = 4;
    std::chrono::milliseconds timeout{120000};
};

struct HttpRequest {
    std::string url;
    std::map<std::string, std::string> headers;
    std::string body;
    std::chrono::milliseconds timeout{120000};
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

// Throws Error(timeout) or Error(transport) when no HTTP response arrives.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const HttpRequest& request) = 0;
};

std::unique_ptr<Transport> make_https_transport();

// In-process provider (mock judges, scripted models, test doubles).
class ProviderBackend {
public:
    virtual ~ProviderBackend() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
};

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds base_delay{500};
    std::chrono::milliseconds max_delay{8000};
    double jitter = 0.25;  // fraction of the delay, uniformly drawn
};

class VlmClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    VlmClient(Store& store, std::unique_ptr<Transport> transport, RetryPolicy retry = {});
    ~VlmClient();

    void add_profile(ProviderProfile profile);
    void add_backend(std::string provider_id, std::shared_ptr<ProviderBackend> backend, int concurrency_limit = 8);
    bool has_provider(std::string_view provider_id) const;
    void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
    Store& store() const { return store_; }

    // Throws precondition / auth_failure when the provider could not be
    // called right now (unknown profile, missing credential).
    void check_ready(std::string_view provider_id) const;

    ChatResponse complete(const ChatRequest& request);

    // Builds the provider wire body; exposed for tests of the wire format.
    std::string encode_body(const ProviderProfile& profile, const ChatRequest& request) const;

private:
    struct Provider;
    Provider& provider(std::string_view id) const;
    std::string call_http(Provider& provider, const ChatRequest& request, ChatResponse& response);
    void validate(const ChatRequest& request) const;

    Store& store_;
    std::unique_ptr<Transport> transport_;
    RetryPolicy retry_;
    Sleeper sleeper_;
    mutable std::mutex mutex_;
    std::map<std::string, std::unique_ptr<Provider>, std::less<>> providers_;
};

struct StructuredAnswer {
    std::string think;
    std::string answer;
};

// Splits `<think>…</think><answer>…</answer>`. Untagged text is returned as
// the answer with an empty think. Throws malformed_tags on unclosed tags.
StructuredAnswer extract_answer(std::string_view raw);

// Contents of the last balanced `\boxed{…}`. Throws no_boxed_content or
// unbalanced_braces.
std::string extract_boxed(std::string_view raw);

// Numeric judge score in [0, 100] from a boxed body such as "85" or "85/100".
double parse_score(std::string_view text);

std::string base64_encode(std::string_view bytes);

}  // namespace uicoder
