#pragma once

// In-process providers that need no network: the faithful judge, an echo
// model and JSON-scripted models/judges. Registered as provider "mock":
//   mock:faithful      judge scoring by image identity / pixel similarity
//   mock:echo          returns the request's text parts
//   mock:<path.json>   scripted responses (format in ScriptedBackend)

#include "uicoder/vlm_client.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace uicoder {

class Store;

// Scores 100 for byte-identical images, otherwise floor(99 * pixel
// similarity), 0 when either image cannot be decoded. Two images produce the
// verifier answer format; three produce the triplet format.
class FaithfulJudge final : public ProviderBackend {
public:
    explicit FaithfulJudge(const Store& store) : store_(store) {}
    std::string complete(const ChatRequest& request) override;

    int score(const ImageRef& target, const ImageRef& candidate) const;

private:
    const Store& store_;
};

class EchoBackend final : public ProviderBackend {
public:
    std::string complete(const ChatRequest& request) override;
};

// Script document:
//   {
//     "delay_ms": 0,
//     "rules": [
//       {"template": "gen_polish",          optional, exact template id
//        "images": ["<hash>", "*"],         optional, positional prefix match
//        "contains": "text",                optional, substring of the text parts
//        "responses": ["first", "second"]}  consumed in order, last repeats
//     ],
//     "default": "fallback text"            optional
//   }
// A rule may use "response" for a single reply. Unmatched requests without a
// default raise malformed_provider_response.
class ScriptedBackend final : public ProviderBackend {
public:
    explicit ScriptedBackend(nlohmann::json script);
    static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

    std::string complete(const ChatRequest& request) override;
    std::size_t calls() const;

private:
    struct Rule {
        std::optional<std::string> template_id;
        std::vector<std::string> images;
        std::optional<std::string> contains;
        std::vector<std::string> responses;
        std::size_t next = 0;
    };

    mutable std::mutex mutex_;
    std::vector<Rule> rules_;
    std::optional<std::string> default_;
    int delay_ms_ = 0;
    std::size_t calls_ = 0;
};

class MockBackend final : public ProviderBackend {
public:
    explicit MockBackend(const Store& store);
    std::string complete(const ChatRequest& request) override;

private:
    std::shared_ptr<ProviderBackend> resolve(const std::string& model_id);

    std::shared_ptr<FaithfulJudge> faithful_;
    std::shared_ptr<EchoBackend> echo_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<ScriptedBackend>> scripts_;
};

std::vector<ImageRef> request_images(const ChatRequest& request);
std::string request_text(const ChatRequest& request);

}  // namespace uicoder
