#include "uicoder/mock_providers.hpp"

#include "uicoder/error.hpp"
#include "uicoder/image.hpp"
#include "uicoder/store.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

using nlohmann::json;

namespace uicoder {

std::vector<ImageRef> request_images(const ChatRequest& request) {
    std::vector<ImageRef> images;
    for (const auto& message : request.messages) {
        for (const auto& part : message.parts) {
            if (part.kind == ContentPart::Kind::image) images.push_back(part.image);
        }
    }
    return images;
}

std::string request_text(const ChatRequest& request) {
    std::string text;
    for (const auto& message : request.messages) {
        for (const auto& part : message.parts) {
            if (part.kind == ContentPart::Kind::text) text += part.text;
        }
    }
    return text;
}

int FaithfulJudge::score(const ImageRef& target, const ImageRef& candidate) const {
    if (target.hash == candidate.hash) return 100;
    auto a = store_.get_blob(target.hash);
    auto b = store_.get_blob(candidate.hash);
    if (!a || !b) return 0;
    auto da = image::decode_png(*a);
    auto db = image::decode_png(*b);
    if (!da || !db) return 0;
    return static_cast<int>(std::floor(99.0 * image::similarity(*da, *db)));
}

std::string FaithfulJudge::complete(const ChatRequest& request) {
    const auto images = request_images(request);
    if (images.size() == 2) {
        const int s = score(images[0], images[1]);
        std::ostringstream out;
        out << "\\boxed{" << s << "}\n";
        out << (s == 100 ? "The rendering is pixel-identical to the reference."
                         : "The rendering differs from the reference in layout or color.");
        return out.str();
    }
    if (images.size() == 3) {
        const int second = score(images[0], images[1]);
        const int third = score(images[0], images[2]);
        std::ostringstream out;
        out << "Second image score: " << second << "\n";
        out << "Reason: pixel agreement with the reference.\n";
        out << "Third image score: " << third << "\n";
        out << "Reason: pixel agreement with the reference.\n";
        if (second > third) out << "\\boxed{The second image is better}";
        else if (third > second) out << "\\boxed{The third image is better}";
        else out << "\\boxed{Both images are equally close}";
        return out.str();
    }
    throw Error(ErrorCode::malformed_provider_response,
                "faithful judge expects 2 or 3 images, got " + std::to_string(images.size()));
}

std::string EchoBackend::complete(const ChatRequest& request) { return request_text(request); }

ScriptedBackend::ScriptedBackend(json script) {
    delay_ms_ = script.value("delay_ms", 0);
    if (script.contains("default") && script["default"].is_string()) default_ = script["default"].get<std::string>();
    for (const auto& r : script.value("rules", json::array())) {
        Rule rule;
        if (r.contains("template")) rule.template_id = r["template"].get<std::string>();
        if (r.contains("contains")) rule.contains = r["contains"].get<std::string>();
        rule.images = r.value("images", std::vector<std::string>{});
        if (r.contains("responses")) rule.responses = r["responses"].get<std::vector<std::string>>();
        if (r.contains("response")) rule.responses.push_back(r["response"].get<std::string>());
        if (rule.responses.empty()) throw Error(ErrorCode::config_error, "script rule without responses");
        rules_.push_back(std::move(rule));
    }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config_error, "cannot read mock script " + path.string());
    try {
        return std::make_shared<ScriptedBackend>(json::parse(in));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config_error, "mock script " + path.string() + ": " + e.what());
    }
}

std::size_t ScriptedBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::string ScriptedBackend::complete(const ChatRequest& request) {
    if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
    const auto images = request_images(request);
    const std::string text = request_text(request);

    std::lock_guard lock(mutex_);
    ++calls_;
    for (auto& rule : rules_) {
        if (rule.template_id && *rule.template_id != request.template_id) continue;
        if (rule.contains && text.find(*rule.contains) == std::string::npos) continue;
        if (rule.images.size() > images.size()) continue;
        bool match = true;
        for (std::size_t i = 0; i < rule.images.size(); ++i) {
            if (rule.images[i] != "*" && rule.images[i] != images[i].hash) {
                match = false;
                break;
            }
        }
        if (!match) continue;
        const std::size_t at = std::min(rule.next, rule.responses.size() - 1);
        ++rule.next;
        return rule.responses[at];
    }
    if (default_) return *default_;
    throw Error(ErrorCode::malformed_provider_response,
                "mock script has no rule for template '" + request.template_id + "'");
}

MockBackend::MockBackend(const Store& store)
    : faithful_(std::make_shared<FaithfulJudge>(store)), echo_(std::make_shared<EchoBackend>()) {}

std::shared_ptr<ProviderBackend> MockBackend::resolve(const std::string& model_id) {
    if (model_id == "faithful") return faithful_;
    if (model_id == "echo") return echo_;
    std::lock_guard lock(mutex_);
    auto& slot = scripts_[model_id];
    if (!slot) slot = ScriptedBackend::from_file(model_id);
    return slot;
}

std::string MockBackend::complete(const ChatRequest& request) { return resolve(request.model_id)->complete(request); }

}  // namespace uicoder
