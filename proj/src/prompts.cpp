#include "uicoder/prompts.hpp"

#include "uicoder/error.hpp"
#include "uicoder/hashing.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <cctype>
#include <string_view>
#include <sstream>

using nlohmann::json;
namespace fs = std::filesystem;

namespace uicoder {

namespace {

struct Placeholder {
    std::size_t pos = std::string::npos;  // npos when there are no more
    std::size_t len = 0;
    std::string_view name;
};

// Next "{{identifier}}" at or after `from`. Hand-rolled: this runs on every
// model call and std::regex is far too slow for that.
Placeholder next_placeholder(std::string_view body, std::size_t from) {
    auto ident_start = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
    auto ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    for (auto open = body.find("{{", from); open != std::string_view::npos; open = body.find("{{", open + 1)) {
        std::size_t i = open + 2;
        if (i >= body.size() || !ident_start(body[i])) continue;
        while (i < body.size() && ident(body[i])) ++i;
        if (body.substr(i, 2) != "}}") continue;
        return {open, i + 2 - open, body.substr(open + 2, i - open - 2)};
    }
    return {};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

}  // namespace

std::vector<std::string> placeholders(const std::string& body) {
    std::vector<std::string> names;
    for (auto ph = next_placeholder(body, 0); ph.pos != std::string::npos; ph = next_placeholder(body, ph.pos + ph.len)) {
        std::string name(ph.name);
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(std::move(name));
    }
    return names;
}

PromptRegistry PromptRegistry::load(const fs::path& root) {
    PromptRegistry registry;
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw Error(ErrorCode::config_error, "prompt directory " + root.string() + " missing");
    for (const auto& dir : fs::directory_iterator(root)) {
        if (!dir.is_directory()) continue;
        for (const auto& file : fs::directory_iterator(dir.path())) {
            if (file.path().extension() != ".json") continue;
            const fs::path body_path = fs::path(file.path()).replace_extension(".txt");
            PromptTemplate tmpl;
            try {
                const json meta = json::parse(slurp(file.path()));
                tmpl.id = meta.value("id", dir.path().filename().string());
                tmpl.version = meta.value("version", std::stoi(file.path().stem().string()));
                for (const auto& s : meta.value("required_slots", std::vector<std::string>{})) tmpl.required_slots.insert(s);
                tmpl.attachment_spec = meta.value("attachment_spec", std::vector<std::string>{});
                for (const auto& t : meta.value("tags", std::vector<std::string>{})) tmpl.tags.insert(t);
                if (meta.contains("sha256")) tmpl.sha256 = meta["sha256"].get<std::string>();
            } catch (const std::exception& e) {
                throw Error(ErrorCode::config_error, "prompt sidecar " + file.path().string() + ": " + e.what());
            }
            if (tmpl.id != dir.path().filename().string()) {
                throw Error(ErrorCode::config_error, "prompt sidecar " + file.path().string() + " names id " + tmpl.id);
            }
            tmpl.body = slurp(body_path);
            registry.add(std::move(tmpl));
        }
    }
    return registry;
}

void PromptRegistry::add(PromptTemplate tmpl) {
    for (const auto& name : placeholders(tmpl.body)) {
        if (!tmpl.required_slots.count(name)) {
            throw Error(ErrorCode::config_error,
                        "prompt " + tmpl.id + " v" + std::to_string(tmpl.version) + " uses undeclared slot " + name);
        }
    }
    if (tmpl.verbatim()) {
        if (!tmpl.sha256) {
            throw Error(ErrorCode::config_error, "verbatim prompt " + tmpl.id + " has no reference sha256");
        }
        if (sha256_hex(tmpl.body) != *tmpl.sha256) {
            throw Error(ErrorCode::config_error, "verbatim prompt " + tmpl.id + " v" + std::to_string(tmpl.version) +
                                                     " was edited; bump its version instead");
        }
    }
    auto& versions = templates_[tmpl.id];
    const int version = tmpl.version;
    versions[version] = std::move(tmpl);
}

const PromptTemplate& PromptRegistry::get(const std::string& id, std::optional<int> version) const {
    auto it = templates_.find(id);
    if (it == templates_.end() || it->second.empty()) throw Error(ErrorCode::unknown_id, "no prompt '" + id + "'");
    if (!version) return it->second.rbegin()->second;
    auto v = it->second.find(*version);
    if (v == it->second.end()) {
        throw Error(ErrorCode::unknown_version, "prompt '" + id + "' has no version " + std::to_string(*version));
    }
    return v->second;
}

std::vector<std::string> PromptRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

std::vector<ChatMessage> instantiate(const PromptTemplate& tmpl, const SlotMap& slots,
                                     const std::vector<ImageRef>& images) {
    for (const auto& name : tmpl.required_slots) {
        if (!slots.count(name)) throw Error(ErrorCode::missing_slot, "prompt " + tmpl.id + " needs slot " + name);
    }
    if (images.size() != tmpl.attachment_spec.size()) {
        throw Error(ErrorCode::image_arity_mismatch, "prompt " + tmpl.id + " takes " +
                                                          std::to_string(tmpl.attachment_spec.size()) + " images, got " +
                                                          std::to_string(images.size()));
    }

    // Single pass so slot values containing "{{x}}" are never re-expanded.
    std::string text;
    text.reserve(tmpl.body.size());
    std::size_t cursor = 0;
    for (auto ph = next_placeholder(tmpl.body, 0); ph.pos != std::string::npos;
         ph = next_placeholder(tmpl.body, ph.pos + ph.len)) {
        text.append(tmpl.body, cursor, ph.pos - cursor);
        text += slots.at(std::string(ph.name));
        cursor = ph.pos + ph.len;
    }
    text.append(tmpl.body, cursor);

    ChatMessage message;
    message.role = Role::user;
    for (const auto& image : images) message.parts.push_back(ContentPart::from_image(image));
    message.parts.push_back(ContentPart::from_text(std::move(text)));
    return {std::move(message)};
}

ChatResponse ask(VlmClient& client, const ModelRef& model, const DecodeParams& decode, const PromptTemplate& tmpl,
                 const SlotMap& slots, const std::vector<ImageRef>& images) {
    ChatRequest request;
    request.provider_id = model.provider_id;
    request.model_id = model.model_id;
    request.messages = instantiate(tmpl, slots, images);
    request.decode = decode;
    request.template_id = tmpl.id;
    request.template_version = tmpl.version;
    return client.complete(request);
}

fs::path default_prompts_dir() {
#ifdef UICODER_PROMPTS_DIR
    return UICODER_PROMPTS_DIR;
#else
    return "prompts";
#endif
}

}  // namespace uicoder
