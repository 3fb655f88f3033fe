#pragma once

// Versioned prompt templates loaded from a `prompts/` tree:
//   prompts/<id>/<version>.txt    UTF-8 body with {{slot}} placeholders
//   prompts/<id>/<version>.json   {"required_slots", "attachment_spec", "tags", "sha256"?}
// Templates tagged "verbatim" must carry a sha256 that matches the body.

#include "uicoder/types.hpp"
#include "uicoder/vlm_client.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace uicoder {

namespace prompt_ids {
inline constexpr const char* verifier = "verifier_ui2code";
inline constexpr const char* comparator = "comparator_triplet";
inline constexpr const char* judge_ui2code = "judge_ui2code_eval";
inline constexpr const char* judge_polish = "judge_polish_eval";
inline constexpr const char* gen_ui2code = "gen_ui2code";
inline constexpr const char* gen_polish = "gen_polish";
inline constexpr const char* gen_edit = "gen_edit";
}  // namespace prompt_ids

struct PromptTemplate {
    std::string id;
    int version = 0;
    std::string body;
    std::set<std::string> required_slots;
    std::vector<std::string> attachment_spec;  // image roles, in order
    std::set<std::string> tags;
    std::optional<std::string> sha256;

    bool verbatim() const { return tags.count("verbatim") > 0; }
};

// Placeholder names appearing in a body, in first-appearance order.
std::vector<std::string> placeholders(const std::string& body);

class PromptRegistry {
public:
    static PromptRegistry load(const std::filesystem::path& root);

    void add(PromptTemplate tmpl);
    const PromptTemplate& get(const std::string& id, std::optional<int> version = std::nullopt) const;
    std::vector<std::string> ids() const;

private:
    std::map<std::string, std::map<int, PromptTemplate>> templates_;
};

using SlotMap = std::map<std::string, std::string>;

// One user message: the images in attachment order, then the filled text.
std::vector<ChatMessage> instantiate(const PromptTemplate& tmpl, const SlotMap& slots,
                                     const std::vector<ImageRef>& images);

// Instantiates `tmpl` and sends it to `model`.
ChatResponse ask(VlmClient& client, const ModelRef& model, const DecodeParams& decode, const PromptTemplate& tmpl,
                 const SlotMap& slots, const std::vector<ImageRef>& images);

// Directory compiled into the binaries; overridable via config.
std::filesystem::path default_prompts_dir();

}  // namespace uicoder
