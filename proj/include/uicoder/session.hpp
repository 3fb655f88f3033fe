#pragma once

// Interactive generation sessions: UI-to-code generation, polishing against
// the rendered output, instruction-driven edits, and the test-time-scaling
// driver. Every completed round is appended to the store before returning.

#include "uicoder/error.hpp"
#include "uicoder/prompts.hpp"
#include "uicoder/records.hpp"
#include "uicoder/renderer.hpp"
#include "uicoder/reward_engine.hpp"
#include "uicoder/vlm_client.hpp"

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace uicoder {

class Store;

// Longest fenced block containing an element tag; without any fence, the
// whole answer if it starts with <!DOCTYPE or <html. Throws extraction_failed.
HtmlDocument extract_html(std::string_view answer);

// Compact JSON view of a round (hashes instead of documents).
nlohmann::json round_summary(const Round& round);

struct SessionOptions {
    ModelRef model;
    DecodeParams decode{8192, 0.0};
    Viewport viewport;
    std::chrono::milliseconds render_timeout{30000};
    bool persist = true;
};

// Thrown by run_tts when a round leaves nothing to polish; carries the
// rounds completed so far (already persisted).
class SessionAborted : public Error {
public:
    SessionAborted(Session partial, const std::string& message)
        : Error(ErrorCode::precondition, message), partial_(std::move(partial)) {}
    const Session& partial() const noexcept { return partial_; }

private:
    Session partial_;
};

class SessionEngine {
public:
    // `judge` is needed only for accept-if-better sessions.
    SessionEngine(Store& store, VlmClient& client, const PromptRegistry& prompts, Renderer& renderer,
                  SessionOptions options, Judge* judge = nullptr);

    const SessionOptions& options() const noexcept { return options_; }

    Session start_generate(const ImageRef& target, AdvancePolicy policy = AdvancePolicy::always_advance,
                           std::optional<std::string> id = std::nullopt);
    // Session whose round 0 is the given code instead of a model generation.
    Session start_from_seed(const ImageRef& target, const HtmlDocument& seed,
                            AdvancePolicy policy = AdvancePolicy::always_advance);

    Round polish_once(Session& session);
    Round edit(Session& session, const std::string& instruction);

    // By id: loads the persisted session under its writer lock. With
    // wait=false a session already being advanced raises `conflict`.
    Round polish_once(const std::string& session_id, bool wait = true);
    Round edit(const std::string& session_id, const std::string& instruction, bool wait = true);
    bool busy(const std::string& session_id);

    // start_generate followed by n-1 polish rounds.
    Session run_tts(const ImageRef& target, std::size_t n, AdvancePolicy policy = AdvancePolicy::always_advance);

    static std::string new_session_id();

private:
    std::mutex& writer(const std::string& id);
    std::unique_lock<std::mutex> lock_writer(const std::string& id, bool wait);

    HtmlDocument generate_code(const std::string& template_id, const SlotMap& slots,
                               const std::vector<ImageRef>& images);
    RenderResult render(const HtmlDocument& doc);
    Round polish_locked(Session& session);
    Round edit_locked(Session& session, const std::string& instruction);
    void append(Session& session, Round round);

    Store& store_;
    VlmClient& client_;
    const PromptRegistry& prompts_;
    Renderer& renderer_;
    SessionOptions options_;
    Judge* judge_;

    std::mutex writers_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> writers_;
};

}  // namespace uicoder
