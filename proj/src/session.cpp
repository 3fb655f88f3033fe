#include "uicoder/session.hpp"

#include "uicoder/error.hpp"
#include "uicoder/store.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <random>
#include <regex>
#include <sstream>

namespace uicoder {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

bool starts_with_icase(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    return std::equal(prefix.begin(), prefix.end(), s.begin(),
                      [](char a, char b) { return std::tolower((unsigned char)a) == std::tolower((unsigned char)b); });
}

bool has_element_tag(const std::string& block) {
    static const std::regex tag(R"(<\s*(!doctype\s+html|[a-zA-Z][a-zA-Z0-9-]*)(\s[^<>]*)?/?>)", std::regex::icase);
    return std::regex_search(block, tag);
}

// Contents of ``` fenced blocks; an unterminated final fence runs to the end.
std::vector<std::string> fenced_blocks(std::string_view text) {
    std::vector<std::string> blocks;
    std::istringstream in{std::string(text)};
    std::string line;
    std::optional<std::string> current;
    while (std::getline(in, line)) {
        const std::string_view t = trim(line);
        if (t.starts_with("```")) {
            if (current) {
                blocks.push_back(std::move(*current));
                current.reset();
            } else {
                current.emplace();
            }
            continue;
        }
        if (current) {
            *current += line;
            *current += '\n';
        }
    }
    if (current) blocks.push_back(std::move(*current));
    return blocks;
}

}  // namespace

HtmlDocument extract_html(std::string_view answer) {
    const auto blocks = fenced_blocks(answer);
    if (blocks.empty()) {
        const std::string_view t = trim(answer);
        if (starts_with_icase(t, "<!DOCTYPE") || starts_with_icase(t, "<html")) return HtmlDocument(std::string(t));
        throw Error(ErrorCode::extraction_failed, "answer contains no code fence and no bare HTML document");
    }
    const std::string* best = nullptr;
    std::size_t html_blocks = 0;
    for (const auto& b : blocks) {
        if (!has_element_tag(b)) continue;
        ++html_blocks;
        if (!best || b.size() > best->size()) best = &b;
    }
    if (!best) throw Error(ErrorCode::extraction_failed, "no fenced block contains HTML");
    if (blocks.size() > 1) {
        spdlog::info("answer has {} fenced blocks ({} with HTML); using the longest HTML block ({} bytes)",
                     blocks.size(), html_blocks, best->size());
    }
    return HtmlDocument(*best);
}

nlohmann::json round_summary(const Round& round) {
    nlohmann::json j;
    j["index"] = round.index;
    j["kind"] = std::string(to_string(round.kind));
    j["accepted"] = round.accepted;
    j["output_code"] = round.output_code.hash();
    j["output_render"] = round.output_render;
    if (round.input_code) j["input_code"] = round.input_code->hash();
    if (round.input_render) j["input_render"] = *round.input_render;
    if (round.instruction) j["instruction"] = *round.instruction;
    j["verdicts"] = round.verdicts;
    return j;
}

SessionEngine::SessionEngine(Store& store, VlmClient& client, const PromptRegistry& prompts, Renderer& renderer,
                             SessionOptions options, Judge* judge)
    : store_(store), client_(client), prompts_(prompts), renderer_(renderer), options_(std::move(options)),
      judge_(judge) {
    options_.viewport.validate();
}

std::string SessionEngine::new_session_id() {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << rng();
    return out.str();
}

std::mutex& SessionEngine::writer(const std::string& id) {
    std::lock_guard lock(writers_mutex_);
    auto& m = writers_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
}

std::unique_lock<std::mutex> SessionEngine::lock_writer(const std::string& id, bool wait) {
    std::unique_lock lock(writer(id), std::defer_lock);
    if (wait) {
        lock.lock();
    } else if (!lock.try_lock()) {
        throw Error(ErrorCode::conflict, "session " + id + " is already advancing");
    }
    return lock;
}

bool SessionEngine::busy(const std::string& session_id) {
    std::unique_lock lock(writer(session_id), std::try_to_lock);
    return !lock.owns_lock();
}

HtmlDocument SessionEngine::generate_code(const std::string& template_id, const SlotMap& slots,
                                          const std::vector<ImageRef>& images) {
    ChatResponse response =
        ask(client_, options_.model, options_.decode, prompts_.get(template_id), slots, images);
    std::string answer;
    try {
        answer = extract_answer(response.raw_text).answer;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::malformed_tags) throw;
        answer = response.raw_text;
    }
    HtmlDocument doc = extract_html(answer);
    return options_.persist ? store_.put_html(doc.source()) : doc;
}

RenderResult SessionEngine::render(const HtmlDocument& doc) {
    return renderer_.render(doc, options_.viewport, options_.render_timeout);
}

void SessionEngine::append(Session& session, Round round) {
    session.rounds.push_back(std::move(round));
    if (options_.persist) store_.save_session(session);
}

Session SessionEngine::start_generate(const ImageRef& target, AdvancePolicy policy, std::optional<std::string> id) {
    if (!store_.has_blob(target.hash)) throw Error(ErrorCode::precondition, "target image is not in the store");
    Session session;
    session.id = id ? *id : new_session_id();
    if (options_.persist && store_.has_session(session.id))
        throw Error(ErrorCode::precondition, "session id already exists: " + session.id);
    session.target = target;
    session.policy = policy;
    session.created_at = utc_timestamp();

    auto lock = lock_writer(session.id, true);
    Round round;
    round.index = 0;
    round.kind = RoundKind::generate;
    round.output_code = generate_code(prompt_ids::gen_ui2code, {}, {target});
    round.output_render = render(round.output_code);
    round.accepted = true;
    append(session, std::move(round));
    return session;
}

Session SessionEngine::start_from_seed(const ImageRef& target, const HtmlDocument& seed, AdvancePolicy policy) {
    if (!store_.has_blob(target.hash)) throw Error(ErrorCode::precondition, "target image is not in the store");
    Session session;
    session.id = new_session_id();
    session.target = target;
    session.policy = policy;
    session.created_at = utc_timestamp();

    auto lock = lock_writer(session.id, true);
    Round round;
    round.kind = RoundKind::generate;
    round.output_code = options_.persist ? store_.put_html(seed.source()) : seed;
    round.output_render = render(round.output_code);
    round.accepted = true;
    append(session, std::move(round));
    return session;
}

Round SessionEngine::polish_locked(Session& session) {
    if (session.rounds.empty()) throw Error(ErrorCode::precondition, "session has no rounds");
    const Round& head = session.head();
    if (!head.output_render.ok())
        throw Error(ErrorCode::precondition, "the current round's render failed; there is nothing to polish");
    if (session.policy == AdvancePolicy::accept_if_better && !judge_)
        throw Error(ErrorCode::precondition, "accept-if-better needs a judge");

    Round round;
    round.index = static_cast<std::uint32_t>(session.rounds.size());
    round.kind = RoundKind::polish;
    round.input_code = head.output_code;
    round.input_render = head.output_render;
    round.output_code = generate_code(prompt_ids::gen_polish, {{"previous_code", head.output_code.source()}},
                                      {session.target, head.output_render.image()});
    round.output_render = render(round.output_code);

    if (session.policy == AdvancePolicy::always_advance) {
        round.accepted = true;
    } else if (!round.output_render.ok()) {
        round.accepted = false;
    } else {
        Comparison c = comp_score(*judge_, session.target, head.output_render.image(), round.output_render.image());
        round.verdicts.push_back(c.verdict);
        round.accepted = c.preferred == Preference::b;
    }
    append(session, round);
    return round;
}

Round SessionEngine::edit_locked(Session& session, const std::string& instruction) {
    if (trim(instruction).empty()) throw Error(ErrorCode::precondition, "edit instruction is empty");
    if (session.rounds.empty()) throw Error(ErrorCode::precondition, "session has no rounds");
    const Round& head = session.head();
    if (!head.output_render.ok())
        throw Error(ErrorCode::precondition, "the current round's render failed; there is no image to edit against");

    Round round;
    round.index = static_cast<std::uint32_t>(session.rounds.size());
    round.kind = RoundKind::edit;
    round.input_code = head.output_code;
    round.input_render = head.output_render;
    round.instruction = instruction;
    round.output_code = generate_code(prompt_ids::gen_edit,
                                      {{"current_code", head.output_code.source()}, {"instruction", instruction}},
                                      {head.output_render.image()});
    round.output_render = render(round.output_code);
    // An edit deliberately moves away from the target, so the comparator has
    // nothing meaningful to say; accept-if-better only rejects broken renders.
    round.accepted = session.policy == AdvancePolicy::always_advance || round.output_render.ok();
    append(session, round);
    return round;
}

Round SessionEngine::polish_once(Session& session) {
    auto lock = lock_writer(session.id, true);
    return polish_locked(session);
}

Round SessionEngine::edit(Session& session, const std::string& instruction) {
    auto lock = lock_writer(session.id, true);
    return edit_locked(session, instruction);
}

Round SessionEngine::polish_once(const std::string& session_id, bool wait) {
    auto lock = lock_writer(session_id, wait);
    Session session = store_.load_session(session_id);
    return polish_locked(session);
}

Round SessionEngine::edit(const std::string& session_id, const std::string& instruction, bool wait) {
    auto lock = lock_writer(session_id, wait);
    Session session = store_.load_session(session_id);
    return edit_locked(session, instruction);
}

Session SessionEngine::run_tts(const ImageRef& target, std::size_t n, AdvancePolicy policy) {
    if (n < 1) throw Error(ErrorCode::precondition, "test-time scaling needs N >= 1");
    Session session = start_generate(target, policy);
    for (std::size_t k = 1; k < n; ++k) {
        if (!session.head().output_render.ok()) {
            throw SessionAborted(session, "round " + std::to_string(session.head().index) + " failed to render (" +
                                              std::string(to_string(session.head().output_render.reason())) +
                                              "); stopping after " + std::to_string(session.rounds.size()) +
                                              " of " + std::to_string(n) + " rounds");
        }
        polish_once(session);
    }
    return session;
}

}  // namespace uicoder
