#include "uicoder/reward_engine.hpp"

#include "uicoder/error.hpp"
#include "uicoder/parallel.hpp"
#include "uicoder/store.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <mutex>
#include <set>

namespace uicoder {

namespace {

bool is_parse_class(ErrorCode code) {
    switch (code) {
    case ErrorCode::parse_error:
    case ErrorCode::no_boxed_content:
    case ErrorCode::unbalanced_braces:
    case ErrorCode::malformed_tags:
        return true;
    default:
        return false;
    }
}

// Errors after which a tournament pair is scored as a tie instead of
// aborting the whole batch.
bool is_pair_recoverable(ErrorCode code) {
    return is_parse_class(code) || code == ErrorCode::transport || code == ErrorCode::timeout ||
           code == ErrorCode::rate_limited || code == ErrorCode::malformed_provider_response;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

// Answer part of a judge reply; falls back to the raw text if the answer is empty.
std::string answer_text(const std::string& raw) {
    auto structured = extract_answer(raw);
    return structured.answer.empty() ? raw : structured.answer;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Whole-word match of `word` at `pos` in lowercase `text`.
bool word_at(const std::string& text, std::size_t pos, std::string_view word) {
    if (text.compare(pos, word.size(), word) != 0) return false;
    if (pos > 0 && is_word_char(text[pos - 1])) return false;
    const std::size_t end = pos + word.size();
    return end >= text.size() || !is_word_char(text[end]);
}

bool any_word_at(const std::string& text, std::size_t pos, std::initializer_list<std::string_view> words,
                 std::size_t* len = nullptr) {
    for (auto w : words) {
        if (word_at(text, pos, w)) {
            if (len) *len = w.size();
            return true;
        }
    }
    return false;
}

// First score labelled with one of `label` ("second image score: 85",
// "second: 85/100"), looking at most 60 characters past the label on the
// same line and giving up if the competing label appears first.
std::optional<double> labelled_score(const std::string& lowered, std::initializer_list<std::string_view> label,
                                     std::initializer_list<std::string_view> other) {
    for (std::size_t pos = 0; pos < lowered.size(); ++pos) {
        std::size_t len = 0;
        if (!any_word_at(lowered, pos, label, &len)) continue;
        std::size_t i = pos + len;
        const std::size_t limit = std::min(lowered.size(), i + 60);
        for (; i < limit && lowered[i] != '\n'; ++i) {
            if (std::isdigit(static_cast<unsigned char>(lowered[i]))) break;
            if (any_word_at(lowered, i, other)) {
                i = limit;
                break;
            }
        }
        if (i >= limit || !std::isdigit(static_cast<unsigned char>(lowered[i]))) continue;
        std::size_t j = i;
        while (j < lowered.size() && std::isdigit(static_cast<unsigned char>(lowered[j]))) ++j;
        if (j + 1 < lowered.size() && lowered[j] == '.' && std::isdigit(static_cast<unsigned char>(lowered[j + 1]))) {
            ++j;
            while (j < lowered.size() && std::isdigit(static_cast<unsigned char>(lowered[j]))) ++j;
        }
        return parse_score(lowered.substr(i, j - i));
    }
    return std::nullopt;
}

Preference score_preference(double a, double b) {
    if (a > b) return Preference::a;
    if (b > a) return Preference::b;
    return Preference::tie;
}

}  // namespace

std::string_view to_string(Preference p) {
    switch (p) {
    case Preference::a: return "a";
    case Preference::b: return "b";
    case Preference::tie: return "tie";
    }
    return "tie";
}

std::string_view to_string(PairOutcome outcome) {
    switch (outcome) {
    case PairOutcome::a_wins: return "a-wins";
    case PairOutcome::b_wins: return "b-wins";
    case PairOutcome::tie: return "tie";
    }
    return "tie";
}

JudgeVerdict parse_score_verdict(std::string raw) {
    JudgeVerdict verdict;
    verdict.scores.push_back(parse_score(extract_boxed(answer_text(raw))));
    verdict.raw = std::move(raw);
    return verdict;
}

JudgeVerdict parse_triplet_verdict(std::string raw) {
    const std::string text = answer_text(raw);
    std::string conclusion = extract_boxed(text);
    // Scores are read from the text before the conclusion so that the boxed
    // sentence itself ("The second image is better") cannot be mistaken for one.
    const std::string head = text.substr(0, text.rfind("\\boxed"));
    const std::string lowered = lower(head);
    auto second = labelled_score(lowered, {"second", "2nd"}, {"third", "3rd"});
    auto third = labelled_score(lowered, {"third", "3rd"}, {"second", "2nd"});
    if (!second || !third) throw Error(ErrorCode::parse_error, "triplet verdict lacks second/third image scores");
    JudgeVerdict verdict;
    verdict.scores = {*second, *third};
    verdict.conclusion = std::move(conclusion);
    verdict.raw = std::move(raw);
    return verdict;
}

std::optional<Preference> preference_from_conclusion(std::string_view conclusion) {
    const std::string c = lower(conclusion);
    bool second = false, third = false;
    for (std::size_t pos = 0; pos < c.size(); ++pos) {
        if (any_word_at(c, pos, {"equal", "equally", "tie", "tied", "same", "both", "neither", "identical"}))
            return Preference::tie;
        second = second || any_word_at(c, pos, {"second", "2nd"});
        third = third || any_word_at(c, pos, {"third", "3rd"});
    }
    if (second && !third) return Preference::a;
    if (third && !second) return Preference::b;
    return std::nullopt;
}

Preference resolve_preference(const JudgeVerdict& verdict) {
    if (verdict.scores.size() != 2) throw Error(ErrorCode::invalid_argument, "comparator verdict needs two scores");
    const Preference by_scores = score_preference(verdict.scores[0], verdict.scores[1]);
    auto by_conclusion = verdict.conclusion ? preference_from_conclusion(*verdict.conclusion) : std::nullopt;
    if (!by_conclusion) return by_scores;
    if (*by_conclusion != by_scores) {
        spdlog::info("comparator conclusion '{}' disagrees with scores ({}, {}); following the conclusion",
                     *verdict.conclusion, verdict.scores[0], verdict.scores[1]);
    }
    return *by_conclusion;
}

// ---- Judge -----------------------------------------------------------------

Judge::Judge(VlmClient& client, const PromptRegistry& prompts, JudgeOptions options, Store* cache)
    : client_(client), prompts_(prompts), options_(std::move(options)), cache_(cache) {}

JudgeVerdict Judge::verdict(const std::string& template_id, const std::vector<ImageRef>& images, Parser parser) {
    const PromptTemplate& tmpl = prompts_.get(template_id);
    ++invocations_;

    const bool cacheable = cache_ != nullptr && options_.use_cache && options_.decode.temperature <= 0.0;
    CacheKey key{tmpl.id, tmpl.version, {}, id()};
    for (const auto& img : images) key.image_hashes.push_back(img.hash);
    if (cacheable) {
        if (auto hit = cache_->cache_lookup(key)) return *hit;
    }

    std::optional<Error> last;
    for (int attempt = 0; attempt <= std::max(0, options_.parse_retries); ++attempt) {
        ++model_calls_;
        ChatResponse response = ask(client_, options_.model, options_.decode, tmpl, {}, images);
        try {
            JudgeVerdict v = parser(std::move(response.raw_text));
            v.judge_id = id();
            v.template_id = tmpl.id;
            if (cacheable) cache_->cache_put(key, v);
            return v;
        } catch (const Error& e) {
            if (!is_parse_class(e.code())) throw;
            spdlog::warn("judge {} on {}: unparseable verdict (attempt {}): {}", id(), tmpl.id, attempt + 1,
                         e.what());
            last = e;
        }
    }
    throw *last;
}

// ---- scoring primitives ----------------------------------------------------

double verifier_score(Judge& judge, const ImageRef& target, const ImageRef& candidate, JudgeVerdict* verdict_out) {
    JudgeVerdict v = judge.verdict(prompt_ids::verifier, {target, candidate}, parse_score_verdict);
    const double score = v.scores.at(0) / 100.0;
    if (verdict_out) *verdict_out = std::move(v);
    return score;
}

Comparison comp_score(Judge& judge, const ImageRef& target, const ImageRef& a, const ImageRef& b) {
    Comparison c;
    c.verdict = judge.verdict(prompt_ids::comparator, {target, a, b}, parse_triplet_verdict);
    c.score_a = c.verdict.scores.at(0);
    c.score_b = c.verdict.scores.at(1);
    c.preferred = resolve_preference(c.verdict);
    return c;
}

// ---- batch scoring ---------------------------------------------------------

void RolloutBatch::validate() const {
    if (candidates.empty()) throw Error(ErrorCode::invalid_argument, "rollout batch has no candidates");
    std::set<std::string> ids;
    for (const auto& c : candidates) {
        if (c.id.empty()) throw Error(ErrorCode::invalid_argument, "candidate id is empty");
        if (!ids.insert(c.id).second) throw Error(ErrorCode::invalid_argument, "duplicate candidate id: " + c.id);
    }
    if (target.hash.empty() || reference_render.hash.empty())
        throw Error(ErrorCode::invalid_argument, "rollout batch needs target and reference images");
}

nlohmann::json to_json(const RewardMap& map) {
    nlohmann::json j;
    j["algorithm"] = map.algorithm;
    j["entries"] = nlohmann::json::object();
    for (const auto& [id, reward] : map.entries) j["entries"][id] = reward;
    j["pool"] = map.pool;
    j["pair_log"] = nlohmann::json::array();
    for (const auto& p : map.pair_log) {
        j["pair_log"].push_back(
            {{"a", p.a}, {"b", p.b}, {"outcome", std::string(to_string(p.outcome))}, {"unresolved", p.unresolved}});
    }
    j["screening"] = nlohmann::json::array();
    for (const auto& s : map.screening) {
        j["screening"].push_back(
            {{"id", s.id}, {"reference_score", s.reference_score}, {"candidate_score", s.candidate_score}});
    }
    j["judge_calls"] = map.judge_calls;
    return j;
}

namespace {

// Shared shape of Algos 1 and 2: a per-candidate (S_ref, S_i) pair decides
// between 0 and S_i; render failures short-circuit to -1.
template <class ScoreFn>
RewardMap threshold_rewards(int algorithm, const RolloutBatch& batch, Judge& judge, ScoreFn&& score) {
    batch.validate();
    const std::size_t calls_before = judge.invocations();
    const std::size_t n = batch.candidates.size();
    std::vector<std::optional<ScreenRecord>> screened(n);
    parallel_for(n, judge.options().concurrency, [&](std::size_t i) {
        const Candidate& c = batch.candidates[i];
        if (!c.render.ok()) return;
        auto [s_ref, s_i] = score(c.render.image());
        screened[i] = ScreenRecord{c.id, s_ref, s_i};
    });

    RewardMap map;
    map.algorithm = algorithm;
    for (std::size_t i = 0; i < n; ++i) {
        const Candidate& c = batch.candidates[i];
        if (!screened[i]) {
            map.entries[c.id] = -1.0;
            continue;
        }
        const ScreenRecord& s = *screened[i];
        map.entries[c.id] = s.candidate_score <= s.reference_score ? 0.0 : s.candidate_score;
        map.screening.push_back(s);
    }
    map.judge_calls = judge.invocations() - calls_before;
    return map;
}

}  // namespace

RewardMap score_algo1(const RolloutBatch& batch, Judge& judge) {
    // S_ref is a property of the batch, not the candidate: computed on first
    // need and shared, so a batch of render failures costs no judge calls.
    std::once_flag ref_once;
    double s_ref = 0;
    auto score = [&](const ImageRef& candidate) {
        std::call_once(ref_once, [&] { s_ref = verifier_score(judge, batch.target, batch.reference_render); });
        return std::pair{s_ref, verifier_score(judge, batch.target, candidate)};
    };
    return threshold_rewards(1, batch, judge, score);
}

RewardMap score_algo2(const RolloutBatch& batch, Judge& judge) {
    auto score = [&](const ImageRef& candidate) {
        Comparison c = comp_score(judge, batch.target, batch.reference_render, candidate);
        return std::pair{c.score_a / 100.0, c.score_b / 100.0};
    };
    return threshold_rewards(2, batch, judge, score);
}

namespace {

PairOutcome outcome_of(Preference p) {
    switch (p) {
    case Preference::a: return PairOutcome::a_wins;
    case Preference::b: return PairOutcome::b_wins;
    case Preference::tie: return PairOutcome::tie;
    }
    return PairOutcome::tie;
}

PairOutcome judge_pair(Judge& judge, const ImageRef& target, const ImageRef& a, const ImageRef& b) {
    const PairOutcome forward = outcome_of(comp_score(judge, target, a, b).preferred);
    if (!judge.options().both_orders) return forward;
    const PairOutcome backward = outcome_of(comp_score(judge, target, b, a).preferred);
    if (forward == PairOutcome::a_wins && backward == PairOutcome::b_wins) return PairOutcome::a_wins;
    if (forward == PairOutcome::b_wins && backward == PairOutcome::a_wins) return PairOutcome::b_wins;
    return PairOutcome::tie;
}

}  // namespace

RewardMap score_algo3(const RolloutBatch& batch, Judge& judge) {
    batch.validate();
    const std::size_t calls_before = judge.invocations();
    const auto& cands = batch.candidates;
    const std::size_t n = cands.size();

    // Screening against the previous round's accepted render.
    std::vector<std::optional<ScreenRecord>> screened(n);
    parallel_for(n, judge.options().concurrency, [&](std::size_t i) {
        if (!cands[i].render.ok()) return;
        Comparison c = comp_score(judge, batch.target, batch.reference_render, cands[i].render.image());
        screened[i] = ScreenRecord{cands[i].id, c.score_a / 100.0, c.score_b / 100.0};
    });

    RewardMap map;
    map.algorithm = 3;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i) {
        map.entries[cands[i].id] = 1.0;
        if (!screened[i]) {
            map.entries[cands[i].id] = -1.0;
            continue;
        }
        map.screening.push_back(*screened[i]);
        if (screened[i]->candidate_score <= screened[i]->reference_score) {
            map.entries[cands[i].id] = 0.0;
        } else {
            pool.push_back(i);
            map.pool.push_back(cands[i].id);
        }
    }

    // Round-robin over unordered pool pairs, in a fixed (i < j) order.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t x = 0; x < pool.size(); ++x)
        for (std::size_t y = x + 1; y < pool.size(); ++y) pairs.emplace_back(pool[x], pool[y]);

    std::vector<PairRecord> records(pairs.size());
    parallel_for(pairs.size(), judge.options().concurrency, [&](std::size_t p) {
        const auto [i, j] = pairs[p];
        PairRecord& rec = records[p];
        rec.a = cands[i].id;
        rec.b = cands[j].id;
        try {
            rec.outcome = judge_pair(judge, batch.target, cands[i].render.image(), cands[j].render.image());
        } catch (const Error& e) {
            if (!is_pair_recoverable(e.code())) throw;
            spdlog::warn("pair ({}, {}) unresolved, scored as a tie: {}", rec.a, rec.b, e.what());
            rec.outcome = PairOutcome::tie;
            rec.unresolved = true;
        }
    });

    for (const auto& rec : records) {
        switch (rec.outcome) {
        case PairOutcome::a_wins: map.entries[rec.a] += 1.0; break;
        case PairOutcome::b_wins: map.entries[rec.b] += 1.0; break;
        case PairOutcome::tie:
            map.entries[rec.a] += 0.5;
            map.entries[rec.b] += 0.5;
            break;
        }
    }
    map.pair_log = std::move(records);
    map.judge_calls = judge.invocations() - calls_before;
    return map;
}

double ui2code_reward(const ImageRef& target, const HtmlDocument& rollout, Judge& judge, Renderer& renderer,
                      const Viewport& viewport, std::chrono::milliseconds timeout) {
    RenderResult r = renderer.render(rollout, viewport, timeout);
    if (!r.ok()) return -1.0;
    return verifier_score(judge, target, r.image());
}

}  // namespace uicoder
