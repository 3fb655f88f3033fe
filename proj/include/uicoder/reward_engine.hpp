#pragma once

// Reward computation for polishing rollouts: verifier scoring, comparator
// scoring, and comparator screening followed by a round-robin tournament,
// plus the normalized UI-to-code reward.

#include "uicoder/prompts.hpp"
#include "uicoder/records.hpp"
#include "uicoder/renderer.hpp"
#include "uicoder/vlm_client.hpp"

#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace uicoder {

class Store;

// Verdict parsers shared by rewards and evaluation. Both throw a parse-class
// Error (parse_error / no_boxed_content / unbalanced_braces) rather than
// guess a value.
JudgeVerdict parse_score_verdict(std::string raw);    // one boxed score
JudgeVerdict parse_triplet_verdict(std::string raw);  // second/third scores + boxed conclusion

enum class Preference { a, b, tie };
std::string_view to_string(Preference p);

// Maps a boxed conclusion ("The second image is better") to a preference;
// nullopt when it names neither or both images.
std::optional<Preference> preference_from_conclusion(std::string_view conclusion);

// Preference of a two-score verdict: the conclusion when readable, else the scores.
Preference resolve_preference(const JudgeVerdict& verdict);

struct JudgeOptions {
    ModelRef model;
    DecodeParams decode{2048, 0.0};
    int parse_retries = 2;  // extra attempts after an unparseable answer
    bool use_cache = true;  // ignored when decode.temperature > 0
    bool both_orders = false;  // run each round-robin pair in both orderings
    std::size_t concurrency = 4;
};

// A judge model bound to prompts, retries and the verdict cache.
class Judge {
public:
    using Parser = JudgeVerdict (*)(std::string);

    Judge(VlmClient& client, const PromptRegistry& prompts, JudgeOptions options, Store* cache = nullptr);

    // Cached, retried judge call returning a parsed verdict.
    JudgeVerdict verdict(const std::string& template_id, const std::vector<ImageRef>& images, Parser parser);

    const JudgeOptions& options() const noexcept { return options_; }
    std::string id() const { return options_.model.str(); }
    std::size_t invocations() const noexcept { return invocations_.load(); }
    std::size_t model_calls() const noexcept { return model_calls_.load(); }

private:
    VlmClient& client_;
    const PromptRegistry& prompts_;
    JudgeOptions options_;
    Store* cache_;
    std::atomic<std::size_t> invocations_{0};
    std::atomic<std::size_t> model_calls_{0};
};

// score/100 from the verifier prompt over [target, candidate].
double verifier_score(Judge& judge, const ImageRef& target, const ImageRef& candidate,
                      JudgeVerdict* verdict_out = nullptr);

struct Comparison {
    double score_a = 0;  // 0..100, second image
    double score_b = 0;  // 0..100, third image
    Preference preferred = Preference::tie;
    JudgeVerdict verdict;
};

// Comparator over [target, a, b]. Preference follows the boxed conclusion and
// falls back to the scores only when the conclusion is unreadable.
Comparison comp_score(Judge& judge, const ImageRef& target, const ImageRef& a, const ImageRef& b);

struct Candidate {
    std::string id;
    HtmlDocument code;
    RenderResult render;
};

struct RolloutBatch {
    std::uint32_t round_index = 0;
    ImageRef target;
    ImageRef reference_render;
    std::vector<Candidate> candidates;

    void validate() const;
};

enum class PairOutcome { a_wins, b_wins, tie };
std::string_view to_string(PairOutcome outcome);

struct PairRecord {
    std::string a;
    std::string b;
    PairOutcome outcome = PairOutcome::tie;
    bool unresolved = false;
};

struct ScreenRecord {
    std::string id;
    double reference_score = 0;  // normalized
    double candidate_score = 0;  // normalized
};

struct RewardMap {
    int algorithm = 0;
    std::map<std::string, double> entries;
    std::vector<std::string> pool;  // batch order
    std::vector<PairRecord> pair_log;
    std::vector<ScreenRecord> screening;
    std::size_t judge_calls = 0;
};

nlohmann::json to_json(const RewardMap& map);

RewardMap score_algo1(const RolloutBatch& batch, Judge& judge);
RewardMap score_algo2(const RolloutBatch& batch, Judge& judge);
RewardMap score_algo3(const RolloutBatch& batch, Judge& judge);

// Render the rollout; -1 on render failure, otherwise the verifier score in [0, 1].
double ui2code_reward(const ImageRef& target, const HtmlDocument& rollout, Judge& judge, Renderer& renderer,
                      const Viewport& viewport, std::chrono::milliseconds timeout);

}  // namespace uicoder
