#pragma once

// Value types shared across modules (renderer, reward engine, session,
// store) together with their JSON encodings.

#include "uicoder/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace uicoder {

struct Viewport {
    std::uint32_t width_px = 1280;
    std::uint32_t height_px = 0;  // 0 = full page
    double device_scale = 1.0;

    // Throws invalid_argument unless width >= 320 and scale is 1 or 2.
    void validate() const;
    bool operator==(const Viewport&) const = default;
};

enum class RenderFailure { navigation_error, script_fatal, timeout, protocol_error };

std::string_view to_string(RenderFailure reason);
RenderFailure render_failure_from_string(std::string_view name);

struct RenderSuccess {
    ImageRef image;
    std::uint32_t page_height_px = 0;
    bool operator==(const RenderSuccess&) const = default;
};

class RenderResult {
public:
    RenderResult() : outcome_(RenderFailure::protocol_error) {}
    static RenderResult success(ImageRef image, std::uint32_t page_height_px) {
        return RenderResult(RenderSuccess{std::move(image), page_height_px});
    }
    static RenderResult failure(RenderFailure reason) { return RenderResult(reason); }

    bool ok() const noexcept { return std::holds_alternative<RenderSuccess>(outcome_); }
    const RenderSuccess& value() const { return std::get<RenderSuccess>(outcome_); }
    const ImageRef& image() const { return value().image; }
    RenderFailure reason() const { return std::get<RenderFailure>(outcome_); }

    bool operator==(const RenderResult&) const = default;

private:
    explicit RenderResult(std::variant<RenderSuccess, RenderFailure> outcome) : outcome_(std::move(outcome)) {}
    std::variant<RenderSuccess, RenderFailure> outcome_;
};

struct JudgeVerdict {
    std::string raw;
    std::vector<double> scores;  // each in [0, 100]
    std::optional<std::string> conclusion;
    std::string judge_id;
    std::string template_id;

    bool operator==(const JudgeVerdict&) const = default;
};

enum class RoundKind { generate, polish, edit };
enum class AdvancePolicy { always_advance, accept_if_better };

std::string_view to_string(RoundKind kind);
RoundKind round_kind_from_string(std::string_view name);
std::string_view to_string(AdvancePolicy policy);
AdvancePolicy advance_policy_from_string(std::string_view name);

struct Round {
    std::uint32_t index = 0;
    RoundKind kind = RoundKind::generate;
    std::optional<HtmlDocument> input_code;
    std::optional<RenderResult> input_render;
    std::optional<std::string> instruction;
    HtmlDocument output_code;
    RenderResult output_render;
    std::vector<JudgeVerdict> verdicts;
    bool accepted = false;

    bool operator==(const Round&) const = default;
};

struct Session {
    std::string id;
    ImageRef target;
    std::vector<Round> rounds;
    AdvancePolicy policy = AdvancePolicy::always_advance;
    std::string created_at;  // ISO-8601 UTC

    std::vector<RoundKind> mode_history() const;
    // Index of the most recent accepted round; nullopt for an empty session.
    std::optional<std::size_t> head_index() const;
    const Round& head() const;

    bool operator==(const Session&) const = default;
};

void to_json(nlohmann::json& j, const ImageRef& ref);
void from_json(const nlohmann::json& j, ImageRef& ref);
void to_json(nlohmann::json& j, const Viewport& viewport);
void from_json(const nlohmann::json& j, Viewport& viewport);
void to_json(nlohmann::json& j, const RenderResult& result);
void from_json(const nlohmann::json& j, RenderResult& result);
void to_json(nlohmann::json& j, const JudgeVerdict& verdict);
void from_json(const nlohmann::json& j, JudgeVerdict& verdict);

std::string utc_timestamp();

}  // namespace uicoder
