#include "uicoder/records.hpp"

#include "uicoder/error.hpp"

#include <chrono>
#include <ctime>

namespace uicoder {

void Viewport::validate() const {
    if (width_px < 320) {
        throw Error(ErrorCode::invalid_argument, "viewport width must be >= 320 px");
    }
    if (device_scale != 1.0 && device_scale != 2.0) {
        throw Error(ErrorCode::invalid_argument, "device scale must be 1 or 2");
    }
}

std::string_view to_string(RenderFailure reason) {
    switch (reason) {
        case RenderFailure::navigation_error: return "navigation-error";
        case RenderFailure::script_fatal: return "script-fatal";
        case RenderFailure::timeout: return "timeout";
        case RenderFailure::protocol_error: return "protocol-error";
    }
    return "protocol-error";
}

RenderFailure render_failure_from_string(std::string_view name) {
    if (name == "navigation-error") return RenderFailure::navigation_error;
    if (name == "script-fatal") return RenderFailure::script_fatal;
    if (name == "timeout") return RenderFailure::timeout;
    if (name == "protocol-error") return RenderFailure::protocol_error;
    throw Error(ErrorCode::invalid_argument, "unknown render failure '" + std::string(name) + "'");
}

std::string_view to_string(RoundKind kind) {
    switch (kind) {
        case RoundKind::generate: return "generate";
        case RoundKind::polish: return "polish";
        case RoundKind::edit: return "edit";
    }
    return "generate";
}

RoundKind round_kind_from_string(std::string_view name) {
    if (name == "generate") return RoundKind::generate;
    if (name == "polish") return RoundKind::polish;
    if (name == "edit") return RoundKind::edit;
    throw Error(ErrorCode::invalid_argument, "unknown round kind '" + std::string(name) + "'");
}

std::string_view to_string(AdvancePolicy policy) {
    return policy == AdvancePolicy::always_advance ? "always-advance" : "accept-if-better";
}

AdvancePolicy advance_policy_from_string(std::string_view name) {
    if (name == "always-advance") return AdvancePolicy::always_advance;
    if (name == "accept-if-better") return AdvancePolicy::accept_if_better;
    throw Error(ErrorCode::invalid_argument, "unknown advance policy '" + std::string(name) + "'");
}

std::vector<RoundKind> Session::mode_history() const {
    std::vector<RoundKind> kinds;
    kinds.reserve(rounds.size());
    for (const auto& round : rounds) kinds.push_back(round.kind);
    return kinds;
}

std::optional<std::size_t> Session::head_index() const {
    for (std::size_t i = rounds.size(); i-- > 0;) {
        if (rounds[i].accepted) return i;
    }
    return std::nullopt;
}

const Round& Session::head() const {
    auto index = head_index();
    if (!index) throw Error(ErrorCode::precondition, "session " + id + " has no accepted round");
    return rounds[*index];
}

void to_json(nlohmann::json& j, const ImageRef& ref) {
    j = {{"hash", ref.hash}, {"width", ref.width}, {"height", ref.height}};
}

void from_json(const nlohmann::json& j, ImageRef& ref) {
    j.at("hash").get_to(ref.hash);
    j.at("width").get_to(ref.width);
    j.at("height").get_to(ref.height);
}

void to_json(nlohmann::json& j, const Viewport& viewport) {
    j = {{"width_px", viewport.width_px}, {"height_px", viewport.height_px}, {"device_scale", viewport.device_scale}};
}

void from_json(const nlohmann::json& j, Viewport& viewport) {
    viewport.width_px = j.value("width_px", 1280u);
    viewport.height_px = j.value("height_px", 0u);
    viewport.device_scale = j.value("device_scale", 1.0);
}

void to_json(nlohmann::json& j, const RenderResult& result) {
    if (result.ok()) {
        j = {{"outcome", "success"}, {"image", result.image()}, {"page_height_px", result.value().page_height_px}};
    } else {
        j = {{"outcome", "failure"}, {"reason", to_string(result.reason())}};
    }
}

void from_json(const nlohmann::json& j, RenderResult& result) {
    if (j.at("outcome").get<std::string>() == "success") {
        result = RenderResult::success(j.at("image").get<ImageRef>(), j.at("page_height_px").get<std::uint32_t>());
    } else {
        result = RenderResult::failure(render_failure_from_string(j.at("reason").get<std::string>()));
    }
}

void to_json(nlohmann::json& j, const JudgeVerdict& verdict) {
    j = {{"raw", verdict.raw}, {"scores", verdict.scores}, {"judge_id", verdict.judge_id},
         {"template_id", verdict.template_id}};
    j["conclusion"] = verdict.conclusion ? nlohmann::json(*verdict.conclusion) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, JudgeVerdict& verdict) {
    j.at("raw").get_to(verdict.raw);
    j.at("scores").get_to(verdict.scores);
    verdict.judge_id = j.value("judge_id", "");
    verdict.template_id = j.value("template_id", "");
    if (j.contains("conclusion") && !j["conclusion"].is_null()) {
        verdict.conclusion = j["conclusion"].get<std::string>();
    } else {
        verdict.conclusion.reset();
    }
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace uicoder
