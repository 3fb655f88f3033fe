#include "uicoder/evaluator.hpp"

#include "uicoder/error.hpp"
#include "uicoder/parallel.hpp"
#include "uicoder/store.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace uicoder {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot read " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string_view to_string(DatasetKind kind) {
    return kind == DatasetKind::polish ? "polish" : "ui2code";
}

// ---- manifest --------------------------------------------------------------

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, const fs::path& base_dir) {
    DatasetManifest m;
    try {
        m.name = j.value("name", std::string("dataset"));
        const std::string kind = j.value("kind", std::string("ui2code"));
        if (kind == "ui2code") m.kind = DatasetKind::ui2code;
        else if (kind == "polish") m.kind = DatasetKind::polish;
        else throw Error(ErrorCode::invalid_argument, "unknown dataset kind: " + kind);
        for (const auto& s : j.at("samples")) {
            ManifestSample sample;
            sample.id = s.at("id").get<std::string>();
            sample.target_image = base_dir / s.at("target").get<std::string>();
            if (s.contains("seed_html")) sample.seed_html = base_dir / s.at("seed_html").get<std::string>();
            m.samples.push_back(std::move(sample));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("malformed manifest: ") + e.what());
    }
    m.validate();
    return m;
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::invalid_argument, "manifest " + path.string() + " is not JSON: " + e.what());
    }
    return from_json(j, path.parent_path());
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const auto& s : samples) {
        if (s.id.empty()) throw Error(ErrorCode::invalid_argument, "manifest sample without id");
        if (!ids.insert(s.id).second) throw Error(ErrorCode::invalid_argument, "duplicate sample id: " + s.id);
        if (kind == DatasetKind::polish && !s.seed_html)
            throw Error(ErrorCode::invalid_argument, "polish sample " + s.id + " has no seed_html");
    }
}

// ---- reports ---------------------------------------------------------------

std::size_t EvalReport::passed_count() const {
    return std::count_if(records.begin(), records.end(), [](const auto& r) { return r.counted_pass(); });
}

std::size_t EvalReport::errored_count() const {
    return std::count_if(records.begin(), records.end(), [](const auto& r) { return r.error.has_value(); });
}

double EvalReport::accuracy() const {
    if (records.empty()) throw Error(ErrorCode::precondition, "accuracy is undefined for an empty dataset");
    return static_cast<double>(passed_count()) / static_cast<double>(records.size());
}

std::optional<double> EvalReport::clean_accuracy() const {
    const std::size_t clean = records.size() - errored_count();
    if (clean == 0) return std::nullopt;
    return static_cast<double>(passed_count()) / static_cast<double>(clean);
}

nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json j;
    j["dataset"] = report.dataset;
    j["protocol"] = report.protocol;
    j["model"] = report.model_id;
    j["judge"] = report.judge_id;
    j["total"] = report.records.size();
    j["passed"] = report.passed_count();
    j["errored"] = report.errored_count();
    j["accuracy"] = report.accuracy();
    auto clean = report.clean_accuracy();
    j["clean_accuracy"] = clean ? nlohmann::json(*clean) : nlohmann::json(nullptr);
    j["records"] = nlohmann::json::array();
    for (const auto& r : report.records) {
        nlohmann::json rec;
        rec["sample_id"] = r.sample_id;
        rec["scores"] = r.scores;
        rec["passed"] = r.passed ? nlohmann::json(*r.passed) : nlohmann::json(nullptr);
        rec["verdict_raws"] = r.verdict_raws;
        if (r.error) rec["error"] = *r.error;
        if (r.session_id) rec["session_id"] = *r.session_id;
        if (r.render_failure) rec["render_failure"] = *r.render_failure;
        j["records"].push_back(std::move(rec));
    }
    return j;
}

std::string to_csv(const EvalReport& report) {
    std::set<std::string> labels;
    for (const auto& r : report.records)
        for (const auto& [label, _] : r.scores) labels.insert(label);
    std::ostringstream out;
    out << "sample_id";
    for (const auto& l : labels) out << ",score_" << l;
    out << ",passed,error\n";
    for (const auto& r : report.records) {
        out << csv_field(r.sample_id);
        for (const auto& l : labels) {
            out << ',';
            if (auto it = r.scores.find(l); it != r.scores.end()) out << it->second;
        }
        out << ',' << (r.counted_pass() ? "true" : "false") << ',' << csv_field(r.error.value_or("")) << '\n';
    }
    return out.str();
}

nlohmann::json to_json(const TtsCurve& curve) {
    nlohmann::json j;
    j["curve"] = nlohmann::json::array();
    for (const auto& [n, acc] : curve.points) j["curve"].push_back({{"n", n}, {"accuracy", acc}});
    j["reports"] = nlohmann::json::array();
    for (const auto& r : curve.reports) j["reports"].push_back(to_json(r));
    return j;
}

bool recompute_passed(const std::string& protocol, const std::vector<std::string>& verdict_raws) {
    if (verdict_raws.empty()) return false;
    if (protocol == "polish") {
        JudgeVerdict v = parse_triplet_verdict(verdict_raws.back());
        return v.scores.at(1) > v.scores.at(0);
    }
    return parse_score_verdict(verdict_raws.back()).scores.at(0) >= kUi2CodePassThreshold;
}

// ---- evaluator -------------------------------------------------------------

Evaluator::Evaluator(Store& store, SessionEngine& engine, Judge& judge, std::size_t width)
    : store_(store), engine_(engine), judge_(judge), width_(std::max<std::size_t>(1, width)) {}

void Evaluator::judge_ui2code(EvalRecord& record, const ImageRef& target, const RenderResult& render) {
    if (!render.ok()) {
        record.passed = false;
        record.render_failure = std::string(to_string(render.reason()));
        return;
    }
    JudgeVerdict v = judge_.verdict(prompt_ids::judge_ui2code, {target, render.image()}, parse_score_verdict);
    record.scores["score"] = v.scores.at(0);
    record.verdict_raws.push_back(v.raw);
    record.passed = v.scores.at(0) >= kUi2CodePassThreshold;
}

std::vector<EvalRecord> Evaluator::tts_sample(const ManifestSample& sample, std::size_t max_n, AdvancePolicy policy) {
    std::vector<EvalRecord> records(max_n);
    for (auto& r : records) r.sample_id = sample.id;
    auto fail_all = [&](const std::string& message) {
        for (auto& r : records) {
            if (r.passed || r.error) continue;
            r.error = message;
        }
    };
    try {
        const ImageRef target = store_.put_image(read_file(sample.target_image));
        Session session;
        try {
            session = engine_.run_tts(target, max_n, policy);
        } catch (const SessionAborted& aborted) {
            session = aborted.partial();
            spdlog::info("sample {}: {}", sample.id, aborted.what());
        }
        // Judge the head after each prefix of N rounds.
        std::optional<std::size_t> head;
        for (std::size_t n = 1; n <= max_n; ++n) {
            EvalRecord& record = records[n - 1];
            record.session_id = session.id;
            if (n <= session.rounds.size()) {
                if (session.rounds[n - 1].accepted) head = n - 1;
            } else {
                // The run stopped early because the head failed to render;
                // later N inherit that failure.
                record.passed = false;
                record.render_failure = "aborted";
                continue;
            }
            const Round& h = session.rounds.at(*head);
            try {
                judge_ui2code(record, target, h.output_render);
            } catch (const Error& e) {
                record.error = e.what();
            }
        }
    } catch (const std::exception& e) {
        fail_all(e.what());
    }
    return records;
}

EvalRecord Evaluator::polish_sample(const ManifestSample& sample) {
    EvalRecord record;
    record.sample_id = sample.id;
    try {
        const ImageRef target = store_.put_image(read_file(sample.target_image));
        const HtmlDocument seed(read_file(*sample.seed_html));
        Session session = engine_.start_from_seed(target, seed);
        record.session_id = session.id;
        const RenderResult b = session.rounds.at(0).output_render;  // copy: polishing grows session.rounds
        if (!b.ok()) {
            record.error = "seed HTML failed to render (" + std::string(to_string(b.reason())) + ")";
            return record;
        }
        Round polished = engine_.polish_once(session);
        if (!polished.output_render.ok()) {
            record.passed = false;
            record.render_failure = std::string(to_string(polished.output_render.reason()));
            return record;
        }
        JudgeVerdict v = judge_.verdict(prompt_ids::judge_polish, {target, b.image(), polished.output_render.image()},
                                        parse_triplet_verdict);
        record.scores["B"] = v.scores.at(0);
        record.scores["C"] = v.scores.at(1);
        record.verdict_raws.push_back(v.raw);
        record.passed = v.scores.at(1) > v.scores.at(0);
    } catch (const std::exception& e) {
        record.passed.reset();
        record.error = e.what();
    }
    return record;
}

EvalReport Evaluator::make_report(const DatasetManifest& manifest, std::string protocol,
                                  std::vector<EvalRecord> records) {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
    EvalReport report;
    report.dataset = manifest.name;
    report.protocol = std::move(protocol);
    report.model_id = engine_.options().model.str();
    report.judge_id = judge_.id();
    report.records = std::move(records);
    return report;
}

EvalReport Evaluator::eval_ui2code(const DatasetManifest& manifest) {
    return eval_tts(manifest, 1).reports.at(0);
}

TtsCurve Evaluator::eval_tts(const DatasetManifest& manifest, std::size_t max_n, AdvancePolicy policy) {
    if (manifest.kind != DatasetKind::ui2code)
        throw Error(ErrorCode::precondition, "UI-to-code evaluation needs a ui2code manifest");
    if (manifest.samples.empty()) throw Error(ErrorCode::precondition, "manifest has no samples; accuracy undefined");
    if (max_n < 1) throw Error(ErrorCode::precondition, "max N must be >= 1");

    std::vector<std::vector<EvalRecord>> per_sample(manifest.samples.size());
    parallel_for(manifest.samples.size(), width_,
                 [&](std::size_t i) { per_sample[i] = tts_sample(manifest.samples[i], max_n, policy); });

    TtsCurve curve;
    for (std::size_t n = 1; n <= max_n; ++n) {
        std::vector<EvalRecord> records;
        for (auto& s : per_sample) records.push_back(s[n - 1]);
        EvalReport report = make_report(manifest, max_n == 1 ? "ui2code" : "tts", std::move(records));
        curve.points.emplace_back(n, report.accuracy());
        curve.reports.push_back(std::move(report));
    }
    return curve;
}

EvalReport Evaluator::eval_polish(const DatasetManifest& manifest) {
    if (manifest.kind != DatasetKind::polish)
        throw Error(ErrorCode::precondition, "polish evaluation needs a polish manifest");
    if (manifest.samples.empty()) throw Error(ErrorCode::precondition, "manifest has no samples; accuracy undefined");
    std::vector<EvalRecord> records(manifest.samples.size());
    parallel_for(manifest.samples.size(), width_,
                 [&](std::size_t i) { records[i] = polish_sample(manifest.samples[i]); });
    return make_report(manifest, "polish", std::move(records));
}

}  // namespace uicoder
