#pragma once

// Benchmark protocols over a dataset manifest:
//   ui2code  pass iff the judged similarity score >= 80
//   polish   pass iff score(target, polished) > score(target, seed), one triplet call
//   tts      ui2code accuracy after each of N = 1..max_N rounds
//
// Manifest (JSON, paths relative to the manifest file):
//   {"name": "...", "kind": "ui2code" | "polish",
//    "samples": [{"id": "s1", "target": "img/s1.png", "seed_html": "seed/s1.html"}]}

#include "uicoder/reward_engine.hpp"
#include "uicoder/session.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace uicoder {

inline constexpr double kUi2CodePassThreshold = 80.0;

enum class DatasetKind { ui2code, polish };
std::string_view to_string(DatasetKind kind);

struct ManifestSample {
    std::string id;
    std::filesystem::path target_image;
    std::optional<std::filesystem::path> seed_html;
};

struct DatasetManifest {
    std::string name;
    DatasetKind kind = DatasetKind::ui2code;
    std::vector<ManifestSample> samples;

    // Resolves relative paths against the manifest's directory.
    static DatasetManifest load(const std::filesystem::path& path);
    static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    void validate() const;
};

struct EvalRecord {
    std::string sample_id;
    std::map<std::string, double> scores;  // 0..100
    std::optional<bool> passed;             // absent iff error
    std::vector<std::string> verdict_raws;
    std::optional<std::string> error;
    std::optional<std::string> session_id;
    std::optional<std::string> render_failure;

    bool counted_pass() const { return passed.value_or(false); }
};

struct EvalReport {
    std::string dataset;
    std::string protocol;
    std::string model_id;
    std::string judge_id;
    std::vector<EvalRecord> records;  // sorted by sample_id

    // Errored samples count as failures.
    double accuracy() const;
    // Accuracy over samples that did not error; nullopt if all errored.
    std::optional<double> clean_accuracy() const;
    std::size_t passed_count() const;
    std::size_t errored_count() const;
};

nlohmann::json to_json(const EvalReport& report);
std::string to_csv(const EvalReport& report);

struct TtsCurve {
    std::vector<std::pair<std::size_t, double>> points;  // (N, accuracy)
    std::vector<EvalReport> reports;                     // one per N
};

nlohmann::json to_json(const TtsCurve& curve);

// Recomputes a record's pass flag from its verdict_raws alone.
bool recompute_passed(const std::string& protocol, const std::vector<std::string>& verdict_raws);

class Evaluator {
public:
    Evaluator(Store& store, SessionEngine& engine, Judge& judge, std::size_t width = 4);

    EvalReport eval_ui2code(const DatasetManifest& manifest);
    EvalReport eval_polish(const DatasetManifest& manifest);
    TtsCurve eval_tts(const DatasetManifest& manifest, std::size_t max_n,
                      AdvancePolicy policy = AdvancePolicy::always_advance);

private:
    // One ui2code sample run to `max_n` rounds, judged after every round.
    std::vector<EvalRecord> tts_sample(const ManifestSample& sample, std::size_t max_n, AdvancePolicy policy);
    EvalRecord polish_sample(const ManifestSample& sample);
    void judge_ui2code(EvalRecord& record, const ImageRef& target, const RenderResult& render);
    EvalReport make_report(const DatasetManifest& manifest, std::string protocol, std::vector<EvalRecord> records);

    Store& store_;
    SessionEngine& engine_;
    Judge& judge_;
    std::size_t width_;
};

}  // namespace uicoder
