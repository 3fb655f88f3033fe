#include "uicoder/store.hpp"

#include "uicoder/error.hpp"
#include "uicoder/hashing.hpp"
#include "uicoder/image.hpp"

#include <atomic>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace uicoder {

namespace {

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

// tmp + rename in the same directory, so readers never see partial files.
void write_atomic(const fs::path& path, std::string_view bytes) {
    static std::atomic<unsigned> counter{0};
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    std::ostringstream tmp_name;
    tmp_name << path.filename().string() << ".tmp." << ::getpid() << "." << std::this_thread::get_id() << "."
             << counter++;
    const fs::path tmp = path.parent_path() / tmp_name.str();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::io_error, "cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::io_error, "short write to " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::io_error, "rename to " + path.string() + " failed");
    }
}

bool is_hex_digest(std::string_view s) {
    if (s.size() != 64) return false;
    for (char c : s) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    }
    return true;
}

bool valid_session_id(std::string_view id) {
    if (id.empty() || id.size() > 128) return false;
    for (char c : id) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) return false;
    }
    return true;
}

json round_payload(const Round& round) {
    json j;
    j["index"] = round.index;
    j["kind"] = to_string(round.kind);
    j["input_code"] = round.input_code ? json(round.input_code->hash()) : json(nullptr);
    j["input_render"] = round.input_render ? json(*round.input_render) : json(nullptr);
    j["instruction"] = round.instruction ? json(*round.instruction) : json(nullptr);
    j["output_code"] = round.output_code.hash();
    j["output_render"] = round.output_render;
    j["verdicts"] = round.verdicts;
    j["accepted"] = round.accepted;
    return j;
}

json header_payload(const Session& session) {
    return {{"type", "session"},
            {"id", session.id},
            {"target", session.target},
            {"policy", to_string(session.policy)},
            {"created_at", session.created_at}};
}

std::string seal(json payload, const std::string& prev) {
    payload["prev"] = prev;
    const std::string hash = sha256_hex(dump(payload));
    payload["hash"] = hash;
    return dump(payload);
}

}  // namespace

std::string CacheKey::digest() const {
    json j = {{"template_id", template_id},
              {"template_version", template_version},
              {"images", image_hashes},
              {"judge_model", judge_model}};
    return sha256_hex(dump(j));
}

Store::Store(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    for (const char* sub : {"blobs", "sessions", "cache"}) {
        fs::create_directories(root_ / sub, ec);
        if (ec) throw Error(ErrorCode::io_error, "cannot create " + (root_ / sub).string() + ": " + ec.message());
    }
}

fs::path Store::blob_path(std::string_view hash) const {
    return root_ / "blobs" / std::string(hash.substr(0, 2)) / std::string(hash);
}

fs::path Store::session_path(std::string_view id) const {
    return root_ / "sessions" / (std::string(id) + ".jsonl");
}

std::mutex& Store::session_mutex(const std::string& id) {
    std::lock_guard lock(registry_mutex_);
    auto& slot = session_mutexes_[id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

BlobRef Store::put_blob(std::string_view bytes, MediaType media_type) {
    if (bytes.empty()) throw Error(ErrorCode::precondition, "refusing to store an empty blob");
    BlobRef ref{sha256_hex(bytes), media_type, bytes.size()};
    const fs::path path = blob_path(ref.hash);
    std::error_code ec;
    if (!fs::exists(path, ec)) write_atomic(path, bytes);
    return ref;
}

std::optional<std::string> Store::get_blob(std::string_view hash) const {
    if (!is_hex_digest(hash)) return std::nullopt;
    return read_file(blob_path(hash));
}

bool Store::has_blob(std::string_view hash) const {
    std::error_code ec;
    return is_hex_digest(hash) && fs::exists(blob_path(hash), ec);
}

std::optional<MediaType> Store::sniff_blob(std::string_view hash) const {
    auto bytes = get_blob(hash);
    if (!bytes) return std::nullopt;
    if (auto info = image::sniff(*bytes)) return info->format;
    const auto first = bytes->find_first_not_of(" \t\r\n");
    if (first != std::string::npos && (*bytes)[first] == '<') return MediaType::html;
    if (json::accept(*bytes)) return MediaType::json;
    return MediaType::text;
}

ImageRef Store::put_image(std::string_view bytes) {
    auto info = image::sniff(bytes);
    if (!info) throw Error(ErrorCode::invalid_argument, "not a decodable PNG or JPEG image");
    auto ref = put_blob(bytes, info->format);
    return ImageRef{ref.hash, info->width, info->height};
}

HtmlDocument Store::put_html(std::string source) {
    HtmlDocument doc(std::move(source));
    if (!doc.empty()) put_blob(doc.source(), MediaType::html);
    return doc;
}

HtmlDocument Store::load_html(std::string_view hash) const {
    if (hash == sha256_hex("")) return HtmlDocument("");
    auto bytes = get_blob(hash);
    if (!bytes) throw Error(ErrorCode::unknown_id, "no blob " + std::string(hash));
    HtmlDocument doc(std::move(*bytes));
    if (doc.hash() != hash) throw Error(ErrorCode::corrupt_log, "blob " + std::string(hash) + " fails its digest");
    return doc;
}

bool Store::has_session(std::string_view id) const {
    std::error_code ec;
    return valid_session_id(id) && fs::exists(session_path(id), ec);
}

std::vector<std::string> Store::list_sessions() const {
    std::vector<std::string> ids;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root_ / "sessions", ec)) {
        if (entry.path().extension() == ".jsonl") ids.push_back(entry.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

void Store::save_session(const Session& session) {
    if (!valid_session_id(session.id)) throw Error(ErrorCode::precondition, "invalid session id '" + session.id + "'");
    if (!has_blob(session.target.hash)) {
        throw Error(ErrorCode::precondition, "session target " + session.target.hash + " is not in the blob store");
    }
    std::lock_guard lock(session_mutex(session.id));

    std::vector<std::string> lines;
    const fs::path path = session_path(session.id);
    if (auto existing = read_file(path)) {
        std::istringstream in(*existing);
        for (std::string line; std::getline(in, line);) {
            if (!line.empty()) lines.push_back(line);
        }
    }

    auto check_render = [&](const RenderResult& r) {
        if (r.ok() && !has_blob(r.image().hash)) {
            throw Error(ErrorCode::precondition, "render image " + r.image().hash + " is not in the blob store");
        }
    };

    std::string prev;
    std::string out;
    const std::string header = seal(header_payload(session), "");
    if (lines.empty()) {
        out += header + "\n";
    } else if (lines.front() != header) {
        throw Error(ErrorCode::precondition, "session " + session.id + " header differs from the persisted log");
    }
    prev = json::parse(header)["hash"].get<std::string>();

    for (std::size_t i = 0; i < session.rounds.size(); ++i) {
        const Round& round = session.rounds[i];
        json payload = round_payload(round);
        payload["type"] = "round";
        const std::string line = seal(payload, prev);
        prev = json::parse(line)["hash"].get<std::string>();
        if (i + 1 < lines.size()) {
            if (lines[i + 1] != line) {
                throw Error(ErrorCode::precondition,
                            "round " + std::to_string(i) + " of session " + session.id + " is already persisted");
            }
            continue;
        }
        if (round.input_code && !round.input_code->empty()) put_blob(round.input_code->source(), MediaType::html);
        if (!round.output_code.empty()) put_blob(round.output_code.source(), MediaType::html);
        if (round.input_render) check_render(*round.input_render);
        check_render(round.output_render);
        out += line + "\n";
    }
    if (lines.size() > session.rounds.size() + 1) {
        throw Error(ErrorCode::precondition, "session " + session.id + " has more persisted rounds than supplied");
    }
    if (out.empty()) return;

    std::ofstream file(path, std::ios::binary | std::ios::app);
    if (!file) throw Error(ErrorCode::io_error, "cannot open " + path.string());
    file << out;
    file.flush();
    if (!file) throw Error(ErrorCode::io_error, "append to " + path.string() + " failed");
}

Session Store::load_session(std::string_view id) const {
    if (!has_session(id)) throw Error(ErrorCode::unknown_id, "unknown session '" + std::string(id) + "'");
    auto content = read_file(session_path(id));
    if (!content) throw Error(ErrorCode::io_error, "cannot read session " + std::string(id));

    auto corrupt = [&](std::size_t line_no, const std::string& what) {
        return Error(ErrorCode::corrupt_log,
                     "session " + std::string(id) + " line " + std::to_string(line_no + 1) + ": " + what);
    };

    Session session;
    std::istringstream in(*content);
    std::string prev;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line); ++line_no) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw corrupt(line_no, "not valid JSON");
        }
        if (!j.is_object() || !j.contains("hash") || !j["hash"].is_string()) throw corrupt(line_no, "missing hash");
        const std::string stated = j["hash"].get<std::string>();
        j.erase("hash");
        if (sha256_hex(dump(j)) != stated) throw corrupt(line_no, "hash mismatch");
        if (j.value("prev", std::string{"?"}) != prev) throw corrupt(line_no, "broken chain");
        prev = stated;

        try {
            const std::string type = j.at("type").get<std::string>();
            if (line_no == 0) {
                if (type != "session") throw corrupt(line_no, "first line is not a session header");
                session.id = j.at("id").get<std::string>();
                session.target = j.at("target").get<ImageRef>();
                session.policy = advance_policy_from_string(j.at("policy").get<std::string>());
                session.created_at = j.at("created_at").get<std::string>();
                continue;
            }
            if (type != "round") throw corrupt(line_no, "unexpected event type " + type);
            Round round;
            round.index = j.at("index").get<std::uint32_t>();
            round.kind = round_kind_from_string(j.at("kind").get<std::string>());
            if (!j.at("input_code").is_null()) round.input_code = load_html(j["input_code"].get<std::string>());
            if (!j.at("input_render").is_null()) round.input_render = j["input_render"].get<RenderResult>();
            if (!j.at("instruction").is_null()) round.instruction = j["instruction"].get<std::string>();
            round.output_code = load_html(j.at("output_code").get<std::string>());
            round.output_render = j.at("output_render").get<RenderResult>();
            round.verdicts = j.at("verdicts").get<std::vector<JudgeVerdict>>();
            round.accepted = j.at("accepted").get<bool>();
            for (const RenderResult* r : {round.input_render ? &*round.input_render : nullptr, &round.output_render}) {
                if (r && r->ok() && !has_blob(r->image().hash)) throw corrupt(line_no, "unresolved image blob");
            }
            session.rounds.push_back(std::move(round));
        } catch (const json::exception& e) {
            throw corrupt(line_no, e.what());
        } catch (const Error& e) {
            if (e.code() == ErrorCode::corrupt_log) throw;
            throw corrupt(line_no, e.what());
        }
    }
    if (session.id.empty()) throw Error(ErrorCode::corrupt_log, "session " + std::string(id) + " has no header");
    if (session.id != id) throw Error(ErrorCode::corrupt_log, "session header id mismatch");
    return session;
}

std::optional<JudgeVerdict> Store::cache_lookup(const CacheKey& key) const {
    auto bytes = read_file(root_ / "cache" / (key.digest() + ".json"));
    if (!bytes) return std::nullopt;
    try {
        return json::parse(*bytes).at("verdict").get<JudgeVerdict>();
    } catch (const json::exception&) {
        return std::nullopt;  // a damaged entry is just a miss
    }
}

void Store::cache_put(const CacheKey& key, const JudgeVerdict& verdict) {
    json j = {{"key",
               {{"template_id", key.template_id},
                {"template_version", key.template_version},
                {"images", key.image_hashes},
                {"judge_model", key.judge_model}}},
              {"verdict", verdict}};
    write_atomic(root_ / "cache" / (key.digest() + ".json"), dump(j));
}

std::size_t Store::prune() {
    static const std::regex kDigest("[0-9a-f]{64}");
    std::set<std::string> live;
    std::error_code ec;
    for (const char* sub : {"sessions", "cache"}) {
        for (const auto& entry : fs::directory_iterator(root_ / sub, ec)) {
            auto text = read_file(entry.path());
            if (!text) continue;
            for (std::sregex_iterator it(text->begin(), text->end(), kDigest), end; it != end; ++it) {
                live.insert(it->str());
            }
        }
    }
    std::size_t removed = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root_ / "blobs", ec)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (is_hex_digest(name) && !live.count(name)) {
            fs::remove(entry.path(), ec);
            if (!ec) ++removed;
        }
    }
    return removed;
}

}  // namespace uicoder
