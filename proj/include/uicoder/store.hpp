#pragma once

// Content-addressed blob store, session event logs and the judge-call cache.
//
// On-disk layout under the root directory:
//   blobs/<first2>/<sha256>       raw bytes
//   sessions/<id>.jsonl           one header line, then one line per round
//   cache/<keyhash>.json          cached JudgeVerdict with its key
//
// Every session line carries `prev` (hash of the previous line) and `hash`
// (sha256 over prev + payload), so any edited byte is detected on load.

#include "uicoder/records.hpp"
#include "uicoder/types.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace uicoder {

struct BlobRef {
    std::string hash;
    MediaType media_type = MediaType::text;
    std::size_t size_bytes = 0;

    bool operator==(const BlobRef&) const = default;
};

struct CacheKey {
    std::string template_id;
    int template_version = 0;
    std::vector<std::string> image_hashes;  // order-sensitive
    std::string judge_model;

    std::string digest() const;
};

class Store {
public:
    explicit Store(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }

    BlobRef put_blob(std::string_view bytes, MediaType media_type);
    std::optional<std::string> get_blob(std::string_view hash) const;
    bool has_blob(std::string_view hash) const;
    // Best-effort media type from content (png/jpeg magic, markup, json).
    std::optional<MediaType> sniff_blob(std::string_view hash) const;

    // Stores an uploaded image; throws invalid_argument when the bytes are
    // not a PNG/JPEG.
    ImageRef put_image(std::string_view bytes);
    HtmlDocument put_html(std::string source);
    HtmlDocument load_html(std::string_view hash) const;

    // Appends rounds not yet persisted. Already-persisted rounds must be
    // unchanged; sessions are append-only.
    void save_session(const Session& session);
    Session load_session(std::string_view id) const;
    bool has_session(std::string_view id) const;
    std::vector<std::string> list_sessions() const;

    std::optional<JudgeVerdict> cache_lookup(const CacheKey& key) const;
    void cache_put(const CacheKey& key, const JudgeVerdict& verdict);

    // Removes blobs not referenced by any persisted session or cache entry.
    std::size_t prune();

private:
    std::filesystem::path blob_path(std::string_view hash) const;
    std::filesystem::path session_path(std::string_view id) const;
    std::mutex& session_mutex(const std::string& id);

    std::filesystem::path root_;
    std::mutex registry_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> session_mutexes_;
};

}  // namespace uicoder
