#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace uicoder {

enum class MediaType { png, jpeg, html, json, text };

std::string_view to_string(MediaType type);
MediaType media_type_from_string(std::string_view name);
std::string_view mime_type(MediaType type);

// Handle to image bytes held in the blob store.
struct ImageRef {
    std::string hash;
    std::uint32_t width = 0;
    std::uint32_t height = 0;

    bool operator==(const ImageRef&) const = default;
};

// Markup source plus its content hash. The hash always tracks `source`.
class HtmlDocument {
public:
    HtmlDocument() = default;
    explicit HtmlDocument(std::string source);

    const std::string& source() const noexcept { return source_; }
    const std::string& hash() const noexcept { return hash_; }
    bool empty() const noexcept { return source_.empty(); }

    bool operator==(const HtmlDocument& other) const { return hash_ == other.hash_; }

private:
    std::string source_;
    std::string hash_;
};

}  // namespace uicoder
