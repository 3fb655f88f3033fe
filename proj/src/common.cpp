#include "uicoder/error.hpp"
#include "uicoder/hashing.hpp"
#include "uicoder/types.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>

namespace uicoder {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::precondition: return "precondition";
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::unknown_id: return "unknown-id";
        case ErrorCode::unknown_version: return "unknown-version";
        case ErrorCode::missing_slot: return "missing-slot";
        case ErrorCode::image_arity_mismatch: return "image-arity-mismatch";
        case ErrorCode::malformed_tags: return "malformed-tags";
        case ErrorCode::no_boxed_content: return "no-boxed-content";
        case ErrorCode::unbalanced_braces: return "unbalanced-braces";
        case ErrorCode::parse_error: return "parse-error";
        case ErrorCode::auth_failure: return "auth-failure";
        case ErrorCode::rate_limited: return "rate-limited";
        case ErrorCode::timeout: return "timeout";
        case ErrorCode::transport: return "transport";
        case ErrorCode::malformed_provider_response: return "malformed-provider-response";
        case ErrorCode::extraction_failed: return "extraction-failed";
        case ErrorCode::corrupt_log: return "corrupt-log";
        case ErrorCode::io_error: return "io-error";
        case ErrorCode::pool_exhausted: return "pool-exhausted";
        case ErrorCode::protocol_error: return "protocol-error";
        case ErrorCode::config_error: return "config-error";
        case ErrorCode::conflict: return "conflict";
    }
    return "unknown";
}

std::string_view to_string(MediaType type) {
    switch (type) {
        case MediaType::png: return "png";
        case MediaType::jpeg: return "jpeg";
        case MediaType::html: return "html";
        case MediaType::json: return "json";
        case MediaType::text: return "text";
    }
    return "text";
}

MediaType media_type_from_string(std::string_view name) {
    if (name == "png") return MediaType::png;
    if (name == "jpeg" || name == "jpg") return MediaType::jpeg;
    if (name == "html") return MediaType::html;
    if (name == "json") return MediaType::json;
    if (name == "text") return MediaType::text;
    throw Error(ErrorCode::invalid_argument, "unknown media type '" + std::string(name) + "'");
}

std::string_view mime_type(MediaType type) {
    switch (type) {
        case MediaType::png: return "image/png";
        case MediaType::jpeg: return "image/jpeg";
        case MediaType::html: return "text/html; charset=utf-8";
        case MediaType::json: return "application/json";
        case MediaType::text: return "text/plain; charset=utf-8";
    }
    return "application/octet-stream";
}

HtmlDocument::HtmlDocument(std::string source)
    : source_(std::move(source)), hash_(sha256_hex(source_)) {}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest.data(), &length) != 1) {
        throw Error(ErrorCode::io_error, "sha256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
}

}  // namespace uicoder
