#include "uicoder/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>

namespace uicoder::image {

namespace {

std::uint32_t read_be32(const unsigned char* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

std::optional<ImageInfo> sniff_png(std::string_view bytes) {
    static constexpr unsigned char kSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 33 || std::memcmp(bytes.data(), kSig, 8) != 0) return std::nullopt;
    auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (read_be32(p + 8) != 13 || std::memcmp(p + 12, "IHDR", 4) != 0) return std::nullopt;
    ImageInfo info{MediaType::png, read_be32(p + 16), read_be32(p + 20)};
    if (info.width == 0 || info.height == 0) return std::nullopt;
    return info;
}

std::optional<ImageInfo> sniff_jpeg(std::string_view bytes) {
    auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    if (n < 4 || p[0] != 0xff || p[1] != 0xd8) return std::nullopt;
    std::size_t i = 2;
    while (i + 4 <= n) {
        if (p[i] != 0xff) return std::nullopt;
        const unsigned char marker = p[i + 1];
        if (marker == 0xff) {
            ++i;
            continue;
        }
        if (marker == 0xd8 || (marker >= 0xd0 && marker <= 0xd7) || marker == 0x01) {
            i += 2;
            continue;
        }
        const std::size_t length = (std::size_t{p[i + 2]} << 8) | p[i + 3];
        if (length < 2 || i + 2 + length > n) return std::nullopt;
        // SOF0..SOF15 except DHT (c4), JPG (c8), DAC (cc)
        if (marker >= 0xc0 && marker <= 0xcf && marker != 0xc4 && marker != 0xc8 && marker != 0xcc) {
            if (length < 7) return std::nullopt;
            ImageInfo info{MediaType::jpeg, (std::uint32_t{p[i + 7]} << 8) | p[i + 8],
                           (std::uint32_t{p[i + 5]} << 8) | p[i + 6]};
            if (info.width == 0 || info.height == 0) return std::nullopt;
            return info;
        }
        i += 2 + length;
    }
    return std::nullopt;
}

}  // namespace

std::optional<ImageInfo> sniff(std::string_view bytes) {
    if (auto png = sniff_png(bytes)) return png;
    return sniff_jpeg(bytes);
}

std::optional<Rgba> decode_png(std::string_view bytes) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) return std::nullopt;
    img.format = PNG_FORMAT_RGBA;
    Rgba out;
    out.width = img.width;
    out.height = img.height;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        return std::nullopt;
    }
    return out;
}

std::string encode_png(const Rgba& image) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = image.width;
    img.height = image.height;
    img.format = PNG_FORMAT_RGBA;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(img, size, 0, image.pixels.data(), 0, nullptr)) return {};
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) return {};
    out.resize(size);
    return out;
}

Rgba solid(std::uint32_t width, std::uint32_t height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    Rgba out{width, height, {}};
    out.pixels.resize(std::size_t{width} * height * 4);
    for (std::size_t i = 0; i < out.pixels.size(); i += 4) {
        out.pixels[i] = r;
        out.pixels[i + 1] = g;
        out.pixels[i + 2] = b;
        out.pixels[i + 3] = 255;
    }
    return out;
}

double similarity(const Rgba& a, const Rgba& b) {
    const std::uint64_t union_w = std::max(a.width, b.width);
    const std::uint64_t union_h = std::max(a.height, b.height);
    if (union_w == 0 || union_h == 0) return 0.0;
    const std::uint32_t w = std::min(a.width, b.width);
    const std::uint32_t h = std::min(a.height, b.height);
    double diff = 0.0;
    for (std::uint32_t y = 0; y < h; ++y) {
        const std::uint8_t* ra = a.pixels.data() + std::size_t{y} * a.width * 4;
        const std::uint8_t* rb = b.pixels.data() + std::size_t{y} * b.width * 4;
        for (std::uint32_t x = 0; x < w * 4; ++x) {
            if (x % 4 == 3) continue;
            diff += std::abs(int{ra[x]} - int{rb[x]}) / 255.0;
        }
    }
    const double overlap = double(w) * h;
    const double total = double(union_w) * union_h;
    const double mean = (diff / 3.0 + (total - overlap)) / total;
    return std::clamp(1.0 - mean, 0.0, 1.0);
}

}  // namespace uicoder::image
