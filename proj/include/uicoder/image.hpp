#pragma once

#include "uicoder/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace uicoder::image {

struct ImageInfo {
    MediaType format = MediaType::png;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
};

// Reads the container header only. nullopt when the bytes are neither a
// well-formed PNG nor a baseline/progressive JPEG.
std::optional<ImageInfo> sniff(std::string_view bytes);

struct Rgba {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, 4 bytes per pixel
};

std::optional<Rgba> decode_png(std::string_view bytes);
std::string encode_png(const Rgba& image);

// Solid-color helper used by fixtures and mocks.
Rgba solid(std::uint32_t width, std::uint32_t height, std::uint8_t r, std::uint8_t g, std::uint8_t b);

// 1.0 for pixel-identical images; falls toward 0 with mean absolute channel
// difference. Pixels outside the overlap of two differently sized images
// count as maximally different.
double similarity(const Rgba& a, const Rgba& b);

}  // namespace uicoder::image
