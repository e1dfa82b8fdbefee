#pragma once

// 8-bit PNG (RGB and palette-indexed) and little-endian PFM encoding.
// Encoders are deterministic: identical input yields identical bytes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace layerav {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb8&) const = default;
};

struct DecodedImage {
    int width = 0;
    int height = 0;
    int channels = 0;                 // 3 for RGB, 1 for indexed
    std::vector<float> values;        // RGB in [0,1] (channels == 3)
    std::vector<std::uint8_t> indices;  // palette indices (channels == 1)
    std::vector<Rgb8> palette;
};

std::uint8_t quantize_unit(float v);

std::vector<std::uint8_t> encode_png_rgb(int width, int height, std::span<const float> rgb);
std::vector<std::uint8_t> encode_png_indexed(int width, int height, std::span<const std::uint8_t> indices,
                                             std::span<const Rgb8> palette);
/// Decodes RGB/RGBA/gray PNGs to float RGB and palette PNGs to indices plus palette.
DecodedImage decode_png(std::span<const std::uint8_t> bytes);

/// Grayscale PFM ("Pf"), little-endian, rows stored bottom-to-top.
std::vector<std::uint8_t> encode_pfm(int width, int height, std::span<const float> values);
DecodedImage decode_pfm(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace layerav
