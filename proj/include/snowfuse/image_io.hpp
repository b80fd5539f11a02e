#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "snowfuse/tensor.hpp"

namespace snowfuse {

/// Malformed input. `offset` is a byte offset for binary formats and a
/// 1-based line number for text formats (see `location`).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset, const char* unit = "byte offset");
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// H x W map of 0/1 flags.
struct BinaryMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;

    BinaryMap() = default;
    BinaryMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w, fill) {}

    std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    std::size_t count() const;
};

struct ImageSize {
    std::size_t width = 0;
    std::size_t height = 0;
};

/// Decodes binary PPM (P6) or PGM (P5) into a 3 x H x W tensor in [0, 1].
/// Grayscale is replicated to three channels.
Tensor decode_pnm(std::span<const std::uint8_t> bytes);
Tensor load_image(const std::filesystem::path& path);
ImageSize read_image_size(const std::filesystem::path& path);

/// 8-bit encode with round(clamp(v, 0, 1) * 255). Accepts 3 x H x W (P6),
/// 1 x H x W or H x W (P5).
std::vector<std::uint8_t> encode_pnm(const Tensor& image);
void save_image(const Tensor& image, const std::filesystem::path& path);
/// P5 with 0 -> 0 and 1 -> 255.
void save_binary_map(const BinaryMap& map, const std::filesystem::path& path);
/// Reads a P5/P6 file and thresholds channel 0 at 0.5.
BinaryMap load_binary_map(const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);
/// Image files directly inside `dir`, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace snowfuse
