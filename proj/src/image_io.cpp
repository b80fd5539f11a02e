#include "snowfuse/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace snowfuse {

ParseError::ParseError(const std::string& what, std::size_t offset, const char* unit)
    : std::runtime_error(what + " (" + unit + " " + std::to_string(offset) + ")"), offset_(offset) {}

std::size_t BinaryMap::count() const {
    return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

struct PnmHeader {
    char kind;  // '5' or '6'
    std::size_t width, height, maxval;
    std::size_t data_offset;
};

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t v = 0;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 1'000'000'000) throw ParseError(std::string("PNM ") + what + " is too large", start);
            ++pos_;
        }
        if (pos_ == start) throw ParseError(std::string("PNM header: expected ") + what, start);
        return v;
    }

    std::size_t pos() const { return pos_; }
    void advance() { ++pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

PnmHeader parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw ParseError("not a binary PPM/PGM file (expected magic P5 or P6)", 0);
    }
    HeaderReader r(bytes.subspan(0));
    r.advance();
    r.advance();
    PnmHeader h{static_cast<char>(bytes[1]), 0, 0, 0, 0};
    h.width = r.number("width");
    h.height = r.number("height");
    const std::size_t maxval_at = r.pos();
    h.maxval = r.number("maxval");
    if (h.width == 0 || h.height == 0) throw ParseError("PNM image has zero width or height", maxval_at);
    if (h.maxval == 0 || h.maxval > 65535) throw ParseError("PNM maxval must be in 1..65535", maxval_at);
    if (r.pos() >= bytes.size() || !is_space(bytes[r.pos()])) {
        throw ParseError("PNM header must end with a single whitespace byte", r.pos());
    }
    h.data_offset = r.pos() + 1;
    return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::uint8_t quantize(double v) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
    const PnmHeader h = parse_header(bytes);
    const std::size_t channels = h.kind == '6' ? 3 : 1;
    const std::size_t sample_bytes = h.maxval > 255 ? 2 : 1;
    const std::size_t need = h.width * h.height * channels * sample_bytes;
    if (bytes.size() - h.data_offset < need) {
        throw ParseError("PNM pixel data truncated: need " + std::to_string(need) + " bytes", bytes.size());
    }
    Tensor out({3, h.height, h.width});
    const double scale = 1.0 / static_cast<double>(h.maxval);
    const std::size_t plane = h.width * h.height;
    const std::uint8_t* p = bytes.data() + h.data_offset;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
            std::size_t v = *p++;
            if (sample_bytes == 2) v = (v << 8) | *p++;
            if (v > h.maxval) {
                throw ParseError("PNM sample exceeds maxval", static_cast<std::size_t>(p - bytes.data()) - sample_bytes);
            }
            out[c * plane + i] = static_cast<double>(v) * scale;
        }
        if (channels == 1) out[plane + i] = out[2 * plane + i] = out[i];
    }
    return out;
}

Tensor load_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_pnm(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), e.offset());
    }
}

ImageSize read_image_size(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> head(512);
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    const PnmHeader h = parse_header(head);
    return {h.width, h.height};
}

std::vector<std::uint8_t> encode_pnm(const Tensor& image) {
    std::size_t channels = 0, height = 0, width = 0;
    if (image.rank() == 2) {
        channels = 1, height = image.dim(0), width = image.dim(1);
    } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
        channels = image.dim(0), height = image.dim(1), width = image.dim(2);
    } else {
        throw ShapeError("save_image expects 3xHxW, 1xHxW or HxW, got " + shape_to_string(image.shape()));
    }
    const std::string header =
        std::string(channels == 3 ? "P6" : "P5") + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    const std::size_t plane = width * height;
    bytes.reserve(bytes.size() + plane * channels);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < channels; ++c) bytes.push_back(quantize(image[c * plane + i]));
    return bytes;
}

void save_image(const Tensor& image, const std::filesystem::path& path) { write_file(path, encode_pnm(image)); }

void save_binary_map(const BinaryMap& map, const std::filesystem::path& path) {
    Tensor t({map.height, map.width});
    for (std::size_t i = 0; i < map.pixels.size(); ++i) t[i] = map.pixels[i] ? 1.0 : 0.0;
    save_image(t, path);
}

BinaryMap load_binary_map(const std::filesystem::path& path) {
    const Tensor t = load_image(path);
    BinaryMap map(t.dim(1), t.dim(2));
    for (std::size_t i = 0; i < map.pixels.size(); ++i) map.pixels[i] = t[i] >= 0.5 ? 1 : 0;
    return map;
}

bool is_image_file(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
    std::vector<std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
    return out;
}

}  // namespace snowfuse
