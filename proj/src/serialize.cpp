#include "snowfuse/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace snowfuse {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'N', 'F', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(b.data(), 8);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError(std::string("truncated tensor file: ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in) {
    std::array<unsigned char, 8> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("truncated tensor file: payload");
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[static_cast<std::size_t>(i)];
    return std::bit_cast<double>(bits);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kMagic.data(), 4);
    put_u32(out, kTensorFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_f64(out, v);
    if (!out) throw std::runtime_error("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != kMagic) throw FormatError("not a tensor file (bad magic)");
    const std::uint32_t version = get_u32(in, "version");
    if (version != kTensorFormatVersion) throw FormatError("unsupported tensor file version " + std::to_string(version));
    const std::uint32_t rank = get_u32(in, "rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
        d = get_u32(in, "dims");
        if (d == 0) throw FormatError("tensor file has a zero dimension");
    }
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = get_f64(in);
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_tensor(in);
}

}  // namespace snowfuse
