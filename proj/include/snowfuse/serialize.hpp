#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "snowfuse/tensor.hpp"

namespace snowfuse {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Binary tensor file, all integers little-endian:
//   "SNFT" | u32 version | u32 rank | u32 dims[rank] | f64 payload[prod(dims)]
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace snowfuse
