#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "snowfuse/image_io.hpp"
#include "snowfuse/rng.hpp"
#include "snowfuse/tensor.hpp"

namespace snowfuse {

/// Synthetic scene: bright snow blobs over a dark, noisy texture.
struct SnowScene {
    Tensor image;  // 3 x H x W in [0, 1]
    BinaryMap mask;
};

/// Adds random discs until at least `coverage` of the pixels are snow.
/// coverage = 0 yields a clean scene.
SnowScene make_snow_scene(Rng& rng, std::size_t height, std::size_t width, double coverage);

/// `count` scenes with coverage drawn uniformly from [cov_lo, cov_hi].
std::vector<SnowScene> make_snow_set(std::uint64_t seed, std::size_t count, std::size_t height, std::size_t width,
                                     double cov_lo, double cov_hi);

std::vector<Tensor> images_of(const std::vector<SnowScene>& scenes);

}  // namespace snowfuse
