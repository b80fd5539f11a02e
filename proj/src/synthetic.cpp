#include "snowfuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace snowfuse {

SnowScene make_snow_scene(Rng& rng, std::size_t height, std::size_t width, double coverage) {
    if (height == 0 || width == 0) throw std::invalid_argument("scene size must be positive");
    if (coverage < 0.0 || coverage > 1.0) throw std::invalid_argument("coverage must lie in [0, 1]");

    SnowScene scene{Tensor({3, height, width}), BinaryMap(height, width)};
    const std::size_t plane = height * width;

    double base[3];
    for (double& b : base) b = rng.uniform(0.0, 0.25);
    // coarse texture: a few sinusoidal ripples plus pixel noise
    const double fx = rng.uniform(0.1, 0.6), fy = rng.uniform(0.1, 0.6), phase = rng.uniform(0.0, 6.28);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double ripple = 0.06 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
            for (std::size_t c = 0; c < 3; ++c) {
                scene.image[c * plane + y * width + x] = std::clamp(base[c] + ripple + rng.uniform(-0.05, 0.05), 0.0, 1.0);
            }
        }
    }

    const std::size_t target = static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(plane)));
    const double min_dim = static_cast<double>(std::min(height, width));
    std::size_t covered = 0;
    while (covered < target) {
        const double cy = rng.uniform(0.0, static_cast<double>(height));
        const double cx = rng.uniform(0.0, static_cast<double>(width));
        const double r = rng.uniform(0.08, 0.25) * min_dim;
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
                if (dy * dy + dx * dx <= r * r && !scene.mask.at(y, x)) {
                    scene.mask.at(y, x) = 1;
                    ++covered;
                }
            }
        }
    }
    for (std::size_t i = 0; i < plane; ++i) {
        if (!scene.mask.pixels[i]) continue;
        const double v = rng.uniform(0.88, 1.0);
        scene.image[i] = v * 0.97;
        scene.image[plane + i] = v * 0.98;
        scene.image[2 * plane + i] = v;
    }
    return scene;
}

std::vector<SnowScene> make_snow_set(std::uint64_t seed, std::size_t count, std::size_t height, std::size_t width,
                                     double cov_lo, double cov_hi) {
    Rng rng(seed);
    std::vector<SnowScene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_snow_scene(rng, height, width, rng.uniform(cov_lo, cov_hi)));
    return out;
}

std::vector<Tensor> images_of(const std::vector<SnowScene>& scenes) {
    std::vector<Tensor> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(s.image);
    return out;
}

}  // namespace snowfuse
