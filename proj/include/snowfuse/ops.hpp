#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "snowfuse/tape.hpp"
#include "snowfuse/tensor.hpp"

namespace snowfuse {

/// Square-kernel convolution parameters. Weights are Cout x Cin x K x K with K odd.
struct ConvLayer {
    Tensor weight;
    std::optional<Tensor> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t kernel() const { return weight.dim(2); }
    std::size_t param_count() const { return weight.size() + (bias ? bias->size() : 0); }
};

/// floor((size + 2 * padding - kernel) / stride) + 1
std::size_t conv_output_size(std::size_t size, std::size_t kernel, std::size_t stride, std::size_t padding);

Var conv2d(Var input, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t padding);

/// Registers the layer's tensors as leaves of `tape` and convolves. The
/// returned leaves give access to parameter gradients after backward.
struct ConvLeaves {
    Var weight;
    std::optional<Var> bias;
};
ConvLeaves register_conv(Tape& tape, const ConvLayer& layer);
Var conv2d(Var input, const ConvLeaves& leaves, const ConvLayer& layer);

enum class ResizeMode { Up, Down };

/// Nearest-neighbour upsampling or non-overlapping average pooling by an
/// integer factor per axis.
Var resize(Var input, std::size_t target_h, std::size_t target_w, ResizeMode mode);
/// Picks Up/Down from the sizes; identity when they already match.
Var resize_to(Var input, std::size_t target_h, std::size_t target_w);

struct RunningStats {
    Tensor mean;
    Tensor var;
    double momentum = 0.1;

    explicit RunningStats(std::size_t channels) : mean({channels}, 0.0), var({channels}, 1.0) {}
};

enum class NormMode { Training, Inference };

/// Per-channel normalisation over N x H x W. In training mode batch statistics
/// are used and `stats` (if given) is updated; inference mode reads `stats`.
Var batchnorm(Var input, Var gamma, Var beta, double eps, NormMode mode = NormMode::Training,
              RunningStats* stats = nullptr);

Var prelu(Var input, Var slope);

Var add(Var a, Var b);

Var concat_channels(std::span<const Var> parts);
std::vector<Var> split_channels(Var input, std::span<const std::size_t> sizes);

/// N x C x H x W -> N x 1 x H x W. Ties resolve to the lowest channel index.
Var max_over_channels(Var input);

/// Elementwise map with derivative. `kink` (optional) returns the distance of
/// x from the nearest non-differentiable point, for the gradient checker.
struct ElementwiseFn {
    const char* name;
    std::function<double(double)> f;
    std::function<double(double)> df;
    std::function<double(double)> kink_distance;
};
Var elementwise(Var input, const ElementwiseFn& fn);

// Reductions and scalar helpers. Scalars have shape {1}.
Var sum(Var input);
Var mean(Var input);
Var abs_sum(Var input);
/// scale * x + shift, elementwise.
Var affine(Var input, double scale, double shift);
/// sum_i weights[i] * x[i]; used to build scalar probes in tests.
Var dot(Var input, const Tensor& weights);
/// mean((x - target)^2)
Var mse(Var input, const Tensor& target);

/// p <- p - lr * (g + weight_decay * p)
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr, double weight_decay);

}  // namespace snowfuse
