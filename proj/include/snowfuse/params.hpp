#pragma once

#include <unordered_map>
#include <vector>

#include "snowfuse/ops.hpp"

namespace snowfuse {

/// Lazily registers model tensors as tape leaves, once per tensor, and hands
/// back their gradients after backward.
class ParamBinder {
public:
    explicit ParamBinder(Tape& tape) : tape_(&tape) {}

    Tape& tape() const { return *tape_; }
    Var bind(const Tensor& t);
    /// Zeros when `t` was never bound or received no gradient.
    Tensor grad(const Tensor& t) const;
    std::vector<Tensor> grads(const std::vector<Tensor*>& params) const;

private:
    Tape* tape_;
    std::unordered_map<const Tensor*, Var> vars_;
};

Var conv2d(ParamBinder& binder, Var input, const ConvLayer& layer);

/// Adam with bias correction. Moment buffers follow `params` by position.
class Adam {
public:
    Adam(std::vector<Tensor*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(const std::vector<Tensor>& grads);
    std::size_t steps() const { return t_; }

private:
    std::vector<Tensor*> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

/// Uniform(-bound, bound) weights with bound = gain / sqrt(Cin * K * K); zero
/// bias when `bias` is set.
class Rng;
ConvLayer make_conv(Rng& rng, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, bool bias,
                    double gain = 1.0);

}  // namespace snowfuse
