#include "snowfuse/params.hpp"

#include <cmath>
#include <stdexcept>

#include "snowfuse/rng.hpp"

namespace snowfuse {

Var ParamBinder::bind(const Tensor& t) {
    const auto it = vars_.find(&t);
    if (it != vars_.end()) return it->second;
    const Var v = tape_->leaf(t);
    vars_.emplace(&t, v);
    return v;
}

Tensor ParamBinder::grad(const Tensor& t) const {
    const auto it = vars_.find(&t);
    if (it == vars_.end()) return Tensor(t.shape(), 0.0);
    return tape_->grad(it->second);
}

std::vector<Tensor> ParamBinder::grads(const std::vector<Tensor*>& params) const {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const Tensor* p : params) out.push_back(grad(*p));
    return out;
}

Var conv2d(ParamBinder& binder, Var input, const ConvLayer& layer) {
    std::optional<Var> bias;
    if (layer.bias) bias = binder.bind(*layer.bias);
    return conv2d(input, binder.bind(layer.weight), bias, layer.stride, layer.padding);
}

Adam::Adam(std::vector<Tensor*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr < 0.0) throw std::invalid_argument("Adam: learning rate must be non-negative");
    for (const Tensor* p : params_) {
        m_.emplace_back(p->shape(), 0.0);
        v_.emplace_back(p->shape(), 0.0);
    }
}

void Adam::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size())
        throw std::invalid_argument("Adam: got " + std::to_string(grads.size()) + " gradients for " +
                                    std::to_string(params_.size()) + " parameters");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        if (grads[i].shape() != p.shape()) throw ShapeError("Adam: gradient shape mismatch for parameter " + std::to_string(i));
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = grads[i][j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
            p[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
        }
    }
}

ConvLayer make_conv(Rng& rng, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, bool bias,
                    double gain) {
    ConvLayer layer;
    layer.weight = Tensor({out_channels, in_channels, kernel, kernel});
    const double bound = gain / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
    for (double& v : layer.weight.data()) v = rng.uniform(-bound, bound);
    if (bias) layer.bias = Tensor({out_channels}, 0.0);
    layer.stride = 1;
    layer.padding = kernel / 2;
    return layer;
}

}  // namespace snowfuse
