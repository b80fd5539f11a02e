#include "snowfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace snowfuse {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    validate_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_to_string(shape_));
    }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
    }
    return shape_[axis];
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_to_string(shape_));
    return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

void require_nchw(const Tensor& t, const char* what) {
    if (t.rank() != 4) {
        throw ShapeError(std::string(what) + ": expected N x C x H x W, got " + shape_to_string(t.shape()));
    }
}

}  // namespace snowfuse
