#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace snowfuse {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned storage. Vectorized kernels pick their summation order
/// from the buffer alignment, so a fixed alignment keeps results reproducible
/// regardless of where the allocator places a tensor.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using TensorStorage = std::vector<double, AlignedAllocator<double>>;

/// Raised whenever operand shapes disagree. There is no broadcasting anywhere
/// in the engine, so every mismatch ends up here.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Feature maps use N x C x H x W.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Rank-4 accessors (N, C, H, W).
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    double item() const;
    void fill(double value);
    bool all_finite() const;

    /// Same data, different shape. Element counts must agree.
    Tensor reshaped(Shape shape) const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    TensorStorage data_;
};

/// Throws ShapeError unless `t` is rank 4.
void require_nchw(const Tensor& t, const char* what);

}  // namespace snowfuse
