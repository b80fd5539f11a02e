#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "snowfuse/tensor.hpp"

namespace snowfuse {

class Tape;

/// Handle to a tensor owned by a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode record of a single computation.
///
/// Records are appended in creation order and an output is always created
/// after its inputs, so walking the records backwards is a valid topological
/// order for gradient propagation. A tape is not shared between threads.
class Tape {
public:
    /// Receives the finished output gradient and accumulates into input grads
    /// through `Tape::grad_slot`.
    using BackwardFn = std::function<void(Tape& tape, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value);
    Var record(std::string op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

    const Tensor& value(std::size_t id) const;
    const std::string& op(std::size_t id) const;
    const std::vector<std::size_t>& inputs(std::size_t id) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient buffer for `id`, zero-initialised on first access.
    Tensor& grad_slot(std::size_t id);
    /// Accumulated gradient; zeros when nothing reached `id`.
    Tensor grad(std::size_t id) const;
    Tensor grad(Var v) const { return grad(v.id); }
    bool has_grad(std::size_t id) const;

    /// Seeds d(output)/d(output) = 1 (output must hold a single element) and
    /// walks every record in reverse creation order. Returns the number of
    /// records visited.
    std::size_t backward(Var output);

    /// Non-smooth ops report how far each of their inputs sits from the
    /// nearest kink. Only collected when enabled (the gradient checker uses it).
    void enable_kink_tracking(bool on) { track_kinks_ = on; }
    bool tracking_kinks() const noexcept { return track_kinks_; }
    void note_kink_distance(double distance) { kink_distances_.push_back(distance); }
    const std::vector<double>& kink_distances() const noexcept { return kink_distances_; }

private:
    struct Node {
        std::string op;
        std::vector<std::size_t> inputs;
        Tensor value;
        std::optional<Tensor> grad;
        BackwardFn backward;
    };

    const Node& node(std::size_t id) const;

    // deque keeps references to earlier values stable while recording
    std::deque<Node> nodes_;
    bool track_kinks_ = false;
    std::vector<double> kink_distances_;
};

}  // namespace snowfuse
