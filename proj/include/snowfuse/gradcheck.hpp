#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "snowfuse/tape.hpp"
#include "snowfuse/tensor.hpp"

namespace snowfuse {

/// Builds a scalar on `tape` from leaves holding the parameters.
using ScalarFn = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
    double epsilon = 1e-5;
    /// A coordinate is skipped when moving it by kink_band * epsilon could
    /// push some non-smooth element across its kink.
    double kink_band = 10.0;
    /// 0 checks every coordinate; otherwise a seeded sample per parameter.
    std::size_t max_coords_per_param = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

/// Central differences (f(p+eps) - f(p-eps)) / 2 eps against the tape
/// gradient. Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
/// Throws std::domain_error if f is non-finite at any probe.
GradCheckResult finite_diff_check(const ScalarFn& f, std::vector<Tensor> params, const GradCheckOptions& options = {});

}  // namespace snowfuse
