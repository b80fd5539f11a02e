#include "snowfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "snowfuse/rng.hpp"

namespace snowfuse {

namespace {

struct Probe {
    double value;
    std::vector<double> kinks;
};

Probe evaluate(const ScalarFn& f, const std::vector<Tensor>& params) {
    Tape tape;
    tape.enable_kink_tracking(true);
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    const Var out = f(tape, leaves);
    const double v = out.value().item();
    if (!std::isfinite(v)) throw std::domain_error("finite_diff_check: objective is not finite");
    return Probe{v, tape.kink_distances()};
}

bool near_kink(const Probe& base, const Probe& plus, const Probe& minus, double band) {
    if (plus.kinks.size() != base.kinks.size() || minus.kinks.size() != base.kinks.size()) return true;
    for (std::size_t k = 0; k < base.kinks.size(); ++k) {
        const double move = std::max(std::abs(plus.kinks[k] - base.kinks[k]), std::abs(minus.kinks[k] - base.kinks[k]));
        if (move > 0.0 && base.kinks[k] < band * move) return true;
    }
    return false;
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f, std::vector<Tensor> params, const GradCheckOptions& options) {
    if (options.epsilon <= 0.0) throw std::invalid_argument("finite_diff_check: epsilon must be positive");
    for (const Tensor& p : params) {
        if (!p.all_finite()) throw std::domain_error("finite_diff_check: parameters must be finite");
    }

    std::vector<Tensor> analytic;
    Probe base;
    {
        Tape tape;
        tape.enable_kink_tracking(true);
        std::vector<Var> leaves;
        for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
        const Var out = f(tape, leaves);
        base.value = out.value().item();
        if (!std::isfinite(base.value)) throw std::domain_error("finite_diff_check: objective is not finite");
        base.kinks = tape.kink_distances();
        tape.backward(out);
        for (const Var& leaf : leaves) analytic.push_back(tape.grad(leaf));
    }

    Rng rng(options.seed);
    GradCheckResult result;
    const double eps = options.epsilon;
    for (std::size_t k = 0; k < params.size(); ++k) {
        std::vector<std::size_t> coords(params[k].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_param && coords.size() > options.max_coords_per_param) {
            rng.shuffle(coords.begin(), coords.end());
            coords.resize(options.max_coords_per_param);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t i : coords) {
            const double saved = params[k][i];
            params[k][i] = saved + eps;
            const Probe plus = evaluate(f, params);
            params[k][i] = saved - eps;
            const Probe minus = evaluate(f, params);
            params[k][i] = saved;

            if (near_kink(base, plus, minus, options.kink_band)) {
                ++result.skipped;
                continue;
            }
            const double numeric = (plus.value - minus.value) / (2.0 * eps);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
            ++result.checked;
        }
    }
    return result;
}

}  // namespace snowfuse
