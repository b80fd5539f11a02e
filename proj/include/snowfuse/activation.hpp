#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "snowfuse/ops.hpp"

namespace snowfuse {

/// Peak Act: a piecewise activation peaking at (1, 1).
///
///   0.2 x          x < 0
///   x^2            0 <= x < 1
///   (x - 2)^2      1 <= x < 2
///   -0.2 (x - 2)   x >= 2
///
/// The function is continuous, bounded above by 1 and equal to 1 only at x = 1.
double peak_act(double x);

/// Derivative of peak_act. At the breakpoints {0, 1, 2} the right-hand limit
/// is returned, so grad(0) = 0, grad(1) = -2 and grad(2) = -0.2.
double peak_act_grad(double x);

/// Distance from x to the nearest breakpoint of peak_act.
double peak_act_kink_distance(double x);

Var peak_act(Var x);

struct ActivationKind {
    enum class Type { PeakAct, Sigmoid, ReLU, LeakyReLU };

    Type type = Type::PeakAct;
    double slope = 0.01;  // LeakyReLU only; must lie in (0, 1)

    static ActivationKind peak() { return {Type::PeakAct, 0.0}; }
    static ActivationKind sigmoid() { return {Type::Sigmoid, 0.0}; }
    static ActivationKind relu() { return {Type::ReLU, 0.0}; }
    static ActivationKind leaky_relu(double slope);

    /// "peak-act", "sigmoid", "relu", "leaky-relu" or "leaky-relu:<slope>".
    static ActivationKind parse(const std::string& name);
    std::string name() const;

    double value(double x) const;
    double grad(double x) const;
};

Var reference_activation(const ActivationKind& kind, Var x);
/// Same as reference_activation but dispatches PeakAct too.
Var activate(const ActivationKind& kind, Var x);

struct ActivationSample {
    double x;
    double f;
    double grad;
};

/// n >= 2 evenly spaced samples over [x_min, x_max], endpoints included.
std::vector<ActivationSample> dump_activation_samples(const ActivationKind& kind, double x_min, double x_max,
                                                      std::size_t n);

/// CSV with header "x,f,grad".
void write_activation_csv(std::ostream& out, const std::vector<ActivationSample>& samples);

}  // namespace snowfuse
