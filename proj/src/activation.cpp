#include "snowfuse/activation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace snowfuse {

double peak_act(double x) {
    if (x < 0.0) return 0.2 * x;
    if (x < 1.0) return x * x;
    if (x < 2.0) return (x - 2.0) * (x - 2.0);
    return -0.2 * (x - 2.0);
}

double peak_act_grad(double x) {
    if (x < 0.0) return 0.2;
    if (x < 1.0) return 2.0 * x;
    if (x < 2.0) return 2.0 * (x - 2.0);
    return -0.2;
}

double peak_act_kink_distance(double x) {
    return std::min({std::abs(x), std::abs(x - 1.0), std::abs(x - 2.0)});
}

Var peak_act(Var x) {
    static const ElementwiseFn fn{
        "peak_act",
        [](double v) { return peak_act(v); },
        [](double v) { return peak_act_grad(v); },
        [](double v) { return peak_act_kink_distance(v); },
    };
    return elementwise(x, fn);
}

ActivationKind ActivationKind::leaky_relu(double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("LeakyReLU slope must lie in (0, 1)");
    return {Type::LeakyReLU, slope};
}

ActivationKind ActivationKind::parse(const std::string& name) {
    if (name == "peak-act" || name == "peak") return peak();
    if (name == "sigmoid") return sigmoid();
    if (name == "relu") return relu();
    if (name == "leaky-relu") return leaky_relu(0.01);
    const std::string prefix = "leaky-relu:";
    if (name.rfind(prefix, 0) == 0) {
        std::size_t used = 0;
        const std::string rest = name.substr(prefix.size());
        double slope = 0.0;
        try {
            slope = std::stod(rest, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != rest.size()) throw std::invalid_argument("bad LeakyReLU slope in '" + name + "'");
        return leaky_relu(slope);
    }
    throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string ActivationKind::name() const {
    switch (type) {
        case Type::PeakAct: return "peak-act";
        case Type::Sigmoid: return "sigmoid";
        case Type::ReLU: return "relu";
        case Type::LeakyReLU: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "leaky-relu:%g", slope);
            return buf;
        }
    }
    return "unknown";
}

double ActivationKind::value(double x) const {
    switch (type) {
        case Type::PeakAct: return peak_act(x);
        case Type::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case Type::ReLU: return x > 0.0 ? x : 0.0;
        case Type::LeakyReLU: return x >= 0.0 ? x : slope * x;
    }
    return 0.0;
}

double ActivationKind::grad(double x) const {
    switch (type) {
        case Type::PeakAct: return peak_act_grad(x);
        case Type::Sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 - s);
        }
        // right limits at 0, as for Peak Act
        case Type::ReLU: return x >= 0.0 ? 1.0 : 0.0;
        case Type::LeakyReLU: return x >= 0.0 ? 1.0 : slope;
    }
    return 0.0;
}

Var reference_activation(const ActivationKind& kind, Var x) {
    if (kind.type == ActivationKind::Type::PeakAct) {
        throw std::invalid_argument("reference_activation covers Sigmoid/ReLU/LeakyReLU; use peak_act");
    }
    const ActivationKind k = kind;
    ElementwiseFn fn{
        k.type == ActivationKind::Type::Sigmoid ? "sigmoid" : k.type == ActivationKind::Type::ReLU ? "relu" : "leaky_relu",
        [k](double v) { return k.value(v); },
        [k](double v) { return k.grad(v); },
        nullptr,
    };
    if (k.type != ActivationKind::Type::Sigmoid) fn.kink_distance = [](double v) { return std::abs(v); };
    return elementwise(x, fn);
}

Var activate(const ActivationKind& kind, Var x) {
    return kind.type == ActivationKind::Type::PeakAct ? peak_act(x) : reference_activation(kind, x);
}

std::vector<ActivationSample> dump_activation_samples(const ActivationKind& kind, double x_min, double x_max,
                                                      std::size_t n) {
    if (n < 2) throw std::invalid_argument("dump_activation_samples needs n >= 2");
    if (!(x_max > x_min)) throw std::invalid_argument("dump_activation_samples needs x_min < x_max");
    std::vector<ActivationSample> rows;
    rows.reserve(n);
    const double step = (x_max - x_min) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = i + 1 == n ? x_max : x_min + step * static_cast<double>(i);
        rows.push_back({x, kind.value(x), kind.grad(x)});
    }
    return rows;
}

void write_activation_csv(std::ostream& out, const std::vector<ActivationSample>& samples) {
    out << "x,f,grad\n";
    char buf[128];
    for (const auto& s : samples) {
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g\n", s.x, s.f, s.grad);
        out << buf;
    }
}

}  // namespace snowfuse
