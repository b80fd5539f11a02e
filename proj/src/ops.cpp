#include "snowfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Core>

namespace snowfuse {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape || !a.tape) throw std::logic_error("operands live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    }
}

void accumulate(Tensor& dst, const Tensor& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;

    std::size_t patch() const { return cin * k * k; }
    std::size_t pixels() const { return ho * wo; }
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t px = g.pixels();
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* plane = x + ci * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                double* row = cols + ((ci * g.k + ki) * g.k + kj) * px;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    double* out = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(out, out + g.wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        out[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
    const std::size_t px = g.pixels();
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        double* plane = dx + ci * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const double* row = cols + ((ci * g.k + ki) * g.k + kj) * px;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

std::size_t conv_output_size(std::size_t size, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const std::size_t padded = size + 2 * padding;
    if (stride == 0) throw std::invalid_argument("conv stride must be positive");
    if (padded < kernel) {
        throw ShapeError("spatial size " + std::to_string(size) + " with padding " + std::to_string(padding) +
                         " is smaller than kernel " + std::to_string(kernel));
    }
    return (padded - kernel) / stride + 1;
}

Var conv2d(Var input, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t padding) {
    require_same_tape(input, weight);
    const Tensor& x = input.value();
    const Tensor& w = weight.value();
    require_nchw(x, "conv2d input");
    require_nchw(w, "conv2d weight");
    if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: kernel must be square, got " + shape_to_string(w.shape()));
    if (w.dim(2) % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(w.dim(2)));
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels but weight expects " +
                         std::to_string(w.dim(1)) + " (input " + shape_to_string(x.shape()) + ", weight " +
                         shape_to_string(w.shape()) + ")");
    }
    if (bias) {
        require_same_tape(input, *bias);
        if (bias->value().shape() != Shape{w.dim(0)}) {
            throw ShapeError("conv2d: bias shape " + shape_to_string(bias->value().shape()) + " does not match " +
                             std::to_string(w.dim(0)) + " output channels");
        }
    }

    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, padding, 0, 0};
    g.ho = conv_output_size(g.h, g.k, stride, padding);
    g.wo = conv_output_size(g.w, g.k, stride, padding);

    auto cols = std::make_shared<TensorStorage>(g.n * g.patch() * g.pixels());
    Tensor out({g.n, g.cout, g.ho, g.wo});
    const ConstMatrixMap wmat(w.data().data(), g.cout, g.patch());
    for (std::size_t n = 0; n < g.n; ++n) {
        double* c = cols->data() + n * g.patch() * g.pixels();
        im2col(x.data().data() + n * g.cin * g.h * g.w, g, c);
        MatrixMap o(out.data().data() + n * g.cout * g.pixels(), g.cout, g.pixels());
        o.noalias() = wmat * ConstMatrixMap(c, g.patch(), g.pixels());
        if (bias) {
            const Tensor& b = bias->value();
            for (std::size_t co = 0; co < g.cout; ++co) o.row(co).array() += b[co];
        }
    }

    std::vector<std::size_t> inputs{input.id, weight.id};
    if (bias) inputs.push_back(bias->id);
    const std::size_t in_id = input.id, w_id = weight.id;
    const std::optional<std::size_t> b_id = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;

    return input.tape->record(
        "conv2d", std::move(inputs), std::move(out), [g, cols, in_id, w_id, b_id](Tape& tape, const Tensor& gout) {
            const Tensor& wt = tape.value(w_id);
            const ConstMatrixMap wmat(wt.data().data(), g.cout, g.patch());
            Tensor& dw = tape.grad_slot(w_id);
            MatrixMap dwmat(dw.data().data(), g.cout, g.patch());
            Tensor& dx = tape.grad_slot(in_id);
            RowMatrix dcols(g.patch(), g.pixels());
            for (std::size_t n = 0; n < g.n; ++n) {
                const ConstMatrixMap go(gout.data().data() + n * g.cout * g.pixels(), g.cout, g.pixels());
                const ConstMatrixMap c(cols->data() + n * g.patch() * g.pixels(), g.patch(), g.pixels());
                dwmat.noalias() += go * c.transpose();
                if (b_id) {
                    Tensor& db = tape.grad_slot(*b_id);
                    for (std::size_t co = 0; co < g.cout; ++co) db[co] += go.row(co).sum();
                }
                dcols.noalias() = wmat.transpose() * go;
                col2im_add(dcols.data(), g, dx.data().data() + n * g.cin * g.h * g.w);
            }
        });
}

ConvLeaves register_conv(Tape& tape, const ConvLayer& layer) {
    ConvLeaves leaves{tape.leaf(layer.weight), std::nullopt};
    if (layer.bias) leaves.bias = tape.leaf(*layer.bias);
    return leaves;
}

Var conv2d(Var input, const ConvLeaves& leaves, const ConvLayer& layer) {
    return conv2d(input, leaves.weight, leaves.bias, layer.stride, layer.padding);
}

Var resize(Var input, std::size_t target_h, std::size_t target_w, ResizeMode mode) {
    const Tensor& x = input.value();
    require_nchw(x, "resize input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (target_h == 0 || target_w == 0) throw ShapeError("resize: target size must be positive");

    const bool up = mode == ResizeMode::Up;
    const std::size_t big_h = up ? target_h : h, big_w = up ? target_w : w;
    const std::size_t small_h = up ? h : target_h, small_w = up ? w : target_w;
    if (big_h < small_h || big_w < small_w || big_h % small_h != 0 || big_w % small_w != 0) {
        throw ShapeError("resize: " + std::string(up ? "up" : "down") + "-scaling " + std::to_string(h) + "x" +
                         std::to_string(w) + " to " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                         " is not an integer scale factor");
    }
    const std::size_t fh = big_h / small_h, fw = big_w / small_w;

    Tensor out({n, c, target_h, target_w});
    if (up) {
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < target_h; ++y)
                    for (std::size_t xx = 0; xx < target_w; ++xx) out.at(b, ch, y, xx) = x.at(b, ch, y / fh, xx / fw);
    } else {
        const double inv = 1.0 / static_cast<double>(fh * fw);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx) out.at(b, ch, y / fh, xx / fw) += x.at(b, ch, y, xx) * inv;
    }

    const std::size_t in_id = input.id;
    return input.tape->record(up ? "upsample" : "avgpool", {in_id}, std::move(out),
                              [in_id, up, fh, fw](Tape& tape, const Tensor& gout) {
                                  Tensor& dx = tape.grad_slot(in_id);
                                  const std::size_t n = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
                                  const double scale = up ? 1.0 : 1.0 / static_cast<double>(fh * fw);
                                  if (up) {
                                      for (std::size_t b = 0; b < n; ++b)
                                          for (std::size_t ch = 0; ch < c; ++ch)
                                              for (std::size_t y = 0; y < gout.dim(2); ++y)
                                                  for (std::size_t xx = 0; xx < gout.dim(3); ++xx)
                                                      dx.at(b, ch, y / fh, xx / fw) += gout.at(b, ch, y, xx);
                                  } else {
                                      for (std::size_t b = 0; b < n; ++b)
                                          for (std::size_t ch = 0; ch < c; ++ch)
                                              for (std::size_t y = 0; y < h; ++y)
                                                  for (std::size_t xx = 0; xx < w; ++xx)
                                                      dx.at(b, ch, y, xx) += gout.at(b, ch, y / fh, xx / fw) * scale;
                                  }
                              });
}

Var resize_to(Var input, std::size_t target_h, std::size_t target_w) {
    const Tensor& x = input.value();
    require_nchw(x, "resize input");
    if (x.dim(2) == target_h && x.dim(3) == target_w) return input;
    if (target_h >= x.dim(2) && target_w >= x.dim(3)) return resize(input, target_h, target_w, ResizeMode::Up);
    if (target_h <= x.dim(2) && target_w <= x.dim(3)) return resize(input, target_h, target_w, ResizeMode::Down);
    throw ShapeError("resize: mixed up/down scaling from " + shape_to_string(x.shape()));
}

Var batchnorm(Var input, Var gamma, Var beta, double eps, NormMode mode, RunningStats* stats) {
    require_same_tape(input, gamma);
    require_same_tape(input, beta);
    const Tensor& x = input.value();
    require_nchw(x, "batchnorm input");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const std::size_t m = n * hw;
    if (m == 0) throw ShapeError("batchnorm: zero-size channel");
    if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c}) {
        throw ShapeError("batchnorm: gamma/beta must have length " + std::to_string(c));
    }
    if (eps <= 0.0) throw std::invalid_argument("batchnorm: eps must be positive");
    if (mode == NormMode::Inference && !stats) throw std::invalid_argument("batchnorm: inference mode needs running stats");
    if (stats && (stats->mean.shape() != Shape{c} || stats->var.shape() != Shape{c})) {
        throw ShapeError("batchnorm: running stats have wrong length");
    }

    const Tensor& g = gamma.value();
    const Tensor& b = beta.value();
    auto xhat = std::make_shared<Tensor>(x.shape());
    auto inv_std = std::make_shared<std::vector<double>>(c);
    Tensor out(x.shape());

    for (std::size_t ch = 0; ch < c; ++ch) {
        double mu, var;
        if (mode == NormMode::Training) {
            double s = 0.0;
            for (std::size_t b0 = 0; b0 < n; ++b0)
                for (std::size_t i = 0; i < hw; ++i) s += x[(b0 * c + ch) * hw + i];
            mu = s / static_cast<double>(m);
            double sq = 0.0;
            for (std::size_t b0 = 0; b0 < n; ++b0)
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = x[(b0 * c + ch) * hw + i] - mu;
                    sq += d * d;
                }
            var = sq / static_cast<double>(m);
            if (stats) {
                const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
                stats->mean[ch] = (1.0 - stats->momentum) * stats->mean[ch] + stats->momentum * mu;
                stats->var[ch] = (1.0 - stats->momentum) * stats->var[ch] + stats->momentum * unbiased;
            }
        } else {
            mu = stats->mean[ch];
            var = stats->var[ch];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[ch] = is;
        for (std::size_t b0 = 0; b0 < n; ++b0)
            for (std::size_t i = 0; i < hw; ++i) {
                const std::size_t idx = (b0 * c + ch) * hw + i;
                (*xhat)[idx] = (x[idx] - mu) * is;
                out[idx] = g[ch] * (*xhat)[idx] + b[ch];
            }
    }

    const std::size_t in_id = input.id, g_id = gamma.id, b_id = beta.id;
    const bool training = mode == NormMode::Training;
    return input.tape->record(
        "batchnorm", {in_id, g_id, b_id}, std::move(out),
        [=](Tape& tape, const Tensor& gout) {
            const Tensor& gam = tape.value(g_id);
            Tensor& dx = tape.grad_slot(in_id);
            Tensor& dg = tape.grad_slot(g_id);
            Tensor& dbeta = tape.grad_slot(b_id);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t b0 = 0; b0 < n; ++b0)
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t idx = (b0 * c + ch) * hw + i;
                        sum_dy += gout[idx];
                        sum_dy_xhat += gout[idx] * (*xhat)[idx];
                    }
                dg[ch] += sum_dy_xhat;
                dbeta[ch] += sum_dy;
                const double scale = gam[ch] * (*inv_std)[ch];
                const double md = static_cast<double>(m);
                for (std::size_t b0 = 0; b0 < n; ++b0)
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t idx = (b0 * c + ch) * hw + i;
                        if (training) {
                            dx[idx] += scale * (gout[idx] - sum_dy / md - (*xhat)[idx] * sum_dy_xhat / md);
                        } else {
                            dx[idx] += scale * gout[idx];
                        }
                    }
            }
        });
}

Var prelu(Var input, Var slope) {
    require_same_tape(input, slope);
    const Tensor& x = input.value();
    require_nchw(x, "prelu input");
    const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (slope.value().shape() != Shape{c}) {
        throw ShapeError("prelu: slope length " + shape_to_string(slope.value().shape()) + " does not match " +
                         std::to_string(c) + " channels");
    }
    const Tensor& a = slope.value();
    Tensor out(x.shape());
    Tape& tape = *input.tape;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t ch = (i / hw) % c;
        out[i] = x[i] >= 0.0 ? x[i] : a[ch] * x[i];
        if (tape.tracking_kinks()) tape.note_kink_distance(std::abs(x[i]));
    }
    const std::size_t in_id = input.id, s_id = slope.id;
    return tape.record("prelu", {in_id, s_id}, std::move(out), [=](Tape& t, const Tensor& gout) {
        const Tensor& xv = t.value(in_id);
        const Tensor& av = t.value(s_id);
        Tensor& dx = t.grad_slot(in_id);
        Tensor& da = t.grad_slot(s_id);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const std::size_t ch = (i / hw) % c;
            if (xv[i] >= 0.0) {
                dx[i] += gout[i];
            } else {
                dx[i] += av[ch] * gout[i];
                da[ch] += xv[i] * gout[i];
            }
        }
    });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same_shape(x, y, "add");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    const std::size_t a_id = a.id, b_id = b.id;
    return a.tape->record("add", {a_id, b_id}, std::move(out), [a_id, b_id](Tape& t, const Tensor& gout) {
        accumulate(t.grad_slot(a_id), gout);
        accumulate(t.grad_slot(b_id), gout);
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Tensor& first = parts.front().value();
    require_nchw(first, "concat_channels input");
    const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3), hw = h * w;
    std::size_t total = 0;
    std::vector<std::size_t> ids, sizes;
    for (const Var& p : parts) {
        require_same_tape(parts.front(), p);
        const Tensor& t = p.value();
        require_nchw(t, "concat_channels input");
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
            throw ShapeError("concat_channels: mismatched N/H/W " + shape_to_string(first.shape()) + " vs " +
                             shape_to_string(t.shape()));
        }
        ids.push_back(p.id);
        sizes.push_back(t.dim(1));
        total += t.dim(1);
    }
    Tensor out({n, total, h, w});
    for (std::size_t b = 0; b < n; ++b) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const Tensor& t = parts[k].value();
            const auto src = t.data().subspan(b * sizes[k] * hw, sizes[k] * hw);
            std::copy(src.begin(), src.end(), out.data().begin() + static_cast<long>((b * total + offset) * hw));
            offset += sizes[k];
        }
    }
    return parts.front().tape->record("concat", ids, std::move(out), [=](Tape& t, const Tensor& gout) {
        for (std::size_t b = 0; b < n; ++b) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                Tensor& dx = t.grad_slot(ids[k]);
                for (std::size_t i = 0; i < sizes[k] * hw; ++i) {
                    dx[b * sizes[k] * hw + i] += gout[(b * total + offset) * hw + i];
                }
                offset += sizes[k];
            }
        }
    });
}

std::vector<Var> split_channels(Var input, std::span<const std::size_t> sizes) {
    const Tensor& x = input.value();
    require_nchw(x, "split_channels input");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), hw = h * w;
    std::size_t total = 0;
    for (std::size_t s : sizes) {
        if (s == 0) throw ShapeError("split_channels: zero-sized part");
        total += s;
    }
    if (total != c) {
        throw ShapeError("split_channels: sizes sum to " + std::to_string(total) + " but input has " +
                         std::to_string(c) + " channels");
    }
    std::vector<Var> parts;
    std::size_t offset = 0;
    for (std::size_t s : sizes) {
        Tensor out({n, s, h, w});
        for (std::size_t b = 0; b < n; ++b) {
            const auto src = x.data().subspan((b * c + offset) * hw, s * hw);
            std::copy(src.begin(), src.end(), out.data().begin() + static_cast<long>(b * s * hw));
        }
        const std::size_t in_id = input.id, off = offset;
        parts.push_back(input.tape->record("split", {in_id}, std::move(out), [=](Tape& t, const Tensor& gout) {
            Tensor& dx = t.grad_slot(in_id);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < s * hw; ++i) dx[(b * c + off) * hw + i] += gout[b * s * hw + i];
        }));
        offset += s;
    }
    return parts;
}

Var max_over_channels(Var input) {
    const Tensor& x = input.value();
    require_nchw(x, "max_over_channels input");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({n, 1, x.dim(2), x.dim(3)});
    auto argmax = std::make_shared<std::vector<std::size_t>>(n * hw);
    Tape& tape = *input.tape;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < hw; ++i) {
            std::size_t best = 0;
            double best_v = x[(b * c) * hw + i];
            double runner_up = -INFINITY;
            for (std::size_t ch = 1; ch < c; ++ch) {
                const double v = x[(b * c + ch) * hw + i];
                if (v > best_v) {
                    runner_up = best_v;
                    best_v = v;
                    best = ch;
                } else {
                    runner_up = std::max(runner_up, v);
                }
            }
            out[b * hw + i] = best_v;
            (*argmax)[b * hw + i] = best;
            if (tape.tracking_kinks() && c > 1) tape.note_kink_distance(best_v - runner_up);
        }
    }
    const std::size_t in_id = input.id;
    return tape.record("max_over_channels", {in_id}, std::move(out), [=](Tape& t, const Tensor& gout) {
        Tensor& dx = t.grad_slot(in_id);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) dx[(b * c + (*argmax)[b * hw + i]) * hw + i] += gout[b * hw + i];
    });
}

Var elementwise(Var input, const ElementwiseFn& fn) {
    const Tensor& x = input.value();
    Tensor out(x.shape());
    Tape& tape = *input.tape;
    const bool track = tape.tracking_kinks() && static_cast<bool>(fn.kink_distance);
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = fn.f(x[i]);
        if (track) tape.note_kink_distance(fn.kink_distance(x[i]));
    }
    const std::size_t in_id = input.id;
    auto df = fn.df;
    return tape.record(fn.name, {in_id}, std::move(out), [in_id, df](Tape& t, const Tensor& gout) {
        const Tensor& xv = t.value(in_id);
        Tensor& dx = t.grad_slot(in_id);
        for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += df(xv[i]) * gout[i];
    });
}

Var sum(Var input) {
    const Tensor& x = input.value();
    double s = 0.0;
    for (double v : x.data()) s += v;
    const std::size_t in_id = input.id;
    return input.tape->record("sum", {in_id}, Tensor::scalar(s), [in_id](Tape& t, const Tensor& gout) {
        Tensor& dx = t.grad_slot(in_id);
        for (double& v : dx.data()) v += gout[0];
    });
}

Var mean(Var input) { return affine(sum(input), 1.0 / static_cast<double>(input.value().size()), 0.0); }

Var abs_sum(Var input) {
    const Tensor& x = input.value();
    Tape& tape = *input.tape;
    double s = 0.0;
    for (double v : x.data()) {
        s += std::abs(v);
        if (tape.tracking_kinks()) tape.note_kink_distance(std::abs(v));
    }
    const std::size_t in_id = input.id;
    return tape.record("abs_sum", {in_id}, Tensor::scalar(s), [in_id](Tape& t, const Tensor& gout) {
        const Tensor& xv = t.value(in_id);
        Tensor& dx = t.grad_slot(in_id);
        // subgradient 0 at exactly zero
        for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += (xv[i] > 0.0 ? 1.0 : xv[i] < 0.0 ? -1.0 : 0.0) * gout[0];
    });
}

Var affine(Var input, double scale, double shift) {
    const Tensor& x = input.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * x[i] + shift;
    const std::size_t in_id = input.id;
    return input.tape->record("affine", {in_id}, std::move(out), [in_id, scale](Tape& t, const Tensor& gout) {
        Tensor& dx = t.grad_slot(in_id);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += scale * gout[i];
    });
}

Var dot(Var input, const Tensor& weights) {
    const Tensor& x = input.value();
    require_same_shape(x, weights, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * weights[i];
    const std::size_t in_id = input.id;
    return input.tape->record("dot", {in_id}, Tensor::scalar(s), [in_id, weights](Tape& t, const Tensor& gout) {
        Tensor& dx = t.grad_slot(in_id);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += weights[i] * gout[0];
    });
}

Var mse(Var input, const Tensor& target) {
    const Tensor& x = input.value();
    require_same_shape(x, target, "mse");
    const double inv = 1.0 / static_cast<double>(x.size());
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - target[i];
        s += d * d;
    }
    const std::size_t in_id = input.id;
    return input.tape->record("mse", {in_id}, Tensor::scalar(s * inv), [in_id, target, inv](Tape& t, const Tensor& gout) {
        const Tensor& xv = t.value(in_id);
        Tensor& dx = t.grad_slot(in_id);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * inv * (xv[i] - target[i]) * gout[0];
    });
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr, double weight_decay) {
    if (params.size() != grads.size()) {
        throw ShapeError("sgd_step: " + std::to_string(params.size()) + " params but " + std::to_string(grads.size()) +
                         " gradients");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        require_same_shape(p, grads[k], "sgd_step");
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (grads[k][i] + weight_decay * p[i]);
    }
}

}  // namespace snowfuse
