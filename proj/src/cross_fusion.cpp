#include "snowfuse/cross_fusion.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "snowfuse/rng.hpp"

namespace snowfuse {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kPreluInit = 0.25;

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

void validate_stages(std::span<const StageSpec> stages, const char* what) {
    if (stages.empty()) throw std::invalid_argument(std::string(what) + ": at least one stage required");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const std::string where = std::string(what) + "[" + std::to_string(i) + "]";
        if (stages[i].channels == 0) throw std::invalid_argument(where + ": channels must be positive");
        if (!is_power_of_two(stages[i].scale))
            throw std::invalid_argument(where + ": scale " + std::to_string(stages[i].scale) + " is not a power of two");
        if (i > 0 && stages[i].scale <= stages[i - 1].scale)
            throw std::invalid_argument(where + ": scales must be strictly increasing");
    }
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::size_t> parse_list(const std::string& value, std::size_t line) {
    std::string spaced = value;
    for (char& c : spaced)
        if (c == ',') c = ' ';
    std::istringstream in(spaced);
    std::vector<std::size_t> out;
    std::string token;
    while (in >> token) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            if (token.front() == '-') throw std::invalid_argument(token);
            v = std::stoull(token, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != token.size())
            throw std::invalid_argument("cf config line " + std::to_string(line) + ": '" + token +
                                        "' is not a non-negative integer");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw std::invalid_argument("cf config line " + std::to_string(line) + ": empty value");
    return out;
}

std::vector<StageSpec> zip_stages(const std::vector<std::size_t>& channels, const std::vector<std::size_t>& scales,
                                  const char* what) {
    if (channels.size() != scales.size())
        throw std::invalid_argument(std::string("cf config: ") + what + "_channels has " +
                                    std::to_string(channels.size()) + " entries but " + what + "_scales has " +
                                    std::to_string(scales.size()));
    std::vector<StageSpec> out;
    for (std::size_t i = 0; i < channels.size(); ++i) out.push_back({channels[i], scales[i]});
    return out;
}

std::string join(const std::vector<StageSpec>& stages, bool channels) {
    std::string out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(channels ? stages[i].channels : stages[i].scale);
    }
    return out;
}

// Spatial size of the scale-1 grid implied by input 0.
std::pair<std::size_t, std::size_t> base_size(std::span<const Var> inputs, std::span<const StageSpec> in_stages) {
    if (inputs.size() != in_stages.size())
        throw std::invalid_argument("goctconv: expected " + std::to_string(in_stages.size()) + " inputs, got " +
                                    std::to_string(inputs.size()));
    const std::size_t bh = inputs[0].value().dim(2) * in_stages[0].scale;
    const std::size_t bw = inputs[0].value().dim(3) * in_stages[0].scale;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        const Tensor& x = inputs[s].value();
        require_nchw(x, "goctconv input");
        if (x.dim(1) != in_stages[s].channels)
            throw ShapeError("goctconv: input " + std::to_string(s) + " has " + std::to_string(x.dim(1)) +
                             " channels, stage expects " + std::to_string(in_stages[s].channels));
        if (x.dim(2) * in_stages[s].scale != bh || x.dim(3) * in_stages[s].scale != bw)
            throw ShapeError("goctconv: input " + std::to_string(s) + " of size " + std::to_string(x.dim(2)) + "x" +
                             std::to_string(x.dim(3)) + " does not match scale " +
                             std::to_string(in_stages[s].scale) + " of a " + std::to_string(bh) + "x" +
                             std::to_string(bw) + " base");
    }
    return {bh, bw};
}

std::pair<std::size_t, std::size_t> stage_size(std::pair<std::size_t, std::size_t> base, const StageSpec& stage) {
    if (base.first % stage.scale != 0 || base.second % stage.scale != 0)
        throw ShapeError("goctconv: base size " + std::to_string(base.first) + "x" + std::to_string(base.second) +
                         " is not divisible by scale " + std::to_string(stage.scale));
    return {base.first / stage.scale, base.second / stage.scale};
}

ParamCount csp_param_count(std::size_t c) {
    const std::size_t h = c / 2;
    ParamCount p;
    p.conv_weights = 2 * c * h + h * h + 9 * h * h + c * c;
    p.biases = 4 * h + c;
    return p;
}

Var sum_all(const std::vector<Var>& parts) {
    Var acc = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
    return acc;
}

void add_conv(std::vector<Tensor*>& out, ConvLayer& conv) {
    out.push_back(&conv.weight);
    if (conv.bias) out.push_back(&*conv.bias);
}

}  // namespace

// ---------------------------------------------------------------- config

void CfConfig::validate() const {
    validate_stages(in_stages, "in_stages");
    validate_stages(out_stages, "out_stages");
    if (n == 0) throw std::invalid_argument("CfConfig: n must be at least 1");
    if (kernel % 2 == 0) throw std::invalid_argument("CfConfig: K must be odd, got " + std::to_string(kernel));
    for (std::size_t i = 0; i < out_stages.size(); ++i)
        if (out_stages[i].channels % 2 != 0)
            throw std::invalid_argument("CfConfig: out_stages[" + std::to_string(i) + "] has odd channel count " +
                                        std::to_string(out_stages[i].channels) + "; CSP splits channels in half");
}

CfConfig CfConfig::three_stage_default() {
    CfConfig c;
    c.in_stages = {{8, 1}, {16, 2}, {32, 4}};
    c.out_stages = c.in_stages;
    c.n = 2;
    c.kernel = 1;
    return c;
}

CfConfig parse_cf_config(const std::string& text) {
    std::optional<std::vector<std::size_t>> in_ch, in_sc, out_ch, out_sc;
    std::optional<std::size_t> n, k;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string body = trim(raw.substr(0, raw.find('#')));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("cf config line " + std::to_string(line) + ": expected key = value");
        const std::string key = trim(body.substr(0, eq));
        const auto values = parse_list(body.substr(eq + 1), line);
        auto scalar = [&]() {
            if (values.size() != 1)
                throw std::invalid_argument("cf config line " + std::to_string(line) + ": " + key +
                                            " takes a single value");
            return values[0];
        };
        if (key == "in_channels")
            in_ch = values;
        else if (key == "in_scales")
            in_sc = values;
        else if (key == "out_channels")
            out_ch = values;
        else if (key == "out_scales")
            out_sc = values;
        else if (key == "n")
            n = scalar();
        else if (key == "K")
            k = scalar();
        else
            throw std::invalid_argument("cf config line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
    if (!in_ch || !in_sc) throw std::invalid_argument("cf config: in_channels and in_scales are required");
    CfConfig c;
    c.in_stages = zip_stages(*in_ch, *in_sc, "in");
    c.out_stages = zip_stages(out_ch.value_or(*in_ch), out_sc.value_or(*in_sc), "out");
    if (n) c.n = *n;
    if (k) c.kernel = *k;
    c.validate();
    return c;
}

CfConfig load_cf_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open cf config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_cf_config(ss.str());
}

std::string format_cf_config(const CfConfig& config) {
    std::ostringstream out;
    out << "in_channels = " << join(config.in_stages, true) << "\n"
        << "in_scales = " << join(config.in_stages, false) << "\n"
        << "out_channels = " << join(config.out_stages, true) << "\n"
        << "out_scales = " << join(config.out_stages, false) << "\n"
        << "n = " << config.n << "\n"
        << "K = " << config.kernel << "\n";
    return out.str();
}

// ---------------------------------------------------------------- weights

GOctConvWeights init_goctconv(Rng& rng, std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                              std::size_t kernel) {
    GOctConvWeights w;
    for (const auto& t : out_stages) {
        auto& row = w.convs.emplace_back();
        for (const auto& s : in_stages) row.push_back(make_conv(rng, s.channels, t.channels, kernel, true));
    }
    return w;
}

CspWeights init_csp(Rng& rng, std::size_t channels) {
    if (channels == 0 || channels % 2 != 0)
        throw std::invalid_argument("csp: channel count must be even and positive, got " + std::to_string(channels));
    const std::size_t h = channels / 2;
    CspWeights w;
    w.reduce_a = make_conv(rng, channels, h, 1, true);
    w.reduce_b = make_conv(rng, channels, h, 1, true);
    w.bottleneck_in = make_conv(rng, h, h, 1, true);
    w.bottleneck_out = make_conv(rng, h, h, 3, true);
    w.fuse = make_conv(rng, channels, channels, 1, true);
    return w;
}

CfLayerWeights init_cf_layer(Rng& rng, std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                             std::size_t kernel) {
    CfLayerWeights w;
    w.in_stages.assign(in_stages.begin(), in_stages.end());
    w.out_stages.assign(out_stages.begin(), out_stages.end());
    w.kernel = kernel;
    w.goct = init_goctconv(rng, in_stages, out_stages, kernel);
    for (const auto& t : out_stages) {
        CfBranchWeights b{Tensor({t.channels}, 1.0), Tensor({t.channels}, 0.0), RunningStats(t.channels),
                          Tensor({t.channels}, kPreluInit), init_csp(rng, t.channels)};
        w.branches.push_back(std::move(b));
    }
    return w;
}

std::vector<Tensor*> CfLayerWeights::parameters() {
    std::vector<Tensor*> out;
    for (auto& row : goct.convs)
        for (auto& conv : row) add_conv(out, conv);
    for (auto& b : branches) {
        out.push_back(&b.bn_gamma);
        out.push_back(&b.bn_beta);
        out.push_back(&b.prelu_slope);
        for (ConvLayer* c : {&b.csp.reduce_a, &b.csp.reduce_b, &b.csp.bottleneck_in, &b.csp.bottleneck_out,
                             &b.csp.fuse})
            add_conv(out, *c);
    }
    return out;
}

// --------------------------------------------------------------- forward

std::vector<Var> goctconv(ParamBinder& binder, std::span<const Var> inputs, std::span<const StageSpec> in_stages,
                          std::span<const StageSpec> out_stages, const GOctConvWeights& weights) {
    const auto base = base_size(inputs, in_stages);
    if (weights.convs.size() != out_stages.size())
        throw std::invalid_argument("goctconv: weights have " + std::to_string(weights.convs.size()) +
                                    " output rows, config has " + std::to_string(out_stages.size()));
    std::vector<Var> outputs;
    for (std::size_t t = 0; t < out_stages.size(); ++t) {
        const auto [h, w] = stage_size(base, out_stages[t]);
        if (weights.convs[t].size() != inputs.size())
            throw std::invalid_argument("goctconv: weight row " + std::to_string(t) + " has " +
                                        std::to_string(weights.convs[t].size()) + " convs for " +
                                        std::to_string(inputs.size()) + " inputs");
        std::vector<Var> terms;
        for (std::size_t s = 0; s < inputs.size(); ++s)
            terms.push_back(conv2d(binder, resize_to(inputs[s], h, w), weights.convs[t][s]));
        outputs.push_back(sum_all(terms));
    }
    return outputs;
}

Var csp_block(ParamBinder& binder, Var input, const CspWeights& weights) {
    require_nchw(input.value(), "csp input");
    const std::size_t c = input.value().dim(1);
    if (c % 2 != 0) throw ShapeError("csp: channel count " + std::to_string(c) + " is odd");
    const Var a = conv2d(binder, input, weights.reduce_a);
    const Var b = conv2d(binder, input, weights.reduce_b);
    const Var bottleneck = conv2d(binder, conv2d(binder, a, weights.bottleneck_in), weights.bottleneck_out);
    const Var parts[] = {add(a, bottleneck), b};
    return conv2d(binder, concat_channels(parts), weights.fuse);
}

std::vector<Var> cf_layer(ParamBinder& binder, std::span<const Var> inputs, CfLayerWeights& weights, NormMode mode) {
    const auto sums = goctconv(binder, inputs, weights.in_stages, weights.out_stages, weights.goct);
    std::vector<Var> outputs;
    for (std::size_t t = 0; t < sums.size(); ++t) {
        CfBranchWeights& b = weights.branches.at(t);
        const Var normed =
            batchnorm(sums[t], binder.bind(b.bn_gamma), binder.bind(b.bn_beta), kBnEps, mode, &b.bn_stats);
        outputs.push_back(csp_block(binder, prelu(normed, binder.bind(b.prelu_slope)), b.csp));
    }
    return outputs;
}

// ----------------------------------------------------------------- necks

CfNeck::CfNeck(const CfConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    for (std::size_t i = 0; i < config_.n; ++i) {
        const auto& in = i == 0 ? config_.in_stages : config_.out_stages;
        layers_.push_back(init_cf_layer(rng, in, config_.out_stages, config_.kernel));
    }
}

std::vector<Var> CfNeck::forward(ParamBinder& binder, std::span<const Var> inputs, NormMode mode) {
    std::vector<Var> x(inputs.begin(), inputs.end());
    for (auto& layer : layers_) x = cf_layer(binder, x, layer, mode);
    return x;
}

std::vector<Tensor*> CfNeck::parameters() {
    std::vector<Tensor*> out;
    for (auto& layer : layers_)
        for (Tensor* p : layer.parameters()) out.push_back(p);
    return out;
}

FpnPanetNeck::FpnPanetNeck(std::vector<StageSpec> in_stages, std::vector<StageSpec> out_stages, std::size_t kernel,
                           std::uint64_t seed)
    : in_(std::move(in_stages)), out_(std::move(out_stages)), kernel_(kernel) {
    validate_stages(in_, "in_stages");
    validate_stages(out_, "out_stages");
    if (kernel_ % 2 == 0) throw std::invalid_argument("FpnPanetNeck: kernel must be odd");
    if (in_.size() != out_.size())
        throw std::invalid_argument("FpnPanetNeck: needs as many output stages as input stages");
    for (std::size_t i = 0; i < in_.size(); ++i)
        if (in_[i].scale != out_[i].scale)
            throw std::invalid_argument("FpnPanetNeck: stage " + std::to_string(i) + " changes scale");
    Rng rng(seed);
    const std::size_t levels = in_.size();
    for (std::size_t i = 0; i < levels; ++i) lateral.push_back(make_conv(rng, in_[i].channels, out_[i].channels, 1, true));
    for (std::size_t i = 0; i + 1 < levels; ++i) {
        td_reduce.push_back(make_conv(rng, out_[i + 1].channels, out_[i].channels, 1, true));
        td_fuse.push_back(make_conv(rng, out_[i].channels, out_[i].channels, kernel_, true));
    }
    for (std::size_t i = 0; i + 1 < levels; ++i) {
        bu_down.push_back(make_conv(rng, out_[i].channels, out_[i + 1].channels, kernel_, true));
        bu_fuse.push_back(make_conv(rng, out_[i + 1].channels, out_[i + 1].channels, kernel_, true));
    }
}

std::vector<Var> FpnPanetNeck::forward(ParamBinder& binder, std::span<const Var> inputs) {
    base_size(inputs, in_);
    const std::size_t levels = in_.size();
    std::vector<Var> p;
    for (std::size_t i = 0; i < levels; ++i) p.push_back(conv2d(binder, inputs[i], lateral[i]));
    for (std::size_t i = levels - 1; i-- > 0;) {
        const Tensor& here = p[i].value();
        const Var up = resize_to(conv2d(binder, p[i + 1], td_reduce[i]), here.dim(2), here.dim(3));
        p[i] = conv2d(binder, add(p[i], up), td_fuse[i]);
    }
    std::vector<Var> out{p[0]};
    for (std::size_t i = 0; i + 1 < levels; ++i) {
        const Tensor& next = p[i + 1].value();
        const Var down = conv2d(binder, resize_to(out[i], next.dim(2), next.dim(3)), bu_down[i]);
        out.push_back(conv2d(binder, add(p[i + 1], down), bu_fuse[i]));
    }
    return out;
}

std::vector<Tensor*> FpnPanetNeck::parameters() {
    std::vector<Tensor*> out;
    for (auto* group : {&lateral, &td_reduce, &td_fuse, &bu_down, &bu_fuse})
        for (auto& conv : *group) add_conv(out, conv);
    return out;
}

// -------------------------------------------------------- parameter counts

ParamCount count_params(const ConvLayer& conv) {
    ParamCount p;
    p.conv_weights = conv.weight.size();
    if (conv.bias) p.biases = conv.bias->size();
    return p;
}

ParamCount count_params(const GOctConvWeights& weights) {
    ParamCount p;
    for (const auto& row : weights.convs)
        for (const auto& conv : row) p += count_params(conv);
    return p;
}

ParamCount count_params(const CspWeights& w) {
    return count_params(w.reduce_a) + count_params(w.reduce_b) + count_params(w.bottleneck_in) +
           count_params(w.bottleneck_out) + count_params(w.fuse);
}

ParamCount count_params(const CfLayerWeights& weights) {
    ParamCount p = count_params(weights.goct);
    for (const auto& b : weights.branches) {
        p.bn += b.bn_gamma.size() + b.bn_beta.size();
        p.prelu += b.prelu_slope.size();
        p += count_params(b.csp);
    }
    return p;
}

ParamCount count_params(const CfNeck& neck) {
    ParamCount p;
    for (const auto& layer : neck.layers()) p += count_params(layer);
    return p;
}

ParamCount count_params(const FpnPanetNeck& neck) {
    ParamCount p;
    for (const auto* group : {&neck.lateral, &neck.td_reduce, &neck.td_fuse, &neck.bu_down, &neck.bu_fuse})
        for (const auto& conv : *group) p += count_params(conv);
    return p;
}

std::size_t goctconv_weight_count(std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                                  std::size_t kernel) {
    std::size_t total = 0;
    for (const auto& s : in_stages)
        for (const auto& t : out_stages) total += s.channels * t.channels * kernel * kernel;
    return total;
}

ParamCount cf_layer_param_count(std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                                std::size_t kernel) {
    ParamCount p;
    p.conv_weights = goctconv_weight_count(in_stages, out_stages, kernel);
    for (const auto& t : out_stages) {
        p.biases += in_stages.size() * t.channels;
        p.bn += 2 * t.channels;
        p.prelu += t.channels;
        p += csp_param_count(t.channels);
    }
    return p;
}

// ----------------------------------------------------------------- graphs

NeckGraph build_cf_neck(const CfConfig& config) {
    config.validate();
    NeckGraph g;
    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < config.in_stages.size(); ++i) frontier.push_back(g.add_entry("in" + std::to_string(i)));
    for (std::size_t l = 0; l < config.n; ++l) {
        const auto& in = l == 0 ? config.in_stages : config.out_stages;
        const std::size_t node = g.add_node("cf" + std::to_string(l), NodeKind::Fusion,
                                            cf_layer_param_count(in, config.out_stages, config.kernel));
        for (std::size_t f : frontier) g.add_edge(f, node);
        frontier.assign(1, node);
    }
    for (std::size_t t = 0; t < config.out_stages.size(); ++t)
        g.add_edge(frontier.front(), g.add_exit("out" + std::to_string(t)));
    return g;
}

NeckGraph build_fpn_panet_neck(std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                               std::size_t kernel) {
    validate_stages(in_stages, "in_stages");
    validate_stages(out_stages, "out_stages");
    if (in_stages.size() != out_stages.size())
        throw std::invalid_argument("FPN+PANet: needs as many output stages as input stages");
    auto conv_count = [&](std::size_t cin, std::size_t cout, std::size_t k) {
        ParamCount p;
        p.conv_weights = cin * cout * k * k;
        p.biases = cout;
        return p;
    };
    const std::size_t levels = in_stages.size();
    NeckGraph g;
    std::vector<std::size_t> entries, lateral, td(levels), bu(levels);
    for (std::size_t i = 0; i < levels; ++i) entries.push_back(g.add_entry("in" + std::to_string(i)));
    for (std::size_t i = 0; i < levels; ++i) {
        lateral.push_back(g.add_node("lateral" + std::to_string(i), NodeKind::Conv,
                                     conv_count(in_stages[i].channels, out_stages[i].channels, 1)));
        g.add_edge(entries[i], lateral[i]);
    }
    // top-down: td[i] merges lateral i with the level above
    td[levels - 1] = lateral[levels - 1];
    for (std::size_t i = levels - 1; i-- > 0;) {
        const std::size_t c = out_stages[i].channels;
        td[i] = g.add_node("td" + std::to_string(i), NodeKind::Fusion,
                           conv_count(out_stages[i + 1].channels, c, 1) + conv_count(c, c, kernel));
        g.add_edge(lateral[i], td[i]);
        g.add_edge(td[i + 1], td[i]);
    }
    // bottom-up: bu[i] merges td[i] with the level below
    bu[0] = td[0];
    for (std::size_t i = 1; i < levels; ++i) {
        const std::size_t c = out_stages[i].channels;
        bu[i] = g.add_node("bu" + std::to_string(i), NodeKind::Fusion,
                           conv_count(out_stages[i - 1].channels, c, kernel) + conv_count(c, c, kernel));
        g.add_edge(td[i], bu[i]);
        g.add_edge(bu[i - 1], bu[i]);
    }
    for (std::size_t i = 0; i < levels; ++i) g.add_edge(bu[i], g.add_exit("out" + std::to_string(i)));
    return g;
}

// ------------------------------------------------------------ overfit demo

namespace {

Tensor smoothed_target(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
    Tensor noise({1, c, h, w});
    for (double& v : noise.data()) v = rng.normal();
    Tensor out({1, c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                std::size_t k = 0;
                for (std::size_t yy = y ? y - 1 : 0; yy <= std::min(h - 1, y + 1); ++yy)
                    for (std::size_t xx = x ? x - 1 : 0; xx <= std::min(w - 1, x + 1); ++xx, ++k)
                        s += noise.at(0, ch, yy, xx);
                out.at(0, ch, y, x) = s / static_cast<double>(k);
            }
    return out;
}

struct Backbone {
    std::vector<ConvLayer> convs;
    std::vector<Tensor> slopes;
};

}  // namespace

DemoLog overfit_demo(const DemoOptions& options) {
    const CfConfig& config = options.config;
    config.validate();
    const std::size_t base = options.base_size;
    for (const auto& s : config.in_stages)
        if (base % s.scale != 0) throw std::invalid_argument("overfit_demo: base size not divisible by stage scales");
    for (const auto& s : config.out_stages)
        if (base % s.scale != 0) throw std::invalid_argument("overfit_demo: base size not divisible by stage scales");

    Rng rng(options.seed);
    Tensor image({1, 3, base, base});
    for (double& v : image.data()) v = rng.uniform();

    Backbone backbone;
    std::size_t prev = 3;
    for (const auto& s : config.in_stages) {
        backbone.convs.push_back(make_conv(rng, prev, s.channels, 3, true));
        backbone.slopes.emplace_back(Shape{s.channels}, kPreluInit);
        prev = s.channels;
    }
    CfNeck neck(config, rng.next());

    std::vector<Tensor> targets;
    for (const auto& t : config.out_stages)
        targets.push_back(smoothed_target(rng, t.channels, base / t.scale, base / t.scale));

    std::vector<Tensor*> params = neck.parameters();
    for (auto& conv : backbone.convs) add_conv(params, conv);
    for (auto& s : backbone.slopes) params.push_back(&s);

    Adam optimizer(params, options.lr);
    DemoLog log;
    for (std::size_t step = 0; step < options.steps; ++step) {
        Tape tape;
        ParamBinder binder(tape);
        std::vector<Var> stages;
        Var x = tape.leaf(image);
        for (std::size_t i = 0; i < config.in_stages.size(); ++i) {
            const std::size_t size = base / config.in_stages[i].scale;
            x = resize_to(x, size, size);
            x = prelu(conv2d(binder, x, backbone.convs[i]), binder.bind(backbone.slopes[i]));
            stages.push_back(x);
        }
        const auto outputs = neck.forward(binder, stages);
        std::vector<Var> terms;
        for (std::size_t t = 0; t < outputs.size(); ++t) terms.push_back(mse(outputs[t], targets[t]));
        const Var loss = affine(sum_all(terms), 1.0 / static_cast<double>(terms.size()), 0.0);
        const double value = loss.value().item();
        log.loss.push_back(value);
        if (!std::isfinite(value) || value > 10.0 * log.loss.front()) {
            log.aborted_step = step;
            log.diagnostic = "loss " + std::to_string(value) + " at step " + std::to_string(step) +
                             " diverged from initial " + std::to_string(log.loss.front());
            break;
        }
        tape.backward(loss);
        const auto grads = binder.grads(params);
        optimizer.step(grads);
    }
    return log;
}

}  // namespace snowfuse
