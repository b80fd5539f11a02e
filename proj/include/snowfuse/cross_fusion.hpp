#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snowfuse/neck_graph.hpp"
#include "snowfuse/ops.hpp"
#include "snowfuse/params.hpp"

namespace snowfuse {

class Rng;

/// One pyramid level: channel width and downsampling factor w.r.t. stage 1.
struct StageSpec {
    std::size_t channels = 0;
    std::size_t scale = 1;

    friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Cross Fusion neck description.
struct CfConfig {
    std::vector<StageSpec> in_stages;
    std::vector<StageSpec> out_stages;
    std::size_t n = 2;       // stacked CF layers
    std::size_t kernel = 1;  // gOctConv kernel size K

    /// Throws std::invalid_argument: empty stage lists, zero channels,
    /// non-power-of-two or non-increasing scales, n = 0, even K, odd output
    /// channels (CSP halves them).
    void validate() const;

    /// Three stages 8/16/32 channels at scales 1/2/4, n = 2, K = 1.
    static CfConfig three_stage_default();

    friend bool operator==(const CfConfig&, const CfConfig&) = default;
};

/// Plain-text "key = value" form:
///   in_channels = 8, 16, 32
///   in_scales = 1, 2, 4
///   out_channels = 8, 16, 32
///   out_scales = 1, 2, 4
///   n = 2
///   K = 1
/// '#' starts a comment. Missing out_* keys default to the in_* values.
CfConfig parse_cf_config(const std::string& text);
CfConfig load_cf_config(const std::filesystem::path& path);
std::string format_cf_config(const CfConfig& config);

// ---------------------------------------------------------------- weights

/// convs[t][s] maps input stage s to output stage t; each has its own weights.
struct GOctConvWeights {
    std::vector<std::vector<ConvLayer>> convs;
};

/// Two 1x1 reductions to C/2, a 1x1 -> 3x3 bottleneck with residual add on
/// the first half, concat, and a 1x1 fuse back to C.
struct CspWeights {
    ConvLayer reduce_a;
    ConvLayer reduce_b;
    ConvLayer bottleneck_in;
    ConvLayer bottleneck_out;
    ConvLayer fuse;
};

struct CfBranchWeights {
    Tensor bn_gamma;
    Tensor bn_beta;
    RunningStats bn_stats{1};
    Tensor prelu_slope;
    CspWeights csp;
};

struct CfLayerWeights {
    std::vector<StageSpec> in_stages;
    std::vector<StageSpec> out_stages;
    std::size_t kernel = 1;
    GOctConvWeights goct;
    std::vector<CfBranchWeights> branches;  // one per out stage

    std::vector<Tensor*> parameters();
};

GOctConvWeights init_goctconv(Rng& rng, std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                              std::size_t kernel);
CspWeights init_csp(Rng& rng, std::size_t channels);
CfLayerWeights init_cf_layer(Rng& rng, std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                             std::size_t kernel);

// --------------------------------------------------------------- forward

/// Y_t = sum_s Conv_{s,t}(Resize_{s->t}(X_s)). Spatial sizes are derived from
/// input 0: base = size(X_0) * scale_0, size(Y_t) = base / scale_t.
std::vector<Var> goctconv(ParamBinder& binder, std::span<const Var> inputs, std::span<const StageSpec> in_stages,
                          std::span<const StageSpec> out_stages, const GOctConvWeights& weights);

Var csp_block(ParamBinder& binder, Var input, const CspWeights& weights);

/// Per output branch: gOctConv sum -> BN -> PReLU -> CSP.
std::vector<Var> cf_layer(ParamBinder& binder, std::span<const Var> inputs, CfLayerWeights& weights,
                          NormMode mode = NormMode::Training);

// ----------------------------------------------------------------- necks

/// n stacked CF layers: the first maps in_stages to out_stages, the rest map
/// out_stages to out_stages.
class CfNeck {
public:
    CfNeck(const CfConfig& config, std::uint64_t seed);

    const CfConfig& config() const { return config_; }
    std::vector<CfLayerWeights>& layers() { return layers_; }
    const std::vector<CfLayerWeights>& layers() const { return layers_; }

    std::vector<Var> forward(ParamBinder& binder, std::span<const Var> inputs, NormMode mode = NormMode::Training);
    std::vector<Tensor*> parameters();

private:
    CfConfig config_;
    std::vector<CfLayerWeights> layers_;
};

/// FPN top-down pathway followed by a PANet bottom-up pathway. In and out
/// stages must share scales; fusion convs use `kernel`.
class FpnPanetNeck {
public:
    FpnPanetNeck(std::vector<StageSpec> in_stages, std::vector<StageSpec> out_stages, std::size_t kernel,
                 std::uint64_t seed);

    std::vector<Var> forward(ParamBinder& binder, std::span<const Var> inputs);
    std::vector<Tensor*> parameters();

    // With L stages: lateral has L entries, the others L - 1.
    std::vector<ConvLayer> lateral;    // [i]: in_i -> out_i, 1x1
    std::vector<ConvLayer> td_reduce;  // [i]: out_{i+1} -> out_i, 1x1, then upsample
    std::vector<ConvLayer> td_fuse;    // [i]: out_i -> out_i, K x K
    std::vector<ConvLayer> bu_down;    // [i]: out_i -> out_{i+1} after avg-pool
    std::vector<ConvLayer> bu_fuse;    // [i]: out_{i+1} -> out_{i+1}, K x K

    const std::vector<StageSpec>& in_stages() const { return in_; }
    const std::vector<StageSpec>& out_stages() const { return out_; }
    std::size_t kernel() const { return kernel_; }

private:
    std::vector<StageSpec> in_;
    std::vector<StageSpec> out_;
    std::size_t kernel_;
};

/// One Fusion node per CF layer. Node parameter counts are closed-form.
NeckGraph build_cf_neck(const CfConfig& config);
/// Lateral convs, one Fusion node per top-down merge and per bottom-up merge.
NeckGraph build_fpn_panet_neck(std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                               std::size_t kernel = 3);

// -------------------------------------------------------- parameter counts

ParamCount count_params(const ConvLayer& conv);
ParamCount count_params(const GOctConvWeights& weights);
ParamCount count_params(const CspWeights& weights);
ParamCount count_params(const CfLayerWeights& weights);
ParamCount count_params(const CfNeck& neck);
ParamCount count_params(const FpnPanetNeck& neck);

/// Closed form: sum over (s, t) of c_in[s] * c_out[t] * K^2.
std::size_t goctconv_weight_count(std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                                  std::size_t kernel);
/// Closed-form count of one CF layer, without materializing weights.
ParamCount cf_layer_param_count(std::span<const StageSpec> in_stages, std::span<const StageSpec> out_stages,
                                std::size_t kernel);

// ------------------------------------------------------------ overfit demo

struct DemoOptions {
    CfConfig config = CfConfig::three_stage_default();
    std::size_t base_size = 16;
    std::size_t steps = 500;
    double lr = 0.01;  // Adam step size
    std::uint64_t seed = 0;
};

struct DemoLog {
    std::vector<double> loss;  // one entry per step, measured before the update
    std::optional<std::size_t> aborted_step;
    std::string diagnostic;

    bool ok() const { return !aborted_step.has_value(); }
    double initial() const { return loss.empty() ? 0.0 : loss.front(); }
    double final() const { return loss.empty() ? 0.0 : loss.back(); }
    friend bool operator==(const DemoLog&, const DemoLog&) = default;
};

/// Tiny 3-stage conv backbone plus a CF neck regressing fixed smoothed random
/// targets per output stage under MSE, trained with Adam. Aborts when the loss
/// exceeds 10x its initial value or stops being finite.
DemoLog overfit_demo(const DemoOptions& options);

}  // namespace snowfuse
