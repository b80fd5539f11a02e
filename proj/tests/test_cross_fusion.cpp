#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "snowfuse/cross_fusion.hpp"
#include "snowfuse/gradcheck.hpp"
#include "snowfuse/rng.hpp"

using namespace snowfuse;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
    Tensor t(shape);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

std::vector<Var> pyramid(Tape& tape, Rng& rng, std::span<const StageSpec> stages, std::size_t base) {
    std::vector<Var> xs;
    for (const auto& s : stages) xs.push_back(tape.leaf(random_tensor({1, s.channels, base / s.scale, base / s.scale}, rng)));
    return xs;
}

CfConfig random_config(Rng& rng) {
    CfConfig c;
    const std::size_t levels = 1 + rng.index(4);
    std::size_t scale = std::size_t{1} << rng.index(2);
    for (std::size_t i = 0; i < levels; ++i) {
        c.in_stages.push_back({1 + rng.index(6), scale});
        scale *= 2;
    }
    // outputs: a contiguous run of the input scales, possibly narrower
    const std::size_t first = rng.index(levels);
    const std::size_t count = 1 + rng.index(levels - first);
    for (std::size_t i = first; i < first + count; ++i)
        c.out_stages.push_back({2 * (1 + rng.index(4)), c.in_stages[i].scale});
    c.n = 1 + rng.index(3);
    c.kernel = rng.index(2) == 0 ? 1 : 3;
    return c;
}

}  // namespace

TEST_CASE("cf neck output shapes follow the output stages") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const CfConfig config = random_config(rng);
        REQUIRE_NOTHROW(config.validate());
        CfNeck neck(config, static_cast<std::uint64_t>(trial));
        Tape tape;
        ParamBinder binder(tape);
        const std::size_t base = 8 * config.in_stages.back().scale;
        const auto xs = pyramid(tape, rng, config.in_stages, base);
        const auto ys = neck.forward(binder, xs);
        REQUIRE(ys.size() == config.out_stages.size());
        for (std::size_t t = 0; t < ys.size(); ++t) {
            const auto& s = config.out_stages[t];
            CHECK(ys[t].value().shape() == Shape{1, s.channels, base / s.scale, base / s.scale});
            CHECK(ys[t].value().all_finite());
        }
    }
}

TEST_CASE("goctconv with identity weights copies a single stage") {
    const std::vector<StageSpec> stages{{3, 1}};
    Rng rng(32);
    GOctConvWeights w = init_goctconv(rng, stages, stages, 1);
    ConvLayer& conv = w.convs[0][0];
    conv.weight.fill(0.0);
    for (std::size_t c = 0; c < 3; ++c) conv.weight[c * 3 + c] = 1.0;
    if (conv.bias) conv.bias->fill(0.0);

    Tape tape;
    ParamBinder binder(tape);
    const Tensor x = random_tensor({1, 3, 5, 5}, rng);
    const std::vector<Var> in{tape.leaf(x)};
    CHECK(goctconv(binder, in, stages, stages, w)[0].value() == x);
}

TEST_CASE("zero weights propagate zeros through a cf layer") {
    const CfConfig config = CfConfig::three_stage_default();
    Rng rng(33);
    CfLayerWeights w = init_cf_layer(rng, config.in_stages, config.out_stages, 3);
    for (Tensor* p : w.parameters()) p->fill(0.0);
    Tape tape;
    ParamBinder binder(tape);
    const auto xs = pyramid(tape, rng, config.in_stages, 16);
    for (const Var& y : cf_layer(binder, xs, w))
        for (double v : y.value().data()) CHECK(v == 0.0);
}

TEST_CASE("goctconv rejects mismatched inputs") {
    const CfConfig config = CfConfig::three_stage_default();
    Rng rng(34);
    const GOctConvWeights w = init_goctconv(rng, config.in_stages, config.out_stages, 1);
    Tape tape;
    ParamBinder binder(tape);
    auto xs = pyramid(tape, rng, config.in_stages, 16);
    xs[1] = tape.leaf(Tensor({1, 5, 8, 8}, 0.0));
    CHECK_THROWS_AS(goctconv(binder, xs, config.in_stages, config.out_stages, w), ShapeError);
    xs.pop_back();
    CHECK_THROWS_AS(goctconv(binder, xs, config.in_stages, config.out_stages, w), std::invalid_argument);
}

TEST_CASE("csp block") {
    Rng rng(35);
    CHECK_THROWS_AS(init_csp(rng, 5), std::invalid_argument);

    CspWeights zero = init_csp(rng, 4);
    for (ConvLayer* c : {&zero.reduce_a, &zero.reduce_b, &zero.bottleneck_in, &zero.bottleneck_out, &zero.fuse}) {
        c->weight.fill(0.0);
        if (c->bias) c->bias->fill(0.0);
    }
    {
        Tape tape;
        ParamBinder binder(tape);
        const Var y = csp_block(binder, tape.leaf(random_tensor({1, 4, 6, 6}, rng)), zero);
        CHECK(y.value() == Tensor({1, 4, 6, 6}, 0.0));
    }

    const CspWeights w = init_csp(rng, 4);
    const Tensor probe = random_tensor({1, 4, 6, 6}, rng);
    const auto f = [&](Tape& tape, std::span<const Var> p) {
        ParamBinder binder(tape);
        return dot(csp_block(binder, p[0], w), probe);
    };
    CHECK(finite_diff_check(f, {random_tensor({1, 4, 6, 6}, rng)}).max_relative_error <= 1e-6);
}

TEST_CASE("every exit depends on every input") {
    const CfConfig config = CfConfig::three_stage_default();
    CfNeck neck(config, 3);
    Rng rng(36);
    for (std::size_t exit = 0; exit < config.out_stages.size(); ++exit) {
        Tape tape;
        ParamBinder binder(tape);
        const auto xs = pyramid(tape, rng, config.in_stages, 16);
        const auto ys = neck.forward(binder, xs);
        tape.backward(dot(ys[exit], random_tensor(ys[exit].value().shape(), rng)));
        for (const Var& x : xs) {
            double norm = 0.0;
            const Tensor g = tape.grad(x);
            for (double v : g.data()) norm += std::abs(v);
            CHECK(norm > 1e-10);
        }
    }
}

TEST_CASE("cf layer gradient matches finite differences") {
    CfConfig config;
    config.in_stages = {{2, 1}, {3, 2}};
    config.out_stages = {{2, 1}, {4, 2}};
    Rng rng(37);
    CfLayerWeights w = init_cf_layer(rng, config.in_stages, config.out_stages, 3);
    const Tensor p0 = random_tensor({1, 2, 4, 4}, rng), p1 = random_tensor({1, 4, 2, 2}, rng);
    const auto f = [&](Tape& tape, std::span<const Var> p) {
        ParamBinder binder(tape);
        const auto ys = cf_layer(binder, p, w);
        return add(dot(ys[0], p0), dot(ys[1], p1));
    };
    const auto r = finite_diff_check(f, {random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 3, 2, 2}, rng)});
    CHECK(r.checked > 40);
    CHECK(r.max_relative_error <= 1e-5);
}

TEST_CASE("neck graphs") {
    const CfConfig config = CfConfig::three_stage_default();
    const NeckGraph cf = build_cf_neck(config);
    CHECK(cf.is_well_formed());
    CHECK(cf.count(NodeKind::Fusion) == config.n);
    CHECK(max_path_length(cf) == config.n);

    CfConfig single = config;
    single.n = 1;
    const NeckGraph one = build_cf_neck(single);
    for (const auto& row : path_length_matrix(one))
        for (std::size_t d : row) CHECK(d == 1);

    const NeckGraph fpn = build_fpn_panet_neck(config.in_stages, config.out_stages, 3);
    CHECK(fpn.is_well_formed());
    CHECK(fpn.count(NodeKind::Fusion) == 2 * (config.in_stages.size() - 1));
    CHECK(fpn.count(NodeKind::Conv) >= config.in_stages.size());
    CHECK(path_length(fpn, 0, 2) >= 2);
    CHECK(max_path_length(fpn) == 3);
    const auto cf_single = path_length_matrix(one);
    const auto fpn_paths = path_length_matrix(fpn);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(cf_single[i][j] <= fpn_paths[i][j]);

    CHECK_THROWS_AS(path_length(cf, 7, 0), std::out_of_range);
    NeckGraph broken;
    broken.add_entry("in");
    broken.add_exit("out");
    CHECK_FALSE(broken.is_well_formed());
    CHECK_THROWS_AS(path_length(broken, 0, 0), std::runtime_error);
}

TEST_CASE("both necks produce the same output shapes") {
    const CfConfig config = CfConfig::three_stage_default();
    CfNeck cf(config, 1);
    FpnPanetNeck fpn(config.in_stages, config.out_stages, 3, 1);
    Rng rng(38);
    Tape tape;
    ParamBinder binder(tape);
    const auto xs = pyramid(tape, rng, config.in_stages, 16);
    const auto a = cf.forward(binder, xs);
    const auto b = fpn.forward(binder, xs);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value().shape() == b[i].value().shape());
    CHECK_THROWS(FpnPanetNeck({{4, 1}, {4, 2}}, {{4, 1}, {4, 4}}, 3, 0));
}

TEST_CASE("parameter counts") {
    const std::vector<StageSpec> four{{4, 1}};
    Rng rng(39);
    const GOctConvWeights single = init_goctconv(rng, four, four, 1);
    CHECK(count_params(single).conv_weights == 16);
    CHECK(count_params(single).biases == 4);

    const CfConfig config = CfConfig::three_stage_default();
    const std::size_t k1 = goctconv_weight_count(config.in_stages, config.out_stages, 1);
    CHECK(k1 == 56 * 56);
    for (std::size_t k : {3u, 5u}) CHECK(goctconv_weight_count(config.in_stages, config.out_stages, k) == k * k * k1);

    Rng rng2(40);
    for (int trial = 0; trial < 10; ++trial) {
        const CfConfig c = random_config(rng2);
        const CfLayerWeights w = init_cf_layer(rng2, c.in_stages, c.out_stages, c.kernel);
        CHECK(count_params(w) == cf_layer_param_count(c.in_stages, c.out_stages, c.kernel));
        CHECK(count_params(w.goct).conv_weights == goctconv_weight_count(c.in_stages, c.out_stages, c.kernel));
        CfNeck neck(c, 0);
        CHECK(count_params(neck) == build_cf_neck(c).total_params());
        std::size_t enumerated = 0;
        for (Tensor* p : neck.parameters()) enumerated += p->size();
        CHECK(enumerated == count_params(neck).total());
    }

    FpnPanetNeck fpn(config.in_stages, config.out_stages, 3, 0);
    CHECK(count_params(fpn) == build_fpn_panet_neck(config.in_stages, config.out_stages, 3).total_params());

    std::size_t last = 0;
    for (std::size_t k : {1u, 3u, 5u}) {
        CfConfig c = config;
        c.kernel = k;
        const std::size_t total = build_cf_neck(c).total_params().total();
        CHECK(total > last);
        last = total;
    }
}

TEST_CASE("config parsing and validation") {
    const CfConfig c = parse_cf_config("# pyramid\nin_channels = 4, 8\nin_scales = 1 2\nout_channels = 6\n"
                                       "out_scales = 2\nn = 3\nK = 3\n");
    CHECK(c.in_stages == std::vector<StageSpec>{{4, 1}, {8, 2}});
    CHECK(c.out_stages == std::vector<StageSpec>{{6, 2}});
    CHECK(c.n == 3);
    CHECK(c.kernel == 3);
    CHECK(parse_cf_config(format_cf_config(c)) == c);

    const CfConfig defaults = parse_cf_config("in_channels = 8,16,32\nin_scales = 1,2,4\n");
    CHECK(defaults == CfConfig::three_stage_default());

    CHECK_THROWS_AS(parse_cf_config("in_channels = 8\nin_scales = 1\ncolour = red\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_cf_config("in_channels = 8\nin_scales = 1\nK = 2\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_cf_config("in_channels = 8, 16\nin_scales = 1, 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_cf_config("in_channels = 8, 16\nin_scales = 2, 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_cf_config("in_channels = 8, 16\nin_scales = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_cf_config("in_channels = 7\nin_scales = 1\n"), std::invalid_argument);
    try {
        parse_cf_config("in_channels = 8\n\nbogus = 1\n");
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("overfit demo") {
    DemoOptions options;
    const DemoLog log = overfit_demo(options);
    REQUIRE(log.ok());
    CHECK(log.loss.size() == options.steps);
    CHECK(log.final() < 0.01);
    CHECK(log.final() < log.initial());

    DemoOptions short_run;
    short_run.steps = 20;
    CHECK(overfit_demo(short_run) == overfit_demo(short_run));

    short_run.lr = 0.0;
    const DemoLog flat = overfit_demo(short_run);
    for (double l : flat.loss) CHECK(l == flat.loss.front());
}
