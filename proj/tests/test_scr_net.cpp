#include <doctest.h>

#include <filesystem>

#include "snowfuse/activation.hpp"
#include "snowfuse/gradcheck.hpp"
#include "snowfuse/scr_net.hpp"
#include "snowfuse/synthetic.hpp"

using namespace snowfuse;
namespace fs = std::filesystem;

namespace {

std::vector<ConvLeaves> zero_leaves(Tape& tape, std::size_t count, double first_value = 0.0) {
    std::vector<ConvLeaves> leaves;
    for (std::size_t i = 0; i < count; ++i) {
        Tensor w({2, 2, 1, 1}, 0.0);
        if (i == 0) w[0] = first_value;
        leaves.push_back({tape.leaf(w), tape.leaf(Tensor({2}, 0.0))});
    }
    return leaves;
}

// Channel 5 of the last layer copies the mean input intensity through the
// centre taps; every other weight is zero.
ScrModel white_detector() {
    ScrModel m = build_scr_model(0, {.with_bias = false, .init_gain = 1.0});
    for (auto& l : m.layers) l.weight.fill(0.0);
    for (std::size_t c = 0; c < 3; ++c) m.layers[0].weight[(0 * 3 + c) * 9 + 4] = 1.0 / 3.0;
    m.layers[1].weight[(0 * 16 + 0) * 9 + 4] = 1.0;
    m.layers[2].weight[(0 * 32 + 0) * 9 + 4] = 1.0;
    m.layers[3].weight[(5 * 32 + 0) * 9 + 4] = 1.0;
    return m;
}

}  // namespace

TEST_CASE("scr model architecture and parameter counts") {
    const ScrModel m = build_scr_model(0);
    CHECK(m.architecture() == "3-16-32-32-32");
    CHECK(m.layers.size() == 4);
    for (const auto& l : m.layers) {
        CHECK(l.kernel() == 3);
        CHECK(l.padding == 1);
        CHECK(l.stride == 1);
    }
    CHECK(m.param_count() == 3 * 16 * 9 + 16 * 32 * 9 + 32 * 32 * 9 + 32 * 32 * 9);
    CHECK(m.param_count() == 23472);
    const ScrModel with_bias = build_scr_model(0, {.with_bias = true});
    CHECK(with_bias.param_count() == 23584);
    std::size_t enumerated = 0;
    for (const Tensor* p : with_bias.parameters()) enumerated += p->size();
    CHECK(enumerated == 23584);
}

TEST_CASE("scr model is deterministic and size preserving") {
    const ScrModel a = build_scr_model(5), b = build_scr_model(5), c = build_scr_model(6);
    for (std::size_t i = 0; i < a.layers.size(); ++i) CHECK(a.layers[i].weight == b.layers[i].weight);
    CHECK_FALSE(a.layers[0].weight == c.layers[0].weight);

    for (auto [h, w] : {std::pair{3, 3}, std::pair{5, 9}, std::pair{16, 7}}) {
        Tape tape;
        const ScrGraph g = scr_forward(tape, a, tape.leaf(Tensor({1, 3, std::size_t(h), std::size_t(w)}, 0.4)));
        CHECK(g.testing_head.value().shape() == Shape{1, 32, std::size_t(h), std::size_t(w)});
        CHECK(g.training_head.value().shape() == Shape{1, 1, std::size_t(h), std::size_t(w)});
        for (double v : g.training_head.value().data()) CHECK(v <= 1.0);
    }
}

TEST_CASE("scr loss arithmetic") {
    LossSpec spec;
    {
        Tape tape;
        const auto leaves = zero_leaves(tape, 2);
        Var o = tape.leaf(Tensor({1, 1, 3, 3}, 1.0));
        CHECK(scr_loss(o, leaves, spec).value().item() == 0.0);
    }
    {
        Tape tape;
        const auto leaves = zero_leaves(tape, 2);
        Var o = tape.leaf(Tensor({1, 1, 3, 3}, 0.0));
        CHECK(scr_loss(o, leaves, spec).value().item() == 1.0);
    }
    {
        Tape tape;
        const auto leaves = zero_leaves(tape, 2, 2.0);
        Var o = tape.leaf(Tensor({1, 1, 3, 3}, 0.0));
        CHECK(scr_loss(o, leaves, spec).value().item() == doctest::Approx(1.0002).epsilon(1e-12));
    }
    CHECK_THROWS(LossSpec{0.0, 1e-4}.validate());
    CHECK_THROWS(LossSpec{1.0, -1.0}.validate());
}

TEST_CASE("full scr loss gradient matches finite differences") {
    Rng rng(3);
    const SnowScene scene = make_snow_scene(rng, 8, 8, 0.5);
    const ScrModel model = build_scr_model(1, {.with_bias = true});
    std::vector<Tensor> params;
    for (const Tensor* p : model.parameters()) params.push_back(*p);
    params.push_back(scene.image.reshaped({1, 3, 8, 8}));

    const auto f = [&](Tape&, std::span<const Var> p) {
        Var x = p.back();
        std::vector<ConvLeaves> leaves;
        for (std::size_t i = 0; i < model.layers.size(); ++i) {
            leaves.push_back({p[2 * i], p[2 * i + 1]});
            x = peak_act(conv2d(x, leaves.back(), model.layers[i]));
        }
        return scr_loss(max_over_channels(x), leaves, LossSpec{});
    };
    GradCheckOptions o;
    o.max_coords_per_param = 40;
    const auto r = finite_diff_check(f, params, o);
    CHECK(r.checked >= 200);
    CHECK(r.max_relative_error <= 1e-3);
}

TEST_CASE("training with zero epochs leaves the model unchanged") {
    ScrModel m = build_scr_model(2);
    const ScrModel before = m;
    const auto scenes = make_snow_set(4, 2, 8, 8, 0.85, 0.98);
    const TrainingLog log = train_scr(m, images_of(scenes), {.lr = 0.01, .epochs = 0});
    CHECK(log.epoch_loss.empty());
    CHECK(log.ok());
    for (std::size_t i = 0; i < m.layers.size(); ++i) CHECK(m.layers[i].weight == before.layers[i].weight);
    CHECK_THROWS(train_scr(m, std::span<const Tensor>{}, {}));
}

TEST_CASE("training is deterministic and lowers the loss") {
    const auto images = images_of(make_snow_set(7, 4, 16, 16, 0.85, 0.98));
    ScrModel a = build_scr_model(3), b = build_scr_model(3);
    const TrainOptions opts{.lr = 0.01, .epochs = 5, .seed = 9};
    const TrainingLog la = train_scr(a, images, opts);
    const TrainingLog lb = train_scr(b, images, opts);
    CHECK(la == lb);
    CHECK(la.final_loss() < la.initial_loss);
}

TEST_CASE("training on all-white images fits the all-ones target") {
    std::vector<Tensor> white(4, Tensor({3, 8, 8}, 1.0));
    ScrModel m = build_scr_model(4);
    const TrainingLog log = train_scr(m, white, {.lr = 0.01, .epochs = 200, .seed = 0});
    REQUIRE(log.ok());
    Tape tape;
    const ScrGraph g = scr_forward(tape, m, tape.leaf(Tensor({1, 3, 8, 8}, 1.0)));
    double mean_out = 0.0;
    for (double v : g.training_head.value().data()) mean_out += v;
    mean_out /= 64.0;
    CHECK(mean_out >= 0.9);
}

TEST_CASE("L1 term alone shrinks the parameters") {
    // black images map to zero through every bias-free layer, so the data
    // term is frozen at alpha and only the L1 term has a gradient
    std::vector<Tensor> black(2, Tensor({3, 6, 6}, 0.0));
    ScrModel m = build_scr_model(5);
    auto l1 = [](const ScrModel& model) {
        double s = 0.0;
        for (const Tensor* p : model.parameters())
            for (double v : p->data()) s += std::abs(v);
        return s;
    };
    const double before = l1(m);
    const TrainingLog log = train_scr(m, black, {.lr = 0.01, .epochs = 1, .seed = 0});
    CHECK(l1(m) < before);
    CHECK(log.epoch_loss.front() >= 1.0);
}

TEST_CASE("non-finite loss aborts training with a diagnostic") {
    ScrModel m = build_scr_model(6);
    m.layers[0].weight[0] = std::numeric_limits<double>::infinity();
    std::vector<Tensor> imgs(1, Tensor({3, 4, 4}, 0.5));
    const TrainingLog log = train_scr(m, imgs, {.lr = 0.01, .epochs = 3});
    CHECK_FALSE(log.ok());
    CHECK(log.diagnostic.find("non-finite") != std::string::npos);
}

TEST_CASE("channel selection on a constructed white detector") {
    ScrModel m = white_detector();
    const std::vector<Tensor> white(2, Tensor({3, 6, 6}, 1.0));
    const std::vector<Tensor> black(2, Tensor({3, 6, 6}, 0.0));
    const ChannelSelection sel = select_snow_channel(m, white, black);
    CHECK(sel.channel == 5);
    CHECK(m.selected_channel == 5u);
    CHECK(sel.scores[5] == 1.0);
    CHECK_FALSE(sel.weak);

    const SnowMap map = infer_snow_map(m, Tensor({3, 6, 6}, 1.0));
    CHECK(map.binary.count() == 36);
    // each layer squares a response in [0, 1), so dimmer input falls away quickly
    CHECK(infer_snow_map(m, Tensor({3, 6, 6}, 0.5)).binary.count() == 0);
}

TEST_CASE("identical calibration sets tie toward channel 0") {
    ScrModel m = build_scr_model(7);
    const std::vector<Tensor> same(1, Tensor({3, 6, 6}, 0.6));
    const ChannelSelection sel = select_snow_channel(m, same, same);
    CHECK(sel.channel == 0);
    CHECK(sel.weak);
    for (double s : sel.scores) CHECK(s == 0.0);
    CHECK_THROWS(select_snow_channel(m, same, std::span<const Tensor>{}));
}

TEST_CASE("inference needs a selected channel and zero maps to zero") {
    ScrModel m = build_scr_model(8);
    CHECK_THROWS_AS(infer_snow_map(m, Tensor({3, 4, 4}, 0.5)), std::invalid_argument);
    for (auto& l : m.layers) l.weight.fill(0.0);
    m.selected_channel = 3;
    const SnowMap map = infer_snow_map(m, Tensor({3, 4, 4}, 0.0));
    for (double v : map.response.data()) CHECK(v == 0.0);
    CHECK(map.binary.count() == 0);
}

TEST_CASE("binarize thresholds at value >= threshold") {
    const BinaryMap b = binarize(Tensor({1, 2}, std::vector<double>{0.4, 0.6}), 0.5);
    CHECK(b.pixels == std::vector<std::uint8_t>{0, 1});
    CHECK(binarize(Tensor({1, 1}, 0.5), 0.5).pixels[0] == 1);
}

TEST_CASE("checkpoint round-trip") {
    const fs::path dir = fs::temp_directory_path() / "snowfuse_ckpt_test";
    fs::remove_all(dir);
    ScrModel m = build_scr_model(9, {.with_bias = true});
    m.selected_channel = 31;
    m.binarize_threshold = 0.375;
    save_checkpoint(m, dir);
    const ScrModel back = load_checkpoint(dir);
    CHECK(back.selected_channel == 31u);
    CHECK(back.binarize_threshold == 0.375);
    REQUIRE(back.layers.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back.layers[i].weight == m.layers[i].weight);
        CHECK(back.layers[i].bias == m.layers[i].bias);
    }

    ScrModel none = build_scr_model(9);
    save_checkpoint(none, dir / "none");
    CHECK_FALSE(load_checkpoint(dir / "none").selected_channel.has_value());
    CHECK_THROWS(load_checkpoint(dir / "missing"));
    fs::remove_all(dir);
}

TEST_CASE("synthetic scenes reach the requested coverage") {
    Rng rng(10);
    const SnowScene s = make_snow_scene(rng, 32, 32, 0.5);
    CHECK(s.mask.count() >= 512);
    const SnowScene clean = make_snow_scene(rng, 32, 32, 0.0);
    CHECK(clean.mask.count() == 0);
    for (double v : s.image.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}
