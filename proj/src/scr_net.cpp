#include "snowfuse/scr_net.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "snowfuse/rng.hpp"
#include "snowfuse/serialize.hpp"

namespace snowfuse {

namespace {

constexpr std::size_t kWidths[] = {3, 16, 32, 32, 32};

Tensor as_batch(const Tensor& image) {
    if (image.rank() == 4) return image;
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("expected a 3 x H x W image, got " + shape_to_string(image.shape()));
    }
    return image.reshaped({1, 3, image.dim(1), image.dim(2)});
}

Tensor testing_head(const ScrModel& model, const Tensor& image) {
    Tape tape;
    const ScrGraph g = scr_forward(tape, model, tape.leaf(as_batch(image)));
    return g.testing_head.value();
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

std::string ScrModel::architecture() const {
    if (layers.empty()) return "";
    std::string s = std::to_string(layers.front().in_channels());
    for (const auto& l : layers) s += "-" + std::to_string(l.out_channels());
    return s;
}

std::size_t ScrModel::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
}

std::vector<Tensor*> ScrModel::parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers) {
        out.push_back(&l.weight);
        if (l.bias) out.push_back(&*l.bias);
    }
    return out;
}

std::vector<const Tensor*> ScrModel::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
        out.push_back(&l.weight);
        if (l.bias) out.push_back(&*l.bias);
    }
    return out;
}

void ScrModel::validate() const {
    if (layers.empty()) throw std::invalid_argument("SCR model has no layers");
    if (layers.front().in_channels() != 3) throw std::invalid_argument("SCR model must take RGB input");
    for (std::size_t i = 1; i < layers.size(); ++i) {
        if (layers[i].in_channels() != layers[i - 1].out_channels()) {
            throw std::invalid_argument("SCR model layer " + std::to_string(i) + " input width mismatch");
        }
    }
    for (const auto& l : layers) {
        if (l.stride != 1 || 2 * l.padding + 1 != l.kernel()) {
            throw std::invalid_argument("SCR model layers must preserve spatial size");
        }
    }
    if (layers.back().out_channels() != kScrChannels) {
        throw std::invalid_argument("SCR model must end in " + std::to_string(kScrChannels) + " channels");
    }
    if (selected_channel && *selected_channel >= kScrChannels) {
        throw std::invalid_argument("selected channel out of range");
    }
}

ScrModel build_scr_model(std::uint64_t seed, const ScrModelOptions& options) {
    if (!(options.init_gain > 0.0)) throw std::invalid_argument("init gain must be positive");
    Rng rng(seed);
    ScrModel model;
    for (std::size_t i = 0; i + 1 < std::size(kWidths); ++i) {
        ConvLayer layer;
        layer.weight = Tensor({kWidths[i + 1], kWidths[i], 3, 3});
        const double bound = options.init_gain / std::sqrt(static_cast<double>(kWidths[i] * 9));
        for (double& v : layer.weight.data()) v = rng.uniform(-bound, bound);
        if (options.with_bias) layer.bias = Tensor({kWidths[i + 1]}, 0.0);
        layer.stride = 1;
        layer.padding = 1;
        model.layers.push_back(std::move(layer));
    }
    return model;
}

void LossSpec::validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("loss alpha must be positive");
    if (!(beta >= 0.0)) throw std::invalid_argument("loss beta must be non-negative");
}

ScrGraph scr_forward(Tape& tape, const ScrModel& model, Var input) {
    ScrGraph g;
    Var x = input;
    for (const auto& layer : model.layers) {
        g.leaves.push_back(register_conv(tape, layer));
        x = peak_act(conv2d(x, g.leaves.back(), layer));
    }
    g.testing_head = x;
    g.training_head = max_over_channels(x);
    return g;
}

Var scr_loss(Var training_head, std::span<const ConvLeaves> leaves, const LossSpec& spec) {
    spec.validate();
    Var loss = affine(mean(training_head), -spec.alpha, spec.alpha);
    if (spec.beta > 0.0) {
        for (const auto& l : leaves) {
            loss = add(loss, affine(abs_sum(l.weight), spec.beta, 0.0));
            if (l.bias) loss = add(loss, affine(abs_sum(*l.bias), spec.beta, 0.0));
        }
    }
    return loss;
}

double evaluate_scr_loss(const ScrModel& model, std::span<const Tensor> images, const LossSpec& spec) {
    if (images.empty()) throw std::invalid_argument("no images to evaluate");
    double total = 0.0;
    for (const Tensor& img : images) {
        Tape tape;
        const ScrGraph g = scr_forward(tape, model, tape.leaf(as_batch(img)));
        total += scr_loss(g.training_head, g.leaves, spec).value().item();
    }
    return total / static_cast<double>(images.size());
}

TrainingLog train_scr(ScrModel& model, std::span<const Tensor> images, const TrainOptions& options) {
    if (images.empty()) throw std::invalid_argument("train_scr needs at least one image");
    model.validate();
    options.loss.validate();

    TrainingLog log;
    log.initial_loss = evaluate_scr_loss(model, images, options.loss);

    Rng rng(options.seed);
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::vector<Tensor*> params = model.parameters();

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double epoch_total = 0.0;
        for (std::size_t idx : order) {
            Tape tape;
            const ScrGraph g = scr_forward(tape, model, tape.leaf(as_batch(images[idx])));
            const Var loss = scr_loss(g.training_head, g.leaves, options.loss);
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                log.aborted_epoch = epoch;
                log.diagnostic = "non-finite loss at epoch " + std::to_string(epoch) + " on image " + std::to_string(idx);
                return log;
            }
            epoch_total += value;
            tape.backward(loss);
            std::vector<Tensor> grads;
            for (const auto& l : g.leaves) {
                grads.push_back(tape.grad(l.weight));
                if (l.bias) grads.push_back(tape.grad(*l.bias));
            }
            sgd_step(params, grads, options.lr, 0.0);
        }
        log.epoch_loss.push_back(epoch_total / static_cast<double>(images.size()));
    }
    return log;
}

BinaryMap binarize(const Tensor& response, double threshold) {
    if (response.rank() != 2) throw ShapeError("binarize expects an H x W map");
    BinaryMap map(response.dim(0), response.dim(1));
    for (std::size_t i = 0; i < response.size(); ++i) map.pixels[i] = response[i] >= threshold ? 1 : 0;
    return map;
}

std::vector<double> channel_activity(const ScrModel& model, std::span<const Tensor> images) {
    if (images.empty()) throw std::invalid_argument("channel_activity needs at least one image");
    std::vector<double> activity(model.layers.back().out_channels(), 0.0);
    for (const Tensor& img : images) {
        const Tensor out = testing_head(model, img);
        const std::size_t c = out.dim(1), hw = out.dim(2) * out.dim(3);
        for (std::size_t ch = 0; ch < c; ++ch) {
            std::size_t on = 0;
            for (std::size_t i = 0; i < hw; ++i) on += out[ch * hw + i] >= model.binarize_threshold;
            activity[ch] += static_cast<double>(on) / static_cast<double>(hw);
        }
    }
    for (double& a : activity) a /= static_cast<double>(images.size());
    return activity;
}

ChannelSelection select_snow_channel(ScrModel& model, std::span<const Tensor> snow_calib,
                                     std::span<const Tensor> clean_calib) {
    if (snow_calib.empty() || clean_calib.empty()) {
        throw std::invalid_argument("channel selection needs non-empty snow and clean calibration sets");
    }
    const auto snow = channel_activity(model, snow_calib);
    const auto clean = channel_activity(model, clean_calib);
    ChannelSelection sel;
    sel.scores.resize(snow.size());
    for (std::size_t c = 0; c < snow.size(); ++c) {
        sel.scores[c] = snow[c] - clean[c];
        if (sel.scores[c] > sel.scores[sel.channel]) sel.channel = c;
    }
    sel.weak = sel.scores[sel.channel] <= 0.0;
    model.selected_channel = sel.channel;
    return sel;
}

SnowMap infer_snow_map(const ScrModel& model, const Tensor& image) {
    if (!model.selected_channel) {
        throw std::invalid_argument("no snow channel selected; run channel selection or pass a channel override");
    }
    const Tensor out = testing_head(model, image);
    const std::size_t ch = *model.selected_channel;
    if (ch >= out.dim(1)) throw std::invalid_argument("selected channel out of range");
    const std::size_t h = out.dim(2), w = out.dim(3);
    Tensor response({h, w});
    std::copy_n(out.data().begin() + static_cast<long>(ch * h * w), h * w, response.data().begin());
    SnowMap map{response, binarize(response, model.binarize_threshold)};
    return map;
}

void save_checkpoint(const ScrModel& model, const std::filesystem::path& dir) {
    model.validate();
    std::filesystem::create_directories(dir);
    std::ofstream meta(dir / "meta.txt");
    if (!meta) throw std::runtime_error("cannot write " + (dir / "meta.txt").string());
    char threshold[64];
    std::snprintf(threshold, sizeof threshold, "%.17g", model.binarize_threshold);
    meta << "# snowfuse scr checkpoint\n"
         << "architecture = " << model.architecture() << "\n"
         << "kernel = " << model.layers.front().kernel() << "\n"
         << "selected_channel = " << (model.selected_channel ? std::to_string(*model.selected_channel) : "none") << "\n"
         << "binarize_threshold = " << threshold << "\n";
    if (!meta) throw std::runtime_error("failed writing checkpoint metadata");
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        save_tensor(dir / ("layer" + std::to_string(i) + ".weight.snft"), l.weight);
        if (l.bias) save_tensor(dir / ("layer" + std::to_string(i) + ".bias.snft"), *l.bias);
    }
}

ScrModel load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream meta(dir / "meta.txt");
    if (!meta) throw std::runtime_error("no checkpoint metadata at " + (dir / "meta.txt").string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(meta, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("checkpoint metadata: expected key = value", line_no, "line");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    for (const char* key : {"architecture", "kernel", "selected_channel", "binarize_threshold"}) {
        if (!kv.count(key)) throw std::runtime_error(std::string("checkpoint metadata is missing '") + key + "'");
    }

    std::vector<std::size_t> widths;
    std::istringstream arch(kv["architecture"]);
    for (std::string tok; std::getline(arch, tok, '-');) widths.push_back(std::stoul(tok));
    const std::size_t k = std::stoul(kv["kernel"]);

    ScrModel model;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        ConvLayer layer;
        layer.weight = load_tensor(dir / ("layer" + std::to_string(i) + ".weight.snft"));
        if (layer.weight.shape() != Shape{widths[i + 1], widths[i], k, k}) {
            throw std::runtime_error("checkpoint layer " + std::to_string(i) + " has shape " +
                                     shape_to_string(layer.weight.shape()) + ", expected from architecture string");
        }
        const auto bias_path = dir / ("layer" + std::to_string(i) + ".bias.snft");
        if (std::filesystem::exists(bias_path)) {
            layer.bias = load_tensor(bias_path);
            if (layer.bias->shape() != Shape{widths[i + 1]}) throw std::runtime_error("checkpoint bias shape mismatch");
        }
        layer.stride = 1;
        layer.padding = k / 2;
        model.layers.push_back(std::move(layer));
    }
    if (kv["selected_channel"] != "none") model.selected_channel = std::stoul(kv["selected_channel"]);
    model.binarize_threshold = std::stod(kv["binarize_threshold"]);
    model.validate();
    return model;
}

}  // namespace snowfuse
