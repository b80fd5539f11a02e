#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snowfuse/activation.hpp"
#include "snowfuse/image_io.hpp"
#include "snowfuse/ops.hpp"

namespace snowfuse {

inline constexpr std::size_t kScrChannels = 32;

/// Small fully convolutional network whose channels learn to respond to snow.
/// Every conv is followed by Peak Act. Training reads the per-pixel maximum
/// over channels; inference reads the raw 32-channel map.
struct ScrModel {
    std::vector<ConvLayer> layers;
    std::optional<std::size_t> selected_channel;
    double binarize_threshold = 0.5;

    /// e.g. "3-16-32-32-32"
    std::string architecture() const;
    std::size_t param_count() const;
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    /// Throws std::invalid_argument unless the layer stack is well formed and
    /// ends in kScrChannels channels.
    void validate() const;
};

struct ScrModelOptions {
    /// Without bias an all-zero input maps to an all-zero output.
    bool with_bias = false;
    /// Weights are uniform in +-init_gain / sqrt(fan_in). Biases start at 0.
    double init_gain = 2.0;
};

/// 3 -> 16 -> 32 -> 32 -> 32, 3x3 kernels, stride 1, pad 1.
ScrModel build_scr_model(std::uint64_t seed, const ScrModelOptions& options = {});

struct LossSpec {
    double alpha = 1.0;
    double beta = 1e-4;

    void validate() const;
};

struct ScrGraph {
    std::vector<ConvLeaves> leaves;
    Var testing_head;   // N x 32 x H x W
    Var training_head;  // N x 1 x H x W
};

/// `input` is N x 3 x H x W.
ScrGraph scr_forward(Tape& tape, const ScrModel& model, Var input);

/// alpha * mean(1 - O) + beta * sum |p| over every conv weight and bias.
/// The all-ones target is implicit.
Var scr_loss(Var training_head, std::span<const ConvLeaves> leaves, const LossSpec& spec);

struct TrainOptions {
    double lr = 0.01;
    std::size_t epochs = 200;
    std::uint64_t seed = 0;
    LossSpec loss;
};

struct TrainingLog {
    double initial_loss = 0.0;
    std::vector<double> epoch_loss;
    /// Set when a non-finite loss stopped training.
    std::optional<std::size_t> aborted_epoch;
    std::string diagnostic;

    bool ok() const { return !aborted_epoch.has_value(); }
    double final_loss() const { return epoch_loss.empty() ? initial_loss : epoch_loss.back(); }
    friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

/// Mean loss over `images` (each 3 x H x W) without updating the model.
double evaluate_scr_loss(const ScrModel& model, std::span<const Tensor> images, const LossSpec& spec);

/// Per-image SGD in a seeded shuffled order. Epoch loss is the mean of the
/// per-image losses seen during that epoch.
TrainingLog train_scr(ScrModel& model, std::span<const Tensor> images, const TrainOptions& options);

struct ChannelSelection {
    std::size_t channel = 0;
    std::vector<double> scores;
    /// True when no channel scored above zero.
    bool weak = false;
};

/// Mean binarised response of each channel over `images`.
std::vector<double> channel_activity(const ScrModel& model, std::span<const Tensor> images);

/// score(c) = activity over snow images - activity over clean images; the
/// best channel (lowest index on ties) is stored in model.selected_channel.
ChannelSelection select_snow_channel(ScrModel& model, std::span<const Tensor> snow_calib,
                                     std::span<const Tensor> clean_calib);

struct SnowMap {
    Tensor response;  // H x W
    BinaryMap binary;
};

/// Testing-head response of the selected channel, thresholded at
/// model.binarize_threshold (value >= threshold is snow).
SnowMap infer_snow_map(const ScrModel& model, const Tensor& image);
BinaryMap binarize(const Tensor& response, double threshold);

/// Directory with meta.txt plus one tensor file per weight and bias.
void save_checkpoint(const ScrModel& model, const std::filesystem::path& dir);
ScrModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace snowfuse
