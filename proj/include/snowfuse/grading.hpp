#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snowfuse/annotations.hpp"
#include "snowfuse/image_io.hpp"

namespace snowfuse {

struct ScrModel;

enum class DifficultyLevel { Easy = 0, Normal = 1, Difficult = 2, ParticularlyDifficult = 3 };

/// "easy", "normal", "difficult", "particularly_difficult"
const char* to_string(DifficultyLevel level);
DifficultyLevel parse_difficulty(const std::string& name);

enum class ScrAggregate { MaxObjectScr, MeanObjectScr };

/// "max" / "mean"
const char* to_string(ScrAggregate aggregate);
ScrAggregate parse_aggregate(const std::string& name);

struct GradingPolicy {
    double t1 = 0.25;
    double t2 = 0.50;
    double t3 = 0.75;
    ScrAggregate aggregate = ScrAggregate::MaxObjectScr;

    /// Throws std::invalid_argument unless 0 < t1 < t2 < t3 < 1.
    void validate() const;
    /// Easy below t1, Normal below t2, Difficult below t3, else
    /// ParticularlyDifficult. A value on a threshold takes the upper level.
    DifficultyLevel level_for(double aggregate_scr) const;

    friend bool operator==(const GradingPolicy&, const GradingPolicy&) = default;
};

/// Snow pixels inside the box divided by the box area, both counted over the
/// pixels the box touches after clipping to the map: columns floor(x) to
/// ceil(x + w) - 1, rows likewise. Throws std::invalid_argument when the box
/// lies entirely outside the map or has a non-positive extent.
double scr_for_bbox(const BinaryMap& snow_map, const BBox& box);

struct ImageGrade {
    DifficultyLevel level = DifficultyLevel::Easy;
    double aggregate = 0.0;
    /// Set for images without labelled objects; they grade as Easy.
    bool no_objects = false;
};

ImageGrade grade_image(std::span<const double> scrs, const GradingPolicy& policy = {});

struct ImageGradeRecord {
    int image_id = 0;
    std::string file_name;
    std::vector<double> scrs;  // in annotation id order
    double aggregate = 0.0;
    DifficultyLevel level = DifficultyLevel::Easy;
    bool no_objects = false;

    friend bool operator==(const ImageGradeRecord&, const ImageGradeRecord&) = default;
};

struct SkippedImage {
    int image_id = 0;
    std::string file_name;
    std::string reason;

    friend bool operator==(const SkippedImage&, const SkippedImage&) = default;
};

struct GradingReport {
    GradingPolicy policy;
    std::vector<ImageGradeRecord> per_image;  // by image id
    std::vector<SkippedImage> skipped;        // by image id
    std::array<std::size_t, 4> histogram{};   // indexed by DifficultyLevel

    std::size_t graded() const { return per_image.size(); }
    friend bool operator==(const GradingReport&, const GradingReport&) = default;
};

/// Produces the binary snow map for one image. May be called concurrently.
using SnowMapSource = std::function<BinaryMap(const ImageRecord&)>;

/// Grades every image on up to `jobs` worker threads (0 picks the hardware
/// concurrency). A map source that throws, a map whose size differs from the
/// image record, or a box outside the image marks that image as skipped.
/// Throws ValidationError when the dataset itself is inconsistent.
GradingReport grade_dataset(const Dataset& dataset, const SnowMapSource& maps, const GradingPolicy& policy = {},
                            std::size_t jobs = 1);

/// Snow maps from `model` run on `images_dir / file_name`.
SnowMapSource model_snow_maps(const ScrModel& model, const std::filesystem::path& images_dir);

std::string grading_report_to_json(const GradingReport& report);
GradingReport parse_grading_report(const std::string& json_text);
void write_grading_report(const GradingReport& report, const std::filesystem::path& path);
GradingReport read_grading_report(const std::filesystem::path& path);

}  // namespace snowfuse
