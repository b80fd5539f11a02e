#include "snowfuse/grading.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "snowfuse/scr_net.hpp"

namespace snowfuse {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr DifficultyLevel kLevels[] = {DifficultyLevel::Easy, DifficultyLevel::Normal, DifficultyLevel::Difficult,
                                       DifficultyLevel::ParticularlyDifficult};

struct Outcome {
    std::optional<ImageGradeRecord> record;
    std::optional<SkippedImage> skipped;
};

Outcome grade_one(const ImageRecord& image, const std::vector<Annotation>& annotations, const SnowMapSource& maps,
                  const GradingPolicy& policy) {
    Outcome out;
    try {
        ImageGradeRecord rec;
        rec.image_id = image.id;
        rec.file_name = image.file_name;
        if (!annotations.empty()) {
            const BinaryMap map = maps(image);
            if (map.height != image.height || map.width != image.width)
                throw std::runtime_error("snow map is " + std::to_string(map.width) + "x" +
                                         std::to_string(map.height) + " but the image record says " +
                                         std::to_string(image.width) + "x" + std::to_string(image.height));
            for (const auto& a : annotations) {
                try {
                    rec.scrs.push_back(scr_for_bbox(map, a.box));
                } catch (const std::invalid_argument& e) {
                    throw std::runtime_error("annotation " + std::to_string(a.id) + ": " + e.what());
                }
            }
        }
        const ImageGrade g = grade_image(rec.scrs, policy);
        rec.aggregate = g.aggregate;
        rec.level = g.level;
        rec.no_objects = g.no_objects;
        out.record = std::move(rec);
    } catch (const std::exception& e) {
        out.skipped = SkippedImage{image.id, image.file_name, e.what()};
    }
    return out;
}

}  // namespace

const char* to_string(DifficultyLevel level) {
    switch (level) {
        case DifficultyLevel::Easy: return "easy";
        case DifficultyLevel::Normal: return "normal";
        case DifficultyLevel::Difficult: return "difficult";
        case DifficultyLevel::ParticularlyDifficult: return "particularly_difficult";
    }
    return "unknown";
}

DifficultyLevel parse_difficulty(const std::string& name) {
    for (DifficultyLevel l : kLevels)
        if (name == to_string(l)) return l;
    throw std::invalid_argument("unknown difficulty level '" + name + "'");
}

const char* to_string(ScrAggregate aggregate) {
    return aggregate == ScrAggregate::MaxObjectScr ? "max" : "mean";
}

ScrAggregate parse_aggregate(const std::string& name) {
    if (name == "max") return ScrAggregate::MaxObjectScr;
    if (name == "mean") return ScrAggregate::MeanObjectScr;
    throw std::invalid_argument("unknown aggregate '" + name + "' (expected max or mean)");
}

void GradingPolicy::validate() const {
    if (!(0.0 < t1 && t1 < t2 && t2 < t3 && t3 < 1.0))
        throw std::invalid_argument("grading thresholds must satisfy 0 < t1 < t2 < t3 < 1, got " + std::to_string(t1) +
                                    ", " + std::to_string(t2) + ", " + std::to_string(t3));
}

DifficultyLevel GradingPolicy::level_for(double a) const {
    if (a < t1) return DifficultyLevel::Easy;
    if (a < t2) return DifficultyLevel::Normal;
    if (a < t3) return DifficultyLevel::Difficult;
    return DifficultyLevel::ParticularlyDifficult;
}

double scr_for_bbox(const BinaryMap& snow_map, const BBox& box) {
    if (!(box.w > 0.0) || !(box.h > 0.0))
        throw std::invalid_argument("scr_for_bbox: box extent must be positive");
    const double x0 = std::max(0.0, std::floor(box.x));
    const double y0 = std::max(0.0, std::floor(box.y));
    const double x1 = std::min(static_cast<double>(snow_map.width), std::ceil(box.x + box.w));
    const double y1 = std::min(static_cast<double>(snow_map.height), std::ceil(box.y + box.h));
    if (!(x0 < x1) || !(y0 < y1))
        throw std::invalid_argument("scr_for_bbox: box is outside the " + std::to_string(snow_map.width) + "x" +
                                    std::to_string(snow_map.height) + " image");
    const auto xa = static_cast<std::size_t>(x0), xb = static_cast<std::size_t>(x1);
    const auto ya = static_cast<std::size_t>(y0), yb = static_cast<std::size_t>(y1);
    std::size_t snow = 0;
    for (std::size_t y = ya; y < yb; ++y)
        for (std::size_t x = xa; x < xb; ++x) snow += snow_map.at(y, x) != 0;
    return static_cast<double>(snow) / static_cast<double>((xb - xa) * (yb - ya));
}

ImageGrade grade_image(std::span<const double> scrs, const GradingPolicy& policy) {
    policy.validate();
    ImageGrade g;
    if (scrs.empty()) {
        g.no_objects = true;
        return g;
    }
    if (policy.aggregate == ScrAggregate::MaxObjectScr) {
        g.aggregate = *std::max_element(scrs.begin(), scrs.end());
    } else {
        double s = 0.0;
        for (double v : scrs) s += v;
        g.aggregate = s / static_cast<double>(scrs.size());
    }
    g.level = policy.level_for(g.aggregate);
    return g;
}

GradingReport grade_dataset(const Dataset& dataset, const SnowMapSource& maps, const GradingPolicy& policy,
                            std::size_t jobs) {
    policy.validate();
    dataset.validate();
    Dataset sorted = dataset;
    sorted.sort_by_id();
    std::vector<std::vector<Annotation>> per_image;
    for (const auto& img : sorted.images) per_image.push_back(sorted.annotations_for(img.id));

    const std::size_t count = sorted.images.size();
    std::vector<Outcome> outcomes(count);
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min(jobs, std::max<std::size_t>(count, 1));
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < count; i = next++)
            outcomes[i] = grade_one(sorted.images[i], per_image[i], maps, policy);
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }

    GradingReport report;
    report.policy = policy;
    for (auto& o : outcomes) {
        if (o.record) {
            ++report.histogram[static_cast<std::size_t>(o.record->level)];
            report.per_image.push_back(std::move(*o.record));
        } else {
            report.skipped.push_back(std::move(*o.skipped));
        }
    }
    return report;
}

SnowMapSource model_snow_maps(const ScrModel& model, const std::filesystem::path& images_dir) {
    if (!model.selected_channel)
        throw std::invalid_argument("model has no selected snow channel; run channel selection first");
    return [&model, images_dir](const ImageRecord& image) {
        return infer_snow_map(model, load_image(images_dir / image.file_name)).binary;
    };
}

std::string grading_report_to_json(const GradingReport& report) {
    ordered_json j;
    j["policy"] = {{"t1", report.policy.t1},
                   {"t2", report.policy.t2},
                   {"t3", report.policy.t3},
                   {"aggregate", to_string(report.policy.aggregate)}};
    ordered_json images = ordered_json::array();
    for (const auto& r : report.per_image) {
        images.push_back({{"image_id", r.image_id},
                          {"file_name", r.file_name},
                          {"scrs", r.scrs},
                          {"aggregate", r.aggregate},
                          {"level", to_string(r.level)},
                          {"no_objects", r.no_objects}});
    }
    j["per_image"] = std::move(images);
    ordered_json skipped = ordered_json::array();
    for (const auto& s : report.skipped)
        skipped.push_back({{"image_id", s.image_id}, {"file_name", s.file_name}, {"reason", s.reason}});
    j["skipped"] = std::move(skipped);
    ordered_json hist = ordered_json::object();
    for (DifficultyLevel l : kLevels) hist[to_string(l)] = report.histogram[static_cast<std::size_t>(l)];
    j["histogram"] = std::move(hist);
    return j.dump(2) + "\n";
}

GradingReport parse_grading_report(const std::string& json_text) {
    GradingReport report;
    try {
        const auto j = ordered_json::parse(json_text);
        const auto& p = j.at("policy");
        report.policy.t1 = p.at("t1").get<double>();
        report.policy.t2 = p.at("t2").get<double>();
        report.policy.t3 = p.at("t3").get<double>();
        report.policy.aggregate = parse_aggregate(p.at("aggregate").get<std::string>());
        for (const auto& r : j.at("per_image")) {
            ImageGradeRecord rec;
            rec.image_id = r.at("image_id").get<int>();
            rec.file_name = r.at("file_name").get<std::string>();
            rec.scrs = r.at("scrs").get<std::vector<double>>();
            rec.aggregate = r.at("aggregate").get<double>();
            rec.level = parse_difficulty(r.at("level").get<std::string>());
            rec.no_objects = r.at("no_objects").get<bool>();
            report.per_image.push_back(std::move(rec));
        }
        for (const auto& s : j.at("skipped"))
            report.skipped.push_back(
                {s.at("image_id").get<int>(), s.at("file_name").get<std::string>(), s.at("reason").get<std::string>()});
        const auto& h = j.at("histogram");
        for (DifficultyLevel l : kLevels) report.histogram[static_cast<std::size_t>(l)] = h.at(to_string(l)).get<std::size_t>();
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("grading report: ") + e.what(), e.byte);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("grading report: ") + e.what());
    }
    return report;
}

void write_grading_report(const GradingReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write grading report " + path.string());
    out << grading_report_to_json(report);
    if (!out) throw std::runtime_error("failed writing grading report " + path.string());
}

GradingReport read_grading_report(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open grading report " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_grading_report(ss.str());
}

}  // namespace snowfuse
