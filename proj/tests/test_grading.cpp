#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "snowfuse/grading.hpp"
#include "snowfuse/rng.hpp"

using namespace snowfuse;
namespace fs = std::filesystem;

namespace {

double brute_force_scr(const BinaryMap& map, const BBox& b) {
    std::size_t snow = 0, area = 0;
    for (std::size_t y = 0; y < map.height; ++y) {
        for (std::size_t x = 0; x < map.width; ++x) {
            // pixel (x, y) covers [x, x+1) and is touched when it overlaps the box
            const bool inside = x + 1 > b.x && static_cast<double>(x) < b.x + b.w && y + 1 > b.y &&
                                static_cast<double>(y) < b.y + b.h;
            if (!inside) continue;
            ++area;
            snow += map.at(y, x);
        }
    }
    return static_cast<double>(snow) / static_cast<double>(area);
}

// Eight 10x10 images whose single box covers a 10x10 map with the given
// number of snow pixels.
struct EightImageFixture {
    Dataset dataset;
    std::map<int, BinaryMap> maps;
};

EightImageFixture eight_images() {
    EightImageFixture f;
    f.dataset.categories[0] = "car";
    const int snow_pixels[] = {10, 10, 40, 40, 40, 60, 60, 90};
    for (int i = 0; i < 8; ++i) {
        const int id = i + 1;
        f.dataset.images.push_back({id, "img" + std::to_string(id) + ".ppm", 10, 10});
        f.dataset.annotations.push_back({100 + id, id, {0, 0, 10, 10, 0}});
        BinaryMap m(10, 10);
        for (int p = 0; p < snow_pixels[i]; ++p) m.pixels[static_cast<std::size_t>(p)] = 1;
        f.maps[id] = m;
    }
    return f;
}

SnowMapSource lookup(const std::map<int, BinaryMap>& maps) {
    return [&maps](const ImageRecord& r) { return maps.at(r.id); };
}

}  // namespace

TEST_CASE("scr of a box") {
    BinaryMap m(20, 20);
    for (std::size_t y = 5; y < 10; ++y)
        for (std::size_t x = 5; x < 10; ++x) m.at(y, x) = 1;
    CHECK(scr_for_bbox(m, {5, 5, 10, 10, 0}) == 0.25);
    CHECK(scr_for_bbox(BinaryMap(8, 8, 1), {1, 1, 4, 4, 0}) == 1.0);
    CHECK(scr_for_bbox(m, {15, 15, 4, 4, 0}) == 0.0);
    // a box hanging over the border only counts the pixels inside the map
    CHECK(scr_for_bbox(BinaryMap(8, 8, 1), {6, 6, 10, 10, 0}) == 1.0);
}

TEST_CASE("scr rejects boxes outside the map or without extent") {
    BinaryMap m(10, 10);
    CHECK_THROWS_AS(scr_for_bbox(m, {20, 20, 5, 5, 0}), std::invalid_argument);
    CHECK_THROWS_AS(scr_for_bbox(m, {-8, 0, 5, 5, 0}), std::invalid_argument);
    CHECK_THROWS_AS(scr_for_bbox(m, {1, 1, 0, 5, 0}), std::invalid_argument);
    CHECK_THROWS_AS(scr_for_bbox(m, {1, 1, 5, -1, 0}), std::invalid_argument);
}

TEST_CASE("scr agrees with a brute-force count on random maps and boxes") {
    Rng rng(21);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t h = 1 + rng.index(24), w = 1 + rng.index(24);
        BinaryMap m(h, w);
        const double density = rng.uniform();
        for (auto& p : m.pixels) p = rng.uniform() < density ? 1 : 0;
        const double bw = rng.uniform(0.1, static_cast<double>(w));
        const double bh = rng.uniform(0.1, static_cast<double>(h));
        const BBox box{rng.uniform(-2.0, static_cast<double>(w) - 0.5), rng.uniform(-2.0, static_cast<double>(h) - 0.5),
                       bw, bh, 0};
        if (box.x + box.w <= 0.0 || box.y + box.h <= 0.0) continue;
        const double got = scr_for_bbox(m, box);
        CHECK(got == doctest::Approx(brute_force_scr(m, box)).epsilon(1e-12));
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);
    }
}

TEST_CASE("scr is monotone in the snow map") {
    Rng rng(22);
    BinaryMap m(16, 16);
    const BBox box{2.5, 3.2, 9.1, 7.7, 0};
    double last = scr_for_bbox(m, box);
    for (int i = 0; i < 200; ++i) {
        m.pixels[rng.index(m.pixels.size())] = 1;
        const double now = scr_for_bbox(m, box);
        CHECK(now >= last);
        last = now;
    }
}

TEST_CASE("image levels from object scrs") {
    const GradingPolicy policy;
    CHECK(grade_image(std::vector<double>{0.1, 0.2}, policy).level == DifficultyLevel::Easy);
    CHECK(grade_image(std::vector<double>{0.74}, policy).level == DifficultyLevel::Difficult);
    CHECK(grade_image(std::vector<double>{0.75}, policy).level == DifficultyLevel::ParticularlyDifficult);
    CHECK(grade_image(std::vector<double>{0.25}, policy).level == DifficultyLevel::Normal);
    CHECK(grade_image(std::vector<double>{0.5}, policy).level == DifficultyLevel::Difficult);

    const ImageGrade empty = grade_image(std::vector<double>{}, policy);
    CHECK(empty.level == DifficultyLevel::Easy);
    CHECK(empty.no_objects);
}

TEST_CASE("aggregate choice on the four-object example") {
    const std::vector<double> scrs{0.35, 0.56, 0.09, 0.07};
    const ImageGrade by_max = grade_image(scrs, {});
    CHECK(by_max.aggregate == 0.56);
    CHECK(by_max.level == DifficultyLevel::Difficult);
    GradingPolicy mean;
    mean.aggregate = ScrAggregate::MeanObjectScr;
    const ImageGrade by_mean = grade_image(scrs, mean);
    CHECK(by_mean.aggregate == doctest::Approx(0.2675));
    CHECK(by_mean.level == DifficultyLevel::Normal);
}

TEST_CASE("policy validation and names") {
    CHECK_THROWS_AS((GradingPolicy{0.5, 0.4, 0.75}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((GradingPolicy{0.0, 0.4, 0.75}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((GradingPolicy{0.2, 0.4, 1.0}.validate()), std::invalid_argument);
    for (auto level : {DifficultyLevel::Easy, DifficultyLevel::Normal, DifficultyLevel::Difficult,
                       DifficultyLevel::ParticularlyDifficult})
        CHECK(parse_difficulty(to_string(level)) == level);
    CHECK(std::string(to_string(DifficultyLevel::ParticularlyDifficult)) == "particularly_difficult");
    CHECK(parse_aggregate("mean") == ScrAggregate::MeanObjectScr);
    CHECK_THROWS(parse_aggregate("median"));
}

TEST_CASE("dataset histogram on the eight-image fixture") {
    const EightImageFixture f = eight_images();
    const GradingReport one = grade_dataset(f.dataset, lookup(f.maps), {}, 1);
    CHECK(one.histogram == std::array<std::size_t, 4>{2, 3, 2, 1});
    CHECK(one.graded() == 8);
    CHECK(one.skipped.empty());
    for (std::size_t i = 0; i < one.per_image.size(); ++i) CHECK(one.per_image[i].image_id == int(i) + 1);

    for (std::size_t jobs : {2u, 4u, 8u, 0u}) CHECK(grade_dataset(f.dataset, lookup(f.maps), {}, jobs) == one);
}

TEST_CASE("images that cannot be graded are skipped") {
    EightImageFixture f = eight_images();
    f.maps[3] = BinaryMap(5, 5);  // size mismatch
    f.dataset.images.push_back({9, "empty.ppm", 10, 10});
    const auto source = [&](const ImageRecord& r) -> BinaryMap {
        if (r.id == 5) throw std::runtime_error("unreadable");
        if (r.id == 9) throw std::logic_error("images without objects never need a map");
        return f.maps.at(r.id);
    };
    const GradingReport report = grade_dataset(f.dataset, source, {}, 3);
    REQUIRE(report.skipped.size() == 2);
    CHECK(report.skipped[0].image_id == 3);
    CHECK(report.skipped[1].image_id == 5);
    CHECK(report.skipped[1].reason.find("unreadable") != std::string::npos);
    CHECK(report.graded() == 7);
    CHECK(report.per_image.back().no_objects);
    CHECK(report.histogram == std::array<std::size_t, 4>{3, 1, 2, 1});
}

TEST_CASE("empty and inconsistent datasets") {
    const GradingReport empty = grade_dataset(Dataset{}, [](const ImageRecord&) { return BinaryMap(); });
    CHECK(empty.graded() == 0);
    CHECK(empty.histogram == std::array<std::size_t, 4>{0, 0, 0, 0});

    EightImageFixture f = eight_images();
    f.dataset.annotations.push_back({500, 42, {0, 0, 1, 1, 0}});
    CHECK_THROWS_AS(grade_dataset(f.dataset, lookup(f.maps)), ValidationError);
}

TEST_CASE("grading report json round-trip") {
    const EightImageFixture f = eight_images();
    GradingPolicy policy{0.2, 0.45, 0.8, ScrAggregate::MeanObjectScr};
    const GradingReport report = grade_dataset(f.dataset, lookup(f.maps), policy, 2);
    const std::string text = grading_report_to_json(report);
    for (const char* key : {"\"easy\"", "\"normal\"", "\"difficult\"", "\"particularly_difficult\"", "\"skipped\""})
        CHECK(text.find(key) != std::string::npos);
    CHECK(parse_grading_report(text) == report);

    const std::string empty_text = grading_report_to_json(GradingReport{});
    CHECK(empty_text.find("\"particularly_difficult\": 0") != std::string::npos);

    const fs::path path = fs::temp_directory_path() / "snowfuse_grading_report.json";
    write_grading_report(report, path);
    CHECK(read_grading_report(path) == report);
    fs::remove(path);
}
