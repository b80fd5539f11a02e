#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "snowfuse/annotations.hpp"
#include "snowfuse/image_io.hpp"
#include "snowfuse/rng.hpp"

using namespace snowfuse;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("snowfuse_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Dataset one_image_dataset() {
    Dataset ds;
    ds.images.push_back({1, "a.ppm", 100, 80});
    ds.categories[0] = "car";
    ds.annotations.push_back({7, 1, {10, 20, 30, 40, 0}});
    return ds;
}

}  // namespace

TEST_CASE("decode single-pixel P6 and P5") {
    std::string p6 = "P6\n1 1\n255\n";
    p6 += std::string{'\xff', '\x00', '\x00'};
    const Tensor rgb = decode_pnm(bytes_of(p6));
    CHECK(rgb.shape() == Shape{3, 1, 1});
    CHECK(rgb[0] == 1.0);
    CHECK(rgb[1] == 0.0);
    CHECK(rgb[2] == 0.0);

    std::string p5 = "P5 1 1 255\n";
    p5 += static_cast<char>(128);
    const Tensor grey = decode_pnm(bytes_of(p5));
    for (double v : grey.data()) CHECK(v == 128.0 / 255.0);
}

TEST_CASE("PNM header comments and 16-bit samples") {
    std::string p5 = "P5\n# comment\n2 1\n65535\n";
    p5 += std::string{'\xff', '\xff', '\x00', '\x00'};
    const Tensor t = decode_pnm(bytes_of(p5));
    CHECK(t.at(0, 0, 0, 0) == 1.0);
    CHECK(t[1] == 0.0);
}

TEST_CASE("malformed PNM reports byte offsets") {
    try {
        decode_pnm(bytes_of("P3\n1 1\n255\n"));
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 0);
    }
    try {
        decode_pnm(bytes_of("P6\n1 x\n255\n"));
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 5);
        CHECK(std::string(e.what()).find("byte offset 5") != std::string::npos);
    }
    CHECK_THROWS_AS(decode_pnm(bytes_of("P6\n2 2\n255\nabc")), ParseError);
    CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n1 1\n0\nx")), ParseError);
    std::string over = "P5\n1 1\n100\n";
    over += static_cast<char>(200);
    CHECK_THROWS_AS(decode_pnm(bytes_of(over)), ParseError);
}

TEST_CASE("image save and load round-trip") {
    const fs::path dir = scratch("roundtrip");
    Rng rng(1);
    Tensor img({3, 5, 7});
    for (double& v : img.data()) v = static_cast<double>(rng.index(256)) / 255.0;
    save_image(img, dir / "x.ppm");
    const Tensor loaded = load_image(dir / "x.ppm");
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(loaded[i] - img[i]) <= 1e-15);
    CHECK(read_image_size(dir / "x.ppm").width == 7);
    CHECK(read_image_size(dir / "x.ppm").height == 5);

    Tensor smooth({3, 4, 4});
    for (double& v : smooth.data()) v = rng.uniform();
    save_image(smooth, dir / "y.ppm");
    const Tensor back = load_image(dir / "y.ppm");
    for (std::size_t i = 0; i < smooth.size(); ++i) CHECK(std::abs(back[i] - smooth[i]) <= 0.5 / 255.0 + 1e-12);

    CHECK(encode_pnm(smooth) == encode_pnm(smooth));
    CHECK_THROWS_AS(encode_pnm(Tensor({2, 3, 3})), ShapeError);
    fs::remove_all(dir);
}

TEST_CASE("binary maps encode to 0 and 255") {
    const fs::path dir = scratch("binary");
    BinaryMap m(2, 3);
    m.at(0, 1) = 1;
    m.at(1, 2) = 1;
    save_binary_map(m, dir / "m.pgm");
    std::ifstream in(dir / "m.pgm", std::ios::binary);
    const std::string content((std::istreambuf_iterator<char>(in)), {});
    CHECK(content == std::string("P5\n3 2\n255\n") + std::string{'\0', '\xff', '\0', '\0', '\0', '\xff'});
    CHECK(load_binary_map(dir / "m.pgm").pixels == m.pixels);
    fs::remove_all(dir);
}

TEST_CASE("image listing is sorted and filtered") {
    const fs::path dir = scratch("list");
    for (const char* n : {"b.ppm", "a.pgm", "c.txt", "d.PNM"}) std::ofstream(dir / n) << "x";
    const auto files = list_images(dir);
    REQUIRE(files.size() == 3);
    CHECK(files[0].filename() == "a.pgm");
    CHECK(files[1].filename() == "b.ppm");
    fs::remove_all(dir);
}

TEST_CASE("COCO schema and lossless round-trip") {
    const Dataset ds = one_image_dataset();
    const Dataset back = parse_coco_text(coco_to_string(ds));
    REQUIRE(back.annotations.size() == 1);
    const BBox& b = back.annotations[0].box;
    CHECK(b.x == 10);
    CHECK(b.y == 20);
    CHECK(b.w == 30);
    CHECK(b.h == 40);
    CHECK(back.images[0].file_name == "a.ppm");
    CHECK(back.categories.at(0) == "car");
    CHECK(coco_to_string(back) == coco_to_string(ds));
}

TEST_CASE("COCO validation names dangling references") {
    const std::string text = R"({"images":[{"id":1,"file_name":"a.ppm","width":10,"height":10}],
        "annotations":[{"id":3,"image_id":99,"category_id":5,"bbox":[1,1,2,2]}],
        "categories":[{"id":1,"name":"car"}]})";
    try {
        parse_coco_text(text);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string all = e.what();
        CHECK(all.find("99") != std::string::npos);
        CHECK(all.find("category_id 5") != std::string::npos);
        CHECK(e.offenders().size() == 2);
    }
    CHECK_THROWS_AS(parse_coco_text(R"({"images": [})"), ParseError);
    CHECK_THROWS_AS(parse_coco_text(R"({"images": []})"), ValidationError);
    CHECK_THROWS_AS(parse_coco_text(R"({"images":[],"annotations":[{"id":1}],"categories":[]})"), ValidationError);
}

TEST_CASE("YOLO line conversion") {
    const auto boxes = parse_yolo_lines("0 0.5 0.5 0.5 0.5\n", 100, 100);
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].x == 25);
    CHECK(boxes[0].y == 25);
    CHECK(boxes[0].w == 50);
    CHECK(boxes[0].h == 50);
    CHECK(parse_yolo_lines("", 10, 10).empty());
    CHECK(parse_yolo_lines("\n  \n", 10, 10).empty());
}

TEST_CASE("YOLO rejects malformed lines with line numbers") {
    try {
        parse_yolo_lines("0 0.5 0.5 0.1 0.1\n1 1.5 0.5 0.1 0.1\n", 10, 10, "img.txt");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 2);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_yolo_lines("0 0.5 0.5 0.1\n", 10, 10), ParseError);
    CHECK_THROWS_AS(parse_yolo_lines("x 0.5 0.5 0.1 0.1\n", 10, 10), ParseError);
    CHECK_THROWS_AS(parse_yolo_lines("0 0.5 0.5 0 0.1\n", 10, 10), ParseError);
    CHECK_THROWS_AS(parse_yolo_lines("0 0.5 nan 0.1 0.1\n", 10, 10), ParseError);
}

TEST_CASE("YOLO directory round-trip and missing label files") {
    const fs::path dir = scratch("yolo");
    Dataset ds = one_image_dataset();
    ds.images.push_back({2, "b.ppm", 64, 64});
    ds.categories[1] = "person";
    ds.annotations.push_back({8, 1, {0, 0, 100, 80, 1}});
    write_yolo(ds, dir);
    CHECK(fs::exists(dir / "classes.txt"));
    CHECK(fs::exists(dir / "a.txt"));

    const Dataset back = parse_yolo(dir, ds.images);
    CHECK(back.categories == ds.categories);
    REQUIRE(back.annotations.size() == 2);
    CHECK(back.annotations_for(2).empty());
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(std::abs(back.annotations[i].box.x - ds.annotations[i].box.x) <= 1e-6);
        CHECK(std::abs(back.annotations[i].box.w - ds.annotations[i].box.w) <= 1e-6);
        CHECK(back.annotations[i].box.category_id == ds.annotations[i].box.category_id);
    }
    fs::remove_all(dir / "a.txt");
    CHECK(parse_yolo(dir, ds.images).annotations.empty());
    fs::remove_all(dir);
}

TEST_CASE("COCO to YOLO to COCO keeps random boxes within 1e-6 pixel") {
    Rng rng(2);
    Dataset ds;
    ds.categories = {{0, "a"}, {1, "b"}, {2, "c"}};
    int ann = 1;
    for (int id = 1; id <= 20; ++id) {
        const std::size_t w = 50 + rng.index(2000), h = 50 + rng.index(2000);
        ds.images.push_back({id, "img" + std::to_string(id) + ".ppm", w, h});
        for (int k = 0; k < 50; ++k) {
            const double bw = rng.uniform(0.5, static_cast<double>(w));
            const double bh = rng.uniform(0.5, static_cast<double>(h));
            const double x = rng.uniform(0.0, static_cast<double>(w) - bw);
            const double y = rng.uniform(0.0, static_cast<double>(h) - bh);
            ds.annotations.push_back({ann++, id, {x, y, bw, bh, static_cast<int>(rng.index(3))}});
        }
    }
    const fs::path dir = scratch("cross");
    write_yolo(ds, dir);
    Dataset back = parse_yolo(dir, ds.images);
    back = parse_coco_text(coco_to_string(back));
    REQUIRE(back.annotations.size() == ds.annotations.size());
    double worst = 0.0;
    for (const auto& img : ds.images) {
        const auto a = ds.annotations_for(img.id);
        const auto b = back.annotations_for(img.id);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            worst = std::max({worst, std::abs(a[i].box.x - b[i].box.x), std::abs(a[i].box.y - b[i].box.y),
                              std::abs(a[i].box.w - b[i].box.w), std::abs(a[i].box.h - b[i].box.h)});
            CHECK(a[i].box.category_id == b[i].box.category_id);
        }
    }
    CHECK(worst <= 1e-6);
    fs::remove_all(dir);
}
