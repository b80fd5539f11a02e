#include "snowfuse/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "snowfuse/image_io.hpp"

namespace snowfuse {

namespace {

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += "; ";
        out += items[i];
    }
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <typename T>
T field(const nlohmann::json& obj, const char* key, const std::string& where, std::vector<std::string>& errors) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
        errors.push_back(where + ": missing '" + key + "'");
        return T{};
    }
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        errors.push_back(where + ": '" + key + "' has the wrong type");
        return T{};
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> offenders)
    : std::runtime_error("dataset validation failed: " + join(offenders)), offenders_(std::move(offenders)) {}

void Dataset::validate() const {
    std::vector<std::string> errors;
    std::set<int> image_ids, annotation_ids;
    for (const auto& img : images) {
        if (!image_ids.insert(img.id).second) errors.push_back("duplicate image id " + std::to_string(img.id));
        if (img.width == 0 || img.height == 0) errors.push_back("image " + std::to_string(img.id) + " has zero size");
    }
    for (const auto& a : annotations) {
        const std::string who = "annotation " + std::to_string(a.id);
        if (!annotation_ids.insert(a.id).second) errors.push_back("duplicate annotation id " + std::to_string(a.id));
        if (!image_ids.count(a.image_id)) errors.push_back(who + " references missing image_id " + std::to_string(a.image_id));
        if (!categories.count(a.box.category_id)) {
            errors.push_back(who + " references missing category_id " + std::to_string(a.box.category_id));
        }
        if (!(a.box.w > 0.0) || !(a.box.h > 0.0)) errors.push_back(who + " has a non-positive box extent");
        if (!std::isfinite(a.box.x) || !std::isfinite(a.box.y)) errors.push_back(who + " has a non-finite box origin");
    }
    if (!errors.empty()) throw ValidationError(std::move(errors));
}

void Dataset::sort_by_id() {
    std::stable_sort(images.begin(), images.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::stable_sort(annotations.begin(), annotations.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
}

std::vector<Annotation> Dataset::annotations_for(int image_id) const {
    std::vector<Annotation> out;
    for (const auto& a : annotations)
        if (a.image_id == image_id) out.push_back(a);
    return out;
}

const ImageRecord* Dataset::find_image(int image_id) const {
    for (const auto& img : images)
        if (img.id == image_id) return &img;
    return nullptr;
}

Dataset parse_coco_text(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid COCO JSON: ") + e.what(), e.byte);
    }
    std::vector<std::string> errors;
    for (const char* key : {"images", "annotations", "categories"}) {
        if (!doc.is_object() || !doc.contains(key) || !doc[key].is_array()) {
            errors.push_back(std::string("top level: missing array '") + key + "'");
        }
    }
    if (!errors.empty()) throw ValidationError(std::move(errors));

    Dataset ds;
    for (std::size_t i = 0; i < doc["images"].size(); ++i) {
        const auto& j = doc["images"][i];
        const std::string where = "images[" + std::to_string(i) + "]";
        ImageRecord r;
        r.id = field<int>(j, "id", where, errors);
        r.file_name = field<std::string>(j, "file_name", where, errors);
        const auto w = field<long long>(j, "width", where, errors);
        const auto h = field<long long>(j, "height", where, errors);
        if (w <= 0 || h <= 0) errors.push_back(where + ": width and height must be positive");
        r.width = static_cast<std::size_t>(std::max(0LL, w));
        r.height = static_cast<std::size_t>(std::max(0LL, h));
        ds.images.push_back(std::move(r));
    }
    for (std::size_t i = 0; i < doc["annotations"].size(); ++i) {
        const auto& j = doc["annotations"][i];
        const std::string where = "annotations[" + std::to_string(i) + "]";
        Annotation a;
        a.id = field<int>(j, "id", where, errors);
        a.image_id = field<int>(j, "image_id", where, errors);
        a.box.category_id = field<int>(j, "category_id", where, errors);
        const auto bbox = field<std::vector<double>>(j, "bbox", where, errors);
        if (bbox.size() != 4) {
            errors.push_back(where + ": bbox must have 4 numbers [x, y, w, h]");
        } else {
            a.box.x = bbox[0], a.box.y = bbox[1], a.box.w = bbox[2], a.box.h = bbox[3];
        }
        ds.annotations.push_back(a);
    }
    for (std::size_t i = 0; i < doc["categories"].size(); ++i) {
        const auto& j = doc["categories"][i];
        const std::string where = "categories[" + std::to_string(i) + "]";
        const int id = field<int>(j, "id", where, errors);
        ds.categories[id] = field<std::string>(j, "name", where, errors);
    }
    if (!errors.empty()) throw ValidationError(std::move(errors));
    ds.validate();
    ds.sort_by_id();
    return ds;
}

Dataset parse_coco(const std::filesystem::path& json_path) { return parse_coco_text(read_text(json_path)); }

std::string coco_to_string(const Dataset& dataset) {
    Dataset ds = dataset;
    ds.sort_by_id();
    nlohmann::ordered_json doc;
    doc["images"] = nlohmann::ordered_json::array();
    for (const auto& img : ds.images) {
        doc["images"].push_back({{"id", img.id}, {"file_name", img.file_name}, {"width", img.width}, {"height", img.height}});
    }
    doc["annotations"] = nlohmann::ordered_json::array();
    for (const auto& a : ds.annotations) {
        doc["annotations"].push_back({{"id", a.id},
                                      {"image_id", a.image_id},
                                      {"category_id", a.box.category_id},
                                      {"bbox", {a.box.x, a.box.y, a.box.w, a.box.h}},
                                      {"area", a.box.w * a.box.h},
                                      {"iscrowd", 0}});
    }
    doc["categories"] = nlohmann::ordered_json::array();
    for (const auto& [id, name] : ds.categories) doc["categories"].push_back({{"id", id}, {"name", name}});
    return doc.dump(2) + "\n";
}

void write_coco(const Dataset& dataset, const std::filesystem::path& path) { write_text(path, coco_to_string(dataset)); }

std::vector<BBox> parse_yolo_lines(const std::string& text, std::size_t width, std::size_t height,
                                   const std::string& source) {
    std::vector<BBox> boxes;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        std::istringstream fields(line);
        std::vector<std::string> tokens;
        for (std::string t; fields >> t;) tokens.push_back(t);
        if (tokens.size() != 5) {
            throw ParseError(source + ": expected 'class cx cy w h', got " + std::to_string(tokens.size()) + " fields",
                             line_no, "line");
        }
        std::size_t used = 0;
        long cls = -1;
        try {
            cls = std::stol(tokens[0], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tokens[0].size() || cls < 0) throw ParseError(source + ": bad class index '" + tokens[0] + "'", line_no, "line");

        double v[4];
        for (int k = 0; k < 4; ++k) {
            const std::string& tok = tokens[static_cast<std::size_t>(k + 1)];
            try {
                v[k] = std::stod(tok, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != tok.size() || !std::isfinite(v[k])) throw ParseError(source + ": bad number '" + tok + "'", line_no, "line");
            if (v[k] < 0.0 || v[k] > 1.0) {
                throw ParseError(source + ": value " + tok + " outside [0, 1]", line_no, "line");
            }
        }
        if (v[2] <= 0.0 || v[3] <= 0.0) throw ParseError(source + ": box width and height must be positive", line_no, "line");

        const double W = static_cast<double>(width), H = static_cast<double>(height);
        boxes.push_back(BBox{(v[0] - v[2] / 2.0) * W, (v[1] - v[3] / 2.0) * H, v[2] * W, v[3] * H, static_cast<int>(cls)});
    }
    return boxes;
}

std::string format_yolo_lines(const std::vector<BBox>& boxes, std::size_t width, std::size_t height) {
    const double W = static_cast<double>(width), H = static_cast<double>(height);
    std::string out;
    for (const auto& b : boxes) {
        if (b.category_id < 0) throw std::invalid_argument("YOLO class index must be non-negative");
        const double vals[4] = {(b.x + b.w / 2.0) / W, (b.y + b.h / 2.0) / H, b.w / W, b.h / H};
        for (double v : vals) {
            if (v < 0.0 || v > 1.0) throw std::invalid_argument("box does not fit inside the image for YOLO export");
        }
        out += std::to_string(b.category_id);
        for (double v : vals) out += " " + format_double(v);
        out += "\n";
    }
    return out;
}

Dataset parse_yolo(const std::filesystem::path& labels_dir, const std::vector<ImageRecord>& images) {
    if (!std::filesystem::is_directory(labels_dir)) throw std::runtime_error(labels_dir.string() + " is not a directory");
    Dataset ds;
    ds.images = images;
    ds.sort_by_id();

    const auto classes_file = labels_dir / "classes.txt";
    if (std::filesystem::exists(classes_file)) {
        std::istringstream in(read_text(classes_file));
        std::string name;
        int idx = 0;
        while (std::getline(in, name)) {
            if (!name.empty() && name.back() == '\r') name.pop_back();
            ds.categories[idx++] = name;
        }
    }

    int next_id = 1;
    for (const auto& img : ds.images) {
        const auto label = labels_dir / (std::filesystem::path(img.file_name).stem().string() + ".txt");
        if (!std::filesystem::exists(label)) continue;
        for (const BBox& b : parse_yolo_lines(read_text(label), img.width, img.height, label.string())) {
            ds.annotations.push_back({next_id++, img.id, b});
            if (!ds.categories.count(b.category_id)) ds.categories[b.category_id] = "class" + std::to_string(b.category_id);
        }
    }
    ds.validate();
    return ds;
}

void write_yolo(const Dataset& dataset, const std::filesystem::path& labels_dir) {
    std::filesystem::create_directories(labels_dir);
    for (const auto& img : dataset.images) {
        std::vector<BBox> boxes;
        for (const auto& a : dataset.annotations)
            if (a.image_id == img.id) boxes.push_back(a.box);
        write_text(labels_dir / (std::filesystem::path(img.file_name).stem().string() + ".txt"),
                   format_yolo_lines(boxes, img.width, img.height));
    }
    std::string classes;
    if (!dataset.categories.empty()) {
        const int max_id = dataset.categories.rbegin()->first;
        if (dataset.categories.begin()->first < 0) throw std::invalid_argument("YOLO class index must be non-negative");
        for (int id = 0; id <= max_id; ++id) {
            const auto it = dataset.categories.find(id);
            classes += (it != dataset.categories.end() ? it->second : "class" + std::to_string(id)) + "\n";
        }
    }
    write_text(labels_dir / "classes.txt", classes);
}

}  // namespace snowfuse
