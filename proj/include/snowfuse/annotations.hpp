#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace snowfuse {

/// Axis-aligned box in absolute image pixels; (x, y) is the top-left corner.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    int category_id = 0;
};

struct ImageRecord {
    int id = 0;
    std::string file_name;
    std::size_t width = 0;
    std::size_t height = 0;
};

struct Annotation {
    int id = 0;
    int image_id = 0;
    BBox box;
};

/// Semantically invalid dataset content; `offenders` names each bad record.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(std::vector<std::string> offenders);
    const std::vector<std::string>& offenders() const noexcept { return offenders_; }

private:
    std::vector<std::string> offenders_;
};

struct Dataset {
    std::vector<ImageRecord> images;
    std::vector<Annotation> annotations;
    std::map<int, std::string> categories;

    /// Throws ValidationError on duplicate image ids, non-positive sizes,
    /// non-positive box extents or dangling image/category references.
    void validate() const;
    /// Orders images and annotations by id.
    void sort_by_id();
    std::vector<Annotation> annotations_for(int image_id) const;
    const ImageRecord* find_image(int image_id) const;
};

Dataset parse_coco_text(const std::string& json_text);
Dataset parse_coco(const std::filesystem::path& json_path);
std::string coco_to_string(const Dataset& dataset);
void write_coco(const Dataset& dataset, const std::filesystem::path& path);

/// Reads "<stem>.txt" for each image from `labels_dir`; lines are
/// "class cx cy w h" normalised to [0, 1]. A missing label file means the
/// image has no objects. Category names come from classes.txt when present.
Dataset parse_yolo(const std::filesystem::path& labels_dir, const std::vector<ImageRecord>& images);
/// Writes one label file per image plus classes.txt. Category ids are used
/// directly as class indices, so they must be non-negative.
void write_yolo(const Dataset& dataset, const std::filesystem::path& labels_dir);

/// Parses the lines of a single YOLO label file for an image of the given size.
std::vector<BBox> parse_yolo_lines(const std::string& text, std::size_t width, std::size_t height,
                                   const std::string& source = "labels");
std::string format_yolo_lines(const std::vector<BBox>& boxes, std::size_t width, std::size_t height);

}  // namespace snowfuse
