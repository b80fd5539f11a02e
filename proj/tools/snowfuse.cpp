// snowfuse command-line front end.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "snowfuse/activation.hpp"
#include "snowfuse/annotations.hpp"
#include "snowfuse/cross_fusion.hpp"
#include "snowfuse/grading.hpp"
#include "snowfuse/image_io.hpp"
#include "snowfuse/pca.hpp"
#include "snowfuse/scr_net.hpp"
#include "snowfuse/serialize.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace snowfuse;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<Tensor> load_dir(const fs::path& dir) {
    std::vector<Tensor> images;
    for (const auto& p : list_images(dir)) images.push_back(load_image(p));
    return images;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::size_t default_jobs() {
    if (const char* env = std::getenv("SNOWFUSE_JOBS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 0)
            throw std::invalid_argument(std::string("SNOWFUSE_JOBS must be a non-negative integer, got '") + env + "'");
        return static_cast<std::size_t>(v);
    }
    return 0;
}

// ------------------------------------------------------------- train-scr

struct TrainArgs {
    std::string images, out, snow_calib, clean_calib;
    std::size_t epochs = 200;
    double lr = 0.01, alpha = 1.0, beta = 1e-4, threshold = 0.5;
    std::uint64_t seed = 0;
    bool with_bias = false;
};

int cmd_train_scr(const TrainArgs& a) {
    if (a.snow_calib.empty() != a.clean_calib.empty())
        throw std::invalid_argument("--snow-calib and --clean-calib must be given together");
    const auto images = load_dir(a.images);
    if (images.empty()) throw std::invalid_argument("no .ppm/.pgm images found in " + a.images);

    ScrModelOptions mo;
    mo.with_bias = a.with_bias;
    ScrModel model = build_scr_model(a.seed, mo);
    model.binarize_threshold = a.threshold;
    TrainOptions opts;
    opts.lr = a.lr;
    opts.epochs = a.epochs;
    opts.seed = a.seed;
    opts.loss.alpha = a.alpha;
    opts.loss.beta = a.beta;
    const TrainingLog log = train_scr(model, images, opts);

    std::string csv = "epoch,loss\n0," + fmt(log.initial_loss) + "\n";
    for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) csv += std::to_string(e + 1) + "," + fmt(log.epoch_loss[e]) + "\n";
    if (!log.ok()) {
        write_text(fs::path(a.out) / "loss.csv", csv);
        std::cerr << "error: training aborted: " << log.diagnostic << "\n";
        return 1;
    }

    if (!a.snow_calib.empty()) {
        const auto snow = load_dir(a.snow_calib);
        const auto clean = load_dir(a.clean_calib);
        const ChannelSelection sel = select_snow_channel(model, snow, clean);
        std::cout << "selected channel " << sel.channel << " (score " << sel.scores[sel.channel] << ")"
                  << (sel.weak ? " [weak: no channel separates snow from clean]" : "") << "\n";
    } else {
        std::cout << "no calibration sets given; checkpoint has no selected channel\n";
    }
    save_checkpoint(model, a.out);
    write_text(fs::path(a.out) / "loss.csv", csv);
    std::cout << "initial loss " << log.initial_loss << "\nfinal loss " << log.final_loss() << "\n";
    return 0;
}

// ------------------------------------------------------------- infer-scr

struct InferArgs {
    std::string checkpoint, image, out, coco, yolo;
    std::optional<std::size_t> channel;
    std::optional<double> threshold;
};

int cmd_infer_scr(const InferArgs& a) {
    ScrModel model = load_checkpoint(a.checkpoint);
    if (a.channel) {
        if (*a.channel >= kScrChannels)
            throw std::invalid_argument("--channel must be below " + std::to_string(kScrChannels));
        model.selected_channel = *a.channel;
    }
    if (!model.selected_channel)
        throw std::invalid_argument("checkpoint " + a.checkpoint +
                                    " has no selected channel; retrain with --snow-calib/--clean-calib or pass --channel");
    if (a.threshold) model.binarize_threshold = *a.threshold;

    const Tensor image = load_image(a.image);
    const SnowMap map = infer_snow_map(model, image);
    const fs::path out(a.out);
    fs::create_directories(out);
    save_image(map.response, out / "response.pgm");
    save_binary_map(map.binary, out / "binary.pgm");

    std::vector<BBox> boxes;
    std::vector<int> ids;
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (!a.coco.empty()) {
        const Dataset ds = parse_coco(a.coco);
        const std::string name = fs::path(a.image).filename().string();
        const ImageRecord* rec = nullptr;
        for (const auto& img : ds.images)
            if (fs::path(img.file_name).filename() == name) rec = &img;
        if (!rec) throw std::invalid_argument("no image named " + name + " in " + a.coco);
        for (const auto& ann : ds.annotations_for(rec->id)) {
            boxes.push_back(ann.box);
            ids.push_back(ann.id);
        }
    } else if (!a.yolo.empty()) {
        std::ifstream in(a.yolo);
        if (!in) throw std::runtime_error("cannot open " + a.yolo);
        std::ostringstream ss;
        ss << in.rdbuf();
        boxes = parse_yolo_lines(ss.str(), w, h, a.yolo);
        for (std::size_t i = 0; i < boxes.size(); ++i) ids.push_back(static_cast<int>(i + 1));
    }

    ordered_json objects = ordered_json::array();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const BBox& b = boxes[i];
        objects.push_back({{"annotation_id", ids[i]},
                           {"bbox", {b.x, b.y, b.w, b.h}},
                           {"category_id", b.category_id},
                           {"scr", scr_for_bbox(map.binary, b)}});
    }
    ordered_json j;
    j["image"] = a.image;
    j["channel"] = *model.selected_channel;
    j["threshold"] = model.binarize_threshold;
    j["snow_fraction"] = static_cast<double>(map.binary.count()) / static_cast<double>(h * w);
    j["objects"] = std::move(objects);
    write_text(out / "scr.json", j.dump(2) + "\n");
    std::cout << "snow fraction " << j["snow_fraction"].get<double>() << ", " << boxes.size() << " objects\n";
    return 0;
}

// ----------------------------------------------------------------- grade

struct GradeArgs {
    std::string images, coco, yolo, checkpoint, maps, out;
    GradingPolicy policy;
    std::string aggregate = "max";
    std::optional<std::size_t> jobs;
};

Dataset dataset_from_yolo(const fs::path& images_dir, const fs::path& labels_dir) {
    std::vector<ImageRecord> records;
    int id = 1;
    for (const auto& p : list_images(images_dir)) {
        const ImageSize size = read_image_size(p);
        records.push_back({id++, p.filename().string(), size.width, size.height});
    }
    return parse_yolo(labels_dir, records);
}

int cmd_grade(const GradeArgs& a) {
    if (a.coco.empty() == a.yolo.empty()) throw std::invalid_argument("give exactly one of --coco or --yolo");
    if (a.checkpoint.empty() == a.maps.empty()) throw std::invalid_argument("give exactly one of --checkpoint or --maps");
    GradingPolicy policy = a.policy;
    policy.aggregate = parse_aggregate(a.aggregate);
    policy.validate();
    const std::size_t jobs = a.jobs ? *a.jobs : default_jobs();

    const Dataset ds = a.coco.empty() ? dataset_from_yolo(a.images, a.yolo) : parse_coco(a.coco);
    std::optional<ScrModel> model;
    SnowMapSource source;
    if (!a.checkpoint.empty()) {
        model = load_checkpoint(a.checkpoint);
        source = model_snow_maps(*model, a.images);
    } else {
        const fs::path maps_dir = a.maps;
        source = [maps_dir](const ImageRecord& img) {
            return load_binary_map(maps_dir / (fs::path(img.file_name).stem().string() + ".pgm"));
        };
    }
    const GradingReport report = grade_dataset(ds, source, policy, jobs);
    write_grading_report(report, a.out);

    for (const auto& s : report.skipped) std::cerr << "skipped image " << s.image_id << " (" << s.file_name << "): " << s.reason << "\n";
    std::cout << "graded " << report.graded() << " of " << ds.images.size() << " images\n";
    for (std::size_t l = 0; l < 4; ++l)
        std::cout << to_string(static_cast<DifficultyLevel>(l)) << " " << report.histogram[l] << "\n";
    if (!ds.images.empty() && report.graded() == 0) {
        std::cerr << "error: every image failed to grade\n";
        return 1;
    }
    return 0;
}

// ------------------------------------------------------------ cf-analyze

ordered_json params_json(const ParamCount& p) {
    return {{"conv_weights", p.conv_weights}, {"biases", p.biases}, {"bn", p.bn}, {"prelu", p.prelu}, {"total", p.total()}};
}

ordered_json neck_json(const NeckGraph& g) {
    return {{"path_lengths", path_length_matrix(g)},
            {"max_path", max_path_length(g)},
            {"fusion_nodes", g.count(NodeKind::Fusion)}};
}

int cmd_cf_analyze(const std::string& config_path, const std::string& out_path) {
    const CfConfig config = config_path.empty() ? CfConfig::three_stage_default() : load_cf_config(config_path);
    CfConfig single = config;
    single.n = 1;
    const NeckGraph cf = build_cf_neck(config);
    const NeckGraph cf_single = build_cf_neck(single);

    ordered_json j;
    j["config"] = {{"in_channels", ordered_json::array()}, {"in_scales", ordered_json::array()},
                   {"out_channels", ordered_json::array()}, {"out_scales", ordered_json::array()},
                   {"n", config.n}, {"K", config.kernel}};
    for (const auto& s : config.in_stages) {
        j["config"]["in_channels"].push_back(s.channels);
        j["config"]["in_scales"].push_back(s.scale);
    }
    for (const auto& s : config.out_stages) {
        j["config"]["out_channels"].push_back(s.channels);
        j["config"]["out_scales"].push_back(s.scale);
    }

    ordered_json cf_json = neck_json(cf);
    cf_json["single_layer_max_path"] = max_path_length(cf_single);
    ordered_json cf_params;
    for (std::size_t k : {1u, 3u}) {
        CfConfig c = config;
        c.kernel = k;
        cf_params["K" + std::to_string(k)] = params_json(build_cf_neck(c).total_params());
    }
    cf_json["params"] = cf_params;
    j["cf"] = cf_json;

    const bool fpn_ok = config.in_stages.size() == config.out_stages.size() && [&] {
        for (std::size_t i = 0; i < config.in_stages.size(); ++i)
            if (config.in_stages[i].scale != config.out_stages[i].scale) return false;
        return true;
    }();
    if (fpn_ok) {
        const NeckGraph fpn = build_fpn_panet_neck(config.in_stages, config.out_stages, config.kernel);
        ordered_json fpn_json = neck_json(fpn);
        ordered_json fpn_params;
        for (std::size_t k : {1u, 3u})
            fpn_params["K" + std::to_string(k)] =
                params_json(build_fpn_panet_neck(config.in_stages, config.out_stages, k).total_params());
        fpn_json["params"] = fpn_params;
        j["fpn_panet"] = fpn_json;
        j["cf_route_not_longer"] = max_path_length(cf) <= max_path_length(fpn);
    } else {
        j["fpn_panet"] = nullptr;
    }

    const std::size_t w1 = goctconv_weight_count(config.in_stages, config.out_stages, 1);
    const std::size_t w3 = goctconv_weight_count(config.in_stages, config.out_stages, 3);
    j["goctconv_conv_weights"] = {{"K1", w1}, {"K3", w3}, {"ratio", static_cast<double>(w3) / static_cast<double>(w1)}};

    const std::string text = j.dump(2) + "\n";
    if (!out_path.empty()) write_text(out_path, text);
    std::cout << text;
    return 0;
}

// --------------------------------------------------------------- cf-demo

struct DemoArgs {
    std::string config, out;
    DemoOptions opts;
};

int cmd_cf_demo(DemoArgs a) {
    if (!a.config.empty()) a.opts.config = load_cf_config(a.config);
    const DemoLog log = overfit_demo(a.opts);
    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < log.loss.size(); ++i) csv += std::to_string(i) + "," + fmt(log.loss[i]) + "\n";
    if (!a.out.empty()) write_text(a.out, csv);
    if (!log.ok()) {
        std::cerr << "error: " << log.diagnostic << "\n";
        return 1;
    }
    std::cout << "initial mse " << log.initial() << "\nfinal mse " << log.final() << "\n";
    return 0;
}

// -------------------------------------------------------------- act-dump

int cmd_act_dump(const std::string& kind, double lo, double hi, std::size_t samples, const std::string& out) {
    const auto rows = dump_activation_samples(ActivationKind::parse(kind), lo, hi, samples);
    if (out.empty()) {
        write_activation_csv(std::cout, rows);
        return 0;
    }
    std::ostringstream ss;
    write_activation_csv(ss, rows);
    write_text(out, ss.str());
    return 0;
}

// ------------------------------------------------------------------- pca

int cmd_pca(const std::string& features_path, const std::string& mask_path, const std::string& csv_path,
            const std::string& json_path) {
    const Tensor features = load_tensor(features_path);
    const BinaryMap mask = load_binary_map(mask_path);
    const PcaClusterResult r = pca_cluster_distance(features, mask);
    ordered_json j;
    j["object_distance"] = r.object_distance;
    j["background_distance"] = r.background_distance;
    j["eigenvalues"] = r.eigenvalues;
    j["pixels"] = r.points.size();
    const std::string text = j.dump(2) + "\n";
    if (!json_path.empty()) write_text(json_path, text);
    if (!csv_path.empty()) {
        std::ostringstream ss;
        write_pca_csv(ss, r);
        write_text(csv_path, ss.str());
    }
    std::cout << text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"snowfuse: snow coverage estimation, dataset grading and cross-fusion analysis"};
    app.require_subcommand(1);
    int status = 0;

    TrainArgs train;
    auto* t = app.add_subcommand("train-scr", "Train the snow coverage network without labels");
    t->add_option("--images", train.images, "Directory of heavy-snow training images")->required()->check(CLI::ExistingDirectory);
    t->add_option("--out", train.out, "Checkpoint directory to write")->required();
    t->add_option("--epochs", train.epochs, "Training epochs")->capture_default_str();
    t->add_option("--lr", train.lr, "SGD learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
    t->add_option("--seed", train.seed, "Seed for weights and shuffling")->capture_default_str();
    t->add_option("--alpha", train.alpha, "Weight of the coverage term")->capture_default_str();
    t->add_option("--beta", train.beta, "Weight of the L1 term")->capture_default_str();
    t->add_option("--threshold", train.threshold, "Binarization threshold stored in the checkpoint")->capture_default_str();
    t->add_option("--snow-calib", train.snow_calib, "Snow images for channel selection")->check(CLI::ExistingDirectory);
    t->add_option("--clean-calib", train.clean_calib, "Snow-free images for channel selection")->check(CLI::ExistingDirectory);
    t->add_flag("--with-bias", train.with_bias, "Give every conv a bias");
    t->callback([&] { status = cmd_train_scr(train); });

    InferArgs infer;
    auto* i = app.add_subcommand("infer-scr", "Produce snow maps and per-box SCR for one image");
    i->add_option("--checkpoint", infer.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    i->add_option("--image", infer.image, "Input .ppm/.pgm image")->required()->check(CLI::ExistingFile);
    i->add_option("--out", infer.out, "Output directory")->required();
    i->add_option("--channel", infer.channel, "Override the selected channel");
    i->add_option("--threshold", infer.threshold, "Override the binarization threshold");
    auto* coco_opt = i->add_option("--coco", infer.coco, "COCO JSON holding this image's boxes")->check(CLI::ExistingFile);
    i->add_option("--yolo", infer.yolo, "YOLO label file for this image")->check(CLI::ExistingFile)->excludes(coco_opt);
    i->callback([&] { status = cmd_infer_scr(infer); });

    GradeArgs grade;
    auto* g = app.add_subcommand("grade", "Grade a dataset into four difficulty levels");
    g->add_option("--images", grade.images, "Image directory")->required()->check(CLI::ExistingDirectory);
    g->add_option("--coco", grade.coco, "COCO annotation file")->check(CLI::ExistingFile);
    g->add_option("--yolo", grade.yolo, "YOLO label directory")->check(CLI::ExistingDirectory);
    g->add_option("--checkpoint", grade.checkpoint, "Checkpoint with a selected channel")->check(CLI::ExistingDirectory);
    g->add_option("--maps", grade.maps, "Directory of precomputed binary maps named <stem>.pgm")->check(CLI::ExistingDirectory);
    g->add_option("--out", grade.out, "Report JSON path")->required();
    g->add_option("--t1", grade.policy.t1, "Easy/Normal threshold")->capture_default_str();
    g->add_option("--t2", grade.policy.t2, "Normal/Difficult threshold")->capture_default_str();
    g->add_option("--t3", grade.policy.t3, "Difficult/Particularly difficult threshold")->capture_default_str();
    g->add_option("--aggregate", grade.aggregate, "Per-image aggregate of object SCRs")
        ->capture_default_str()
        ->check(CLI::IsMember({"max", "mean"}));
    g->add_option("--jobs", grade.jobs, "Worker threads (default SNOWFUSE_JOBS or all cores)");
    g->callback([&] { status = cmd_grade(grade); });

    std::string analyze_config, analyze_out;
    auto* a = app.add_subcommand("cf-analyze", "Path lengths and parameter counts of CF and FPN+PANet necks");
    a->add_option("--config", analyze_config, "Neck config file (default: 3 stages 8/16/32, n=2, K=1)")->check(CLI::ExistingFile);
    a->add_option("--out", analyze_out, "Also write the JSON here");
    a->callback([&] { status = cmd_cf_analyze(analyze_config, analyze_out); });

    DemoArgs demo;
    auto* d = app.add_subcommand("cf-demo", "Overfit a CF-necked toy network to synthetic targets");
    d->add_option("--seed", demo.opts.seed, "Seed")->capture_default_str();
    d->add_option("--steps", demo.opts.steps, "Optimizer steps")->capture_default_str();
    d->add_option("--lr", demo.opts.lr, "Adam step size")->capture_default_str()->check(CLI::NonNegativeNumber);
    d->add_option("--base-size", demo.opts.base_size, "Stage-1 resolution")->capture_default_str();
    d->add_option("--config", demo.config, "Neck config file")->check(CLI::ExistingFile);
    d->add_option("--out", demo.out, "Loss CSV path");
    d->callback([&] { status = cmd_cf_demo(demo); });

    std::string act_kind = "peak-act", act_out;
    double act_lo = -1.0, act_hi = 3.0;
    std::size_t act_samples = 401;
    auto* act = app.add_subcommand("act-dump", "Sample an activation and its derivative to CSV");
    act->add_option("--kind", act_kind, "peak-act, sigmoid, relu or leaky-relu[:slope]")->capture_default_str();
    act->add_option("--min", act_lo, "Range start")->capture_default_str();
    act->add_option("--max", act_hi, "Range end")->capture_default_str();
    act->add_option("--samples", act_samples, "Number of samples")->capture_default_str();
    act->add_option("--out", act_out, "CSV path (default stdout)");
    act->callback([&] { status = cmd_act_dump(act_kind, act_lo, act_hi, act_samples, act_out); });

    std::string pca_features, pca_mask, pca_csv, pca_json;
    auto* p = app.add_subcommand("pca", "PCA cluster distances of a feature map split by a mask");
    p->add_option("--features", pca_features, "C x H x W tensor file (.snft)")->required()->check(CLI::ExistingFile);
    p->add_option("--mask", pca_mask, "Object mask image (.pgm)")->required()->check(CLI::ExistingFile);
    p->add_option("--csv", pca_csv, "Projected points CSV path");
    p->add_option("--out", pca_json, "Also write the JSON here");
    p->callback([&] { status = cmd_pca(pca_features, pca_mask, pca_csv, pca_json); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return status;
}
