// On-disk dataset layout and loading.
//
// A *scene directory* (written by the toy-scene command, or assembled from a
// real reconstruction) holds:
//   scene.nvm        cameras + cloud + tracks
//   descriptors.pkds keypoint geometry and descriptors
//   poses.json       ground-truth poses with the train/test split
//
// A *synthetic-view directory* (written by the synthesize command) holds:
//   views.pkds       one sidecar image per synthetic view
//   manifest.json    poses, intrinsics, provenance and the generating config
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "posekit/errors.hpp"
#include "posekit/evaluation.hpp"
#include "posekit/nvm.hpp"
#include "posekit/scene.hpp"
#include "posekit/sidecar.hpp"
#include "posekit/view_synthesis.hpp"

namespace posekit {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace detail {

inline std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw ParseError("cannot open " + path.string());
    return in;
}

inline std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw ParseError("cannot write " + path.string());
    return out;
}

inline json pose_to_json(const Pose& pose) {
    return json{{"qw", pose.rotation.w}, {"qx", pose.rotation.x}, {"qy", pose.rotation.y},
                {"qz", pose.rotation.z}, {"cx", pose.center.x()}, {"cy", pose.center.y()},
                {"cz", pose.center.z()}};
}

inline Pose pose_from_json(const json& j) {
    Pose pose;
    pose.rotation = quat_normalize(Quaternion(j.at("qw").get<double>(), j.at("qx").get<double>(),
                                              j.at("qy").get<double>(), j.at("qz").get<double>()));
    pose.center = {j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("cz").get<double>()};
    return pose;
}

} // namespace detail

inline void write_pose_json(const Scene& scene, std::ostream& out) {
    json root;
    root["images"] = json::array();
    for (const auto& img : scene.images) {
        json entry = detail::pose_to_json(img.pose);
        entry["id"] = img.id;
        entry["file"] = img.filename;
        entry["train"] = img.is_training;
        entry["focal"] = img.intrinsics.focal;
        entry["k1"] = img.intrinsics.radial_k1;
        entry["width"] = img.intrinsics.width;
        entry["height"] = img.intrinsics.height;
        root["images"].push_back(std::move(entry));
    }
    out << root.dump(2) << "\n";
}

/// Write a full scene directory (scene.nvm, descriptors.pkds, poses.json).
inline void write_scene_dir(const fs::path& dir, const Scene& scene) {
    fs::create_directories(dir);
    auto nvm = detail::open_output(dir / "scene.nvm");
    serialize_nvm(scene, nvm);
    auto sidecar = detail::open_output(dir / "descriptors.pkds", std::ios::binary);
    write_sidecar(scene, sidecar);
    auto poses = detail::open_output(dir / "poses.json");
    write_pose_json(scene, poses);
}

/// Load a scene directory. Poses/split/intrinsics come from poses.json;
/// keypoints from the sidecar.
inline Scene load_scene_dir(const fs::path& dir,
                            DescriptorLoadMode mode = DescriptorLoadMode::kNormalize) {
    auto nvm = detail::open_input(dir / "scene.nvm");
    Scene scene = parse_nvm(nvm);
    auto poses = detail::open_input(dir / "poses.json");
    json root = json::parse(poses);
    for (const auto& entry : root.at("images")) {
        ImageRecord* img = scene.find_image(entry.at("id").get<int>());
        if (!img) throw ParseError("poses.json references image missing from scene.nvm");
        img->is_training = entry.at("train").get<bool>();
        img->pose = detail::pose_from_json(entry);
        img->intrinsics.focal = entry.at("focal").get<double>();
        img->intrinsics.radial_k1 = entry.at("k1").get<double>();
        img->intrinsics.width = entry.at("width").get<int>();
        img->intrinsics.height = entry.at("height").get<int>();
        img->intrinsics.principal_point = {img->intrinsics.width / 2.0,
                                           img->intrinsics.height / 2.0};
    }
    auto sidecar = detail::open_input(dir / "descriptors.pkds", std::ios::binary);
    load_descriptors(scene, sidecar, mode);
    return scene;
}

/// Test-image ids from either a poses.json (entries with "train": false) or a
/// plain newline-separated id list.
inline std::set<int> read_test_ids(const fs::path& path) {
    auto in = detail::open_input(path);
    std::set<int> ids;
    const char first = static_cast<char>(in.peek());
    if (first == '{') {
        json root = json::parse(in);
        for (const auto& entry : root.at("images"))
            if (!entry.at("train").get<bool>()) ids.insert(entry.at("id").get<int>());
    } else {
        std::string line;
        long line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            try {
                ids.insert(std::stoi(line));
            } catch (const std::exception&) {
                throw ParseError("invalid image id '" + line + "'", line_no);
            }
        }
    }
    return ids;
}

/// Write the output of run_algorithm1: views.pkds + manifest.json.
inline void write_synthetic_views(const fs::path& dir, const std::vector<SyntheticView>& views,
                                  const AugmentationConfig& cfg, std::uint64_t seed) {
    fs::create_directories(dir);

    Scene shell; // reuse the sidecar writer: one image record per view
    shell.descriptor_dim = views.empty() ? 0 : static_cast<int>(views[0].keypoints.empty()
                                                                     ? 0
                                                                     : views[0].keypoints[0].descriptor.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
        ImageRecord img;
        img.id = static_cast<int>(i);
        img.keypoints = views[i].keypoints;
        if (shell.descriptor_dim == 0 && !img.keypoints.empty())
            shell.descriptor_dim = static_cast<int>(img.keypoints[0].descriptor.size());
        shell.images.push_back(std::move(img));
    }
    auto sidecar = detail::open_output(dir / "views.pkds", std::ios::binary);
    write_sidecar(shell, sidecar);

    json root;
    root["seed"] = seed;
    root["config"] = {
        {"samples_per_pose", cfg.samples_per_pose},
        {"outdoor_shift_m", cfg.outdoor_shift_m},
        {"indoor_shift_m", cfg.indoor_shift_m},
        {"max_angle_deg", cfg.max_angle_deg},
        {"dedup_dist_m", cfg.dedup_dist_m},
        {"dedup_angle_deg", cfg.dedup_angle_deg},
        {"inside_count", cfg.inside_count},
        {"inside_radius_m", cfg.inside_radius_m},
        {"scale_min", cfg.scale_min},
        {"scale_max", cfg.scale_max},
        {"view_cone_deg", cfg.view_cone_deg},
        {"outlier_fraction", cfg.outlier_fraction},
        {"homography_min_inliers", cfg.homography_min_inliers},
        {"pixel_noise_sigma", cfg.pixel_noise_sigma},
        {"grid_check_cols", cfg.grid_check_cols},
        {"grid_check_rows", cfg.grid_check_rows},
        {"grid_check_min_nonempty", cfg.grid_check_min_nonempty},
        {"mode", cfg.mode == SceneKind::kOutdoor ? "outdoor" : "indoor"},
        {"noise", cfg.noise == NoiseMode::kClean
                      ? "clean"
                      : (cfg.noise == NoiseMode::kGaussian ? "gaussian" : "full")},
    };
    root["views"] = json::array();
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& v = views[i];
        json entry = detail::pose_to_json(v.pose);
        entry["id"] = static_cast<int>(i);
        entry["source_image"] = v.source_image_id;
        entry["focal"] = v.intrinsics.focal;
        entry["k1"] = v.intrinsics.radial_k1;
        entry["width"] = v.intrinsics.width;
        entry["height"] = v.intrinsics.height;
        entry["keypoints"] = v.keypoints.size();
        root["views"].push_back(std::move(entry));
    }
    auto manifest = detail::open_output(dir / "manifest.json");
    manifest << root.dump(2) << "\n";
}

/// Evaluation report as JSON plus cumulative error histograms as two-column
/// CSV (error value, cumulative fraction).
inline void write_eval_report_json(const EvalReport& report, std::ostream& out) {
    json root;
    root["count"] = report.per_image.size();
    root["median_pos_err_m"] = report.median_pos_err_m;
    root["median_ang_err_deg"] = report.median_ang_err_deg;
    root["per_image"] = json::array();
    for (const auto& r : report.per_image)
        root["per_image"].push_back(
            {{"id", r.image_id}, {"pos_err_m", r.pos_err_m}, {"ang_err_deg", r.ang_err_deg}});
    out << root.dump(2) << "\n";
}

inline void write_cumulative_histogram_csv(const std::vector<double>& sorted_errors,
                                           std::ostream& out) {
    out << "error,cumulative_fraction\n";
    const double n = static_cast<double>(sorted_errors.size());
    for (std::size_t i = 0; i < sorted_errors.size(); ++i)
        out << sorted_errors[i] << ',' << (static_cast<double>(i + 1) / n) << '\n';
}

enum class Split { kTraining, kTest, kAll };

/// Examples from an in-memory scene, filtered by split.
inline std::vector<ViewExample> scene_examples(const Scene& scene, Split split) {
    std::vector<ViewExample> out;
    for (const auto& img : scene.images) {
        if (split == Split::kTraining && !img.is_training) continue;
        if (split == Split::kTest && img.is_training) continue;
        if (img.keypoints.empty()) continue;
        ViewExample ex;
        ex.image_id = img.id;
        ex.width = img.intrinsics.width;
        ex.height = img.intrinsics.height;
        ex.keypoints = img.keypoints;
        ex.pose = img.pose;
        out.push_back(std::move(ex));
    }
    return out;
}

/// Examples from either directory layout. Scene directories honour `split`
/// and `mode`; synthetic-view directories always yield every view and are
/// read raw, since their descriptors are stored in network-ready form (noise
/// applied after normalization, deliberately not re-normalized).
inline std::vector<ViewExample> load_examples(const fs::path& dir, Split split,
                                              DescriptorLoadMode mode = DescriptorLoadMode::kNormalize) {
    if (fs::exists(dir / "manifest.json")) {
        auto manifest_in = detail::open_input(dir / "manifest.json");
        json root = json::parse(manifest_in);
        auto sidecar = detail::open_input(dir / "views.pkds", std::ios::binary);
        SidecarData data = read_sidecar(sidecar);
        std::unordered_map<int, SidecarImage*> by_id;
        for (auto& img : data.images) by_id[img.image_id] = &img;

        std::vector<ViewExample> out;
        for (const auto& entry : root.at("views")) {
            ViewExample ex;
            ex.image_id = entry.at("id").get<int>();
            ex.width = entry.at("width").get<int>();
            ex.height = entry.at("height").get<int>();
            ex.pose = detail::pose_from_json(entry);
            auto it = by_id.find(ex.image_id);
            if (it == by_id.end())
                throw ParseError("manifest view " + std::to_string(ex.image_id) +
                                 " missing from views.pkds");
            ex.keypoints = it->second->keypoints;
            out.push_back(std::move(ex));
        }
        return out;
    }
    if (!fs::exists(dir / "scene.nvm"))
        throw ParseError("directory " + dir.string() +
                         " holds neither a scene (scene.nvm) nor synthetic views (manifest.json)");
    return scene_examples(load_scene_dir(dir, mode), split);
}

} // namespace posekit
