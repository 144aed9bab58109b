// Deterministic generator of small synthetic SfM scenes: points on the walls
// of a box room, cameras on a smooth loop inside it looking outward, exact
// projections as keypoints, and per-track descriptor prototypes with
// controlled observation noise. Serves as the ground-truth oracle for the
// synthesis and training pipeline.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"
#include "posekit/random.hpp"
#include "posekit/scene.hpp"

namespace posekit {

struct ToySceneConfig {
    int n_points = 2000;
    int n_train_cams = 60;
    int n_test_cams = 20;
    double room_width = 10.0;  // x extent, meters
    double room_depth = 10.0;  // y extent
    double room_height = 3.0;  // z extent
    int descriptor_dim = 128;
    double descriptor_noise_std = 0.02;
    double focal = 300.0;
    int image_width = 640;
    int image_height = 480;
    double min_depth = 0.8;
    double max_depth = 7.5;
    double point_size_min = 0.035; // world extent of a feature, meters
    double point_size_max = 0.08;
    /// Non-SfM keypoints added per image, as a fraction of its track keypoints.
    double distractor_fraction = 0.25;
    /// Test trajectory offset relative to the training loop.
    double test_radial_offset = 1.2;  // meters
    double test_height_offset = 0.3;  // meters
    double test_yaw_offset_rad = 0.3; // ~17 degrees
    std::uint64_t seed = 0;

    void validate() const {
        if (n_points <= 0 || n_train_cams <= 0 || n_test_cams < 0)
            throw DegenerateGeometry("toy scene counts must be positive");
        if (room_width <= 0 || room_depth <= 0 || room_height <= 0)
            throw DegenerateGeometry("room extents must be positive");
        if (descriptor_dim <= 0) throw DegenerateGeometry("descriptor dim must be positive");
    }
};

struct ToyScene {
    Scene scene;
    std::set<int> test_ids;
};

namespace detail {

/// World-to-camera rotation for a camera at `eye` looking along `forward`
/// (+z optical axis, +x image right, +y image down).
inline Quaternion look_rotation(const Eigen::Vector3d& forward_in) {
    const Eigen::Vector3d f = forward_in.normalized();
    Eigen::Vector3d up(0, 0, 1);
    if (std::abs(f.dot(up)) > 0.99) up = Eigen::Vector3d(0, 1, 0);
    const Eigen::Vector3d right = f.cross(up).normalized();
    const Eigen::Vector3d down = f.cross(right);
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = f;
    return quat_from_rotation_matrix(r);
}

inline Eigen::VectorXf random_unit_descriptor(int dim, Rng& rng) {
    Eigen::VectorXd d(dim);
    for (int i = 0; i < dim; ++i) d(i) = rng.normal();
    d /= d.norm();
    return d.cast<float>();
}

} // namespace detail

inline ToyScene generate_toy_scene(const ToySceneConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    const double hw = cfg.room_width / 2.0;
    const double hd = cfg.room_depth / 2.0;
    const double hz = cfg.room_height;

    struct ProtoPoint {
        Eigen::Vector3d position;
        Eigen::VectorXf prototype;
        double size = 0.0;
        double orientation = 0.0;
    };
    std::vector<ProtoPoint> protos;
    protos.reserve(static_cast<std::size_t>(cfg.n_points));

    // Faces of the box weighted by area: 4 side walls, floor, ceiling.
    const double wall_x = cfg.room_depth * cfg.room_height; // x = +-hw faces
    const double wall_y = cfg.room_width * cfg.room_height;
    const double cap = cfg.room_width * cfg.room_depth;
    const double total_area = 2 * wall_x + 2 * wall_y + 2 * cap;
    for (int i = 0; i < cfg.n_points; ++i) {
        const double pick = rng.uniform(0.0, total_area);
        Eigen::Vector3d pos;
        if (pick < 2 * wall_x) {
            const double side = pick < wall_x ? -hw : hw;
            pos = {side, rng.uniform(-hd, hd), rng.uniform(0.0, hz)};
        } else if (pick < 2 * wall_x + 2 * wall_y) {
            const double side = pick < 2 * wall_x + wall_y ? -hd : hd;
            pos = {rng.uniform(-hw, hw), side, rng.uniform(0.0, hz)};
        } else {
            const double side = pick < 2 * wall_x + 2 * wall_y + cap ? 0.0 : hz;
            pos = {rng.uniform(-hw, hw), rng.uniform(-hd, hd), side};
        }
        ProtoPoint p;
        p.position = pos;
        p.prototype = detail::random_unit_descriptor(cfg.descriptor_dim, rng);
        p.size = rng.uniform(cfg.point_size_min, cfg.point_size_max);
        p.orientation = rng.uniform(-kPi, kPi);
        protos.push_back(std::move(p));
    }

    ToyScene out;
    Scene& scene = out.scene;
    scene.descriptor_dim = cfg.descriptor_dim;

    const double rx = 0.15 * cfg.room_width;
    const double ry = 0.15 * cfg.room_depth;
    const int n_cams = cfg.n_train_cams + cfg.n_test_cams;

    for (int i = 0; i < n_cams; ++i) {
        const bool training = i < cfg.n_train_cams;
        ImageRecord img;
        img.id = i;
        img.is_training = training;
        img.filename = "image_" + std::to_string(i) + ".jpg";
        img.intrinsics.focal = cfg.focal;
        img.intrinsics.width = cfg.image_width;
        img.intrinsics.height = cfg.image_height;
        img.intrinsics.principal_point = {cfg.image_width / 2.0, cfg.image_height / 2.0};
        img.intrinsics.radial_k1 = 0.0;

        double t, radial = 0.0, height = 0.0, yaw = 0.0;
        if (training) {
            t = 2.0 * kPi * i / cfg.n_train_cams;
        } else {
            t = 2.0 * kPi * (i - cfg.n_train_cams + 0.35) / cfg.n_test_cams;
            radial = cfg.test_radial_offset;
            height = cfg.test_height_offset;
            yaw = cfg.test_yaw_offset_rad;
        }
        img.pose.center = {(rx + radial) * std::cos(t), (ry + radial) * std::sin(t),
                           1.4 + 0.25 * std::sin(2 * t) + height};
        const Eigen::Vector3d forward(std::cos(t + yaw), std::sin(t + yaw),
                                      0.12 * std::sin(3 * t));
        img.pose.rotation = detail::look_rotation(forward);
        if (!training) out.test_ids.insert(i);
        scene.images.push_back(std::move(img));
    }

    // Observations: exact projections within the depth band and image bounds
    // (with a small margin so later pixel perturbations stay representable).
    std::vector<TrackedPoint> points(protos.size());
    const double margin = 1.0;
    for (std::size_t pi = 0; pi < protos.size(); ++pi) points[pi].position = protos[pi].position;

    for (auto& img : scene.images) {
        for (std::size_t pi = 0; pi < protos.size(); ++pi) {
            const auto proj = try_project(protos[pi].position, img.pose, img.intrinsics);
            if (!proj) continue;
            if (proj->depth < cfg.min_depth || proj->depth > cfg.max_depth) continue;
            if (proj->pixel.x() < margin || proj->pixel.x() >= img.intrinsics.width - margin ||
                proj->pixel.y() < margin || proj->pixel.y() >= img.intrinsics.height - margin)
                continue;
            Keypoint kp;
            kp.p = proj->pixel.x();
            kp.q = proj->pixel.y();
            kp.scale = cfg.focal * protos[pi].size / proj->depth;
            kp.orientation = protos[pi].orientation;
            Eigen::VectorXd desc = protos[pi].prototype.cast<double>();
            if (cfg.descriptor_noise_std > 0.0) {
                for (int d = 0; d < cfg.descriptor_dim; ++d)
                    desc(d) += rng.normal(0.0, cfg.descriptor_noise_std);
                desc /= desc.norm();
            }
            kp.descriptor = desc.cast<float>();
            points[pi].observations.push_back(
                {img.id, static_cast<int>(img.keypoints.size())});
            img.keypoints.push_back(std::move(kp));
        }
        if (img.keypoints.empty())
            throw DegenerateGeometry("toy camera " + std::to_string(img.id) +
                                     " sees no points; adjust the configuration");
    }

    // Keep triangulatable tracks only (at least two observations).
    for (auto& point : points) {
        if (point.observations.size() < 2) continue;
        point.color = {static_cast<std::uint8_t>(rng.uniform_index(256)),
                       static_cast<std::uint8_t>(rng.uniform_index(256)),
                       static_cast<std::uint8_t>(rng.uniform_index(256))};
        scene.points.push_back(std::move(point));
    }
    if (scene.points.empty()) throw DegenerateGeometry("toy scene produced no tracks");

    // Single-observation keypoints now dangle outside any track; they simply
    // become non-SfM keypoints, like the explicit distractors below.
    for (auto& img : scene.images) {
        const auto n_track = img.keypoints.size();
        const int n_distract =
            static_cast<int>(std::lround(cfg.distractor_fraction * static_cast<double>(n_track)));
        for (int k = 0; k < n_distract; ++k) {
            Keypoint kp;
            kp.p = rng.uniform(margin, img.intrinsics.width - margin);
            kp.q = rng.uniform(margin, img.intrinsics.height - margin);
            kp.scale = rng.uniform(2.0, 20.0);
            kp.orientation = rng.uniform(-kPi, kPi);
            kp.descriptor = detail::random_unit_descriptor(cfg.descriptor_dim, rng);
            img.keypoints.push_back(std::move(kp));
        }
    }

    validate_scene(scene);
    return out;
}

} // namespace posekit
