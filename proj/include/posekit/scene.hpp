// In-memory SfM scene: point cloud, cameras, tracks and descriptors.
#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"

namespace posekit {

/// Sparse image feature: pixel position, scale, orientation and descriptor.
struct Keypoint {
    double p = 0.0;          // pixel x
    double q = 0.0;          // pixel y
    double scale = 0.0;      // pixels, > 0 once populated
    double orientation = 0.0; // radians, [-pi, pi)
    Eigen::VectorXf descriptor;
};

struct ImageRecord {
    int id = 0;
    std::string filename;
    Pose pose;
    CameraIntrinsics intrinsics;
    std::vector<Keypoint> keypoints;
    bool is_training = true;
};

/// Track observation: which image sees the point, and through which keypoint.
struct Observation {
    int image_id = 0;
    int keypoint_index = 0;
};

struct TrackedPoint {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    std::array<std::uint8_t, 3> color{128, 128, 128};
    std::vector<Observation> observations;
};

struct Scene {
    std::vector<ImageRecord> images;
    std::vector<TrackedPoint> points;
    int descriptor_dim = 0;

    const ImageRecord* find_image(int id) const {
        for (const auto& img : images)
            if (img.id == id) return &img;
        return nullptr;
    }

    ImageRecord* find_image(int id) {
        for (auto& img : images)
            if (img.id == id) return &img;
        return nullptr;
    }
};

/// Referential-integrity check: every observation must resolve to an existing
/// image and an in-range keypoint index, and descriptor dimensions must be
/// consistent for populated keypoints. Throws ParseError on violation.
inline void validate_scene(const Scene& scene) {
    std::unordered_map<int, const ImageRecord*> by_id;
    for (const auto& img : scene.images) {
        if (by_id.count(img.id)) throw ParseError("duplicate image id " + std::to_string(img.id));
        by_id[img.id] = &img;
    }
    for (std::size_t pi = 0; pi < scene.points.size(); ++pi) {
        for (const auto& obs : scene.points[pi].observations) {
            auto it = by_id.find(obs.image_id);
            if (it == by_id.end())
                throw ParseError("point " + std::to_string(pi) + " references unknown image " +
                                 std::to_string(obs.image_id));
            const auto& img = *it->second;
            if (obs.keypoint_index < 0 ||
                static_cast<std::size_t>(obs.keypoint_index) >= img.keypoints.size())
                throw ParseError("point " + std::to_string(pi) + " references keypoint " +
                                 std::to_string(obs.keypoint_index) + " out of range in image " +
                                 std::to_string(obs.image_id));
        }
    }
    for (const auto& img : scene.images)
        for (const auto& kp : img.keypoints)
            if (kp.descriptor.size() != 0 && kp.descriptor.size() != scene.descriptor_dim)
                throw ParseError("descriptor dimension mismatch in image " +
                                 std::to_string(img.id));
}

/// Removes every trace of the test images from the reconstruction: their
/// observations are dropped from all tracks, tracks left with fewer than two
/// training observations are erased, and the test images' keypoints
/// (descriptors included) are cleared. Idempotent.
inline Scene preprocess_scene(const Scene& scene, const std::set<int>& test_image_ids) {
    for (int id : test_image_ids)
        if (!scene.find_image(id))
            throw ParseError("test image id " + std::to_string(id) + " not present in scene");

    Scene out = scene;
    for (auto& img : out.images) {
        if (test_image_ids.count(img.id)) {
            img.is_training = false;
            img.keypoints.clear();
        }
    }
    std::vector<TrackedPoint> kept;
    kept.reserve(out.points.size());
    for (auto& point : out.points) {
        std::vector<Observation> obs;
        obs.reserve(point.observations.size());
        for (const auto& o : point.observations)
            if (!test_image_ids.count(o.image_id)) obs.push_back(o);
        if (obs.size() >= 2) {
            point.observations = std::move(obs);
            kept.push_back(std::move(point));
        }
    }
    out.points = std::move(kept);
    return out;
}

/// Keypoint indices of an image that participate in at least one track.
inline std::vector<bool> sfm_keypoint_mask(const Scene& scene, int image_id) {
    const ImageRecord* img = scene.find_image(image_id);
    if (!img) throw ParseError("unknown image id " + std::to_string(image_id));
    std::vector<bool> mask(img->keypoints.size(), false);
    for (const auto& point : scene.points)
        for (const auto& obs : point.observations)
            if (obs.image_id == image_id &&
                static_cast<std::size_t>(obs.keypoint_index) < mask.size())
                mask[obs.keypoint_index] = true;
    return mask;
}

} // namespace posekit
