// Shared helpers for the test binaries.
#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include "posekit/random.hpp"
#include "posekit/scene.hpp"

namespace testutil {

/// Random but structurally valid scene for parser round-trip tests. Keypoint
/// pixel coordinates land strictly inside the image so center-relative NVM
/// coordinates stay unambiguous.
inline posekit::Scene random_scene(posekit::Rng& rng, int max_images = 5, int max_points = 20,
                                   int descriptor_dim = 8) {
    using namespace posekit;
    Scene scene;
    scene.descriptor_dim = descriptor_dim;
    const int n_images = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_images)));
    const int width = 640, height = 480;
    for (int i = 0; i < n_images; ++i) {
        ImageRecord img;
        img.id = i;
        img.filename = "image_" + std::to_string(i) + ".jpg";
        img.intrinsics.focal = rng.uniform(300, 900);
        img.intrinsics.width = width;
        img.intrinsics.height = height;
        img.intrinsics.principal_point = {width / 2.0, height / 2.0};
        img.intrinsics.radial_k1 = rng.uniform(-0.1, 0.1);
        img.pose.rotation = quat_normalize(
            Quaternion(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
        img.pose.center = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
        const int n_kps = 2 + static_cast<int>(rng.uniform_index(6));
        for (int k = 0; k < n_kps; ++k) {
            Keypoint kp;
            kp.p = rng.uniform(1, width - 1);
            kp.q = rng.uniform(1, height - 1);
            kp.scale = rng.uniform(1.5, 30);
            kp.orientation = rng.uniform(-3.14159, 3.14159);
            kp.descriptor.resize(descriptor_dim);
            for (int d = 0; d < descriptor_dim; ++d)
                kp.descriptor(d) = static_cast<float>(rng.uniform(0, 1));
            img.keypoints.push_back(std::move(kp));
        }
        scene.images.push_back(std::move(img));
    }
    const int n_points = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_points)));
    for (int p = 0; p < n_points; ++p) {
        TrackedPoint point;
        point.position = {rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)};
        point.color = {static_cast<std::uint8_t>(rng.uniform_index(256)),
                       static_cast<std::uint8_t>(rng.uniform_index(256)),
                       static_cast<std::uint8_t>(rng.uniform_index(256))};
        const int n_obs = 1 + static_cast<int>(rng.uniform_index(3));
        for (int o = 0; o < n_obs; ++o) {
            const int img = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_images)));
            const auto& kps = scene.images[static_cast<std::size_t>(img)].keypoints;
            const int kp = static_cast<int>(rng.uniform_index(kps.size()));
            bool duplicate = false;
            for (const auto& existing : point.observations)
                if (existing.image_id == img) duplicate = true;
            if (!duplicate) point.observations.push_back({img, kp});
        }
        scene.points.push_back(std::move(point));
    }
    return scene;
}

inline bool scenes_close(const posekit::Scene& a, const posekit::Scene& b, double tol) {
    if (a.images.size() != b.images.size() || a.points.size() != b.points.size()) return false;
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        const auto& x = a.images[i];
        const auto& y = b.images[i];
        if (x.id != y.id || x.filename != y.filename) return false;
        if (std::abs(x.intrinsics.focal - y.intrinsics.focal) > tol) return false;
        if (std::abs(x.intrinsics.radial_k1 - y.intrinsics.radial_k1) > tol) return false;
        // Component-wise quaternion comparison up to sign (the angular error
        // metric bottoms out near acos conditioning, ~1e-6 deg).
        const auto qa = x.pose.rotation.coeffs();
        const auto qb = y.pose.rotation.coeffs();
        if (std::min((qa - qb).template lpNorm<Eigen::Infinity>(),
                     (qa + qb).template lpNorm<Eigen::Infinity>()) > tol)
            return false;
        if ((x.pose.center - y.pose.center).norm() > tol) return false;
    }
    for (std::size_t p = 0; p < a.points.size(); ++p) {
        const auto& x = a.points[p];
        const auto& y = b.points[p];
        if ((x.position - y.position).norm() > tol) return false;
        if (x.color != y.color) return false;
        if (x.observations.size() != y.observations.size()) return false;
        for (std::size_t o = 0; o < x.observations.size(); ++o) {
            if (x.observations[o].image_id != y.observations[o].image_id) return false;
            if (x.observations[o].keypoint_index != y.observations[o].keypoint_index) return false;
            const auto& ka = a.images[static_cast<std::size_t>(x.observations[o].image_id)]
                                 .keypoints[static_cast<std::size_t>(x.observations[o].keypoint_index)];
            const auto& kb = b.images[static_cast<std::size_t>(y.observations[o].image_id)]
                                 .keypoints[static_cast<std::size_t>(y.observations[o].keypoint_index)];
            if (std::abs(ka.p - kb.p) > tol || std::abs(ka.q - kb.q) > tol) return false;
        }
    }
    return true;
}

} // namespace testutil
