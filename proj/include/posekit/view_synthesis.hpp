// Synthetic view generation from an SfM map: perturb training poses along the
// scene's dominant plane (outdoor) or in all directions (indoor), prune
// repetitive or cloud-piercing candidates, project the point cloud into the
// surviving poses keeping only detectable/repeatable observations, and
// corrupt the result with descriptor noise, pixel noise and two outlier
// populations.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"
#include "posekit/parallel.hpp"
#include "posekit/random.hpp"
#include "posekit/scene.hpp"

namespace posekit {

enum class SceneKind { kOutdoor, kIndoor };

/// Fidelity of the corruption stage (the clean / noise / noise+outliers
/// ablation of the augmentation pipeline).
enum class NoiseMode { kClean, kGaussian, kFull };

struct AugmentationConfig {
    int samples_per_pose = 50;
    double outdoor_shift_m = 2.5; // in-plane square half-width
    double indoor_shift_m = 0.25; // cube half-width
    double max_angle_deg = 30.0;
    double dedup_dist_m = 0.1;
    double dedup_angle_deg = 1.0;
    int inside_count = 25;       // candidates with more near points are dropped
    double inside_radius_m = 1.0;
    double scale_min = 1.25;
    double scale_max = 120.0;
    double view_cone_deg = 20.0;
    double outlier_fraction = 0.25;
    int homography_min_inliers = 50;
    double pixel_noise_sigma = 1.0;
    int grid_check_cols = 4;
    int grid_check_rows = 4;
    int grid_check_min_nonempty = 4;
    SceneKind mode = SceneKind::kOutdoor;
    NoiseMode noise = NoiseMode::kFull;

    void validate() const {
        if (samples_per_pose < 0) throw DegenerateGeometry("samples_per_pose must be >= 0");
        if (outlier_fraction < 0.0 || outlier_fraction >= 1.0)
            throw DegenerateGeometry("outlier_fraction must be in [0, 1)");
        if (outdoor_shift_m < 0 || indoor_shift_m < 0 || max_angle_deg < 0 ||
            dedup_dist_m < 0 || dedup_angle_deg < 0 || inside_radius_m < 0 ||
            pixel_noise_sigma < 0 || scale_min <= 0 || scale_max < scale_min)
            throw DegenerateGeometry("augmentation ranges must be non-negative");
        if (grid_check_cols <= 0 || grid_check_rows <= 0 || grid_check_min_nonempty < 0)
            throw DegenerateGeometry("invalid sustainability grid");
    }
};

/// A perturbed pose together with the training image it inherited its
/// intrinsics (and descriptor provenance) from.
struct CandidatePose {
    Pose pose;
    int source_image_id = 0;
};

enum class KeypointOrigin : std::uint8_t { kInlier, kRandomOutlier, kHomographyOutlier };

struct SyntheticKeypointMeta {
    KeypointOrigin origin = KeypointOrigin::kInlier;
    int point_index = -1;     // track index for inliers / random outliers
    int source_image_id = -1; // image the descriptor was copied from
    Eigen::Vector2d clean_pixel{0, 0}; // projection before pixel noise
};

struct SyntheticView {
    Pose pose;
    CameraIntrinsics intrinsics;
    int source_image_id = 0; // provenance: training image whose pose was perturbed
    std::vector<Keypoint> keypoints;
    std::vector<SyntheticKeypointMeta> meta; // parallel to keypoints
};

namespace detail {

inline std::vector<const ImageRecord*> training_images(const Scene& scene) {
    std::vector<const ImageRecord*> out;
    for (const auto& img : scene.images)
        if (img.is_training && !img.keypoints.empty()) out.push_back(&img);
    return out;
}

/// Horizontal plane of the training trajectory. Fewer than three training
/// cameras cannot support a RANSAC fit; fall back to a gravity-style plane
/// (z up) through their mean height.
inline Plane training_plane(const std::vector<const ImageRecord*>& train, Rng& rng) {
    std::vector<Eigen::Vector3d> centers;
    centers.reserve(train.size());
    for (const auto* img : train) centers.push_back(img->pose.center);
    if (centers.size() < 3) {
        double mean_z = 0.0;
        for (const auto& c : centers) mean_z += c.z();
        return Plane{Eigen::Vector3d::UnitZ(), mean_z / static_cast<double>(centers.size())};
    }
    return fit_horizontal_plane(centers, rng);
}

inline Eigen::Vector3d random_unit_axis(Rng& rng) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
}

inline int nearest_training_image(const std::vector<const ImageRecord*>& train,
                                  const Eigen::Vector3d& center) {
    int best = train.front()->id;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto* img : train) {
        const double d = (img->pose.center - center).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = img->id;
        }
    }
    return best;
}

} // namespace detail

/// Perturb each center pose `samples_per_pose` times. Outdoor: translation
/// uniform in an in-plane square of half-width outdoor_shift_m, rotation
/// uniform in +-max_angle_deg about the plane normal. Indoor: translation
/// uniform in a cube of half-width indoor_shift_m, rotation uniform in
/// +-max_angle_deg about a uniformly random axis. When `around` is supplied
/// those poses are perturbed instead of the training poses; intrinsics and
/// provenance then come from the nearest training image.
inline std::vector<CandidatePose> augment_poses(const Scene& scene, const AugmentationConfig& cfg,
                                                Rng& rng,
                                                const std::vector<Pose>* around = nullptr) {
    cfg.validate();
    const auto train = detail::training_images(scene);
    if (train.empty()) throw DegenerateGeometry("scene has no training images");

    Plane plane;
    Eigen::Vector3d u = Eigen::Vector3d::UnitX(), v = Eigen::Vector3d::UnitY();
    if (cfg.mode == SceneKind::kOutdoor) {
        plane = detail::training_plane(train, rng);
        std::tie(u, v) = plane.basis();
    }

    struct Center {
        Pose pose;
        int source_image_id;
    };
    std::vector<Center> centers;
    if (around) {
        for (const auto& p : *around)
            centers.push_back({p, detail::nearest_training_image(train, p.center)});
    } else {
        for (const auto* img : train) centers.push_back({img->pose, img->id});
    }

    std::vector<CandidatePose> out;
    out.reserve(centers.size() * static_cast<std::size_t>(cfg.samples_per_pose));
    const double max_angle = deg_to_rad(cfg.max_angle_deg);
    for (const auto& center : centers) {
        for (int s = 0; s < cfg.samples_per_pose; ++s) {
            CandidatePose cand;
            cand.source_image_id = center.source_image_id;
            Eigen::Vector3d offset;
            Eigen::Vector3d axis;
            if (cfg.mode == SceneKind::kOutdoor) {
                const double a = rng.uniform(-cfg.outdoor_shift_m, cfg.outdoor_shift_m);
                const double b = rng.uniform(-cfg.outdoor_shift_m, cfg.outdoor_shift_m);
                offset = a * u + b * v;
                axis = plane.normal;
            } else {
                offset = {rng.uniform(-cfg.indoor_shift_m, cfg.indoor_shift_m),
                          rng.uniform(-cfg.indoor_shift_m, cfg.indoor_shift_m),
                          rng.uniform(-cfg.indoor_shift_m, cfg.indoor_shift_m)};
                axis = detail::random_unit_axis(rng);
            }
            const double angle = rng.uniform(-max_angle, max_angle);
            cand.pose.center = center.pose.center + offset;
            cand.pose.rotation =
                quat_normalize(center.pose.rotation * quat_from_axis_angle(axis, angle));
            out.push_back(std::move(cand));
        }
    }
    return out;
}

/// Greedy dedup against the training poses and earlier-accepted candidates
/// (a duplicate is within dedup_dist_m AND dedup_angle_deg), then removal of
/// candidates lodged inside or against the cloud: more than inside_count
/// points simultaneously in the viewing frustum and within inside_radius_m
/// of the camera center.
inline std::vector<CandidatePose> prune_poses(const std::vector<CandidatePose>& candidates,
                                              const std::vector<Pose>& training_poses,
                                              const Scene& scene, const AugmentationConfig& cfg) {
    cfg.validate();
    const auto id_to_image = [&scene](int id) { return scene.find_image(id); };

    std::vector<CandidatePose> accepted;
    for (const auto& cand : candidates) {
        auto duplicates = [&](const Pose& other) {
            return (cand.pose.center - other.center).norm() <= cfg.dedup_dist_m &&
                   quat_angular_error_deg(cand.pose.rotation, other.rotation) <=
                       cfg.dedup_angle_deg;
        };
        bool dup = false;
        for (const auto& t : training_poses)
            if (duplicates(t)) {
                dup = true;
                break;
            }
        for (std::size_t i = 0; !dup && i < accepted.size(); ++i)
            if (duplicates(accepted[i].pose)) dup = true;
        if (dup) continue;

        const ImageRecord* src = id_to_image(cand.source_image_id);
        if (!src) throw DegenerateGeometry("candidate references unknown source image");
        int near = 0;
        bool crowded = false;
        for (const auto& point : scene.points) {
            if ((point.position - cand.pose.center).norm() > cfg.inside_radius_m) continue;
            const auto proj = try_project(point.position, cand.pose, src->intrinsics);
            if (!proj || !proj->inside(src->intrinsics)) continue;
            if (++near > cfg.inside_count) {
                crowded = true;
                break;
            }
        }
        if (!crowded) accepted.push_back(cand);
    }
    return accepted;
}

/// Project the cloud into a candidate pose and keep the points that promise
/// detectable, repeatable features: some observation must give a relative
/// scale inside [scale_min, scale_max] and a viewing direction within
/// view_cone_deg of the new ray. Descriptor, orientation and the accepted
/// relative scale come from the nearest such observation (smallest camera
/// center distance). Views whose keypoints occupy fewer than
/// grid_check_min_nonempty of the sustainability bins are rejected.
inline std::optional<SyntheticView> synthesize_view(const CandidatePose& cand, const Scene& scene,
                                                    const AugmentationConfig& cfg) {
    cfg.validate();
    const ImageRecord* src = scene.find_image(cand.source_image_id);
    if (!src) throw DegenerateGeometry("candidate references unknown source image");

    std::unordered_map<int, const ImageRecord*> images_by_id;
    for (const auto& img : scene.images) images_by_id[img.id] = &img;

    SyntheticView view;
    view.pose = cand.pose;
    view.intrinsics = src->intrinsics;
    view.source_image_id = src->id;

    const double cos_cone = std::cos(deg_to_rad(cfg.view_cone_deg));
    for (std::size_t pi = 0; pi < scene.points.size(); ++pi) {
        const TrackedPoint& point = scene.points[pi];
        const auto proj = try_project(point.position, cand.pose, view.intrinsics);
        if (!proj || !proj->inside(view.intrinsics)) continue;
        const Eigen::Vector3d new_ray = point.position - cand.pose.center;
        const double new_ray_norm = new_ray.norm();

        const Observation* best = nullptr;
        double best_dist = std::numeric_limits<double>::infinity();
        double best_scale = 0.0;
        for (const auto& obs : point.observations) {
            const ImageRecord* img = images_by_id.at(obs.image_id);
            const Eigen::Vector3d cam = img->pose.to_camera(point.position);
            if (!(cam.z() > 0.0)) continue;
            const Keypoint& kp = img->keypoints[static_cast<std::size_t>(obs.keypoint_index)];
            const double rel_scale = kp.scale * (cam.z() / proj->depth) *
                                     (view.intrinsics.focal / img->intrinsics.focal);
            if (rel_scale < cfg.scale_min || rel_scale > cfg.scale_max) continue;
            const Eigen::Vector3d obs_ray = point.position - img->pose.center;
            const double denom = new_ray_norm * obs_ray.norm();
            if (!(denom > 0.0)) continue;
            if (new_ray.dot(obs_ray) / denom < cos_cone) continue;
            const double dist = (img->pose.center - cand.pose.center).norm();
            if (dist < best_dist) {
                best_dist = dist;
                best = &obs;
                best_scale = rel_scale;
            }
        }
        if (!best) continue;

        const ImageRecord* img = images_by_id.at(best->image_id);
        const Keypoint& src_kp = img->keypoints[static_cast<std::size_t>(best->keypoint_index)];
        Keypoint kp;
        kp.p = proj->pixel.x();
        kp.q = proj->pixel.y();
        kp.scale = best_scale;
        kp.orientation = src_kp.orientation;
        kp.descriptor = src_kp.descriptor;
        view.keypoints.push_back(std::move(kp));
        view.meta.push_back({KeypointOrigin::kInlier, static_cast<int>(pi), best->image_id,
                             proj->pixel});
    }

    // Sustainability: the projected points must cover enough of the image.
    std::vector<std::uint8_t> bins(
        static_cast<std::size_t>(cfg.grid_check_cols) * cfg.grid_check_rows, 0);
    for (const auto& kp : view.keypoints) {
        const int bx = std::min(cfg.grid_check_cols - 1,
                                static_cast<int>(kp.p * cfg.grid_check_cols / view.intrinsics.width));
        const int by = std::min(cfg.grid_check_rows - 1,
                                static_cast<int>(kp.q * cfg.grid_check_rows / view.intrinsics.height));
        bins[static_cast<std::size_t>(by) * cfg.grid_check_cols + bx] = 1;
    }
    int nonempty = 0;
    for (auto b : bins) nonempty += b;
    if (nonempty < cfg.grid_check_min_nonempty) return std::nullopt;
    return view;
}

/// Per-dimension variance of within-track descriptor deviations, pooled over
/// all tracks with at least two training observations (unbiased: the divisor
/// is the summed per-track degrees of freedom).
inline Eigen::VectorXd estimate_descriptor_variance(const Scene& scene) {
    if (scene.descriptor_dim <= 0) throw InsufficientData("scene has no descriptors");
    Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(scene.descriptor_dim);
    std::int64_t dof = 0;

    std::unordered_map<int, const ImageRecord*> images_by_id;
    for (const auto& img : scene.images) images_by_id[img.id] = &img;

    std::vector<Eigen::VectorXd> track;
    for (const auto& point : scene.points) {
        track.clear();
        for (const auto& obs : point.observations) {
            const ImageRecord* img = images_by_id.at(obs.image_id);
            if (!img->is_training) continue;
            track.push_back(img->keypoints[static_cast<std::size_t>(obs.keypoint_index)]
                                .descriptor.cast<double>());
        }
        if (track.size() < 2) continue;
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(scene.descriptor_dim);
        for (const auto& d : track) mean += d;
        mean /= static_cast<double>(track.size());
        for (const auto& d : track) sum_sq += (d - mean).cwiseAbs2();
        dof += static_cast<std::int64_t>(track.size()) - 1;
    }
    if (dof == 0)
        throw InsufficientData("no track has two or more training observations");
    return sum_sq / static_cast<double>(dof);
}

/// Corruption stage. In order: (a) per-dimension Gaussian descriptor noise
/// with variance sigma_x, (b) Gaussian pixel noise (truncated at 5 sigma and
/// clamped to the image), (c) ceil(outlier_fraction * n_inliers) random
/// outliers copying the appearance of random track observations, (d) when the
/// view shares at least homography_min_inliers correspondences with its
/// source image, a homography maps ceil(outlier_fraction * n) of the source's
/// non-SfM keypoints into the view (n = available non-SfM keypoints);
/// out-of-bounds projections are dropped. NoiseMode::kGaussian stops after
/// (b); NoiseMode::kClean returns the view untouched.
inline SyntheticView corrupt_view(const SyntheticView& input, const Scene& scene,
                                  const ImageRecord& source_image,
                                  const Eigen::VectorXd& sigma_x, const AugmentationConfig& cfg,
                                  Rng& rng) {
    cfg.validate();
    if (cfg.noise == NoiseMode::kClean) return input;
    if (sigma_x.size() != scene.descriptor_dim)
        throw ShapeError("sigma_x length must equal the scene descriptor dimension");

    SyntheticView view = input;
    const double w = view.intrinsics.width;
    const double h = view.intrinsics.height;
    auto clamp_pixel = [&](double x, double lim) {
        return std::min(std::max(x, 0.0), lim - 1e-3);
    };

    // (a) descriptor noise
    for (auto& kp : view.keypoints)
        for (int d = 0; d < kp.descriptor.size(); ++d)
            if (sigma_x(d) > 0.0)
                kp.descriptor(d) += static_cast<float>(rng.normal(0.0, std::sqrt(sigma_x(d))));

    // (b) pixel noise, truncated so every inlier stays within 5 sigma of its
    // exact projection
    if (cfg.pixel_noise_sigma > 0.0) {
        const double cap = 5.0 * cfg.pixel_noise_sigma;
        for (auto& kp : view.keypoints) {
            const double dx = std::clamp(rng.normal(0.0, cfg.pixel_noise_sigma), -cap, cap);
            const double dy = std::clamp(rng.normal(0.0, cfg.pixel_noise_sigma), -cap, cap);
            kp.p = clamp_pixel(kp.p + dx, w);
            kp.q = clamp_pixel(kp.q + dy, h);
        }
    }

    if (cfg.noise == NoiseMode::kGaussian) return view;

    // (c) random outliers
    const std::size_t n_inliers = view.keypoints.size();
    if (cfg.outlier_fraction > 0.0 && !scene.points.empty()) {
        const auto n_outliers = static_cast<std::size_t>(
            std::ceil(cfg.outlier_fraction * static_cast<double>(n_inliers)));
        for (std::size_t k = 0; k < n_outliers; ++k) {
            const auto pi = static_cast<std::size_t>(rng.uniform_index(scene.points.size()));
            const TrackedPoint& point = scene.points[pi];
            if (point.observations.empty()) continue;
            const auto oi = static_cast<std::size_t>(rng.uniform_index(point.observations.size()));
            const Observation& obs = point.observations[oi];
            const ImageRecord* img = scene.find_image(obs.image_id);
            const Keypoint& src_kp = img->keypoints[static_cast<std::size_t>(obs.keypoint_index)];
            Keypoint kp;
            kp.p = rng.uniform(0.0, w);
            kp.q = rng.uniform(0.0, h);
            kp.scale = src_kp.scale;
            kp.orientation = src_kp.orientation;
            kp.descriptor = src_kp.descriptor;
            const Eigen::Vector2d placed(kp.p, kp.q);
            view.keypoints.push_back(std::move(kp));
            view.meta.push_back({KeypointOrigin::kRandomOutlier, static_cast<int>(pi),
                                 obs.image_id, placed});
        }
    }

    // (d) homography-mapped non-SfM keypoints of the source image
    std::vector<Eigen::Vector2d> src_px, dst_px;
    {
        std::unordered_map<int, int> point_to_source_kp;
        for (std::size_t pi = 0; pi < scene.points.size(); ++pi)
            for (const auto& obs : scene.points[pi].observations)
                if (obs.image_id == source_image.id)
                    point_to_source_kp[static_cast<int>(pi)] = obs.keypoint_index;
        for (std::size_t k = 0; k < n_inliers; ++k) {
            if (view.meta[k].origin != KeypointOrigin::kInlier) continue;
            auto it = point_to_source_kp.find(view.meta[k].point_index);
            if (it == point_to_source_kp.end()) continue;
            const Keypoint& skp = source_image.keypoints[static_cast<std::size_t>(it->second)];
            src_px.push_back({skp.p, skp.q});
            dst_px.push_back(view.meta[k].clean_pixel);
        }
    }
    if (static_cast<int>(src_px.size()) >= cfg.homography_min_inliers &&
        cfg.outlier_fraction > 0.0) {
        Eigen::Matrix3d hom;
        bool ok = true;
        try {
            hom = fit_homography(src_px, dst_px);
        } catch (const DegenerateGeometry&) {
            ok = false;
        }
        if (ok) {
            const auto mask = sfm_keypoint_mask(scene, source_image.id);
            std::vector<int> non_sfm;
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (!mask[i]) non_sfm.push_back(static_cast<int>(i));
            const auto n_map = static_cast<std::size_t>(
                std::ceil(cfg.outlier_fraction * static_cast<double>(non_sfm.size())));
            rng.shuffle(non_sfm.begin(), non_sfm.end());
            for (std::size_t k = 0; k < n_map && k < non_sfm.size(); ++k) {
                const Keypoint& skp =
                    source_image.keypoints[static_cast<std::size_t>(non_sfm[k])];
                const Eigen::Vector2d mapped = apply_homography(hom, {skp.p, skp.q});
                if (mapped.x() < 0.0 || mapped.x() >= w || mapped.y() < 0.0 || mapped.y() >= h)
                    continue;
                Keypoint kp;
                kp.p = mapped.x();
                kp.q = mapped.y();
                kp.scale = skp.scale;
                kp.orientation = skp.orientation;
                kp.descriptor = skp.descriptor;
                view.keypoints.push_back(std::move(kp));
                view.meta.push_back({KeypointOrigin::kHomographyOutlier, -1, source_image.id,
                                     mapped});
            }
        }
    }
    return view;
}

struct SynthesisStats {
    int candidates = 0;
    int pruned = 0;
    int sustainability_rejected = 0;
    int accepted = 0;
};

struct SynthesisResult {
    std::vector<SyntheticView> views;
    SynthesisStats stats;
};

/// Full pipeline: augment -> prune -> per-pose synthesize + corrupt. Each
/// surviving candidate gets an independent random stream (global seed XOR
/// candidate index), so fanning out over threads cannot change the output.
inline SynthesisResult run_algorithm1(const Scene& scene, const AugmentationConfig& cfg,
                                      std::uint64_t seed, int threads = 1,
                                      const std::vector<Pose>* around = nullptr) {
    cfg.validate();
    Rng master(seed);
    const auto candidates = augment_poses(scene, cfg, master, around);

    std::vector<Pose> training_poses;
    for (const auto& img : scene.images)
        if (img.is_training) training_poses.push_back(img.pose);
    const auto kept = prune_poses(candidates, training_poses, scene, cfg);

    Eigen::VectorXd sigma_x = Eigen::VectorXd::Zero(std::max(scene.descriptor_dim, 0));
    if (cfg.noise != NoiseMode::kClean) sigma_x = estimate_descriptor_variance(scene);

    SynthesisResult result;
    result.stats.candidates = static_cast<int>(candidates.size());
    result.stats.pruned = static_cast<int>(candidates.size() - kept.size());

    std::vector<std::optional<SyntheticView>> slots(kept.size());
    parallel_for(kept.size(), threads, [&](std::size_t i) {
        auto view = synthesize_view(kept[i], scene, cfg);
        if (!view) return;
        Rng stream = Rng::stream(seed, i);
        const ImageRecord* src = scene.find_image(kept[i].source_image_id);
        slots[i] = corrupt_view(*view, scene, *src, sigma_x, cfg, stream);
    });

    for (auto& slot : slots) {
        if (slot)
            result.views.push_back(std::move(*slot));
        else
            ++result.stats.sustainability_rejected;
    }
    result.stats.accepted = static_cast<int>(result.views.size());
    return result;
}

} // namespace posekit
