// Quaternion algebra, pinhole projection, robust plane fitting, homography
// estimation and pose-error metrics.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/random.hpp"

namespace posekit {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// ---------------------------------------------------------------------------
// Quaternion
// ---------------------------------------------------------------------------

/// Unit quaternion representing a 3D rotation. Stored on the canonical
/// hemisphere (w >= 0) after normalization.
struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Quaternion() = default;
    Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Eigen::Vector4d coeffs() const { return {w, x, y, z}; }

    static Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }

    Quaternion conjugate() const { return {w, -x, -y, -z}; }

    /// Hamilton product; rotation composition R(a*b) = R(a) * R(b).
    friend Quaternion operator*(const Quaternion& a, const Quaternion& b) {
        return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
                a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
                a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
                a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
    }
};

/// Scale to unit norm and flip onto the canonical hemisphere (w >= 0).
/// Throws DegenerateQuaternion on (near-)zero input. Idempotent: inputs that
/// are already unit-norm are returned unchanged apart from the hemisphere fix.
inline Quaternion quat_normalize(const Quaternion& q) {
    const double n = q.norm();
    if (!(n > 1e-15)) throw DegenerateQuaternion("cannot normalize zero-norm quaternion");
    Quaternion out = q;
    if (std::abs(n - 1.0) > 1e-12) {
        out.w /= n;
        out.x /= n;
        out.y /= n;
        out.z /= n;
    }
    if (out.w < 0.0) {
        out.w = -out.w;
        out.x = -out.x;
        out.y = -out.y;
        out.z = -out.z;
    }
    return out;
}

/// Rotation angle between two unit quaternions, in degrees:
/// 2*acos(|<q1,q2>|), range [0, 180]. Sign-invariant in both arguments.
inline double quat_angular_error_deg(const Quaternion& q1, const Quaternion& q2) {
    const double dot = q1.w * q2.w + q1.x * q2.x + q1.y * q2.y + q1.z * q2.z;
    const double c = std::clamp(std::abs(dot), 0.0, 1.0);
    return rad_to_deg(2.0 * std::acos(c));
}

inline Quaternion quat_from_axis_angle(const Eigen::Vector3d& axis, double angle_rad) {
    const double n = axis.norm();
    if (!(n > 0.0)) throw DegenerateQuaternion("axis-angle with zero axis");
    const double half = 0.5 * angle_rad;
    const double s = std::sin(half) / n;
    return {std::cos(half), axis.x() * s, axis.y() * s, axis.z() * s};
}

inline Eigen::Matrix3d quat_to_rotation_matrix(const Quaternion& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

inline Quaternion quat_from_rotation_matrix(const Eigen::Matrix3d& r) {
    const double tr = r.trace();
    Quaternion q;
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q.w = 0.25 * s;
        q.x = (r(2, 1) - r(1, 2)) / s;
        q.y = (r(0, 2) - r(2, 0)) / s;
        q.z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q.w = (r(2, 1) - r(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (r(0, 1) + r(1, 0)) / s;
        q.z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q.w = (r(0, 2) - r(2, 0)) / s;
        q.x = (r(0, 1) + r(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (r(1, 2) + r(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q.w = (r(1, 0) - r(0, 1)) / s;
        q.x = (r(0, 2) + r(2, 0)) / s;
        q.y = (r(1, 2) + r(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return quat_normalize(q);
}

inline Eigen::Vector3d quat_rotate(const Quaternion& q, const Eigen::Vector3d& v) {
    // v' = v + 2*u x (u x v + w*v), u = (x,y,z)
    const Eigen::Vector3d u(q.x, q.y, q.z);
    const Eigen::Vector3d t = 2.0 * u.cross(v);
    return v + q.w * t + u.cross(t);
}

// ---------------------------------------------------------------------------
// Pose and camera model
// ---------------------------------------------------------------------------

/// Absolute camera pose. World-to-camera mapping is
///   x_cam = R(rotation) * (X - center),
/// i.e. `center` is the camera position in the world frame. The translation
/// used by training losses and positional error metrics is `center`.
struct Pose {
    Quaternion rotation;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();

    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
        return quat_rotate(rotation, world - center);
    }

    Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const {
        return quat_rotate(rotation.conjugate(), cam) + center;
    }

    /// Unit vector of the camera's optical axis expressed in the world frame.
    Eigen::Vector3d viewing_direction() const {
        return quat_rotate(rotation.conjugate(), Eigen::Vector3d(0, 0, 1));
    }
};

struct CameraIntrinsics {
    double focal = 1.0;                                 // pixels
    Eigen::Vector2d principal_point{0.0, 0.0};          // pixels
    double radial_k1 = 0.0;                             // single-parameter model
    int width = 0;                                      // pixels
    int height = 0;
};

struct ProjectedPoint {
    Eigen::Vector2d pixel;
    double depth = 0.0;

    bool inside(const CameraIntrinsics& k) const {
        return pixel.x() >= 0.0 && pixel.x() < k.width && pixel.y() >= 0.0 && pixel.y() < k.height;
    }
};

/// Perspective projection with one-parameter radial distortion applied to
/// normalized coordinates: r' = r * (1 + k1 * r^2). Returns nullopt when the
/// point is not in front of the camera.
inline std::optional<ProjectedPoint> try_project(const Eigen::Vector3d& world, const Pose& pose,
                                                 const CameraIntrinsics& k) {
    const Eigen::Vector3d cam = pose.to_camera(world);
    if (!(cam.z() > 0.0)) return std::nullopt;
    const double xn = cam.x() / cam.z();
    const double yn = cam.y() / cam.z();
    const double r2 = xn * xn + yn * yn;
    const double d = 1.0 + k.radial_k1 * r2;
    ProjectedPoint p;
    p.pixel = k.principal_point + k.focal * d * Eigen::Vector2d(xn, yn);
    p.depth = cam.z();
    return p;
}

/// Same as try_project but raises BehindCamera for depth <= 0.
inline ProjectedPoint project(const Eigen::Vector3d& world, const Pose& pose,
                              const CameraIntrinsics& k) {
    auto p = try_project(world, pose, k);
    if (!p) throw BehindCamera("point projects behind the camera");
    return *p;
}

/// Inverse of project for the undistorted model (radial_k1 must be 0).
inline Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double depth, const Pose& pose,
                                 const CameraIntrinsics& k) {
    const double xn = (pixel.x() - k.principal_point.x()) / k.focal;
    const double yn = (pixel.y() - k.principal_point.y()) / k.focal;
    return pose.to_world(Eigen::Vector3d(xn * depth, yn * depth, depth));
}

// ---------------------------------------------------------------------------
// Robust plane fitting
// ---------------------------------------------------------------------------

/// Plane { X : normal . X = offset } with unit normal.
struct Plane {
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    double offset = 0.0;

    double signed_distance(const Eigen::Vector3d& p) const { return normal.dot(p) - offset; }

    /// Orthonormal in-plane basis, deterministic in the normal.
    std::pair<Eigen::Vector3d, Eigen::Vector3d> basis() const {
        const Eigen::Vector3d a = std::abs(normal.x()) <= std::abs(normal.y())
                                      ? (std::abs(normal.x()) <= std::abs(normal.z())
                                             ? Eigen::Vector3d::UnitX()
                                             : Eigen::Vector3d::UnitZ())
                                      : (std::abs(normal.y()) <= std::abs(normal.z())
                                             ? Eigen::Vector3d::UnitY()
                                             : Eigen::Vector3d::UnitZ());
        const Eigen::Vector3d u = a.cross(normal).normalized();
        const Eigen::Vector3d v = normal.cross(u);
        return {u, v};
    }
};

struct PlaneFitOptions {
    int iterations = 1000;
    /// Inlier threshold as a fraction of the bounding-box diagonal.
    double threshold_fraction = 0.10;
    /// Candidates whose robust score is within this fraction of the best are
    /// considered tied; the tie is broken toward the up-axis estimate.
    double tie_band = 0.02;
};

namespace detail {

/// Least-squares plane through a point set (total least squares via the
/// smallest-eigenvalue direction of the scatter matrix).
inline std::optional<Plane> plane_least_squares(const std::vector<Eigen::Vector3d>& pts) {
    if (pts.size() < 3) return std::nullopt;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector3d d = p - mean;
        scatter += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    // Collinear (or coincident) points leave two near-zero eigenvalues.
    if (eig.eigenvalues()(1) <= 1e-12 * std::max(1.0, eig.eigenvalues()(2))) return std::nullopt;
    Plane plane;
    plane.normal = eig.eigenvectors().col(0).normalized();
    plane.offset = plane.normal.dot(mean);
    return plane;
}

/// Direction of smallest variance of a point set; used as the up-axis
/// estimate for camera trajectories that are roughly planar.
inline Eigen::Vector3d smallest_variance_axis(const std::vector<Eigen::Vector3d>& pts) {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector3d d = p - mean;
        scatter += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    return eig.eigenvectors().col(0).normalized();
}

} // namespace detail

/// RANSAC plane fit to camera centers with least-squares refit on the inlier
/// set. Candidates are scored with a truncated quadratic (sum of
/// min(distance, threshold)^2): plain inlier counting lets a plane with the
/// full data spread inside the band absorb gross outliers along its own
/// surface, which breaks exactly the contaminated trajectories this fit is
/// for. Among candidates whose scores tie (within opts.tie_band of the best),
/// prefers the one whose normal is closest to the axis of smallest center
/// variance; the returned normal has a non-negative dot product with that
/// axis.
inline Plane fit_horizontal_plane(const std::vector<Eigen::Vector3d>& centers, Rng& rng,
                                  const PlaneFitOptions& opts = {}) {
    const std::size_t n = centers.size();
    if (n < 3) throw DegenerateGeometry("plane fit needs at least 3 points");

    Eigen::Vector3d lo = centers.front(), hi = centers.front();
    for (const auto& c : centers) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
    }
    const double diag = (hi - lo).norm();
    const double threshold = std::max(opts.threshold_fraction * diag,
                                      std::numeric_limits<double>::epsilon());

    const Eigen::Vector3d up = detail::smallest_variance_axis(centers);

    struct Candidate {
        Plane plane;
        double score = 0.0;
        int inliers = 0;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(static_cast<std::size_t>(opts.iterations));

    double best_score = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.iterations; ++it) {
        const std::size_t i = rng.uniform_index(n);
        std::size_t j = rng.uniform_index(n);
        std::size_t k = rng.uniform_index(n);
        if (i == j || i == k || j == k) continue;
        const Eigen::Vector3d e1 = centers[j] - centers[i];
        const Eigen::Vector3d e2 = centers[k] - centers[i];
        Eigen::Vector3d normal = e1.cross(e2);
        const double nn = normal.norm();
        if (nn <= 1e-12 * std::max(1.0, e1.norm() * e2.norm())) continue;
        normal /= nn;
        Plane plane{normal, normal.dot(centers[i])};
        double score = 0.0;
        int inliers = 0;
        for (const auto& c : centers) {
            const double d = std::min(std::abs(plane.signed_distance(c)), threshold);
            score += d * d;
            if (d < threshold) ++inliers;
        }
        if (inliers >= 3) {
            candidates.push_back({plane, score, inliers});
            best_score = std::min(best_score, score);
        }
    }
    if (candidates.empty()) throw DegenerateGeometry("plane RANSAC found no valid model (collinear points?)");

    const double band_ceiling =
        best_score + opts.tie_band * (best_score > 0 ? best_score : 1e-12);
    const Candidate* chosen = nullptr;
    double best_alignment = -1.0;
    for (const auto& cand : candidates) {
        if (cand.score > band_ceiling) continue;
        const double alignment = std::abs(cand.plane.normal.dot(up));
        if (alignment > best_alignment) {
            best_alignment = alignment;
            chosen = &cand;
        }
    }

    std::vector<Eigen::Vector3d> inlier_pts;
    for (const auto& c : centers)
        if (std::abs(chosen->plane.signed_distance(c)) <= threshold) inlier_pts.push_back(c);

    Plane refined = chosen->plane;
    if (auto ls = detail::plane_least_squares(inlier_pts)) refined = *ls;
    if (refined.normal.dot(up) < 0.0) {
        refined.normal = -refined.normal;
        refined.offset = -refined.offset;
    }
    return refined;
}

// ---------------------------------------------------------------------------
// Homography estimation
// ---------------------------------------------------------------------------

/// Normalized DLT homography estimate minimizing algebraic error. The result
/// is scaled so that H(2,2) = 1 when that entry is nonzero.
inline Eigen::Matrix3d fit_homography(const std::vector<Eigen::Vector2d>& src,
                                      const std::vector<Eigen::Vector2d>& dst) {
    const std::size_t n = src.size();
    if (n < 4 || dst.size() != n)
        throw DegenerateGeometry("homography fit needs >= 4 correspondences");

    // Hartley normalization: centroid to origin, mean distance sqrt(2).
    auto normalize = [](const std::vector<Eigen::Vector2d>& pts) {
        Eigen::Vector2d mean = Eigen::Vector2d::Zero();
        for (const auto& p : pts) mean += p;
        mean /= static_cast<double>(pts.size());
        double avg_dist = 0.0;
        for (const auto& p : pts) avg_dist += (p - mean).norm();
        avg_dist /= static_cast<double>(pts.size());
        const double scale = avg_dist > 1e-12 ? std::sqrt(2.0) / avg_dist : 1.0;
        Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
        t(0, 0) = t(1, 1) = scale;
        t(0, 2) = -scale * mean.x();
        t(1, 2) = -scale * mean.y();
        return t;
    };
    const Eigen::Matrix3d t_src = normalize(src);
    const Eigen::Matrix3d t_dst = normalize(dst);

    Eigen::MatrixXd a(2 * n, 9);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d s = t_src * src[i].homogeneous();
        const Eigen::Vector3d d = t_dst * dst[i].homogeneous();
        a.row(2 * i) << -s.x(), -s.y(), -1, 0, 0, 0, d.x() * s.x(), d.x() * s.y(), d.x();
        a.row(2 * i + 1) << 0, 0, 0, -s.x(), -s.y(), -1, d.y() * s.x(), d.y() * s.y(), d.y();
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    // A homography is determined up to scale; a second vanishing singular
    // value means the correspondences do not constrain it.
    if (sv(7) <= 1e-10 * std::max(sv(0), 1.0))
        throw DegenerateGeometry("homography design matrix is rank deficient");

    Eigen::Matrix3d h_norm;
    const Eigen::VectorXd v = svd.matrixV().col(8);
    h_norm << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);

    Eigen::Matrix3d h = t_dst.inverse() * h_norm * t_src;
    if (std::abs(h(2, 2)) > 1e-12) h /= h(2, 2);
    return h;
}

inline Eigen::Vector2d apply_homography(const Eigen::Matrix3d& h, const Eigen::Vector2d& p) {
    const Eigen::Vector3d q = h * p.homogeneous();
    return q.hnormalized();
}

} // namespace posekit
