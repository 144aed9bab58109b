// Pose-accuracy metrics and feature-contribution analysis.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/feature_grid.hpp"
#include "posekit/geometry.hpp"
#include "posekit/net.hpp"
#include "posekit/parallel.hpp"
#include "posekit/random.hpp"
#include "posekit/scene.hpp"

namespace posekit {

/// One network example: the keypoints of an image plus its ground-truth pose.
struct ViewExample {
    int image_id = 0;
    int width = 0;
    int height = 0;
    std::vector<Keypoint> keypoints;
    Pose pose;
};

/// Lower median: for even counts the smaller of the two central values.
inline double lower_median(std::vector<double> values) {
    if (values.empty()) throw InsufficientData("median of empty set");
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
}

struct ImageEvalResult {
    int image_id = 0;
    double pos_err_m = 0.0;
    double ang_err_deg = 0.0;
};

struct EvalReport {
    std::vector<ImageEvalResult> per_image;
    double median_pos_err_m = 0.0;
    double median_ang_err_deg = 0.0;
    std::vector<double> sorted_pos_errors;
    std::vector<double> sorted_ang_errors;
};

template <typename S>
struct PosePrediction {
    Eigen::Vector3d translation;
    Quaternion rotation; // normalized
};

/// Predict a pose for one example: `repeats` eval-mode forwards with fresh
/// binning randomness; translations are averaged, quaternions are normalized,
/// hemisphere-aligned to the first and re-normalized after averaging.
template <typename S>
PosePrediction<S> predict_pose(NetParams<S>& params, const ViewExample& example, int repeats,
                               Rng& rng) {
    if (repeats < 1) throw InsufficientData("repeats must be >= 1");
    Eigen::Vector3d t_sum = Eigen::Vector3d::Zero();
    Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
    Eigen::Vector4d q_first;
    for (int r = 0; r < repeats; ++r) {
        FeatureGrid<S> grid = bin_features<S>(example.keypoints, example.width, example.height,
                                              params.cfg.d1, params.cfg.d2, rng,
                                              params.cfg.position_encoding);
        ForwardTrace<S> trace = forward(params, grid, Mode::kEval, rng);
        t_sum += trace.translation.col(0).template cast<double>();
        Eigen::Vector4d q = trace.quaternion.col(0).template cast<double>();
        const double n = q.norm();
        if (!(n > 0.0)) throw DegenerateQuaternion("network emitted a zero quaternion");
        q /= n;
        if (r == 0)
            q_first = q;
        else if (q.dot(q_first) < 0.0)
            q = -q;
        q_sum += q;
    }
    PosePrediction<S> pred;
    pred.translation = t_sum / static_cast<double>(repeats);
    pred.rotation = quat_normalize(Quaternion(q_sum(0), q_sum(1), q_sum(2), q_sum(3)));
    return pred;
}

template <typename S>
EvalReport evaluate(NetParams<S>& params, const std::vector<ViewExample>& dataset, int repeats,
                    Rng& rng, int threads = 1) {
    if (dataset.empty()) throw InsufficientData("evaluation dataset is empty");
    const std::uint64_t base_seed = rng.next_u64();

    EvalReport report;
    report.per_image.resize(dataset.size());
    parallel_for(dataset.size(), threads, [&](std::size_t i) {
        const ViewExample& ex = dataset[i];
        // Stream keyed by image id, not dataset position: per-image results
        // (and the medians) are then invariant to dataset ordering.
        Rng local = Rng::stream(base_seed, static_cast<std::uint64_t>(ex.image_id));
        const auto pred = predict_pose(params, ex, repeats, local);
        ImageEvalResult r;
        r.image_id = ex.image_id;
        r.pos_err_m = (pred.translation - ex.pose.center).norm();
        r.ang_err_deg = quat_angular_error_deg(pred.rotation, ex.pose.rotation);
        report.per_image[i] = r;
    });

    for (const auto& r : report.per_image) {
        report.sorted_pos_errors.push_back(r.pos_err_m);
        report.sorted_ang_errors.push_back(r.ang_err_deg);
    }
    std::sort(report.sorted_pos_errors.begin(), report.sorted_pos_errors.end());
    std::sort(report.sorted_ang_errors.begin(), report.sorted_ang_errors.end());
    report.median_pos_err_m = lower_median(report.sorted_pos_errors);
    report.median_ang_err_deg = lower_median(report.sorted_ang_errors);
    return report;
}

/// Average per-keypoint contribution over `runs` re-binned eval forwards.
/// Each run attributes a cell's winning-unit count to the keypoint selected
/// for that cell; keypoints never selected score 0. Counts won by cells that
/// hold no keypoint (possible through biases acting on empty cells) are not
/// attributable and are dropped.
template <typename S>
std::vector<double> contribution_map(NetParams<S>& params, const std::vector<Keypoint>& keypoints,
                                     int width, int height, int runs, Rng& rng) {
    if (runs < 1) throw InsufficientData("runs must be >= 1");
    std::vector<double> totals(keypoints.size(), 0.0);
    for (int run = 0; run < runs; ++run) {
        FeatureGrid<S> grid = bin_features<S>(keypoints, width, height, params.cfg.d1,
                                              params.cfg.d2, rng, params.cfg.position_encoding);
        ForwardTrace<S> trace = forward(params, grid, Mode::kEval, rng);
        const std::vector<int> counts = contribution_counts(trace, params.cfg, 0);
        for (std::size_t cell = 0; cell < counts.size(); ++cell) {
            if (counts[cell] == 0) continue;
            const std::int32_t kp = grid.selected[cell];
            if (kp >= 0) totals[static_cast<std::size_t>(kp)] += counts[cell];
        }
    }
    for (auto& t : totals) t /= static_cast<double>(runs);
    return totals;
}

} // namespace posekit
