// Conversion of a variable-size keypoint set into the fixed d1 x d2 x (D+5)
// array consumed by the network. The image is split into d1 x d2 cells; when
// several keypoints fall into one cell a single one is chosen uniformly at
// random, so re-binning the same image is intentionally stochastic.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/random.hpp"
#include "posekit/scene.hpp"

namespace posekit {

/// How the two position channels are encoded.
enum class PositionEncoding {
    kModCellCount, // p mod d1, q mod d2 (value folded by the cell *count*)
    kModCellWidth  // p mod (W/d1), q mod (H/d2) (offset within the cell)
};

template <typename Scalar>
struct FeatureGrid {
    int d1 = 0;
    int d2 = 0;
    int channels = 0; // D + 5
    /// channels x (d1*d2); column c is the feature vector of cell c,
    /// cell (cx, cy) at column cy * d1 + cx. Empty cells are exactly zero.
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> data;
    std::vector<std::uint8_t> occupancy;  // d1*d2
    std::vector<std::int32_t> selected;   // keypoint index per cell, -1 if empty

    int cell_count() const { return d1 * d2; }
};

using FeatureGridF = FeatureGrid<float>;
using FeatureGridD = FeatureGrid<double>;

/// Cell of a pixel position; requires 0 <= p < w.
inline int grid_cell_index(double p, double q, int w, int h, int d1, int d2) {
    int cx = static_cast<int>(std::floor(p / (static_cast<double>(w) / d1)));
    int cy = static_cast<int>(std::floor(q / (static_cast<double>(h) / d2)));
    if (cx >= d1) cx = d1 - 1; // guard against float rounding at the edge
    if (cy >= d2) cy = d2 - 1;
    return cy * d1 + cx;
}

template <typename Scalar>
FeatureGrid<Scalar> bin_features(const std::vector<Keypoint>& keypoints, int w, int h, int d1,
                                 int d2, Rng& rng,
                                 PositionEncoding encoding = PositionEncoding::kModCellCount) {
    if (w <= 0 || h <= 0 || d1 <= 0 || d2 <= 0)
        throw ShapeError("bin_features requires positive image and grid dimensions");

    int dim = 0;
    for (const auto& kp : keypoints) {
        if (kp.p < 0.0 || kp.p >= w || kp.q < 0.0 || kp.q >= h)
            throw OutOfBounds("keypoint (" + std::to_string(kp.p) + ", " + std::to_string(kp.q) +
                              ") outside image " + std::to_string(w) + "x" + std::to_string(h));
        dim = static_cast<int>(kp.descriptor.size());
    }

    FeatureGrid<Scalar> grid;
    grid.d1 = d1;
    grid.d2 = d2;
    grid.channels = dim + 5;
    grid.data.setZero(grid.channels, d1 * d2);
    grid.occupancy.assign(static_cast<std::size_t>(d1) * d2, 0);
    grid.selected.assign(static_cast<std::size_t>(d1) * d2, -1);

    std::vector<std::vector<std::int32_t>> buckets(static_cast<std::size_t>(d1) * d2);
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        const int cell = grid_cell_index(keypoints[i].p, keypoints[i].q, w, h, d1, d2);
        buckets[static_cast<std::size_t>(cell)].push_back(static_cast<std::int32_t>(i));
    }

    for (int cell = 0; cell < d1 * d2; ++cell) {
        const auto& bucket = buckets[static_cast<std::size_t>(cell)];
        if (bucket.empty()) continue;
        const std::int32_t pick =
            bucket[static_cast<std::size_t>(rng.uniform_index(bucket.size()))];
        const Keypoint& kp = keypoints[static_cast<std::size_t>(pick)];
        if (kp.descriptor.size() != dim)
            throw ShapeError("inconsistent descriptor dimensions across keypoints");

        auto col = grid.data.col(cell);
        for (int d = 0; d < dim; ++d) col(d) = static_cast<Scalar>(kp.descriptor(d));
        if (encoding == PositionEncoding::kModCellCount) {
            col(dim) = static_cast<Scalar>(std::fmod(kp.p, static_cast<double>(d1)));
            col(dim + 1) = static_cast<Scalar>(std::fmod(kp.q, static_cast<double>(d2)));
        } else {
            col(dim) = static_cast<Scalar>(std::fmod(kp.p, static_cast<double>(w) / d1));
            col(dim + 1) = static_cast<Scalar>(std::fmod(kp.q, static_cast<double>(h) / d2));
        }
        col(dim + 2) = static_cast<Scalar>(std::sin(kp.orientation));
        col(dim + 3) = static_cast<Scalar>(std::cos(kp.orientation));
        col(dim + 4) = static_cast<Scalar>(std::log1p(kp.scale));
        grid.occupancy[static_cast<std::size_t>(cell)] = 1;
        grid.selected[static_cast<std::size_t>(cell)] = pick;
    }
    return grid;
}

/// Fraction of grid cells containing no keypoint.
inline double empty_cell_fraction(const std::vector<Keypoint>& keypoints, int w, int h, int d1,
                                  int d2) {
    std::vector<std::uint8_t> occupied(static_cast<std::size_t>(d1) * d2, 0);
    for (const auto& kp : keypoints) {
        if (kp.p < 0.0 || kp.p >= w || kp.q < 0.0 || kp.q >= h) continue;
        occupied[static_cast<std::size_t>(grid_cell_index(kp.p, kp.q, w, h, d1, d2))] = 1;
    }
    int empty = 0;
    for (auto o : occupied)
        if (!o) ++empty;
    return static_cast<double>(empty) / static_cast<double>(d1 * d2);
}

} // namespace posekit
