// Pose regression network: per-cell 1x1 convolution stacks in three parallel
// branches, spatial-pyramid max-pooling, two fully connected layers with
// dropout, and split 40-d heads emitting a 3-d translation and a 4-d
// (unnormalized) quaternion. Forward and reverse passes are exact and
// hand-derived; max-pool argmax indices and dropout masks are recorded in a
// trace so the backward pass replays the same routing.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/feature_grid.hpp"
#include "posekit/random.hpp"

namespace posekit {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

struct NetConfig {
    int d1 = 32;
    int d2 = 32;
    int input_channels = 133; // descriptor dim + 5
    /// Parameter-count scale of the model family (0.25x / 1x / 4x). Channel
    /// widths scale with sqrt of this value so that the trainable parameter
    /// count scales (approximately) linearly with it.
    double width_multiplier = 1.0;
    std::vector<int> pyramid_levels = {0, 1, 2};
    int fc_dim = 1024;  // base width of fc6/fc7 (scaled like the conv channels)
    int head_dim = 40;  // per-task head width (not scaled)
    double dropout_p = 0.5;
    bool bn_after_relu = false; // default order: conv -> BN -> ReLU
    PositionEncoding position_encoding = PositionEncoding::kModCellCount;

    double channel_scale() const { return std::sqrt(width_multiplier); }

    /// Branch output width at pyramid level s (512 / 4^s at scale 1).
    int level_dim(int s) const {
        return std::max<int>(1, static_cast<int>(std::lround(channel_scale() * 512.0 /
                                                             static_cast<double>(1 << (2 * s)))));
    }

    /// Output channels of the four conv layers of the branch at level s:
    /// 128, 256/2^s, 256/2^s, 512/4^s at scale 1.
    std::array<int, 4> branch_channels(int s) const {
        const double cs = channel_scale();
        const int mid = std::max<int>(
            1, static_cast<int>(std::lround(cs * 256.0 / static_cast<double>(1 << s))));
        const int first = std::max<int>(1, static_cast<int>(std::lround(cs * 128.0)));
        return {first, mid, mid, level_dim(s)};
    }

    int effective_fc_dim() const {
        return std::max<int>(1, static_cast<int>(std::lround(channel_scale() * fc_dim)));
    }

    /// Length of the concatenated pooled feature vector.
    int concat_dim() const {
        int total = 0;
        for (int s : pyramid_levels) total += (1 << (2 * s)) * level_dim(s);
        return total;
    }

    int cell_count() const { return d1 * d2; }

    void validate() const {
        if (d1 <= 0 || d2 <= 0) throw ShapeError("grid dimensions must be positive");
        if (input_channels < 6) throw ShapeError("input_channels must be at least 6");
        if (!(width_multiplier > 0)) throw ShapeError("width_multiplier must be positive");
        if (pyramid_levels.empty()) throw ShapeError("at least one pyramid level is required");
        int prev = -1;
        for (int s : pyramid_levels) {
            if (s < 0 || s > 2) throw ShapeError("pyramid levels must be in {0,1,2}");
            if (s <= prev) throw ShapeError("pyramid levels must be strictly increasing");
            prev = s;
            if (d1 % (1 << s) != 0 || d2 % (1 << s) != 0)
                throw ShapeError("grid dimensions must be divisible by 2^level");
        }
        if (fc_dim <= 0 || head_dim <= 0) throw ShapeError("fc and head dimensions must be positive");
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw ShapeError("dropout_p must be in [0,1)");
    }
};

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct ConvLayerParams {
    MatX<S> weight; // out x in
    VecX<S> bias;
    VecX<S> bn_gain;
    VecX<S> bn_offset;
    VecX<S> bn_running_mean;
    VecX<S> bn_running_var;
};

template <typename S>
struct DenseParams {
    MatX<S> weight;
    VecX<S> bias;
};

template <typename S>
struct NetParams {
    NetConfig cfg;
    std::vector<std::array<ConvLayerParams<S>, 4>> branches; // aligned with cfg.pyramid_levels
    DenseParams<S> fc6, fc7;
    DenseParams<S> head_t, head_q; // fc_dim -> head_dim, ReLU
    DenseParams<S> out_t, out_q;   // head_dim -> 3 / 4, linear
    S log_sigma_q_sq = S(0);
    S log_sigma_t_sq = S(0);
    /// Bumped on every optimizer update; traces remember the version they
    /// were computed against.
    std::uint64_t version = 1;
};

template <typename S>
struct ConvLayerGrads {
    MatX<S> weight;
    VecX<S> bias;
    VecX<S> bn_gain;
    VecX<S> bn_offset;
};

template <typename S>
struct NetGrads {
    std::vector<std::array<ConvLayerGrads<S>, 4>> branches;
    DenseParams<S> fc6, fc7, head_t, head_q, out_t, out_q;
    S log_sigma_q_sq = S(0);
    S log_sigma_t_sq = S(0);
};

enum class ParamKind { kWeight, kBias, kBnGain, kBnOffset, kLogSigma };

template <typename S>
struct TensorView {
    S* data;
    Eigen::Index size;
    ParamKind kind;
};

/// Flat views of every trainable tensor, in the fixed serialization order:
/// branches (ascending level; per layer weight, bias, bn gain, bn offset),
/// fc6, fc7, head_t, head_q, out_t, out_q, then the two log-sigma scalars.
template <typename S>
std::vector<TensorView<S>> trainable_tensors(NetParams<S>& p) {
    std::vector<TensorView<S>> views;
    for (auto& branch : p.branches)
        for (auto& layer : branch) {
            views.push_back({layer.weight.data(), layer.weight.size(), ParamKind::kWeight});
            views.push_back({layer.bias.data(), layer.bias.size(), ParamKind::kBias});
            views.push_back({layer.bn_gain.data(), layer.bn_gain.size(), ParamKind::kBnGain});
            views.push_back({layer.bn_offset.data(), layer.bn_offset.size(), ParamKind::kBnOffset});
        }
    for (DenseParams<S>* d : {&p.fc6, &p.fc7, &p.head_t, &p.head_q, &p.out_t, &p.out_q}) {
        views.push_back({d->weight.data(), d->weight.size(), ParamKind::kWeight});
        views.push_back({d->bias.data(), d->bias.size(), ParamKind::kBias});
    }
    views.push_back({&p.log_sigma_q_sq, 1, ParamKind::kLogSigma});
    views.push_back({&p.log_sigma_t_sq, 1, ParamKind::kLogSigma});
    return views;
}

template <typename S>
std::vector<TensorView<S>> trainable_tensors(NetGrads<S>& g) {
    std::vector<TensorView<S>> views;
    for (auto& branch : g.branches)
        for (auto& layer : branch) {
            views.push_back({layer.weight.data(), layer.weight.size(), ParamKind::kWeight});
            views.push_back({layer.bias.data(), layer.bias.size(), ParamKind::kBias});
            views.push_back({layer.bn_gain.data(), layer.bn_gain.size(), ParamKind::kBnGain});
            views.push_back({layer.bn_offset.data(), layer.bn_offset.size(), ParamKind::kBnOffset});
        }
    for (DenseParams<S>* d : {&g.fc6, &g.fc7, &g.head_t, &g.head_q, &g.out_t, &g.out_q}) {
        views.push_back({d->weight.data(), d->weight.size(), ParamKind::kWeight});
        views.push_back({d->bias.data(), d->bias.size(), ParamKind::kBias});
    }
    views.push_back({&g.log_sigma_q_sq, 1, ParamKind::kLogSigma});
    views.push_back({&g.log_sigma_t_sq, 1, ParamKind::kLogSigma});
    return views;
}

/// Trainable parameter count (batch-norm running statistics excluded).
template <typename S>
std::int64_t parameter_count(NetParams<S>& params) {
    std::int64_t total = 0;
    for (const auto& view : trainable_tensors(params)) total += view.size;
    return total;
}

/// Forward multiply-accumulate count: conv weights touch every grid cell,
/// dense weights are applied once.
inline std::int64_t flop_count(const NetConfig& cfg) {
    cfg.validate();
    const std::int64_t cells = cfg.cell_count();
    std::int64_t flops = 0;
    for (int s : cfg.pyramid_levels) {
        const auto ch = cfg.branch_channels(s);
        int in = cfg.input_channels;
        for (int li = 0; li < 4; ++li) {
            flops += static_cast<std::int64_t>(in) * ch[li] * cells;
            in = ch[li];
        }
    }
    const int fc = cfg.effective_fc_dim();
    flops += static_cast<std::int64_t>(cfg.concat_dim()) * fc;
    flops += static_cast<std::int64_t>(fc) * fc;
    flops += 2LL * fc * cfg.head_dim;
    flops += static_cast<std::int64_t>(cfg.head_dim) * 3 + static_cast<std::int64_t>(cfg.head_dim) * 4;
    return flops;
}

template <typename S>
NetParams<S> init_params(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    NetParams<S> p;
    p.cfg = cfg;

    auto glorot = [&rng](MatX<S>& w, int fan_in, int fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
    };

    for (int s : cfg.pyramid_levels) {
        std::array<ConvLayerParams<S>, 4> branch;
        int in = cfg.input_channels;
        const auto ch = cfg.branch_channels(s);
        for (int li = 0; li < 4; ++li) {
            ConvLayerParams<S>& layer = branch[li];
            layer.weight.resize(ch[li], in);
            glorot(layer.weight, in, ch[li]);
            layer.bias = VecX<S>::Zero(ch[li]);
            layer.bn_gain = VecX<S>::Ones(ch[li]);
            layer.bn_offset = VecX<S>::Zero(ch[li]);
            layer.bn_running_mean = VecX<S>::Zero(ch[li]);
            layer.bn_running_var = VecX<S>::Ones(ch[li]);
            in = ch[li];
        }
        p.branches.push_back(std::move(branch));
    }

    auto dense = [&](DenseParams<S>& d, int in, int out) {
        d.weight.resize(out, in);
        glorot(d.weight, in, out);
        d.bias = VecX<S>::Zero(out);
    };
    const int fc = cfg.effective_fc_dim();
    dense(p.fc6, cfg.concat_dim(), fc);
    dense(p.fc7, fc, fc);
    dense(p.head_t, fc, cfg.head_dim);
    dense(p.head_q, fc, cfg.head_dim);
    dense(p.out_t, cfg.head_dim, 3);
    dense(p.out_q, cfg.head_dim, 4);
    return p;
}

template <typename S>
NetGrads<S> zero_grads(const NetConfig& cfg) {
    NetGrads<S> g;
    for (int s : cfg.pyramid_levels) {
        std::array<ConvLayerGrads<S>, 4> branch;
        int in = cfg.input_channels;
        const auto ch = cfg.branch_channels(s);
        for (int li = 0; li < 4; ++li) {
            branch[li].weight = MatX<S>::Zero(ch[li], in);
            branch[li].bias = VecX<S>::Zero(ch[li]);
            branch[li].bn_gain = VecX<S>::Zero(ch[li]);
            branch[li].bn_offset = VecX<S>::Zero(ch[li]);
            in = ch[li];
        }
        g.branches.push_back(std::move(branch));
    }
    const int fc = cfg.effective_fc_dim();
    auto dense = [](DenseParams<S>& d, int in, int out) {
        d.weight = MatX<S>::Zero(out, in);
        d.bias = VecX<S>::Zero(out);
    };
    dense(g.fc6, cfg.concat_dim(), fc);
    dense(g.fc7, fc, fc);
    dense(g.head_t, fc, cfg.head_dim);
    dense(g.head_q, fc, cfg.head_dim);
    dense(g.out_t, cfg.head_dim, 3);
    dense(g.out_q, cfg.head_dim, 4);
    return g;
}

enum class Mode { kTrain, kEval };

template <typename S>
struct ConvLayerTrace {
    MatX<S> preact;    // z = W x + b
    MatX<S> output;    // y fed to the next layer
    VecX<S> mean, var; // batch statistics (train mode)
};

/// Everything the backward pass and the contribution analysis need.
template <typename S>
struct ForwardTrace {
    Mode mode = Mode::kEval;
    std::uint64_t params_version = 0;
    int batch = 0;

    MatX<S> input; // channels x (batch * cells)
    std::vector<std::array<ConvLayerTrace<S>, 4>> branches;

    MatX<S> pooled;                 // concat_dim x batch
    Eigen::MatrixX<std::int32_t> argmax; // winning cell per pooled unit

    MatX<S> fc6_preact, fc6_mask, fc6_out;
    MatX<S> fc7_preact, fc7_mask, fc7_out;
    MatX<S> head_t_preact, head_t_out;
    MatX<S> head_q_preact, head_q_out;

    MatX<S> translation; // 3 x batch
    MatX<S> quaternion;  // 4 x batch (not normalized)
};

namespace detail {

/// Grid cells of each pooling region at level s, ascending linear index.
inline std::vector<std::vector<int>> pooling_regions(int d1, int d2, int s) {
    const int g = 1 << s;
    const int rw = d1 / g, rh = d2 / g;
    std::vector<std::vector<int>> regions(static_cast<std::size_t>(g) * g);
    for (int ry = 0; ry < g; ++ry)
        for (int rx = 0; rx < g; ++rx) {
            auto& cells = regions[static_cast<std::size_t>(ry) * g + rx];
            cells.reserve(static_cast<std::size_t>(rw) * rh);
            for (int cy = ry * rh; cy < (ry + 1) * rh; ++cy)
                for (int cx = rx * rw; cx < (rx + 1) * rw; ++cx)
                    cells.push_back(cy * d1 + cx);
        }
    return regions;
}

template <typename S>
void conv_layer_forward(const ConvLayerParams<S>& layer, ConvLayerParams<S>* mutable_layer,
                        const MatX<S>& x, ConvLayerTrace<S>& trace, Mode mode,
                        bool bn_after_relu) {
    trace.preact.noalias() = layer.weight * x;
    trace.preact.colwise() += layer.bias;

    // The tensor whose statistics batch norm consumes.
    MatX<S> pre_bn;
    if (bn_after_relu)
        pre_bn = trace.preact.cwiseMax(S(0));
    else
        pre_bn = trace.preact; // no copy needed conceptually, kept for clarity

    const auto n = static_cast<S>(pre_bn.cols());
    VecX<S> mean, var;
    if (mode == Mode::kTrain) {
        mean = pre_bn.rowwise().mean();
        MatX<S> centered = pre_bn.colwise() - mean;
        var = centered.array().square().rowwise().mean();
        trace.mean = mean;
        trace.var = var;
        if (mutable_layer) {
            mutable_layer->bn_running_mean =
                S(kBnMomentum) * mutable_layer->bn_running_mean + S(1.0 - kBnMomentum) * mean;
            mutable_layer->bn_running_var =
                S(kBnMomentum) * mutable_layer->bn_running_var + S(1.0 - kBnMomentum) * var;
        }
        (void)n;
    } else {
        mean = layer.bn_running_mean;
        var = layer.bn_running_var;
    }

    const VecX<S> inv_std = (var.array() + S(kBnEps)).rsqrt();
    MatX<S> bn_out = ((pre_bn.colwise() - mean).array().colwise() * inv_std.array()).matrix();
    bn_out = (bn_out.array().colwise() * layer.bn_gain.array()).matrix();
    bn_out.colwise() += layer.bn_offset;

    if (bn_after_relu)
        trace.output = bn_out; // order conv -> ReLU -> BN
    else
        trace.output = bn_out.cwiseMax(S(0)); // order conv -> BN -> ReLU
}

/// Reverse of conv_layer_forward. Returns the gradient w.r.t. the layer
/// input; `x` is the forward input of this layer.
template <typename S>
MatX<S> conv_layer_backward(const ConvLayerParams<S>& layer, const ConvLayerTrace<S>& trace,
                            const MatX<S>& x, const MatX<S>& dy, ConvLayerGrads<S>& grads,
                            bool bn_after_relu, bool need_dx) {
    const auto n_cols = trace.preact.cols();
    const S n = static_cast<S>(n_cols);
    const VecX<S> inv_std = (trace.var.array() + S(kBnEps)).rsqrt();

    MatX<S> pre_bn;
    if (bn_after_relu)
        pre_bn = trace.preact.cwiseMax(S(0));
    else
        pre_bn = trace.preact;
    const MatX<S> xhat =
        ((pre_bn.colwise() - trace.mean).array().colwise() * inv_std.array()).matrix();

    // Gradient arriving at the batch-norm output.
    MatX<S> d_bn_out;
    if (bn_after_relu)
        d_bn_out = dy;
    else
        d_bn_out = (dy.array() * (trace.output.array() > S(0)).template cast<S>()).matrix();

    grads.bn_gain += (d_bn_out.array() * xhat.array()).rowwise().sum().matrix();
    grads.bn_offset += d_bn_out.rowwise().sum();

    const MatX<S> d_xhat = (d_bn_out.array().colwise() * layer.bn_gain.array()).matrix();
    const VecX<S> sum_dxhat = d_xhat.rowwise().sum();
    const VecX<S> sum_dxhat_xhat = (d_xhat.array() * xhat.array()).rowwise().sum();
    // d pre_bn = inv_std/n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat .* xhat))
    MatX<S> d_pre_bn =
        (((d_xhat * n).colwise() - sum_dxhat).array() -
         (xhat.array().colwise() * sum_dxhat_xhat.array()))
            .colwise() *
        (inv_std.array() / n);

    MatX<S> dz;
    if (bn_after_relu)
        dz = (d_pre_bn.array() * (trace.preact.array() > S(0)).template cast<S>()).matrix();
    else
        dz = std::move(d_pre_bn);

    grads.weight.noalias() += dz * x.transpose();
    grads.bias += dz.rowwise().sum();

    MatX<S> dx;
    if (need_dx) dx.noalias() = layer.weight.transpose() * dz;
    return dx;
}

} // namespace detail

/// Stack feature grids into one channels x (batch * cells) matrix.
template <typename S>
MatX<S> assemble_batch(const std::vector<const FeatureGrid<S>*>& grids) {
    if (grids.empty()) throw ShapeError("empty batch");
    const int channels = grids.front()->channels;
    const int cells = grids.front()->cell_count();
    MatX<S> x(channels, static_cast<Eigen::Index>(grids.size()) * cells);
    for (std::size_t b = 0; b < grids.size(); ++b) {
        const FeatureGrid<S>& g = *grids[b];
        if (g.channels != channels || g.cell_count() != cells)
            throw ShapeError("inconsistent grid shapes in batch");
        x.middleCols(static_cast<Eigen::Index>(b) * cells, cells) = g.data;
    }
    return x;
}

/// Batched forward pass. In train mode the batch-norm running statistics of
/// `params` are updated in place and dropout consumes `rng`; eval mode leaves
/// both untouched and is bit-deterministic.
template <typename S>
ForwardTrace<S> forward_batch(NetParams<S>& params, const MatX<S>& input, int batch, Mode mode,
                              Rng& rng) {
    const NetConfig& cfg = params.cfg;
    const int cells = cfg.cell_count();
    if (input.rows() != cfg.input_channels ||
        input.cols() != static_cast<Eigen::Index>(batch) * cells)
        throw ShapeError("forward input must be input_channels x (batch * cells)");
    if (batch <= 0) throw ShapeError("batch must be positive");

    ForwardTrace<S> trace;
    trace.mode = mode;
    trace.params_version = params.version;
    trace.batch = batch;
    trace.input = input;

    trace.branches.resize(params.branches.size());
    for (std::size_t bi = 0; bi < params.branches.size(); ++bi) {
        const MatX<S>* x = &trace.input;
        for (int li = 0; li < 4; ++li) {
            detail::conv_layer_forward(params.branches[bi][li],
                                       mode == Mode::kTrain ? &params.branches[bi][li] : nullptr,
                                       *x, trace.branches[bi][li], mode, cfg.bn_after_relu);
            x = &trace.branches[bi][li].output;
        }
    }

    // Spatial-pyramid max pooling; ties go to the lowest linear cell index.
    const int concat = cfg.concat_dim();
    trace.pooled.resize(concat, batch);
    trace.argmax.resize(concat, batch);
    int row_offset = 0;
    for (std::size_t bi = 0; bi < cfg.pyramid_levels.size(); ++bi) {
        const int s = cfg.pyramid_levels[bi];
        const int dim = cfg.level_dim(s);
        const auto regions = detail::pooling_regions(cfg.d1, cfg.d2, s);
        const MatX<S>& y = trace.branches[bi][3].output;
        for (int b = 0; b < batch; ++b) {
            for (std::size_t r = 0; r < regions.size(); ++r) {
                const int base_row = row_offset + static_cast<int>(r) * dim;
                bool first = true;
                for (int cell : regions[r]) {
                    const auto col = y.col(static_cast<Eigen::Index>(b) * cells + cell);
                    if (first) {
                        for (int c = 0; c < dim; ++c) {
                            trace.pooled(base_row + c, b) = col(c);
                            trace.argmax(base_row + c, b) = cell;
                        }
                        first = false;
                    } else {
                        for (int c = 0; c < dim; ++c) {
                            if (col(c) > trace.pooled(base_row + c, b)) {
                                trace.pooled(base_row + c, b) = col(c);
                                trace.argmax(base_row + c, b) = cell;
                            }
                        }
                    }
                }
            }
        }
        row_offset += static_cast<int>(regions.size()) * dim;
    }

    auto dropout_mask = [&](Eigen::Index rows, Eigen::Index cols) {
        MatX<S> mask(rows, cols);
        const S keep_scale = static_cast<S>(1.0 / (1.0 - cfg.dropout_p));
        for (Eigen::Index i = 0; i < mask.size(); ++i)
            mask.data()[i] = rng.uniform() < cfg.dropout_p ? S(0) : keep_scale;
        return mask;
    };

    auto fc_stage = [&](const DenseParams<S>& d, const MatX<S>& x, MatX<S>& preact, MatX<S>& mask,
                        MatX<S>& out) {
        preact.noalias() = d.weight * x;
        preact.colwise() += d.bias;
        MatX<S> relu = preact.cwiseMax(S(0));
        if (mode == Mode::kTrain && cfg.dropout_p > 0.0) {
            mask = dropout_mask(relu.rows(), relu.cols());
            out = relu.cwiseProduct(mask);
        } else {
            out = std::move(relu);
        }
    };

    fc_stage(params.fc6, trace.pooled, trace.fc6_preact, trace.fc6_mask, trace.fc6_out);
    fc_stage(params.fc7, trace.fc6_out, trace.fc7_preact, trace.fc7_mask, trace.fc7_out);

    trace.head_t_preact.noalias() = params.head_t.weight * trace.fc7_out;
    trace.head_t_preact.colwise() += params.head_t.bias;
    trace.head_t_out = trace.head_t_preact.cwiseMax(S(0));
    trace.head_q_preact.noalias() = params.head_q.weight * trace.fc7_out;
    trace.head_q_preact.colwise() += params.head_q.bias;
    trace.head_q_out = trace.head_q_preact.cwiseMax(S(0));

    trace.translation.noalias() = params.out_t.weight * trace.head_t_out;
    trace.translation.colwise() += params.out_t.bias;
    trace.quaternion.noalias() = params.out_q.weight * trace.head_q_out;
    trace.quaternion.colwise() += params.out_q.bias;
    return trace;
}

/// Single-example convenience wrapper around forward_batch.
template <typename S>
ForwardTrace<S> forward(NetParams<S>& params, const FeatureGrid<S>& grid, Mode mode, Rng& rng) {
    if (grid.d1 != params.cfg.d1 || grid.d2 != params.cfg.d2 ||
        grid.channels != params.cfg.input_channels)
        throw ShapeError("feature grid shape does not match network configuration");
    std::vector<const FeatureGrid<S>*> one{&grid};
    return forward_batch(params, assemble_batch<S>(one), 1, mode, rng);
}

/// Exact reverse-mode gradients for a train-mode trace. Gradients are summed
/// over the batch; scale the upstream gradients beforehand if a mean loss is
/// wanted. Max-pooling routes gradients only to the recorded argmax cells and
/// dropout reuses the recorded masks. The log-sigma scalars receive no
/// gradient here (they enter the objective outside the network).
template <typename S>
NetGrads<S> backward(NetParams<S>& params, const ForwardTrace<S>& trace,
                     const MatX<S>& grad_translation, const MatX<S>& grad_quaternion) {
    if (trace.params_version != params.version)
        throw TraceMismatch("trace was computed for a different parameter version");
    if (trace.mode != Mode::kTrain)
        throw TraceMismatch("backward requires a train-mode trace");
    if (grad_translation.rows() != 3 || grad_quaternion.rows() != 4 ||
        grad_translation.cols() != trace.batch || grad_quaternion.cols() != trace.batch)
        throw ShapeError("upstream gradient shapes do not match the trace batch");

    const NetConfig& cfg = params.cfg;
    NetGrads<S> grads = zero_grads<S>(cfg);

    grads.out_t.weight.noalias() = grad_translation * trace.head_t_out.transpose();
    grads.out_t.bias = grad_translation.rowwise().sum();
    grads.out_q.weight.noalias() = grad_quaternion * trace.head_q_out.transpose();
    grads.out_q.bias = grad_quaternion.rowwise().sum();

    MatX<S> d_head_t = params.out_t.weight.transpose() * grad_translation;
    d_head_t = (d_head_t.array() * (trace.head_t_preact.array() > S(0)).template cast<S>()).matrix();
    MatX<S> d_head_q = params.out_q.weight.transpose() * grad_quaternion;
    d_head_q = (d_head_q.array() * (trace.head_q_preact.array() > S(0)).template cast<S>()).matrix();

    grads.head_t.weight.noalias() = d_head_t * trace.fc7_out.transpose();
    grads.head_t.bias = d_head_t.rowwise().sum();
    grads.head_q.weight.noalias() = d_head_q * trace.fc7_out.transpose();
    grads.head_q.bias = d_head_q.rowwise().sum();

    MatX<S> d_fc7_out = params.head_t.weight.transpose() * d_head_t;
    d_fc7_out.noalias() += params.head_q.weight.transpose() * d_head_q;

    auto fc_backward = [&](const DenseParams<S>& d, const MatX<S>& preact, const MatX<S>& mask,
                           const MatX<S>& x, const MatX<S>& d_out, DenseParams<S>& g) {
        MatX<S> da = d_out;
        if (mask.size() > 0) da = da.cwiseProduct(mask);
        da = (da.array() * (preact.array() > S(0)).template cast<S>()).matrix();
        g.weight.noalias() = da * x.transpose();
        g.bias = da.rowwise().sum();
        return MatX<S>(d.weight.transpose() * da);
    };

    MatX<S> d_fc6_out =
        fc_backward(params.fc7, trace.fc7_preact, trace.fc7_mask, trace.fc6_out, d_fc7_out, grads.fc7);
    MatX<S> d_pooled =
        fc_backward(params.fc6, trace.fc6_preact, trace.fc6_mask, trace.pooled, d_fc6_out, grads.fc6);

    const int cells = cfg.cell_count();
    int row_offset = 0;
    for (std::size_t bi = 0; bi < cfg.pyramid_levels.size(); ++bi) {
        const int s = cfg.pyramid_levels[bi];
        const int dim = cfg.level_dim(s);
        const int n_regions = (1 << s) * (1 << s);

        MatX<S> dy = MatX<S>::Zero(dim, static_cast<Eigen::Index>(trace.batch) * cells);
        for (int b = 0; b < trace.batch; ++b)
            for (int r = 0; r < n_regions; ++r)
                for (int c = 0; c < dim; ++c) {
                    const int row = row_offset + r * dim + c;
                    dy(c, static_cast<Eigen::Index>(b) * cells + trace.argmax(row, b)) +=
                        d_pooled(row, b);
                }
        row_offset += n_regions * dim;

        for (int li = 3; li >= 0; --li) {
            const MatX<S>& x = li == 0 ? trace.input : trace.branches[bi][li - 1].output;
            dy = detail::conv_layer_backward(params.branches[bi][li], trace.branches[bi][li], x, dy,
                                             grads.branches[bi][li], cfg.bn_after_relu, li > 0);
        }
    }
    return grads;
}

/// Per-cell count of pooling units whose recorded argmax is that cell and
/// whose winning activation is strictly positive. Sums to concat_dim() when
/// every pooling region contains a positive activation.
template <typename S>
std::vector<int> contribution_counts(const ForwardTrace<S>& trace, const NetConfig& cfg,
                                     int example = 0) {
    if (example < 0 || example >= trace.batch) throw ShapeError("example index out of range");
    std::vector<int> counts(static_cast<std::size_t>(cfg.cell_count()), 0);
    for (Eigen::Index row = 0; row < trace.pooled.rows(); ++row)
        if (trace.pooled(row, example) > S(0))
            ++counts[static_cast<std::size_t>(trace.argmax(row, example))];
    return counts;
}

} // namespace posekit
