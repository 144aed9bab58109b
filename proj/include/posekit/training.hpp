// Batch training loop: per-epoch shuffling, per-use feature re-binning,
// step-decayed learning rate, Adam with decoupled weight decay, and optional
// per-epoch evaluation for loss-curve analysis.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/evaluation.hpp"
#include "posekit/loss.hpp"
#include "posekit/net.hpp"
#include "posekit/optimizer.hpp"
#include "posekit/random.hpp"

namespace posekit {

struct TrainConfig {
    int batch_size = 300;
    int epochs = 400;
    double lr0 = 0.001;
    double lr_decay_factor = 10.0;
    int lr_decay_every = 100; // epochs
    double weight_decay = 1e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    ResidualNorm residual_norm = ResidualNorm::kL2;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size <= 0 || epochs < 0 || lr_decay_every <= 0)
            throw ShapeError("invalid training configuration");
        if (!(lr0 > 0) || !(lr_decay_factor > 0)) throw ShapeError("invalid learning rate settings");
    }
};

/// Step schedule: lr0 / decay_factor^floor(epoch / decay_every).
inline double learning_rate(const TrainConfig& cfg, int epoch) {
    return cfg.lr0 / std::pow(cfg.lr_decay_factor, static_cast<double>(epoch / cfg.lr_decay_every));
}

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double eval_loss = std::numeric_limits<double>::quiet_NaN();
    double median_pos_err_m = std::numeric_limits<double>::quiet_NaN();
    double median_ang_err_deg = std::numeric_limits<double>::quiet_NaN();
};

template <typename S>
struct TrainState {
    NetParams<S> params;
    AdamState<S> adam;
    int epoch = 0; // next epoch to run
    Rng rng;
};

template <typename S>
TrainState<S> init_train_state(const NetConfig& net_cfg, const TrainConfig& train_cfg) {
    train_cfg.validate();
    TrainState<S> state;
    state.rng = Rng(train_cfg.seed);
    state.params = init_params<S>(net_cfg, state.rng);
    state.adam = init_adam_state<S>(net_cfg);
    state.epoch = 0;
    return state;
}

namespace detail {

template <typename S>
Eigen::Matrix<S, 4, 1> quat_coeffs(const Quaternion& q) {
    return Eigen::Matrix<S, 4, 1>(static_cast<S>(q.w), static_cast<S>(q.x), static_cast<S>(q.y),
                                  static_cast<S>(q.z));
}

/// Mean loss plus pose errors of an evaluation set under the current
/// parameters (single-shot eval-mode forwards, fresh binning randomness).
template <typename S>
void eval_pass(TrainState<S>& state, const std::vector<ViewExample>& eval_set,
               const TrainConfig& cfg, EpochMetrics& metrics) {
    double loss_sum = 0.0;
    std::vector<double> pos_errs, ang_errs;
    pos_errs.reserve(eval_set.size());
    ang_errs.reserve(eval_set.size());
    for (const auto& ex : eval_set) {
        FeatureGrid<S> grid =
            bin_features<S>(ex.keypoints, ex.width, ex.height, state.params.cfg.d1,
                            state.params.cfg.d2, state.rng, state.params.cfg.position_encoding);
        ForwardTrace<S> trace = forward(state.params, grid, Mode::kEval, state.rng);
        const Eigen::Matrix<S, 4, 1> q_pred = trace.quaternion.col(0);
        const Eigen::Matrix<S, 3, 1> t_pred = trace.translation.col(0);
        const auto lr = pose_loss<S>(q_pred, t_pred, quat_coeffs<S>(ex.pose.rotation),
                                     ex.pose.center.template cast<S>(), state.params.log_sigma_q_sq,
                                     state.params.log_sigma_t_sq, cfg.residual_norm);
        loss_sum += static_cast<double>(lr.loss);
        pos_errs.push_back(
            (t_pred.template cast<double>() - ex.pose.center).norm());
        const double qn = q_pred.template cast<double>().norm();
        Quaternion qq(q_pred(0), q_pred(1), q_pred(2), q_pred(3));
        ang_errs.push_back(qn > 0.0
                               ? quat_angular_error_deg(quat_normalize(qq), ex.pose.rotation)
                               : 180.0);
    }
    metrics.eval_loss = loss_sum / static_cast<double>(eval_set.size());
    metrics.median_pos_err_m = lower_median(pos_errs);
    metrics.median_ang_err_deg = lower_median(ang_errs);
}

} // namespace detail

/// Runs epochs [state.epoch, cfg.epochs). Examples are shuffled every epoch
/// and re-binned on every use. The last partial batch is kept; a singleton
/// remainder is merged into the previous batch so batch statistics stay
/// defined. Returns per-epoch metrics (appended in order).
template <typename S>
std::vector<EpochMetrics> run_training(
    TrainState<S>& state, const std::vector<ViewExample>& dataset,
    const std::vector<ViewExample>* eval_set, const TrainConfig& cfg,
    const std::function<void(const TrainState<S>&, const EpochMetrics&)>& epoch_callback = {}) {
    cfg.validate();
    if (dataset.empty()) throw InsufficientData("training dataset is empty");
    const NetConfig& net_cfg = state.params.cfg;
    const AdamConfig adam_cfg{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
    const int n = static_cast<int>(dataset.size());
    const int cells = net_cfg.cell_count();

    std::vector<EpochMetrics> metrics_log;
    std::vector<int> order(dataset.size());

    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate(cfg, epoch);
        // Fresh identity order before the shuffle: the permutation then
        // depends only on the rng state, so resumed runs replay it exactly.
        std::iota(order.begin(), order.end(), 0);
        state.rng.shuffle(order.begin(), order.end());

        // Batch boundaries: full batches plus remainder; merge a singleton
        // remainder into the previous batch.
        std::vector<std::pair<int, int>> batches;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int size = std::min(cfg.batch_size, n - start);
            batches.emplace_back(start, size);
        }
        if (batches.size() >= 2 && batches.back().second == 1) {
            batches[batches.size() - 2].second += 1;
            batches.pop_back();
        }

        double loss_sum = 0.0;
        for (const auto& [start, bsize] : batches) {
            MatX<S> input(net_cfg.input_channels, static_cast<Eigen::Index>(bsize) * cells);
            for (int b = 0; b < bsize; ++b) {
                const ViewExample& ex = dataset[static_cast<std::size_t>(order[start + b])];
                FeatureGrid<S> grid =
                    bin_features<S>(ex.keypoints, ex.width, ex.height, net_cfg.d1, net_cfg.d2,
                                    state.rng, net_cfg.position_encoding);
                input.middleCols(static_cast<Eigen::Index>(b) * cells, cells) = grid.data;
            }

            ForwardTrace<S> trace = forward_batch(state.params, input, bsize, Mode::kTrain, state.rng);

            const S inv_b = S(1) / static_cast<S>(bsize);
            MatX<S> d_t(3, bsize), d_q(4, bsize);
            S d_log_sq = S(0), d_log_st = S(0);
            for (int b = 0; b < bsize; ++b) {
                const ViewExample& ex = dataset[static_cast<std::size_t>(order[start + b])];
                const auto lres = pose_loss<S>(
                    trace.quaternion.col(b), trace.translation.col(b),
                    detail::quat_coeffs<S>(ex.pose.rotation), ex.pose.center.template cast<S>(),
                    state.params.log_sigma_q_sq, state.params.log_sigma_t_sq, cfg.residual_norm);
                loss_sum += static_cast<double>(lres.loss);
                d_t.col(b) = lres.d_t_pred * inv_b;
                d_q.col(b) = lres.d_q_pred * inv_b;
                d_log_sq += lres.d_log_sigma_q * inv_b;
                d_log_st += lres.d_log_sigma_t * inv_b;
            }

            NetGrads<S> grads = backward(state.params, trace, d_t, d_q);
            grads.log_sigma_q_sq = d_log_sq;
            grads.log_sigma_t_sq = d_log_st;
            adam_step(state.params, grads, state.adam, lr, adam_cfg);
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.lr = lr;
        metrics.train_loss = loss_sum / static_cast<double>(n);
        if (eval_set && !eval_set->empty()) detail::eval_pass(state, *eval_set, cfg, metrics);
        metrics_log.push_back(metrics);
        state.epoch = epoch + 1;
        if (epoch_callback) epoch_callback(state, metrics);
    }
    return metrics_log;
}

/// Metrics CSV: epoch, lr, train_loss, eval_loss, median_pos_err_m,
/// median_ang_err_deg. Missing eval columns are left empty.
inline void write_metrics_csv(const std::vector<EpochMetrics>& metrics, std::ostream& out) {
    out << "epoch,lr,train_loss,eval_loss,median_pos_err_m,median_ang_err_deg\n";
    auto field = [](double v) { return std::isnan(v) ? std::string() : std::to_string(v); };
    for (const auto& m : metrics)
        out << m.epoch << ',' << field(m.lr) << ',' << field(m.train_loss) << ','
            << field(m.eval_loss) << ',' << field(m.median_pos_err_m) << ','
            << field(m.median_ang_err_deg) << '\n';
}

} // namespace posekit
