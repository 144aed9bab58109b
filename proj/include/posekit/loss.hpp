// Pose regression loss with learned homoscedastic task weighting:
//   L = exp(-log_sq) * ||q_gt - q/||q|| || + exp(-log_st) * ||T_gt - T|| + log_sq + log_st
// Residuals use the unsquared Euclidean norm by default (L1 optional). The
// ground-truth quaternion is flipped onto the hemisphere of the prediction
// before the residual so the loss is continuous across the double cover.
#pragma once

#include <Eigen/Core>
#include <cmath>

#include "posekit/errors.hpp"
#include "posekit/geometry.hpp"

namespace posekit {

enum class ResidualNorm { kL2, kL1 };

template <typename S>
struct PoseLossResult {
    S loss = S(0);
    Eigen::Matrix<S, 4, 1> d_q_pred = Eigen::Matrix<S, 4, 1>::Zero();
    Eigen::Matrix<S, 3, 1> d_t_pred = Eigen::Matrix<S, 3, 1>::Zero();
    S d_log_sigma_q = S(0);
    S d_log_sigma_t = S(0);
    Eigen::Matrix<S, 4, 1> d_q_gt = Eigen::Matrix<S, 4, 1>::Zero();
    Eigen::Matrix<S, 3, 1> d_t_gt = Eigen::Matrix<S, 3, 1>::Zero();
};

template <typename S>
PoseLossResult<S> pose_loss(const Eigen::Matrix<S, 4, 1>& q_pred,
                            const Eigen::Matrix<S, 3, 1>& t_pred,
                            const Eigen::Matrix<S, 4, 1>& q_gt,
                            const Eigen::Matrix<S, 3, 1>& t_gt, S log_sigma_q_sq,
                            S log_sigma_t_sq, ResidualNorm norm = ResidualNorm::kL2) {
    const S qn = q_pred.norm();
    if (!(qn > S(0))) throw DegenerateQuaternion("predicted quaternion has zero norm");

    const Eigen::Matrix<S, 4, 1> q_hat = q_pred / qn;
    const S flip = q_gt.dot(q_pred) < S(0) ? S(-1) : S(1);
    const Eigen::Matrix<S, 4, 1> g = flip * q_gt;

    const Eigen::Matrix<S, 4, 1> rq = q_hat - g;
    const Eigen::Matrix<S, 3, 1> rt = t_pred - t_gt;

    S res_q, res_t;
    Eigen::Matrix<S, 4, 1> uq; // d res_q / d q_hat
    Eigen::Matrix<S, 3, 1> ut; // d res_t / d t_pred
    if (norm == ResidualNorm::kL2) {
        res_q = rq.norm();
        res_t = rt.norm();
        uq = res_q > S(0) ? Eigen::Matrix<S, 4, 1>(rq / res_q) : Eigen::Matrix<S, 4, 1>::Zero();
        ut = res_t > S(0) ? Eigen::Matrix<S, 3, 1>(rt / res_t) : Eigen::Matrix<S, 3, 1>::Zero();
    } else {
        res_q = rq.template lpNorm<1>();
        res_t = rt.template lpNorm<1>();
        uq = rq.array().sign().matrix();
        ut = rt.array().sign().matrix();
    }

    const S wq = std::exp(-log_sigma_q_sq);
    const S wt = std::exp(-log_sigma_t_sq);

    PoseLossResult<S> out;
    out.loss = wq * res_q + wt * res_t + log_sigma_q_sq + log_sigma_t_sq;

    // Chain through the normalization: d q_hat / d q = (I - q_hat q_hat^T) / ||q||.
    const Eigen::Matrix<S, 4, 1> projected = (uq - q_hat * q_hat.dot(uq)) / qn;
    out.d_q_pred = wq * projected;
    out.d_t_pred = wt * ut;
    out.d_log_sigma_q = -wq * res_q + S(1);
    out.d_log_sigma_t = -wt * res_t + S(1);
    out.d_q_gt = -flip * wq * uq;
    out.d_t_gt = -wt * ut;
    return out;
}

} // namespace posekit
