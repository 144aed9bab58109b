// Bias-corrected Adam with decoupled weight decay. Weight decay touches only
// convolution/dense weight matrices; biases, batch-norm parameters and the
// learned loss scalars stay unregularized.
#pragma once

#include <cmath>
#include <cstdint>

#include "posekit/errors.hpp"
#include "posekit/net.hpp"

namespace posekit {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <typename S>
struct AdamState {
    NetGrads<S> first_moment;
    NetGrads<S> second_moment;
    std::int64_t step = 0;
};

template <typename S>
AdamState<S> init_adam_state(const NetConfig& cfg) {
    return {zero_grads<S>(cfg), zero_grads<S>(cfg), 0};
}

template <typename S>
void adam_step(NetParams<S>& params, NetGrads<S>& grads, AdamState<S>& state, double lr,
               const AdamConfig& cfg) {
    auto p_views = trainable_tensors(params);
    auto g_views = trainable_tensors(grads);
    auto m_views = trainable_tensors(state.first_moment);
    auto v_views = trainable_tensors(state.second_moment);
    if (p_views.size() != g_views.size()) throw ShapeError("gradient structure mismatch");

    for (const auto& view : g_views)
        for (Eigen::Index i = 0; i < view.size; ++i)
            if (!std::isfinite(static_cast<double>(view.data[i])))
                throw NumericalError("non-finite gradient encountered; aborting training");

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const S beta1 = static_cast<S>(cfg.beta1);
    const S beta2 = static_cast<S>(cfg.beta2);

    for (std::size_t t = 0; t < p_views.size(); ++t) {
        if (p_views[t].size != g_views[t].size) throw ShapeError("gradient tensor shape mismatch");
        S* p = p_views[t].data;
        const S* g = g_views[t].data;
        S* m = m_views[t].data;
        S* v = v_views[t].data;
        const bool decay = cfg.weight_decay > 0.0 && p_views[t].kind == ParamKind::kWeight;
        for (Eigen::Index i = 0; i < p_views[t].size; ++i) {
            m[i] = beta1 * m[i] + (S(1) - beta1) * g[i];
            v[i] = beta2 * v[i] + (S(1) - beta2) * g[i] * g[i];
            const double m_hat = static_cast<double>(m[i]) / bc1;
            const double v_hat = static_cast<double>(v[i]) / bc2;
            double update = lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
            if (decay) update += lr * cfg.weight_decay * static_cast<double>(p[i]);
            p[i] -= static_cast<S>(update);
        }
    }
    ++params.version;
}

} // namespace posekit
