// Network checkpoint format ("PKNW"), little-endian binary.
//
//   magic 'PKNW' | version u32 = 1
//   config: d1 u32 | d2 u32 | input_channels u32 | width_multiplier f64 |
//           levels bitmask u32 | fc_dim u32 | head_dim u32 | dropout_p f64 |
//           flags u32 (bit0: bn after relu, bit1: mod-cell-width positions)
//   parameters, float32 arrays in declaration order:
//     per branch (ascending level), per conv layer: weight (column-major),
//     bias, bn gain, bn offset, bn running mean, bn running var;
//     then fc6, fc7, head_t, head_q, out_t, out_q (weight, bias each);
//     then log_sigma_q_sq, log_sigma_t_sq.
//   optional trailer 'ADAM': step i64 | epoch u32 | rng state 4 x u64 |
//     first and second moments (trainable order, float32).
//
// Values are stored as float32 regardless of the in-memory scalar, so a
// float-trained state round-trips exactly.
#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "posekit/errors.hpp"
#include "posekit/net.hpp"
#include "posekit/training.hpp"

namespace posekit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void ck_write_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.write(b, 4);
}
inline void ck_write_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.write(b, 8);
}
inline void ck_write_f64(std::ostream& out, double v) {
    char b[8];
    std::memcpy(b, &v, 8);
    out.write(b, 8);
}
inline std::uint32_t ck_read_u32(std::istream& in) {
    char b[4];
    in.read(b, 4);
    if (!in) throw ParseError("checkpoint truncated");
    std::uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}
inline std::uint64_t ck_read_u64(std::istream& in) {
    char b[8];
    in.read(b, 8);
    if (!in) throw ParseError("checkpoint truncated");
    std::uint64_t v;
    std::memcpy(&v, b, 8);
    return v;
}
inline double ck_read_f64(std::istream& in) {
    char b[8];
    in.read(b, 8);
    if (!in) throw ParseError("checkpoint truncated");
    double v;
    std::memcpy(&v, b, 8);
    return v;
}

template <typename S>
void ck_write_array(std::ostream& out, const S* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
        const float f = static_cast<float>(data[i]);
        char b[4];
        std::memcpy(b, &f, 4);
        out.write(b, 4);
    }
}

template <typename S>
void ck_read_array(std::istream& in, S* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
        char b[4];
        in.read(b, 4);
        if (!in) throw ParseError("checkpoint truncated inside a tensor");
        float f;
        std::memcpy(&f, b, 4);
        data[i] = static_cast<S>(f);
    }
}

/// Serialization traversal: every tensor including running statistics.
template <typename S, typename Fn>
void for_each_stored_tensor(NetParams<S>& p, Fn&& fn) {
    for (auto& branch : p.branches)
        for (auto& layer : branch) {
            fn(layer.weight.data(), layer.weight.size());
            fn(layer.bias.data(), layer.bias.size());
            fn(layer.bn_gain.data(), layer.bn_gain.size());
            fn(layer.bn_offset.data(), layer.bn_offset.size());
            fn(layer.bn_running_mean.data(), layer.bn_running_mean.size());
            fn(layer.bn_running_var.data(), layer.bn_running_var.size());
        }
    for (DenseParams<S>* d : {&p.fc6, &p.fc7, &p.head_t, &p.head_q, &p.out_t, &p.out_q}) {
        fn(d->weight.data(), d->weight.size());
        fn(d->bias.data(), d->bias.size());
    }
    fn(&p.log_sigma_q_sq, Eigen::Index(1));
    fn(&p.log_sigma_t_sq, Eigen::Index(1));
}

inline void ck_write_config(std::ostream& out, const NetConfig& cfg) {
    ck_write_u32(out, static_cast<std::uint32_t>(cfg.d1));
    ck_write_u32(out, static_cast<std::uint32_t>(cfg.d2));
    ck_write_u32(out, static_cast<std::uint32_t>(cfg.input_channels));
    ck_write_f64(out, cfg.width_multiplier);
    std::uint32_t mask = 0;
    for (int s : cfg.pyramid_levels) mask |= 1u << s;
    ck_write_u32(out, mask);
    ck_write_u32(out, static_cast<std::uint32_t>(cfg.fc_dim));
    ck_write_u32(out, static_cast<std::uint32_t>(cfg.head_dim));
    ck_write_f64(out, cfg.dropout_p);
    std::uint32_t flags = 0;
    if (cfg.bn_after_relu) flags |= 1u;
    if (cfg.position_encoding == PositionEncoding::kModCellWidth) flags |= 2u;
    ck_write_u32(out, flags);
}

inline NetConfig ck_read_config(std::istream& in) {
    NetConfig cfg;
    cfg.d1 = static_cast<int>(ck_read_u32(in));
    cfg.d2 = static_cast<int>(ck_read_u32(in));
    cfg.input_channels = static_cast<int>(ck_read_u32(in));
    cfg.width_multiplier = ck_read_f64(in);
    const std::uint32_t mask = ck_read_u32(in);
    cfg.pyramid_levels.clear();
    for (int s = 0; s < 3; ++s)
        if (mask & (1u << s)) cfg.pyramid_levels.push_back(s);
    cfg.fc_dim = static_cast<int>(ck_read_u32(in));
    cfg.head_dim = static_cast<int>(ck_read_u32(in));
    cfg.dropout_p = ck_read_f64(in);
    const std::uint32_t flags = ck_read_u32(in);
    cfg.bn_after_relu = (flags & 1u) != 0;
    cfg.position_encoding =
        (flags & 2u) ? PositionEncoding::kModCellWidth : PositionEncoding::kModCellCount;
    cfg.validate();
    return cfg;
}

} // namespace detail

template <typename S>
void save_checkpoint(std::ostream& out, TrainState<S>& state, bool include_optimizer = true) {
    out.write("PKNW", 4);
    detail::ck_write_u32(out, kCheckpointVersion);
    detail::ck_write_config(out, state.params.cfg);
    detail::for_each_stored_tensor(state.params, [&](S* data, Eigen::Index n) {
        detail::ck_write_array(out, const_cast<const S*>(data), n);
    });
    if (include_optimizer) {
        out.write("ADAM", 4);
        detail::ck_write_u64(out, static_cast<std::uint64_t>(state.adam.step));
        detail::ck_write_u32(out, static_cast<std::uint32_t>(state.epoch));
        for (std::uint64_t word : state.rng.state()) detail::ck_write_u64(out, word);
        for (auto& views : {trainable_tensors(state.adam.first_moment),
                            trainable_tensors(state.adam.second_moment)})
            for (const auto& view : views)
                detail::ck_write_array(out, const_cast<const S*>(view.data), view.size);
    }
}

template <typename S>
struct LoadedCheckpoint {
    TrainState<S> state;
    bool has_optimizer = false;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PKNW", 4) != 0)
        throw ParseError("not a network checkpoint (bad magic)");
    const std::uint32_t version = detail::ck_read_u32(in);
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    const NetConfig cfg = detail::ck_read_config(in);

    LoadedCheckpoint<S> loaded;
    Rng shape_rng(0);
    loaded.state.params = init_params<S>(cfg, shape_rng); // shapes; values overwritten
    loaded.state.adam = init_adam_state<S>(cfg);
    detail::for_each_stored_tensor(loaded.state.params,
                                   [&](S* data, Eigen::Index n) { detail::ck_read_array(in, data, n); });

    char trailer[4];
    in.read(trailer, 4);
    if (in && std::memcmp(trailer, "ADAM", 4) == 0) {
        loaded.has_optimizer = true;
        loaded.state.adam.step = static_cast<std::int64_t>(detail::ck_read_u64(in));
        loaded.state.epoch = static_cast<int>(detail::ck_read_u32(in));
        std::array<std::uint64_t, 4> rng_state;
        for (auto& word : rng_state) word = detail::ck_read_u64(in);
        loaded.state.rng.set_state(rng_state);
        for (auto* moment : {&loaded.state.adam.first_moment, &loaded.state.adam.second_moment})
            for (const auto& view : trainable_tensors(*moment))
                detail::ck_read_array(in, view.data, view.size);
    }
    return loaded;
}

} // namespace posekit
