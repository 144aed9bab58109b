#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "posekit/checkpoint.hpp"
#include "posekit/training.hpp"

using namespace posekit;

namespace {

NetConfig ck_cfg() {
    NetConfig cfg;
    cfg.d1 = cfg.d2 = 8;
    cfg.input_channels = 13;
    cfg.width_multiplier = 0.0625;
    cfg.pyramid_levels = {0, 2};
    cfg.dropout_p = 0.25;
    cfg.bn_after_relu = true;
    cfg.position_encoding = PositionEncoding::kModCellWidth;
    return cfg;
}

std::vector<ViewExample> ck_dataset(int n, Rng& rng) {
    std::vector<ViewExample> out;
    for (int i = 0; i < n; ++i) {
        ViewExample ex;
        ex.image_id = i;
        ex.width = ex.height = 64;
        ex.pose.center = {rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0};
        ex.pose.rotation = quat_normalize(Quaternion(1, rng.normal(), 0, 0));
        for (int k = 0; k < 20; ++k) {
            Keypoint kp;
            kp.p = rng.uniform(0, 64);
            kp.q = rng.uniform(0, 64);
            kp.scale = rng.uniform(2, 8);
            kp.descriptor = Eigen::VectorXf::NullaryExpr(
                8, [&](Eigen::Index) { return static_cast<float>(rng.normal()); });
            ex.keypoints.push_back(std::move(kp));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

} // namespace

TEST_CASE("checkpoint round trip restores params and config exactly", "[checkpoint]") {
    const NetConfig cfg = ck_cfg();
    TrainConfig tc;
    tc.seed = 21;
    tc.epochs = 0;
    auto state = init_train_state<float>(cfg, tc);
    state.params.log_sigma_q_sq = 0.125f;
    state.adam.step = 17;
    state.epoch = 4;

    std::stringstream buffer(std::ios::in | std::ios::out | std::ios::binary);
    save_checkpoint(buffer, state);
    auto loaded = load_checkpoint<float>(buffer);

    CHECK(loaded.has_optimizer);
    CHECK(loaded.state.epoch == 4);
    CHECK(loaded.state.adam.step == 17);
    CHECK(loaded.state.rng.state() == state.rng.state());
    CHECK(loaded.state.params.cfg.d1 == cfg.d1);
    CHECK(loaded.state.params.cfg.pyramid_levels == cfg.pyramid_levels);
    CHECK(loaded.state.params.cfg.bn_after_relu == cfg.bn_after_relu);
    CHECK(loaded.state.params.cfg.position_encoding == cfg.position_encoding);
    CHECK(loaded.state.params.cfg.width_multiplier == cfg.width_multiplier);

    auto va = trainable_tensors(state.params);
    auto vb = trainable_tensors(loaded.state.params);
    REQUIRE(va.size() == vb.size());
    for (std::size_t t = 0; t < va.size(); ++t) {
        REQUIRE(va[t].size == vb[t].size);
        for (Eigen::Index i = 0; i < va[t].size; ++i) CHECK(va[t].data[i] == vb[t].data[i]);
    }
    CHECK(loaded.state.params.log_sigma_q_sq == 0.125f);
}

TEST_CASE("params-only checkpoints load without optimizer state", "[checkpoint]") {
    const NetConfig cfg = ck_cfg();
    TrainConfig tc;
    auto state = init_train_state<float>(cfg, tc);
    std::stringstream buffer(std::ios::in | std::ios::out | std::ios::binary);
    save_checkpoint(buffer, state, /*include_optimizer=*/false);
    auto loaded = load_checkpoint<float>(buffer);
    CHECK_FALSE(loaded.has_optimizer);
}

TEST_CASE("corrupt checkpoints raise ParseError", "[checkpoint]") {
    std::stringstream bad(std::ios::in | std::ios::out | std::ios::binary);
    bad << "NOPE";
    CHECK_THROWS_AS(load_checkpoint<float>(bad), ParseError);

    const NetConfig cfg = ck_cfg();
    TrainConfig tc;
    auto state = init_train_state<float>(cfg, tc);
    std::stringstream buffer(std::ios::in | std::ios::out | std::ios::binary);
    save_checkpoint(buffer, state);
    const std::string bytes = buffer.str();
    std::stringstream truncated(std::ios::in | std::ios::out | std::ios::binary);
    truncated << bytes.substr(0, bytes.size() / 3);
    CHECK_THROWS_AS(load_checkpoint<float>(truncated), ParseError);
}

TEST_CASE("resuming from a checkpoint reproduces the trajectory exactly", "[checkpoint]") {
    const NetConfig cfg = ck_cfg();
    TrainConfig tc;
    tc.batch_size = 5;
    tc.seed = 33;
    Rng data_rng(34);
    const auto data = ck_dataset(10, data_rng);

    // Reference: two epochs in one go.
    TrainConfig two = tc;
    two.epochs = 2;
    auto full = init_train_state<float>(cfg, two);
    const auto full_metrics = run_training<float>(full, data, nullptr, two);

    // Split: one epoch, checkpoint, reload, second epoch.
    TrainConfig one = tc;
    one.epochs = 1;
    auto half = init_train_state<float>(cfg, one);
    run_training<float>(half, data, nullptr, one);
    std::stringstream buffer(std::ios::in | std::ios::out | std::ios::binary);
    save_checkpoint(buffer, half);
    auto resumed = load_checkpoint<float>(buffer);
    REQUIRE(resumed.has_optimizer);
    REQUIRE(resumed.state.epoch == 1);
    const auto resumed_metrics = run_training<float>(resumed.state, data, nullptr, two);

    REQUIRE(resumed_metrics.size() == 1);
    CHECK(resumed_metrics[0].train_loss == full_metrics[1].train_loss);

    auto va = trainable_tensors(full.params);
    auto vb = trainable_tensors(resumed.state.params);
    for (std::size_t t = 0; t < va.size(); ++t)
        for (Eigen::Index i = 0; i < va[t].size; ++i) CHECK(va[t].data[i] == vb[t].data[i]);
}
