#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "posekit/training.hpp"

using namespace posekit;

namespace {

NetConfig tiny_cfg() {
    NetConfig cfg;
    cfg.d1 = cfg.d2 = 8;
    cfg.input_channels = 13;
    cfg.width_multiplier = 0.0625;
    cfg.dropout_p = 0.0; // keep the tiny overfitting task noise-free
    return cfg;
}

/// Tiny synthetic regression task: each example shows a distinct keypoint
/// pattern whose pose the network can memorize.
std::vector<ViewExample> tiny_dataset(int n, int descriptor_dim, Rng& rng) {
    std::vector<ViewExample> out;
    for (int i = 0; i < n; ++i) {
        ViewExample ex;
        ex.image_id = i;
        ex.width = 64;
        ex.height = 64;
        ex.pose.center = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        ex.pose.rotation = quat_normalize(
            Quaternion(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
        for (int k = 0; k < 30; ++k) {
            Keypoint kp;
            kp.p = rng.uniform(0, 64);
            kp.q = rng.uniform(0, 64);
            kp.scale = rng.uniform(1.5, 10);
            kp.orientation = rng.uniform(-3, 3);
            kp.descriptor = Eigen::VectorXf::NullaryExpr(
                descriptor_dim, [&](Eigen::Index) { return static_cast<float>(rng.normal()); });
            ex.keypoints.push_back(std::move(kp));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

} // namespace

TEST_CASE("learning rate schedule decays by 10 every 100 epochs", "[training]") {
    TrainConfig cfg;
    CHECK(learning_rate(cfg, 0) == 1e-3);
    CHECK(learning_rate(cfg, 99) == 1e-3);
    CHECK(learning_rate(cfg, 100) == Catch::Approx(1e-4).margin(1e-19));
    CHECK(learning_rate(cfg, 199) == Catch::Approx(1e-4).margin(1e-19));
    CHECK(learning_rate(cfg, 200) == Catch::Approx(1e-5).margin(1e-20));
    CHECK(learning_rate(cfg, 399) == Catch::Approx(1e-6).margin(1e-21));
}

TEST_CASE("adam leaves parameters alone under zero gradients", "[training]") {
    const NetConfig cfg = tiny_cfg();
    Rng rng(1);
    auto params = init_params<double>(cfg, rng);
    auto reference = params;
    auto grads = zero_grads<double>(cfg);
    auto state = init_adam_state<double>(cfg);
    adam_step(params, grads, state, 0.01, AdamConfig{});

    auto va = trainable_tensors(params);
    auto vb = trainable_tensors(reference);
    for (std::size_t t = 0; t < va.size(); ++t)
        for (Eigen::Index i = 0; i < va[t].size; ++i) CHECK(va[t].data[i] == vb[t].data[i]);
    CHECK(params.version == reference.version + 1);
}

TEST_CASE("first adam update has magnitude ~ lr under constant gradient", "[training]") {
    const NetConfig cfg = tiny_cfg();
    Rng rng(2);
    auto params = init_params<double>(cfg, rng);
    const double before = params.log_sigma_q_sq;
    auto grads = zero_grads<double>(cfg);
    grads.log_sigma_q_sq = 0.42; // constant gradient on a single scalar
    auto state = init_adam_state<double>(cfg);
    const double lr = 3e-3;
    adam_step(params, grads, state, lr, AdamConfig{});
    // Bias-corrected m_hat / sqrt(v_hat) = sign(g) at step 1.
    CHECK(std::abs(before - params.log_sigma_q_sq) == Catch::Approx(lr).epsilon(1e-4));
}

TEST_CASE("decoupled weight decay shrinks only weight matrices", "[training]") {
    const NetConfig cfg = tiny_cfg();
    Rng rng(3);
    auto params = init_params<double>(cfg, rng);
    auto reference = params;
    auto grads = zero_grads<double>(cfg);
    auto state = init_adam_state<double>(cfg);
    AdamConfig adam;
    adam.weight_decay = 0.1;
    adam_step(params, grads, state, 0.01, adam);

    CHECK(params.fc6.weight.isApprox(reference.fc6.weight * (1.0 - 0.01 * 0.1), 1e-12));
    CHECK(params.branches[0][0].weight.isApprox(
        reference.branches[0][0].weight * (1.0 - 0.01 * 0.1), 1e-12));
    CHECK(params.fc6.bias == reference.fc6.bias);
    CHECK(params.branches[0][0].bn_gain == reference.branches[0][0].bn_gain);
    CHECK(params.log_sigma_q_sq == reference.log_sigma_q_sq);
}

TEST_CASE("non-finite gradients abort training", "[training]") {
    const NetConfig cfg = tiny_cfg();
    Rng rng(4);
    auto params = init_params<double>(cfg, rng);
    auto grads = zero_grads<double>(cfg);
    grads.fc7.bias(0) = std::numeric_limits<double>::quiet_NaN();
    auto state = init_adam_state<double>(cfg);
    CHECK_THROWS_AS(adam_step(params, grads, state, 0.01, AdamConfig{}), NumericalError);
}

TEST_CASE("epochs = 0 leaves the initialization untouched", "[training]") {
    const NetConfig net_cfg = tiny_cfg();
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 9;
    auto state = init_train_state<double>(net_cfg, cfg);

    Rng data_rng(10);
    const auto data = tiny_dataset(4, 8, data_rng);
    const auto metrics = run_training<double>(state, data, nullptr, cfg);
    CHECK(metrics.empty());

    Rng ref_rng(9);
    auto reference = init_params<double>(net_cfg, ref_rng);
    auto va = trainable_tensors(state.params);
    auto vb = trainable_tensors(reference);
    for (std::size_t t = 0; t < va.size(); ++t)
        for (Eigen::Index i = 0; i < va[t].size; ++i) CHECK(va[t].data[i] == vb[t].data[i]);
}

TEST_CASE("training reduces the loss on a small overfitting task", "[training]") {
    const NetConfig net_cfg = tiny_cfg();
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 6;
    cfg.lr0 = 2e-3;
    cfg.weight_decay = 1e-5;
    cfg.seed = 11;

    Rng data_rng(12);
    const auto data = tiny_dataset(6, 8, data_rng);
    auto state = init_train_state<double>(net_cfg, cfg);
    const auto metrics = run_training<double>(state, data, nullptr, cfg);
    REQUIRE(metrics.size() == 40);
    CHECK(metrics.back().train_loss < metrics.front().train_loss);
    CHECK(metrics.back().train_loss < 0.75 * metrics.front().train_loss);
}

TEST_CASE("two identical runs produce bit-identical trajectories", "[training]") {
    const NetConfig net_cfg = tiny_cfg();
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 4;
    cfg.seed = 13;

    Rng data_rng(14);
    const auto data = tiny_dataset(7, 8, data_rng); // odd size exercises the partial batch
    auto s1 = init_train_state<double>(net_cfg, cfg);
    auto s2 = init_train_state<double>(net_cfg, cfg);
    const auto m1 = run_training<double>(s1, data, nullptr, cfg);
    const auto m2 = run_training<double>(s2, data, nullptr, cfg);
    REQUIRE(m1.size() == m2.size());
    for (std::size_t i = 0; i < m1.size(); ++i) CHECK(m1[i].train_loss == m2[i].train_loss);

    auto va = trainable_tensors(s1.params);
    auto vb = trainable_tensors(s2.params);
    for (std::size_t t = 0; t < va.size(); ++t)
        for (Eigen::Index i = 0; i < va[t].size; ++i) CHECK(va[t].data[i] == vb[t].data[i]);
}

TEST_CASE("singleton remainder merges into the previous batch", "[training]") {
    // 5 examples with batch 4 -> one batch of 5 (remainder of 1 is merged);
    // this must run without batch-statistics issues and still train.
    const NetConfig net_cfg = tiny_cfg();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 15;
    Rng data_rng(16);
    const auto data = tiny_dataset(5, 8, data_rng);
    auto state = init_train_state<double>(net_cfg, cfg);
    const auto metrics = run_training<double>(state, data, nullptr, cfg);
    CHECK(metrics.size() == 2);
    CHECK(std::isfinite(metrics.back().train_loss));
}

TEST_CASE("metrics csv has the documented columns", "[training]") {
    std::vector<EpochMetrics> metrics(1);
    metrics[0].epoch = 3;
    metrics[0].lr = 1e-3;
    metrics[0].train_loss = 2.5;
    std::ostringstream out;
    write_metrics_csv(metrics, out);
    CHECK(out.str().rfind("epoch,lr,train_loss,eval_loss,median_pos_err_m,median_ang_err_deg\n",
                          0) == 0);
    CHECK(out.str().find("3,") != std::string::npos);
}
