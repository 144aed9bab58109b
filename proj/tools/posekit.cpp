// Command-line pipeline: scene generation, synthetic view mining, training,
// evaluation and feature-contribution analysis.
//
// Exit codes: 0 success, 1 domain error (degenerate geometry, insufficient
// data, numerical failure), 2 usage or file errors.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "posekit/checkpoint.hpp"
#include "posekit/config_file.hpp"
#include "posekit/dataset.hpp"
#include "posekit/evaluation.hpp"
#include "posekit/nvm.hpp"
#include "posekit/sidecar.hpp"
#include "posekit/toyscene.hpp"
#include "posekit/training.hpp"
#include "posekit/view_synthesis.hpp"

namespace fs = std::filesystem;
using Scalar = float;

namespace {

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("POSEKIT_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
            throw posekit::ParseError("POSEKIT_THREADS must be a positive integer");
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

posekit::KeyValueConfig load_kv(const std::string& path) {
    if (path.empty()) return {};
    return posekit::KeyValueConfig::parse_file(path);
}

struct ToySceneArgs {
    std::string config;
    std::string out;
    long seed = -1;
};

int run_toy_scene(const ToySceneArgs& args) {
    auto kv = load_kv(args.config);
    posekit::ToySceneConfig cfg = posekit::toy_scene_config_from(kv);
    kv.reject_unknown_keys();
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);

    const posekit::ToyScene toy = posekit::generate_toy_scene(cfg);
    posekit::write_scene_dir(args.out, toy.scene);

    std::size_t keypoints = 0;
    for (const auto& img : toy.scene.images) keypoints += img.keypoints.size();
    std::cout << "wrote " << (fs::path(args.out) / "scene.nvm").string() << ", descriptors.pkds, poses.json\n"
              << "images " << toy.scene.images.size() << " (test " << toy.test_ids.size()
              << "), points " << toy.scene.points.size() << ", keypoints " << keypoints << "\n";
    return 0;
}

struct SynthesizeArgs {
    std::string scene_nvm;
    std::string descriptors;
    std::string test_ids;
    std::string mode = "outdoor";
    std::string out;
    std::string config;
    std::string noise;
    std::string around_poses;
    long seed = 0;
    int threads = 0;
};

int run_synthesize(const SynthesizeArgs& args) {
    auto kv = load_kv(args.config);
    posekit::AugmentationConfig cfg = posekit::augmentation_config_from(kv);
    kv.reject_unknown_keys();
    cfg.mode = args.mode == "indoor" ? posekit::SceneKind::kIndoor : posekit::SceneKind::kOutdoor;
    if (!args.noise.empty()) {
        if (args.noise == "clean")
            cfg.noise = posekit::NoiseMode::kClean;
        else if (args.noise == "gaussian")
            cfg.noise = posekit::NoiseMode::kGaussian;
        else if (args.noise == "full")
            cfg.noise = posekit::NoiseMode::kFull;
        else
            throw posekit::ParseError("--noise must be clean, gaussian or full");
    }

    std::ifstream nvm(args.scene_nvm);
    if (!nvm) throw posekit::ParseError("cannot open " + args.scene_nvm);
    posekit::Scene scene = posekit::parse_nvm(nvm);
    std::ifstream sidecar(args.descriptors, std::ios::binary);
    if (!sidecar) throw posekit::ParseError("cannot open " + args.descriptors);
    posekit::load_descriptors(scene, sidecar);

    const std::set<int> test_ids = posekit::read_test_ids(args.test_ids);
    scene = posekit::preprocess_scene(scene, test_ids);

    std::optional<std::vector<posekit::Pose>> around;
    if (!args.around_poses.empty()) {
        std::ifstream poses_in(args.around_poses);
        if (!poses_in) throw posekit::ParseError("cannot open " + args.around_poses);
        const auto root = posekit::json::parse(poses_in);
        std::vector<posekit::Pose> poses;
        for (const auto& entry : root.at("images"))
            poses.push_back(posekit::detail::pose_from_json(entry));
        around = std::move(poses);
    }

    const auto result = posekit::run_algorithm1(scene, cfg, static_cast<std::uint64_t>(args.seed),
                                                resolve_threads(args.threads),
                                                around ? &*around : nullptr);
    posekit::write_synthetic_views(args.out, result.views, cfg,
                                   static_cast<std::uint64_t>(args.seed));
    std::cout << "candidates " << result.stats.candidates << "\n"
              << "pruned " << result.stats.pruned << "\n"
              << "rejected-by-sustainability " << result.stats.sustainability_rejected << "\n"
              << "accepted " << result.stats.accepted << "\n";
    return 0;
}

struct TrainArgs {
    std::vector<std::string> data;
    std::string eval_dir;
    std::string net_config;
    std::string train_config;
    std::string out;
    std::string metrics;
    std::string resume;
    long seed = -1;
    int checkpoint_every = 0;
    int threads = 0;
};

int run_train(const TrainArgs& args) {
    auto net_kv = load_kv(args.net_config);
    posekit::NetConfig net_cfg = posekit::net_config_from(net_kv);
    net_kv.reject_unknown_keys();
    auto train_kv = load_kv(args.train_config);
    posekit::TrainConfig train_cfg = posekit::train_config_from(train_kv);
    train_kv.reject_unknown_keys();
    if (args.seed >= 0) train_cfg.seed = static_cast<std::uint64_t>(args.seed);

    std::vector<posekit::ViewExample> dataset;
    for (const auto& dir : args.data) {
        if (!fs::exists(dir)) throw posekit::ParseError("data directory " + dir + " does not exist");
        auto part = posekit::load_examples(dir, posekit::Split::kTraining);
        dataset.insert(dataset.end(), part.begin(), part.end());
    }
    std::vector<posekit::ViewExample> eval_set;
    if (!args.eval_dir.empty())
        eval_set = posekit::load_examples(args.eval_dir, posekit::Split::kTest);

    posekit::TrainState<Scalar> state;
    if (!args.resume.empty()) {
        std::ifstream in(args.resume, std::ios::binary);
        if (!in) throw posekit::ParseError("cannot open checkpoint " + args.resume);
        auto loaded = posekit::load_checkpoint<Scalar>(in);
        if (!loaded.has_optimizer)
            throw posekit::ParseError("checkpoint " + args.resume +
                                      " carries no optimizer state; cannot resume");
        state = std::move(loaded.state);
        if (state.params.cfg.input_channels != net_cfg.input_channels)
            throw posekit::ShapeError("checkpoint configuration does not match --net-config");
    } else {
        state = posekit::init_train_state<Scalar>(net_cfg, train_cfg);
    }

    auto save_state = [&](const std::string& path, posekit::TrainState<Scalar>& s) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw posekit::ParseError("cannot write checkpoint " + path);
        posekit::save_checkpoint(out, s);
    };

    std::vector<posekit::EpochMetrics> all_metrics;
    const auto callback = [&](const posekit::TrainState<Scalar>& s,
                              const posekit::EpochMetrics& m) {
        all_metrics.push_back(m);
        if (args.checkpoint_every > 0 && (m.epoch + 1) % args.checkpoint_every == 0) {
            auto copy = s; // checkpoint writer reads through non-const traversal
            save_state(args.out + ".epoch" + std::to_string(m.epoch + 1), copy);
        }
        if (m.epoch % 10 == 0 || m.epoch + 1 == train_cfg.epochs) {
            std::cout << "epoch " << m.epoch << " lr " << m.lr << " train_loss " << m.train_loss;
            if (!std::isnan(m.eval_loss))
                std::cout << " eval_loss " << m.eval_loss << " median_pos " << m.median_pos_err_m
                          << " median_ang " << m.median_ang_err_deg;
            std::cout << "\n";
        }
    };

    posekit::run_training<Scalar>(state, dataset, eval_set.empty() ? nullptr : &eval_set,
                                  train_cfg, callback);
    save_state(args.out, state);

    const std::string metrics_path = args.metrics.empty() ? args.out + ".metrics.csv" : args.metrics;
    std::ofstream metrics_out(metrics_path);
    if (!metrics_out) throw posekit::ParseError("cannot write metrics " + metrics_path);
    posekit::write_metrics_csv(all_metrics, metrics_out);
    std::cout << "checkpoint " << args.out << "\nmetrics " << metrics_path << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string out;
    int repeats = 1;
    long seed = 0;
    int threads = 0;
};

int run_eval(const EvalArgs& args) {
    std::ifstream in(args.checkpoint, std::ios::binary);
    if (!in) throw posekit::ParseError("cannot open checkpoint " + args.checkpoint);
    auto loaded = posekit::load_checkpoint<Scalar>(in);

    const posekit::Split split = args.split == "train"
                                     ? posekit::Split::kTraining
                                     : (args.split == "all" ? posekit::Split::kAll
                                                            : posekit::Split::kTest);
    auto dataset = posekit::load_examples(args.data, split);

    posekit::Rng rng(static_cast<std::uint64_t>(args.seed));
    const auto report = posekit::evaluate(loaded.state.params, dataset, args.repeats, rng,
                                          resolve_threads(args.threads));

    std::ofstream report_out(args.out);
    if (!report_out) throw posekit::ParseError("cannot write " + args.out);
    posekit::write_eval_report_json(report, report_out);

    const fs::path base = fs::path(args.out).replace_extension();
    std::ofstream pos_csv(base.string() + "_pos_hist.csv");
    posekit::write_cumulative_histogram_csv(report.sorted_pos_errors, pos_csv);
    std::ofstream ang_csv(base.string() + "_ang_hist.csv");
    posekit::write_cumulative_histogram_csv(report.sorted_ang_errors, ang_csv);

    std::cout << "images " << report.per_image.size() << "\n"
              << "median_pos_err_m " << report.median_pos_err_m << "\n"
              << "median_ang_err_deg " << report.median_ang_err_deg << "\n";
    return 0;
}

struct ContribArgs {
    std::string checkpoint;
    std::string image_features;
    std::string out;
    int image_index = 0;
    int runs = 100;
    int width = 640;
    int height = 480;
    long seed = 0;
};

int run_contrib(const ContribArgs& args) {
    std::ifstream in(args.checkpoint, std::ios::binary);
    if (!in) throw posekit::ParseError("cannot open checkpoint " + args.checkpoint);
    auto loaded = posekit::load_checkpoint<Scalar>(in);

    std::ifstream sidecar(args.image_features, std::ios::binary);
    if (!sidecar) throw posekit::ParseError("cannot open " + args.image_features);
    const posekit::SidecarData data = posekit::read_sidecar(sidecar);
    if (args.image_index < 0 || static_cast<std::size_t>(args.image_index) >= data.images.size())
        throw posekit::ParseError("--image-index out of range (sidecar holds " +
                                  std::to_string(data.images.size()) + " images)");
    auto keypoints = data.images[static_cast<std::size_t>(args.image_index)].keypoints;
    for (auto& kp : keypoints) {
        const float n = kp.descriptor.norm();
        if (n > 0.0f) kp.descriptor /= n;
    }

    posekit::Rng rng(static_cast<std::uint64_t>(args.seed));
    const auto contributions = posekit::contribution_map(loaded.state.params, keypoints,
                                                         args.width, args.height, args.runs, rng);

    std::ofstream out(args.out);
    if (!out) throw posekit::ParseError("cannot write " + args.out);
    out << "keypoint,p,q,scale,orientation,avg_contribution,highly_relevant\n";
    for (std::size_t i = 0; i < keypoints.size(); ++i)
        out << i << ',' << keypoints[i].p << ',' << keypoints[i].q << ',' << keypoints[i].scale
            << ',' << keypoints[i].orientation << ',' << contributions[i] << ','
            << (contributions[i] > 10.0 ? 1 : 0) << '\n';
    std::cout << "keypoints " << keypoints.size() << "\ncontributions " << args.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-feature absolute pose regression pipeline"};
    app.require_subcommand(1);

    ToySceneArgs toy;
    auto* toy_cmd = app.add_subcommand("toy-scene", "Generate a synthetic benchmark scene");
    toy_cmd->add_option("--config", toy.config, "key = value configuration file");
    toy_cmd->add_option("--out", toy.out, "output directory")->required();
    toy_cmd->add_option("--seed", toy.seed, "override the configured seed");

    SynthesizeArgs synth;
    auto* synth_cmd = app.add_subcommand("synthesize", "Mine synthetic views from a scene");
    synth_cmd->add_option("--scene", synth.scene_nvm, "NVM reconstruction")->required();
    synth_cmd->add_option("--descriptors", synth.descriptors, "descriptor sidecar")->required();
    synth_cmd->add_option("--test-ids", synth.test_ids, "test image ids (text list or poses.json)")
        ->required();
    synth_cmd->add_option("--mode", synth.mode, "outdoor | indoor")
        ->check(CLI::IsMember({"outdoor", "indoor"}));
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--seed", synth.seed, "random seed");
    synth_cmd->add_option("--config", synth.config, "augmentation overrides");
    synth_cmd->add_option("--noise", synth.noise, "clean | gaussian | full");
    synth_cmd->add_option("--around-poses", synth.around_poses,
                          "perturb these poses instead of the training poses (poses.json)");
    synth_cmd->add_option("--threads", synth.threads, "worker threads (0 = auto)");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train the pose network");
    train_cmd->add_option("--data", train.data, "training data directories")->required();
    train_cmd->add_option("--eval", train.eval_dir, "evaluation scene directory");
    train_cmd->add_option("--net-config", train.net_config, "network configuration");
    train_cmd->add_option("--train-config", train.train_config, "training configuration");
    train_cmd->add_option("--out", train.out, "output checkpoint")->required();
    train_cmd->add_option("--metrics", train.metrics, "metrics CSV (default <out>.metrics.csv)");
    train_cmd->add_option("--resume", train.resume, "resume from a checkpoint");
    train_cmd->add_option("--seed", train.seed, "override the configured seed");
    train_cmd->add_option("--checkpoint-every", train.checkpoint_every,
                          "also write a checkpoint every K epochs");
    train_cmd->add_option("--threads", train.threads, "worker threads (0 = auto)");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "network checkpoint")->required();
    eval_cmd->add_option("--data", eval.data, "data directory")->required();
    eval_cmd->add_option("--split", eval.split, "train | test | all")
        ->check(CLI::IsMember({"train", "test", "all"}));
    eval_cmd->add_option("--repeats", eval.repeats, "forwards averaged per image");
    eval_cmd->add_option("--out", eval.out, "report JSON path")->required();
    eval_cmd->add_option("--seed", eval.seed, "random seed");
    eval_cmd->add_option("--threads", eval.threads, "worker threads (0 = auto)");

    ContribArgs contrib;
    auto* contrib_cmd =
        app.add_subcommand("contrib", "Per-keypoint pooling contribution analysis");
    contrib_cmd->add_option("--checkpoint", contrib.checkpoint, "network checkpoint")->required();
    contrib_cmd->add_option("--image-features", contrib.image_features, "descriptor sidecar")
        ->required();
    contrib_cmd->add_option("--image-index", contrib.image_index, "image within the sidecar");
    contrib_cmd->add_option("--runs", contrib.runs, "re-binned forward passes to average");
    contrib_cmd->add_option("--width", contrib.width, "image width in pixels");
    contrib_cmd->add_option("--height", contrib.height, "image height in pixels");
    contrib_cmd->add_option("--out", contrib.out, "output CSV")->required();
    contrib_cmd->add_option("--seed", contrib.seed, "random seed");

    try {
        app.parse(argc, argv);
        if (toy_cmd->parsed()) return run_toy_scene(toy);
        if (synth_cmd->parsed()) return run_synthesize(synth);
        if (train_cmd->parsed()) return run_train(train);
        if (eval_cmd->parsed()) return run_eval(eval);
        if (contrib_cmd->parsed()) return run_contrib(contrib);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const posekit::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const posekit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
