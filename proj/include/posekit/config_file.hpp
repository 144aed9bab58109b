// Plain key = value configuration files: '#' comments, blank lines ignored,
// every key optional (full defaulting), unknown keys rejected so typos fail
// loudly instead of silently using a default.
#pragma once

#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "posekit/errors.hpp"
#include "posekit/net.hpp"
#include "posekit/toyscene.hpp"
#include "posekit/training.hpp"
#include "posekit/view_synthesis.hpp"

namespace posekit {

class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::istream& in) {
        KeyValueConfig cfg;
        std::string line;
        long line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ParseError("expected 'key = value', got '" + trimmed + "'", line_no);
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) throw ParseError("empty key", line_no);
            if (cfg.values_.count(key)) throw ParseError("duplicate key '" + key + "'", line_no);
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open config file " + path);
        return parse(in);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        used_.insert(key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        used_.insert(key);
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw ParseError("key '" + key + "' expects a number, got '" + it->second + "'");
        }
    }

    long get_int(const std::string& key, long fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        used_.insert(key);
        try {
            return std::stol(it->second);
        } catch (const std::exception&) {
            throw ParseError("key '" + key + "' expects an integer, got '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        used_.insert(key);
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ParseError("key '" + key + "' expects true/false, got '" + it->second + "'");
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        used_.insert(key);
        std::vector<int> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                out.push_back(std::stoi(trim(tok)));
            } catch (const std::exception&) {
                throw ParseError("key '" + key + "' expects a comma-separated integer list");
            }
        }
        return out;
    }

    /// Call after all lookups; flags keys that matched nothing.
    void reject_unknown_keys() const {
        for (const auto& [key, value] : values_)
            if (!used_.count(key)) throw ParseError("unknown configuration key '" + key + "'");
    }

private:
    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t\r");
        if (begin == std::string::npos) return {};
        const auto end = s.find_last_not_of(" \t\r");
        return s.substr(begin, end - begin + 1);
    }

    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

inline NetConfig net_config_from(KeyValueConfig& kv) {
    NetConfig cfg;
    cfg.d1 = static_cast<int>(kv.get_int("d1", cfg.d1));
    cfg.d2 = static_cast<int>(kv.get_int("d2", cfg.d2));
    cfg.input_channels = static_cast<int>(kv.get_int("input_channels", cfg.input_channels));
    cfg.width_multiplier = kv.get_double("width_multiplier", cfg.width_multiplier);
    cfg.pyramid_levels = kv.get_int_list("pyramid_levels", cfg.pyramid_levels);
    cfg.fc_dim = static_cast<int>(kv.get_int("fc_dim", cfg.fc_dim));
    cfg.head_dim = static_cast<int>(kv.get_int("head_dim", cfg.head_dim));
    cfg.dropout_p = kv.get_double("dropout_p", cfg.dropout_p);
    cfg.bn_after_relu = kv.get_bool("bn_after_relu", cfg.bn_after_relu);
    const std::string enc = kv.get_string("position_encoding", "mod_cell_count");
    if (enc == "mod_cell_count")
        cfg.position_encoding = PositionEncoding::kModCellCount;
    else if (enc == "mod_cell_width")
        cfg.position_encoding = PositionEncoding::kModCellWidth;
    else
        throw ParseError("position_encoding must be mod_cell_count or mod_cell_width");
    cfg.validate();
    return cfg;
}

inline TrainConfig train_config_from(KeyValueConfig& kv) {
    TrainConfig cfg;
    cfg.batch_size = static_cast<int>(kv.get_int("batch_size", cfg.batch_size));
    cfg.epochs = static_cast<int>(kv.get_int("epochs", cfg.epochs));
    cfg.lr0 = kv.get_double("lr0", cfg.lr0);
    cfg.lr_decay_factor = kv.get_double("lr_decay_factor", cfg.lr_decay_factor);
    cfg.lr_decay_every = static_cast<int>(kv.get_int("lr_decay_every", cfg.lr_decay_every));
    cfg.weight_decay = kv.get_double("weight_decay", cfg.weight_decay);
    cfg.adam_beta1 = kv.get_double("adam_beta1", cfg.adam_beta1);
    cfg.adam_beta2 = kv.get_double("adam_beta2", cfg.adam_beta2);
    cfg.adam_eps = kv.get_double("adam_eps", cfg.adam_eps);
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(cfg.seed)));
    const std::string norm = kv.get_string("residual_norm", "l2");
    if (norm == "l2")
        cfg.residual_norm = ResidualNorm::kL2;
    else if (norm == "l1")
        cfg.residual_norm = ResidualNorm::kL1;
    else
        throw ParseError("residual_norm must be l1 or l2");
    cfg.validate();
    return cfg;
}

inline AugmentationConfig augmentation_config_from(KeyValueConfig& kv) {
    AugmentationConfig cfg;
    cfg.samples_per_pose = static_cast<int>(kv.get_int("samples_per_pose", cfg.samples_per_pose));
    cfg.outdoor_shift_m = kv.get_double("outdoor_shift_m", cfg.outdoor_shift_m);
    cfg.indoor_shift_m = kv.get_double("indoor_shift_m", cfg.indoor_shift_m);
    cfg.max_angle_deg = kv.get_double("max_angle_deg", cfg.max_angle_deg);
    cfg.dedup_dist_m = kv.get_double("dedup_dist_m", cfg.dedup_dist_m);
    cfg.dedup_angle_deg = kv.get_double("dedup_angle_deg", cfg.dedup_angle_deg);
    cfg.inside_count = static_cast<int>(kv.get_int("inside_count", cfg.inside_count));
    cfg.inside_radius_m = kv.get_double("inside_radius_m", cfg.inside_radius_m);
    cfg.scale_min = kv.get_double("scale_min", cfg.scale_min);
    cfg.scale_max = kv.get_double("scale_max", cfg.scale_max);
    cfg.view_cone_deg = kv.get_double("view_cone_deg", cfg.view_cone_deg);
    cfg.outlier_fraction = kv.get_double("outlier_fraction", cfg.outlier_fraction);
    cfg.homography_min_inliers =
        static_cast<int>(kv.get_int("homography_min_inliers", cfg.homography_min_inliers));
    cfg.pixel_noise_sigma = kv.get_double("pixel_noise_sigma", cfg.pixel_noise_sigma);
    cfg.grid_check_cols = static_cast<int>(kv.get_int("grid_check_cols", cfg.grid_check_cols));
    cfg.grid_check_rows = static_cast<int>(kv.get_int("grid_check_rows", cfg.grid_check_rows));
    cfg.grid_check_min_nonempty =
        static_cast<int>(kv.get_int("grid_check_min_nonempty", cfg.grid_check_min_nonempty));
    const std::string mode = kv.get_string("mode", "outdoor");
    if (mode == "outdoor")
        cfg.mode = SceneKind::kOutdoor;
    else if (mode == "indoor")
        cfg.mode = SceneKind::kIndoor;
    else
        throw ParseError("mode must be outdoor or indoor");
    const std::string noise = kv.get_string("noise", "full");
    if (noise == "clean")
        cfg.noise = NoiseMode::kClean;
    else if (noise == "gaussian")
        cfg.noise = NoiseMode::kGaussian;
    else if (noise == "full")
        cfg.noise = NoiseMode::kFull;
    else
        throw ParseError("noise must be clean, gaussian or full");
    cfg.validate();
    return cfg;
}

inline ToySceneConfig toy_scene_config_from(KeyValueConfig& kv) {
    ToySceneConfig cfg;
    cfg.n_points = static_cast<int>(kv.get_int("n_points", cfg.n_points));
    cfg.n_train_cams = static_cast<int>(kv.get_int("n_train_cams", cfg.n_train_cams));
    cfg.n_test_cams = static_cast<int>(kv.get_int("n_test_cams", cfg.n_test_cams));
    cfg.room_width = kv.get_double("room_width", cfg.room_width);
    cfg.room_depth = kv.get_double("room_depth", cfg.room_depth);
    cfg.room_height = kv.get_double("room_height", cfg.room_height);
    cfg.descriptor_dim = static_cast<int>(kv.get_int("descriptor_dim", cfg.descriptor_dim));
    cfg.descriptor_noise_std = kv.get_double("descriptor_noise_std", cfg.descriptor_noise_std);
    cfg.focal = kv.get_double("focal", cfg.focal);
    cfg.image_width = static_cast<int>(kv.get_int("image_width", cfg.image_width));
    cfg.image_height = static_cast<int>(kv.get_int("image_height", cfg.image_height));
    cfg.min_depth = kv.get_double("min_depth", cfg.min_depth);
    cfg.max_depth = kv.get_double("max_depth", cfg.max_depth);
    cfg.point_size_min = kv.get_double("point_size_min", cfg.point_size_min);
    cfg.point_size_max = kv.get_double("point_size_max", cfg.point_size_max);
    cfg.distractor_fraction = kv.get_double("distractor_fraction", cfg.distractor_fraction);
    cfg.test_radial_offset = kv.get_double("test_radial_offset", cfg.test_radial_offset);
    cfg.test_height_offset = kv.get_double("test_height_offset", cfg.test_height_offset);
    cfg.test_yaw_offset_rad = kv.get_double("test_yaw_offset_rad", cfg.test_yaw_offset_rad);
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(cfg.seed)));
    cfg.validate();
    return cfg;
}

} // namespace posekit
