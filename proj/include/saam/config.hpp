#pragma once

#include <string>
#include <vector>

#include "saam/loss.hpp"
#include "saam/model.hpp"

namespace saam {

// ---------------------------------------------------------------------------
// Training configuration. File format: one key=value per line, '#' comments,
// unknown keys are errors.
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::string data_dir;
    std::vector<ScalePair> scales = {ScalePair(2.0), ScalePair(3.0), ScalePair(4.0)};
    bool continuous_scales = false;  // r_v, r_h independent on a 0.1 grid over [1.1, 4.0]
    int lr_patch = 32;
    int batch = 8;
    int steps = 2000;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    GvConfig gv;  // window 8, lambda_gv 0.01
    std::uint64_t seed = 1;
    std::string checkpoint_path = "model.ckpt";
    int log_every = 50;
    ModelConfig model;

    double max_scale() const {
        if (continuous_scales) return 4.0;
        double m = 1.0;
        for (const auto& s : scales) m = std::max({m, s.rv, s.rh});
        return m;
    }

    void validate() const {
        if (lr_patch < 8) throw ConfigError("lr_patch: must be >= 8");
        if (batch < 1) throw ConfigError("batch: must be >= 1");
        if (steps < 0) throw ConfigError("steps: must be >= 0");
        if (lr <= 0) throw ConfigError("lr: must be > 0");
        if (log_every < 1) throw ConfigError("log_every: must be >= 1");
        if (scales.empty()) throw ConfigError("scales: at least one scale required");
        for (const auto& s : scales)
            if (s.rv < 1.0 || s.rh < 1.0) throw ConfigError("scales: factors must be >= 1");
        gv.validate();
        model.validate();
    }
};

// "2", "2.5" or "2x3" (asymmetric, r_v x r_h). Throws ConfigError on bad
// syntax.
ScalePair parse_scale(const std::string& token);

TrainConfig parse_train_config_text(const std::string& text);
TrainConfig parse_train_config_file(const std::string& path);

// Model-config echo carried inside checkpoints.
std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

}  // namespace saam
