#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "saam/config.hpp"
#include "saam/model.hpp"

namespace saam {

struct Dataset {
    std::vector<std::string> names;         // filenames, sorted
    std::vector<Tensor<float>> images;      // (1,3,H,W) in [0,1]
    std::size_t size() const { return images.size(); }
};

// All decodable PNGs of a directory. Undecodable files are skipped with a
// warning on stderr; an empty result is a data error.
Dataset load_dataset(const std::string& dir);

struct Batch {
    Tensor<float> lr;  // (B,3,p,p)
    Tensor<float> hr;  // (B,3,floor(p*r_v),floor(p*r_h))
    ScalePair scale;   // one scale per batch
};

// One scale per batch (uniform over cfg.scales, or the 0.1 continuous grid);
// HR crops sized floor(lr_patch * r) so bicubic degradation lands exactly on
// lr_patch.
Batch sample_batch(const Dataset& data, const TrainConfig& cfg, Rng& rng);

struct AdamState {
    std::vector<std::vector<float>> m, v;  // one slot per trainable tensor
    i64 step = 0;
};

// Standard Adam with bias correction; gradients are read from the tensors'
// grad buffers.
void adam_step(std::vector<ParamRef<float>>& params, AdamState& state, const TrainConfig& hyper);

struct StepLog {
    i64 step = 0;
    ScalePair scale;
    double l1 = 0, gv = 0, total = 0;
};

struct TrainResult {
    std::vector<StepLog> curve;
    Model<float> model;
    std::string checkpoint_path;       // final weights
    std::string best_checkpoint_path;  // best total loss seen
};

// sample -> forward -> Eq.3 loss -> backward -> Adam, at one scale per step.
// Writes `step=<n> scale=<rv>x<rh> l1=<v> gv=<v> total=<v>` lines to log
// every log_every steps. Saves the final checkpoint at checkpoint_path and
// the best-loss checkpoint at checkpoint_path + ".best". NaN losses abort
// with the step and the last finite terms.
TrainResult train(const TrainConfig& cfg, std::ostream* log = nullptr);

}  // namespace saam
