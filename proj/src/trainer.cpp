#include "saam/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "saam/checkpoint.hpp"
#include "saam/image_io.hpp"
#include "saam/resample.hpp"

namespace saam {

Dataset load_dataset(const std::string& dir) {
    Dataset out;
    const auto files = list_png_files(dir);
    if (files.empty()) throw DataError("no PNG files in '" + dir + "'");
    for (const auto& f : files) {
        try {
            out.images.push_back(load_png(f));
            out.names.push_back(std::filesystem::path(f).filename().string());
        } catch (const Error& e) {
            std::cerr << "warning: skipping '" << f << "': " << e.what() << "\n";
        }
    }
    if (out.images.empty()) throw DataError("no decodable PNG files in '" + dir + "'");
    return out;
}

namespace {

ScalePair draw_scale(const TrainConfig& cfg, Rng& rng) {
    if (cfg.continuous_scales) {
        // 0.1 grid over [1.1, 4.0], axes independent.
        const i64 steps = 30;
        const double rv = 1.1 + 0.1 * double(rng.uniform_int(steps));
        const double rh = 1.1 + 0.1 * double(rng.uniform_int(steps));
        return {rv, rh};
    }
    return cfg.scales[std::size_t(rng.uniform_int(i64(cfg.scales.size())))];
}

}  // namespace

Batch sample_batch(const Dataset& data, const TrainConfig& cfg, Rng& rng) {
    if (data.size() == 0) throw DataError("sample_batch: empty dataset");
    Batch b;
    b.scale = draw_scale(cfg, rng);
    const i64 crop_h = i64(std::floor(double(cfg.lr_patch) * b.scale.rv));
    const i64 crop_w = i64(std::floor(double(cfg.lr_patch) * b.scale.rh));
    b.hr = Tensor<float>(Shape{cfg.batch, 3, crop_h, crop_w});
    float* dst = b.hr.data().data();
    for (i64 item = 0; item < cfg.batch; ++item) {
        int failures = 0;
        for (;;) {
            const auto& img = data.images[std::size_t(rng.uniform_int(i64(data.size())))];
            const Shape s = img.shape();
            if (s.h < crop_h || s.w < crop_w) {
                if (++failures >= 100)
                    throw DataError("sample_batch: no image large enough for a " +
                                    std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                                    " crop after 100 draws");
                continue;
            }
            const i64 y0 = rng.uniform_int(s.h - crop_h + 1);
            const i64 x0 = rng.uniform_int(s.w - crop_w + 1);
            const float* src = img.data().data();
            for (i64 c = 0; c < 3; ++c)
                for (i64 y = 0; y < crop_h; ++y) {
                    const float* srow = src + (c * s.h + y0 + y) * s.w + x0;
                    float* drow = dst + ((item * 3 + c) * crop_h + y) * crop_w;
                    std::copy(srow, srow + crop_w, drow);
                }
            break;
        }
    }
    b.lr = bicubic_to(b.hr, cfg.lr_patch, cfg.lr_patch);
    return b;
}

void adam_step(std::vector<ParamRef<float>>& params, AdamState& state, const TrainConfig& hyper) {
    if (state.m.empty()) {
        for (auto& p : params)
            if (p.trainable) {
                state.m.emplace_back(std::size_t(p.tensor.numel()), 0.0f);
                state.v.emplace_back(std::size_t(p.tensor.numel()), 0.0f);
            }
    }
    ++state.step;
    const double b1 = hyper.beta1, b2 = hyper.beta2;
    const double corr1 = 1.0 - std::pow(b1, double(state.step));
    const double corr2 = 1.0 - std::pow(b2, double(state.step));
    std::size_t slot = 0;
    for (auto& p : params) {
        if (!p.trainable) continue;
        auto& m = state.m[slot];
        auto& v = state.v[slot];
        ++slot;
        if (!p.tensor.has_grad()) continue;  // unused parameter this step
        auto& w = p.tensor.data();
        const auto& g = p.tensor.grad();
        if (m.size() != w.size())
            throw ShapeError("adam_step: state size " + std::to_string(m.size()) +
                             " does not match parameter '" + p.name + "'");
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            m[i] = float(b1 * m[i] + (1.0 - b1) * gi);
            v[i] = float(b2 * v[i] + (1.0 - b2) * gi * gi);
            const double mhat = m[i] / corr1;
            const double vhat = v[i] / corr2;
            w[i] -= float(hyper.lr * mhat / (std::sqrt(vhat) + hyper.adam_eps));
        }
    }
}

TrainResult train(const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    Dataset data = load_dataset(cfg.data_dir);

    i64 min_dim = std::numeric_limits<i64>::max();
    for (const auto& img : data.images)
        min_dim = std::min({min_dim, img.shape().h, img.shape().w});
    const i64 needed = i64(std::ceil(double(cfg.lr_patch) * cfg.max_scale()));
    if (needed > min_dim)
        throw ConfigError("lr_patch: " + std::to_string(cfg.lr_patch) + " at max scale " +
                          std::to_string(cfg.max_scale()) + " needs " + std::to_string(needed) +
                          "px crops but the smallest image dim is " + std::to_string(min_dim));

    TrainResult result;
    result.model = build_model<float>(cfg.model);
    result.model.training = true;
    result.checkpoint_path = cfg.checkpoint_path;
    result.best_checkpoint_path = cfg.checkpoint_path + ".best";

    auto params = result.model.params();
    AdamState adam;
    Rng rng(cfg.seed);
    double best_total = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_snapshot;  // weights at best total loss
    StepLog last_finite;

    for (i64 step = 1; step <= cfg.steps; ++step) {
        Batch batch = sample_batch(data, cfg, rng);
        Tensor<float> lr_in = batch.lr;
        lr_in.set_requires_grad(false);
        Tensor<float> sr = forward(result.model, lr_in, batch.scale);
        LossTerms<float> terms = total_loss_terms(batch.hr, sr, cfg.gv);

        StepLog entry;
        entry.step = step;
        entry.scale = batch.scale;
        entry.l1 = double(terms.l1.data()[0]);
        entry.gv = double(terms.gv.data()[0]);
        entry.total = double(terms.total.data()[0]);
        if (!std::isfinite(entry.total) || !std::isfinite(entry.l1) || !std::isfinite(entry.gv)) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " (scale " << batch.scale.str()
               << "); last finite: step=" << last_finite.step << " l1=" << last_finite.l1
               << " gv=" << last_finite.gv << " total=" << last_finite.total;
            throw NanError(os.str());
        }
        last_finite = entry;
        result.curve.push_back(entry);

        result.model.zero_grads();
        terms.total.backward();
        adam_step(params, adam, cfg);

        if (log && (step % cfg.log_every == 0 || step == cfg.steps)) {
            (*log) << "step=" << step << " scale=" << batch.scale.str() << " l1=" << entry.l1
                   << " gv=" << entry.gv << " total=" << entry.total << "\n";
            log->flush();
        }
        if (entry.total < best_total) {
            best_total = entry.total;
            best_snapshot.clear();
            for (auto& p : params) best_snapshot.push_back(p.tensor.data());
        }
    }

    result.model.training = false;
    save_checkpoint(result.model, result.checkpoint_path);
    if (!best_snapshot.empty()) {
        std::vector<std::vector<float>> final_weights;
        for (auto& p : params) final_weights.push_back(p.tensor.data());
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i].tensor.data() = best_snapshot[i];
        save_checkpoint(result.model, result.best_checkpoint_path);
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i].tensor.data() = std::move(final_weights[i]);
    } else {
        save_checkpoint(result.model, result.best_checkpoint_path);
    }
    return result;
}

}  // namespace saam
