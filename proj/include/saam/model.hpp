#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saam/saam_block.hpp"
#include "saam/upsampler.hpp"

namespace saam {

// ---------------------------------------------------------------------------
// Desk-scale residual CNN backbone with SAAM blocks inserted every K residual
// units and the scale-aware upsampler as the tail. One set of weights serves
// every scale in the guard range.
// ---------------------------------------------------------------------------

struct ModelConfig {
    int channels = 16;         // C
    int num_blocks = 4;        // B
    int insertion_period = 2;  // K: SAAM after every K blocks
    int experts = 16;          // E
    bool dense_layer = true;
    NormKind norm_kind = NormKind::simam;
    int k_u = 4;
    int d_u = 32;
    int d_r = 16;
    int d_b = 8;
    int guidance_channels = 1;  // 1 (gate broadcast) or C
    double simam_lambda = 1e-4;
    bool variance_unbiased = false;
    RoundMode round_mode = RoundMode::floor;
    double scale_min = 1.0;
    double scale_max = 4.5;
    std::uint64_t seed = 1;

    int num_saam_blocks() const { return num_blocks / insertion_period; }

    void validate() const {
        if (channels < 4) throw ConfigError("channels: must be >= 4");
        if (num_blocks < 1) throw ConfigError("num_blocks: must be >= 1");
        if (insertion_period < 1 || insertion_period > num_blocks)
            throw ConfigError("insertion_period: must satisfy 1 <= K <= num_blocks");
        if (experts < 1) throw ConfigError("experts: must be >= 1");
        if (k_u < 2) throw ConfigError("k_u: must be >= 2");
        if (d_u < 1 || d_r < 1 || d_b < 1)
            throw ConfigError("d_u/d_r/d_b: hidden dims must be >= 1");
        if (guidance_channels != 1 && guidance_channels != channels)
            throw ConfigError("guidance_channels: must be 1 or equal to channels");
        if (simam_lambda <= 0) throw ConfigError("simam_lambda: must be > 0");
        if (scale_min < 1.0 || scale_max < scale_min)
            throw ConfigError("scale_min/scale_max: need 1 <= min <= max");
    }
};

template <class T>
struct ResBlock {
    ConvSpec<T> conv1, conv2;

    Tensor<T> forward(const Tensor<T>& x) const {
        return add(x, conv2d(silu(conv2d(x, conv1)), conv2));
    }
};

template <class T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;  // false for running statistics
};

template <class T>
struct Model {
    ModelConfig cfg;
    ConvSpec<T> head;  // 3 -> C
    std::vector<ResBlock<T>> blocks;
    std::vector<SaamBlockParams<T>> saam_blocks;
    UpsamplerParams<T> upsampler;
    bool training = false;

    // Every tensor exactly once, in registration order. Checkpoints, the
    // optimizer and the audit all consume this table.
    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        auto conv_params = [&](const std::string& prefix, ConvSpec<T>& c) {
            out.push_back({prefix + ".weight", c.kernel, true});
            if (c.bias.defined()) out.push_back({prefix + ".bias", c.bias, true});
        };
        auto dense_params = [&](const std::string& prefix, Dense<T>& d) {
            out.push_back({prefix + ".w", d.w, true});
            out.push_back({prefix + ".b", d.b, true});
        };
        conv_params("head", head);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            conv_params("block" + std::to_string(i) + ".conv1", blocks[i].conv1);
            conv_params("block" + std::to_string(i) + ".conv2", blocks[i].conv2);
        }
        for (std::size_t i = 0; i < saam_blocks.size(); ++i) {
            const std::string p = "saam" + std::to_string(i);
            auto& sb = saam_blocks[i];
            conv_params(p + ".hourglass.down", sb.hourglass.down);
            conv_params(p + ".hourglass.mid", sb.hourglass.mid);
            conv_params(p + ".hourglass.head", sb.hourglass.head);
            if (sb.hourglass.norm == NormKind::batchnorm) {
                for (int b = 1; b <= 2; ++b) {
                    auto& bn = b == 1 ? sb.hourglass.bn1 : sb.hourglass.bn2;
                    const std::string bp = p + ".hourglass.bn" + std::to_string(b);
                    out.push_back({bp + ".gamma", bn.gamma, true});
                    out.push_back({bp + ".beta", bn.beta, true});
                    out.push_back({bp + ".running_mean", bn.running_mean, false});
                    out.push_back({bp + ".running_var", bn.running_var, false});
                }
            }
            dense_params(p + ".routing.fc1", sb.bank.routing1);
            dense_params(p + ".routing.fc2", sb.bank.routing2);
            if (sb.bank.dense_layer) {
                out.push_back({p + ".bank.basis", sb.bank.basis, true});
                out.push_back({p + ".bank.expand", sb.bank.expand, true});
            } else {
                out.push_back({p + ".bank.experts", sb.bank.experts, true});
            }
            conv_params(p + ".pointwise", sb.pointwise);
        }
        conv_params("upsampler.feat_dw", upsampler.feat_dw);
        dense_params("upsampler.kpred.fc1", upsampler.kpred1);
        dense_params("upsampler.kpred.fc2", upsampler.kpred2);
        conv_params("upsampler.recon", upsampler.recon);
        return out;
    }

    void zero_grads() {
        for (auto& p : params()) p.tensor.zero_grad();
    }
};

template <class T>
Model<T> build_model(const ModelConfig& cfg) {
    cfg.validate();
    Model<T> m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    SimamConfig simam_cfg{cfg.simam_lambda, cfg.variance_unbiased};

    m.head = make_conv<T>(cfg.channels, 3, 3, 1, 1, 1, rng);
    for (int i = 0; i < cfg.num_blocks; ++i) {
        ResBlock<T> b;
        b.conv1 = make_conv<T>(cfg.channels, cfg.channels, 3, 1, 1, 1, rng);
        b.conv2 = make_conv<T>(cfg.channels, cfg.channels, 3, 1, 1, 1, rng);
        m.blocks.push_back(std::move(b));
    }
    for (int i = 0; i < cfg.num_saam_blocks(); ++i) {
        auto sb = SaamBlockParams<T>::make(cfg.channels, cfg.experts, 3, cfg.d_r, cfg.d_b,
                                           cfg.dense_layer, cfg.guidance_channels, cfg.norm_kind,
                                           simam_cfg, rng);
        sb.bank.scale_min = cfg.scale_min;
        sb.bank.scale_max = cfg.scale_max;
        m.saam_blocks.push_back(std::move(sb));
    }
    m.upsampler = UpsamplerParams<T>::make(cfg.channels, cfg.k_u, cfg.d_u, simam_cfg, rng);
    m.upsampler.round_mode = cfg.round_mode;
    return m;
}

// head -> B residual blocks with SAAM at period K -> global skip -> upsample
// -> RGB. bypass_saam exercises the plug-in-neutrality path.
template <class T>
Tensor<T> forward(Model<T>& m, const Tensor<T>& lr, const ScalePair& scale,
                  bool bypass_saam = false) {
    const Shape s = lr.shape();
    if (s.c != 3)
        throw ShapeError("forward: expected 3-channel input, got " + s.str());
    Tensor<T> x0 = conv2d(lr, m.head);
    Tensor<T> f = x0;
    std::size_t next_saam = 0;
    for (int i = 0; i < m.cfg.num_blocks; ++i) {
        f = m.blocks[std::size_t(i)].forward(f);
        if ((i + 1) % m.cfg.insertion_period == 0 && next_saam < m.saam_blocks.size()) {
            if (!bypass_saam)
                f = saam_forward(f, scale, m.saam_blocks[next_saam], m.training);
            ++next_saam;
        }
    }
    f = add(f, x0);
    Tensor<T> hr_feat = upsample(f, scale, m.upsampler);
    return reconstruct(hr_feat, m.upsampler);
}

// ---------------------------------------------------------------------------
// Parameter audit.
// ---------------------------------------------------------------------------

struct ParamAudit {
    i64 total = 0;      // trainable parameters
    i64 backbone = 0;   // head + residual blocks
    i64 saam = 0;       // all plug-in blocks
    i64 upsampler = 0;  // tail
    std::vector<std::pair<std::string, i64>> per_tensor;

    std::string breakdown() const {
        std::ostringstream os;
        os << "backbone " << backbone << " + saam " << saam << " + upsampler " << upsampler
           << " = " << total;
        return os.str();
    }
};

template <class T>
ParamAudit param_count(Model<T>& m) {
    ParamAudit a;
    for (auto& p : m.params()) {
        if (!p.trainable) continue;
        const i64 n = p.tensor.numel();
        a.per_tensor.push_back({p.name, n});
        a.total += n;
        if (p.name.rfind("saam", 0) == 0)
            a.saam += n;
        else if (p.name.rfind("upsampler", 0) == 0)
            a.upsampler += n;
        else
            a.backbone += n;
    }
    return a;
}

}  // namespace saam
