#include "saam/config.hpp"

#include <fstream>
#include <sstream>

namespace saam {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": cannot parse '" + v + "' as a number");
    }
}

i64 parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long long n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError(key + ": cannot parse '" + v + "' as an integer");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false/1/0, got '" + v + "'");
}

std::vector<ScalePair> parse_scales(const std::string& key, const std::string& v) {
    std::vector<ScalePair> out;
    std::stringstream ss(v);
    std::string token;
    while (std::getline(ss, token, ',')) {
        token = trim(token);
        if (token.empty()) continue;
        try {
            out.push_back(parse_scale(token));
        } catch (const ConfigError& e) {
            throw ConfigError(key + ": " + e.what());
        }
    }
    if (out.empty()) throw ConfigError(key + ": no scales in '" + v + "'");
    return out;
}

// Shared key dispatch for the model fields (used by both train configs and
// checkpoint echoes). Returns false when the key is not a model key.
bool apply_model_key(ModelConfig& m, const std::string& key, const std::string& v) {
    if (key == "channels") m.channels = int(parse_int(key, v));
    else if (key == "num_blocks") m.num_blocks = int(parse_int(key, v));
    else if (key == "insertion_period") m.insertion_period = int(parse_int(key, v));
    else if (key == "experts") m.experts = int(parse_int(key, v));
    else if (key == "dense_layer") m.dense_layer = parse_bool(key, v);
    else if (key == "norm_kind") {
        if (v == "simam") m.norm_kind = NormKind::simam;
        else if (v == "batchnorm") m.norm_kind = NormKind::batchnorm;
        else throw ConfigError("norm_kind: expected simam or batchnorm, got '" + v + "'");
    }
    else if (key == "k_u") m.k_u = int(parse_int(key, v));
    else if (key == "d_u") m.d_u = int(parse_int(key, v));
    else if (key == "d_r") m.d_r = int(parse_int(key, v));
    else if (key == "d_b") m.d_b = int(parse_int(key, v));
    else if (key == "guidance_channels") m.guidance_channels = int(parse_int(key, v));
    else if (key == "simam_lambda") m.simam_lambda = parse_double(key, v);
    else if (key == "variance_unbiased") m.variance_unbiased = parse_bool(key, v);
    else if (key == "round_mode") {
        if (v == "floor") m.round_mode = RoundMode::floor;
        else if (v == "round") m.round_mode = RoundMode::round;
        else throw ConfigError("round_mode: expected floor or round, got '" + v + "'");
    }
    else if (key == "scale_min") m.scale_min = parse_double(key, v);
    else if (key == "scale_max") m.scale_max = parse_double(key, v);
    else if (key == "model_seed") m.seed = std::uint64_t(parse_int(key, v));
    else return false;
    return true;
}

void for_each_kv(const std::string& text,
                 const std::function<void(const std::string&, const std::string&)>& fn) {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" +
                              line + "'");
        fn(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

}  // namespace

ScalePair parse_scale(const std::string& token) {
    const auto x = token.find('x');
    auto one = [&](const std::string& s) {
        try {
            std::size_t pos = 0;
            double d = std::stod(s, &pos);
            if (pos != s.size() || d <= 0) throw std::invalid_argument(s);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("bad scale '" + token + "': expected RV or RVxRH, e.g. 2, 2.5, 2x3");
        }
    };
    if (x == std::string::npos) {
        const double r = one(token);
        return ScalePair(r, r);
    }
    return ScalePair(one(token.substr(0, x)), one(token.substr(x + 1)));
}

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    for_each_kv(text, [&](const std::string& key, const std::string& v) {
        if (apply_model_key(cfg.model, key, v)) return;
        if (key == "data_dir") cfg.data_dir = v;
        else if (key == "scales") cfg.scales = parse_scales(key, v);
        else if (key == "continuous_scales") cfg.continuous_scales = parse_bool(key, v);
        else if (key == "lr_patch") cfg.lr_patch = int(parse_int(key, v));
        else if (key == "batch") cfg.batch = int(parse_int(key, v));
        else if (key == "steps") cfg.steps = int(parse_int(key, v));
        else if (key == "lr") cfg.lr = parse_double(key, v);
        else if (key == "beta1") cfg.beta1 = parse_double(key, v);
        else if (key == "beta2") cfg.beta2 = parse_double(key, v);
        else if (key == "adam_eps") cfg.adam_eps = parse_double(key, v);
        else if (key == "gv_window") cfg.gv.window = int(parse_int(key, v));
        else if (key == "lambda_gv") cfg.gv.lambda_gv = parse_double(key, v);
        else if (key == "seed") {
            cfg.seed = std::uint64_t(parse_int(key, v));
            cfg.model.seed = cfg.seed;
        }
        else if (key == "checkpoint_path") cfg.checkpoint_path = v;
        else if (key == "log_every") cfg.log_every = int(parse_int(key, v));
        else throw ConfigError("unknown key '" + key + "'");
    });
    cfg.validate();
    return cfg;
}

TrainConfig parse_train_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config_text(ss.str());
}

std::string model_config_to_text(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "channels=" << cfg.channels << "\n";
    os << "num_blocks=" << cfg.num_blocks << "\n";
    os << "insertion_period=" << cfg.insertion_period << "\n";
    os << "experts=" << cfg.experts << "\n";
    os << "dense_layer=" << (cfg.dense_layer ? "true" : "false") << "\n";
    os << "norm_kind=" << (cfg.norm_kind == NormKind::simam ? "simam" : "batchnorm") << "\n";
    os << "k_u=" << cfg.k_u << "\n";
    os << "d_u=" << cfg.d_u << "\n";
    os << "d_r=" << cfg.d_r << "\n";
    os << "d_b=" << cfg.d_b << "\n";
    os << "guidance_channels=" << cfg.guidance_channels << "\n";
    os << "simam_lambda=" << cfg.simam_lambda << "\n";
    os << "variance_unbiased=" << (cfg.variance_unbiased ? "true" : "false") << "\n";
    os << "round_mode=" << (cfg.round_mode == RoundMode::floor ? "floor" : "round") << "\n";
    os << "scale_min=" << cfg.scale_min << "\n";
    os << "scale_max=" << cfg.scale_max << "\n";
    os << "model_seed=" << cfg.seed << "\n";
    return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
    ModelConfig cfg;
    for_each_kv(text, [&](const std::string& key, const std::string& v) {
        if (!apply_model_key(cfg, key, v))
            throw ConfigError("unknown model key '" + key + "'");
    });
    cfg.validate();
    return cfg;
}

}  // namespace saam
