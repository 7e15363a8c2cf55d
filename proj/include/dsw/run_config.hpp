#pragma once

// Flat run configuration shared by every subcommand. A config file is one JSON
// object whose keys are exactly the long flag names ("learning-rate", "d-x", ...).
// Flags given on the command line override the file; unknown keys are rejected.

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dsw/baselines.hpp"
#include "dsw/errors.hpp"
#include "dsw/model.hpp"
#include "dsw/serialize.hpp"
#include "dsw/simulate.hpp"
#include "dsw/trainer.hpp"
#include "json.hpp"

namespace dsw {

inline constexpr int kRunConfigVersion = 1;
inline const std::vector<double> kAllGammaH{0.1, 0.3, 0.5, 0.7};

struct RunConfig {
    SynthConfig synth;
    std::vector<double> gamma_hs{0.1};
    ModelConfig model;
    TrainConfig train;
    std::size_t knn_k = 0;  // 0: choose on the validation split
    std::optional<DistanceMetric> knn_metric;
    std::vector<std::string> methods{"dsw", "lr", "knn", "psm"};
    std::size_t realizations = 10;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::string output_dir = ".";
};

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(RunConfig&, const json&)> set;
    std::function<ojson(const RunConfig&)> get;
};

namespace detail {

template <class T>
T json_as(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config key '" + key + "': wrong value type " + v.dump());
    }
}

inline std::size_t json_count(const json& v, const std::string& key) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ValidationError("config key '" + key + "': expected a non-negative integer, got " + v.dump());
    }
    return v.get<std::size_t>();
}

inline std::vector<double> gamma_list(const json& v) {
    if (v.is_string() && v.get<std::string>() == "all") return kAllGammaH;
    if (v.is_number()) return {v.get<double>()};
    if (v.is_array()) {
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) throw ValidationError("config key 'gamma-h': list entries must be numbers");
            out.push_back(e.get<double>());
        }
        if (out.empty()) throw ValidationError("config key 'gamma-h': empty list");
        return out;
    }
    throw ValidationError("config key 'gamma-h': expected a number, a list or \"all\"");
}

}  // namespace detail

#define DSW_COUNT(key, field, doc)                                                                   \
    ConfigKey{key, doc, [](RunConfig& c, const json& v) { c.field = detail::json_count(v, key); }, \
              [](const RunConfig& c) { return ojson(c.field); }}
#define DSW_REAL(key, field, doc)                                                                        \
    ConfigKey{key, doc, [](RunConfig& c, const json& v) { c.field = detail::json_as<double>(v, key); }, \
              [](const RunConfig& c) { return ojson(c.field); }}

/// Every accepted key, in the order they are echoed.
inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        DSW_COUNT("n-treated", synth.n_treated, "treated patients to simulate (default 1000)"),
        DSW_COUNT("n-control", synth.n_control, "control patients to simulate (default 3000)"),
        DSW_COUNT("T", synth.T, "observation window length (default 10)"),
        DSW_COUNT("d-x", synth.d_x, "time-varying covariates (default 100)"),
        DSW_COUNT("d-c", synth.d_c, "static covariates (default 5)"),
        DSW_COUNT("d-z-sim", synth.d_z_sim, "simulated hidden confounders (default 5)"),
        DSW_COUNT("p", synth.p, "autoregressive order (default 5)"),
        ConfigKey{"gamma-h", "hidden-confounding strength: number, list or \"all\" (default 0.1)",
                  [](RunConfig& c, const json& v) { c.gamma_hs = detail::gamma_list(v); },
                  [](const RunConfig& c) { return ojson(c.gamma_hs); }},
        ConfigKey{"seed", "master seed for simulation, initialization and batching (default 0)",
                  [](RunConfig& c, const json& v) {
                      const auto s = detail::json_as<std::uint64_t>(v, "seed");
                      c.synth.seed = s;
                      c.train.seed = s;
                  },
                  [](const RunConfig& c) { return ojson(c.train.seed); }},
        DSW_COUNT("realization", synth.realization_index, "realization index for simulate (default 0)"),
        DSW_REAL("noise-std", synth.noise_std, "simulator noise standard deviation (default 0.01)"),
        ConfigKey{"standardize", "z-score simulated outcomes (default true)",
                  [](RunConfig& c, const json& v) { c.synth.standardize = detail::json_as<bool>(v, "standardize"); },
                  [](const RunConfig& c) { return ojson(c.synth.standardize); }},
        DSW_COUNT("d-u", model.d_u, "embedding width (default 16)"),
        DSW_COUNT("d-q", model.d_q, "fused confounder width (default 16)"),
        DSW_COUNT("d-h", model.d_h, "GRU hidden width (default 16)"),
        DSW_COUNT("d-z", model.d_z, "hidden confounder width (default 8)"),
        ConfigKey{"outcome-hidden", "outcome head hidden widths (default [16])",
                  [](RunConfig& c, const json& v) {
                      if (!v.is_array()) throw ValidationError("config key 'outcome-hidden': expected a list");
                      std::vector<std::size_t> w;
                      for (const auto& e : v) w.push_back(detail::json_count(e, "outcome-hidden"));
                      c.model.outcome_hidden = w;
                  },
                  [](const RunConfig& c) { return ojson(c.model.outcome_hidden); }},
        DSW_REAL("gamma", model.gamma, "treatment loss weight (default 1.0)"),
        DSW_REAL("lambda", model.lambda, "L2 weight on weight matrices (default 1e-4)"),
        ConfigKey{"treatment-head-input", "per_step | pooled (default per_step)",
                  [](RunConfig& c, const json& v) {
                      c.model.treatment_head_input =
                          parse_treatment_head_input(detail::json_as<std::string>(v, "treatment-head-input"));
                  },
                  [](const RunConfig& c) { return ojson(to_string(c.model.treatment_head_input)); }},
        ConfigKey{"gru-candidate-matrix", "distinct | reuse_vf (default distinct)",
                  [](RunConfig& c, const json& v) {
                      c.model.gru_candidate_matrix =
                          parse_gru_candidate_matrix(detail::json_as<std::string>(v, "gru-candidate-matrix"));
                  },
                  [](const RunConfig& c) { return ojson(to_string(c.model.gru_candidate_matrix)); }},
        DSW_REAL("learning-rate", train.learning_rate, "Adam step size (default 0.001)"),
        DSW_COUNT("batch-size", train.batch_size, "mini-batch size (default 128)"),
        DSW_COUNT("max-epochs", train.max_epochs, "epoch cap (default 300)"),
        DSW_COUNT("patience", train.patience, "epochs without validation improvement before stopping (default 30)"),
        ConfigKey{"split", "train/validation/test fractions (default [0.7, 0.1, 0.2])",
                  [](RunConfig& c, const json& v) {
                      auto s = detail::json_as<std::vector<double>>(v, "split");
                      if (s.size() != 3) throw ValidationError("config key 'split': expected 3 fractions");
                      c.train.split = {s[0], s[1], s[2]};
                  },
                  [](const RunConfig& c) { return ojson(c.train.split); }},
        DSW_COUNT("knn-k", knn_k, "neighbours for knn; 0 selects from {1,3,5,10} on validation (default 0)"),
        ConfigKey{"knn-metric", "euclidean | minkowski | mahalanobis | auto (default auto)",
                  [](RunConfig& c, const json& v) {
                      const auto s = detail::json_as<std::string>(v, "knn-metric");
                      if (s == "auto") {
                          c.knn_metric.reset();
                      } else {
                          c.knn_metric = parse_distance_metric(s);
                      }
                  },
                  [](const RunConfig& c) { return ojson(c.knn_metric ? to_string(*c.knn_metric) : "auto"); }},
        ConfigKey{"methods", "benchmark methods from dsw, lr, knn, psm (default all four)",
                  [](RunConfig& c, const json& v) {
                      auto m = detail::json_as<std::vector<std::string>>(v, "methods");
                      for (const auto& s : m) {
                          if (s != "dsw" && s != "lr" && s != "knn" && s != "psm") {
                              throw ValidationError("config key 'methods': unknown method '" + s + "'");
                          }
                      }
                      if (m.empty()) throw ValidationError("config key 'methods': empty list");
                      c.methods = m;
                  },
                  [](const RunConfig& c) { return ojson(c.methods); }},
        DSW_COUNT("realizations", realizations, "benchmark realizations per gamma-h (default 10)"),
        DSW_COUNT("threads", threads, "benchmark worker threads; 0 uses all cores (default 0)"),
        ConfigKey{"output-dir", "directory for outputs (default $DSW_OUTPUT_DIR or .)",
                  [](RunConfig& c, const json& v) { c.output_dir = detail::json_as<std::string>(v, "output-dir"); },
                  [](const RunConfig& c) { return ojson(c.output_dir); }},
    };
    return keys;
}

#undef DSW_COUNT
#undef DSW_REAL

inline const ConfigKey* find_config_key(const std::string& name) {
    for (const auto& k : config_keys()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

inline RunConfig default_run_config() {
    RunConfig c;
    if (const char* dir = std::getenv("DSW_OUTPUT_DIR"); dir && *dir) c.output_dir = dir;
    return c;
}

/// Applies every key of `obj` to `cfg`. "format_version" is accepted and checked.
inline void apply_config_json(RunConfig& cfg, const json& obj) {
    if (!obj.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& [name, value] : obj.items()) {
        if (name == "format_version") {
            if (!value.is_number_integer() || value.get<int>() != kRunConfigVersion) {
                throw VersionMismatchError("config: unsupported format_version " + value.dump());
            }
            continue;
        }
        const ConfigKey* key = find_config_key(name);
        if (!key) throw ValidationError("config: unknown key '" + name + "'");
        key->set(cfg, value);
    }
}

/// Turns a command-line value into the JSON value the key setter expects.
/// Comma-separated text becomes a list; numbers and booleans are recognised.
inline json flag_value_to_json(const std::string& name, const std::string& text) {
    auto scalar = [](const std::string& s) -> json {
        if (s == "true") return true;
        if (s == "false") return false;
        if (!s.empty() && (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '-' || s[0] == '.')) {
            try {
                return json::parse(s);
            } catch (const json::exception&) {
            }
        }
        return s;
    };
    const bool list_key = name == "outcome-hidden" || name == "split" || name == "methods";
    if (!text.empty() && text.front() == '[') {
        try {
            return json::parse(text);
        } catch (const json::exception&) {
            throw ValidationError("--" + name + ": malformed list '" + text + "'");
        }
    }
    if (list_key || (name == "gamma-h" && text.find(',') != std::string::npos)) {
        json arr = json::array();
        for (auto f : split_fields(text, ',')) arr.push_back(scalar(std::string(f)));
        return arr;
    }
    return scalar(text);
}

inline RunConfig load_run_config_file(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    json obj;
    try {
        obj = json::parse(ss.str());
    } catch (const json::exception& e) {
        throw CorruptFileError("config '" + path + "': " + e.what());
    }
    apply_config_json(base, obj);
    return base;
}

/// Complete flat echo; feeding it back through apply_config_json reproduces `cfg`.
inline ojson run_config_to_json(const RunConfig& cfg) {
    ojson out;
    out["format_version"] = kRunConfigVersion;
    for (const auto& k : config_keys()) out[k.name] = k.get(cfg);
    return out;
}

inline void validate_run_config(const RunConfig& cfg) {
    cfg.synth.validate();
    cfg.train.validate();
    ModelConfig m = cfg.model;
    m.d_x = cfg.synth.d_x;
    m.d_c = cfg.synth.d_c;
    m.T = cfg.synth.T;
    m.validate();
    for (double g : cfg.gamma_hs) {
        if (!(g >= 0.0 && g <= 1.0)) throw ValidationError("gamma-h values must lie in [0,1]");
    }
    if (cfg.realizations == 0) throw ValidationError("realizations must be >= 1");
}

}  // namespace dsw
