#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dsw/errors.hpp"
#include "dsw/grad.hpp"
#include "dsw/model.hpp"
#include "dsw/random.hpp"
#include "dsw/record.hpp"
#include "dsw/serialize.hpp"

namespace dsw {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 300;
    std::size_t patience = 30;
    std::uint64_t seed = 0;
    std::array<double, 3> split{0.70, 0.10, 0.20};

    void validate() const {
        if (!(learning_rate > 0.0)) throw ValidationError("learning-rate must be positive");
        if (batch_size == 0) throw ValidationError("batch-size must be positive");
        for (double s : split) {
            if (!(s >= 0.0)) throw ValidationError("split fractions must be non-negative");
        }
        if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) throw ValidationError("split must sum to 1");
    }
};

// ---------------------------------------------------------------------------
// Split

struct DatasetSplit {
    std::vector<PatientRecord> train, val, test;
};

/// Patient-level shuffle, then ⌊f₀n⌋ / ⌊f₁n⌋ / remainder.
inline DatasetSplit split_dataset(const std::vector<PatientRecord>& records, std::array<double, 3> split,
                                  std::uint64_t seed) {
    const std::size_t n = records.size();
    if (n < 10) throw ValidationError("split_dataset: need at least 10 records, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(stream_seed(seed, 0x5B117ULL));
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_train = static_cast<std::size_t>(std::floor(split[0] * static_cast<double>(n) + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(split[1] * static_cast<double>(n) + 1e-9));
    DatasetSplit out;
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
        dst.push_back(records[order[i]]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m, v;  // aligned with the parameter set
};

inline AdamState make_adam_state(const ParameterSet& ps) {
    AdamState s;
    for (const auto& p : ps.items()) {
        s.m.emplace_back(p.values.size(), 0.0);
        s.v.emplace_back(p.values.size(), 0.0);
    }
    return s;
}

/// Bias-corrected Adam update: θ ← θ − lr·m̂/(√v̂ + ε).
inline void adam_step(ParameterSet& ps, const GradientMap& grads, AdamState& state, double lr) {
    if (state.m.size() != ps.size()) state = make_adam_state(ps);
    const auto g = aligned_gradients(ps, grads);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (double gi : g[i]) {
            if (!std::isfinite(gi)) {
                throw NumericError("adam_step: non-finite gradient for parameter '" + ps.items()[i].name + "'");
            }
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& theta = ps.items()[i].values;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < theta.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[i][k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[i][k] * g[i][k];
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            theta[k] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint

struct Checkpoint {
    ModelConfig model;
    ParameterSet params;
    double prA = 0.5;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochLog> log;
};

/// Unweighted mean squared error of factual predictions.
inline double factual_mse(const std::vector<PatientRecord>& records, const ParameterSet& ps, const ModelConfig& cfg) {
    if (records.empty()) throw ValidationError("factual_mse: empty record set");
    double total = 0.0;
    for (const auto& r : records) {
        const double e = predict_factual(r, ps, cfg) - r.y_factual;
        total += e * e;
    }
    return total / static_cast<double>(records.size());
}

/// Mini-batch Adam on total_loss with best-validation model selection and early stopping.
inline TrainResult train(const std::vector<PatientRecord>& train_set, const std::vector<PatientRecord>& val_set,
                         const TrainConfig& tc, const ModelConfig& mc,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
    tc.validate();
    mc.validate();
    if (train_set.empty() || val_set.empty()) throw ValidationError("train: empty training or validation split");
    for (const auto& r : train_set) validate_record(r, mc.T, mc.d_x, mc.d_c);
    for (const auto& r : val_set) validate_record(r, mc.T, mc.d_x, mc.d_c);
    const double prA = treated_fraction(train_set);
    if (!(prA > 0.0 && prA < 1.0)) throw ValidationError("train: training split must contain both arms");

    ParameterSet params = init_parameters(mc, tc.seed);
    AdamState adam = make_adam_state(params);

    TrainResult result;
    result.best = {mc, params, prA, tc.seed, 0, factual_mse(val_set, params, mc)};

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        Rng rng(stream_seed(tc.seed, 0xE90C7ULL, epoch));
        rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t end = std::min(order.size(), start + tc.batch_size);
            std::vector<const PatientRecord*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train_set[order[i]]);
            Graph g;
            Var loss = total_loss(g, batch, params, mc, prA);
            if (!std::isfinite(loss.value())) {
                throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
            }
            loss_sum += loss.value() * static_cast<double>(batch.size());
            adam_step(params, g.backward(loss), adam, tc.learning_rate);
        }
        EpochLog entry{epoch, loss_sum / static_cast<double>(order.size()), factual_mse(val_set, params, mc)};
        if (!std::isfinite(entry.val_loss)) throw NumericError("train: validation loss is not finite");
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
        if (entry.val_loss < result.best.val_loss) {
            result.best.params = params;
            result.best.epoch = epoch;
            result.best.val_loss = entry.val_loss;
            since_best = 0;
        } else if (++since_best >= tc.patience) {
            break;
        }
    }
    return result;
}

inline TrainResult train(const std::vector<PatientRecord>& dataset, const TrainConfig& tc, const ModelConfig& mc,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
    tc.validate();
    auto parts = split_dataset(dataset, tc.split, tc.seed);
    return train(parts.train, parts.val, tc, mc, on_epoch);
}

// Checkpoint file, version 1:
//   dsw-checkpoint 1
//   config <model config json>
//   prA <double>
//   seed <uint64>
//   epoch <n>
//   val_loss <double>
//   arrays <count>
//   then per array:  array <name> <rows> <cols> <regularized 0|1>
//                    <values separated by single spaces>
//   end
inline constexpr int kCheckpointVersion = 1;

inline std::string checkpoint_to_string(const Checkpoint& ck) {
    std::string out;
    out += "dsw-checkpoint " + std::to_string(kCheckpointVersion) + "\n";
    out += "config " + to_json(ck.model).dump() + "\n";
    out += "prA " + format_double(ck.prA) + "\n";
    out += "seed " + std::to_string(ck.seed) + "\n";
    out += "epoch " + std::to_string(ck.epoch) + "\n";
    out += "val_loss " + format_double(ck.val_loss) + "\n";
    out += "arrays " + std::to_string(ck.params.size()) + "\n";
    for (const auto& p : ck.params.items()) {
        out += "array " + p.name + " " + std::to_string(p.shape.rows) + " " + std::to_string(p.shape.cols) + " " +
               (p.regularized ? "1" : "0") + "\n";
        for (std::size_t k = 0; k < p.values.size(); ++k) {
            if (k) out += ' ';
            out += format_double(p.values[k]);
        }
        out += "\n";
    }
    out += "end\n";
    return out;
}

inline Checkpoint checkpoint_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto next = [&](const char* what) -> std::string {
        if (!std::getline(in, line)) throw CorruptFileError(std::string("checkpoint truncated before ") + what);
        return line;
    };
    auto keyed = [&](const std::string& key) -> std::string {
        std::string l = next(key.c_str());
        if (l.rfind(key + " ", 0) != 0) throw CorruptFileError("checkpoint: expected '" + key + "'");
        return l.substr(key.size() + 1);
    };

    const std::string magic = next("header");
    if (magic.rfind("dsw-checkpoint ", 0) != 0) throw CorruptFileError("not a checkpoint file");
    if (magic != "dsw-checkpoint " + std::to_string(kCheckpointVersion)) {
        throw VersionMismatchError("unsupported checkpoint version: " + magic.substr(15));
    }
    Checkpoint ck;
    try {
        ck.model = model_config_from_json(nlohmann::json::parse(keyed("config")));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("checkpoint config: ") + e.what());
    }
    ck.prA = parse_double(keyed("prA"), "prA");
    try {
        ck.seed = std::stoull(keyed("seed"));
        ck.epoch = std::stoull(keyed("epoch"));
    } catch (const std::logic_error&) {
        throw CorruptFileError("checkpoint: bad integer field");
    }
    ck.val_loss = parse_double(keyed("val_loss"), "val_loss");
    std::size_t count = 0;
    try {
        count = std::stoull(keyed("arrays"));
    } catch (const std::logic_error&) {
        throw CorruptFileError("checkpoint: bad array count");
    }
    for (std::size_t a = 0; a < count; ++a) {
        const std::string head_line = keyed("array");
        auto head = split_fields(head_line, ' ');
        if (head.size() != 4) throw CorruptFileError("checkpoint: malformed array header");
        Shape shape;
        try {
            shape = {std::stoull(std::string(head[1])), std::stoull(std::string(head[2]))};
        } catch (const std::logic_error&) {
            throw CorruptFileError("checkpoint: bad array shape");
        }
        Parameter& p = ck.params.add(std::string(head[0]), shape, head[3] == "1");
        const std::string value_line = next("array values");
        auto fields = split_fields(value_line, ' ');
        if (shape.size() == 0) fields.clear();
        if (fields.size() != shape.size()) {
            throw CorruptFileError("checkpoint: array '" + p.name + "' has " + std::to_string(fields.size()) +
                                   " values, expected " + std::to_string(shape.size()));
        }
        for (std::size_t k = 0; k < fields.size(); ++k) p.values[k] = parse_double(fields[k], "array values");
    }
    if (next("end marker") != "end") throw CorruptFileError("checkpoint: missing end marker");

    // the parameter layout must be exactly what the config implies
    const ParameterSet expected = make_parameters(ck.model);
    if (expected.size() != ck.params.size()) throw CorruptFileError("checkpoint: parameter count does not match config");
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& e = expected.items()[i];
        const auto& p = ck.params.items()[i];
        if (e.name != p.name || e.shape != p.shape || e.regularized != p.regularized) {
            throw CorruptFileError("checkpoint: parameter '" + p.name + "' does not match config");
        }
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << checkpoint_to_string(ck);
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str());
}

}  // namespace dsw
