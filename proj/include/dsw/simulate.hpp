#pragma once

// Synthetic benchmark generator.
//
// Covariates and simulated hidden confounders follow p-order AR processes
// driven by past treatments:
//   x_{t,j} = (1/p) Σ_r (α_{r,j} x_{t−r,j} + β_r a_{t−r}) + η_{t,j}
//   z_{t,j} = (1/p) Σ_r (μ_{r,j} z_{t−r,j} + υ_r a_{t−r}) + ε_{t,j}
// and the outcome is
//   q_t = γ_h (1/t) Σ_{r≤t} z_r + (1 − γ_h) g([x_t, c]),   y = wᵀ q_T + b.
//
// Times t ≤ 0 use a per-patient initial history; treatment before the window
// repeats a_1. Counterfactuals reuse the patient's noise draws.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsw/dataset_io.hpp"
#include "dsw/errors.hpp"
#include "dsw/random.hpp"
#include "dsw/record.hpp"
#include "json.hpp"

namespace dsw {

struct SynthConfig {
    std::size_t n_treated = 1000;
    std::size_t n_control = 3000;
    std::size_t T = 10;
    std::size_t d_x = 100;
    std::size_t d_c = 5;
    std::size_t d_z_sim = 5;
    std::size_t p = 5;
    double gamma_h = 0.1;
    std::uint64_t seed = 0;
    std::uint64_t realization_index = 0;
    double noise_std = 0.01;
    bool standardize = true;

    void validate() const {
        if (n_treated == 0 || n_control == 0) throw ValidationError("n-treated and n-control must be positive");
        if (T == 0 || d_x == 0 || d_z_sim == 0 || p == 0) throw ValidationError("T, d-x, d-z-sim and p must be >= 1");
        if (p > T) throw ValidationError("AR order p must not exceed T");
        if (!(gamma_h >= 0.0 && gamma_h <= 1.0)) throw ValidationError("gamma-h must lie in [0,1]");
        if (!(noise_std >= 0.0)) throw ValidationError("noise std must be >= 0");
    }
};

/// Frozen per-dataset draws.
struct SimCoefficients {
    std::size_t p = 0, d_x = 0, d_z = 0, d_c = 0;
    std::vector<double> alpha;    // p×d_x, row r-1 holds α_{r,·}
    std::vector<double> mu;       // p×d_z
    std::vector<double> beta;     // p
    std::vector<double> upsilon;  // p
    std::vector<double> w;        // d_z
    double b = 0.0;
    std::vector<double> g_weight;  // d_z×(d_x+d_c)
    std::vector<double> g_bias;    // d_z
};

/// Per-patient random inputs. The same draws feed factual and counterfactual runs.
struct PatientDraws {
    std::size_t initiation = 1;  // 1-based treatment start for the treated sequence
    std::vector<double> C;       // d_c
    std::vector<double> x_hist;  // p×d_x, row m is time m−p+1 (times 1−p..0)
    std::vector<double> z_hist;  // p×d_z
    std::vector<double> eta;     // T×d_x
    std::vector<double> eps;     // T×d_z
};

struct Trajectory {
    std::vector<double> X;  // T×d_x
    std::vector<double> Z;  // T×d_z
};

inline SimCoefficients draw_coefficients(std::size_t p, std::size_t d_x, std::size_t d_c, std::size_t d_z,
                                         std::uint64_t seed, std::uint64_t realization) {
    SimCoefficients k;
    k.p = p;
    k.d_x = d_x;
    k.d_z = d_z;
    k.d_c = d_c;
    Rng rng(stream_seed(seed, realization, 0));
    const double pd = static_cast<double>(p);
    auto carry = [&](std::size_t width, std::vector<double>& out) {
        out.resize(p * width);
        for (std::size_t r = 1; r <= p; ++r) {
            for (std::size_t j = 0; j < width; ++j) {
                out[(r - 1) * width + j] = rng.normal(1.0 - static_cast<double>(r) / pd, 1.0 / pd);
            }
        }
    };
    carry(d_x, k.alpha);
    carry(d_z, k.mu);
    k.beta.resize(p);
    k.upsilon.resize(p);
    for (auto& v : k.beta) v = rng.normal(0.0, 0.02);
    for (auto& v : k.upsilon) v = rng.normal(0.0, 0.02);
    k.w.resize(d_z);
    for (auto& v : k.w) v = rng.uniform(-1.0, 1.0);
    k.b = rng.normal(0.0, std::sqrt(0.1));
    const std::size_t in = d_x + d_c;
    const double g_std = 1.0 / std::sqrt(static_cast<double>(in));
    k.g_weight.resize(d_z * in);
    for (auto& v : k.g_weight) v = rng.normal(0.0, g_std);
    k.g_bias.resize(d_z);
    for (auto& v : k.g_bias) v = rng.normal(0.0, g_std);
    return k;
}

inline PatientDraws draw_patient(const SimCoefficients& k, std::size_t T, double noise_std, std::uint64_t seed,
                                 std::uint64_t realization, std::uint64_t patient) {
    Rng rng(stream_seed(seed, realization, patient + 1));
    PatientDraws d;
    d.initiation = 1 + rng.index(T);
    d.C.resize(k.d_c);
    for (auto& v : d.C) v = rng.normal();
    d.x_hist.resize(k.p * k.d_x);
    for (auto& v : d.x_hist) v = rng.normal();
    d.z_hist.resize(k.p * k.d_z);
    for (auto& v : d.z_hist) v = rng.normal();
    d.eta.resize(T * k.d_x);
    for (auto& v : d.eta) v = rng.normal(0.0, noise_std);
    d.eps.resize(T * k.d_z);
    for (auto& v : d.eps) v = rng.normal(0.0, noise_std);
    return d;
}

/// Treated: zeros before the 1-based initiation index, ones from it through T.
inline std::vector<double> treatment_sequence(std::size_t T, std::optional<std::size_t> initiation) {
    std::vector<double> a(T, 0.0);
    if (initiation) {
        for (std::size_t t = *initiation; t <= T; ++t) a[t - 1] = 1.0;
    }
    return a;
}

/// Control sequences are all-zero; treated ones start at a uniform index in {1..T}.
inline std::vector<std::vector<double>> assign_treatments(std::size_t n_treated, std::size_t n_control, std::size_t T,
                                                          Rng& rng) {
    std::vector<std::vector<double>> out;
    out.reserve(n_treated + n_control);
    for (std::size_t i = 0; i < n_treated; ++i) out.push_back(treatment_sequence(T, 1 + rng.index(T)));
    for (std::size_t i = 0; i < n_control; ++i) out.push_back(treatment_sequence(T, std::nullopt));
    return out;
}

namespace detail {

// One AR recurrence over `width` columns. hist is p×width for times 1−p..0.
inline std::vector<double> ar_process(std::size_t T, std::size_t p, std::size_t width, std::span<const double> carry,
                                      std::span<const double> drive, std::span<const double> a,
                                      std::span<const double> hist, std::span<const double> noise) {
    std::vector<double> out(T * width);
    const double inv_p = 1.0 / static_cast<double>(p);
    // value at 1-based time s (s may be ≤ 0)
    auto past = [&](long s, std::size_t j) {
        if (s >= 1) return out[static_cast<std::size_t>(s - 1) * width + j];
        return hist[static_cast<std::size_t>(s + static_cast<long>(p) - 1) * width + j];
    };
    auto treat = [&](long s) { return a[s >= 1 ? static_cast<std::size_t>(s - 1) : 0]; };
    for (std::size_t t = 1; t <= T; ++t) {
        for (std::size_t j = 0; j < width; ++j) {
            double acc = 0.0;
            for (std::size_t r = 1; r <= p; ++r) {
                const long s = static_cast<long>(t) - static_cast<long>(r);
                acc += carry[(r - 1) * width + j] * past(s, j) + drive[r - 1] * treat(s);
            }
            out[(t - 1) * width + j] = inv_p * acc + noise[(t - 1) * width + j];
        }
    }
    return out;
}

}  // namespace detail

inline Trajectory simulate_trajectory(const SimCoefficients& k, std::span<const double> a, const PatientDraws& d) {
    const std::size_t T = a.size();
    Trajectory tr;
    tr.X = detail::ar_process(T, k.p, k.d_x, k.alpha, k.beta, a, d.x_hist, d.eta);
    tr.Z = detail::ar_process(T, k.p, k.d_z, k.mu, k.upsilon, a, d.z_hist, d.eps);
    return tr;
}

/// Hidden-path-only trajectory (semi-synthetic data keeps observed X).
inline std::vector<double> simulate_hidden(const SimCoefficients& k, std::span<const double> a, const PatientDraws& d) {
    return detail::ar_process(a.size(), k.p, k.d_z, k.mu, k.upsilon, a, d.z_hist, d.eps);
}

/// g([x, c]) = tanh(G [x, c] + g_bias)
inline std::vector<double> sim_feature_map(const SimCoefficients& k, std::span<const double> x,
                                           std::span<const double> c) {
    const std::size_t in = k.d_x + k.d_c;
    std::vector<double> out(k.d_z);
    for (std::size_t i = 0; i < k.d_z; ++i) {
        double acc = k.g_bias[i];
        const double* row = k.g_weight.data() + i * in;
        for (std::size_t j = 0; j < k.d_x; ++j) acc += row[j] * x[j];
        for (std::size_t j = 0; j < k.d_c; ++j) acc += row[k.d_x + j] * c[j];
        out[i] = std::tanh(acc);
    }
    return out;
}

/// y = wᵀ q_T + b with q_T = γ_h·mean(z_1..z_T) + (1 − γ_h)·g([x_T, c]).
inline double simulate_outcome(std::span<const double> X, std::span<const double> Z, std::span<const double> C,
                               const SimCoefficients& k, double gamma_h) {
    if (X.size() % k.d_x != 0 || Z.size() % k.d_z != 0 || X.size() / k.d_x != Z.size() / k.d_z || C.size() != k.d_c) {
        throw DimensionError("simulate_outcome: trajectory shapes do not match coefficients");
    }
    const std::size_t T = X.size() / k.d_x;
    if (T == 0) throw DimensionError("simulate_outcome: empty trajectory");
    const auto g = sim_feature_map(k, X.subspan((T - 1) * k.d_x, k.d_x), C);
    double y = k.b;
    for (std::size_t i = 0; i < k.d_z; ++i) {
        double zbar = 0.0;
        for (std::size_t t = 0; t < T; ++t) zbar += Z[t * k.d_z + i];
        zbar /= static_cast<double>(T);
        y += k.w[i] * (gamma_h * zbar + (1.0 - gamma_h) * g[i]);
    }
    return y;
}

struct SimulatedPatient {
    PatientRecord record;  // raw (unstandardized) outcomes
    std::vector<double> Z_factual, Z_counterfactual;
    std::vector<double> X_counterfactual;
};

/// Factual run under the arm given by `treated`, counterfactual under the other
/// arm; both use draws.initiation as the treatment start and share all noise.
inline SimulatedPatient simulate_patient(const SimCoefficients& k, const PatientDraws& d, std::size_t T, bool treated,
                                         double gamma_h, std::string id) {
    const auto a_treat = treatment_sequence(T, d.initiation);
    const auto a_ctrl = treatment_sequence(T, std::nullopt);
    const auto& a_f = treated ? a_treat : a_ctrl;
    const auto& a_cf = treated ? a_ctrl : a_treat;
    Trajectory f = simulate_trajectory(k, a_f, d);
    Trajectory cf = simulate_trajectory(k, a_cf, d);
    SimulatedPatient sp;
    auto& r = sp.record;
    r.id = std::move(id);
    r.T = T;
    r.d_x = k.d_x;
    r.C = d.C;
    r.A = a_f;
    r.treated = treated;
    r.y_factual = simulate_outcome(f.X, f.Z, d.C, k, gamma_h);
    r.y_counterfactual = simulate_outcome(cf.X, cf.Z, d.C, k, gamma_h);
    r.X = std::move(f.X);
    sp.Z_factual = std::move(f.Z);
    sp.Z_counterfactual = std::move(cf.Z);
    sp.X_counterfactual = std::move(cf.X);
    return sp;
}

struct Standardization {
    double mean = 0.0;
    double std = 1.0;
};

/// z-scores factual and counterfactual outcomes with the factual mean/std.
inline Standardization standardize_outcomes(std::vector<PatientRecord>& records) {
    Standardization s;
    if (records.empty()) return s;
    double sum = 0.0;
    for (const auto& r : records) sum += r.y_factual;
    s.mean = sum / static_cast<double>(records.size());
    double ss = 0.0;
    for (const auto& r : records) ss += (r.y_factual - s.mean) * (r.y_factual - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(records.size()));
    if (!(s.std > 0.0)) s.std = 1.0;
    for (auto& r : records) {
        r.y_factual = (r.y_factual - s.mean) / s.std;
        if (r.y_counterfactual) r.y_counterfactual = (*r.y_counterfactual - s.mean) / s.std;
    }
    return s;
}

inline std::string patient_id(std::size_t i) {
    std::string digits = std::to_string(i + 1);
    return "p" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

struct SimulationOutput {
    Dataset dataset;
    SimCoefficients coefficients;
};

/// Treated patients come first (ids p000001..), then controls.
inline SimulationOutput generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    SimulationOutput out;
    out.coefficients = draw_coefficients(cfg.p, cfg.d_x, cfg.d_c, cfg.d_z_sim, cfg.seed, cfg.realization_index);
    const std::size_t n = cfg.n_treated + cfg.n_control;
    auto& records = out.dataset.records;
    records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const PatientDraws d =
            draw_patient(out.coefficients, cfg.T, cfg.noise_std, cfg.seed, cfg.realization_index, i);
        records.push_back(
            simulate_patient(out.coefficients, d, cfg.T, i < cfg.n_treated, cfg.gamma_h, patient_id(i)).record);
    }
    auto& h = out.dataset.header;
    h.d_x = cfg.d_x;
    h.d_c = cfg.d_c;
    h.T = cfg.T;
    h.provenance = Provenance::synthetic;
    h.gamma_h = cfg.gamma_h;
    h.seed = cfg.seed;
    if (cfg.standardize) {
        auto s = standardize_outcomes(records);
        h.y_mean = s.mean;
        h.y_std = s.std;
    }
    return out;
}

/// Synthesizes potential outcomes over observed trajectories. X and C stay as
/// ingested; only the hidden path is re-simulated under the flipped treatment
/// sequence (treated → all-zero, control → start at a drawn index).
inline SimulationOutput semi_synthetic_outcomes(const Dataset& table, const SynthConfig& cfg) {
    std::vector<std::string> errs;
    for (std::size_t i = 0; i < table.records.size(); ++i) {
        for (auto& e : record_violations(table.records[i], table.header.T, table.header.d_x, table.header.d_c)) {
            errs.push_back("record " + std::to_string(i + 1) + " " + e);
        }
    }
    if (!errs.empty()) {
        std::string msg = "covariate table failed ingestion:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    const std::size_t T = table.header.T;
    if (cfg.p > T) throw ValidationError("AR order p must not exceed T");
    if (!(cfg.gamma_h >= 0.0 && cfg.gamma_h <= 1.0)) throw ValidationError("gamma-h must lie in [0,1]");
    SimulationOutput out;
    out.coefficients =
        draw_coefficients(cfg.p, table.header.d_x, table.header.d_c, cfg.d_z_sim, cfg.seed, cfg.realization_index);
    const auto& k = out.coefficients;
    for (std::size_t i = 0; i < table.records.size(); ++i) {
        const auto& src = table.records[i];
        const PatientDraws d = draw_patient(k, T, cfg.noise_std, cfg.seed, cfg.realization_index, i);
        const auto a_flip = src.treated ? treatment_sequence(T, std::nullopt) : treatment_sequence(T, d.initiation);
        const auto z_f = simulate_hidden(k, src.A, d);
        const auto z_cf = simulate_hidden(k, a_flip, d);
        PatientRecord r = src;
        r.y_factual = simulate_outcome(src.X, z_f, src.C, k, cfg.gamma_h);
        r.y_counterfactual = simulate_outcome(src.X, z_cf, src.C, k, cfg.gamma_h);
        out.dataset.records.push_back(std::move(r));
    }
    auto& h = out.dataset.header;
    h = table.header;
    h.provenance = Provenance::semi;
    h.gamma_h = cfg.gamma_h;
    h.seed = cfg.seed;
    h.y_mean = 0.0;
    h.y_std = 1.0;
    if (cfg.standardize) {
        auto s = standardize_outcomes(out.dataset.records);
        h.y_mean = s.mean;
        h.y_std = s.std;
    }
    return out;
}

// Coefficients sidecar (JSON), version 1.
inline constexpr int kCoefficientsVersion = 1;

inline nlohmann::ordered_json coefficients_to_json(const SimCoefficients& k, const SynthConfig& cfg) {
    nlohmann::ordered_json j;
    j["format_version"] = kCoefficientsVersion;
    j["rng_scheme"] = kRngScheme;
    j["config"] = {{"n_treated", cfg.n_treated}, {"n_control", cfg.n_control}, {"T", cfg.T},
                   {"d_x", cfg.d_x},             {"d_c", cfg.d_c},             {"d_z_sim", cfg.d_z_sim},
                   {"p", cfg.p},                 {"gamma_h", cfg.gamma_h},     {"seed", cfg.seed},
                   {"realization_index", cfg.realization_index},               {"noise_std", cfg.noise_std},
                   {"standardize", cfg.standardize}};
    j["p"] = k.p;
    j["d_x"] = k.d_x;
    j["d_z"] = k.d_z;
    j["d_c"] = k.d_c;
    j["alpha"] = k.alpha;
    j["mu"] = k.mu;
    j["beta"] = k.beta;
    j["upsilon"] = k.upsilon;
    j["w"] = k.w;
    j["b"] = k.b;
    j["g_weight"] = k.g_weight;
    j["g_bias"] = k.g_bias;
    return j;
}

inline SimCoefficients coefficients_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format_version").get<int>() != kCoefficientsVersion) {
            throw VersionMismatchError("coefficients: unsupported format_version");
        }
        SimCoefficients k;
        k.p = j.at("p").get<std::size_t>();
        k.d_x = j.at("d_x").get<std::size_t>();
        k.d_z = j.at("d_z").get<std::size_t>();
        k.d_c = j.at("d_c").get<std::size_t>();
        k.alpha = j.at("alpha").get<std::vector<double>>();
        k.mu = j.at("mu").get<std::vector<double>>();
        k.beta = j.at("beta").get<std::vector<double>>();
        k.upsilon = j.at("upsilon").get<std::vector<double>>();
        k.w = j.at("w").get<std::vector<double>>();
        k.b = j.at("b").get<double>();
        k.g_weight = j.at("g_weight").get<std::vector<double>>();
        k.g_bias = j.at("g_bias").get<std::vector<double>>();
        return k;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("coefficients: ") + e.what());
    }
}

}  // namespace dsw
