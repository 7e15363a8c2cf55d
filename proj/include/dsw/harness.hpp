#pragma once

// Evaluation harness: scores DSW checkpoints and the static baselines on a
// dataset split, and runs the realization × γ_h × method benchmark grid.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dsw/baselines.hpp"
#include "dsw/errors.hpp"
#include "dsw/metrics.hpp"
#include "dsw/model.hpp"
#include "dsw/record.hpp"
#include "dsw/simulate.hpp"
#include "dsw/trainer.hpp"

namespace dsw {

inline bool has_counterfactuals(const std::vector<PatientRecord>& records) {
    for (const auto& r : records) {
        if (!r.y_counterfactual) return false;
    }
    return !records.empty();
}

/// Factual RMSE always; √PEHE and ATE error when counterfactuals exist.
inline EvalReport evaluate_checkpoint(const Checkpoint& ck, const std::vector<PatientRecord>& records) {
    if (records.empty()) throw ValidationError("evaluate: no records");
    std::vector<double> y_hat, y, est, truth;
    const bool effects = has_counterfactuals(records);
    for (const auto& r : records) {
        const Prediction p = predict(r, ck.params, ck.model);
        y_hat.push_back(r.treated ? p.y1 : p.y0);
        y.push_back(r.y_factual);
        if (effects) {
            est.push_back(p.ite());
            truth.push_back(r.true_ite());
        }
    }
    EvalReport rep;
    rep.n = records.size();
    rep.rmse_factual = rmse_factual(y_hat, y);
    if (effects) {
        rep.sqrt_pehe = sqrt_pehe(truth, est);
        rep.ate_error = ate_error(truth, est);
    }
    return rep;
}

struct BaselineOutcome {
    EvalReport report;
    PerTimestepSummary detail;
    std::string choice;  // selected hyperparameters, if any
};

/// Baselines fit on `reference`, score `query`, and are averaged over time stamps.
/// knn picks k and metric on `validation` unless `knn_k` is non-zero.
inline BaselineOutcome evaluate_baseline(const std::string& method, const std::vector<PatientRecord>& reference,
                                         const std::vector<PatientRecord>& validation,
                                         const std::vector<PatientRecord>& query, std::size_t T,
                                         std::size_t knn_k = 0,
                                         std::optional<DistanceMetric> knn_metric = std::nullopt) {
    if (!has_counterfactuals(query)) {
        throw ValidationError("baseline '" + method + "' needs counterfactual outcomes; dataset is factual-only");
    }
    SnapshotEstimator est;
    BaselineOutcome out;
    if (method == "lr") {
        est = [](const SnapshotDataset& r, const SnapshotDataset& q) { return lr_estimator(r, q); };
    } else if (method == "psm") {
        est = [](const SnapshotDataset& r, const SnapshotDataset& q) { return propensity_matching(r, q); };
    } else if (method == "knn") {
        KnnChoice choice;
        if (knn_k != 0 && knn_metric) {
            choice = {knn_k, *knn_metric, 0.0};
        } else {
            std::vector<std::size_t> ks = knn_k ? std::vector<std::size_t>{knn_k} : std::vector<std::size_t>{1, 3, 5, 10};
            choice = select_knn(reference, validation.empty() ? reference : validation, T, ks);
            if (knn_metric) choice.metric = *knn_metric;
        }
        out.choice = "k=" + std::to_string(choice.k) + ",metric=" + to_string(choice.metric);
        est = [choice](const SnapshotDataset& r, const SnapshotDataset& q) {
            return knn_matching(r, q, choice.k, choice.metric);
        };
    } else {
        throw ValidationError("unknown baseline '" + method + "' (expected lr, knn or psm)");
    }
    out.detail = run_per_timestep(est, reference, query, T);
    out.report.sqrt_pehe = out.detail.sqrt_pehe;
    out.report.ate_error = out.detail.ate_error;
    out.report.n = query.size();
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkConfig {
    SynthConfig synth;
    ModelConfig model;  // d_x, d_c and T are taken from synth
    TrainConfig train;
    std::vector<double> gamma_hs{0.1};
    std::size_t realizations = 10;
    std::vector<std::string> methods{"dsw", "lr", "knn", "psm"};
    std::size_t knn_k = 0;
    std::optional<DistanceMetric> knn_metric;
    std::size_t threads = 1;  // 0: hardware concurrency
};

struct BenchmarkCell {
    std::size_t realization = 0;
    double gamma_h = 0.0;
    std::string method;
    std::optional<EvalReport> report;
    std::string note;   // selected hyperparameters or failure reason
    bool failed = false;
};

struct BenchmarkResult {
    std::vector<BenchmarkCell> cells;
    // keyed by (gamma_h, method)
    std::map<std::pair<double, std::string>, AggregateReport> aggregates;
};

inline ModelConfig model_for(const ModelConfig& base, std::size_t d_x, std::size_t d_c, std::size_t T) {
    ModelConfig m = base;
    m.d_x = d_x;
    m.d_c = d_c;
    m.T = T;
    return m;
}

/// One (realization, γ_h) slice: simulate, split, then run every method.
inline std::vector<BenchmarkCell> run_benchmark_slice(const BenchmarkConfig& cfg, std::size_t realization,
                                                      double gamma_h) {
    SynthConfig sc = cfg.synth;
    sc.gamma_h = gamma_h;
    sc.realization_index = realization;
    const Dataset ds = generate_dataset(sc).dataset;
    TrainConfig tc = cfg.train;
    tc.seed = stream_seed(cfg.train.seed, realization, 0xBE4C);
    const DatasetSplit parts = split_dataset(ds.records, tc.split, tc.seed);

    std::vector<BenchmarkCell> cells;
    for (const auto& method : cfg.methods) {
        BenchmarkCell cell{realization, gamma_h, method, std::nullopt, "", false};
        try {
            if (method == "dsw") {
                const auto mc = model_for(cfg.model, sc.d_x, sc.d_c, sc.T);
                const TrainResult tr = train(parts.train, parts.val, tc, mc);
                cell.report = evaluate_checkpoint(tr.best, parts.test);
                cell.note = "epoch=" + std::to_string(tr.best.epoch);
            } else {
                auto res = evaluate_baseline(method, parts.train, parts.val, parts.test, sc.T, cfg.knn_k, cfg.knn_metric);
                cell.report = res.report;
                cell.note = res.choice;
                if (res.detail.errors) cell.note += (cell.note.empty() ? "" : ";") + std::to_string(res.detail.errors) + " time stamps failed";
            }
        } catch (const Error& e) {
            cell.failed = true;
            cell.note = e.what();
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

inline BenchmarkResult run_benchmark(const BenchmarkConfig& cfg,
                                     const std::function<void(const BenchmarkCell&)>& on_cell = {}) {
    if (cfg.realizations == 0) throw ValidationError("benchmark: realizations must be >= 1");
    if (cfg.gamma_hs.empty() || cfg.methods.empty()) throw ValidationError("benchmark: no gamma-h values or methods");
    std::vector<std::pair<double, std::size_t>> slices;
    for (double gamma_h : cfg.gamma_hs) {
        for (std::size_t r = 0; r < cfg.realizations; ++r) slices.emplace_back(gamma_h, r);
    }
    // Slices are independent; results land in fixed slots so assembly order never depends on scheduling.
    std::vector<std::vector<BenchmarkCell>> slots(slices.size());
    std::atomic<std::size_t> next{0};
    std::mutex report_mu;
    std::exception_ptr failure;
    auto worker = [&] {
        for (std::size_t i = next++; i < slices.size(); i = next++) {
            try {
                slots[i] = run_benchmark_slice(cfg, slices[i].second, slices[i].first);
                if (on_cell) {
                    std::lock_guard lock(report_mu);
                    for (const auto& c : slots[i]) on_cell(c);
                }
            } catch (...) {
                std::lock_guard lock(report_mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::size_t n_threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min(n_threads, slices.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    BenchmarkResult out;
    for (auto& slot : slots) {
        for (auto& cell : slot) out.cells.push_back(std::move(cell));
    }
    for (double gamma_h : cfg.gamma_hs) {
        for (const auto& method : cfg.methods) {
            std::vector<EvalReport> reps;
            for (const auto& c : out.cells) {
                if (c.gamma_h == gamma_h && c.method == method && c.report) reps.push_back(*c.report);
            }
            if (!reps.empty()) out.aggregates.emplace(std::make_pair(gamma_h, method), aggregate(reps));
        }
    }
    return out;
}

}  // namespace dsw
