#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsw/errors.hpp"

namespace dsw {

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    if (a.empty()) throw DimensionError(std::string(what) + ": empty input");
}

}  // namespace detail

/// √( mean((true − est)²) ) over per-patient effects.
inline double sqrt_pehe(std::span<const double> true_ite, std::span<const double> est_ite) {
    detail::check_pair(true_ite, est_ite, "sqrt_pehe");
    double ss = 0.0;
    for (std::size_t i = 0; i < true_ite.size(); ++i) {
        const double e = true_ite[i] - est_ite[i];
        ss += e * e;
    }
    return std::sqrt(ss / static_cast<double>(true_ite.size()));
}

/// |mean(true) − mean(est)|
inline double ate_error(std::span<const double> true_ite, std::span<const double> est_ite) {
    detail::check_pair(true_ite, est_ite, "ate_error");
    double diff = 0.0;
    for (std::size_t i = 0; i < true_ite.size(); ++i) diff += true_ite[i] - est_ite[i];
    return std::abs(diff / static_cast<double>(true_ite.size()));
}

inline double rmse_factual(std::span<const double> y_hat, std::span<const double> y) {
    detail::check_pair(y_hat, y, "rmse_factual");
    double ss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) ss += (y_hat[i] - y[i]) * (y_hat[i] - y[i]);
    return std::sqrt(ss / static_cast<double>(y.size()));
}

/// Metrics for one realization. Effect metrics are absent for factual-only data.
struct EvalReport {
    std::optional<double> sqrt_pehe;
    std::optional<double> ate_error;
    std::optional<double> rmse_factual;
    std::size_t n = 0;
};

struct MetricSummary {
    std::vector<double> values;
    double mean = 0.0;
    double std = 0.0;  // sample (n−1) standard deviation; 0 for a single value
};

struct AggregateReport {
    std::size_t realizations = 0;
    std::optional<MetricSummary> sqrt_pehe, ate_error, rmse_factual;
};

inline MetricSummary summarize(std::vector<double> values) {
    MetricSummary s;
    s.values = std::move(values);
    if (s.values.empty()) return s;
    double sum = 0.0;
    for (double v : s.values) sum += v;
    s.mean = sum / static_cast<double>(s.values.size());
    if (s.values.size() > 1) {
        double ss = 0.0;
        for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(s.values.size() - 1));
    }
    return s;
}

inline AggregateReport aggregate(std::span<const EvalReport> reports) {
    if (reports.empty()) throw ValidationError("aggregate: no reports");
    AggregateReport out;
    out.realizations = reports.size();
    auto collect = [&](std::optional<double> EvalReport::*field) -> std::optional<MetricSummary> {
        std::vector<double> vs;
        for (const auto& r : reports) {
            if (r.*field) vs.push_back(*(r.*field));
        }
        if (vs.empty()) return std::nullopt;
        return summarize(std::move(vs));
    };
    out.sqrt_pehe = collect(&EvalReport::sqrt_pehe);
    out.ate_error = collect(&EvalReport::ate_error);
    out.rmse_factual = collect(&EvalReport::rmse_factual);
    return out;
}

}  // namespace dsw
