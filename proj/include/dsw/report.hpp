#pragma once

// JSON and TSV renderings of evaluation and benchmark results, plus a schema
// check for the aggregate report.

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dsw/errors.hpp"
#include "dsw/harness.hpp"
#include "dsw/metrics.hpp"
#include "dsw/serialize.hpp"
#include "json.hpp"

namespace dsw {

inline constexpr int kReportVersion = 1;
inline const std::vector<std::string> kMetricNames{"sqrt_pehe", "ate_error", "rmse_factual"};

namespace detail {

inline nlohmann::ordered_json opt_number(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json summary_json(const std::optional<MetricSummary>& s) {
    if (!s) return nullptr;
    nlohmann::ordered_json j;
    j["mean"] = s->mean;
    j["std"] = s->std;
    j["values"] = s->values;
    return j;
}

inline const std::optional<double>& metric_of(const EvalReport& r, const std::string& name) {
    if (name == "sqrt_pehe") return r.sqrt_pehe;
    if (name == "ate_error") return r.ate_error;
    return r.rmse_factual;
}

inline const std::optional<MetricSummary>& metric_of(const AggregateReport& r, const std::string& name) {
    if (name == "sqrt_pehe") return r.sqrt_pehe;
    if (name == "ate_error") return r.ate_error;
    return r.rmse_factual;
}

}  // namespace detail

inline nlohmann::ordered_json eval_report_json(const EvalReport& rep) {
    nlohmann::ordered_json j;
    for (const auto& m : kMetricNames) j[m] = detail::opt_number(detail::metric_of(rep, m));
    j["n"] = rep.n;
    return j;
}

inline nlohmann::ordered_json aggregate_report_json(const BenchmarkResult& res, const nlohmann::ordered_json& config) {
    nlohmann::ordered_json j;
    j["format_version"] = kReportVersion;
    j["kind"] = "benchmark";
    j["config"] = config;
    auto aggs = nlohmann::ordered_json::array();
    for (const auto& [key, agg] : res.aggregates) {
        nlohmann::ordered_json a;
        a["gamma_h"] = key.first;
        a["method"] = key.second;
        a["realizations"] = agg.realizations;
        for (const auto& m : kMetricNames) a[m] = detail::summary_json(detail::metric_of(agg, m));
        aggs.push_back(std::move(a));
    }
    j["aggregates"] = std::move(aggs);
    auto cells = nlohmann::ordered_json::array();
    for (const auto& c : res.cells) {
        nlohmann::ordered_json cj;
        cj["realization"] = c.realization;
        cj["gamma_h"] = c.gamma_h;
        cj["method"] = c.method;
        cj["failed"] = c.failed;
        cj["note"] = c.note;
        if (c.report) {
            const auto metrics = eval_report_json(*c.report);
            for (const auto& [k, v] : metrics.items()) cj[k] = v;
        }
        cells.push_back(std::move(cj));
    }
    j["cells"] = std::move(cells);
    return j;
}

/// Structural problems in an aggregate report; empty when the report is valid.
inline std::vector<std::string> aggregate_report_problems(const nlohmann::json& j) {
    std::vector<std::string> out;
    auto need = [&](const nlohmann::json& obj, const char* key, const std::string& where) -> bool {
        if (!obj.is_object() || !obj.contains(key)) {
            out.push_back(where + ": missing '" + key + "'");
            return false;
        }
        return true;
    };
    if (!j.is_object()) return {"report is not an object"};
    if (need(j, "format_version", "report") && j["format_version"] != kReportVersion) {
        out.push_back("report: format_version must be " + std::to_string(kReportVersion));
    }
    if (need(j, "kind", "report") && j["kind"] != "benchmark") out.push_back("report: kind must be \"benchmark\"");
    if (need(j, "config", "report") && !j["config"].is_object()) out.push_back("report: config must be an object");
    if (need(j, "aggregates", "report")) {
        if (!j["aggregates"].is_array() || j["aggregates"].empty()) {
            out.push_back("report: aggregates must be a non-empty array");
        } else {
            for (std::size_t i = 0; i < j["aggregates"].size(); ++i) {
                const auto& a = j["aggregates"][i];
                const std::string where = "aggregates[" + std::to_string(i) + "]";
                if (need(a, "gamma_h", where) && !a["gamma_h"].is_number()) out.push_back(where + ": gamma_h not a number");
                if (need(a, "method", where) && !a["method"].is_string()) out.push_back(where + ": method not a string");
                if (need(a, "realizations", where) && !a["realizations"].is_number_unsigned()) {
                    out.push_back(where + ": realizations not a count");
                }
                for (const auto& m : kMetricNames) {
                    if (!need(a, m.c_str(), where) || a[m].is_null()) continue;
                    const auto& s = a[m];
                    for (const char* f : {"mean", "std"}) {
                        if (need(s, f, where + "." + m) && (!s[f].is_number() || !std::isfinite(s[f].get<double>()))) {
                            out.push_back(where + "." + m + ": " + f + " not a finite number");
                        }
                    }
                    if (need(s, "values", where + "." + m) &&
                        (!s["values"].is_array() || s["values"].empty() || s["values"].size() > a["realizations"])) {
                        out.push_back(where + "." + m + ": values must hold one entry per scored realization");
                    }
                }
            }
        }
    }
    if (need(j, "cells", "report")) {
        if (!j["cells"].is_array()) {
            out.push_back("report: cells must be an array");
        } else {
            for (std::size_t i = 0; i < j["cells"].size(); ++i) {
                const auto& c = j["cells"][i];
                const std::string where = "cells[" + std::to_string(i) + "]";
                for (const char* k : {"realization", "gamma_h", "method", "failed", "note"}) need(c, k, where);
            }
        }
    }
    return out;
}

/// Results table: one row per cell, failures marked.
inline std::string results_table(const BenchmarkResult& res) {
    std::ostringstream out;
    out << "gamma_h\trealization\tmethod\tstatus\tsqrt_pehe\tate_error\trmse_factual\tnote\n";
    auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
    for (const auto& c : res.cells) {
        out << format_double(c.gamma_h) << '\t' << c.realization << '\t' << c.method << '\t'
            << (c.failed ? "FAILED" : "ok");
        for (const auto& m : kMetricNames) {
            out << '\t' << (c.report ? cell(detail::metric_of(*c.report, m)) : std::string("NA"));
        }
        out << '\t' << c.note << '\n';
    }
    return out.str();
}

/// Plot-ready series for one metric: γ_h down the rows, mean and std per method across.
inline std::string metric_series(const BenchmarkResult& res, const std::vector<double>& gamma_hs,
                                 const std::vector<std::string>& methods, const std::string& metric) {
    std::ostringstream out;
    out << "gamma_h";
    for (const auto& m : methods) out << '\t' << m << "_mean\t" << m << "_std";
    out << '\n';
    for (double g : gamma_hs) {
        out << format_double(g);
        for (const auto& m : methods) {
            auto it = res.aggregates.find({g, m});
            const std::optional<MetricSummary>* s = it == res.aggregates.end() ? nullptr : &detail::metric_of(it->second, metric);
            if (s && *s) {
                out << '\t' << format_double((*s)->mean) << '\t' << format_double((*s)->std);
            } else {
                out << "\tNA\tNA";
            }
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace dsw
