#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dsw/errors.hpp"

namespace dsw {

/// One subject's trajectory over the observation window.
struct PatientRecord {
    std::string id;
    std::size_t T = 0;
    std::size_t d_x = 0;
    std::vector<double> X;  // T×d_x, row-major
    std::vector<double> C;  // static covariates
    std::vector<double> A;  // length T, entries 0/1
    double y_factual = 0.0;
    std::optional<double> y_counterfactual;
    bool treated = false;

    double x(std::size_t t, std::size_t j) const { return X[t * d_x + j]; }
    const double* x_row(std::size_t t) const { return X.data() + t * d_x; }

    /// Potential outcome under treatment / control. Needs a counterfactual.
    double y1() const { return treated ? y_factual : y_counterfactual.value(); }
    double y0() const { return treated ? y_counterfactual.value() : y_factual; }
    double true_ite() const { return y1() - y0(); }
};

/// Returns a list of invariant violations (empty when the record is valid).
inline std::vector<std::string> record_violations(const PatientRecord& r, std::size_t T, std::size_t d_x,
                                                  std::size_t d_c) {
    std::vector<std::string> out;
    if (r.T != T) out.push_back(r.id + ": T=" + std::to_string(r.T) + " expected " + std::to_string(T));
    if (r.d_x != d_x) out.push_back(r.id + ": d_x=" + std::to_string(r.d_x) + " expected " + std::to_string(d_x));
    if (r.X.size() != T * d_x) out.push_back(r.id + ": X has " + std::to_string(r.X.size()) + " values");
    if (r.C.size() != d_c) out.push_back(r.id + ": C has " + std::to_string(r.C.size()) + " values");
    if (r.A.size() != T) out.push_back(r.id + ": A has " + std::to_string(r.A.size()) + " values");
    bool any_treated = false;
    for (double a : r.A) {
        if (a != 0.0 && a != 1.0) {
            out.push_back(r.id + ": A entries must be 0 or 1");
            break;
        }
        any_treated = any_treated || a == 1.0;
    }
    if (any_treated != r.treated) out.push_back(r.id + ": treated flag disagrees with A");
    for (double v : r.X) {
        if (!std::isfinite(v)) {
            out.push_back(r.id + ": X not finite");
            break;
        }
    }
    for (double v : r.C) {
        if (!std::isfinite(v)) {
            out.push_back(r.id + ": C not finite");
            break;
        }
    }
    if (!std::isfinite(r.y_factual)) out.push_back(r.id + ": y_factual not finite");
    if (r.y_counterfactual && !std::isfinite(*r.y_counterfactual)) out.push_back(r.id + ": y_counterfactual not finite");
    return out;
}

inline void validate_record(const PatientRecord& r, std::size_t T, std::size_t d_x, std::size_t d_c) {
    auto errs = record_violations(r, T, d_x, d_c);
    if (!errs.empty()) throw ValidationError("invalid record " + errs.front());
}

/// Empirical treated fraction.
inline double treated_fraction(const std::vector<PatientRecord>& records) {
    if (records.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& r : records) n += r.treated ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(records.size());
}

}  // namespace dsw
