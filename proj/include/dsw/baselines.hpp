#pragma once

// Static comparison estimators applied to one time stamp at a time:
// outcome regression with treatment as a feature, k-nearest-neighbour
// matching and propensity-score matching. Each estimator fits on a reference
// snapshot and returns ITE estimates for the rows of a query snapshot.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dsw/errors.hpp"
#include "dsw/grad.hpp"
#include "dsw/metrics.hpp"
#include "dsw/record.hpp"

namespace dsw {

/// Rows of ([x_t, c], a_t, y) for a single time stamp.
struct SnapshotDataset {
    Eigen::MatrixXd features;  // N×(d_x+d_c)
    std::vector<double> arm;   // a_t
    std::vector<double> y;     // factual outcome
    std::vector<double> true_ite;  // empty when counterfactuals are unknown

    std::size_t rows() const { return y.size(); }
    std::size_t count_arm(double a) const { return static_cast<std::size_t>(std::count(arm.begin(), arm.end(), a)); }
};

/// t is 1-based.
inline SnapshotDataset make_snapshot(const std::vector<PatientRecord>& records, std::size_t t) {
    if (records.empty()) throw ValidationError("make_snapshot: no records");
    const std::size_t T = records.front().T;
    if (t < 1 || t > T) throw ValidationError("make_snapshot: t=" + std::to_string(t) + " outside window 1.." + std::to_string(T));
    const std::size_t d_x = records.front().d_x;
    const std::size_t d_c = records.front().C.size();
    SnapshotDataset s;
    s.features.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(d_x + d_c));
    bool have_cf = true;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const auto row = static_cast<Eigen::Index>(i);
        for (std::size_t j = 0; j < d_x; ++j) s.features(row, static_cast<Eigen::Index>(j)) = r.x(t - 1, j);
        for (std::size_t j = 0; j < d_c; ++j) s.features(row, static_cast<Eigen::Index>(d_x + j)) = r.C[j];
        s.arm.push_back(r.A[t - 1]);
        s.y.push_back(r.y_factual);
        have_cf = have_cf && r.y_counterfactual.has_value();
    }
    if (have_cf) {
        for (const auto& r : records) s.true_ite.push_back(r.true_ite());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Linear regression

struct LinearFit {
    Eigen::VectorXd coefficients;  // [intercept, features..., treatment]
    double treatment_effect = 0.0;
};

/// Least squares on [1, x, c, a] → y through the normal equations with 1e-8 ridge jitter.
inline LinearFit fit_linear(const SnapshotDataset& s) {
    if (s.count_arm(1.0) < 2 || s.count_arm(0.0) < 2) {
        throw EstimationError("lr_estimator: each arm needs at least 2 rows");
    }
    const auto n = static_cast<Eigen::Index>(s.rows());
    const Eigen::Index d = s.features.cols();
    Eigen::MatrixXd design(n, d + 2);
    design.col(0).setOnes();
    design.middleCols(1, d) = s.features;
    design.col(d + 1) = Eigen::Map<const Eigen::VectorXd>(s.arm.data(), n);
    const Eigen::Map<const Eigen::VectorXd> y(s.y.data(), n);
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += 1e-8;
    LinearFit fit;
    fit.coefficients = gram.ldlt().solve(design.transpose() * y);
    fit.treatment_effect = fit.coefficients(d + 1);
    if (!std::isfinite(fit.treatment_effect)) throw EstimationError("lr_estimator: solve produced non-finite values");
    return fit;
}

/// The linear model's effect is the treatment coefficient, identical for every row.
inline std::vector<double> lr_estimator(const SnapshotDataset& reference, const SnapshotDataset& query) {
    return std::vector<double>(query.rows(), fit_linear(reference).treatment_effect);
}

inline std::vector<double> lr_estimator(const SnapshotDataset& snapshot) { return lr_estimator(snapshot, snapshot); }

// ---------------------------------------------------------------------------
// Matching

enum class DistanceMetric { euclidean, minkowski, mahalanobis };

inline const char* to_string(DistanceMetric m) {
    switch (m) {
        case DistanceMetric::euclidean: return "euclidean";
        case DistanceMetric::minkowski: return "minkowski";
        case DistanceMetric::mahalanobis: return "mahalanobis";
    }
    return "euclidean";
}

inline DistanceMetric parse_distance_metric(const std::string& s) {
    if (s == "euclidean") return DistanceMetric::euclidean;
    if (s == "minkowski") return DistanceMetric::minkowski;
    if (s == "mahalanobis") return DistanceMetric::mahalanobis;
    throw ValidationError("unknown distance metric '" + s + "'");
}

namespace detail {

/// Indices of the k smallest distances; ties go to the lower reference index.
inline std::vector<std::size_t> k_smallest(const std::vector<std::pair<double, std::size_t>>& candidates,
                                           std::size_t k) {
    auto sorted = candidates;
    std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(sorted[i].second);
    return out;
}

/// ITE from a factual outcome and an imputed opposite-arm outcome.
inline double signed_effect(double arm, double y, double counterfactual) {
    return arm == 1.0 ? y - counterfactual : counterfactual - y;
}

}  // namespace detail

/// Pooled covariance of the reference features plus 1e-6 on the diagonal, inverted.
inline Eigen::MatrixXd mahalanobis_precision(const Eigen::MatrixXd& features) {
    const Eigen::RowVectorXd mean = features.colwise().mean();
    const Eigen::MatrixXd centered = features.rowwise() - mean;
    const double denom = features.rows() > 1 ? static_cast<double>(features.rows() - 1) : 1.0;
    Eigen::MatrixXd cov = centered.transpose() * centered / denom;
    cov.diagonal().array() += 1e-6;
    return cov.ldlt().solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
}

inline double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, DistanceMetric metric,
                       const Eigen::MatrixXd* precision) {
    const Eigen::VectorXd diff = a - b;
    switch (metric) {
        case DistanceMetric::euclidean: return diff.norm();
        case DistanceMetric::minkowski: return std::cbrt(diff.array().abs().cube().sum());
        case DistanceMetric::mahalanobis: return std::sqrt(std::max(0.0, diff.dot(*precision * diff)));
    }
    return 0.0;
}

/// Counterfactual for each query row = mean outcome of its k nearest opposite-arm reference rows.
inline std::vector<double> knn_matching(const SnapshotDataset& reference, const SnapshotDataset& query, std::size_t k,
                                        DistanceMetric metric) {
    if (k == 0) throw ValidationError("knn_matching: k must be >= 1");
    const std::size_t n_treated = reference.count_arm(1.0);
    const std::size_t n_control = reference.count_arm(0.0);
    if (query.features.cols() != reference.features.cols()) throw DimensionError("knn_matching: feature widths differ");
    std::optional<Eigen::MatrixXd> precision;
    if (metric == DistanceMetric::mahalanobis) precision = mahalanobis_precision(reference.features);
    std::vector<double> out;
    out.reserve(query.rows());
    for (std::size_t i = 0; i < query.rows(); ++i) {
        const double want = 1.0 - query.arm[i];
        const std::size_t available = want == 1.0 ? n_treated : n_control;
        if (k > available) {
            throw ValidationError("knn_matching: k=" + std::to_string(k) + " exceeds opposite arm size " +
                                  std::to_string(available));
        }
        const Eigen::VectorXd qi = query.features.row(static_cast<Eigen::Index>(i)).transpose();
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t j = 0; j < reference.rows(); ++j) {
            if (reference.arm[j] != want) continue;
            const Eigen::VectorXd rj = reference.features.row(static_cast<Eigen::Index>(j)).transpose();
            cand.emplace_back(distance(qi, rj, metric, precision ? &*precision : nullptr), j);
        }
        double cf = 0.0;
        for (std::size_t j : detail::k_smallest(cand, k)) cf += reference.y[j];
        cf /= static_cast<double>(k);
        out.push_back(detail::signed_effect(query.arm[i], query.y[i], cf));
    }
    return out;
}

inline std::vector<double> knn_matching(const SnapshotDataset& snapshot, std::size_t k, DistanceMetric metric) {
    return knn_matching(snapshot, snapshot, k, metric);
}

// ---------------------------------------------------------------------------
// Propensity scores

struct LogisticFit {
    Eigen::VectorXd feature_mean, feature_scale;
    std::vector<double> theta;         // [intercept, standardized features...]
    std::vector<double> loss_history;  // BCE after each accepted step (index 0 = start)
    std::size_t iterations = 0;
    bool converged = false;
    bool clipped = false;  // some fitted propensity hit the clipping bound
    std::string warning;

    double propensity(const Eigen::VectorXd& x) const {
        double logit = theta[0];
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            logit += theta[static_cast<std::size_t>(j) + 1] * (x(j) - feature_mean(j)) / feature_scale(j);
        }
        return std::clamp(detail::stable_sigmoid(logit), kProbEps, 1.0 - kProbEps);
    }

    std::vector<double> propensities(const Eigen::MatrixXd& features) const {
        std::vector<double> out;
        for (Eigen::Index i = 0; i < features.rows(); ++i) out.push_back(propensity(features.row(i).transpose()));
        return out;
    }
};

/// Logistic regression [x, c] → a by gradient descent on the differentiation
/// engine, with backtracking so the training BCE never increases. Features are
/// standardized internally; the fitted probabilities do not depend on that.
inline LogisticFit fit_propensity(const Eigen::MatrixXd& features, std::span<const double> arm, double tol = 1e-6,
                                  std::size_t max_iter = 10000) {
    const auto n = features.rows();
    const auto d = features.cols();
    if (n == 0 || static_cast<std::size_t>(n) != arm.size()) throw DimensionError("fit_propensity: bad shapes");
    LogisticFit fit;
    fit.feature_mean = features.colwise().mean().transpose();
    fit.feature_scale.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double sd = std::sqrt((features.col(j).array() - fit.feature_mean(j)).square().mean());
        fit.feature_scale(j) = sd > 0.0 ? sd : 1.0;
    }
    // row-major design with an intercept column
    std::vector<double> design(static_cast<std::size_t>(n * (d + 1)));
    for (Eigen::Index i = 0; i < n; ++i) {
        design[static_cast<std::size_t>(i * (d + 1))] = 1.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            design[static_cast<std::size_t>(i * (d + 1) + j + 1)] =
                (features(i, j) - fit.feature_mean(j)) / fit.feature_scale(j);
        }
    }
    const Shape design_shape{static_cast<std::size_t>(n), static_cast<std::size_t>(d + 1)};
    ParameterSet ps;
    ps.add("theta", vec_shape(static_cast<std::size_t>(d + 1)));

    auto evaluate = [&](const ParameterSet& p, bool with_grad) -> std::pair<double, std::vector<double>> {
        Graph g;
        Var X = g.constant(design_shape, design);
        Var loss = bce_loss(sigmoid(affine(X, g.parameter(p, "theta"))), arm);
        const double v = loss.value();
        if (!with_grad) return {v, {}};
        auto grads = g.backward(loss);
        return {v, grads.at("theta")};
    };

    auto [loss, grad] = evaluate(ps, true);
    fit.loss_history.push_back(loss);
    double step = 1.0;
    for (fit.iterations = 0; fit.iterations < max_iter; ++fit.iterations) {
        double gnorm2 = 0.0;
        for (double gi : grad) gnorm2 += gi * gi;
        if (std::sqrt(gnorm2) < tol) {
            fit.converged = true;
            break;
        }
        ParameterSet trial = ps;
        bool accepted = false;
        while (step > 1e-12) {
            auto& th = trial.at("theta").values;
            const auto& cur = ps.at("theta").values;
            for (std::size_t k = 0; k < th.size(); ++k) th[k] = cur[k] - step * grad[k];
            const double trial_loss = evaluate(trial, false).first;
            if (trial_loss <= loss - 0.5 * step * gnorm2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // no further decrease representable
        ps = trial;
        std::tie(loss, grad) = evaluate(ps, true);
        fit.loss_history.push_back(loss);
        step = std::min(step * 2.0, 1e4);
    }
    fit.theta = ps.at("theta").values;
    for (double p : fit.propensities(features)) {
        if (p <= kProbEps || p >= 1.0 - kProbEps) fit.clipped = true;
    }
    if (fit.clipped) fit.warning = "propensity model separates the arms; scores clipped to [1e-6, 1-1e-6]";
    return fit;
}

/// 1-nearest-neighbour match on |propensity difference| in the opposite arm.
inline std::vector<double> propensity_matching(const SnapshotDataset& reference, const SnapshotDataset& query,
                                               std::string* warning = nullptr) {
    if (reference.count_arm(1.0) == 0 || reference.count_arm(0.0) == 0) {
        throw EstimationError("propensity_matching: both arms must be present");
    }
    const LogisticFit fit = fit_propensity(reference.features, reference.arm);
    if (warning) *warning = fit.warning;
    const auto ref_score = fit.propensities(reference.features);
    const auto query_score = fit.propensities(query.features);
    std::vector<double> out;
    out.reserve(query.rows());
    for (std::size_t i = 0; i < query.rows(); ++i) {
        const double want = 1.0 - query.arm[i];
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < reference.rows(); ++j) {
            if (reference.arm[j] != want) continue;
            const double dist = std::abs(ref_score[j] - query_score[i]);
            if (dist < best) {
                best = dist;
                best_j = j;
            }
        }
        out.push_back(detail::signed_effect(query.arm[i], query.y[i], reference.y[best_j]));
    }
    return out;
}

inline std::vector<double> propensity_matching(const SnapshotDataset& snapshot, std::string* warning = nullptr) {
    return propensity_matching(snapshot, snapshot, warning);
}

// ---------------------------------------------------------------------------
// Per-time-stamp protocol

using SnapshotEstimator = std::function<std::vector<double>(const SnapshotDataset&, const SnapshotDataset&)>;

struct TimestepResult {
    std::size_t t = 0;
    std::optional<EvalReport> report;
    std::string error;
};

struct PerTimestepSummary {
    std::vector<TimestepResult> per_t;
    double sqrt_pehe = 0.0;  // mean over successful time stamps
    double ate_error = 0.0;
    std::size_t successes = 0;
    std::size_t errors = 0;
};

/// Runs the estimator independently at t = 1..T and averages the effect metrics.
inline PerTimestepSummary run_per_timestep(const SnapshotEstimator& estimator,
                                           const std::vector<PatientRecord>& reference,
                                           const std::vector<PatientRecord>& query, std::size_t T) {
    PerTimestepSummary out;
    for (std::size_t t = 1; t <= T; ++t) {
        TimestepResult res;
        res.t = t;
        try {
            const SnapshotDataset ref = make_snapshot(reference, t);
            const SnapshotDataset q = make_snapshot(query, t);
            if (q.true_ite.empty()) throw ValidationError("run_per_timestep: query records lack counterfactuals");
            const auto est = estimator(ref, q);
            EvalReport rep;
            rep.sqrt_pehe = sqrt_pehe(q.true_ite, est);
            rep.ate_error = ate_error(q.true_ite, est);
            rep.n = q.rows();
            res.report = rep;
            out.sqrt_pehe += *rep.sqrt_pehe;
            out.ate_error += *rep.ate_error;
            ++out.successes;
        } catch (const Error& e) {
            res.error = e.what();
            ++out.errors;
        }
        out.per_t.push_back(std::move(res));
    }
    if (out.successes == 0) throw EstimationError("run_per_timestep: estimator failed at every time stamp");
    out.sqrt_pehe /= static_cast<double>(out.successes);
    out.ate_error /= static_cast<double>(out.successes);
    return out;
}

inline PerTimestepSummary run_per_timestep(const SnapshotEstimator& estimator,
                                           const std::vector<PatientRecord>& dataset, std::size_t T) {
    return run_per_timestep(estimator, dataset, dataset, T);
}

struct KnnChoice {
    std::size_t k = 5;
    DistanceMetric metric = DistanceMetric::euclidean;
    double val_sqrt_pehe = std::numeric_limits<double>::infinity();
};

/// Sweeps k and the three metrics on a validation split; keeps the lowest mean √PEHE.
inline KnnChoice select_knn(const std::vector<PatientRecord>& reference, const std::vector<PatientRecord>& validation,
                            std::size_t T, std::vector<std::size_t> ks = {1, 3, 5, 10}) {
    KnnChoice best;
    bool found = false;
    for (auto metric : {DistanceMetric::euclidean, DistanceMetric::minkowski, DistanceMetric::mahalanobis}) {
        for (std::size_t k : ks) {
            try {
                auto est = [k, metric](const SnapshotDataset& r, const SnapshotDataset& q) {
                    return knn_matching(r, q, k, metric);
                };
                const auto res = run_per_timestep(est, reference, validation, T);
                if (res.errors == 0 && res.sqrt_pehe < best.val_sqrt_pehe) {
                    best = {k, metric, res.sqrt_pehe};
                    found = true;
                }
            } catch (const Error&) {
            }
        }
    }
    if (!found) return KnnChoice{};
    return best;
}

}  // namespace dsw
