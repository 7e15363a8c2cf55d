#pragma once

// Fixtures and independent plain-double oracles shared by the test binaries.
// Only frozen_iptw_loss calls into the graph engine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dsw/baselines.hpp"
#include "dsw/grad.hpp"
#include "dsw/model.hpp"
#include "dsw/random.hpp"
#include "dsw/record.hpp"
#include "dsw/simulate.hpp"

namespace tsupport {

using dsw::ModelConfig;
using dsw::ParameterSet;
using dsw::PatientRecord;
using dsw::Rng;
using Vec = std::vector<double>;

// --- fixtures --------------------------------------------------------------

inline ModelConfig random_small_config(Rng& rng) {
    ModelConfig c;
    c.d_x = 1 + rng.index(6);
    c.d_c = 1 + rng.index(3);
    c.T = 1 + rng.index(5);
    c.d_u = 1 + rng.index(8);
    c.d_q = 1 + rng.index(8);
    c.d_h = 1 + rng.index(8);
    c.d_z = 1 + rng.index(8);
    c.outcome_hidden = {1 + rng.index(8)};
    if (rng.uniform() < 0.3) c.outcome_hidden.push_back(1 + rng.index(8));
    c.gamma = rng.uniform(0.0, 2.0);
    c.lambda = rng.uniform(0.0, 0.1);
    c.treatment_head_input = rng.uniform() < 0.5 ? dsw::TreatmentHeadInput::per_step : dsw::TreatmentHeadInput::pooled;
    c.gru_candidate_matrix = rng.uniform() < 0.5 ? dsw::GruCandidateMatrix::distinct : dsw::GruCandidateMatrix::reuse_vf;
    return c;
}

/// Treated records start treatment at a random index; controls are all zero.
inline PatientRecord random_record(const ModelConfig& c, Rng& rng, bool treated, const std::string& id = "r") {
    PatientRecord r;
    r.id = id;
    r.T = c.T;
    r.d_x = c.d_x;
    r.X.resize(c.T * c.d_x);
    for (auto& v : r.X) v = rng.normal();
    r.C.resize(c.d_c);
    for (auto& v : r.C) v = rng.normal();
    r.A.assign(c.T, 0.0);
    if (treated) {
        const std::size_t start = rng.index(c.T);
        for (std::size_t t = start; t < c.T; ++t) r.A[t] = 1.0;
    }
    r.treated = treated;
    r.y_factual = rng.normal();
    r.y_counterfactual = rng.normal();
    return r;
}

/// Every entry ~ U(−scale, scale), biases included.
inline ParameterSet random_params(const ModelConfig& c, Rng& rng, double scale = 0.5) {
    ParameterSet ps = dsw::make_parameters(c);
    for (auto& p : ps.items()) {
        for (auto& v : p.values) v = rng.uniform(-scale, scale);
    }
    return ps;
}

// --- plain linear algebra ---------------------------------------------------

inline Vec matvec(const dsw::Parameter& W, const Vec& x) {
    Vec out(W.shape.rows, 0.0);
    for (std::size_t i = 0; i < W.shape.rows; ++i) {
        for (std::size_t j = 0; j < W.shape.cols; ++j) out[i] += W.values[i * W.shape.cols + j] * x[j];
    }
    return out;
}

inline Vec join(std::initializer_list<Vec> parts) {
    Vec out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// --- scalar DSW forward -------------------------------------------------------

struct ScalarTrace {
    std::vector<Vec> u, q, h, o, z, alpha;
    std::vector<double> a_hat;
    Vec q_m;
    double y1 = 0.0, y0 = 0.0;
};

inline Vec scalar_gru(const ParameterSet& ps, const ModelConfig& c, const Vec& q, const Vec& cvec, double a,
                      const Vec& h_prev) {
    const Vec in = join({q, cvec, {a}});
    const auto& Wf = ps.at("W_f");
    const auto& Wr = ps.at("W_r");
    const auto& Wh = ps.at("W_h");
    const auto& Vf = ps.at("V_f");
    const auto& Vr = ps.at("V_r");
    const auto& Vh = c.gru_candidate_matrix == dsw::GruCandidateMatrix::distinct ? ps.at("V_h") : ps.at("V_f");
    const auto& bf = ps.at("b_f").values;
    const auto& br = ps.at("b_r").values;
    const auto& bh = ps.at("b_h").values;
    Vec h(c.d_h);
    Vec r(c.d_h), f(c.d_h);
    for (std::size_t i = 0; i < c.d_h; ++i) {
        double sf = bf[i], sr = br[i];
        for (std::size_t j = 0; j < in.size(); ++j) {
            sf += Wf.values[i * in.size() + j] * in[j];
            sr += Wr.values[i * in.size() + j] * in[j];
        }
        for (std::size_t j = 0; j < c.d_h; ++j) {
            sf += Vf.values[i * c.d_h + j] * h_prev[j];
            sr += Vr.values[i * c.d_h + j] * h_prev[j];
        }
        f[i] = sig(sf);
        r[i] = sig(sr);
    }
    for (std::size_t i = 0; i < c.d_h; ++i) {
        double sh = bh[i];
        for (std::size_t j = 0; j < in.size(); ++j) sh += Wh.values[i * in.size() + j] * in[j];
        for (std::size_t j = 0; j < c.d_h; ++j) sh += Vh.values[i * c.d_h + j] * (r[j] * h_prev[j]);
        h[i] = f[i] * h_prev[i] + (1.0 - f[i]) * std::tanh(sh);
    }
    return h;
}

/// Returns (weights, context) for history h_1..h_{t−1}.
inline std::pair<Vec, Vec> scalar_attention(const ParameterSet& ps, const Vec& ht, const std::vector<Vec>& hist) {
    const std::size_t d = ht.size();
    if (hist.empty()) return {{}, Vec(d, 0.0)};
    const auto& Wa = ps.at("W_alpha");
    const auto& va = ps.at("v_alpha").values;
    Vec scores;
    for (const auto& hs : hist) {
        Vec feat = ht;
        feat.insert(feat.end(), hs.begin(), hs.end());
        for (std::size_t i = 0; i < d; ++i) feat.push_back(ht[i] * hs[i]);
        double e = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < 3 * d; ++j) acc += Wa.values[i * 3 * d + j] * feat[j];
            e += va[i] * std::tanh(acc);
        }
        scores.push_back(e);
    }
    // plain exp / sum without max-shift; fine for the modest scores used in tests
    double total = 0.0;
    for (double s : scores) total += std::exp(s);
    Vec w;
    for (double s : scores) w.push_back(std::exp(s) / total);
    Vec ctx(d, 0.0);
    for (std::size_t s = 0; s < hist.size(); ++s) {
        for (std::size_t i = 0; i < d; ++i) ctx[i] += w[s] * hist[s][i];
    }
    return {w, ctx};
}

inline double scalar_outcome(const ParameterSet& ps, const ModelConfig& c, const Vec& q_m, double arm) {
    Vec hidden = join({q_m, {arm}});
    const std::size_t L = c.outcome_hidden.size();
    for (std::size_t l = 0; l <= L; ++l) {
        Vec next = matvec(ps.at(dsw::pname::W_y(l)), hidden);
        const auto& b = ps.at(dsw::pname::b_y(l)).values;
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] += b[i];
            if (l < L) next[i] = std::tanh(next[i]);
        }
        hidden = next;
    }
    return hidden[0];
}

inline double scalar_treatment(const ParameterSet& ps, const Vec& q, const Vec& cvec) {
    const Vec in = join({q, cvec});
    double s = ps.at("b_a").values[0];
    for (std::size_t j = 0; j < in.size(); ++j) s += ps.at("W_a").values[j] * in[j];
    return std::clamp(sig(s), dsw::kProbEps, 1.0 - dsw::kProbEps);
}

inline ScalarTrace scalar_forward(const ParameterSet& ps, const ModelConfig& c, const PatientRecord& r) {
    ScalarTrace tr;
    Vec z_prev(c.d_z, 0.0), h_prev(c.d_h, 0.0);
    for (std::size_t t = 0; t < c.T; ++t) {
        Vec x(r.X.begin() + static_cast<long>(t * c.d_x), r.X.begin() + static_cast<long>((t + 1) * c.d_x));
        Vec u = matvec(ps.at("W_emb"), x);
        Vec q = matvec(ps.at("W_g"), join({u, z_prev}));
        for (std::size_t i = 0; i < q.size(); ++i) q[i] = std::tanh(q[i] + ps.at("b_g").values[i]);
        Vec h = scalar_gru(ps, c, q, r.C, r.A[t], h_prev);
        auto [w, o] = scalar_attention(ps, h, tr.h);
        Vec z = matvec(ps.at("W_z"), join({h, o}));
        for (auto& v : z) v = std::tanh(v);
        tr.u.push_back(u);
        tr.q.push_back(q);
        tr.h.push_back(h);
        tr.o.push_back(o);
        tr.z.push_back(z);
        tr.alpha.push_back(w);
        z_prev = z;
        h_prev = h;
    }
    tr.q_m = tr.q[0];
    for (std::size_t t = 1; t < c.T; ++t) {
        for (std::size_t i = 0; i < c.d_q; ++i) tr.q_m[i] = std::max(tr.q_m[i], tr.q[t][i]);
    }
    for (std::size_t t = 0; t < c.T; ++t) {
        const Vec& src = c.treatment_head_input == dsw::TreatmentHeadInput::per_step ? tr.q[t] : tr.q_m;
        tr.a_hat.push_back(scalar_treatment(ps, src, r.C));
    }
    tr.y1 = scalar_outcome(ps, c, tr.q_m, 1.0);
    tr.y0 = scalar_outcome(ps, c, tr.q_m, 0.0);
    return tr;
}

/// Loss assembled term by term from the scalar forward pass.
inline double scalar_total_loss(const ParameterSet& ps, const ModelConfig& c, const std::vector<PatientRecord>& batch,
                                double prA) {
    double ly = 0.0, la = 0.0;
    std::size_t n_a = 0;
    for (const auto& r : batch) {
        const auto tr = scalar_forward(ps, c, r);
        double w = 0.0;
        for (std::size_t t = 0; t < c.T; ++t) {
            const double p = std::clamp(tr.a_hat[t], dsw::kProbEps, 1.0 - dsw::kProbEps);
            w += prA / p + (1.0 - prA) / (1.0 - p);
            la += -(r.A[t] * std::log(p) + (1.0 - r.A[t]) * std::log(1.0 - p));
            ++n_a;
        }
        w /= static_cast<double>(c.T);
        const double yhat = r.treated ? tr.y1 : tr.y0;
        ly += w * (yhat - r.y_factual) * (yhat - r.y_factual);
    }
    ly /= static_cast<double>(batch.size());
    la /= static_cast<double>(n_a);
    double reg = 0.0;
    for (const auto& p : ps.items()) {
        if (!p.regularized) continue;
        for (double v : p.values) reg += v * v;
    }
    return ly + c.gamma * la + c.lambda * reg;
}

// --- scalar simulator -----------------------------------------------------------

/// Literal loop form of the AR recurrence with pre-window history prepended.
/// Treatment before the window repeats a_1.
inline std::vector<Vec> scalar_ar(std::size_t T, std::size_t p, std::size_t width, const Vec& carry, const Vec& drive,
                                  const Vec& a, const Vec& hist, const Vec& noise) {
    // full[k] holds time k − p + 1 for k = 0 .. p+T−1
    std::vector<Vec> full(p + T, Vec(width, 0.0));
    std::vector<double> afull(p + T, a[0]);
    for (std::size_t m = 0; m < p; ++m) {
        for (std::size_t j = 0; j < width; ++j) full[m][j] = hist[m * width + j];
    }
    for (std::size_t t = 0; t < T; ++t) afull[p + t] = a[t];
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t k = p + t;
        for (std::size_t j = 0; j < width; ++j) {
            double s = 0.0;
            for (std::size_t r = 1; r <= p; ++r) s += carry[(r - 1) * width + j] * full[k - r][j];
            for (std::size_t r = 1; r <= p; ++r) s += drive[r - 1] * afull[k - r];
            full[k][j] = s / static_cast<double>(p) + noise[t * width + j];
        }
    }
    return std::vector<Vec>(full.begin() + static_cast<long>(p), full.end());
}

inline double scalar_sim_outcome(const dsw::SimCoefficients& k, const std::vector<Vec>& X, const std::vector<Vec>& Z,
                                 const Vec& C, double gamma_h) {
    const std::size_t T = X.size();
    const Vec xc = join({X[T - 1], C});
    double y = k.b;
    for (std::size_t i = 0; i < k.d_z; ++i) {
        double g = k.g_bias[i];
        for (std::size_t j = 0; j < xc.size(); ++j) g += k.g_weight[i * xc.size() + j] * xc[j];
        g = std::tanh(g);
        double zbar = 0.0;
        for (std::size_t t = 0; t < T; ++t) zbar += Z[t][i];
        zbar /= static_cast<double>(T);
        y += k.w[i] * (gamma_h * zbar + (1.0 - gamma_h) * g);
    }
    return y;
}

inline Vec flatten(const std::vector<Vec>& rows) {
    Vec out;
    for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
    return out;
}

// --- baseline oracles -------------------------------------------------------

using dsw::DistanceMetric;
using dsw::SnapshotDataset;

inline SnapshotDataset random_snapshot(Rng& rng, std::size_t n, std::size_t d, double treated_share = 0.5) {
    SnapshotDataset s;
    s.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) s.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
        s.arm.push_back(i < static_cast<std::size_t>(treated_share * n) ? 1.0 : 0.0);
        s.y.push_back(rng.normal());
    }
    return s;
}

// Distances written out coordinate by coordinate.
inline double oracle_distance(const SnapshotDataset& s, std::size_t a, const SnapshotDataset& r, std::size_t b,
                       DistanceMetric m, const std::vector<std::vector<double>>& prec) {
    const auto d = static_cast<std::size_t>(s.features.cols());
    std::vector<double> diff(d);
    for (std::size_t j = 0; j < d; ++j) {
        diff[j] = s.features(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)) -
                  r.features(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j));
    }
    double acc = 0.0;
    switch (m) {
        case DistanceMetric::euclidean:
            for (double v : diff) acc += v * v;
            return std::sqrt(acc);
        case DistanceMetric::minkowski:
            for (double v : diff) acc += std::pow(std::abs(v), 3.0);
            return std::pow(acc, 1.0 / 3.0);
        case DistanceMetric::mahalanobis:
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) acc += diff[i] * prec[i][j] * diff[j];
            }
            return std::sqrt(acc);
    }
    return 0.0;
}

inline std::vector<std::vector<double>> oracle_precision(const SnapshotDataset& r) {
    const auto n = static_cast<std::size_t>(r.features.rows());
    const auto d = static_cast<std::size_t>(r.features.cols());
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += r.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / n;
    }
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) {
                cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
                    (r.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) - mean[a]) *
                    (r.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) - mean[b]) / (n - 1.0);
            }
        }
    }
    for (std::size_t a = 0; a < d; ++a) cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) += 1e-6;
    const Eigen::MatrixXd inv = cov.fullPivLu().inverse();
    std::vector<std::vector<double>> out(d, std::vector<double>(d));
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) out[a][b] = inv(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
    return out;
}

inline std::vector<double> brute_force_knn(const SnapshotDataset& s, std::size_t k, DistanceMetric m) {
    const auto prec = m == DistanceMetric::mahalanobis ? oracle_precision(s) : std::vector<std::vector<double>>{};
    std::vector<double> out;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < s.rows(); ++j) {
            if (s.arm[j] != s.arm[i]) all.emplace_back(oracle_distance(s, i, s, j, m, prec), j);
        }
        std::sort(all.begin(), all.end());
        double cf = 0.0;
        for (std::size_t q = 0; q < k; ++q) cf += s.y[all[q].second];
        cf /= static_cast<double>(k);
        out.push_back(s.arm[i] == 1.0 ? s.y[i] - cf : cf - s.y[i]);
    }
    return out;
}

// Newton iterations on the raw (unstandardized) design.
inline std::vector<double> irls_propensities(const Eigen::MatrixXd& X, const std::vector<double>& a) {
    const Eigen::Index n = X.rows(), d = X.cols() + 1;
    Eigen::MatrixXd D(n, d);
    D.col(0).setOnes();
    D.rightCols(X.cols()) = X;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
    for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd p(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            p(i) = 1.0 / (1.0 + std::exp(-D.row(i).dot(beta)));
            w(i) = p(i) * (1.0 - p(i));
        }
        Eigen::VectorXd grad = D.transpose() * (Eigen::Map<const Eigen::VectorXd>(a.data(), n) - p);
        Eigen::MatrixXd H = D.transpose() * w.asDiagonal() * D;
        const Eigen::VectorXd delta = H.ldlt().solve(grad);
        beta += delta;
        if (delta.norm() < 1e-14) break;
    }
    std::vector<double> out;
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(1.0 / (1.0 + std::exp(-D.row(i).dot(beta))));
    return out;
}

// --- metric oracles ----------------------------------------------------------

// Two-pass loop oracles in long double.
inline double oracle_pehe(const std::vector<double>& t, const std::vector<double>& e) {
    std::vector<long double> d;
    for (std::size_t i = 0; i < t.size(); ++i) d.push_back(static_cast<long double>(t[i]) - e[i]);
    long double ss = 0.0L;
    for (auto v : d) ss += v * v;
    return static_cast<double>(std::sqrt(ss / d.size()));
}

inline double oracle_ate(const std::vector<double>& t, const std::vector<double>& e) {
    long double mt = 0.0L, me = 0.0L;
    for (double v : t) mt += v;
    for (double v : e) me += v;
    return static_cast<double>(std::fabs(mt / t.size() - me / e.size()));
}

// --- reference loss ------------------------------------------------------------

// The training objective rebuilt from forward_sequence with the IPTW weights
// held at fixed values, so finite differences see them as constants.
inline dsw::LossBuilder frozen_iptw_loss(const ModelConfig& c, const std::vector<PatientRecord>& batch,
                                         const Vec& w_fixed) {
    using namespace dsw;
    return [&c, &batch, w_fixed](Graph& g, const ParameterSet& p) {
        BoundParams bp(g, p, c);
        std::vector<Var> y_hat, a_hat;
        Vec y, labels;
        for (const auto& r : batch) {
            ForwardTrace tr = forward_sequence(g, r, bp, c);
            y_hat.push_back(r.treated ? tr.y1 : tr.y0);
            y.push_back(r.y_factual);
            a_hat.insert(a_hat.end(), tr.a_hat.begin(), tr.a_hat.end());
            labels.insert(labels.end(), r.A.begin(), r.A.end());
        }
        std::vector<Var> pen;
        for (const auto& prm : p.items()) {
            if (prm.regularized) pen.push_back(sum_squares(g.parameter(p, prm.name)));
        }
        return add_n(std::vector<Var>{weighted_mse(concat(y_hat), y, w_fixed), scale(bce_loss(concat(a_hat), labels), c.gamma),
                                      scale(add_n(pen), c.lambda)});
    };
}

}  // namespace tsupport
