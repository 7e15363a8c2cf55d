#pragma once

// Deep Sequential Weighting network.
//
// Per time step t (z_0 = h_0 = 0):
//   u_t = W_emb x_t
//   q_t = tanh(W_g [u_t, z_{t-1}] + b_g)
//   GRU over [q_t, c, a_t]            -> h_t
//   attention of h_t over h_1..h_{t-1} -> o_t   (o_1 = 0)
//   z_t = tanh(W_z [h_t, o_t])
// Heads:
//   q_m    = elementwise max over q_1..q_T
//   â_t    = clip(sigmoid(W_a [q_t or q_m, c] + b_a))
//   ŷ_arm  = MLP([q_m, arm])
// Loss: weighted factual MSE (IPTW weights) + γ·BCE + λ·Σ‖W‖².

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dsw/errors.hpp"
#include "dsw/grad.hpp"
#include "dsw/random.hpp"
#include "dsw/record.hpp"

namespace dsw {

enum class TreatmentHeadInput { per_step, pooled };
enum class GruCandidateMatrix { distinct, reuse_vf };

inline const char* to_string(TreatmentHeadInput v) { return v == TreatmentHeadInput::per_step ? "per_step" : "pooled"; }
inline const char* to_string(GruCandidateMatrix v) { return v == GruCandidateMatrix::distinct ? "distinct" : "reuse_vf"; }

inline TreatmentHeadInput parse_treatment_head_input(const std::string& s) {
    if (s == "per_step") return TreatmentHeadInput::per_step;
    if (s == "pooled") return TreatmentHeadInput::pooled;
    throw ValidationError("treatment-head-input must be per_step or pooled, got '" + s + "'");
}

inline GruCandidateMatrix parse_gru_candidate_matrix(const std::string& s) {
    if (s == "distinct") return GruCandidateMatrix::distinct;
    if (s == "reuse_vf") return GruCandidateMatrix::reuse_vf;
    throw ValidationError("gru-candidate-matrix must be distinct or reuse_vf, got '" + s + "'");
}

struct ModelConfig {
    std::size_t d_x = 1;
    std::size_t d_c = 1;
    std::size_t d_u = 16;
    std::size_t d_q = 16;
    std::size_t d_h = 16;
    std::size_t d_z = 8;
    std::size_t T = 1;
    std::vector<std::size_t> outcome_hidden{16};
    double gamma = 1.0;
    double lambda = 1e-4;
    TreatmentHeadInput treatment_head_input = TreatmentHeadInput::per_step;
    GruCandidateMatrix gru_candidate_matrix = GruCandidateMatrix::distinct;

    void validate() const {
        // d_c = 0 is allowed for covariate tables without static features.
        if (d_x == 0 || d_u == 0 || d_q == 0 || d_h == 0 || d_z == 0 || T == 0) {
            throw ValidationError("model dimensions must all be >= 1");
        }
        for (auto w : outcome_hidden) {
            if (w == 0) throw ValidationError("outcome head widths must be >= 1");
        }
        if (!(gamma >= 0.0) || !(lambda >= 0.0)) throw ValidationError("gamma and lambda must be >= 0");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Parameter names, in declaration order.
namespace pname {
inline constexpr const char* W_emb = "W_emb";
inline constexpr const char* W_g = "W_g";
inline constexpr const char* b_g = "b_g";
inline constexpr const char* W_f = "W_f";
inline constexpr const char* W_r = "W_r";
inline constexpr const char* W_h = "W_h";
inline constexpr const char* V_f = "V_f";
inline constexpr const char* V_r = "V_r";
inline constexpr const char* V_h = "V_h";
inline constexpr const char* b_f = "b_f";
inline constexpr const char* b_r = "b_r";
inline constexpr const char* b_h = "b_h";
inline constexpr const char* W_alpha = "W_alpha";
inline constexpr const char* v_alpha = "v_alpha";
inline constexpr const char* W_z = "W_z";
inline constexpr const char* W_a = "W_a";
inline constexpr const char* b_a = "b_a";
inline std::string W_y(std::size_t layer) { return "W_y" + std::to_string(layer); }
inline std::string b_y(std::size_t layer) { return "b_y" + std::to_string(layer); }
}  // namespace pname

/// Allocates every parameter with its shape; all entries zero.
inline ParameterSet make_parameters(const ModelConfig& cfg) {
    cfg.validate();
    ParameterSet ps;
    const std::size_t gru_in = cfg.d_q + cfg.d_c + 1;
    ps.add(pname::W_emb, {cfg.d_u, cfg.d_x});
    ps.add(pname::W_g, {cfg.d_q, cfg.d_u + cfg.d_z});
    ps.add(pname::b_g, vec_shape(cfg.d_q), false);
    ps.add(pname::W_f, {cfg.d_h, gru_in});
    ps.add(pname::W_r, {cfg.d_h, gru_in});
    ps.add(pname::W_h, {cfg.d_h, gru_in});
    ps.add(pname::V_f, {cfg.d_h, cfg.d_h});
    ps.add(pname::V_r, {cfg.d_h, cfg.d_h});
    if (cfg.gru_candidate_matrix == GruCandidateMatrix::distinct) ps.add(pname::V_h, {cfg.d_h, cfg.d_h});
    ps.add(pname::b_f, vec_shape(cfg.d_h), false);
    ps.add(pname::b_r, vec_shape(cfg.d_h), false);
    ps.add(pname::b_h, vec_shape(cfg.d_h), false);
    ps.add(pname::W_alpha, {cfg.d_h, 3 * cfg.d_h});
    ps.add(pname::v_alpha, {1, cfg.d_h});
    ps.add(pname::W_z, {cfg.d_z, 2 * cfg.d_h});
    ps.add(pname::W_a, {1, cfg.d_q + cfg.d_c});
    ps.add(pname::b_a, vec_shape(1), false);
    std::size_t in = cfg.d_q + 1;
    for (std::size_t l = 0; l < cfg.outcome_hidden.size(); ++l) {
        ps.add(pname::W_y(l), {cfg.outcome_hidden[l], in});
        ps.add(pname::b_y(l), vec_shape(cfg.outcome_hidden[l]), false);
        in = cfg.outcome_hidden[l];
    }
    ps.add(pname::W_y(cfg.outcome_hidden.size()), {1, in});
    ps.add(pname::b_y(cfg.outcome_hidden.size()), vec_shape(1), false);
    return ps;
}

/// Weights ~ U(−1/√fan_in, 1/√fan_in), biases zero.
inline ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    ParameterSet ps = make_parameters(cfg);
    Rng rng(stream_seed(seed, 0x1417ULL));
    for (auto& p : ps.items()) {
        if (!p.regularized) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(p.shape.cols));
        for (auto& v : p.values) v = rng.uniform(-bound, bound);
    }
    return ps;
}

/// Graph leaves for one parameter set.
struct BoundParams {
    Var W_emb, W_g, b_g;
    Var W_f, W_r, W_h, V_f, V_r, V_h, b_f, b_r, b_h;
    Var W_alpha, v_alpha, W_z, W_a, b_a;
    std::vector<Var> W_y, b_y;

    BoundParams(Graph& g, const ParameterSet& ps, const ModelConfig& cfg) {
        W_emb = g.parameter(ps, pname::W_emb);
        W_g = g.parameter(ps, pname::W_g);
        b_g = g.parameter(ps, pname::b_g);
        W_f = g.parameter(ps, pname::W_f);
        W_r = g.parameter(ps, pname::W_r);
        W_h = g.parameter(ps, pname::W_h);
        V_f = g.parameter(ps, pname::V_f);
        V_r = g.parameter(ps, pname::V_r);
        V_h = cfg.gru_candidate_matrix == GruCandidateMatrix::distinct ? g.parameter(ps, pname::V_h) : V_f;
        b_f = g.parameter(ps, pname::b_f);
        b_r = g.parameter(ps, pname::b_r);
        b_h = g.parameter(ps, pname::b_h);
        W_alpha = g.parameter(ps, pname::W_alpha);
        v_alpha = g.parameter(ps, pname::v_alpha);
        W_z = g.parameter(ps, pname::W_z);
        W_a = g.parameter(ps, pname::W_a);
        b_a = g.parameter(ps, pname::b_a);
        for (std::size_t l = 0; l <= cfg.outcome_hidden.size(); ++l) {
            W_y.push_back(g.parameter(ps, pname::W_y(l)));
            b_y.push_back(g.parameter(ps, pname::b_y(l)));
        }
    }
};

// ---------------------------------------------------------------------------
// Building blocks

inline Var embed(Var x_t, const BoundParams& p) { return affine(p.W_emb, x_t); }

inline Var fuse_confounder(Var u_t, Var z_prev, const BoundParams& p) {
    return tanh_act(affine(p.W_g, concat({u_t, z_prev}), p.b_g));
}

inline Var gru_step(Var q_t, Var c, double a_t, Var h_prev, const BoundParams& p) {
    if (a_t != 0.0 && a_t != 1.0) throw ValidationError("gru_step: treatment must be 0 or 1");
    Graph& g = q_t.graph();
    Var in = concat({q_t, c, g.scalar(a_t)});
    Var f = sigmoid(add(affine(p.W_f, in, p.b_f), affine(p.V_f, h_prev)));
    Var r = sigmoid(add(affine(p.W_r, in, p.b_r), affine(p.V_r, h_prev)));
    Var cand = tanh_act(add(affine(p.W_h, in, p.b_h), affine(p.V_h, mul(r, h_prev))));
    return add(mul(f, h_prev), mul(one_minus(f), cand));
}

struct AttentionResult {
    Var weights;  // invalid when history is empty
    Var context;
};

/// score(h_t, h_s) = v_α · tanh(W_α [h_t, h_s, h_t⊙h_s]); softmax over s < t.
inline AttentionResult attention(Var h_t, std::span<const Var> history, const BoundParams& p) {
    Graph& g = h_t.graph();
    if (history.empty()) return {Var{}, g.zeros(h_t.size())};
    std::vector<Var> scores;
    scores.reserve(history.size());
    for (const Var& h_s : history) {
        Var feat = concat({h_t, h_s, mul(h_t, h_s)});
        scores.push_back(affine(p.v_alpha, tanh_act(affine(p.W_alpha, feat))));
    }
    Var alpha = softmax(concat(scores));
    std::vector<Var> terms;
    terms.reserve(history.size());
    for (std::size_t s = 0; s < history.size(); ++s) terms.push_back(scale_by(element(alpha, s), history[s]));
    return {alpha, add_n(terms)};
}

inline Var hidden_confounder(Var h_t, Var o_t, const BoundParams& p) {
    return tanh_act(affine(p.W_z, concat({h_t, o_t})));
}

inline Var predict_treatment(Var q, Var c, const BoundParams& p) {
    return clip(sigmoid(affine(p.W_a, concat({q, c}), p.b_a)), kProbEps, 1.0 - kProbEps);
}

inline Var predict_outcome(Var q_m, double arm, const BoundParams& p) {
    Var hidden = concat({q_m, q_m.graph().scalar(arm)});
    const std::size_t last = p.W_y.size() - 1;
    for (std::size_t l = 0; l < last; ++l) hidden = tanh_act(affine(p.W_y[l], hidden, p.b_y[l]));
    return affine(p.W_y[last], hidden, p.b_y[last]);
}

struct ForwardTrace {
    std::vector<Var> u, q, h, o, z, a_hat, alpha;
    Var q_m;
    Var y1, y0;

    std::vector<double> a_hat_values() const {
        std::vector<double> out;
        out.reserve(a_hat.size());
        for (const Var& v : a_hat) out.push_back(v.value());
        return out;
    }
};

inline void check_record_shape(const PatientRecord& r, const ModelConfig& cfg) {
    if (r.T != cfg.T || r.d_x != cfg.d_x || r.X.size() != cfg.T * cfg.d_x || r.C.size() != cfg.d_c ||
        r.A.size() != cfg.T) {
        throw DimensionError("record '" + r.id + "' does not match model config (T=" + std::to_string(cfg.T) +
                             ", d_x=" + std::to_string(cfg.d_x) + ", d_c=" + std::to_string(cfg.d_c) + ")");
    }
}

inline ForwardTrace forward_sequence(Graph& g, const PatientRecord& r, const BoundParams& p, const ModelConfig& cfg) {
    check_record_shape(r, cfg);
    ForwardTrace tr;
    Var c = g.constant(r.C);
    Var z_prev = g.zeros(cfg.d_z);
    Var h_prev = g.zeros(cfg.d_h);
    for (std::size_t t = 0; t < cfg.T; ++t) {
        Var x_t = g.constant(std::span<const double>(r.x_row(t), cfg.d_x));
        Var u = embed(x_t, p);
        Var q = fuse_confounder(u, z_prev, p);
        Var h = gru_step(q, c, r.A[t], h_prev, p);
        auto att = attention(h, tr.h, p);
        Var z = hidden_confounder(h, att.context, p);
        tr.u.push_back(u);
        tr.q.push_back(q);
        tr.h.push_back(h);
        tr.o.push_back(att.context);
        tr.z.push_back(z);
        tr.alpha.push_back(att.weights);
        z_prev = z;
        h_prev = h;
    }
    tr.q_m = max_over_time(tr.q);
    for (std::size_t t = 0; t < cfg.T; ++t) {
        Var src = cfg.treatment_head_input == TreatmentHeadInput::per_step ? tr.q[t] : tr.q_m;
        tr.a_hat.push_back(predict_treatment(src, c, p));
    }
    tr.y1 = predict_outcome(tr.q_m, 1.0, p);
    tr.y0 = predict_outcome(tr.q_m, 0.0, p);
    return tr;
}

/// Time-averaged IPTW weight: mean_t [ prA/â_t + (1−prA)/(1−â_t) ].
inline double iptw_weights(std::span<const double> a_hat, double prA) {
    if (!(prA > 0.0 && prA < 1.0)) throw ValidationError("iptw_weights: Pr(A) must lie in (0,1)");
    if (a_hat.empty()) throw DimensionError("iptw_weights: empty propensity sequence");
    double total = 0.0;
    for (double a : a_hat) {
        const double p = std::clamp(a, kProbEps, 1.0 - kProbEps);
        total += prA / p + (1.0 - prA) / (1.0 - p);
    }
    return total / static_cast<double>(a_hat.size());
}

struct LossParts {
    Var total;
    double outcome = 0.0;
    double treatment = 0.0;
    double regularizer = 0.0;
};

inline LossParts total_loss_parts(Graph& g, std::span<const PatientRecord* const> batch, const ParameterSet& ps,
                                  const ModelConfig& cfg, double prA) {
    if (batch.empty()) throw ValidationError("total_loss: empty batch");
    BoundParams p(g, ps, cfg);
    std::vector<Var> y_hat, a_hat;
    std::vector<double> y, w, labels;
    y_hat.reserve(batch.size());
    for (const PatientRecord* r : batch) {
        ForwardTrace tr = forward_sequence(g, *r, p, cfg);
        y_hat.push_back(r->treated ? tr.y1 : tr.y0);
        y.push_back(r->y_factual);
        w.push_back(iptw_weights(tr.a_hat_values(), prA));
        a_hat.insert(a_hat.end(), tr.a_hat.begin(), tr.a_hat.end());
        labels.insert(labels.end(), r->A.begin(), r->A.end());
    }
    Var l_y = weighted_mse(concat(y_hat), y, w);
    Var l_a = bce_loss(concat(a_hat), labels);
    std::vector<Var> penalties;
    for (const auto& prm : ps.items()) {
        if (prm.regularized) penalties.push_back(sum_squares(g.parameter(ps, prm.name)));
    }
    Var reg = add_n(penalties);
    LossParts out;
    out.outcome = l_y.value();
    out.treatment = l_a.value();
    out.regularizer = reg.value();
    out.total = add_n(std::vector<Var>{l_y, scale(l_a, cfg.gamma), scale(reg, cfg.lambda)});
    return out;
}

/// L = L_y + γ·L_a + λ·Σ‖W‖² over a batch.
inline Var total_loss(Graph& g, std::span<const PatientRecord* const> batch, const ParameterSet& ps,
                      const ModelConfig& cfg, double prA) {
    return total_loss_parts(g, batch, ps, cfg, prA).total;
}

inline Var total_loss(Graph& g, std::span<const PatientRecord> batch, const ParameterSet& ps, const ModelConfig& cfg,
                      double prA) {
    std::vector<const PatientRecord*> ptrs;
    for (const auto& r : batch) ptrs.push_back(&r);
    return total_loss(g, std::span<const PatientRecord* const>(ptrs), ps, cfg, prA);
}

// ---------------------------------------------------------------------------
// Inference helpers (value-only)

struct Prediction {
    double y1 = 0.0;
    double y0 = 0.0;
    std::vector<double> a_hat;

    double ite() const { return y1 - y0; }
};

inline Prediction predict(const PatientRecord& r, const ParameterSet& ps, const ModelConfig& cfg) {
    Graph g;
    BoundParams p(g, ps, cfg);
    ForwardTrace tr = forward_sequence(g, r, p, cfg);
    return {tr.y1.value(), tr.y0.value(), tr.a_hat_values()};
}

inline double predict_ite(const PatientRecord& r, const ParameterSet& ps, const ModelConfig& cfg) {
    return predict(r, ps, cfg).ite();
}

/// Factual prediction ŷ_{arm = treated}.
inline double predict_factual(const PatientRecord& r, const ParameterSet& ps, const ModelConfig& cfg) {
    const Prediction pr = predict(r, ps, cfg);
    return r.treated ? pr.y1 : pr.y0;
}

}  // namespace dsw
