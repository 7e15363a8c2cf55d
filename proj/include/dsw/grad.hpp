#pragma once

// Define-by-run reverse-mode differentiation over small dense arrays.
//
// A Graph owns every node created while evaluating one loss. Nodes are
// appended in evaluation order, so reverse index order is a valid reverse
// topological order and backward needs no explicit sort. Graphs are
// single-use: once backward has run the graph is consumed.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dsw/errors.hpp"

namespace dsw {

/// Probability clipping bound used by the BCE loss, the treatment head and IPTW.
inline constexpr double kProbEps = 1e-6;

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 1;

    std::size_t size() const { return rows * cols; }
    bool is_vector() const { return cols == 1; }
    bool operator==(const Shape&) const = default;

    std::string str() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

inline Shape vec_shape(std::size_t n) { return {n, 1}; }

// ---------------------------------------------------------------------------
// Parameters

struct Parameter {
    std::string name;
    Shape shape;
    std::vector<double> values;
    // Weight matrices enter the L2 penalty, biases do not.
    bool regularized = true;
};

/// Named learnable arrays in declaration order.
class ParameterSet {
public:
    Parameter& add(std::string name, Shape shape, bool regularized = true) {
        if (index_.contains(name)) {
            throw ValidationError("duplicate parameter name '" + name + "'");
        }
        index_.emplace(name, items_.size());
        items_.push_back({std::move(name), shape, std::vector<double>(shape.size(), 0.0), regularized});
        return items_.back();
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    Parameter& at(const std::string& name) { return items_.at(lookup(name)); }
    const Parameter& at(const std::string& name) const { return items_.at(lookup(name)); }

    std::size_t position(const std::string& name) const { return lookup(name); }

    std::vector<Parameter>& items() { return items_; }
    const std::vector<Parameter>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.values.size();
        return n;
    }

    bool operator==(const ParameterSet& other) const {
        if (items_.size() != other.items_.size()) return false;
        for (std::size_t i = 0; i < items_.size(); ++i) {
            const auto& a = items_[i];
            const auto& b = other.items_[i];
            if (a.name != b.name || a.shape != b.shape || a.regularized != b.regularized) return false;
            if (a.values.size() != b.values.size()) return false;
            for (std::size_t k = 0; k < a.values.size(); ++k) {
                // bitwise comparison, NaN-safe
                if (std::bit_cast<std::uint64_t>(a.values[k]) != std::bit_cast<std::uint64_t>(b.values[k])) {
                    return false;
                }
            }
        }
        return true;
    }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<Parameter> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

using GradientMap = std::map<std::string, std::vector<double>>;

// ---------------------------------------------------------------------------
// Graph

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, int id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    int id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

    const Shape& shape() const;
    std::size_t size() const { return shape().size(); }
    std::span<const double> values() const;
    std::span<const double> grad() const;
    double value(std::size_t i = 0) const { return values()[i]; }

private:
    Graph* graph_ = nullptr;
    int id_ = -1;
};

class Graph {
public:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        const char* op = "leaf";
        std::vector<int> parents;
        std::function<void(Graph&, int)> backward;
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Shape shape, std::vector<double> values) {
        if (values.size() != shape.size()) {
            throw DimensionError("constant: " + std::to_string(values.size()) + " values for shape " + shape.str());
        }
        return push(shape, std::move(values), "const", {}, nullptr);
    }
    Var constant(std::span<const double> values) {
        return constant(vec_shape(values.size()), std::vector<double>(values.begin(), values.end()));
    }
    Var scalar(double v) { return constant(vec_shape(1), {v}); }
    Var zeros(std::size_t n) { return constant(vec_shape(n), std::vector<double>(n, 0.0)); }

    /// Leaf bound to a named parameter. Binding the same name twice returns the same node.
    Var parameter(const ParameterSet& set, const std::string& name) {
        if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return {this, it->second};
        const Parameter& p = set.at(name);
        Var v = push(p.shape, p.values, "param", {}, nullptr);
        param_nodes_.emplace(name, v.id());
        return v;
    }

    Var push(Shape shape, std::vector<double> value, const char* op, std::vector<int> parents,
             std::function<void(Graph&, int)> backward) {
        if (consumed_) throw StateError("graph already consumed by backward");
        Node n;
        n.shape = shape;
        n.grad.assign(value.size(), 0.0);
        n.value = std::move(value);
        n.op = op;
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return {this, static_cast<int>(nodes_.size() - 1)};
    }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Reverse sweep from a scalar loss. Returns dL/dθ for every parameter bound in this graph.
    GradientMap backward(Var loss) {
        if (consumed_) throw StateError("backward called twice on the same graph");
        if (loss.size() != 1) {
            throw ContractError("backward requires a scalar loss, got shape " + loss.shape().str());
        }
        consumed_ = true;
        node(loss.id()).grad[0] = 1.0;
        for (int id = loss.id(); id >= 0; --id) {
            Node& n = node(id);
            if (n.backward) n.backward(*this, id);
        }
        GradientMap out;
        for (const auto& [name, id] : param_nodes_) out.emplace(name, node(id).grad);
        return out;
    }

private:
    std::vector<Node> nodes_;
    std::map<std::string, int> param_nodes_;
    bool consumed_ = false;
};

inline const Shape& Var::shape() const { return graph_->node(id_).shape; }
inline std::span<const double> Var::values() const { return graph_->node(id_).value; }
inline std::span<const double> Var::grad() const { return graph_->node(id_).grad; }

/// Dense gradient list aligned with the parameter set (absent names become zeros).
inline std::vector<std::vector<double>> aligned_gradients(const ParameterSet& set, const GradientMap& grads) {
    std::vector<std::vector<double>> out;
    out.reserve(set.size());
    for (const auto& p : set.items()) {
        auto it = grads.find(p.name);
        out.push_back(it != grads.end() ? it->second : std::vector<double>(p.values.size(), 0.0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Primitives

namespace detail {

inline void require_same_graph(const Var& a, const Var& b, const char* op) {
    if (&a.graph() != &b.graph()) throw ContractError(std::string(op) + ": operands belong to different graphs");
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
    require_same_graph(a, b, op);
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

/// W·x (+ b). W is m×n, x has n entries (any column layout), b has m entries.
inline Var affine(Var W, Var x, std::optional<Var> b = std::nullopt) {
    Graph& g = W.graph();
    detail::require_same_graph(W, x, "affine");
    const std::size_t m = W.shape().rows;
    const std::size_t n = W.shape().cols;
    if (x.size() != n) {
        throw DimensionError("affine: W is " + W.shape().str() + " but x has " + std::to_string(x.size()) + " entries");
    }
    if (b) {
        detail::require_same_graph(W, *b, "affine");
        if (b->size() != m) {
            throw DimensionError("affine: W is " + W.shape().str() + " but b has " + std::to_string(b->size()) +
                                 " entries");
        }
    }
    std::vector<double> out(m, 0.0);
    auto wv = W.values();
    auto xv = x.values();
    for (std::size_t i = 0; i < m; ++i) {
        double acc = b ? b->value(i) : 0.0;
        const double* row = wv.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * xv[j];
        out[i] = acc;
    }
    std::vector<int> parents{W.id(), x.id()};
    if (b) parents.push_back(b->id());
    const bool has_bias = b.has_value();
    return g.push(vec_shape(m), std::move(out), "affine", std::move(parents), [m, n, has_bias](Graph& gr, int self) {
        const auto& node = gr.node(self);
        const auto& go = node.grad;
        auto& Wn = gr.node(node.parents[0]);
        auto& xn = gr.node(node.parents[1]);
        for (std::size_t i = 0; i < m; ++i) {
            const double gi = go[i];
            if (gi == 0.0) continue;
            double* wrow_grad = Wn.grad.data() + i * n;
            const double* wrow = Wn.value.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                wrow_grad[j] += gi * xn.value[j];
                xn.grad[j] += gi * wrow[j];
            }
        }
        if (has_bias) {
            auto& bn = gr.node(node.parents[2]);
            for (std::size_t i = 0; i < m; ++i) bn.grad[i] += go[i];
        }
    });
}

namespace detail {

// Elementwise unary op with derivative expressed through (input, output).
template <typename F, typename D>
Var unary(Var x, const char* op, F f, D dfdx) {
    std::vector<double> out(x.size());
    auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return x.graph().push(x.shape(), std::move(out), op, {x.id()}, [dfdx](Graph& gr, int self) {
        const auto& node = gr.node(self);
        auto& xn = gr.node(node.parents[0]);
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            xn.grad[i] += node.grad[i] * dfdx(xn.value[i], node.value[i]);
        }
    });
}

}  // namespace detail

inline Var sigmoid(Var x) {
    return detail::unary(x, "sigmoid", detail::stable_sigmoid, [](double, double s) { return s * (1.0 - s); });
}

inline Var tanh_act(Var x) {
    return detail::unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double t) { return 1.0 - t * t; });
}

/// 1 − x
inline Var one_minus(Var x) {
    return detail::unary(x, "one_minus", [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

inline Var scale(Var x, double c) {
    return detail::unary(x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

/// Clamp to [lo, hi]; gradient is zero where the clamp is active.
inline Var clip(Var x, double lo, double hi) {
    return detail::unary(
        x, "clip", [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

inline Var softmax(Var x) {
    const std::size_t k = x.size();
    if (k == 0) throw DimensionError("softmax: empty input");
    auto xv = x.values();
    const double mx = *std::max_element(xv.begin(), xv.end());
    std::vector<double> out(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = std::exp(xv[i] - mx);
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return x.graph().push(x.shape(), std::move(out), "softmax", {x.id()}, [k](Graph& gr, int self) {
        const auto& node = gr.node(self);
        auto& xn = gr.node(node.parents[0]);
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += node.grad[j] * node.value[j];
        for (std::size_t i = 0; i < k; ++i) xn.grad[i] += node.value[i] * (node.grad[i] - dot);
    });
}

namespace detail {

template <typename F, typename DA, typename DB>
Var binary(Var a, Var b, const char* op, F f, DA da, DB db) {
    require_same_shape(a, b, op);
    std::vector<double> out(a.size());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return a.graph().push(a.shape(), std::move(out), op, {a.id(), b.id()}, [da, db](Graph& gr, int self) {
        const auto& node = gr.node(self);
        auto& an = gr.node(node.parents[0]);
        auto& bn = gr.node(node.parents[1]);
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            const double gi = node.grad[i];
            an.grad[i] += gi * da(an.value[i], bn.value[i]);
            bn.grad[i] += gi * db(an.value[i], bn.value[i]);
        }
    });
}

}  // namespace detail

inline Var add(Var a, Var b) {
    return detail::binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
    return detail::binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
    return detail::binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

/// Vector concatenation; backward splits the gradient by the original extents.
inline Var concat(std::span<const Var> xs) {
    if (xs.empty()) throw DimensionError("concat: no operands");
    Graph& g = xs.front().graph();
    std::vector<double> out;
    std::vector<int> parents;
    for (const Var& x : xs) {
        detail::require_same_graph(xs.front(), x, "concat");
        auto v = x.values();
        out.insert(out.end(), v.begin(), v.end());
        parents.push_back(x.id());
    }
    const std::size_t n = out.size();
    return g.push(vec_shape(n), std::move(out), "concat", std::move(parents), [](Graph& gr, int self) {
        const auto& node = gr.node(self);
        std::size_t offset = 0;
        for (int pid : node.parents) {
            auto& pn = gr.node(pid);
            for (std::size_t i = 0; i < pn.grad.size(); ++i) pn.grad[i] += node.grad[offset + i];
            offset += pn.grad.size();
        }
    });
}

inline Var concat(std::initializer_list<Var> xs) { return concat(std::span<const Var>(xs.begin(), xs.size())); }

/// Picks entry i as a scalar node.
inline Var element(Var x, std::size_t i) {
    if (i >= x.size()) throw DimensionError("element: index " + std::to_string(i) + " out of range " + x.shape().str());
    return x.graph().push(vec_shape(1), {x.value(i)}, "element", {x.id()}, [i](Graph& gr, int self) {
        const auto& node = gr.node(self);
        gr.node(node.parents[0]).grad[i] += node.grad[0];
    });
}

/// s·x with s a scalar node.
inline Var scale_by(Var s, Var x) {
    detail::require_same_graph(s, x, "scale_by");
    if (s.size() != 1) throw DimensionError("scale_by: scale must be scalar, got " + s.shape().str());
    const double sv = s.value();
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v *= sv;
    return x.graph().push(x.shape(), std::move(out), "scale_by", {s.id(), x.id()}, [](Graph& gr, int self) {
        const auto& node = gr.node(self);
        auto& sn = gr.node(node.parents[0]);
        auto& xn = gr.node(node.parents[1]);
        double acc = 0.0;
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
            acc += node.grad[i] * xn.value[i];
            xn.grad[i] += node.grad[i] * sn.value[0];
        }
        sn.grad[0] += acc;
    });
}

inline Var sum(Var x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    return x.graph().push(vec_shape(1), {total}, "sum", {x.id()}, [](Graph& gr, int self) {
        const double go = gr.node(self).grad[0];
        for (auto& gi : gr.node(gr.node(self).parents[0]).grad) gi += go;
    });
}

inline Var sum_squares(Var x) {
    double total = 0.0;
    for (double v : x.values()) total += v * v;
    return x.graph().push(vec_shape(1), {total}, "sum_squares", {x.id()}, [](Graph& gr, int self) {
        const double go = gr.node(self).grad[0];
        auto& xn = gr.node(gr.node(self).parents[0]);
        for (std::size_t i = 0; i < xn.grad.size(); ++i) xn.grad[i] += 2.0 * go * xn.value[i];
    });
}

inline Var dot(Var a, Var b) {
    detail::require_same_graph(a, b, "dot");
    if (a.size() != b.size()) {
        throw DimensionError("dot: length mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += a.value(i) * b.value(i);
    return a.graph().push(vec_shape(1), {total}, "dot", {a.id(), b.id()}, [](Graph& gr, int self) {
        const auto& node = gr.node(self);
        const double go = node.grad[0];
        auto& an = gr.node(node.parents[0]);
        auto& bn = gr.node(node.parents[1]);
        for (std::size_t i = 0; i < an.grad.size(); ++i) {
            an.grad[i] += go * bn.value[i];
            bn.grad[i] += go * an.value[i];
        }
    });
}

/// Sum of equally shaped nodes.
inline Var add_n(std::span<const Var> xs) {
    if (xs.empty()) throw DimensionError("add_n: no operands");
    std::vector<double> out(xs.front().size(), 0.0);
    std::vector<int> parents;
    for (const Var& x : xs) {
        detail::require_same_shape(xs.front(), x, "add_n");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.value(i);
        parents.push_back(x.id());
    }
    return xs.front().graph().push(xs.front().shape(), std::move(out), "add_n", std::move(parents),
                                   [](Graph& gr, int self) {
                                       const auto& node = gr.node(self);
                                       for (int pid : node.parents) {
                                           auto& pn = gr.node(pid);
                                           for (std::size_t i = 0; i < pn.grad.size(); ++i) pn.grad[i] += node.grad[i];
                                       }
                                   });
}

/// Per-coordinate maximum over a sequence. Ties go to the earliest step, and
/// backward routes each coordinate's gradient to its argmax step only.
inline Var max_over_time(std::span<const Var> xs) {
    if (xs.empty()) throw DimensionError("max_over_time: empty sequence");
    const std::size_t k = xs.front().size();
    std::vector<double> out(xs.front().values().begin(), xs.front().values().end());
    std::vector<std::size_t> argmax(k, 0);
    std::vector<int> parents{xs.front().id()};
    for (std::size_t t = 1; t < xs.size(); ++t) {
        detail::require_same_shape(xs.front(), xs[t], "max_over_time");
        for (std::size_t i = 0; i < k; ++i) {
            if (xs[t].value(i) > out[i]) {
                out[i] = xs[t].value(i);
                argmax[i] = t;
            }
        }
        parents.push_back(xs[t].id());
    }
    return xs.front().graph().push(vec_shape(k), std::move(out), "max_over_time", std::move(parents),
                                   [argmax = std::move(argmax)](Graph& gr, int self) {
                                       const auto& node = gr.node(self);
                                       for (std::size_t i = 0; i < argmax.size(); ++i) {
                                           gr.node(node.parents[argmax[i]]).grad[i] += node.grad[i];
                                       }
                                   });
}

/// Mean binary cross-entropy of predictions against {0,1} labels.
/// Predictions are clipped to [kProbEps, 1 − kProbEps] first.
inline Var bce_loss(Var a_hat, std::span<const double> labels) {
    const std::size_t n = a_hat.size();
    if (labels.size() != n) {
        throw DimensionError("bce_loss: " + std::to_string(n) + " predictions vs " + std::to_string(labels.size()) +
                             " labels");
    }
    if (n == 0) throw DimensionError("bce_loss: empty input");
    std::vector<double> y(labels.begin(), labels.end());
    for (double v : y) {
        if (v != 0.0 && v != 1.0) throw ValidationError("bce_loss: labels must be 0 or 1");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(a_hat.value(i), kProbEps, 1.0 - kProbEps);
        total -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
    }
    return a_hat.graph().push(vec_shape(1), {total / static_cast<double>(n)}, "bce_loss", {a_hat.id()},
                              [y = std::move(y)](Graph& gr, int self) {
                                  const double go = gr.node(self).grad[0] / static_cast<double>(y.size());
                                  auto& pn = gr.node(gr.node(self).parents[0]);
                                  for (std::size_t i = 0; i < y.size(); ++i) {
                                      const double p = pn.value[i];
                                      if (p < kProbEps || p > 1.0 - kProbEps) continue;
                                      pn.grad[i] += go * (-(y[i] / p) + (1.0 - y[i]) / (1.0 - p));
                                  }
                              });
}

/// (1/N)·Σ wᵢ(ŷᵢ − yᵢ)². Weights and targets are constants.
inline Var weighted_mse(Var y_hat, std::span<const double> y, std::span<const double> w) {
    const std::size_t n = y_hat.size();
    if (y.size() != n || w.size() != n) {
        throw DimensionError("weighted_mse: lengths differ (y_hat " + std::to_string(n) + ", y " +
                             std::to_string(y.size()) + ", w " + std::to_string(w.size()) + ")");
    }
    if (n == 0) throw DimensionError("weighted_mse: empty input");
    for (double wi : w) {
        if (!(wi >= 0.0)) throw ValidationError("weighted_mse: negative or NaN weight");
    }
    std::vector<double> diff(n);
    std::vector<double> wc(w.begin(), w.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        diff[i] = y_hat.value(i) - y[i];
        total += wc[i] * diff[i] * diff[i];
    }
    return y_hat.graph().push(vec_shape(1), {total / static_cast<double>(n)}, "weighted_mse", {y_hat.id()},
                              [diff = std::move(diff), wc = std::move(wc)](Graph& gr, int self) {
                                  const double go = gr.node(self).grad[0] / static_cast<double>(diff.size());
                                  auto& pn = gr.node(gr.node(self).parents[0]);
                                  for (std::size_t i = 0; i < diff.size(); ++i) {
                                      pn.grad[i] += go * 2.0 * wc[i] * diff[i];
                                  }
                              });
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

using LossBuilder = std::function<Var(Graph&, const ParameterSet&)>;

/// Compares backward() against central differences on every coordinate of
/// every parameter. Relative error uses max(1, |analytic|, |numeric|).
inline GradCheckReport finite_difference_check(const LossBuilder& build, const ParameterSet& params,
                                               double step = 1e-5) {
    auto evaluate = [&](const ParameterSet& ps) {
        Graph g;
        const double v = build(g, ps).value();
        if (!std::isfinite(v)) throw NumericError("finite_difference_check: loss is not finite");
        return v;
    };

    GradientMap analytic;
    {
        Graph g;
        Var loss = build(g, params);
        if (!std::isfinite(loss.value())) throw NumericError("finite_difference_check: loss is not finite");
        analytic = g.backward(loss);
    }
    const auto aligned = aligned_gradients(params, analytic);

    GradCheckReport report;
    ParameterSet probe = params;
    for (std::size_t p = 0; p < probe.size(); ++p) {
        auto& values = probe.items()[p].values;
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double saved = values[k];
            values[k] = saved + step;
            const double up = evaluate(probe);
            values[k] = saved - step;
            const double down = evaluate(probe);
            values[k] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = aligned[p][k];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            const double err = std::abs(a - numeric) / denom;
            if (report.worst_parameter.empty() || err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_parameter = probe.items()[p].name;
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace dsw
