#include "trvae/autodiff.hpp"

#include "trvae/error.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <utility>

namespace trvae {

namespace {

std::atomic<int> g_corrupted_op{-1};

constexpr std::array<std::pair<OpKind, std::string_view>, 18> kOpNames{{
    {OpKind::constant, "constant"},
    {OpKind::parameter, "parameter"},
    {OpKind::matmul, "matmul"},
    {OpKind::add, "add"},
    {OpKind::sub, "sub"},
    {OpKind::mul, "mul"},
    {OpKind::scale, "scale"},
    {OpKind::add_scalar, "add_scalar"},
    {OpKind::exp, "exp"},
    {OpKind::log, "log"},
    {OpKind::square, "square"},
    {OpKind::leaky_relu, "leaky_relu"},
    {OpKind::sum, "sum"},
    {OpKind::mean, "mean"},
    {OpKind::concat_cols, "concat_cols"},
    {OpKind::concat_rows, "concat_rows"},
    {OpKind::take_rows, "take_rows"},
    {OpKind::pairwise_sq_dist, "pairwise_sq_dist"},
}};

Graph& graph_of(Var a, Var b) {
    if (a.graph == nullptr || a.graph != b.graph) {
        throw ContractError("operands belong to different graphs");
    }
    return *a.graph;
}

Graph& graph_of(Var a) {
    if (a.graph == nullptr) {
        throw ContractError("operand is not attached to a graph");
    }
    return *a.graph;
}

// Shape of an elementwise binary result; the only broadcast allowed is a 1-row operand
// against a multi-row one with the same column count.
std::pair<std::size_t, std::size_t> broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError(std::string(op) + ": rank-2 operands required, got " + a.shape_string() +
                             " and " + b.shape_string());
    }
    if (a.same_shape(b)) {
        return {a.rows(), a.cols()};
    }
    if (a.cols() == b.cols() && (a.rows() == 1 || b.rows() == 1)) {
        return {std::max(a.rows(), b.rows()), a.cols()};
    }
    throw DimensionError(std::string(op) + ": shapes " + a.shape_string() + " and " + b.shape_string() +
                         " are not broadcastable");
}

inline double at_broadcast(const Tensor& t, std::size_t r, std::size_t c) {
    return t.rows() == 1 ? t(0, c) : t(r, c);
}

template <typename F>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* op, F f) {
    const auto [rows, cols] = broadcast_shape(a, b, op);
    Tensor out = Tensor::zeros(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out(r, c) = f(at_broadcast(a, r, c), at_broadcast(b, r, c));
        }
    }
    return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
    Tensor out = a;
    for (double& v : out.values()) {
        v = f(v);
    }
    return out;
}

// Sum a gradient down to `target`'s shape (undoing a row broadcast).
Tensor reduce_to(const Tensor& grad, const Tensor& target) {
    if (grad.same_shape(target)) {
        return grad;
    }
    Tensor out = Tensor::zeros(1, grad.cols());
    for (std::size_t r = 0; r < grad.rows(); ++r) {
        for (std::size_t c = 0; c < grad.cols(); ++c) {
            out(0, c) += grad(r, c);
        }
    }
    return out;
}

void add_into(std::optional<Tensor>& slot, Tensor contribution) {
    if (!slot) {
        slot = std::move(contribution);
        return;
    }
    auto dst = slot->values();
    auto src = contribution.values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

Tensor reduce(const Tensor& a, Axis axis) {
    switch (axis) {
        case Axis::all: {
            double acc = 0.0;
            for (double v : a.values()) {
                acc += v;
            }
            return Tensor::scalar(acc);
        }
        case Axis::rows: {
            Tensor out = Tensor::zeros(1, a.cols());
            for (std::size_t r = 0; r < a.rows(); ++r) {
                for (std::size_t c = 0; c < a.cols(); ++c) {
                    out(0, c) += a(r, c);
                }
            }
            return out;
        }
        case Axis::cols: {
            Tensor out = Tensor::zeros(a.rows(), 1);
            for (std::size_t r = 0; r < a.rows(); ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < a.cols(); ++c) {
                    acc += a(r, c);
                }
                out(r, 0) = acc;
            }
            return out;
        }
    }
    return {};
}

std::size_t reduced_count(const Tensor& a, Axis axis) {
    switch (axis) {
        case Axis::all:
            return a.size();
        case Axis::rows:
            return a.rows();
        case Axis::cols:
            return a.cols();
    }
    return 1;
}

// Spread a reduced gradient back over the input shape, times `factor`.
Tensor expand(const Tensor& grad, const Tensor& input, Axis axis, double factor) {
    Tensor out = Tensor::zeros(input.rows(), input.cols());
    for (std::size_t r = 0; r < input.rows(); ++r) {
        for (std::size_t c = 0; c < input.cols(); ++c) {
            double g = 0.0;
            switch (axis) {
                case Axis::all:
                    g = grad(0, 0);
                    break;
                case Axis::rows:
                    g = grad(0, c);
                    break;
                case Axis::cols:
                    g = grad(r, 0);
                    break;
            }
            out(r, c) = g * factor;
        }
    }
    return out;
}

}  // namespace

std::string_view op_name(OpKind kind) {
    for (const auto& [k, name] : kOpNames) {
        if (k == kind) {
            return name;
        }
    }
    return "unknown";
}

std::optional<OpKind> op_from_name(std::string_view name) {
    for (const auto& [k, n] : kOpNames) {
        if (n == name) {
            return k;
        }
    }
    return std::nullopt;
}

const Tensor& Var::value() const {
    if (graph == nullptr) {
        throw ContractError("Var is not attached to a graph");
    }
    return graph->value(id);
}

const Tensor& GradientMap::at(NodeId id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
        throw ContractError("no gradient recorded for node " + std::to_string(id));
    }
    return it->second;
}

Var Graph::push(Node node) {
    for (NodeId in : node.inputs) {
        if (in >= nodes_.size()) {
            throw ContractError("node input refers to a node that does not exist yet");
        }
        node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    if (node.kind == OpKind::parameter) {
        node.requires_grad = true;
    }
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) { return push(Node{OpKind::constant, {}, std::move(value)}); }

Var Graph::parameter(Tensor value) {
    Var v = push(Node{OpKind::parameter, {}, std::move(value)});
    parameters_.push_back(v.id);
    return v;
}

GradientMap Graph::backward(Var root) const {
    if (root.graph != this) {
        throw ContractError("backward: root belongs to a different graph");
    }
    const Tensor& root_value = value(root.id);
    if (root_value.size() != 1) {
        throw ContractError("backward: root must be scalar, got shape " + root_value.shape_string());
    }
    std::vector<std::optional<Tensor>> grads(root.id + 1);
    grads[root.id] = Tensor(root_value.shape(), {1.0});
    for (std::size_t i = root.id + 1; i-- > 0;) {
        if (!grads[i]) {
            continue;
        }
        const Node& n = nodes_[i];
        if (!n.requires_grad || n.kind == OpKind::parameter) {
            continue;
        }
        accumulate_inputs(n, *grads[i], grads);
    }
    GradientMap out;
    for (NodeId p : parameters_) {
        if (p < grads.size() && grads[p]) {
            out.insert(p, std::move(*grads[p]));
        } else {
            const Tensor& v = nodes_[p].value;
            out.insert(p, Tensor(v.shape(), std::vector<double>(v.size(), 0.0)));
        }
    }
    return out;
}

void Graph::accumulate_inputs(const Node& n, const Tensor& g_in, std::vector<std::optional<Tensor>>& grads) const {
    Tensor g = g_in;
    if (static_cast<int>(n.kind) == g_corrupted_op.load()) {
        for (double& v : g.values()) {
            v *= 1.5;
        }
    }
    const auto input = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
    const auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
    const auto give = [&](std::size_t k, Tensor t) {
        if (needs(k)) {
            add_into(grads[n.inputs[k]], std::move(t));
        }
    };

    switch (n.kind) {
        case OpKind::constant:
        case OpKind::parameter:
            break;
        case OpKind::matmul:
            if (needs(0)) {
                give(0, matmul_nt(g, input(1)));
            }
            if (needs(1)) {
                give(1, matmul_tn(input(0), g));
            }
            break;
        case OpKind::add:
            give(0, reduce_to(g, input(0)));
            give(1, reduce_to(g, input(1)));
            break;
        case OpKind::sub:
            give(0, reduce_to(g, input(0)));
            give(1, reduce_to(map(g, [](double v) { return -v; }), input(1)));
            break;
        case OpKind::mul: {
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            Tensor ga = Tensor::zeros(g.rows(), g.cols());
            Tensor gb = Tensor::zeros(g.rows(), g.cols());
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    ga(r, c) = g(r, c) * at_broadcast(b, r, c);
                    gb(r, c) = g(r, c) * at_broadcast(a, r, c);
                }
            }
            give(0, reduce_to(ga, a));
            give(1, reduce_to(gb, b));
            break;
        }
        case OpKind::scale: {
            const double f = n.scalar;
            give(0, map(g, [f](double v) { return v * f; }));
            break;
        }
        case OpKind::add_scalar:
            give(0, g);
            break;
        case OpKind::exp: {
            Tensor out = g;
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] *= n.value[i];
            }
            give(0, std::move(out));
            break;
        }
        case OpKind::log: {
            Tensor out = g;
            const Tensor& x = input(0);
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] /= x[i];
            }
            give(0, std::move(out));
            break;
        }
        case OpKind::square: {
            Tensor out = g;
            const Tensor& x = input(0);
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] *= 2.0 * x[i];
            }
            give(0, std::move(out));
            break;
        }
        case OpKind::leaky_relu: {
            // The kink at exactly 0 takes the positive-branch derivative.
            Tensor out = g;
            const Tensor& x = input(0);
            for (std::size_t i = 0; i < out.size(); ++i) {
                if (x[i] < 0.0) {
                    out[i] *= n.scalar;
                }
            }
            give(0, std::move(out));
            break;
        }
        case OpKind::sum:
            give(0, expand(g, input(0), n.axis, 1.0));
            break;
        case OpKind::mean:
            give(0, expand(g, input(0), n.axis, 1.0 / static_cast<double>(reduced_count(input(0), n.axis))));
            break;
        case OpKind::concat_cols: {
            const std::size_t ca = input(0).cols();
            const std::size_t cb = input(1).cols();
            Tensor ga = Tensor::zeros(g.rows(), ca);
            Tensor gb = Tensor::zeros(g.rows(), cb);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < ca; ++c) {
                    ga(r, c) = g(r, c);
                }
                for (std::size_t c = 0; c < cb; ++c) {
                    gb(r, c) = g(r, ca + c);
                }
            }
            give(0, std::move(ga));
            give(1, std::move(gb));
            break;
        }
        case OpKind::concat_rows: {
            const std::size_t ra = input(0).rows();
            const std::size_t cols = g.cols();
            const auto all = g.values();
            give(0, Tensor::matrix(ra, cols, std::vector<double>(all.begin(), all.begin() + ra * cols)));
            give(1, Tensor::matrix(g.rows() - ra, cols, std::vector<double>(all.begin() + ra * cols, all.end())));
            break;
        }
        case OpKind::take_rows: {
            const Tensor& x = input(0);
            Tensor out = Tensor::zeros(x.rows(), x.cols());
            for (std::size_t k = 0; k < n.indices.size(); ++k) {
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    out(n.indices[k], c) += g(k, c);
                }
            }
            give(0, std::move(out));
            break;
        }
        case OpKind::pairwise_sq_dist: {
            // d/da_i = 2 sum_j g_ij (a_i - b_j), d/db_j = -2 sum_i g_ij (a_i - b_j)
            const Tensor& a = input(0);
            const Tensor& b = input(1);
            const std::size_t p = a.cols();
            Tensor ga = Tensor::zeros(a.rows(), p);
            Tensor gb = Tensor::zeros(b.rows(), p);
            for (std::size_t i = 0; i < a.rows(); ++i) {
                for (std::size_t j = 0; j < b.rows(); ++j) {
                    const double w = 2.0 * g(i, j);
                    if (w == 0.0) {
                        continue;
                    }
                    for (std::size_t k = 0; k < p; ++k) {
                        const double d = w * (a(i, k) - b(j, k));
                        ga(i, k) += d;
                        gb(j, k) -= d;
                    }
                }
            }
            give(0, std::move(ga));
            give(1, std::move(gb));
            break;
        }
    }
}

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    return g.push({OpKind::matmul, {a.id, b.id}, matmul_plain(a.value(), b.value())});
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a, b);
    return g.push({OpKind::add, {a.id, b.id}, elementwise(a.value(), b.value(), "add", std::plus<>())});
}

Var sub(Var a, Var b) {
    Graph& g = graph_of(a, b);
    return g.push({OpKind::sub, {a.id, b.id}, elementwise(a.value(), b.value(), "sub", std::minus<>())});
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    return g.push({OpKind::mul, {a.id, b.id}, elementwise(a.value(), b.value(), "mul", std::multiplies<>())});
}

Var scale(Var a, double factor) {
    Graph& g = graph_of(a);
    Graph::Node n{OpKind::scale, {a.id}, map(a.value(), [factor](double v) { return v * factor; })};
    n.scalar = factor;
    return g.push(std::move(n));
}

Var add_scalar(Var a, double c) {
    Graph& g = graph_of(a);
    Graph::Node n{OpKind::add_scalar, {a.id}, map(a.value(), [c](double v) { return v + c; })};
    n.scalar = c;
    return g.push(std::move(n));
}

Var exp(Var a) {
    Graph& g = graph_of(a);
    return g.push({OpKind::exp, {a.id}, map(a.value(), [](double v) { return std::exp(v); })});
}

Var log(Var a) {
    Graph& g = graph_of(a);
    return g.push({OpKind::log, {a.id}, map(a.value(), [](double v) { return std::log(v); })});
}

Var square(Var a) {
    Graph& g = graph_of(a);
    return g.push({OpKind::square, {a.id}, map(a.value(), [](double v) { return v * v; })});
}

Var leaky_relu(Var a, double slope) {
    if (!(slope >= 0.0 && slope < 1.0)) {
        throw ContractError("leaky_relu: slope must lie in [0, 1), got " + std::to_string(slope));
    }
    Graph& g = graph_of(a);
    Graph::Node n{OpKind::leaky_relu, {a.id}, map(a.value(), [slope](double v) { return v < 0.0 ? slope * v : v; })};
    n.scalar = slope;
    return g.push(std::move(n));
}

Var sum(Var a, Axis axis) {
    Graph& g = graph_of(a);
    Graph::Node n{OpKind::sum, {a.id}, reduce(a.value(), axis)};
    n.axis = axis;
    return g.push(std::move(n));
}

Var mean(Var a, Axis axis) {
    Graph& g = graph_of(a);
    const double inv = 1.0 / static_cast<double>(reduced_count(a.value(), axis));
    Graph::Node n{OpKind::mean, {a.id}, map(reduce(a.value(), axis), [inv](double v) { return v * inv; })};
    n.axis = axis;
    return g.push(std::move(n));
}

Var concat_cols(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rows() != y.rows()) {
        throw DimensionError("concat_cols: row counts differ for " + x.shape_string() + " and " + y.shape_string());
    }
    Tensor out = Tensor::zeros(x.rows(), x.cols() + y.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(r, c) = x(r, c);
        }
        for (std::size_t c = 0; c < y.cols(); ++c) {
            out(r, x.cols() + c) = y(r, c);
        }
    }
    return g.push({OpKind::concat_cols, {a.id, b.id}, std::move(out)});
}

Var concat_rows(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.cols() != y.cols()) {
        throw DimensionError("concat_rows: column counts differ for " + x.shape_string() + " and " + y.shape_string());
    }
    std::vector<double> values(x.values().begin(), x.values().end());
    values.insert(values.end(), y.values().begin(), y.values().end());
    return g.push({OpKind::concat_rows, {a.id, b.id}, Tensor::matrix(x.rows() + y.rows(), x.cols(), std::move(values))});
}

Var take_rows(Var a, std::vector<std::size_t> rows) {
    Graph& g = graph_of(a);
    Graph::Node n{OpKind::take_rows, {a.id}, take_rows(a.value(), rows)};
    n.indices = std::move(rows);
    return g.push(std::move(n));
}

Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw DimensionError("pairwise_sq_dist: feature dims differ for " + a.shape_string() + " and " +
                             b.shape_string());
    }
    const std::size_t p = a.cols();
    Tensor out = Tensor::zeros(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.values().data() + i * p;
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = b.values().data() + j * p;
            double acc = 0.0;
            for (std::size_t k = 0; k < p; ++k) {
                const double d = ai[k] - bj[k];
                acc += d * d;
            }
            out(i, j) = acc;
        }
    }
    return out;
}

Var pairwise_sq_dist(Var a, Var b) {
    Graph& g = graph_of(a, b);
    return g.push({OpKind::pairwise_sq_dist, {a.id, b.id}, pairwise_sq_dist(a.value(), b.value())});
}

GradCheckReport grad_check_report(const GraphBuilder& build, const std::vector<Tensor>& point, double h) {
    if (!(h > 0.0)) {
        throw ContractError("grad_check: step h must be positive");
    }
    const auto evaluate = [&](const std::vector<Tensor>& params) {
        Graph g;
        std::vector<Var> handles;
        handles.reserve(params.size());
        for (const Tensor& p : params) {
            handles.push_back(g.parameter(p));
        }
        const Var root = build(g, handles);
        const double v = root.value().item();
        if (!std::isfinite(v)) {
            throw NumericError("grad_check: non-finite loss at a perturbed point");
        }
        return v;
    };

    Graph g;
    std::vector<Var> handles;
    for (const Tensor& p : point) {
        handles.push_back(g.parameter(p));
    }
    const Var root = build(g, handles);
    const GradientMap grads = g.backward(root);

    GradCheckReport report;
    std::vector<Tensor> work = point;
    for (std::size_t pi = 0; pi < point.size(); ++pi) {
        const Tensor& analytic = grads.at(handles[pi]);
        for (std::size_t k = 0; k < point[pi].size(); ++k) {
            const double original = point[pi][k];
            work[pi][k] = original + h;
            const double up = evaluate(work);
            work[pi][k] = original - h;
            const double down = evaluate(work);
            work[pi][k] = original;

            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            ++report.coordinates;
            if (err > report.max_rel_error || report.coordinates == 1) {
                report.max_rel_error = err;
                report.worst_parameter = pi;
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

namespace testing_hooks {
void corrupt_backward(std::optional<OpKind> kind) {
    g_corrupted_op.store(kind ? static_cast<int>(*kind) : -1);
}
}  // namespace testing_hooks

}  // namespace trvae
