#pragma once

#include "trvae/tensor.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace trvae {

enum class OpKind {
    constant,
    parameter,
    matmul,
    add,
    sub,
    mul,
    scale,
    add_scalar,
    exp,
    log,
    square,
    leaky_relu,
    sum,
    mean,
    concat_cols,
    concat_rows,
    take_rows,
    pairwise_sq_dist,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);

/// Reduction axis. `rows` collapses the row axis (result 1 x cols), `cols` collapses the
/// column axis (result rows x 1), `all` yields a 1x1 scalar.
enum class Axis { all, rows, cols };

using NodeId = std::size_t;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
    Graph* graph = nullptr;
    NodeId id = 0;

    const Tensor& value() const;
};

/// Gradients keyed by parameter node id.
class GradientMap {
public:
    const Tensor& at(NodeId id) const;
    const Tensor& at(Var v) const { return at(v.id); }
    bool contains(NodeId id) const { return grads_.count(id) != 0; }
    std::size_t size() const { return grads_.size(); }

    void insert(NodeId id, Tensor grad) { grads_.insert_or_assign(id, std::move(grad)); }

private:
    std::map<NodeId, Tensor> grads_;
};

/// Append-only define-by-run computation graph.
///
/// Every op computes its output eagerly and records its inputs; inputs always refer to
/// earlier nodes so node order is a topological order. Build a fresh graph per minibatch.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<NodeId>& parameters() const { return parameters_; }

    /// Reverse-mode sweep from a scalar root. Returns d(root)/d(p) for every parameter node;
    /// parameters the root does not depend on get zero tensors.
    GradientMap backward(Var root) const;

    // Used by the op free functions below.
    struct Node {
        Node(OpKind k, std::vector<NodeId> in, Tensor v) : kind(k), inputs(std::move(in)), value(std::move(v)) {}

        OpKind kind;
        std::vector<NodeId> inputs;
        Tensor value;
        double scalar = 0.0;                 // slope / scale factor / added constant
        Axis axis = Axis::all;               // reductions
        std::vector<std::size_t> indices;    // take_rows
        bool requires_grad = false;          // set by push()
    };
    Var push(Node node);
    const Node& node(NodeId id) const { return nodes_.at(id); }

private:
    void accumulate_inputs(const Node& node, const Tensor& grad, std::vector<std::optional<Tensor>>& grads) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> parameters_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var leaky_relu(Var a, double slope);
Var sum(Var a, Axis axis = Axis::all);
Var mean(Var a, Axis axis = Axis::all);
Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var take_rows(Var a, std::vector<std::size_t> rows);
/// out(i, j) = ||a_i - b_j||^2 over rows of a and b.
Var pairwise_sq_dist(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double f, Var a) { return scale(a, f); }
inline Var operator-(Var a) { return scale(a, -1.0); }

/// Plain pairwise squared distances (same arithmetic as the graph op).
Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b);

/// Builds a scalar loss from parameter handles created in the given graph.
using GraphBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_parameter = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
};

/// Compares backward() against central differences at every coordinate of `point`.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check_report(const GraphBuilder& build, const std::vector<Tensor>& point, double h);

inline double grad_check(const GraphBuilder& build, const std::vector<Tensor>& point, double h) {
    return grad_check_report(build, point, h).max_rel_error;
}

namespace testing_hooks {
/// Scales the backward rule of `kind` by 1.5 (negative control for grad_check). Pass
/// std::nullopt to restore.
void corrupt_backward(std::optional<OpKind> kind);
}  // namespace testing_hooks

}  // namespace trvae
