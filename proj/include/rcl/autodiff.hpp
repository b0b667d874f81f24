#pragma once

#include "rcl/tensor.hpp"

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace rcl {

enum class OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Scale,
    Mean,
    Sum,
    Abs,
    Square,
    Relu,
    Exp,
    Log,
    Conv2d,
    Upsample2x,
    AvgPool2x,
    Concat,
    Slice,
    Sort,
    LogSumExp,
    Gather,
    Reshape,
    GlobalAvgPool,
    Count_
};

const char* op_name(OpKind kind);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;

    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool valid() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Define-by-run reverse-mode tape. Every op evaluates its forward value when
// it is recorded, so creation order is a topological order. A graph is not
// thread-safe; build independent graphs per thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Named differentiable input. Names are unique within a graph.
    Var leaf(const std::string& name, Tensor value, bool requires_grad = true);
    Var constant(Tensor value);

    const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
    // Gradient of the last backward() root with respect to v; zeros if v does
    // not influence the root.
    const Tensor& grad(Var v) const;
    OpKind kind(Var v) const { return nodes_.at(v.id()).kind; }
    bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

    void backward(Var root);

    // Gradients for all named leaves that require grad, keyed by name.
    std::map<std::string, Tensor> gradients() const;
    std::map<std::string, Var> leaves() const;

    std::size_t size() const { return nodes_.size(); }
    std::size_t count(OpKind kind) const { return counts_[static_cast<std::size_t>(kind)]; }

    struct Node {
        OpKind kind = OpKind::Leaf;
        std::vector<std::size_t> inputs;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::string name;
        double scalar = 0.0;
        std::size_t axis = 0, begin = 0, end = 0;
        std::vector<std::size_t> index;
    };

    // Records a node whose value has already been computed. Used by the op
    // functions below; validates finiteness of the result.
    Var record(Node node);
    const Node& node(Var v) const { return nodes_.at(v.id()); }

private:
    void accumulate(std::size_t id);

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> names_;
    std::array<std::size_t, static_cast<std::size_t>(OpKind::Count_)> counts_{};
    bool has_grads_ = false;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var mean(Var a);
Var sum(Var a);
Var abs(Var a);
Var square(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
// x: [N,Ci,H,W], w: [Co,Ci,k,k] (k odd), bias: [Co] or an invalid Var for none.
Var conv2d(Var x, Var w, Var bias = {});
Var upsample2x(Var x);
Var avgpool2x(Var x);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
// Flattens and sorts ascending; ties keep first-occurrence order.
Var sort(Var a);
Var logsumexp(Var a);
// Flat gather: out[i] = a.flat[indices[i]]; adjoint scatter-adds.
Var gather(Var a, std::vector<std::size_t> indices);
Var reshape(Var a, Shape shape);
// [N,C,H,W] -> [N,C] spatial mean.
Var global_avg_pool(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

} // namespace rcl
