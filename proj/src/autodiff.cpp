#include "rcl/autodiff.hpp"

#include "rcl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rcl {

const char* op_name(OpKind kind)
{
    switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::Abs: return "abs";
    case OpKind::Square: return "square";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Upsample2x: return "upsample2x";
    case OpKind::AvgPool2x: return "avgpool2x";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Sort: return "sort";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::Gather: return "gather";
    case OpKind::Reshape: return "reshape";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Count_: break;
    }
    return "?";
}

const Tensor& Var::value() const { return graph_->value(*this); }

namespace {

std::string node_label(const Graph& g, OpKind kind)
{
    return std::string(op_name(kind)) + " (node " + std::to_string(g.size()) + ")";
}

[[noreturn]] void shape_fail(const Graph& g, OpKind kind, const std::string& what)
{
    throw ShapeError(node_label(g, kind) + ": " + what);
}

Graph& same_graph(Var a, Var b)
{
    if (&a.graph() != &b.graph()) throw std::logic_error("vars belong to different graphs");
    return a.graph();
}

Graph::Node make_node(OpKind kind, std::initializer_list<Var> inputs, Tensor value)
{
    Graph::Node n;
    n.kind = kind;
    for (const Var& v : inputs) {
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || v.graph().requires_grad(v);
    }
    n.value = std::move(value);
    return n;
}

template <class F>
Var unary(Var a, OpKind kind, F f)
{
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return a.graph().record(make_node(kind, {a}, std::move(out)));
}

template <class F>
Var binary(Var a, Var b, OpKind kind, F f)
{
    Graph& g = same_graph(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape() != y.shape())
        shape_fail(g, kind, to_string(x.shape()) + " vs " + to_string(y.shape()));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
    return g.record(make_node(kind, {a, b}, std::move(out)));
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis)
{
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

void require_4d(const Graph& g, OpKind kind, const Tensor& t)
{
    if (t.rank() != 4) shape_fail(g, kind, "expected [N,C,H,W], got " + to_string(t.shape()));
}

} // namespace

Var Graph::leaf(const std::string& name, Tensor value, bool requires_grad)
{
    if (name.empty()) throw std::invalid_argument("leaf name must be non-empty");
    if (names_.count(name)) throw std::invalid_argument("duplicate leaf name '" + name + "'");
    if (!value.all_finite()) throw NonFiniteError("leaf '" + name + "' has non-finite values");
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.name = name;
    Var v = record(std::move(n));
    names_[name] = v.id();
    return v;
}

Var Graph::constant(Tensor value)
{
    if (!value.all_finite())
        throw NonFiniteError("constant (node " + std::to_string(size()) + ") has non-finite values");
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    return record(std::move(n));
}

Var Graph::record(Node node)
{
    if (node.kind != OpKind::Leaf && node.kind != OpKind::Constant && !node.value.all_finite())
        throw NonFiniteError(node_label(*this, node.kind) + ": non-finite forward value");
    node.grad = Tensor(node.value.shape());
    ++counts_[static_cast<std::size_t>(node.kind)];
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::grad(Var v) const { return nodes_.at(v.id()).grad; }

std::map<std::string, Var> Graph::leaves() const
{
    std::map<std::string, Var> out;
    for (const auto& [name, id] : names_) out.emplace(name, Var(const_cast<Graph*>(this), id));
    return out;
}

std::map<std::string, Tensor> Graph::gradients() const
{
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : names_)
        if (nodes_[id].requires_grad) out.emplace(name, nodes_[id].grad);
    return out;
}

void Graph::backward(Var root)
{
    if (&root.graph() != this) throw std::logic_error("backward root from another graph");
    const Node& r = nodes_.at(root.id());
    if (r.value.size() != 1)
        throw ShapeError("backward: root is not a scalar, shape " + to_string(r.value.shape()));
    if (has_grads_)
        for (Node& n : nodes_) n.grad.fill(0.0);
    has_grads_ = true;
    nodes_[root.id()].grad[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;)
        if (nodes_[id].requires_grad) accumulate(id);
}

void Graph::accumulate(std::size_t id)
{
    Node& n = nodes_[id];
    const Tensor& g = n.grad;
    auto in = [&](std::size_t k) -> Node& { return nodes_[n.inputs[k]]; };
    auto wants = [&](std::size_t k) { return in(k).requires_grad; };

    switch (n.kind) {
    case OpKind::Leaf:
    case OpKind::Constant:
        break;
    case OpKind::Add:
        for (std::size_t k = 0; k < 2; ++k)
            if (wants(k))
                for (std::size_t i = 0; i < g.size(); ++i) in(k).grad[i] += g[i];
        break;
    case OpKind::Sub:
        if (wants(0))
            for (std::size_t i = 0; i < g.size(); ++i) in(0).grad[i] += g[i];
        if (wants(1))
            for (std::size_t i = 0; i < g.size(); ++i) in(1).grad[i] -= g[i];
        break;
    case OpKind::Mul:
        if (wants(0))
            for (std::size_t i = 0; i < g.size(); ++i) in(0).grad[i] += g[i] * in(1).value[i];
        if (wants(1))
            for (std::size_t i = 0; i < g.size(); ++i) in(1).grad[i] += g[i] * in(0).value[i];
        break;
    case OpKind::Scale:
        for (std::size_t i = 0; i < g.size(); ++i) in(0).grad[i] += n.scalar * g[i];
        break;
    case OpKind::Mean: {
        Tensor& gx = in(0).grad;
        const double d = g[0] / static_cast<double>(gx.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += d;
        break;
    }
    case OpKind::Sum: {
        Tensor& gx = in(0).grad;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
        break;
    }
    case OpKind::Abs: {
        const Tensor& x = in(0).value;
        Tensor& gx = in(0).grad;
        for (std::size_t i = 0; i < g.size(); ++i)
            gx[i] += x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
        break;
    }
    case OpKind::Square: {
        const Tensor& x = in(0).value;
        Tensor& gx = in(0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * x[i] * g[i];
        break;
    }
    case OpKind::Relu: {
        const Tensor& x = in(0).value;
        Tensor& gx = in(0).grad;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) gx[i] += g[i];
        break;
    }
    case OpKind::Exp: {
        Tensor& gx = in(0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.value[i];
        break;
    }
    case OpKind::Log: {
        const Tensor& x = in(0).value;
        Tensor& gx = in(0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
        break;
    }
    case OpKind::Conv2d: {
        Tensor* gb = n.inputs.size() > 2 && wants(2) ? &in(2).grad : nullptr;
        kernels::conv2d_backward(in(0).value, in(1).value, g, wants(0) ? &in(0).grad : nullptr,
                                 wants(1) ? &in(1).grad : nullptr, gb);
        break;
    }
    case OpKind::Upsample2x:
        kernels::upsample2x_backward(g, in(0).grad);
        break;
    case OpKind::AvgPool2x:
        kernels::avgpool2x_backward(g, in(0).grad);
        break;
    case OpKind::Concat: {
        const AxisSplit out = split_axis(n.value.shape(), n.axis);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            Node& part = in(k);
            const std::size_t ext = part.value.dim(n.axis);
            if (part.requires_grad)
                for (std::size_t o = 0; o < out.outer; ++o)
                    for (std::size_t e = 0; e < ext * out.inner; ++e)
                        part.grad[o * ext * out.inner + e] +=
                            g[(o * out.extent + offset) * out.inner + e];
            offset += ext;
        }
        break;
    }
    case OpKind::Slice: {
        const AxisSplit src = split_axis(in(0).value.shape(), n.axis);
        const std::size_t ext = n.end - n.begin;
        Tensor& gx = in(0).grad;
        for (std::size_t o = 0; o < src.outer; ++o)
            for (std::size_t e = 0; e < ext * src.inner; ++e)
                gx[(o * src.extent + n.begin) * src.inner + e] += g[o * ext * src.inner + e];
        break;
    }
    case OpKind::Sort:
    case OpKind::Gather: {
        Tensor& gx = in(0).grad;
        for (std::size_t i = 0; i < n.index.size(); ++i) gx[n.index[i]] += g[i];
        break;
    }
    case OpKind::LogSumExp: {
        const Tensor& x = in(0).value;
        Tensor& gx = in(0).grad;
        const double lse = n.value[0];
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[0] * std::exp(x[i] - lse);
        break;
    }
    case OpKind::Reshape: {
        Tensor& gx = in(0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        break;
    }
    case OpKind::GlobalAvgPool: {
        Tensor& gx = in(0).grad;
        const std::size_t hw = gx.dim(2) * gx.dim(3);
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t p = 0; p < g.size(); ++p)
            for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g[p] * inv;
        break;
    }
    case OpKind::Count_:
        break;
    }
}

Var add(Var a, Var b) { return binary(a, b, OpKind::Add, [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return binary(a, b, OpKind::Sub, [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(a, b, OpKind::Mul, [](double x, double y) { return x * y; }); }

Var scale(Var a, double s)
{
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
    Graph::Node n = make_node(OpKind::Scale, {a}, std::move(out));
    n.scalar = s;
    return a.graph().record(std::move(n));
}

Var sum(Var a)
{
    const Tensor& x = a.value();
    const double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    return a.graph().record(make_node(OpKind::Sum, {a}, Tensor::scalar(s)));
}

Var mean(Var a)
{
    const Tensor& x = a.value();
    const double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    return a.graph().record(make_node(OpKind::Mean, {a}, Tensor::scalar(s / static_cast<double>(x.size()))));
}

Var abs(Var a) { return unary(a, OpKind::Abs, [](double x) { return std::abs(x); }); }
Var square(Var a) { return unary(a, OpKind::Square, [](double x) { return x * x; }); }
Var relu(Var a) { return unary(a, OpKind::Relu, [](double x) { return x > 0.0 ? x : 0.0; }); }
Var exp(Var a) { return unary(a, OpKind::Exp, [](double x) { return std::exp(x); }); }
Var log(Var a) { return unary(a, OpKind::Log, [](double x) { return std::log(x); }); }

Var conv2d(Var x, Var w, Var bias)
{
    Graph& g = same_graph(x, w);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3) ||
        wv.dim(2) % 2 == 0)
        shape_fail(g, OpKind::Conv2d,
                   "input " + to_string(xv.shape()) + " vs weight " + to_string(wv.shape()));
    if (bias.valid()) {
        same_graph(x, bias);
        if (bias.value().shape() != Shape{wv.dim(0)})
            shape_fail(g, OpKind::Conv2d, "bias " + to_string(bias.value().shape()) +
                                              " does not match " + std::to_string(wv.dim(0)) +
                                              " output channels");
    }
    Tensor out(Shape{xv.dim(0), wv.dim(0), xv.dim(2), xv.dim(3)});
    kernels::conv2d_forward(xv, wv, bias.valid() ? &bias.value() : nullptr, out);
    if (bias.valid()) return g.record(make_node(OpKind::Conv2d, {x, w, bias}, std::move(out)));
    return g.record(make_node(OpKind::Conv2d, {x, w}, std::move(out)));
}

Var upsample2x(Var x)
{
    const Tensor& xv = x.value();
    require_4d(x.graph(), OpKind::Upsample2x, xv);
    Tensor out(Shape{xv.dim(0), xv.dim(1), 2 * xv.dim(2), 2 * xv.dim(3)});
    kernels::upsample2x_forward(xv, out);
    return x.graph().record(make_node(OpKind::Upsample2x, {x}, std::move(out)));
}

Var avgpool2x(Var x)
{
    const Tensor& xv = x.value();
    require_4d(x.graph(), OpKind::AvgPool2x, xv);
    if (xv.dim(2) % 2 || xv.dim(3) % 2)
        shape_fail(x.graph(), OpKind::AvgPool2x, "odd spatial size " + to_string(xv.shape()));
    Tensor out(Shape{xv.dim(0), xv.dim(1), xv.dim(2) / 2, xv.dim(3) / 2});
    kernels::avgpool2x_forward(xv, out);
    return x.graph().record(make_node(OpKind::AvgPool2x, {x}, std::move(out)));
}

Var concat(const std::vector<Var>& parts, std::size_t axis)
{
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    Graph& g = parts.front().graph();
    Shape shape = parts.front().shape();
    if (axis >= shape.size()) shape_fail(g, OpKind::Concat, "axis out of range");
    std::size_t total = 0;
    for (const Var& p : parts) {
        same_graph(parts.front(), p);
        const Shape& s = p.shape();
        bool ok = s.size() == shape.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == shape[i];
        if (!ok) shape_fail(g, OpKind::Concat, to_string(s) + " vs " + to_string(shape));
        total += s[axis];
    }
    shape[axis] = total;
    Tensor out(shape);
    const AxisSplit os = split_axis(shape, axis);
    std::size_t offset = 0;
    Graph::Node n;
    n.kind = OpKind::Concat;
    n.axis = axis;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        const std::size_t ext = v.dim(axis);
        for (std::size_t o = 0; o < os.outer; ++o)
            std::copy_n(v.ptr() + o * ext * os.inner, ext * os.inner,
                        out.ptr() + (o * os.extent + offset) * os.inner);
        offset += ext;
        n.inputs.push_back(p.id());
        n.requires_grad = n.requires_grad || g.requires_grad(p);
    }
    n.value = std::move(out);
    return g.record(std::move(n));
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end)
{
    const Tensor& x = a.value();
    if (axis >= x.rank() || begin >= end || end > x.dim(axis))
        shape_fail(a.graph(), OpKind::Slice,
                   "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                       std::to_string(axis) + " of " + to_string(x.shape()));
    Shape shape = x.shape();
    shape[axis] = end - begin;
    Tensor out(shape);
    const AxisSplit src = split_axis(x.shape(), axis);
    const std::size_t ext = end - begin;
    for (std::size_t o = 0; o < src.outer; ++o)
        std::copy_n(x.ptr() + (o * src.extent + begin) * src.inner, ext * src.inner,
                    out.ptr() + o * ext * src.inner);
    Graph::Node n = make_node(OpKind::Slice, {a}, std::move(out));
    n.axis = axis;
    n.begin = begin;
    n.end = end;
    return a.graph().record(std::move(n));
}

Var sort(Var a)
{
    const Tensor& x = a.value();
    std::vector<std::size_t> perm(x.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    Tensor out(Shape{x.size()});
    for (std::size_t i = 0; i < perm.size(); ++i) out[i] = x[perm[i]];
    Graph::Node n = make_node(OpKind::Sort, {a}, std::move(out));
    n.index = std::move(perm);
    return a.graph().record(std::move(n));
}

Var logsumexp(Var a)
{
    const Tensor& x = a.value();
    const double m = *std::max_element(x.values().begin(), x.values().end());
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::exp(x[i] - m);
    return a.graph().record(make_node(OpKind::LogSumExp, {a}, Tensor::scalar(m + std::log(s))));
}

Var gather(Var a, std::vector<std::size_t> indices)
{
    const Tensor& x = a.value();
    if (indices.empty()) shape_fail(a.graph(), OpKind::Gather, "empty index list");
    Tensor out(Shape{indices.size()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= x.size())
            shape_fail(a.graph(), OpKind::Gather,
                       "index " + std::to_string(indices[i]) + " out of range " + std::to_string(x.size()));
        out[i] = x[indices[i]];
    }
    Graph::Node n = make_node(OpKind::Gather, {a}, std::move(out));
    n.index = std::move(indices);
    return a.graph().record(std::move(n));
}

Var reshape(Var a, Shape shape)
{
    const Tensor& x = a.value();
    if (numel(shape) != x.size())
        shape_fail(a.graph(), OpKind::Reshape, to_string(x.shape()) + " to " + to_string(shape));
    return a.graph().record(make_node(OpKind::Reshape, {a}, x.reshaped(std::move(shape))));
}

Var global_avg_pool(Var x)
{
    const Tensor& xv = x.value();
    require_4d(x.graph(), OpKind::GlobalAvgPool, xv);
    const std::size_t planes = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out(Shape{xv.dim(0), xv.dim(1)});
    for (std::size_t p = 0; p < planes; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += xv[p * hw + i];
        out[p] = s / static_cast<double>(hw);
    }
    return x.graph().record(make_node(OpKind::GlobalAvgPool, {x}, std::move(out)));
}

} // namespace rcl
