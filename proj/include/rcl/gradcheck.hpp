#pragma once

#include "rcl/autodiff.hpp"

#include <functional>
#include <map>
#include <string>

namespace rcl {

using LeafMap = std::map<std::string, Tensor>;
using VarMap = std::map<std::string, Var>;

// Builds a graph on top of the supplied leaf variables and returns its root.
using GraphBuilder = std::function<Var(Graph&, const VarMap&)>;

// Binds every entry of `leaves` as a differentiable leaf, runs the builder and
// returns the root value.
Tensor forward(const GraphBuilder& build, const LeafMap& leaves);

// Same as forward() followed by backward(); returns d(root)/d(leaf).
LeafMap backward(const GraphBuilder& build, const LeafMap& leaves, double* root_value = nullptr);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Elements whose one-sided differences disagree by more than the
    // tolerance: kinks (relu/abs at 0, sort ties) inside the stencil.
    std::size_t excluded = 0;
    std::string worst_leaf;
    std::size_t worst_index = 0;
    bool passed = true;
};

// Compares analytic gradients against central finite differences for every
// element of every leaf. Relative error is |a - n| / max(|a|, |n|, floor)
// where floor = max(1e-7, 1e-3 * max|a|) so that near-zero entries are judged
// against the gradient's overall scale.
GradCheckReport grad_check(const GraphBuilder& build, const LeafMap& leaves, double step,
                           double tolerance);

} // namespace rcl
