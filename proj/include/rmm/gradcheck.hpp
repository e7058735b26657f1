#pragma once

#include <functional>
#include <vector>

#include "rmm/rng.hpp"
#include "rmm/tensor.hpp"

namespace rmm {

// Finite-difference verification of reverse-mode gradients. The numeric side
// only ever runs forward passes, so it is independent of the backward code it
// checks.
struct GradCheckResult {
    double max_rel_err = 0.0;
    int coords_checked = 0;
};

// `build` receives a fresh graph plus the leaf ids of the inputs (in order)
// and returns the scalar loss node. Checks `coords` random coordinates spread
// across all inputs with central differences of step `h`; relative error is
// |a - n| / max(|a|, |n|, 1).
inline GradCheckResult grad_check(
    const std::function<NodeId(Graph&, const std::vector<NodeId>&)>& build,
    std::vector<Tensor> inputs, Rng& rng, int coords = 50, double h = 1e-5) {
    require(!inputs.empty(), ErrorCode::Contract, "grad_check: no inputs");

    auto forward_value = [&]() {
        Graph g;
        std::vector<NodeId> ids;
        ids.reserve(inputs.size());
        for (const Tensor& t : inputs) ids.push_back(g.leaf(t));
        NodeId loss = build(g, ids);
        require(g.value(loss).numel() == 1, ErrorCode::Contract, "grad_check: loss must be scalar");
        return g.value(loss).data[0];
    };

    // analytic pass
    Graph g;
    std::vector<NodeId> ids;
    for (const Tensor& t : inputs) ids.push_back(g.leaf(t));
    g.backward(build(g, ids));

    GradCheckResult res;
    for (int c = 0; c < coords; ++c) {
        const size_t which = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(inputs.size()) - 1));
        const size_t idx =
            static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(inputs[which].data.size()) - 1));
        const double orig = inputs[which].data[idx];

        inputs[which].data[idx] = orig + h;
        const double fp = forward_value();
        inputs[which].data[idx] = orig - h;
        const double fm = forward_value();
        inputs[which].data[idx] = orig;

        const double numeric = (fp - fm) / (2.0 * h);
        const double a = g.grad(ids[which])[idx];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
        res.max_rel_err = std::max(res.max_rel_err, std::fabs(a - numeric) / denom);
        ++res.coords_checked;
    }
    return res;
}

}  // namespace rmm
