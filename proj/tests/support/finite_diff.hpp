#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "steerkit/model.hpp"

namespace steerkit::testing {

// Central differences of metric(logits at the readout) with respect to
// residual[layer][position], perturbing one coordinate at a time through an
// explicit-position intervention.
inline std::vector<double> fd_grad(const Weights& w, const std::vector<Token>& tokens, int layer, int position,
                                   const LogitMetric& metric, double step = 1e-4) {
    const int d = w.config.d_model;
    const int readout = metric.readout_position.value_or(static_cast<int>(tokens.size()) - 1);
    std::vector<double> scratch(w.config.vocab_size);
    auto eval = [&](int coord, double h) {
        Intervention iv;
        iv.layer = layer;
        iv.vector.assign(d, 0.0);
        iv.vector[coord] = 1.0;
        iv.coefficient = h;
        iv.filter = PositionFilter::at({position});
        const auto cache = forward(w, tokens, std::span<const Intervention>(&iv, 1));
        return metric.evaluate(cache.logits.row(readout), scratch);
    };
    std::vector<double> g(d);
    for (int i = 0; i < d; ++i) g[i] = (eval(i, step) - eval(i, -step)) / (2.0 * step);
    return g;
}

// Relative error with an absolute floor: coordinates where both values are
// below `floor` in magnitude compare on an absolute scale.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace steerkit::testing
