#ifndef GARET_OPTIMIZER_HPP
#define GARET_OPTIMIZER_HPP

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "garet/core.hpp"

namespace garet {

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("epsilon must be > 0");
    }
};

/// First/second moment accumulators, one buffer per parameter tensor.
struct AdamState {
    std::vector<Vec> m;
    std::vector<Vec> v;
    long step = 0;

    bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam update applied in place. The state is lazily shaped
/// on the first call; afterwards shapes must keep matching.
inline void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                      AdamState& state, const AdamHyper& hyper) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient tensor count mismatch");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state has wrong tensor count");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].size() != grads[k].size() || state.m[k].size() != params[k].size())
            throw ShapeError("adam_step: tensor " + std::to_string(k) + " shape mismatch");
        if (!all_finite(grads[k])) throw NumericError("adam_step: non-finite gradient in tensor " + std::to_string(k));
    }

    ++state.step;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k];
        auto g = grads[k];
        Vec& m = state.m[k];
        Vec& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
        }
    }
}

inline void adam_step(std::vector<std::span<double>> params, const std::vector<std::span<double>>& grads,
                      AdamState& state, const AdamHyper& hyper) {
    std::vector<std::span<const double>> cg(grads.begin(), grads.end());
    adam_step(std::span<const std::span<double>>(params), std::span<const std::span<const double>>(cg), state, hyper);
}

}  // namespace garet

#endif  // GARET_OPTIMIZER_HPP
