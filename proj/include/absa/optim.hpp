#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "absa/error.hpp"
#include "absa/params.hpp"

namespace absa {

struct AdamConfig {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::int64_t t = 0;
};

/// One bias-corrected Adam update of `params` in place. A fresh state (empty
/// moment buffers) is sized on first use.
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr, double beta1,
               double beta2, double eps) {
    if (grads.size() != params.size()) {
        throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                             std::to_string(params.size()) + " parameters");
    }
    if (state.m.empty() && state.v.empty()) {
        state.m.assign(params.size(), T{0});
        state.v.assign(params.size(), T{0});
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state of " + std::to_string(state.m.size()) + " entries for " +
                             std::to_string(params.size()) + " parameters");
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
        state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
        const double mhat = static_cast<double>(state.m[i]) / c1;
        const double vhat = static_cast<double>(state.v[i]) / c2;
        params[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
}

/// Adam over a whole ParameterStore, keyed by parameter name.
template <class T>
class Adam {
public:
    explicit Adam(AdamConfig config) : config_(config) {}

    const AdamConfig& config() const { return config_; }

    void step(ParameterStore<T>& params, double lr) {
        for (auto& [name, tensor] : params) {
            if (tensor.grad.empty()) tensor.zero_grad();
            adam_step<T>(tensor.values, tensor.grad, states_[name], lr, config_.beta1, config_.beta2, config_.eps);
        }
    }

    void step(ParameterStore<T>& params) { step(params, config_.lr); }

private:
    AdamConfig config_;
    std::map<std::string, AdamState<T>> states_;
};

}  // namespace absa
