#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>

#include "absa/error.hpp"
#include "absa/tensor.hpp"

namespace absa {

/// Named trainable tensors. Ordered by name so iteration (and therefore the
/// optimizer update order and checkpoint layout) is deterministic.
template <class T>
class ParameterStore {
public:
    using value_type = T;

    Tensor<T>& add(const std::string& name, Tensor<T> value) {
        auto [it, inserted] = tensors_.emplace(name, std::move(value));
        if (!inserted) throw ConfigError("duplicate parameter name " + name);
        return it->second;
    }

    Tensor<T>& operator[](const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw LookupError("unknown parameter " + name);
        return it->second;
    }
    const Tensor<T>& operator[](const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw LookupError("unknown parameter " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.size();
        return n;
    }

    std::size_t parameter_count(const std::string& prefix) const {
        std::size_t n = 0;
        for (const auto& [name, t] : tensors_)
            if (name.rfind(prefix, 0) == 0) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : tensors_) t.zero_grad();
    }

    /// Scales all gradients so their joint L2 norm is at most max_norm.
    /// Returns the norm before clipping.
    T clip_grad_norm(T max_norm) {
        double sq = 0.0;
        for (const auto& [_, t] : tensors_)
            for (T g : t.grad) sq += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(sq);
        if (max_norm > T{0} && norm > static_cast<double>(max_norm)) {
            const T factor = static_cast<T>(static_cast<double>(max_norm) / (norm + 1e-12));
            for (auto& [_, t] : tensors_)
                for (T& g : t.grad) g *= factor;
        }
        return static_cast<T>(norm);
    }

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }
    std::size_t size() const { return tensors_.size(); }

    /// Copies values only; gradients and optimizer state are not part of a snapshot.
    ParameterStore snapshot() const {
        ParameterStore out;
        for (const auto& [name, t] : tensors_) out.tensors_.emplace(name, Tensor<T>(t.shape, t.values));
        return out;
    }

    friend bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.tensors_ == b.tensors_; }

private:
    std::map<std::string, Tensor<T>> tensors_;
};

/// Normal(0, std) truncated at two standard deviations by resampling.
template <class T>
Tensor<T> truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.values) {
        double z = dist(rng);
        while (std::abs(z) > 2.0) z = dist(rng);
        v = static_cast<T>(z * std);
    }
    return t;
}

}  // namespace absa
