#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "absa/error.hpp"

namespace absa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array. `grad` is either empty or the same length as
/// `values`; it is filled by Tape::backward for parameter tensors.
template <class T>
struct Tensor {
    using value_type = T;

    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), values(shape_size(shape), T{0}) {}
    Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
        if (shape_size(shape) != values.size()) {
            throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
        }
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor filled(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.values.begin(), t.values.end(), v);
        return t;
    }
    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.values[i * n + i] = T{1};
        return t;
    }

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    T& at(std::size_t r, std::size_t c) { return values[r * shape.back() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return values[r * shape.back() + c]; }

    std::span<T> data() { return values; }
    std::span<const T> data() const { return values; }

    bool has_grad() const { return !grad.empty(); }
    void zero_grad() { grad.assign(values.size(), T{0}); }

    bool all_finite() const {
        for (T v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape == b.shape && a.values == b.values;
    }
};

/// Rows of the last dimension: a [B x L x D] tensor has B*L rows of width D.
inline std::size_t leading_rows(const Shape& shape) {
    if (shape.empty()) return 1;
    return shape_size(shape) / shape.back();
}

}  // namespace absa
