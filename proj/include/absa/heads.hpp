#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "absa/encoder.hpp"
#include "absa/error.hpp"
#include "absa/ops.hpp"
#include "absa/params.hpp"
#include "absa/tokenizer.hpp"

namespace absa {

enum class HeadKind { fcn, cnn, gcn };

inline const char* head_name(HeadKind k) {
    switch (k) {
        case HeadKind::fcn: return "fcn";
        case HeadKind::cnn: return "cnn";
        case HeadKind::gcn: return "gcn";
    }
    return "?";
}

inline HeadKind parse_head_kind(const std::string& s) {
    if (s == "fcn") return HeadKind::fcn;
    if (s == "cnn") return HeadKind::cnn;
    if (s == "gcn") return HeadKind::gcn;
    throw ConfigError("unknown head '" + s + "' (fcn, cnn, gcn)");
}

/// Display label used in reports.
inline const char* head_label(HeadKind k) {
    switch (k) {
        case HeadKind::fcn: return "FCN";
        case HeadKind::cnn: return "CNN";
        case HeadKind::gcn: return "GCN";
    }
    return "?";
}

struct HeadConfig {
    HeadKind kind = HeadKind::fcn;
    std::size_t input_dim = 64;
    std::size_t fcn_hidden = 300;
    std::string fcn_pooling = "cls";  // cls | mean
    std::size_t cnn_channels = 100;
    std::size_t cnn_kernel = 3;
    std::size_t gcn_window = 2;
    double dropout = 0.1;
    double init_std = 0.02;

    void validate() const {
        if (input_dim < 1 || fcn_hidden < 1 || cnn_channels < 1 || cnn_kernel < 1 || gcn_window < 1)
            throw ConfigError("head: all dimensions must be at least 1");
        if (cnn_kernel % 2 == 0) throw ConfigError("head: cnn kernel width must be odd");
        if (fcn_pooling != "cls" && fcn_pooling != "mean") throw ConfigError("head: fcn pooling must be cls or mean");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("head: dropout must lie in [0, 1)");
    }
};

inline constexpr std::size_t kNumClasses = 3;

inline std::vector<std::pair<std::string, Shape>> head_parameter_shapes(const HeadConfig& c) {
    const std::size_t D = c.input_dim, C = kNumClasses;
    switch (c.kind) {
        case HeadKind::fcn:
            return {{"head/fcn/hidden/weight", {c.fcn_hidden, D}},
                    {"head/fcn/hidden/bias", {c.fcn_hidden}},
                    {"head/fcn/output/weight", {C, c.fcn_hidden}},
                    {"head/fcn/output/bias", {C}}};
        case HeadKind::cnn:
            return {{"head/cnn/conv1/kernel", {c.cnn_kernel, D, c.cnn_channels}},
                    {"head/cnn/conv1/bias", {c.cnn_channels}},
                    {"head/cnn/conv2/kernel", {c.cnn_kernel, c.cnn_channels, c.cnn_channels}},
                    {"head/cnn/conv2/bias", {c.cnn_channels}},
                    {"head/cnn/output/weight", {C, c.cnn_channels}},
                    {"head/cnn/output/bias", {C}}};
        case HeadKind::gcn:
            return {{"head/gcn/layer1/weight", {D, D}},
                    {"head/gcn/layer2/weight", {D, D}},
                    {"head/gcn/output/weight", {C, D}},
                    {"head/gcn/output/bias", {C}}};
    }
    return {};
}

/// Number of trainable parameters of a head, from its shapes alone.
inline std::size_t head_parameter_count(const HeadConfig& c) {
    std::size_t n = 0;
    for (const auto& [name, shape] : head_parameter_shapes(c)) n += shape_size(shape);
    return n;
}

template <class T>
void init_head(ParameterStore<T>& params, const HeadConfig& c, std::mt19937_64& rng) {
    c.validate();
    for (const auto& [name, shape] : head_parameter_shapes(c))
        params.add(name, detail::init_tensor<T>(name, shape, c.init_std, rng));
}

// ---------------------------------------------------------------------------
// Word graph

/// Normalised adjacency D^{-1/2}(A + I)D^{-1/2} of one encoded input,
/// row-major [L x L].
struct WordGraph {
    std::size_t len = 0;
    std::vector<double> adjacency;  // A, without self loops
    std::vector<double> normalized;

    double at(std::size_t i, std::size_t j) const { return normalized[i * len + j]; }
};

/// Sentence tokens are linked to neighbours within `window` and to every
/// aspect token. Other real tokens ([CLS], [SEP], the aspect segment) keep
/// only their self loop; padding rows and columns are zero.
inline WordGraph build_word_graph(const EncodedInput& in, std::size_t window) {
    if (window < 1) throw ConfigError("word graph window must be at least 1");
    const std::size_t L = in.length();
    WordGraph g;
    g.len = L;
    g.adjacency.assign(L * L, 0.0);
    g.normalized.assign(L * L, 0.0);
    const std::size_t s0 = 1, s1 = 1 + in.sentence_len;  // sentence positions [s0, s1)
    auto link = [&](std::size_t i, std::size_t j) {
        if (i == j) return;
        g.adjacency[i * L + j] = 1.0;
        g.adjacency[j * L + i] = 1.0;
    };
    for (std::size_t i = s0; i < s1; ++i) {
        for (std::size_t j = i + 1; j < s1 && j - i <= window; ++j) link(i, j);
        for (std::size_t j = s0; j < s1; ++j)
            if (in.aspect_mask[j]) link(i, j);
    }
    std::vector<double> inv_sqrt_deg(L, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
        if (!in.pad_mask[i]) continue;
        double d = 1.0;
        for (std::size_t j = 0; j < L; ++j) d += g.adjacency[i * L + j];
        inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
    }
    for (std::size_t i = 0; i < L; ++i) {
        if (!in.pad_mask[i]) continue;
        for (std::size_t j = 0; j < L; ++j) {
            const double a = i == j ? 1.0 : g.adjacency[i * L + j];
            if (a != 0.0) g.normalized[i * L + j] = a * inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    return g;
}

/// Stacks per-example graphs into [B x L x L].
template <class T>
Tensor<T> stack_graphs(const std::vector<WordGraph>& graphs) {
    if (graphs.empty()) throw ContractError("no graphs to stack");
    const std::size_t L = graphs[0].len;
    Tensor<T> out({graphs.size(), L, L});
    for (std::size_t b = 0; b < graphs.size(); ++b) {
        if (graphs[b].len != L) throw DimensionError("graphs of different sizes in one batch");
        for (std::size_t i = 0; i < L * L; ++i) out.values[b * L * L + i] = static_cast<T>(graphs[b].normalized[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward passes. `h` is [B x L x D]; masks hold B*L entries.

namespace detail {

inline void require_hidden(const Shape& s, std::size_t D, const char* who) {
    if (s.size() != 3 || s[2] != D)
        throw DimensionError(std::string(who) + ": hidden states " + shape_str(s) + " do not match input dimension " +
                             std::to_string(D));
}

}  // namespace detail

/// logits = W2 relu(W1 pool(h) + b1) + b2, pool = the [CLS] row (or the
/// mean over real tokens), dropout on the pooled vector.
template <class T>
Var<T> fcn_forward(Tape<T>& tape, ParameterStore<T>& params, const HeadConfig& c, Var<T> h,
                   std::span<const T> pad_mask, bool training, std::mt19937_64& rng) {
    detail::require_hidden(h.shape(), c.input_dim, "fcn");
    detail::check_shapes(params, head_parameter_shapes(c));
    const std::size_t B = h.shape()[0], L = h.shape()[1], D = h.shape()[2];
    Var<T> pooled = [&] {
        if (c.fcn_pooling == "mean") return masked_mean_pool(h, pad_mask);
        std::vector<std::size_t> rows(B);
        for (std::size_t b = 0; b < B; ++b) rows[b] = b * L;
        return select_rows(reshape(h, Shape{B * L, D}), std::span<const std::size_t>(rows));
    }();
    pooled = dropout(pooled, c.dropout, training, rng);
    auto P = [&](const char* name) { return tape.parameter(params[name]); };
    Var<T> z = relu(linear(pooled, P("head/fcn/hidden/weight"), P("head/fcn/hidden/bias")));
    return linear(z, P("head/fcn/output/weight"), P("head/fcn/output/bias"));
}

/// conv -> ReLU -> conv -> ReLU -> max over real positions -> dropout ->
/// affine. Padding rows are zeroed before each convolution so appended
/// padding acts exactly like the convolution's own zero padding.
template <class T>
Var<T> cnn_forward(Tape<T>& tape, ParameterStore<T>& params, const HeadConfig& c, Var<T> h,
                   std::span<const T> pad_mask, bool training, std::mt19937_64& rng) {
    detail::require_hidden(h.shape(), c.input_dim, "cnn");
    detail::check_shapes(params, head_parameter_shapes(c));
    auto P = [&](const char* name) { return tape.parameter(params[name]); };
    Var<T> x = mask_rows(h, pad_mask);
    x = mask_rows(relu(conv1d(x, P("head/cnn/conv1/kernel"), P("head/cnn/conv1/bias"))), pad_mask);
    x = relu(conv1d(x, P("head/cnn/conv2/kernel"), P("head/cnn/conv2/bias")));
    Var<T> pooled = dropout(masked_max_pool(x, pad_mask), c.dropout, training, rng);
    return linear(pooled, P("head/cnn/output/weight"), P("head/cnn/output/bias"));
}

/// H1 = relu(A H W1), H2 = relu(A H1 W2), mean of H2 over aspect positions,
/// dropout, affine. `graphs` is the stacked normalised adjacency [B x L x L].
template <class T>
Var<T> gcn_forward(Tape<T>& tape, ParameterStore<T>& params, const HeadConfig& c, Var<T> h, Var<T> graphs,
                   std::span<const T> aspect_mask, bool training, std::mt19937_64& rng) {
    detail::require_hidden(h.shape(), c.input_dim, "gcn");
    detail::check_shapes(params, head_parameter_shapes(c));
    const std::size_t B = h.shape()[0], L = h.shape()[1], D = h.shape()[2];
    if (graphs.shape() != Shape{B, L, L})
        throw DimensionError("gcn: graphs " + shape_str(graphs.shape()) + " do not match hidden states " + shape_str(h.shape()));
    auto P = [&](const char* name) { return tape.parameter(params[name]); };
    auto propagate = [&](Var<T> x, const char* weight) {
        Var<T> xw = reshape(matmul(reshape(x, Shape{B * L, D}), P(weight)), Shape{B, L, D});
        return relu(bmm(graphs, xw));
    };
    Var<T> h1 = propagate(h, "head/gcn/layer1/weight");
    Var<T> h2 = propagate(h1, "head/gcn/layer2/weight");
    Var<T> pooled = dropout(masked_mean_pool(h2, aspect_mask), c.dropout, training, rng);
    return linear(pooled, P("head/gcn/output/weight"), P("head/gcn/output/bias"));
}

/// Everything a head may need besides the hidden states, for one batch.
template <class T>
struct HeadInputs {
    std::vector<T> pad_mask;
    std::vector<T> aspect_mask;
    Tensor<T> graphs;  // only filled for the GCN head
};

template <class T>
HeadInputs<T> head_inputs(const HeadConfig& c, std::span<const EncodedInput> batch) {
    auto m = batch_masks<T>(batch);
    HeadInputs<T> out{std::move(m.pad), std::move(m.aspect), Tensor<T>()};
    if (c.kind == HeadKind::gcn) {
        std::vector<WordGraph> graphs;
        graphs.reserve(batch.size());
        for (const auto& in : batch) graphs.push_back(build_word_graph(in, c.gcn_window));
        out.graphs = stack_graphs<T>(graphs);
    }
    return out;
}

template <class T>
Var<T> head_forward(Tape<T>& tape, ParameterStore<T>& params, const HeadConfig& c, Var<T> h,
                    const HeadInputs<T>& in, bool training, std::mt19937_64& rng) {
    switch (c.kind) {
        case HeadKind::fcn: return fcn_forward(tape, params, c, h, std::span<const T>(in.pad_mask), training, rng);
        case HeadKind::cnn: return cnn_forward(tape, params, c, h, std::span<const T>(in.pad_mask), training, rng);
        case HeadKind::gcn:
            return gcn_forward(tape, params, c, h, tape.constant(in.graphs), std::span<const T>(in.aspect_mask), training, rng);
    }
    throw ConfigError("unknown head kind");
}

}  // namespace absa
