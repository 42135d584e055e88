#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "absa/evaluation.hpp"
#include "absa/model.hpp"
#include "absa/optim.hpp"
#include "absa/rng.hpp"

namespace absa {

enum class StopMetric { val_accuracy, val_macro_f1, val_loss };

inline const char* metric_name(StopMetric m) {
    switch (m) {
        case StopMetric::val_accuracy: return "val_accuracy";
        case StopMetric::val_macro_f1: return "val_macro_f1";
        case StopMetric::val_loss: return "val_loss";
    }
    return "?";
}

inline StopMetric parse_stop_metric(const std::string& s) {
    if (s == "val_accuracy") return StopMetric::val_accuracy;
    if (s == "val_macro_f1") return StopMetric::val_macro_f1;
    if (s == "val_loss") return StopMetric::val_loss;
    throw ConfigError("unknown early-stop metric '" + s + "' (val_accuracy, val_macro_f1, val_loss)");
}

struct TrainConfig {
    double lr = 2e-5;
    std::size_t batch = 16;
    std::size_t epochs = 20;
    double dropout = 0.1;
    std::size_t patience = 5;
    bool early_stopping = true;
    StopMetric metric = StopMetric::val_accuracy;
    double clip_norm = 1.0;       // 0 disables clipping
    std::size_t warmup_steps = 0;  // linear warmup, 0 keeps the rate constant
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
        if (batch < 1 || epochs < 1) throw ConfigError("train: batch and epochs must be at least 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train: dropout must lie in [0, 1)");
        if (early_stopping && (patience < 1 || patience > epochs))
            throw ConfigError("train: patience must lie in [1, epochs]");
        if (clip_norm < 0.0) throw ConfigError("train: clip norm must be non-negative");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double val_macro_f1 = 0.0;
    std::string timestamp;

    double metric(StopMetric m) const {
        switch (m) {
            case StopMetric::val_accuracy: return val_accuracy;
            case StopMetric::val_macro_f1: return val_macro_f1;
            case StopMetric::val_loss: return val_loss;
        }
        return 0.0;
    }
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 1-based, 0 before any epoch
    std::string stop_reason = "completed";
    StopMetric metric = StopMetric::val_accuracy;
};

// ---------------------------------------------------------------------------
// Early stopping

enum class StopDecision { keep_going, stop };

inline bool improves(double candidate, double best, bool higher_is_better) {
    return higher_is_better ? candidate > best : candidate < best;
}

/// 0-based index of the best value; ties keep the earliest.
inline std::size_t best_index(const std::vector<double>& values, bool higher_is_better) {
    if (values.empty()) throw ContractError("best_index of an empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (improves(values[i], values[best], higher_is_better)) best = i;
    return best;
}

/// Stop once the last `patience` values all fail to strictly improve on the
/// best value seen before them.
inline StopDecision early_stop_check(const std::vector<double>& values, std::size_t patience, bool higher_is_better = true) {
    if (values.empty()) throw ContractError("early_stop_check needs at least one epoch");
    const std::size_t best = best_index(values, higher_is_better);
    return values.size() - 1 - best >= patience ? StopDecision::stop : StopDecision::keep_going;
}

inline StopDecision early_stop_check(const TrainHistory& h, std::size_t patience, StopMetric metric) {
    std::vector<double> values;
    for (const auto& e : h.epochs) values.push_back(e.metric(metric));
    return early_stop_check(values, patience, metric != StopMetric::val_loss);
}

// ---------------------------------------------------------------------------
// Evaluation over a split

struct SplitEval {
    Metrics metrics;
    double loss = 0.0;
    std::vector<std::size_t> predictions;
};

template <class T>
SplitEval evaluate_split(Model<T>& m, const SplitData<T>& split, std::size_t batch = 64) {
    if (split.size() == 0) throw ConfigError("cannot evaluate an empty split");
    SplitEval out;
    double loss_sum = 0.0;
    std::mt19937_64 unused(0);
    for (std::size_t start = 0; start < split.size(); start += batch) {
        const std::size_t end = std::min(split.size(), start + batch);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        Tape<T> tape(false);
        Var<T> logits = model_forward(tape, m, split, std::span<const std::size_t>(idx), false, unused);
        const std::span<const std::size_t> labels(split.labels.data() + start, end - start);
        loss_sum += static_cast<double>(cross_entropy(logits, labels).value().values[0]) * static_cast<double>(end - start);
        const auto& lv = logits.value().values;
        for (std::size_t b = 0; b < end - start; ++b) {
            const T* row = lv.data() + b * kNumClasses;
            out.predictions.push_back(static_cast<std::size_t>(std::max_element(row, row + kNumClasses) - row));
        }
    }
    out.loss = loss_sum / static_cast<double>(split.size());
    out.metrics = compute_metrics(split.labels, out.predictions);
    return out;
}

/// Class probabilities for one encoded input.
template <class T>
std::array<double, kNumClasses> predict_proba(Model<T>& m, const EncodedInput& in) {
    SplitData<T> one;
    one.inputs = {in};
    one.labels = {0};
    Tape<T> tape(false);
    std::mt19937_64 unused(0);
    const std::size_t idx = 0;
    auto probs = softmax_rows(model_forward(tape, m, one, std::span<const std::size_t>(&idx, 1), false, unused));
    std::array<double, kNumClasses> out{};
    for (std::size_t c = 0; c < kNumClasses; ++c) out[c] = static_cast<double>(probs.value().values[c]);
    return out;
}

// ---------------------------------------------------------------------------
// Training loop

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

struct TrainOptions {
    std::ostream* progress = nullptr;              // one line per epoch
    std::optional<std::filesystem::path> checkpoint;  // written at every new best epoch
    std::function<void(std::size_t epoch, std::span<const std::size_t> batch)> on_batch;
};

/// Mini-batch Adam with per-epoch validation. On return the model holds the
/// parameters of the best epoch (ties keep the earliest).
template <class T>
TrainHistory train(Model<T>& m, const TrainConfig& cfg, const SplitData<T>& train_split, const SplitData<T>& val_split,
                   const TrainOptions& opts = {}) {
    cfg.validate();
    if (train_split.size() == 0 || val_split.size() == 0) throw ConfigError("train: training and validation splits must be non-empty");
    SeedStreams streams(cfg.seed);
    m.encoder.dropout = cfg.dropout;
    m.head.dropout = cfg.dropout;
    if (m.params.size() == 0) init_model(m, streams.init);

    Adam<T> adam(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
    TrainHistory history;
    history.metric = cfg.metric;
    const bool higher = cfg.metric != StopMetric::val_loss;
    std::optional<ParameterStore<T>> best_params;
    std::vector<std::size_t> order(train_split.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), streams.shuffle);
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            if (opts.on_batch) opts.on_batch(epoch, idx);
            std::vector<std::size_t> labels;
            for (std::size_t i : idx) labels.push_back(train_split.labels[i]);
            m.params.zero_grad();
            try {
                Tape<T> tape;
                Var<T> loss = cross_entropy(model_forward(tape, m, train_split, idx, true, streams.dropout),
                                            std::span<const std::size_t>(labels));
                loss_sum += static_cast<double>(loss.value().values[0]) * static_cast<double>(idx.size());
                tape.backward(loss);
                if (cfg.clip_norm > 0.0) m.params.clip_grad_norm(static_cast<T>(cfg.clip_norm));
                for (const auto& [name, t] : m.params)
                    if (!t.all_finite() || !std::all_of(t.grad.begin(), t.grad.end(), [](T g) { return std::isfinite(g); }))
                        throw NumericError("non-finite gradient for " + name);
            } catch (const NumericError& e) {
                throw TrainingError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index) + ": " + e.what());
            }
            ++step;
            double lr = cfg.lr;
            if (cfg.warmup_steps > 0) lr *= std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
            adam.step(m.params, lr);
        }

        const SplitEval val = evaluate_split(m, val_split);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), val.loss, val.metrics.accuracy,
                        val.metrics.macro_f1, utc_timestamp()};
        history.epochs.push_back(rec);
        if (history.best_epoch == 0 ||
            improves(rec.metric(cfg.metric), history.epochs[history.best_epoch - 1].metric(cfg.metric), higher)) {
            history.best_epoch = epoch;
            best_params = m.params.snapshot();
            if (opts.checkpoint) save_model(*opts.checkpoint, m);
        }
        if (opts.progress) {
            *opts.progress << "epoch " << epoch << "/" << cfg.epochs << std::fixed << std::setprecision(4)
                           << "  train_loss " << rec.train_loss << "  val_acc " << rec.val_accuracy << "  val_f1 "
                           << rec.val_macro_f1 << std::defaultfloat << "\n"
                           << std::flush;
        }
        if (cfg.early_stopping && epoch < cfg.epochs && early_stop_check(history, cfg.patience, cfg.metric) == StopDecision::stop) {
            history.stop_reason = "early_stopped";
            break;
        }
    }
    if (best_params) m.params = std::move(*best_params);
    return history;
}

inline nlohmann::ordered_json to_json(const TrainHistory& h, bool with_timestamps = true) {
    nlohmann::ordered_json j;
    j["metric"] = metric_name(h.metric);
    j["best_epoch"] = h.best_epoch;
    j["stop_reason"] = h.stop_reason;
    j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : h.epochs) {
        nlohmann::ordered_json je;
        je["epoch"] = e.epoch;
        je["train_loss"] = e.train_loss;
        je["val_loss"] = e.val_loss;
        je["val_accuracy"] = e.val_accuracy;
        je["val_macro_f1"] = e.val_macro_f1;
        if (with_timestamps) je["timestamp"] = e.timestamp;
        j["epochs"].push_back(je);
    }
    return j;
}

}  // namespace absa
