#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "absa/dataset.hpp"
#include "absa/error.hpp"

namespace absa {

/// counts[gold][predicted].
struct ConfusionMatrix {
    std::array<std::array<std::size_t, kNumPolarities>, kNumPolarities> counts{};

    void add(std::size_t gold, std::size_t pred) {
        if (gold >= kNumPolarities || pred >= kNumPolarities)
            throw LabelError("class index outside {0,1,2}: gold " + std::to_string(gold) + ", predicted " + std::to_string(pred));
        ++counts[gold][pred];
    }

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& row : counts)
            for (std::size_t v : row) n += v;
        return n;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> gold, std::span<const std::size_t> pred) {
    if (gold.size() != pred.size())
        throw DimensionError(std::to_string(gold.size()) + " gold labels but " + std::to_string(pred.size()) + " predictions");
    ConfusionMatrix m;
    for (std::size_t i = 0; i < gold.size(); ++i) m.add(gold[i], pred[i]);
    return m;
}

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::array<double, kNumPolarities> f1{};
    ConfusionMatrix confusion;
};

/// Per-class F1 = 2tp / (2tp + fp + fn); a class with no gold and no
/// predicted instances scores 0. Macro-F1 is their unweighted mean;
/// weighted-F1 weights by gold support; micro-F1 equals accuracy here.
inline Metrics compute_metrics(const ConfusionMatrix& m) {
    const std::size_t n = m.total();
    if (n == 0) throw ConfigError("cannot evaluate an empty test set");
    Metrics out;
    out.confusion = m;
    std::size_t trace = 0;
    for (std::size_t c = 0; c < kNumPolarities; ++c) trace += m.counts[c][c];
    out.accuracy = static_cast<double>(trace) / static_cast<double>(n);
    out.micro_f1 = out.accuracy;
    for (std::size_t c = 0; c < kNumPolarities; ++c) {
        std::size_t gold = 0, pred = 0;
        for (std::size_t k = 0; k < kNumPolarities; ++k) {
            gold += m.counts[c][k];
            pred += m.counts[k][c];
        }
        const std::size_t tp = m.counts[c][c];
        const std::size_t denom = gold + pred;  // = 2tp + fp + fn
        out.f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
        out.weighted_f1 += out.f1[c] * static_cast<double>(gold) / static_cast<double>(n);
    }
    out.macro_f1 = (out.f1[0] + out.f1[1] + out.f1[2]) / 3.0;
    return out;
}

inline Metrics compute_metrics(std::span<const std::size_t> gold, std::span<const std::size_t> pred) {
    return compute_metrics(confusion(gold, pred));
}

// ---------------------------------------------------------------------------
// Seed aggregation

/// "m ± s" with two decimals.
inline std::string format_pm(double mean, double err) {
    auto fix = [](double v) { return std::abs(v) < 0.005 ? 0.0 : v; };  // never print -0.00
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.2f", fix(mean), fix(err));
    return buf;
}

/// Mean and standard error (sample standard deviation / sqrt(n)). The
/// paper's tables label this "mean ± standard deviation"; the quantity is
/// the standard error.
struct SeedAggregate {
    std::vector<double> values;
    double mean = 0.0;
    double std_dev = 0.0;
    double std_error = 0.0;

    std::string display() const { return format_pm(mean, std_error); }
};

inline SeedAggregate aggregate_seeds(std::vector<double> values) {
    if (values.size() < 2)
        throw AggregationError("standard error needs at least 2 seeds, got " + std::to_string(values.size()));
    SeedAggregate a;
    a.values = values;
    std::sort(values.begin(), values.end());  // fixed summation order: result independent of seed order
    const double n = static_cast<double>(values.size());
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std_dev = std::sqrt(ss / (n - 1.0));
    a.std_error = a.std_dev / std::sqrt(n);
    return a;
}

// ---------------------------------------------------------------------------
// Experiment report

struct SeedResult {
    std::uint64_t seed = 0;
    Metrics metrics;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

struct ReportRow {
    std::string model;    // FCN / CNN / GCN
    std::string encoder;  // preset or feature-set label
    SeedAggregate acc;    // percentages
    SeedAggregate f1;     // macro-F1, percentages
    std::vector<SeedResult> seeds;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

struct GridCell {
    std::string model;
    std::string encoder;
    std::vector<SeedResult> seeds;
};

/// One row per (encoder, model) in the given orders, encoders outermost.
inline ExperimentReport experiment_report(const std::vector<GridCell>& cells, const std::vector<std::string>& models,
                                          const std::vector<std::string>& encoders) {
    ExperimentReport r;
    for (const auto& enc : encoders) {
        for (const auto& model : models) {
            auto it = std::find_if(cells.begin(), cells.end(),
                                   [&](const GridCell& c) { return c.model == model && c.encoder == enc; });
            if (it == cells.end() || it->seeds.empty())
                throw ReportError("missing results for cell (" + model + ", " + enc + ")");
            ReportRow row{model, enc, {}, {}, it->seeds};
            std::vector<double> acc, f1;
            for (const auto& s : it->seeds) {
                acc.push_back(100.0 * s.metrics.accuracy);
                f1.push_back(100.0 * s.metrics.macro_f1);
            }
            try {
                row.acc = aggregate_seeds(acc);
                row.f1 = aggregate_seeds(f1);
            } catch (const AggregationError& e) {
                throw ReportError("cell (" + model + ", " + enc + "): " + e.what());
            }
            r.rows.push_back(std::move(row));
        }
    }
    return r;
}

namespace detail {

/// Display width in code points (the ± sign is two bytes).
inline std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
}

}  // namespace detail

/// Aligned text table: Model, Encoder, ACC, F1.
inline std::string render_text(const ExperimentReport& r) {
    std::vector<std::array<std::string, 4>> lines{{"Model", "Encoder", "ACC", "F1"}};
    for (const auto& row : r.rows) lines.push_back({row.model, row.encoder, row.acc.display(), row.f1.display()});
    std::array<std::size_t, 4> width{};
    for (const auto& l : lines)
        for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], detail::display_width(l[c]));
    auto emit = [&](const std::array<std::string, 4>& l) {
        std::string out;
        for (std::size_t c = 0; c < 4; ++c) {
            out += l[c];
            if (c + 1 < 4) out += std::string(width[c] - detail::display_width(l[c]) + 2, ' ');
        }
        return out + "\n";
    };
    std::string out = emit(lines[0]);
    std::array<std::string, 4> rule;
    for (std::size_t c = 0; c < 4; ++c) rule[c] = std::string(width[c], '-');
    out += emit(rule);
    for (std::size_t i = 1; i < lines.size(); ++i) out += emit(lines[i]);
    return out;
}

inline nlohmann::ordered_json to_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["accuracy"] = m.accuracy;
    j["macro_f1"] = m.macro_f1;
    j["micro_f1"] = m.micro_f1;
    j["weighted_f1"] = m.weighted_f1;
    j["per_class_f1"] = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < kNumPolarities; ++c) j["per_class_f1"][kPolarityNames[c]] = m.f1[c];
    j["confusion"] = m.confusion.counts;
    return j;
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
    Metrics m;
    m.accuracy = j.at("accuracy").get<double>();
    m.macro_f1 = j.at("macro_f1").get<double>();
    m.micro_f1 = j.at("micro_f1").get<double>();
    m.weighted_f1 = j.at("weighted_f1").get<double>();
    for (std::size_t c = 0; c < kNumPolarities; ++c) m.f1[c] = j.at("per_class_f1").at(kPolarityNames[c]).get<double>();
    m.confusion.counts = j.at("confusion").get<decltype(m.confusion.counts)>();
    return m;
}

inline nlohmann::ordered_json to_json(const SeedAggregate& a) {
    return {{"mean", a.mean}, {"std_error", a.std_error}, {"std_dev", a.std_dev}, {"display", a.display()}, {"values", a.values}};
}

inline SeedAggregate aggregate_from_json(const nlohmann::json& j) {
    SeedAggregate a;
    a.values = j.at("values").get<std::vector<double>>();
    a.mean = j.at("mean").get<double>();
    a.std_dev = j.at("std_dev").get<double>();
    a.std_error = j.at("std_error").get<double>();
    return a;
}

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
    nlohmann::ordered_json j;
    j["columns"] = {"Model", "Encoder", "ACC", "F1"};
    j["f1_averaging"] = "macro";
    j["uncertainty"] = "standard error = sample std / sqrt(seeds)";
    j["meta"] = r.meta;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : r.rows) {
        nlohmann::ordered_json jr;
        jr["model"] = row.model;
        jr["encoder"] = row.encoder;
        jr["acc"] = to_json(row.acc);
        jr["f1"] = to_json(row.f1);
        jr["seeds"] = nlohmann::ordered_json::array();
        for (const auto& s : row.seeds) {
            nlohmann::ordered_json js;
            js["seed"] = s.seed;
            js["best_epoch"] = s.best_epoch;
            js["epochs_run"] = s.epochs_run;
            js["metrics"] = to_json(s.metrics);
            jr["seeds"].push_back(js);
        }
        j["rows"].push_back(jr);
    }
    return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
    ExperimentReport r;
    try {
        r.meta = j.at("meta");
        for (const auto& jr : j.at("rows")) {
            ReportRow row;
            row.model = jr.at("model").get<std::string>();
            row.encoder = jr.at("encoder").get<std::string>();
            row.acc = aggregate_from_json(jr.at("acc"));
            row.f1 = aggregate_from_json(jr.at("f1"));
            for (const auto& js : jr.at("seeds")) {
                SeedResult s;
                s.seed = js.at("seed").get<std::uint64_t>();
                s.best_epoch = js.at("best_epoch").get<std::size_t>();
                s.epochs_run = js.at("epochs_run").get<std::size_t>();
                s.metrics = metrics_from_json(js.at("metrics"));
                row.seeds.push_back(s);
            }
            r.rows.push_back(std::move(row));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed report JSON: ") + e.what());
    }
    return r;
}

inline void write_report(const std::filesystem::path& dir, const ExperimentReport& r) {
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + (dir / name).string());
        out << text;
    };
    write("report.txt", render_text(r));
    write("report.json", to_json(r).dump(2) + "\n");
}

}  // namespace absa
