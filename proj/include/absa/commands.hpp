#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "absa/config.hpp"
#include "absa/dataset.hpp"
#include "absa/evaluation.hpp"
#include "absa/model.hpp"
#include "absa/training.hpp"

namespace absa {

// ---------------------------------------------------------------------------
// Shared plumbing

struct RunData {
    Splits splits;
    Vocab vocab;
};

inline Splits load_splits(const RunConfig& c) {
    const bool any_file = !c.train_path.empty() || !c.val_path.empty() || !c.test_path.empty();
    if (any_file) {
        if (c.train_path.empty() || c.val_path.empty() || c.test_path.empty())
            throw ConfigError("data.train, data.val and data.test must be given together");
        return Splits{load_jsonl(c.train_path), load_jsonl(c.val_path), load_jsonl(c.test_path)};
    }
    std::vector<Example> all;
    if (!c.data_path.empty()) {
        all = load_jsonl(c.data_path);
    } else if (c.synthetic_n > 0) {
        SyntheticSpec spec;
        spec.n = c.synthetic_n;
        spec.seed = c.synthetic_seed;
        all = generate_synthetic(spec);
    } else {
        throw ConfigError("no data source: set data.path, data.train/val/test or data.synthetic_n");
    }
    return stratified_split(all, c.split);
}

/// Splits plus a vocabulary built from the training split only.
inline RunData load_run_data(const RunConfig& c) {
    RunData d;
    d.splits = load_splits(c);
    d.vocab = build_vocab(d.splits.train, c.min_freq);
    return d;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << text;
        if (!out) throw IoError("failed writing " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

struct FeatureSet {
    PrecomputedEmbeddings<float> train, val, test;
};

inline FeatureSet load_features(const std::filesystem::path& dir, const Splits& s) {
    auto one = [&](const char* name, std::size_t expected) {
        auto f = load_precomputed<float>(dir / (std::string(name) + ".feat"));
        if (f.size() != expected)
            throw DimensionError((dir / name).string() + ".feat holds " + std::to_string(f.size()) +
                                 " examples, the split has " + std::to_string(expected));
        return f;
    };
    return FeatureSet{one("train", s.train.size()), one("val", s.val.size()), one("test", s.test.size())};
}

inline Model<float> make_model(const RunConfig& c, const std::string& encoder, HeadKind kind, const Vocab& vocab,
                               const FeatureSet* features) {
    Model<float> m;
    m.head = c.head;
    m.head.kind = kind;
    m.seq_len = c.max_len;
    m.vocab = vocab;
    if (encoder == "precomputed") {
        if (!features) throw ConfigError("encoder 'precomputed' needs features.dir");
        m.precomputed = true;
        m.encoder.preset = "precomputed";
        m.head.input_dim = features->train.dim();
    } else {
        m.encoder = encoder == c.encoder.preset ? c.encoder : encoder_preset(encoder);
    }
    return m;
}

struct RunOutcome {
    Model<float> model;
    TrainHistory history;
    SplitEval test;
};

inline RunOutcome run_single(const RunConfig& c, const RunData& d, const std::string& encoder, HeadKind kind,
                             std::uint64_t seed, const FeatureSet* features, const TrainOptions& opts = {}) {
    RunOutcome r{make_model(c, encoder, kind, d.vocab, features), {}, {}};
    auto tr = make_split<float>(d.splits.train, d.vocab, c.max_len);
    auto va = make_split<float>(d.splits.val, d.vocab, c.max_len);
    auto te = make_split<float>(d.splits.test, d.vocab, c.max_len);
    if (r.model.precomputed) {
        tr.features = &features->train;
        va.features = &features->val;
        te.features = &features->test;
    }
    TrainConfig tc = c.train;
    tc.seed = seed;
    r.history = train(r.model, tc, tr, va, opts);
    r.test = evaluate_split(r.model, te);
    return r;
}

inline std::string default_encoder(const RunConfig& c) { return c.features_dir.empty() ? c.encoder.preset : "precomputed"; }

// ---------------------------------------------------------------------------
// Commands

inline void cmd_generate(const SyntheticSpec& spec, const std::filesystem::path& out_path, std::ostream& out) {
    const auto examples = generate_synthetic(spec);
    save_jsonl(out_path, examples);
    out << "wrote " << examples.size() << " examples to " << out_path.string() << "\n";
}

inline void cmd_prepare(const RunConfig& c, const std::filesystem::path& data, const std::filesystem::path& out_dir,
                        std::ostream& out) {
    const auto splits = stratified_split(load_jsonl(data), c.split);
    const Vocab vocab = build_vocab(splits.train, c.min_freq);
    std::filesystem::create_directories(out_dir);
    save_jsonl(out_dir / "train.jsonl", splits.train);
    save_jsonl(out_dir / "val.jsonl", splits.val);
    save_jsonl(out_dir / "test.jsonl", splits.test);
    vocab.save(out_dir / "vocab.txt");
    out << "train " << splits.train.size() << "  val " << splits.val.size() << "  test " << splits.test.size()
        << "  vocab " << vocab.size() << "\n";
}

inline void cmd_stats(const std::filesystem::path& data, std::size_t bin_width, std::ostream& out) {
    out << to_json(corpus_stats(load_jsonl(data), bin_width)).dump(2) << "\n";
}

/// Trains one model; writes model.ckpt, history.json, metrics.json,
/// vocab.txt and config.json into the output directory.
inline RunOutcome cmd_train(const RunConfig& c, std::ostream& out) {
    const RunData d = load_run_data(c);
    std::optional<FeatureSet> features;
    if (!c.features_dir.empty()) features = load_features(c.features_dir, d.splits);
    const std::filesystem::path dir = c.out_dir;
    std::filesystem::create_directories(dir);
    TrainOptions opts;
    opts.progress = &out;
    opts.checkpoint = dir / "model.ckpt";
    auto r = run_single(c, d, default_encoder(c), c.head.kind, c.train.seed, features ? &*features : nullptr, opts);

    nlohmann::ordered_json metrics;
    metrics["split"] = "test";
    metrics["examples"] = d.splits.test.size();
    metrics["loss"] = r.test.loss;
    metrics["best_epoch"] = r.history.best_epoch;
    metrics["metrics"] = to_json(r.test.metrics);
    write_text(dir / "history.json", to_json(r.history).dump(2) + "\n");
    write_text(dir / "metrics.json", metrics.dump(2) + "\n");
    write_text(dir / "config.json", to_json(c).dump(2) + "\n");
    d.vocab.save(dir / "vocab.txt");
    out << std::fixed << std::setprecision(4) << "best epoch " << r.history.best_epoch << " (" << r.history.stop_reason
        << ")  test_acc " << r.test.metrics.accuracy << "  test_macro_f1 " << r.test.metrics.macro_f1
        << std::defaultfloat << "\n";
    return r;
}

/// Runs the encoder x head x seed grid. Completed runs are recorded in
/// manifest.json after each run, so an interrupted grid resumes where it
/// stopped. The report is always assembled from the manifest.
inline ExperimentReport cmd_experiment(const RunConfig& c, std::ostream& out) {
    const std::filesystem::path dir = c.out_dir;
    const auto manifest_path = dir / "manifest.json";
    nlohmann::ordered_json config_json = to_json(c);
    nlohmann::ordered_json manifest{{"config", config_json}, {"runs", nlohmann::ordered_json::array()}};
    if (std::filesystem::exists(manifest_path)) {
        try {
            manifest = nlohmann::ordered_json::parse(read_file_bytes(manifest_path));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(manifest_path.string() + ": " + e.what());
        }
        if (manifest.value("config", nlohmann::ordered_json()) != config_json)
            throw ConfigError(manifest_path.string() + " was written by a different configuration; use a fresh output.dir");
    }
    auto find_run = [&](const std::string& enc, const std::string& model, std::uint64_t seed) -> const nlohmann::ordered_json* {
        for (const auto& r : manifest["runs"])
            if (r["encoder"] == enc && r["model"] == model && r["seed"] == seed) return &r;
        return nullptr;
    };

    std::optional<RunData> data;
    std::optional<FeatureSet> features;
    for (const auto& enc : c.encoders) {
        for (const auto& head : c.heads) {
            const HeadKind kind = parse_head_kind(head);
            for (std::uint64_t seed : c.seeds) {
                const std::string tag = "[" + std::string(head_label(kind)) + " / " + enc + " / seed " + std::to_string(seed) + "]";
                if (find_run(enc, head_label(kind), seed)) {
                    out << tag << " already complete, skipping\n";
                    continue;
                }
                if (!data) data = load_run_data(c);
                if (enc == "precomputed" && !features) {
                    if (c.features_dir.empty()) throw ConfigError("encoder 'precomputed' needs features.dir");
                    features = load_features(c.features_dir, data->splits);
                }
                out << tag << "\n";
                TrainOptions opts;
                opts.progress = &out;
                const auto r = run_single(c, *data, enc, kind, seed, features ? &*features : nullptr, opts);
                manifest["runs"].push_back({{"encoder", enc},
                                            {"model", head_label(kind)},
                                            {"seed", seed},
                                            {"best_epoch", r.history.best_epoch},
                                            {"epochs_run", r.history.epochs.size()},
                                            {"metrics", to_json(r.test.metrics)}});
                write_text(manifest_path, manifest.dump(2) + "\n");
                out << tag << std::fixed << std::setprecision(4) << " test_acc " << r.test.metrics.accuracy
                    << "  test_macro_f1 " << r.test.metrics.macro_f1 << std::defaultfloat << "\n";
            }
        }
    }
    write_text(manifest_path, manifest.dump(2) + "\n");

    std::vector<std::string> models;
    for (const auto& h : c.heads) models.push_back(head_label(parse_head_kind(h)));
    std::vector<GridCell> cells;
    for (const auto& enc : c.encoders) {
        for (const auto& model : models) {
            GridCell cell{model, enc, {}};
            for (std::uint64_t seed : c.seeds) {
                const auto* r = find_run(enc, model, seed);
                if (!r) continue;
                SeedResult s;
                s.seed = seed;
                s.best_epoch = (*r)["best_epoch"].get<std::size_t>();
                s.epochs_run = (*r)["epochs_run"].get<std::size_t>();
                s.metrics = metrics_from_json((*r)["metrics"]);
                cell.seeds.push_back(s);
            }
            cells.push_back(std::move(cell));
        }
    }
    ExperimentReport report = experiment_report(cells, models, c.encoders);
    report.meta["early_stop_metric"] = metric_name(c.train.metric);
    report.meta["seeds"] = c.seeds;
    report.meta["max_len"] = c.max_len;
    report.meta["train"] = config_json["train"];
    write_report(dir, report);
    out << render_text(report);
    return report;
}

inline Metrics cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                            const std::optional<std::filesystem::path>& features_path, std::ostream& out) {
    auto model = load_model<float>(checkpoint);
    const auto examples = load_jsonl(data);
    auto split = make_split<float>(examples, model.vocab, model.seq_len);
    std::optional<PrecomputedEmbeddings<float>> features;
    if (model.precomputed) {
        if (!features_path) throw ConfigError("this checkpoint reads precomputed features; pass --features");
        features = load_precomputed<float>(*features_path, model.head.input_dim);
        split.features = &*features;
    }
    const auto e = evaluate_split(model, split);
    nlohmann::ordered_json j;
    j["examples"] = examples.size();
    j["loss"] = e.loss;
    j["metrics"] = to_json(e.metrics);
    out << j.dump(2) << "\n";
    return e.metrics;
}

struct Prediction {
    Polarity label = Polarity::neutral;
    std::array<double, kNumClasses> probabilities{};
};

/// `start` is a code-point offset; without it the first occurrence of the
/// aspect is used.
inline Prediction cmd_predict(const std::filesystem::path& checkpoint, const std::string& text, const std::string& aspect,
                              std::optional<std::size_t> start, std::ostream& out) {
    auto model = load_model<float>(checkpoint);
    if (model.precomputed) throw ConfigError("this checkpoint reads precomputed features and cannot predict from raw text");
    Example ex;
    if (start) {
        ex = Example{text, aspect, *start, *start + utf8::length(aspect), Polarity::neutral, std::nullopt};
        validate(ex);
    } else {
        ex = make_example(text, aspect, Polarity::neutral);
    }
    Prediction p;
    p.probabilities = predict_proba(model, encode(ex, model.vocab, model.seq_len));
    p.label = static_cast<Polarity>(std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin());
    nlohmann::ordered_json j;
    j["aspect"] = aspect;
    j["label"] = polarity_name(p.label);
    for (std::size_t k = 0; k < kNumClasses; ++k) j["probabilities"][kPolarityNames[k]] = p.probabilities[k];
    out << j.dump(2) << "\n";
    return p;
}

/// Runs a frozen encoder (initialised from train.seed) over every split and
/// writes train.feat, val.feat and test.feat. Any external encoder that
/// writes the same format plugs in through features.dir.
inline void cmd_export(const RunConfig& c, const std::filesystem::path& out_dir, std::ostream& out) {
    const RunData d = load_run_data(c);
    Model<float> m;
    m.encoder = c.encoder;
    m.seq_len = c.max_len;
    m.vocab = d.vocab;
    m.encoder.vocab_size = d.vocab.size();
    m.encoder.max_len = c.max_len;
    SeedStreams streams(c.train.seed);
    init_encoder(m.params, m.encoder, streams.init);
    std::filesystem::create_directories(out_dir);
    auto one = [&](const char* name, const std::vector<Example>& examples) {
        const auto inputs = encode_all(examples, d.vocab, c.max_len);
        std::map<std::size_t, Tensor<float>> rows;
        const std::size_t L = c.max_len, D = m.encoder.hidden;
        for (std::size_t start = 0; start < inputs.size(); start += 64) {
            const std::size_t end = std::min(inputs.size(), start + 64);
            Tape<float> tape(false);
            std::mt19937_64 unused(0);
            auto h = encode_batch(tape, m.params, m.encoder,
                                  std::span<const EncodedInput>(inputs.data() + start, end - start), false, unused);
            const auto& v = h.value().values;
            for (std::size_t b = 0; b < end - start; ++b)
                rows.emplace(start + b, Tensor<float>({L, D}, std::vector<float>(v.begin() + static_cast<std::ptrdiff_t>(b * L * D),
                                                                                   v.begin() + static_cast<std::ptrdiff_t>((b + 1) * L * D))));
        }
        export_precomputed(out_dir / (std::string(name) + ".feat"), rows);
        out << "wrote " << rows.size() << " x [" << L << " x " << D << "] features to "
            << (out_dir / (std::string(name) + ".feat")).string() << "\n";
    };
    one("train", d.splits.train);
    one("val", d.splits.val);
    one("test", d.splits.test);
}

// ---------------------------------------------------------------------------
// Exit codes

inline constexpr int kExitUsage = 64;

/// One distinct code per error family; 0 is reserved for success.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const ParseError*>(&e)) return 3;
    if (dynamic_cast<const ValidationError*>(&e)) return 4;
    if (dynamic_cast<const IoError*>(&e)) return 5;
    if (dynamic_cast<const DimensionError*>(&e)) return 6;
    if (dynamic_cast<const EncodingError*>(&e)) return 7;
    if (dynamic_cast<const StratificationError*>(&e)) return 8;
    if (dynamic_cast<const LabelError*>(&e)) return 9;
    if (dynamic_cast<const LookupError*>(&e)) return 10;
    if (dynamic_cast<const TrainingError*>(&e)) return 11;
    if (dynamic_cast<const NumericError*>(&e)) return 12;
    if (dynamic_cast<const AggregationError*>(&e)) return 13;
    if (dynamic_cast<const ReportError*>(&e)) return 14;
    if (dynamic_cast<const ContractError*>(&e)) return 15;
    if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return 5;
    return 1;
}

}  // namespace absa
