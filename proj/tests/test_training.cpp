#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <random>
#include <set>

#include "absa/dataset.hpp"
#include "absa/training.hpp"

using namespace absa;

namespace {

std::vector<Example> corpus(std::size_t n, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n = n;
    spec.seed = seed;
    return generate_synthetic(spec);
}

Model<float> tiny_model(HeadKind kind, const Vocab& vocab, std::size_t L = 32) {
    Model<float> m;
    m.encoder = encoder_preset("tiny");
    m.head.kind = kind;
    m.head.fcn_hidden = 32;
    m.head.cnn_channels = 16;
    m.seq_len = L;
    m.vocab = vocab;
    return m;
}

TrainConfig fast_config(std::uint64_t seed = 3) {
    TrainConfig c;
    c.lr = 1e-3;
    c.batch = 16;
    c.epochs = 3;
    c.patience = 2;
    c.seed = seed;
    return c;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("absa_training_" + name);
}

}  // namespace

// ---------------------------------------------------------------------------
// Early stopping

TEST(EarlyStop, PlateauStopsAfterPatienceEpochs) {
    const std::vector<double> acc{0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6};
    for (std::size_t n = 1; n < acc.size(); ++n)
        EXPECT_EQ(early_stop_check({acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(n)}, 5), StopDecision::keep_going)
            << n;
    EXPECT_EQ(early_stop_check(acc, 5), StopDecision::stop);
    EXPECT_EQ(best_index(acc, true), 1u);
}

TEST(EarlyStop, ImprovementOnLastAllowedEpochResetsCounter) {
    EXPECT_EQ(early_stop_check({0.7, 0.6, 0.6, 0.6, 0.6, 0.8}, 5), StopDecision::keep_going);
    EXPECT_EQ(early_stop_check({0.7, 0.6, 0.6, 0.6, 0.6, 0.7}, 5), StopDecision::stop);
}

TEST(EarlyStop, LossMetricPrefersLowerValues) {
    EXPECT_EQ(early_stop_check({1.0, 0.9, 0.95, 0.91}, 2, false), StopDecision::stop);
    EXPECT_EQ(early_stop_check({1.0, 0.9, 0.95, 0.89}, 2, false), StopDecision::keep_going);
    EXPECT_EQ(best_index({1.0, 0.5, 0.5}, false), 1u);
}

TEST(EarlyStop, EmptyHistoryIsAContractViolation) {
    EXPECT_THROW(early_stop_check(std::vector<double>{}, 3), ContractError);
}

TEST(TrainConfig, RejectsInvalidSettings) {
    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        return c;
    };
    EXPECT_NO_THROW(TrainConfig{}.validate());
    EXPECT_THROW(bad([](TrainConfig& c) { c.lr = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.batch = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.dropout = 1.0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.patience = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](TrainConfig& c) { c.patience = 21; }).validate(), ConfigError);
    EXPECT_THROW(parse_stop_metric("val_recall"), ConfigError);
    EXPECT_EQ(parse_stop_metric("val_macro_f1"), StopMetric::val_macro_f1);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Training, EmptySplitIsAConfigError) {
    const auto data = corpus(40, 1);
    const Vocab vocab = build_vocab(data, 1);
    auto m = tiny_model(HeadKind::fcn, vocab);
    const auto train_split = make_split<float>(data, vocab, 32);
    const SplitData<float> empty;
    EXPECT_THROW(train(m, fast_config(), train_split, empty), ConfigError);
    EXPECT_THROW(train(m, fast_config(), empty, train_split), ConfigError);
}

TEST(Training, EveryEpochVisitsEachExampleExactlyOnce) {
    const auto data = corpus(70, 2);
    const Vocab vocab = build_vocab(data, 1);
    auto m = tiny_model(HeadKind::fcn, vocab);
    const auto split = make_split<float>(data, vocab, 32);
    auto cfg = fast_config();
    cfg.early_stopping = false;
    cfg.epochs = 2;
    std::map<std::size_t, std::vector<std::size_t>> seen;
    std::map<std::size_t, std::vector<std::size_t>> sizes;
    TrainOptions opts;
    opts.on_batch = [&](std::size_t epoch, std::span<const std::size_t> b) {
        seen[epoch].insert(seen[epoch].end(), b.begin(), b.end());
        sizes[epoch].push_back(b.size());
    };
    train(m, cfg, split, split, opts);
    ASSERT_EQ(seen.size(), 2u);
    for (auto& [epoch, idx] : seen) {
        std::vector<std::size_t> sorted = idx;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> expected(70);
        std::iota(expected.begin(), expected.end(), 0);
        EXPECT_EQ(sorted, expected) << "epoch " << epoch;
        EXPECT_EQ(sizes[epoch], (std::vector<std::size_t>{16, 16, 16, 16, 6}));
    }
    EXPECT_NE(seen[1], seen[2]) << "each epoch reshuffles";
}

TEST(Training, OverfitsSmallSetWithEveryHead) {
    const auto data = corpus(32, 5);
    const Vocab vocab = build_vocab(data, 1);
    const auto split = make_split<float>(data, vocab, 32);
    for (HeadKind kind : {HeadKind::fcn, HeadKind::cnn, HeadKind::gcn}) {
        auto m = tiny_model(kind, vocab);
        TrainConfig cfg;
        cfg.lr = 1e-3;
        cfg.epochs = 200;
        cfg.early_stopping = false;
        cfg.dropout = 0.0;
        cfg.seed = 11;
        const auto h = train(m, cfg, split, split);
        EXPECT_DOUBLE_EQ(h.epochs[h.best_epoch - 1].val_accuracy, 1.0) << head_label(kind);
        EXPECT_DOUBLE_EQ(evaluate_split(m, split).metrics.accuracy, 1.0) << head_label(kind);

        // 5-epoch means of the training loss never rise across a 20-epoch window
        std::vector<double> smooth;
        for (std::size_t e = 4; e < h.epochs.size(); ++e) {
            double s = 0.0;
            for (std::size_t k = e - 4; k <= e; ++k) s += h.epochs[k].train_loss;
            smooth.push_back(s / 5.0);
        }
        for (std::size_t t = 0; t + 20 < smooth.size(); ++t)
            EXPECT_LE(smooth[t + 20], smooth[t]) << head_label(kind) << " window at epoch " << t + 5;
    }
}

TEST(Training, SameSeedGivesIdenticalHistoryAndParameters) {
    const auto data = corpus(80, 3);
    const Vocab vocab = build_vocab(data, 1);
    const auto splits = stratified_split(data, SplitSpec{});
    const auto tr = make_split<float>(splits.train, vocab, 32);
    const auto va = make_split<float>(splits.val, vocab, 32);
    auto a = tiny_model(HeadKind::cnn, vocab);
    auto b = tiny_model(HeadKind::cnn, vocab);
    const auto ha = train(a, fast_config(9), tr, va);
    const auto hb = train(b, fast_config(9), tr, va);
    EXPECT_EQ(to_json(ha, false).dump(), to_json(hb, false).dump());
    for (const auto& [name, t] : a.params) EXPECT_EQ(t.values, b.params[name].values) << name;

    auto c = tiny_model(HeadKind::cnn, vocab);
    const auto hc = train(c, fast_config(10), tr, va);
    EXPECT_NE(to_json(ha, false).dump(), to_json(hc, false).dump());
}

TEST(Training, DropoutDrawsDoNotDisturbInitOrShuffle) {
    const auto data = corpus(48, 4);
    const Vocab vocab = build_vocab(data, 1);
    const auto split = make_split<float>(data, vocab, 32);
    auto run = [&](double dropout) {
        auto m = tiny_model(HeadKind::fcn, vocab);
        SeedStreams streams(21);
        init_model(m, streams.init);
        auto initial = m.params.snapshot();
        auto cfg = fast_config(21);
        cfg.dropout = dropout;
        cfg.early_stopping = false;
        cfg.epochs = 2;
        std::vector<std::size_t> order;
        TrainOptions opts;
        opts.on_batch = [&](std::size_t, std::span<const std::size_t> b) { order.insert(order.end(), b.begin(), b.end()); };
        train(m, cfg, split, split, opts);
        return std::make_pair(std::move(initial), order);
    };
    auto [init_a, order_a] = run(0.0);
    auto [init_b, order_b] = run(0.5);
    EXPECT_EQ(order_a, order_b);
    for (const auto& [name, t] : init_a) EXPECT_EQ(t.values, init_b[name].values) << name;
}

TEST(Training, RestoresBestEpochParameters) {
    const auto data = corpus(90, 6);
    const Vocab vocab = build_vocab(data, 1);
    const auto splits = stratified_split(data, SplitSpec{});
    const auto tr = make_split<float>(splits.train, vocab, 32);
    const auto va = make_split<float>(splits.val, vocab, 32);
    auto m = tiny_model(HeadKind::fcn, vocab);
    auto cfg = fast_config(4);
    cfg.epochs = 6;
    cfg.metric = StopMetric::val_loss;
    const auto h = train(m, cfg, tr, va);
    ASSERT_GE(h.best_epoch, 1u);
    EXPECT_EQ(h.stop_reason, h.epochs.size() < cfg.epochs ? "early_stopped" : "completed");
    const auto& best = h.epochs[h.best_epoch - 1];
    for (const auto& e : h.epochs) EXPECT_GE(e.val_loss, best.val_loss);
    const auto now = evaluate_split(m, va);
    EXPECT_NEAR(now.loss, best.val_loss, 1e-9);
    EXPECT_DOUBLE_EQ(now.metrics.accuracy, best.val_accuracy);
}

TEST(Training, NonFiniteParameterAbortsNamingTheBatch) {
    const auto data = corpus(40, 7);
    const Vocab vocab = build_vocab(data, 1);
    const auto split = make_split<float>(data, vocab, 32);
    auto m = tiny_model(HeadKind::fcn, vocab);
    SeedStreams streams(1);
    init_model(m, streams.init);
    m.params["head/fcn/output/weight"].values[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train(m, fast_config(), split, split);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos) << e.what();
    }
}

TEST(Training, HistoryJsonListsEveryEpoch) {
    const auto data = corpus(40, 8);
    const Vocab vocab = build_vocab(data, 1);
    const auto split = make_split<float>(data, vocab, 32);
    auto m = tiny_model(HeadKind::gcn, vocab);
    auto cfg = fast_config();
    cfg.early_stopping = false;
    cfg.epochs = 2;
    std::ostringstream progress;
    TrainOptions opts;
    opts.progress = &progress;
    const auto h = train(m, cfg, split, split, opts);
    const auto j = to_json(h);
    ASSERT_EQ(j["epochs"].size(), 2u);
    EXPECT_EQ(j["metric"], "val_accuracy");
    EXPECT_EQ(j["stop_reason"], "completed");
    EXPECT_TRUE(j["epochs"][0].contains("timestamp"));
    EXPECT_FALSE(to_json(h, false)["epochs"][0].contains("timestamp"));
    EXPECT_NE(progress.str().find("epoch 2/2"), std::string::npos);
}

TEST(Training, CheckpointRoundTripReproducesPredictions) {
    const auto data = corpus(60, 9);
    const Vocab vocab = build_vocab(data, 1);
    const auto split = make_split<float>(data, vocab, 32);
    for (HeadKind kind : {HeadKind::fcn, HeadKind::cnn, HeadKind::gcn}) {
        auto m = tiny_model(kind, vocab);
        const auto path = temp_path(std::string("ckpt_") + head_name(kind) + ".bin");
        auto cfg = fast_config();
        cfg.epochs = 2;
        cfg.early_stopping = false;
        TrainOptions opts;
        opts.checkpoint = path;
        const auto h = train(m, cfg, split, split, opts);
        auto loaded = load_model<float>(path);
        EXPECT_EQ(loaded.vocab, vocab);
        EXPECT_EQ(loaded.head.kind, kind);
        const auto a = evaluate_split(m, split);
        const auto b = evaluate_split(loaded, split);
        EXPECT_EQ(a.predictions, b.predictions);
        EXPECT_EQ(a.loss, b.loss);
        EXPECT_EQ(a.metrics.confusion, b.metrics.confusion);
        EXPECT_DOUBLE_EQ(b.metrics.accuracy, h.epochs[h.best_epoch - 1].val_accuracy);
        const auto p = predict_proba(loaded, split.inputs[0]);
        EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-6);
        std::filesystem::remove(path);
    }
}

TEST(Training, LoadingANonModelCheckpointFails) {
    Checkpoint<float> c;
    c.meta["kind"] = "something-else";
    EXPECT_THROW(model_from_checkpoint(c), ParseError);
    EXPECT_THROW(model_from_checkpoint(Checkpoint<float>{}), ParseError);
}

TEST(Training, PrecomputedFeaturesTrainOnlyTheHead) {
    // features carry the label in one channel at the aspect positions
    const auto data = corpus(60, 10);
    const Vocab vocab = build_vocab(data, 1);
    auto split = make_split<float>(data, vocab, 16);
    const std::size_t D = 8, L = 16;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.1);
    std::map<std::size_t, Tensor<float>> rows;
    for (std::size_t i = 0; i < split.size(); ++i) {
        Tensor<float> t({L, D});
        for (auto& v : t.values) v = static_cast<float>(noise(rng));
        for (std::size_t p = 0; p < L; ++p)
            if (split.inputs[i].pad_mask[p]) t.values[p * D + split.labels[i]] += 1.0f;
        rows.emplace(i, std::move(t));
    }
    const PrecomputedEmbeddings<float> feats(std::move(rows), D, L);
    split.features = &feats;

    Model<float> m;
    m.precomputed = true;
    m.seq_len = L;
    m.vocab = vocab;
    m.head.kind = HeadKind::fcn;
    m.head.input_dim = D;
    m.head.fcn_hidden = 16;
    auto cfg = fast_config();
    cfg.lr = 1e-2;
    cfg.epochs = 15;
    cfg.early_stopping = false;
    train(m, cfg, split, split);
    for (const auto& [name, t] : m.params) EXPECT_EQ(name.rfind("head/", 0), 0u) << name;
    EXPECT_EQ(evaluate_split(m, split).metrics.accuracy, 1.0);

    SplitData<float> no_features = split;
    no_features.features = nullptr;
    EXPECT_THROW(evaluate_split(m, no_features), ConfigError);
}
