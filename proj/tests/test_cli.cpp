#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "absa/cli.hpp"

using namespace absa;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("absa_cli_") + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    // a small, fast grid configuration on a generated corpus
    std::vector<std::string> fast(const std::string& out_dir) const {
        return {"--set", "data.synthetic_n=90",  "--set", "tokenizer.max_len=24", "--set", "train.lr=1e-3",
                "--set", "train.epochs=2",       "--set", "train.patience=1",     "--set", "head.fcn_hidden=16",
                "--set", "head.cnn_channels=8",  "--set", "output.dir=" + path(out_dir)};
    }

    static std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    }

    fs::path dir;
};

}  // namespace

TEST_F(CliTest, HelpListsEveryFlag) {
    auto top = run({"--help"});
    EXPECT_EQ(top.code, 0);
    for (const char* s : {"--config", "--set", "prepare", "stats", "train", "experiment", "evaluate", "predict", "generate", "export"})
        EXPECT_NE(top.out.find(s), std::string::npos) << s;
    auto pred = run({"predict", "--help"});
    EXPECT_EQ(pred.code, 0);
    for (const char* s : {"--checkpoint", "--text", "--aspect", "--start"}) EXPECT_NE(pred.out.find(s), std::string::npos) << s;
    auto stats = run({"stats", "--help"});
    for (const char* s : {"--data", "--bin-width"}) EXPECT_NE(stats.out.find(s), std::string::npos) << s;
}

TEST_F(CliTest, UnknownFlagsAndMissingSubcommandAreRejected) {
    EXPECT_EQ(run({"train", "--bogus"}).code, kExitUsage);
    EXPECT_EQ(run({"--verbose", "train"}).code, kExitUsage);
    EXPECT_EQ(run({}).code, kExitUsage);
    EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
}

TEST_F(CliTest, ExitCodesAreDistinctPerErrorFamily) {
    std::vector<int> codes{exit_code_for(ConfigError("")),     exit_code_for(ParseError("")),
                           exit_code_for(ValidationError("")), exit_code_for(IoError("")),
                           exit_code_for(DimensionError("")),  exit_code_for(EncodingError("")),
                           exit_code_for(StratificationError("")), exit_code_for(LabelError("")),
                           exit_code_for(LookupError("")),     exit_code_for(TrainingError("")),
                           exit_code_for(NumericError("")),    exit_code_for(AggregationError("")),
                           exit_code_for(ReportError("")),     exit_code_for(ContractError(""))};
    std::set<int> unique(codes.begin(), codes.end());
    EXPECT_EQ(unique.size(), codes.size());
    EXPECT_EQ(unique.count(0), 0u);
    EXPECT_EQ(unique.count(kExitUsage), 0u);
}

TEST_F(CliTest, PrepareSplitsBalancedCorpus70_15_15) {
    std::vector<Example> data;
    for (int i = 0; i < 100; ++i) {
        const auto label = static_cast<Polarity>(i % 3);
        data.push_back(make_example("w" + std::to_string(i) + " the vaccine works", "vaccine", label));
    }
    save_jsonl(path("data.jsonl"), data);
    auto r = run({"prepare", "--data", path("data.jsonl"), "--out", path("prep")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_jsonl(path("prep/train.jsonl")).size(), 70u);
    EXPECT_EQ(load_jsonl(path("prep/val.jsonl")).size(), 15u);
    EXPECT_EQ(load_jsonl(path("prep/test.jsonl")).size(), 15u);
    const auto vocab = Vocab::load(path("prep/vocab.txt"));
    EXPECT_TRUE(vocab.contains("vaccine"));

    ASSERT_EQ(run({"prepare", "--data", path("data.jsonl"), "--out", path("prep2")}).code, 0);
    for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt"})
        EXPECT_EQ(slurp(dir / "prep" / f), slurp(dir / "prep2" / f)) << f;
}

TEST_F(CliTest, VocabularyComesFromTrainingSplitOnly) {
    ASSERT_EQ(run({"generate", "--n", "200", "--out", path("data.jsonl")}).code, 0);
    ASSERT_EQ(run({"prepare", "--data", path("data.jsonl"), "--out", path("prep")}).code, 0);
    EXPECT_EQ(Vocab::load(path("prep/vocab.txt")), build_vocab(load_jsonl(path("prep/train.jsonl")), 1));
}

TEST_F(CliTest, CorruptLineReportsLineNumber) {
    std::ofstream(path("bad.jsonl")) << to_json(make_example("a vaccine", "vaccine", Polarity::positive)).dump() << "\n"
                                     << "{not json\n";
    auto r = run({"prepare", "--data", path("bad.jsonl"), "--out", path("prep")});
    EXPECT_EQ(r.code, exit_code_for(ParseError("")));
    EXPECT_NE(r.err.find("bad.jsonl:2"), std::string::npos) << r.err;
}

TEST_F(CliTest, StatsOfEmptyCorpusIsAZeroReport) {
    std::ofstream(path("empty.jsonl")).flush();
    auto r = run({"stats", "--data", path("empty.jsonl")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["examples"], 0);
    EXPECT_EQ(j["label_counts"]["neutral"], 0);
    EXPECT_EQ(j["mean_length"], 0.0);
}

TEST_F(CliTest, ConfigFileOverridesAndEnvironment) {
    std::ofstream(path("run.ini")) << "[train]\nlr = 0.001\nepochs = 7\npatience = 3\n\n[head]\nkind = gcn\n\n"
                                      "[experiment]\nseeds = 4, 5\nencoders = tiny, small\n";
    auto c = load_run_config(fs::path(path("run.ini")), {"train.epochs=9"});
    EXPECT_DOUBLE_EQ(c.train.lr, 1e-3);
    EXPECT_EQ(c.train.epochs, 9u) << "flags win over the file";
    EXPECT_EQ(c.head.kind, HeadKind::gcn);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
    EXPECT_EQ(c.encoders, (std::vector<std::string>{"tiny", "small"}));

    ::setenv(kConfigEnvVar, path("run.ini").c_str(), 1);
    EXPECT_EQ(load_run_config(std::nullopt).train.epochs, 7u);
    ::unsetenv(kConfigEnvVar);
    EXPECT_EQ(load_run_config(std::nullopt).train.epochs, 20u);

    EXPECT_THROW(load_run_config(std::nullopt, {"train.lrate=1"}), ConfigError);
    EXPECT_THROW(load_run_config(std::nullopt, {"train.lr=fast"}), ConfigError);
    EXPECT_THROW(load_run_config(std::nullopt, {"trainlr"}), ConfigError);
    EXPECT_THROW(load_run_config(std::nullopt, {"experiment.seeds="}), ConfigError);
    EXPECT_THROW(load_run_config(fs::path(path("missing.ini"))), IoError);
    std::ofstream(path("broken.ini")) << "[train\nlr = 1\n";
    EXPECT_THROW(load_run_config(fs::path(path("broken.ini"))), ParseError);
}

TEST_F(CliTest, PresetThenExplicitSizes) {
    auto c = load_run_config(std::nullopt, {"encoder.hidden=32", "encoder.preset=small"});
    EXPECT_EQ(c.encoder.layers, 4u);
    EXPECT_EQ(c.encoder.hidden, 32u);
    EXPECT_THROW(load_run_config(std::nullopt, {"encoder.preset=gpt"}), ConfigError);
}

TEST_F(CliTest, InvalidPresetIsAConfigurationExit) {
    auto r = run(concat(fast("out"), {"--set", "encoder.preset=huge", "train"}));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("huge"), std::string::npos);
}

TEST_F(CliTest, TrainWritesArtifactsAndIsReproducible) {
    auto a = run(concat(fast("a"), {"train"}));
    ASSERT_EQ(a.code, 0) << a.err;
    for (const char* f : {"model.ckpt", "history.json", "metrics.json", "config.json", "vocab.txt"})
        EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_NE(a.out.find("epoch 1/2"), std::string::npos);
    auto b = run(concat(fast("b"), {"train"}));
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(slurp(dir / "a" / "metrics.json"), slurp(dir / "b" / "metrics.json"));
    EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
    auto strip = [](nlohmann::json j) {
        for (auto& e : j["epochs"]) e.erase("timestamp");
        return j;
    };
    EXPECT_EQ(strip(nlohmann::json::parse(slurp(dir / "a" / "history.json"))),
              strip(nlohmann::json::parse(slurp(dir / "b" / "history.json"))));

    auto ev = run({"evaluate", "--checkpoint", path("a/model.ckpt"), "--data", path("a_missing.jsonl")});
    EXPECT_EQ(ev.code, exit_code_for(IoError("")));
}

TEST_F(CliTest, PredictReturnsNormalisedProbabilities) {
    ASSERT_EQ(run(concat(fast("m"), {"train"})).code, 0);
    const std::string text =
        "Today's best moment was watching a new patient in the waiting room read her son his new book after she got "
        "her first COVID vaccine. Thank you @rorcarolinas";
    auto r = run({"predict", "--checkpoint", path("m/model.ckpt"), "--text", text, "--aspect", "COVID vaccine"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    const double sum = j["probabilities"]["negative"].get<double>() + j["probabilities"]["neutral"].get<double>() +
                       j["probabilities"]["positive"].get<double>();
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_TRUE(parse_polarity(j["label"].get<std::string>()).has_value());

    auto with_span = run({"predict", "--checkpoint", path("m/model.ckpt"), "--text", text, "--aspect", "COVID vaccine",
                          "--start", "117"});
    ASSERT_EQ(with_span.code, 0) << with_span.err;
    EXPECT_EQ(with_span.out, r.out);
    auto bad = run({"predict", "--checkpoint", path("m/model.ckpt"), "--text", text, "--aspect", "COVID vaccine",
                    "--start", "3"});
    EXPECT_EQ(bad.code, exit_code_for(ValidationError("")));
    auto past_end = run({"predict", "--checkpoint", path("m/model.ckpt"), "--text", "short", "--aspect", "short",
                         "--start", "4"});
    EXPECT_EQ(past_end.code, exit_code_for(ValidationError("")));
}

TEST_F(CliTest, EvaluateMatchesTrainingMetrics) {
    ASSERT_EQ(run(concat(fast("m"), {"--set", "head.kind=cnn", "train"})).code, 0);
    // the same generated corpus, written out and split with the same spec
    ASSERT_EQ(run({"generate", "--n", "90", "--out", path("data.jsonl")}).code, 0);
    ASSERT_EQ(run({"prepare", "--data", path("data.jsonl"), "--out", path("prep")}).code, 0);
    auto r = run({"evaluate", "--checkpoint", path("m/model.ckpt"), "--data", path("prep/test.jsonl")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto got = nlohmann::json::parse(r.out);
    const auto expected = nlohmann::json::parse(slurp(dir / "m" / "metrics.json"));
    EXPECT_EQ(got["metrics"], expected["metrics"]);
    EXPECT_EQ(got["loss"], expected["loss"]);
}

TEST_F(CliTest, ExperimentSingleCellGivesOneRow) {
    auto r = run(concat(fast("x"), {"--set", "experiment.heads=cnn", "--set", "experiment.seeds=1,2", "experiment"}));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = report_from_json(nlohmann::json::parse(slurp(dir / "x" / "report.json")));
    ASSERT_EQ(report.rows.size(), 1u);
    EXPECT_EQ(report.rows[0].model, "CNN");
    EXPECT_EQ(report.rows[0].seeds.size(), 2u);
    EXPECT_EQ(render_text(report), slurp(dir / "x" / "report.txt"));
    EXPECT_EQ(report.meta["early_stop_metric"], "val_accuracy");
}

TEST_F(CliTest, ExperimentFullGridGivesSixRowsEncodersOutermost) {
    auto r = run(concat(fast("g"), {"--set", "experiment.encoders=tiny,small", "--set", "experiment.seeds=1,2",
                                    "--set", "data.synthetic_n=45", "--set", "train.epochs=1", "experiment"}));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = report_from_json(nlohmann::json::parse(slurp(dir / "g" / "report.json")));
    ASSERT_EQ(report.rows.size(), 6u);
    const std::vector<std::pair<std::string, std::string>> order{{"FCN", "tiny"},  {"CNN", "tiny"},  {"GCN", "tiny"},
                                                                 {"FCN", "small"}, {"CNN", "small"}, {"GCN", "small"}};
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(report.rows[i].model, order[i].first);
        EXPECT_EQ(report.rows[i].encoder, order[i].second);
    }
}

TEST_F(CliTest, ExperimentResumesFromManifestAndIsByteIdentical) {
    const auto args = concat(fast("r"), {"--set", "experiment.heads=fcn,gcn", "--set", "experiment.seeds=3,4", "experiment"});
    ASSERT_EQ(run(args).code, 0);
    const std::string full = slurp(dir / "r" / "report.json");

    // drop the last two completed runs, as if the process had been killed
    auto manifest = nlohmann::ordered_json::parse(slurp(dir / "r" / "manifest.json"));
    ASSERT_EQ(manifest["runs"].size(), 4u);
    manifest["runs"].erase(manifest["runs"].begin() + 2, manifest["runs"].end());
    std::ofstream(dir / "r" / "manifest.json") << manifest.dump(2);
    fs::remove(dir / "r" / "report.json");

    auto resumed = run(args);
    ASSERT_EQ(resumed.code, 0) << resumed.err;
    EXPECT_NE(resumed.out.find("[FCN / tiny / seed 3] already complete"), std::string::npos);
    EXPECT_EQ(resumed.out.find("[GCN / tiny / seed 4] already complete"), std::string::npos);
    EXPECT_EQ(slurp(dir / "r" / "report.json"), full);

    // a second, independent run in a fresh directory
    auto other = concat(fast("r2"), {"--set", "experiment.heads=fcn,gcn", "--set", "experiment.seeds=3,4", "experiment"});
    ASSERT_EQ(run(other).code, 0);
    auto a = nlohmann::json::parse(full), b = nlohmann::json::parse(slurp(dir / "r2" / "report.json"));
    EXPECT_EQ(a["rows"], b["rows"]);

    // a manifest from another configuration is not silently reused
    auto changed = concat(fast("r"), {"--set", "experiment.heads=fcn,gcn", "--set", "experiment.seeds=3,4",
                                      "--set", "train.lr=2e-3", "experiment"});
    EXPECT_EQ(run(changed).code, exit_code_for(ConfigError("")));
}

TEST_F(CliTest, ExportThenTrainOnPrecomputedFeatures) {
    auto base = fast("p");
    ASSERT_EQ(run(concat(base, {"export", "--out", path("feats")})).code, 0);
    for (const char* f : {"train.feat", "val.feat", "test.feat"}) EXPECT_TRUE(fs::exists(dir / "feats" / f)) << f;
    auto r = run(concat(base, {"--set", "features.dir=" + path("feats"), "train"}));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto model = load_model<float>(dir / "p" / "model.ckpt");
    EXPECT_TRUE(model.precomputed);
    for (const auto& [name, t] : model.params) EXPECT_EQ(name.rfind("head/", 0), 0u) << name;

    auto pred = run({"predict", "--checkpoint", path("p/model.ckpt"), "--text", "a b", "--aspect", "a"});
    EXPECT_EQ(pred.code, exit_code_for(ConfigError("")));
    auto wrong_len = run(concat(base, {"--set", "features.dir=" + path("feats"), "--set", "tokenizer.max_len=20",
                                       "--set", "output.dir=" + path("p2"), "train"}));
    EXPECT_EQ(wrong_len.code, exit_code_for(DimensionError("")));
}

TEST(Samples, ConfigsAndCorpusLoad) {
    const fs::path samples = ABSA_SAMPLES_DIR;
    std::size_t configs = 0;
    for (const auto& entry : fs::directory_iterator(samples)) {
        if (entry.path().extension() != ".ini") continue;
        EXPECT_NO_THROW(load_run_config(entry.path(), {})) << entry.path();
        ++configs;
    }
    EXPECT_GE(configs, 3u);
    const auto tweets = load_jsonl(samples / "tweets.jsonl");
    ASSERT_EQ(tweets.size(), 5u);
    EXPECT_EQ(tweets[0].aspect, "COVID vaccine");
    EXPECT_EQ(tweets[0].aspect_start, 117u);
    EXPECT_EQ(tweets[0].label, Polarity::neutral);
}
