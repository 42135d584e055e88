#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "absa/tokenizer.hpp"

using namespace absa;

namespace {

Example ex(std::string text, std::string aspect) { return make_example(std::move(text), std::move(aspect), Polarity::neutral); }

std::vector<int> as_ints(const std::vector<std::uint8_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

// ---------------------------------------------------------------- tokenize

TEST(Tokenize, LowercasesAndSplitsPunctuation) {
    EXPECT_EQ(token_strings("Thank you @DurhamHealthNC, vaccine!"),
              (std::vector<std::string>{"thank", "you", "@", "durhamhealthnc", ",", "vaccine", "!"}));
}

TEST(Tokenize, SpansAreCodePointOffsets) {
    auto toks = tokenize("caf\xC3\xA9  Vax.");
    ASSERT_EQ(toks.size(), 3u);
    EXPECT_EQ(toks[0], (Token{"caf\xC3\xA9", 0, 4}));
    EXPECT_EQ(toks[1], (Token{"vax", 6, 9}));
    EXPECT_EQ(toks[2], (Token{".", 9, 10}));
}

TEST(Tokenize, UnicodeWhitespaceSplits) {
    EXPECT_EQ(token_strings("a\xC2\xA0" "b\xE3\x80\x80" "c"), (std::vector<std::string>{"a", "b", "c"}));
}

// ---------------------------------------------------------------- vocab

TEST(BuildVocab, FrequencyThenLexicographicAfterReserved) {
    auto v = build_vocab({"a b", "a"}, 1);
    EXPECT_EQ(v.size(), 6u);
    EXPECT_EQ(v.id("[PAD]"), 0u);
    EXPECT_EQ(v.id("[UNK]"), 1u);
    EXPECT_EQ(v.id("[CLS]"), 2u);
    EXPECT_EQ(v.id("[SEP]"), 3u);
    EXPECT_EQ(v.id("a"), 4u);
    EXPECT_EQ(v.id("b"), 5u);
}

TEST(BuildVocab, TiesBrokenLexicographically) {
    auto v = build_vocab({"zeta alpha mid", "mid"}, 1);
    EXPECT_EQ(v.id("mid"), 4u);
    EXPECT_EQ(v.id("alpha"), 5u);
    EXPECT_EQ(v.id("zeta"), 6u);
}

TEST(BuildVocab, BelowMinFreqMapsToUnk) {
    auto v = build_vocab({"a b", "a"}, 3);
    EXPECT_EQ(v.size(), 4u);
    EXPECT_EQ(v.id("a"), Vocab::kUnk);
    EXPECT_EQ(v.id("b"), Vocab::kUnk);
}

TEST(BuildVocab, DeterministicAcrossBuilds) {
    auto corpus = generate_synthetic(300, 100, 4);
    EXPECT_EQ(build_vocab(corpus, 2).serialize(), build_vocab(corpus, 2).serialize());
}

TEST(BuildVocab, EmptyCorpusIsConfigError) {
    EXPECT_THROW(build_vocab(std::vector<std::string>{}, 1), ConfigError);
}

TEST(VocabFile, ReloadsBitExactly) {
    auto corpus = generate_synthetic(200, 60, 8);
    auto v = build_vocab(corpus, 2);
    const auto path = std::filesystem::path(testing::TempDir()) / "vocab.txt";
    v.save(path);
    auto w = Vocab::load(path);
    EXPECT_EQ(v, w);
    std::ifstream in(path, std::ios::binary);
    std::string disk((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(w.serialize(), disk);
    EXPECT_EQ(disk.substr(0, 27), "#absa-vocab v1 min_freq=2 s");
}

TEST(VocabFile, CorruptFilesRejected) {
    EXPECT_THROW(Vocab::parse("a\t0\n"), ParseError);
    EXPECT_THROW(Vocab::parse("#absa-vocab v1 min_freq=1 size=4\n[PAD]\t0\n[UNK]\t1\n[CLS]\t2\n[SEP]\t4\n"), ParseError);
    EXPECT_THROW(Vocab::parse("#absa-vocab v1 min_freq=1 size=5\n[PAD]\t0\n[UNK]\t1\n[CLS]\t2\n[SEP]\t3\n"), ParseError);
    EXPECT_THROW(Vocab::parse("#absa-vocab v1 min_freq=1 size=4\nx\t0\n[UNK]\t1\n[CLS]\t2\n[SEP]\t3\n"), ParseError);
    EXPECT_NO_THROW(Vocab::parse("#absa-vocab v1 min_freq=1 size=4\n[PAD]\t0\n[UNK]\t1\n[CLS]\t2\n[SEP]\t3\n"));
}

// ---------------------------------------------------------------- encode

TEST(Encode, HandTokenizedPairLayout) {
    auto v = build_vocab({"good vaccine today"}, 1);
    const std::size_t g = v.id("good"), vac = v.id("vaccine"), t = v.id("today");
    auto e = ex("good vaccine today", "vaccine");
    ASSERT_EQ(e.aspect_start, 5u);
    ASSERT_EQ(e.aspect_end, 12u);
    auto enc = encode(e, v, 10);
    EXPECT_EQ(enc.ids, (std::vector<std::size_t>{2, g, vac, t, 3, vac, 3, 0, 0, 0}));
    EXPECT_EQ(as_ints(enc.segment), (std::vector<int>{0, 0, 0, 0, 0, 1, 1, 0, 0, 0}));
    EXPECT_EQ(as_ints(enc.aspect_mask), (std::vector<int>{0, 0, 1, 0, 0, 0, 0, 0, 0, 0}));
    EXPECT_EQ(as_ints(enc.pad_mask), (std::vector<int>{1, 1, 1, 1, 1, 1, 1, 0, 0, 0}));
}

TEST(Encode, AspectIsWholeSentence) {
    auto v = build_vocab({"covid vaccine"}, 1);
    auto enc = encode(ex("covid vaccine", "covid vaccine"), v, 8);
    EXPECT_EQ(as_ints(enc.aspect_mask), (std::vector<int>{0, 1, 1, 0, 0, 0, 0, 0}));
    // every sentence position that is not padding carries the mask
    for (std::size_t i = 1; i <= enc.sentence_len; ++i) EXPECT_EQ(enc.aspect_mask[i], enc.pad_mask[i]);
}

TEST(Encode, PartialTokenOverlapMarksToken) {
    // aspect "vacc" covers part of the token "vaccines"
    Example e{"new vaccines here", "vacc", 4, 8, Polarity::positive, std::nullopt};
    auto v = build_vocab({"new vaccines here vacc"}, 1);
    auto enc = encode(e, v, 12);
    EXPECT_EQ(as_ints(enc.aspect_mask), (std::vector<int>{0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(Encode, LeftContextTruncatedFirst) {
    // 5 left words, aspect, 2 right words, aspect segment: 5+1+2+1+3 = 12 > 8
    auto v = build_vocab({"l1 l2 l3 l4 l5 vax r1 r2"}, 1);
    auto enc = encode(ex("l1 l2 l3 l4 l5 vax r1 r2", "vax"), v, 8);
    auto d = decode(enc, v);
    EXPECT_EQ(d.sentence, (std::vector<std::string>{"l5", "vax", "r1", "r2"}));
    EXPECT_EQ(d.aspect, (std::vector<std::string>{"vax"}));
    EXPECT_EQ(as_ints(enc.aspect_mask), (std::vector<int>{0, 0, 1, 0, 0, 0, 0, 0}));
}

TEST(Encode, RightContextTruncatedAfterLeftIsGone) {
    auto v = build_vocab({"l1 vax r1 r2 r3 r4"}, 1);
    auto d = decode(encode(ex("l1 vax r1 r2 r3 r4", "vax"), v, 7), v);
    EXPECT_EQ(d.sentence, (std::vector<std::string>{"vax", "r1", "r2"}));
}

TEST(Encode, LongAspectKeepsAtLeastOneTokenPerCopy) {
    auto v = build_vocab({"a b c d e"}, 1);
    auto enc = encode(ex("a b c d e", "a b c d e"), v, 6);
    auto d = decode(enc, v);
    EXPECT_EQ(d.aspect, (std::vector<std::string>{"a"}));
    EXPECT_EQ(d.sentence, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(as_ints(enc.aspect_mask), (std::vector<int>{0, 1, 1, 0, 0, 0}));
}

TEST(Encode, AspectThatCannotFitIsEncodingError) {
    auto v = build_vocab({"a b"}, 1);
    EXPECT_THROW(encode(ex("a b", "b"), v, 4), EncodingError);
    Example blank{"a   b", " ", 1, 2, Polarity::neutral, std::nullopt};
    EXPECT_THROW(encode(blank, v, 16), EncodingError);
}

TEST(Encode, SegmentIdsZeroBeforeFirstSepOneBetween) {
    auto corpus = generate_synthetic(300, 80, 17);
    auto v = build_vocab(corpus, 1);
    for (const auto& e : corpus) {
        auto enc = encode(e, v, 16);
        const std::size_t sep1 = enc.first_sep();
        ASSERT_EQ(enc.ids[sep1], Vocab::kSep);
        const std::size_t sep2 = sep1 + enc.aspect_len + 1;
        ASSERT_EQ(enc.ids[sep2], Vocab::kSep);
        for (std::size_t i = 0; i <= sep1; ++i) EXPECT_EQ(enc.segment[i], 0);
        for (std::size_t i = sep1 + 1; i <= sep2; ++i) EXPECT_EQ(enc.segment[i], 1);
        std::size_t marked = 0;
        for (std::size_t i = 0; i < enc.length(); ++i) {
            marked += enc.aspect_mask[i];
            if (!enc.pad_mask[i]) {
                EXPECT_EQ(enc.aspect_mask[i], 0);
                EXPECT_EQ(enc.ids[i], Vocab::kPad);
            }
        }
        EXPECT_GE(marked, 1u);
    }
}

TEST(Encode, DecodeRecoversTokensUpToUnk) {
    auto corpus = generate_synthetic(200, 150, 19);
    auto v = build_vocab(corpus, 3);
    for (const auto& e : corpus) {
        auto d = decode(encode(e, v, 64), v);
        auto expected = token_strings(e.text);
        ASSERT_EQ(d.sentence.size(), expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i)
            EXPECT_EQ(d.sentence[i], v.contains(expected[i]) ? expected[i] : std::string("[UNK]"));
    }
}

TEST(Encode, PureFunction) {
    auto corpus = generate_synthetic(50, 40, 2);
    auto v = build_vocab(corpus, 1);
    for (const auto& e : corpus) EXPECT_EQ(encode(e, v, 32), encode(e, v, 32));
}
