#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "absa/error.hpp"
#include "absa/rng.hpp"
#include "absa/utf8.hpp"

namespace absa {

enum class Polarity : std::uint8_t { negative = 0, neutral = 1, positive = 2 };

inline constexpr std::size_t kNumPolarities = 3;
inline constexpr std::array<const char*, kNumPolarities> kPolarityNames{"negative", "neutral", "positive"};

inline const char* polarity_name(Polarity p) { return kPolarityNames[static_cast<std::size_t>(p)]; }
inline std::size_t polarity_index(Polarity p) { return static_cast<std::size_t>(p); }

inline std::optional<Polarity> parse_polarity(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    for (std::size_t i = 0; i < kNumPolarities; ++i)
        if (name == kPolarityNames[i]) return static_cast<Polarity>(i);
    return std::nullopt;
}

/// One (sentence, aspect) pair. Offsets are half-open code point indices
/// into `text`, so tokenizer changes never invalidate stored data.
struct Example {
    std::string text;
    std::string aspect;
    std::size_t aspect_start = 0;
    std::size_t aspect_end = 0;
    Polarity label = Polarity::neutral;
    std::optional<std::string> category;

    friend bool operator==(const Example&, const Example&) = default;
};

/// Throws ValidationError unless the span lies inside the text and spells
/// out the aspect.
inline void validate(const Example& ex) {
    const auto cps = utf8::decode(ex.text);
    utf8::decode(ex.aspect);
    if (!(ex.aspect_start < ex.aspect_end && ex.aspect_end <= cps.size())) {
        throw ValidationError("aspect span [" + std::to_string(ex.aspect_start) + "," + std::to_string(ex.aspect_end) +
                              ") outside text of length " + std::to_string(cps.size()));
    }
    const std::string span = utf8::encode(std::u32string_view(cps).substr(ex.aspect_start, ex.aspect_end - ex.aspect_start));
    if (span != ex.aspect) throw ValidationError("span text '" + span + "' does not match aspect '" + ex.aspect + "'");
}

/// Builds an Example whose span is the first occurrence of `aspect` in `text`.
inline Example make_example(std::string text, std::string aspect, Polarity label,
                            std::optional<std::string> category = std::nullopt) {
    const auto cps = utf8::decode(text);
    const auto acps = utf8::decode(aspect);
    const auto pos = std::u32string_view(cps).find(acps);
    if (acps.empty() || pos == std::u32string_view::npos) throw ValidationError("aspect '" + aspect + "' not found in text");
    Example ex{std::move(text), std::move(aspect), pos, pos + acps.size(), label, std::move(category)};
    return ex;
}

// ---------------------------------------------------------------------------
// JSON lines

inline nlohmann::ordered_json to_json(const Example& ex) {
    nlohmann::ordered_json j;
    j["text"] = ex.text;
    j["aspect"] = ex.aspect;
    j["aspect_start"] = ex.aspect_start;
    j["aspect_end"] = ex.aspect_end;
    j["label"] = polarity_name(ex.label);
    if (ex.category) j["category"] = *ex.category;
    return j;
}

/// Accepts labels as names ("negative", "neutral", "positive") or indices 0-2.
inline Example example_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("record is not a JSON object");
    for (const char* key : {"text", "aspect", "aspect_start", "aspect_end", "label"})
        if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
    Example ex;
    try {
        ex.text = j.at("text").get<std::string>();
        ex.aspect = j.at("aspect").get<std::string>();
        ex.aspect_start = j.at("aspect_start").get<std::size_t>();
        ex.aspect_end = j.at("aspect_end").get<std::size_t>();
        if (j.contains("category") && !j.at("category").is_null()) ex.category = j.at("category").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad field type: ") + e.what());
    }
    const auto& label = j.at("label");
    if (label.is_string()) {
        auto p = parse_polarity(label.get<std::string>());
        if (!p) throw ValidationError("unknown label '" + label.get<std::string>() + "'");
        ex.label = *p;
    } else if (label.is_number_integer()) {
        const auto v = label.get<std::int64_t>();
        if (v < 0 || v > 2) throw ValidationError("label index " + std::to_string(v) + " outside {0,1,2}");
        ex.label = static_cast<Polarity>(v);
    } else {
        throw ValidationError("label must be a name or an index");
    }
    validate(ex);
    return ex;
}

inline std::vector<Example> parse_jsonl(std::istream& in, const std::string& origin) {
    std::vector<Example> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
        }
        try {
            out.push_back(example_from_json(j));
        } catch (const ValidationError& e) {
            throw ValidationError(origin + ":" + std::to_string(line_no) + ": record " + std::to_string(out.size()) + ": " +
                                  e.what());
        }
    }
    return out;
}

inline std::vector<Example> load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_jsonl(in, path.string());
}

inline std::string serialize_jsonl(const std::vector<Example>& examples) {
    std::string out;
    for (const auto& ex : examples) {
        out += to_json(ex).dump();
        out += '\n';
    }
    return out;
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << serialize_jsonl(examples);
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
    bool stratify = true;
    std::uint64_t seed = 13;

    void validate() const {
        if (!(train > 0 && val > 0 && test > 0) || std::abs(train + val + test - 1.0) > 1e-9)
            throw ConfigError("split fractions must be positive and sum to 1");
    }
};

struct Splits {
    std::vector<Example> train;
    std::vector<Example> val;
    std::vector<Example> test;
};

/// Per-label (or whole-corpus, when not stratifying) allocation: validation
/// and test sizes are round(n * fraction) but at least one each, the rest is
/// training. Each group is shuffled with a stream derived from the seed;
/// every split keeps the input order of its members.
inline Splits stratified_split(const std::vector<Example>& examples, const SplitSpec& spec) {
    spec.validate();

    std::vector<std::vector<std::size_t>> groups(spec.stratify ? kNumPolarities : 1);
    for (std::size_t i = 0; i < examples.size(); ++i)
        groups[spec.stratify ? polarity_index(examples[i].label) : 0].push_back(i);

    std::mt19937_64 rng(stream_seed(spec.seed, "split"));
    std::vector<int> assign(examples.size(), 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& idx = groups[g];
        if (idx.size() < 3) {
            const std::string who = spec.stratify ? std::string("label ") + kPolarityNames[g] : std::string("corpus");
            throw StratificationError(who + " has " + std::to_string(idx.size()) +
                                      " examples; at least 3 are needed for three non-empty splits");
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        const double n = static_cast<double>(idx.size());
        std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * spec.val)));
        std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * spec.test)));
        while (n_val + n_test + 1 > idx.size()) {
            if (n_val >= n_test) --n_val;
            else --n_test;
        }
        const std::size_t n_train = idx.size() - n_val - n_test;
        for (std::size_t k = 0; k < idx.size(); ++k) assign[idx[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
    }
    Splits out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        (assign[i] == 0 ? out.train : assign[i] == 1 ? out.val : out.test).push_back(examples[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus statistics

struct StatsReport {
    std::size_t examples = 0;
    std::array<std::size_t, kNumPolarities> label_counts{};
    std::map<std::string, std::size_t> category_counts;
    std::size_t uncategorized = 0;
    std::size_t bin_width = 10;
    std::map<std::size_t, std::size_t> length_bins;  // bin start -> count
    double mean_length = 0.0;

    friend bool operator==(const StatsReport&, const StatsReport&) = default;
};

inline std::size_t whitespace_token_count(const std::string& text) {
    std::istringstream ss(text);
    std::size_t n = 0;
    std::string w;
    while (ss >> w) ++n;
    return n;
}

inline StatsReport corpus_stats(const std::vector<Example>& examples, std::size_t bin_width = 10) {
    if (bin_width == 0) throw ConfigError("histogram bin width must be positive");
    StatsReport r;
    r.bin_width = bin_width;
    r.examples = examples.size();
    std::size_t total_len = 0;
    for (const auto& ex : examples) {
        ++r.label_counts[polarity_index(ex.label)];
        if (ex.category) ++r.category_counts[*ex.category];
        else ++r.uncategorized;
        const std::size_t len = whitespace_token_count(ex.text);
        total_len += len;
        ++r.length_bins[len / bin_width * bin_width];
    }
    if (!examples.empty()) r.mean_length = static_cast<double>(total_len) / static_cast<double>(examples.size());
    return r;
}

inline nlohmann::ordered_json to_json(const StatsReport& r) {
    nlohmann::ordered_json j;
    j["examples"] = r.examples;
    nlohmann::ordered_json labels;
    for (std::size_t i = 0; i < kNumPolarities; ++i) labels[kPolarityNames[i]] = r.label_counts[i];
    j["label_counts"] = labels;
    j["category_counts"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.category_counts) j["category_counts"][k] = v;
    j["uncategorized"] = r.uncategorized;
    j["mean_length"] = r.mean_length;
    nlohmann::ordered_json hist;
    hist["bin_width"] = r.bin_width;
    hist["bins"] = nlohmann::ordered_json::array();
    for (const auto& [start, count] : r.length_bins)
        hist["bins"].push_back({{"start", start}, {"end", start + r.bin_width}, {"count", count}});
    j["length_histogram"] = hist;
    return j;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SyntheticSpec {
    std::size_t n = 1000;
    std::size_t vocab_size = 200;  // filler words
    std::uint64_t seed = 7;
    std::array<double, kNumPolarities> mixture{0.3, 0.4, 0.3};
    std::size_t min_words = 8;
    std::size_t max_words = 20;
    std::size_t cue_window = 3;
};

namespace synthetic {

struct AspectEntry {
    const char* phrase;
    const char* category;
};

inline constexpr AspectEntry kAspects[] = {
    {"dr fauci", "Person"},       {"the nurse", "Person"},        {"my doctor", "Person"},
    {"the president", "Person"},  {"the cdc", "Organization"},    {"the nhs", "Organization"},
    {"pfizer", "Organization"},   {"the hospital", "Organization"},
    {"ivermectin", "Drug"},       {"remdesivir", "Drug"},         {"paxlovid", "Drug"},
    {"tylenol", "Drug"},          {"covid vaccine", "Vaccine"},   {"the booster", "Vaccine"},
    {"moderna", "Vaccine"},       {"astrazeneca", "Vaccine"},
};

inline constexpr const char* kCues[kNumPolarities][6] = {
    {"awful", "terrible", "dangerous", "useless", "hate", "worst"},
    {"mentioned", "reported", "discussed", "listed", "noted", "described"},
    {"great", "excellent", "helpful", "love", "best", "reliable"},
};

}  // namespace synthetic

/// Sentences of filler words "w<k>" containing one aspect phrase and one
/// polarity cue within `cue_window` words of it. The label is the cue's
/// polarity, drawn from `mixture`.
inline std::vector<Example> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n == 0) throw ConfigError("synthetic corpus size must be at least 1");
    if (spec.vocab_size == 0 || spec.cue_window == 0 || spec.min_words < 3 || spec.max_words < spec.min_words)
        throw ConfigError("invalid synthetic corpus settings");
    std::mt19937_64 rng(stream_seed(spec.seed, "synthetic"));
    std::discrete_distribution<std::size_t> label_dist(spec.mixture.begin(), spec.mixture.end());
    std::uniform_int_distribution<std::size_t> aspect_dist(0, std::size(synthetic::kAspects) - 1);
    std::uniform_int_distribution<std::size_t> cue_dist(0, 5);
    std::uniform_int_distribution<std::size_t> filler_dist(0, spec.vocab_size - 1);
    std::uniform_int_distribution<std::size_t> len_dist(spec.min_words, spec.max_words);

    std::vector<Example> out;
    out.reserve(spec.n);
    for (std::size_t e = 0; e < spec.n; ++e) {
        const std::size_t label = label_dist(rng);
        const auto& aspect = synthetic::kAspects[aspect_dist(rng)];
        const std::string cue = synthetic::kCues[label][cue_dist(rng)];
        std::vector<std::string> aspect_words;
        {
            std::istringstream ss(aspect.phrase);
            std::string w;
            while (ss >> w) aspect_words.push_back(w);
        }
        const std::size_t n_words = std::max(len_dist(rng), aspect_words.size() + 1);
        const std::size_t span = aspect_words.size();
        std::uniform_int_distribution<std::size_t> pos_dist(0, n_words - span);
        const std::size_t pos = pos_dist(rng);

        // candidate cue slots: within the window before or after the aspect
        std::vector<std::size_t> slots;
        for (std::size_t d = 1; d <= spec.cue_window; ++d) {
            if (pos >= d) slots.push_back(pos - d);
            if (pos + span - 1 + d < n_words) slots.push_back(pos + span - 1 + d);
        }
        std::sort(slots.begin(), slots.end());
        const std::size_t cue_slot = slots[std::uniform_int_distribution<std::size_t>(0, slots.size() - 1)(rng)];

        std::vector<std::string> words(n_words);
        for (std::size_t i = 0; i < n_words; ++i) words[i] = "w" + std::to_string(filler_dist(rng));
        for (std::size_t i = 0; i < span; ++i) words[pos + i] = aspect_words[i];
        words[cue_slot] = cue;

        std::string text;
        std::size_t start = 0;
        for (std::size_t i = 0; i < n_words; ++i) {
            if (i) text += ' ';
            if (i == pos) start = text.size();
            text += words[i];
        }
        const std::size_t end = start + std::string(aspect.phrase).size();
        out.push_back(Example{text, aspect.phrase, start, end, static_cast<Polarity>(label), std::string(aspect.category)});
    }
    return out;
}

inline std::vector<Example> generate_synthetic(std::size_t n, std::size_t vocab_size, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n = n;
    spec.vocab_size = vocab_size;
    spec.seed = seed;
    return generate_synthetic(spec);
}

}  // namespace absa
