#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "absa/dataset.hpp"
#include "absa/encoder.hpp"
#include "absa/heads.hpp"
#include "absa/training.hpp"

namespace absa {

inline constexpr const char* kConfigEnvVar = "ABSA_CONFIG";

/// Everything a command needs: data sources, split, tokenizer, model,
/// training regimen, experiment grid and output location.
struct RunConfig {
    std::string data_path;  // one JSONL file to split
    std::string train_path, val_path, test_path;  // or pre-split files
    std::size_t synthetic_n = 0;  // or a generated corpus
    std::uint64_t synthetic_seed = 7;
    SplitSpec split;
    std::size_t min_freq = 1;
    std::size_t max_len = kDefaultMaxLen;
    EncoderConfig encoder = encoder_preset("tiny");
    std::string features_dir;  // precomputed hidden states, see cmd_export
    HeadConfig head;
    TrainConfig train;
    std::vector<std::string> heads{"fcn", "cnn", "gcn"};
    std::vector<std::string> encoders{"tiny"};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string out_dir = "runs";

    void validate() const {
        split.validate();
        EncoderConfig enc = encoder;  // vocab size is only known once the vocabulary is built
        enc.vocab_size = 1;
        enc.max_len = max_len;
        enc.validate();
        head.validate();
        train.validate();
        if (max_len < 5) throw ConfigError("tokenizer.max_len must be at least 5");
        if (min_freq < 1) throw ConfigError("tokenizer.min_freq must be at least 1");
        if (heads.empty() || encoders.empty()) throw ConfigError("experiment grid must name at least one head and encoder");
        if (seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
        for (const auto& h : heads) parse_head_kind(h);
        for (const auto& e : encoders)
            if (e != "precomputed") encoder_preset(e);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class N>
N parse_number(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        N out{};
        if constexpr (std::is_floating_point_v<N>) {
            out = static_cast<N>(std::stod(value, &used));
        } else {
            if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
            out = static_cast<N>(std::stoull(value, &used));
        }
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::logic_error&) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not a valid number");
    }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("config key '" + key + "': '" + value + "' is not a boolean");
}

}  // namespace detail

/// Flat "section.key" -> value view of a config file, in file order.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

inline ConfigEntries read_config_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ParseError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    ConfigEntries out;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError(path.string() + ": key '" + section + "' must live inside a [section]");
        for (const auto& [key, value] : body) out.emplace_back(section + "." + key, detail::trim(value.data()));
    }
    return out;
}

/// Parses a `section.key=value` override.
inline std::pair<std::string, std::string> parse_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || text.find('.') > eq)
        throw ConfigError("override '" + text + "' is not of the form section.key=value");
    return {detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1))};
}

/// Builds a RunConfig from entries; later entries win. Unknown keys are
/// rejected. The encoder preset is applied before any explicit size key.
inline RunConfig make_run_config(const ConfigEntries& entries) {
    RunConfig c;
    using detail::parse_bool;
    using detail::parse_number;
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : entries) kv[k] = v;

    if (auto it = kv.find("encoder.preset"); it != kv.end()) c.encoder = encoder_preset(it->second);

    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters{
        {"data.path", [&](auto&, auto& v) { c.data_path = v; }},
        {"data.train", [&](auto&, auto& v) { c.train_path = v; }},
        {"data.val", [&](auto&, auto& v) { c.val_path = v; }},
        {"data.test", [&](auto&, auto& v) { c.test_path = v; }},
        {"data.synthetic_n", [&](auto& k, auto& v) { c.synthetic_n = parse_number<std::size_t>(k, v); }},
        {"data.synthetic_seed", [&](auto& k, auto& v) { c.synthetic_seed = parse_number<std::uint64_t>(k, v); }},
        {"split.train", [&](auto& k, auto& v) { c.split.train = parse_number<double>(k, v); }},
        {"split.val", [&](auto& k, auto& v) { c.split.val = parse_number<double>(k, v); }},
        {"split.test", [&](auto& k, auto& v) { c.split.test = parse_number<double>(k, v); }},
        {"split.stratify", [&](auto& k, auto& v) { c.split.stratify = parse_bool(k, v); }},
        {"split.seed", [&](auto& k, auto& v) { c.split.seed = parse_number<std::uint64_t>(k, v); }},
        {"tokenizer.min_freq", [&](auto& k, auto& v) { c.min_freq = parse_number<std::size_t>(k, v); }},
        {"tokenizer.max_len", [&](auto& k, auto& v) { c.max_len = parse_number<std::size_t>(k, v); }},
        {"encoder.preset", [&](auto&, auto&) {}},
        {"encoder.layers", [&](auto& k, auto& v) { c.encoder.layers = parse_number<std::size_t>(k, v); }},
        {"encoder.heads", [&](auto& k, auto& v) { c.encoder.heads = parse_number<std::size_t>(k, v); }},
        {"encoder.hidden", [&](auto& k, auto& v) { c.encoder.hidden = parse_number<std::size_t>(k, v); }},
        {"encoder.ffn", [&](auto& k, auto& v) { c.encoder.ffn = parse_number<std::size_t>(k, v); }},
        {"encoder.init_std", [&](auto& k, auto& v) { c.encoder.init_std = parse_number<double>(k, v); }},
        {"features.dir", [&](auto&, auto& v) { c.features_dir = v; }},
        {"head.kind", [&](auto&, auto& v) { c.head.kind = parse_head_kind(v); }},
        {"head.fcn_hidden", [&](auto& k, auto& v) { c.head.fcn_hidden = parse_number<std::size_t>(k, v); }},
        {"head.fcn_pooling", [&](auto&, auto& v) { c.head.fcn_pooling = v; }},
        {"head.cnn_channels", [&](auto& k, auto& v) { c.head.cnn_channels = parse_number<std::size_t>(k, v); }},
        {"head.cnn_kernel", [&](auto& k, auto& v) { c.head.cnn_kernel = parse_number<std::size_t>(k, v); }},
        {"head.gcn_window", [&](auto& k, auto& v) { c.head.gcn_window = parse_number<std::size_t>(k, v); }},
        {"head.init_std", [&](auto& k, auto& v) { c.head.init_std = parse_number<double>(k, v); }},
        {"train.lr", [&](auto& k, auto& v) { c.train.lr = parse_number<double>(k, v); }},
        {"train.batch", [&](auto& k, auto& v) { c.train.batch = parse_number<std::size_t>(k, v); }},
        {"train.epochs", [&](auto& k, auto& v) { c.train.epochs = parse_number<std::size_t>(k, v); }},
        {"train.dropout", [&](auto& k, auto& v) { c.train.dropout = parse_number<double>(k, v); }},
        {"train.patience", [&](auto& k, auto& v) { c.train.patience = parse_number<std::size_t>(k, v); }},
        {"train.early_stopping", [&](auto& k, auto& v) { c.train.early_stopping = parse_bool(k, v); }},
        {"train.metric", [&](auto&, auto& v) { c.train.metric = parse_stop_metric(v); }},
        {"train.clip_norm", [&](auto& k, auto& v) { c.train.clip_norm = parse_number<double>(k, v); }},
        {"train.warmup_steps", [&](auto& k, auto& v) { c.train.warmup_steps = parse_number<std::size_t>(k, v); }},
        {"train.seed", [&](auto& k, auto& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
        {"experiment.heads", [&](auto&, auto& v) { c.heads = detail::split_list(v); }},
        {"experiment.encoders", [&](auto&, auto& v) { c.encoders = detail::split_list(v); }},
        {"experiment.seeds",
         [&](auto& k, auto& v) {
             c.seeds.clear();
             for (const auto& s : detail::split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>(k, s));
         }},
        {"output.dir", [&](auto&, auto& v) { c.out_dir = v; }},
    };
    for (const auto& [key, value] : kv) {
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(key, value);
    }
    c.validate();
    return c;
}

/// Config file (explicit path, else $ABSA_CONFIG, else defaults) plus overrides.
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                                 const std::vector<std::string>& overrides = {}) {
    ConfigEntries entries;
    std::optional<std::filesystem::path> source = path;
    if (!source) {
        if (const char* env = std::getenv(kConfigEnvVar); env && *env) source = env;
    }
    if (source) entries = read_config_file(*source);
    for (const auto& o : overrides) entries.push_back(parse_override(o));
    return make_run_config(entries);
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["data"] = {{"path", c.data_path},
                 {"train", c.train_path},
                 {"val", c.val_path},
                 {"test", c.test_path},
                 {"synthetic_n", c.synthetic_n},
                 {"synthetic_seed", c.synthetic_seed}};
    j["split"] = {{"train", c.split.train},
                  {"val", c.split.val},
                  {"test", c.split.test},
                  {"stratify", c.split.stratify},
                  {"seed", c.split.seed}};
    j["tokenizer"] = {{"min_freq", c.min_freq}, {"max_len", c.max_len}};
    j["encoder"] = {{"preset", c.encoder.preset},
                    {"layers", c.encoder.layers},
                    {"heads", c.encoder.heads},
                    {"hidden", c.encoder.hidden},
                    {"ffn", c.encoder.ffn_dim()},
                    {"init_std", c.encoder.init_std}};
    j["features"] = {{"dir", c.features_dir}};
    j["head"] = {{"kind", head_name(c.head.kind)},
                 {"fcn_hidden", c.head.fcn_hidden},
                 {"fcn_pooling", c.head.fcn_pooling},
                 {"cnn_channels", c.head.cnn_channels},
                 {"cnn_kernel", c.head.cnn_kernel},
                 {"gcn_window", c.head.gcn_window},
                 {"init_std", c.head.init_std}};
    j["train"] = {{"lr", c.train.lr},
                  {"batch", c.train.batch},
                  {"epochs", c.train.epochs},
                  {"dropout", c.train.dropout},
                  {"patience", c.train.patience},
                  {"early_stopping", c.train.early_stopping},
                  {"metric", metric_name(c.train.metric)},
                  {"clip_norm", c.train.clip_norm},
                  {"warmup_steps", c.train.warmup_steps},
                  {"seed", c.train.seed}};
    j["experiment"] = {{"heads", c.heads}, {"encoders", c.encoders}, {"seeds", c.seeds}};
    j["output"] = {{"dir", c.out_dir}};
    return j;
}

}  // namespace absa
