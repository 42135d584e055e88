#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "absa/checkpoint.hpp"
#include "absa/encoder.hpp"
#include "absa/heads.hpp"
#include "absa/tokenizer.hpp"

namespace absa {

/// Encoder (or precomputed features) + head + the vocabulary that produced
/// the inputs, all the state a checkpoint needs to reproduce predictions.
template <class T>
struct Model {
    EncoderConfig encoder;
    HeadConfig head;
    std::size_t seq_len = kDefaultMaxLen;
    bool precomputed = false;  // hidden states come from frozen external features
    Vocab vocab;
    ParameterStore<T> params;

    std::string encoder_label() const { return precomputed ? "precomputed" : encoder.preset; }
};

/// Fills in derived sizes and initialises all parameters: encoder first,
/// then head, both from the same init stream.
template <class T>
void init_model(Model<T>& m, std::mt19937_64& init_rng) {
    if (!m.precomputed) {
        m.encoder.vocab_size = m.vocab.size();
        m.encoder.max_len = m.seq_len;
        m.head.input_dim = m.encoder.hidden;
        init_encoder(m.params, m.encoder, init_rng);
    }
    init_head(m.params, m.head, init_rng);
}

/// Inputs, labels and optional frozen features for one split.
template <class T>
struct SplitData {
    std::vector<EncodedInput> inputs;
    std::vector<std::size_t> labels;
    const PrecomputedEmbeddings<T>* features = nullptr;  // indexed by position in the split

    std::size_t size() const { return inputs.size(); }
};

template <class T>
SplitData<T> make_split(const std::vector<Example>& examples, const Vocab& vocab, std::size_t seq_len) {
    SplitData<T> s;
    s.inputs = encode_all(examples, vocab, seq_len);
    for (const auto& ex : examples) s.labels.push_back(polarity_index(ex.label));
    return s;
}

/// Logits [B x 3] for the examples of `split` at `indices`.
template <class T>
Var<T> model_forward(Tape<T>& tape, Model<T>& m, const SplitData<T>& split, std::span<const std::size_t> indices,
                     bool training, std::mt19937_64& rng) {
    std::vector<EncodedInput> batch;
    batch.reserve(indices.size());
    for (std::size_t i : indices) batch.push_back(split.inputs.at(i));
    const std::span<const EncodedInput> view(batch);
    Var<T> h = [&] {
        if (!m.precomputed) return encode_batch(tape, m.params, m.encoder, view, training, rng);
        if (!split.features) throw ConfigError("model reads precomputed features but the split has none");
        Tensor<T> feats = split.features->batch(indices);
        if (feats.shape[1] != batch[0].length())
            throw DimensionError("precomputed features have length " + std::to_string(feats.shape[1]) +
                                 ", encoded inputs have length " + std::to_string(batch[0].length()));
        return tape.constant(std::move(feats));
    }();
    return head_forward(tape, m.params, m.head, h, head_inputs<T>(m.head, view), training, rng);
}

// ---------------------------------------------------------------------------
// Checkpoints: parameters plus every setting needed to rebuild the model.

template <class T>
Checkpoint<T> model_checkpoint(const Model<T>& m) {
    Checkpoint<T> c;
    auto& meta = c.meta;
    meta["kind"] = "absa-model";
    meta["seq_len"] = std::to_string(m.seq_len);
    meta["features"] = m.precomputed ? "precomputed" : "builtin";
    meta["encoder.preset"] = m.encoder.preset;
    meta["encoder.layers"] = std::to_string(m.encoder.layers);
    meta["encoder.heads"] = std::to_string(m.encoder.heads);
    meta["encoder.hidden"] = std::to_string(m.encoder.hidden);
    meta["encoder.ffn"] = std::to_string(m.encoder.ffn_dim());
    meta["encoder.vocab_size"] = std::to_string(m.encoder.vocab_size);
    meta["encoder.max_len"] = std::to_string(m.encoder.max_len);
    meta["head.kind"] = head_name(m.head.kind);
    meta["head.input_dim"] = std::to_string(m.head.input_dim);
    meta["head.fcn_hidden"] = std::to_string(m.head.fcn_hidden);
    meta["head.fcn_pooling"] = m.head.fcn_pooling;
    meta["head.cnn_channels"] = std::to_string(m.head.cnn_channels);
    meta["head.cnn_kernel"] = std::to_string(m.head.cnn_kernel);
    meta["head.gcn_window"] = std::to_string(m.head.gcn_window);
    // tokens never contain whitespace, so a space-joined list is unambiguous
    std::string tokens;
    for (std::size_t i = 0; i < m.vocab.size(); ++i) {
        if (i) tokens += ' ';
        tokens += m.vocab.token(i);
    }
    meta["vocab.min_freq"] = std::to_string(m.vocab.min_freq());
    meta["vocab.tokens"] = tokens;
    store_parameters(c, m.params);
    return c;
}

template <class T>
void save_model(const std::filesystem::path& path, const Model<T>& m) {
    save_checkpoint(path, model_checkpoint(m));
}

template <class T>
Model<T> model_from_checkpoint(const Checkpoint<T>& c, const std::string& origin = "<checkpoint>") {
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = c.meta.find(key);
        if (it == c.meta.end()) throw ParseError(origin + ": checkpoint lacks meta '" + key + "'");
        return it->second;
    };
    auto num = [&](const std::string& key) -> std::size_t {
        try {
            return std::stoull(get(key));
        } catch (const std::logic_error&) {
            throw ParseError(origin + ": meta '" + key + "' is not a number");
        }
    };
    if (get("kind") != "absa-model") throw ParseError(origin + ": not a model checkpoint");
    Model<T> m;
    m.seq_len = num("seq_len");
    m.precomputed = get("features") == "precomputed";
    m.encoder.preset = get("encoder.preset");
    m.encoder.layers = num("encoder.layers");
    m.encoder.heads = num("encoder.heads");
    m.encoder.hidden = num("encoder.hidden");
    m.encoder.ffn = num("encoder.ffn");
    m.encoder.vocab_size = num("encoder.vocab_size");
    m.encoder.max_len = num("encoder.max_len");
    m.head.kind = parse_head_kind(get("head.kind"));
    m.head.input_dim = num("head.input_dim");
    m.head.fcn_hidden = num("head.fcn_hidden");
    m.head.fcn_pooling = get("head.fcn_pooling");
    m.head.cnn_channels = num("head.cnn_channels");
    m.head.cnn_kernel = num("head.cnn_kernel");
    m.head.gcn_window = num("head.gcn_window");

    std::ostringstream vocab_text;
    std::istringstream tokens(get("vocab.tokens"));
    std::vector<std::string> list;
    for (std::string t; tokens >> t;) list.push_back(t);
    vocab_text << Vocab::kHeader << " min_freq=" << get("vocab.min_freq") << " size=" << list.size() << "\n";
    for (std::size_t i = 0; i < list.size(); ++i) vocab_text << list[i] << '\t' << i << '\n';
    m.vocab = Vocab::parse(vocab_text.str(), origin);

    std::vector<std::pair<std::string, Shape>> shapes = head_parameter_shapes(m.head);
    if (!m.precomputed) {
        auto enc = encoder_parameter_shapes(m.encoder);
        shapes.insert(shapes.end(), enc.begin(), enc.end());
    }
    for (const auto& [name, shape] : shapes) m.params.add(name, Tensor<T>(shape));
    restore_parameters(m.params, c);
    return m;
}

template <class T>
Model<T> load_model(const std::filesystem::path& path) {
    return model_from_checkpoint(load_checkpoint<T>(path), path.string());
}

}  // namespace absa
