#pragma once

// Tensor container file:
//
//   ABSA-CONTAINER 1
//   meta <key> <value to end of line>
//   tensor <name> <f32|f64> <rank> <dim>... <offset> <nbytes>
//   end
//   <raw little-endian buffers>
//
// Offsets count from the first byte after the "end" line. Names and keys
// contain no whitespace; meta values contain no newline.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "absa/error.hpp"
#include "absa/params.hpp"
#include "absa/tensor.hpp"

namespace absa {

inline constexpr const char* kContainerMagic = "ABSA-CONTAINER";
inline constexpr int kContainerVersion = 1;

template <class T>
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor<T>> tensors;
};

template <class T>
constexpr const char* dtype_name() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "container stores f32 or f64 only");
    return std::is_same_v<T, float> ? "f32" : "f64";
}

namespace detail {

inline bool has_space(const std::string& s) {
    for (char c : s)
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return true;
    return false;
}

template <class T>
void append_le(std::string& out, const std::vector<T>& values) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    const std::size_t start = out.size();
    out.resize(start + values.size() * sizeof(T));
    for (std::size_t i = 0; i < values.size(); ++i) {
        U bits;
        std::memcpy(&bits, &values[i], sizeof(T));
        for (std::size_t b = 0; b < sizeof(T); ++b)
            out[start + i * sizeof(T) + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
}

template <class T>
void read_le(const char* src, std::vector<T>& values) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (std::size_t i = 0; i < values.size(); ++i) {
        U bits = 0;
        for (std::size_t b = 0; b < sizeof(T); ++b)
            bits |= static_cast<U>(static_cast<unsigned char>(src[i * sizeof(T) + b])) << (8 * b);
        std::memcpy(&values[i], &bits, sizeof(T));
    }
}

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt) {
    std::ostringstream header;
    header << kContainerMagic << ' ' << kContainerVersion << '\n';
    for (const auto& [key, value] : ckpt.meta) {
        if (key.empty() || detail::has_space(key)) throw ConfigError("container meta key '" + key + "' is empty or has whitespace");
        if (value.find('\n') != std::string::npos) throw ConfigError("container meta value for '" + key + "' contains a newline");
        header << "meta " << key << ' ' << value << '\n';
    }
    std::string data;
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (name.empty() || detail::has_space(name)) throw ConfigError("tensor name '" + name + "' is empty or has whitespace");
        if (shape_size(tensor.shape) != tensor.values.size())
            throw DimensionError("tensor " + name + " has inconsistent shape " + shape_str(tensor.shape));
        header << "tensor " << name << ' ' << dtype_name<T>() << ' ' << tensor.shape.size();
        for (std::size_t d : tensor.shape) header << ' ' << d;
        header << ' ' << data.size() << ' ' << tensor.values.size() * sizeof(T) << '\n';
        detail::append_le(data, tensor.values);
    }
    header << "end\n";
    return header.str() + data;
}

template <class T>
Checkpoint<T> parse_checkpoint(const std::string& bytes, const std::string& origin = "<memory>") {
    Checkpoint<T> ckpt;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto next_line = [&]() -> std::string {
        const std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw ParseError(origin + ": truncated container header");
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        return line;
    };
    auto fail = [&](const std::string& why) { return ParseError(origin + ":" + std::to_string(line_no) + ": " + why); };

    {
        std::istringstream first(next_line());
        std::string magic;
        int version = 0;
        if (!(first >> magic >> version) || magic != kContainerMagic) throw fail("not a tensor container");
        if (version != kContainerVersion) throw fail("unsupported container version " + std::to_string(version));
    }
    struct Entry {
        std::string name;
        Shape shape;
        std::size_t offset, nbytes;
    };
    std::vector<Entry> entries;
    for (;;) {
        const std::string line = next_line();
        if (line == "end") break;
        if (line.rfind("meta ", 0) == 0) {
            const std::size_t sp = line.find(' ', 5);
            const std::string key = line.substr(5, sp == std::string::npos ? std::string::npos : sp - 5);
            const std::string value = sp == std::string::npos ? std::string() : line.substr(sp + 1);
            ckpt.meta[key] = value;
            continue;
        }
        std::istringstream ls(line);
        std::string kind, name, dtype;
        std::size_t rank = 0;
        if (!(ls >> kind >> name >> dtype >> rank) || kind != "tensor") throw fail("malformed header line");
        if (dtype != dtype_name<T>()) throw fail("tensor " + name + " has element type " + dtype + ", expected " + dtype_name<T>());
        Entry e{name, Shape(rank), 0, 0};
        for (auto& d : e.shape)
            if (!(ls >> d)) throw fail("missing dimension for " + name);
        if (!(ls >> e.offset >> e.nbytes)) throw fail("missing offset for " + name);
        if (e.nbytes != shape_size(e.shape) * sizeof(T)) throw fail("byte count of " + name + " does not match its shape");
        entries.push_back(std::move(e));
    }
    const std::size_t data_start = pos;
    for (const auto& e : entries) {
        if (data_start + e.offset + e.nbytes > bytes.size()) throw ParseError(origin + ": data for " + e.name + " is truncated");
        Tensor<T> t(e.shape);
        detail::read_le(bytes.data() + data_start + e.offset, t.values);
        if (!ckpt.tensors.emplace(e.name, std::move(t)).second) throw ParseError(origin + ": duplicate tensor " + e.name);
    }
    return ckpt;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint<T>(read_file_bytes(path), path.string());
}

template <class T>
void store_parameters(Checkpoint<T>& ckpt, const ParameterStore<T>& params) {
    for (const auto& [name, t] : params) ckpt.tensors[name] = Tensor<T>(t.shape, t.values);
}

/// Overwrites every parameter in `params` from the checkpoint, requiring
/// identical names and shapes.
template <class T>
void restore_parameters(ParameterStore<T>& params, const Checkpoint<T>& ckpt) {
    for (auto& [name, t] : params) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw LookupError("checkpoint has no tensor " + name);
        if (it->second.shape != t.shape)
            throw DimensionError("checkpoint tensor " + name + " is " + shape_str(it->second.shape) + ", model expects " +
                                 shape_str(t.shape));
        t.values = it->second.values;
    }
}

}  // namespace absa
