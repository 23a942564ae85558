#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mfsod/errors.hpp"
#include "mfsod/tensor.hpp"

namespace mfsod {

/// Single-file container of named tensors plus a free-form JSON meta block.
/// Layout: magic, format version, little-endian u64 header length, JSON
/// header (meta + per-tensor name/dtype/shape/offset), raw values.
namespace tensorfile {

inline constexpr char kMagic[8] = {'M', 'F', 'S', 'O', 'D', 'T', 'F', '1'};

template <typename T>
const char* dtype_tag();
template <>
inline const char* dtype_tag<float>() {
    return "f32";
}
template <>
inline const char* dtype_tag<double>() {
    return "f64";
}

template <typename T>
void save(const std::string& path, const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors,
          const nlohmann::json& meta) {
    nlohmann::json header;
    header["meta"] = meta;
    header["tensors"] = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        header["tensors"].push_back({{"name", name},
                                     {"dtype", dtype_tag<T>()},
                                     {"shape", {t->n, t->c, t->h, t->w}},
                                     {"offset", offset}});
        offset += t->size() * sizeof(T);
    }
    std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->size() * sizeof(T)));
    if (!out) throw CheckpointError("write failed: " + path);
}

template <typename T>
struct Contents {
    nlohmann::json meta;
    std::map<std::string, Tensor<T>> tensors;
};

template <typename T>
Contents<T> load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("bad magic, not a tensor container: " + path);
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || header_len == 0 || header_len > (1ull << 30))
        throw CheckpointError("corrupt header length in " + path);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw CheckpointError("truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(header_str, nullptr, /*allow_exceptions=*/false);
    if (header.is_discarded() || !header.contains("tensors"))
        throw CheckpointError("corrupt header JSON in " + path);

    Contents<T> out;
    out.meta = header.value("meta", nlohmann::json::object());
    const std::streampos data_start = in.tellg();
    for (const auto& entry : header["tensors"]) {
        std::string name = entry.at("name");
        std::string dtype = entry.at("dtype");
        auto shape = entry.at("shape");
        uint64_t offset = entry.at("offset");
        Tensor<T> t(shape.at(0), shape.at(1), shape.at(2), shape.at(3));
        in.seekg(data_start + static_cast<std::streamoff>(offset));
        if (dtype == dtype_tag<T>()) {
            in.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(t.size() * sizeof(T)));
        } else if (dtype == "f32") {
            std::vector<float> buf(t.size());
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
            for (size_t i = 0; i < buf.size(); ++i) t.v[i] = static_cast<T>(buf[i]);
        } else if (dtype == "f64") {
            std::vector<double> buf(t.size());
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(double)));
            for (size_t i = 0; i < buf.size(); ++i) t.v[i] = static_cast<T>(buf[i]);
        } else {
            throw CheckpointError("unknown dtype '" + dtype + "' in " + path);
        }
        if (!in) throw CheckpointError("truncated tensor data for '" + name + "' in " + path);
        out.tensors.emplace(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace tensorfile
}  // namespace mfsod
