#pragma once

// Single-file model archive: magic "MCKP", u32 version, length-prefixed JSON
// config, then named double tensors. Shared by all trainable modules.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "melodist/audio.hpp"
#include "melodist/common.hpp"
#include "melodist/nn.hpp"

namespace melodist {

using Json = nlohmann::json;

inline void write_checkpoint(const std::string& path, const Json& config,
                             const nn::ParamStore& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeFailure("write_checkpoint: cannot open " + path);
    os.write("MCKP", 4);
    detail::put_u32(os, 1);
    std::string cfg = config.dump();
    detail::put_u32(os, std::uint32_t(cfg.size()));
    os.write(cfg.data(), std::streamsize(cfg.size()));
    detail::put_u32(os, std::uint32_t(params.by_name.size()));
    for (const auto& [name, p] : params.by_name) {
        detail::put_u32(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        detail::put_u32(os, std::uint32_t(p->value.rows()));
        detail::put_u32(os, std::uint32_t(p->value.cols()));
        for (Eigen::Index j = 0; j < p->value.cols(); ++j)
            for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
                double v = p->value(i, j);
                os.write(reinterpret_cast<const char*>(&v), sizeof(double));
            }
    }
    if (!os) throw RuntimeFailure("write_checkpoint: write failed for " + path);
}

// Reads the config header only.
inline Json read_checkpoint_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingPrerequisiteError("checkpoint not found: " + path);
    char magic[5] = {0};
    is.read(magic, 4);
    if (std::strncmp(magic, "MCKP", 4) != 0) throw ValidationError("bad checkpoint magic: " + path);
    std::uint32_t version = detail::get_u32(is);
    if (version != 1) throw ValidationError("unsupported checkpoint version: " + path);
    std::uint32_t len = detail::get_u32(is);
    std::string cfg(len, '\0');
    is.read(cfg.data(), len);
    return Json::parse(cfg);
}

// Loads tensors into an existing ParamStore whose shapes must match.
inline Json load_checkpoint(const std::string& path, nn::ParamStore& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingPrerequisiteError("checkpoint not found: " + path);
    char magic[5] = {0};
    is.read(magic, 4);
    if (std::strncmp(magic, "MCKP", 4) != 0) throw ValidationError("bad checkpoint magic: " + path);
    std::uint32_t version = detail::get_u32(is);
    if (version != 1) throw ValidationError("unsupported checkpoint version: " + path);
    std::uint32_t len = detail::get_u32(is);
    std::string cfg(len, '\0');
    is.read(cfg.data(), len);
    std::uint32_t n = detail::get_u32(is);
    for (std::uint32_t t = 0; t < n; ++t) {
        std::uint32_t nlen = detail::get_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        std::uint32_t rows = detail::get_u32(is);
        std::uint32_t cols = detail::get_u32(is);
        auto it = params.by_name.find(name);
        if (it == params.by_name.end())
            throw ValidationError("checkpoint tensor has no target: " + name);
        auto& val = it->second->value;
        if (val.rows() != Eigen::Index(rows) || val.cols() != Eigen::Index(cols))
            throw ValidationError("checkpoint tensor shape mismatch: " + name);
        for (std::uint32_t j = 0; j < cols; ++j)
            for (std::uint32_t i = 0; i < rows; ++i) {
                double v;
                is.read(reinterpret_cast<char*>(&v), sizeof(double));
                val(Eigen::Index(i), Eigen::Index(j)) = v;
            }
    }
    if (!is) throw ValidationError("truncated checkpoint: " + path);
    return Json::parse(cfg);
}

inline std::string file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingPrerequisiteError("file not found: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
        h = fnv1a(buf, std::size_t(is.gcount()), h);
    return hex64(h);
}

}  // namespace melodist
