#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "melodist/audio.hpp"
#include "melodist/common.hpp"

namespace melodist {

constexpr int kCodebookSize = 1024;

// T frames x n_q_used levels of discrete codes in [0, 1024).
struct AcousticTokenGrid {
    int n_q_used = 0;
    double frame_rate = 50.0;  // 16000 / 320 at defaults
    std::vector<std::vector<int>> tokens;  // tokens[t][k]

    int frames() const { return int(tokens.size()); }

    void validate() const {
        for (const auto& row : tokens) {
            if (int(row.size()) != n_q_used)
                throw ValidationError("token grid: ragged rows");
            for (int v : row)
                if (v < 0 || v >= kCodebookSize)
                    throw ValidationError("token grid: token out of range");
        }
    }

    bool operator==(const AcousticTokenGrid& o) const {
        return n_q_used == o.n_q_used && tokens == o.tokens;
    }
};

// Binary format: "MTOK", u32 version, u32 T, u32 n_q_used, row-major u16 tokens.
inline void write_tokens(const std::string& path, const AcousticTokenGrid& g) {
    g.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeFailure("write_tokens: cannot open " + path);
    os.write("MTOK", 4);
    detail::put_u32(os, 1);
    detail::put_u32(os, std::uint32_t(g.frames()));
    detail::put_u32(os, std::uint32_t(g.n_q_used));
    for (const auto& row : g.tokens)
        for (int v : row) detail::put_u16(os, std::uint16_t(v));
    if (!os) throw RuntimeFailure("write_tokens: write failed for " + path);
}

inline AcousticTokenGrid read_tokens(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeFailure("read_tokens: cannot open " + path);
    char magic[5] = {0};
    is.read(magic, 4);
    if (std::strncmp(magic, "MTOK", 4) != 0) throw ValidationError("read_tokens: bad magic in " + path);
    std::uint32_t version = detail::get_u32(is);
    if (version != 1) throw ValidationError("read_tokens: unsupported version in " + path);
    std::uint32_t T = detail::get_u32(is);
    std::uint32_t nq = detail::get_u32(is);
    AcousticTokenGrid g;
    g.n_q_used = int(nq);
    g.tokens.assign(T, std::vector<int>(nq));
    for (auto& row : g.tokens)
        for (auto& v : row) v = int(detail::get_u16(is));
    if (!is) throw ValidationError("read_tokens: truncated file " + path);
    g.validate();
    return g;
}

}  // namespace melodist
