#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "melodist/common.hpp"

namespace melodist {

// Mono audio in [-1, 1].
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0; }
};

inline void validate(const Waveform& w) {
    if (w.sample_rate <= 0) throw ValidationError("waveform: sample_rate must be positive");
    for (double s : w.samples)
        if (!std::isfinite(s)) throw ValidationError("waveform: non-finite sample");
}

inline double clamp_sample(double s) { return std::min(1.0, std::max(-1.0, s)); }

// Samplewise sum with hard clamp.
inline Waveform mix(const Waveform& vocal, const Waveform& accompaniment) {
    if (vocal.sample_rate != accompaniment.sample_rate)
        throw ValidationError("mix: sample rate mismatch");
    if (vocal.size() != accompaniment.size())
        throw ValidationError("mix: length mismatch");
    Waveform out;
    out.sample_rate = vocal.sample_rate;
    out.samples.resize(vocal.size());
    for (std::size_t i = 0; i < vocal.size(); ++i)
        out.samples[i] = clamp_sample(vocal.samples[i] + accompaniment.samples[i]);
    return out;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    os.write(b, 4);
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
    char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    os.write(b, 2);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}
inline std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return std::uint16_t(b[0] | (b[1] << 8));
}

}  // namespace detail

// PCM16 mono WAV.
inline void write_wav(const std::string& path, const Waveform& w) {
    validate(w);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeFailure("write_wav: cannot open " + path);
    const std::uint32_t n = std::uint32_t(w.samples.size());
    const std::uint32_t data_bytes = n * 2;
    os.write("RIFF", 4);
    detail::put_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    detail::put_u32(os, 16);
    detail::put_u16(os, 1);  // PCM
    detail::put_u16(os, 1);  // mono
    detail::put_u32(os, std::uint32_t(w.sample_rate));
    detail::put_u32(os, std::uint32_t(w.sample_rate) * 2);
    detail::put_u16(os, 2);
    detail::put_u16(os, 16);
    os.write("data", 4);
    detail::put_u32(os, data_bytes);
    for (std::uint32_t i = 0; i < n; ++i) {
        double s = clamp_sample(w.samples[i]);
        auto v = std::int16_t(std::lround(s * 32767.0));
        detail::put_u16(os, std::uint16_t(v));
    }
    if (!os) throw RuntimeFailure("write_wav: write failed for " + path);
}

inline Waveform read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeFailure("read_wav: cannot open " + path);
    char tag[5] = {0};
    is.read(tag, 4);
    if (std::strncmp(tag, "RIFF", 4) != 0) throw ValidationError("read_wav: not a RIFF file: " + path);
    detail::get_u32(is);
    is.read(tag, 4);
    if (std::strncmp(tag, "WAVE", 4) != 0) throw ValidationError("read_wav: not a WAVE file: " + path);

    Waveform w;
    std::uint16_t channels = 1, bits = 16;
    bool have_fmt = false;
    while (is.read(tag, 4)) {
        std::uint32_t chunk = detail::get_u32(is);
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            std::uint16_t fmt = detail::get_u16(is);
            channels = detail::get_u16(is);
            w.sample_rate = int(detail::get_u32(is));
            detail::get_u32(is);
            detail::get_u16(is);
            bits = detail::get_u16(is);
            if (chunk > 16) is.seekg(chunk - 16, std::ios::cur);
            if (fmt != 1 || bits != 16) throw ValidationError("read_wav: only PCM16 supported: " + path);
            if (channels != 1) throw ValidationError("read_wav: only mono supported: " + path);
            have_fmt = true;
        } else if (std::strncmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw ValidationError("read_wav: data before fmt: " + path);
            std::uint32_t n = chunk / 2;
            w.samples.resize(n);
            for (std::uint32_t i = 0; i < n; ++i)
                w.samples[i] = double(std::int16_t(detail::get_u16(is))) / 32767.0;
            return w;
        } else {
            is.seekg(chunk + (chunk & 1), std::ios::cur);
        }
    }
    throw ValidationError("read_wav: no data chunk: " + path);
}

}  // namespace melodist
