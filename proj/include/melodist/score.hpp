#pragma once

// Music score: phoneme ids with per-phoneme frame durations and a per-frame
// rounded F0 track (0 = unvoiced). One frame = 320 samples at 16 kHz.

#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "melodist/checkpoint.hpp"
#include "melodist/common.hpp"

namespace melodist {

constexpr int kFrameSamples = 320;
constexpr int kPhonemeInventory = 40;

struct MusicScore {
    std::vector<int> phonemes;
    std::vector<int> durations;  // frames per phoneme, each >= 1
    std::vector<int> f0;         // integer Hz per frame, 0 = unvoiced

    int total_frames() const {
        return int(std::accumulate(durations.begin(), durations.end(), std::int64_t(0)));
    }

    void validate() const {
        if (phonemes.size() != durations.size())
            throw ValidationError("score: phoneme/duration count mismatch");
        for (int d : durations)
            if (d < 1) throw ValidationError("score: durations must be >= 1");
        for (int p : phonemes)
            if (p < 0 || p >= kPhonemeInventory)
                throw ValidationError("score: phoneme id out of range");
        if (total_frames() != int(f0.size()))
            throw ValidationError("score: sum(durations) != f0 length");
        for (int v : f0)
            if (v < 0) throw ValidationError("score: f0 must be non-negative");
    }

    Json to_json() const { return Json{{"phonemes", phonemes}, {"durations", durations}, {"f0", f0}}; }
    static MusicScore from_json(const Json& j) {
        MusicScore s;
        s.phonemes = j.at("phonemes").get<std::vector<int>>();
        s.durations = j.at("durations").get<std::vector<int>>();
        s.f0 = j.at("f0").get<std::vector<int>>();
        return s;
    }
};

inline void write_score(const std::string& path, const MusicScore& s) {
    std::ofstream os(path);
    if (!os) throw RuntimeFailure("cannot write score: " + path);
    os << s.to_json().dump(2) << "\n";
}

inline MusicScore read_score(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw MissingPrerequisiteError("score file not found: " + path);
    Json j = Json::parse(is);
    MusicScore s = MusicScore::from_json(j);
    s.validate();
    return s;
}

}  // namespace melodist
