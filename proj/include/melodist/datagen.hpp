#pragma once

// Synthetic corpus: paired vocal/accompaniment stems with exact scores, style
// tags, and templated captions. The vocal is an additive sawtooth following a
// generated melody; the accompaniment renders chords whose texture is driven
// by the style tags.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "melodist/audio.hpp"
#include "melodist/dsp.hpp"
#include "melodist/score.hpp"

namespace melodist {

// ---- tag taxonomy ----

inline const std::vector<std::string>& genre_tags() {
    static const std::vector<std::string> v = {"pop", "rock", "jazz", "electronic"};
    return v;
}
inline const std::vector<std::string>& instrument_tags() {
    static const std::vector<std::string> v = {"guitar", "piano", "synth", "drums"};
    return v;
}
inline const std::vector<std::string>& mood_tags() {
    static const std::vector<std::string> v = {"mellow", "energetic", "sentimental", "dreamy"};
    return v;
}

inline bool known_tag(const std::string& t) {
    auto has = [&](const std::vector<std::string>& v) {
        return std::find(v.begin(), v.end(), t) != v.end();
    };
    return has(genre_tags()) || has(instrument_tags()) || has(mood_tags());
}

// ---- song specification ----

struct NoteEvent {
    double pitch_hz = 0.0;  // 0 = rest
    int duration_frames = 1;
};

struct SongSpec {
    double tempo_bpm = 100.0;
    int key = 0;  // semitone offset of the root
    std::vector<NoteEvent> melody;
    std::vector<int> phonemes;            // one per note
    std::vector<int> phrase_ends;         // note indices ending each phrase
    std::vector<std::string> tags;

    int total_frames() const {
        int n = 0;
        for (const auto& e : melody) n += e.duration_frames;
        return n;
    }

    void validate() const {
        if (tags.empty()) throw ValidationError("song spec: tags must be non-empty");
        for (const auto& t : tags)
            if (!known_tag(t)) throw ValidationError("song spec: unknown tag '" + t + "'");
        if (phonemes.size() != melody.size())
            throw ValidationError("song spec: one phoneme per note required");
        for (const auto& e : melody) {
            if (e.duration_frames < 1) throw ValidationError("song spec: note duration must be >= 1");
            if (e.pitch_hz != 0.0 && (e.pitch_hz < 80.0 || e.pitch_hz > 1000.0))
                throw ValidationError("song spec: pitch outside the 80-1000 Hz vocal range");
        }
    }
};

// Pentatonic melody over a random key; phrases of roughly 2 s.
inline SongSpec random_song_spec(Rng& rng, int min_frames = 300, int max_frames = 500) {
    static const int penta[] = {0, 2, 4, 7, 9};
    SongSpec s;
    s.tempo_bpm = 80.0 + double(rng() % 61);
    s.key = int(rng() % 12);
    int gi = int(rng() % genre_tags().size());
    int ii = int(rng() % instrument_tags().size());
    int mi = int(rng() % mood_tags().size());
    s.tags = {genre_tags()[size_t(gi)], instrument_tags()[size_t(ii)], mood_tags()[size_t(mi)]};
    int target = min_frames + int(rng() % std::uint64_t(max_frames - min_frames + 1));
    int frames = 0, phrase_frames = 0;
    while (frames < target) {
        NoteEvent e;
        if (rng() % 8 == 0) {
            e.pitch_hz = 0.0;  // rest
        } else {
            int deg = penta[rng() % 5];
            int octave = int(rng() % 2);
            double semis = double(s.key + deg + 12 * octave);
            e.pitch_hz = 110.0 * std::pow(2.0, semis / 12.0);
        }
        e.duration_frames = 10 + int(rng() % 31);
        if (frames + e.duration_frames > target) e.duration_frames = target - frames;
        if (e.duration_frames < 1) break;
        frames += e.duration_frames;
        phrase_frames += e.duration_frames;
        s.melody.push_back(e);
        s.phonemes.push_back(int(rng() % kPhonemeInventory));
        if (phrase_frames >= 100 || frames >= target) {
            s.phrase_ends.push_back(int(s.melody.size()) - 1);
            phrase_frames = 0;
        }
    }
    return s;
}

namespace gen_detail {

// Per-frame target pitch with a light vibrato; 0 during rests.
inline std::vector<double> frame_pitch(const SongSpec& spec, std::uint64_t seed) {
    std::vector<double> f0;
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * M_PI);
    double vib_phase = ph(rng);
    int frame = 0;
    for (const auto& e : spec.melody)
        for (int i = 0; i < e.duration_frames; ++i, ++frame) {
            if (e.pitch_hz == 0.0) {
                f0.push_back(0.0);
            } else {
                double t = double(frame) * kFrameSamples / 16000.0;
                double vib = 1.0 + 0.002 * std::sin(2.0 * M_PI * 5.5 * t + vib_phase);
                f0.push_back(e.pitch_hz * vib);
            }
        }
    return f0;
}

// Formant-like spectral envelope keyed by phoneme id.
inline double formant_gain(double freq, int phoneme) {
    double f1 = 300.0 + 40.0 * double(phoneme % 8);
    double f2 = 900.0 + 120.0 * double((phoneme / 8) % 5);
    auto peak = [](double f, double center, double bw) {
        double d = (f - center) / bw;
        return std::exp(-0.5 * d * d);
    };
    return 0.25 + peak(freq, f1, 150.0) + 0.7 * peak(freq, f2, 250.0);
}

}  // namespace gen_detail

// Additive sawtooth vocal following the melody; the returned score's F0 is the
// rendered per-frame pitch, rounded to integer Hz.
inline std::pair<Waveform, MusicScore> render_vocal(const SongSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<double> f0 = gen_detail::frame_pitch(spec, seed);
    int n_frames = int(f0.size());
    Waveform w;
    w.samples.assign(size_t(n_frames) * kFrameSamples, 0.0);

    // continuous-phase additive rendering, per-phoneme harmonic envelope
    double phase = 0.0;
    int note_idx = 0, note_frame_left = spec.melody.empty() ? 0 : spec.melody[0].duration_frames;
    for (int fr = 0; fr < n_frames; ++fr) {
        while (note_frame_left == 0 && note_idx + 1 < int(spec.melody.size())) {
            ++note_idx;
            note_frame_left = spec.melody[size_t(note_idx)].duration_frames;
        }
        int phoneme = spec.phonemes.empty() ? 0 : spec.phonemes[size_t(note_idx)];
        double hz = f0[size_t(fr)];
        if (hz > 0.0) {
            for (int i = 0; i < kFrameSamples; ++i) {
                phase += 2.0 * M_PI * hz / 16000.0;
                double v = 0.0;
                for (int h = 1; h <= 8; ++h) {
                    double hf = hz * h;
                    if (hf > 7500.0) break;
                    v += std::sin(phase * h) / double(h) * gen_detail::formant_gain(hf, phoneme);
                }
                w.samples[size_t(fr) * kFrameSamples + size_t(i)] = 0.22 * v;
            }
        }
        --note_frame_left;
    }

    MusicScore score;
    score.phonemes = spec.phonemes;
    for (const auto& e : spec.melody) score.durations.push_back(e.duration_frames);
    for (double hz : f0) score.f0.push_back(int(std::lround(hz)));
    score.validate();
    return {std::move(w), std::move(score)};
}

// Chordal accompaniment with tag-driven texture: drum/energetic styles place
// sharp percussive hits on the beat grid; mellow/dreamy styles render slow
// sustained pads. Length matches the vocal rendering exactly.
inline Waveform render_accompaniment(const SongSpec& spec, std::uint64_t seed) {
    spec.validate();
    auto rng = make_rng(seed ^ 0x9e3779b97f4a7c15ull);
    int n_frames = spec.total_frames();
    int n = n_frames * kFrameSamples;
    Waveform w;
    w.samples.assign(size_t(n), 0.0);
    bool percussive =
        std::count(spec.tags.begin(), spec.tags.end(), "drums") ||
        std::count(spec.tags.begin(), spec.tags.end(), "energetic");

    // chord bed: root-position triad on the key, one chord per 2 s, low register
    double root_hz = 55.0 * std::pow(2.0, double(spec.key) / 12.0);
    static const double triad[] = {0.0, 4.0, 7.0};
    double pad_attack = percussive ? 0.01 : 0.6;  // seconds
    int chord_len = 2 * 16000;
    for (int start = 0; start < n; start += chord_len) {
        int len = std::min(chord_len, n - start);
        double degree = double((start / chord_len) % 3) * 2.0;
        for (int v = 0; v < 3; ++v) {
            double hz = root_hz * std::pow(2.0, (triad[v] + degree) / 12.0);
            double ph = 2.0 * M_PI * double(rng() % 1000) / 1000.0;
            for (int i = 0; i < len; ++i) {
                double t = double(i) / 16000.0;
                double env = std::min(1.0, t / pad_attack) *
                             std::min(1.0, double(len - i) / (0.05 * 16000.0));
                double amp = percussive ? 0.05 : 0.11;
                w.samples[size_t(start + i)] +=
                    amp * env * (std::sin(2.0 * M_PI * hz * t + ph) +
                                 0.3 * std::sin(2.0 * M_PI * 2.0 * hz * t + ph));
            }
        }
    }

    if (percussive) {
        // noise-burst hits on the beat grid
        std::normal_distribution<double> nd(0.0, 1.0);
        int beat = std::max(1, int(std::lround(60.0 / spec.tempo_bpm * 16000.0)));
        for (int start = 0; start < n; start += beat) {
            int len = std::min(800, n - start);
            double gain = (start / beat) % 2 == 0 ? 0.5 : 0.3;
            for (int i = 0; i < len; ++i) {
                double env = std::exp(-double(i) / 120.0);
                w.samples[size_t(start + i)] += gain * env * nd(rng);
            }
        }
    }

    for (double& s : w.samples) s = clamp_sample(s);
    return w;
}

// ---- segmentation ----

struct ClipPair {
    Waveform vocal, accomp;
};

// Non-overlapping aligned clips; trailing remainder shorter than clip_len is
// dropped.
inline std::vector<ClipPair> segment_clips(const Waveform& vocal, const Waveform& accomp,
                                           int clip_len_samples = 10 * 16000) {
    if (vocal.samples.size() != accomp.samples.size())
        throw ValidationError("segment_clips: stems differ in length");
    if (clip_len_samples < 1) throw ValidationError("segment_clips: clip length must be positive");
    std::vector<ClipPair> out;
    for (std::size_t start = 0; start + size_t(clip_len_samples) <= vocal.samples.size();
         start += size_t(clip_len_samples)) {
        ClipPair c;
        c.vocal.samples.assign(vocal.samples.begin() + long(start),
                               vocal.samples.begin() + long(start) + clip_len_samples);
        c.accomp.samples.assign(accomp.samples.begin() + long(start),
                                accomp.samples.begin() + long(start) + clip_len_samples);
        out.push_back(std::move(c));
    }
    return out;
}

struct SegmentRange {
    int start_sample = 0;
    int end_sample = 0;  // exclusive
    bool fallback_cut = false;
};

// Greedy phrase-boundary segmentation into [min,max]-second pieces. Cuts land
// on phrase ends when one lies in range; otherwise a hard cut at max length is
// taken and flagged. Segments partition the stream exactly.
inline std::vector<SegmentRange> segment_by_phrase(int total_samples,
                                                   const std::vector<int>& phrase_end_samples,
                                                   double min_s = 6.0, double max_s = 10.0) {
    if (total_samples < 0) throw ValidationError("segment_by_phrase: negative length");
    int min_len = int(min_s * 16000.0), max_len = int(max_s * 16000.0);
    std::vector<SegmentRange> out;
    int cur = 0;
    while (cur < total_samples) {
        if (total_samples - cur <= max_len) {
            out.push_back({cur, total_samples, false});
            break;
        }
        int best = -1;
        for (int b : phrase_end_samples)
            if (b > cur + min_len && b <= cur + max_len) best = std::max(best, b);
        if (best < 0) {
            out.push_back({cur, cur + max_len, true});
            cur += max_len;
        } else {
            out.push_back({cur, best, false});
            cur = best;
        }
    }
    return out;
}

// ---- captions ----

// Deterministic template family; every tag appears verbatim.
inline std::string generate_caption(const std::vector<std::string>& tags, std::uint64_t seed) {
    if (tags.empty()) throw ValidationError("generate_caption: tags must be non-empty");
    for (const auto& t : tags)
        if (!known_tag(t)) throw ValidationError("generate_caption: unknown tag '" + t + "'");
    std::vector<std::string> genres, instruments, moods;
    for (const auto& t : tags) {
        if (std::find(genre_tags().begin(), genre_tags().end(), t) != genre_tags().end())
            genres.push_back(t);
        else if (std::find(instrument_tags().begin(), instrument_tags().end(), t) !=
                 instrument_tags().end())
            instruments.push_back(t);
        else
            moods.push_back(t);
    }
    auto join = [](const std::vector<std::string>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " and " : "") + v[i];
        return s;
    };
    std::string mood = moods.empty() ? "expressive" : join(moods);
    std::string genre = genres.empty() ? "music" : join(genres);
    std::string inst = instruments.empty() ? "voice" : join(instruments);
    auto rng = make_rng(seed);
    switch (rng() % 3) {
        case 0: return "This is a " + mood + " " + genre + " piece led by " + inst + ".";
        case 1: return "A " + mood + " " + genre + " track featuring " + inst + ".";
        default: return "A " + genre + " song with " + inst + ", " + mood + " in character.";
    }
}

// ---- corpus assembly ----

struct ManifestRow {
    std::string id;
    std::string vocal_wav;
    std::string accomp_wav;
    std::string score_path;
    std::vector<std::string> tags;
    std::string caption;
    std::string split;  // train / valid / test
    std::string role;   // "song" (captioned pair) or "svs" (score+vocal only)

    Json to_json() const {
        return Json{{"id", id},           {"vocal_wav", vocal_wav}, {"accomp_wav", accomp_wav},
                    {"score", score_path}, {"tags", tags},           {"caption", caption},
                    {"split", split},     {"role", role}};
    }
    static ManifestRow from_json(const Json& j) {
        ManifestRow r;
        r.id = j.at("id");
        r.vocal_wav = j.at("vocal_wav");
        r.accomp_wav = j.at("accomp_wav");
        r.score_path = j.at("score");
        r.tags = j.at("tags").get<std::vector<std::string>>();
        r.caption = j.at("caption");
        r.split = j.at("split");
        r.role = j.at("role");
        return r;
    }
};

struct CorpusManifest {
    std::vector<ManifestRow> rows;
};

struct CorpusConfig {
    std::string out_dir;
    bool exclude_svs_extra = false;  // drop score-only training rows
    bool exclude_song_data = false;  // drop captioned pair rows
    double svs_extra_fraction = 0.2;
    int min_frames = 300;
    int max_frames = 500;
};

inline void write_manifest(const std::string& path, const CorpusManifest& m) {
    std::ofstream os(path);
    if (!os) throw RuntimeFailure("cannot write manifest: " + path);
    for (const auto& r : m.rows) os << r.to_json().dump() << "\n";
}

inline CorpusManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw MissingPrerequisiteError("manifest not found: " + path);
    CorpusManifest m;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        m.rows.push_back(ManifestRow::from_json(Json::parse(line)));
    }
    return m;
}

// Renders n_songs songs (one 6-10 s segment each) into out_dir with stems,
// scores, captions, and an 80/10/10 split.
inline CorpusManifest build_corpus(int n_songs, const CorpusConfig& cfg, std::uint64_t seed) {
    if (n_songs < 1) throw ValidationError("build_corpus: need at least one song");
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    auto rng = make_rng(seed);
    CorpusManifest manifest;
    int n_train = n_songs * 8 / 10;
    int n_valid = n_songs / 10;
    for (int i = 0; i < n_songs; ++i) {
        SongSpec spec = random_song_spec(rng, cfg.min_frames, cfg.max_frames);
        std::uint64_t song_seed = rng();
        auto [vocal, score] = render_vocal(spec, song_seed);
        Waveform accomp = render_accompaniment(spec, song_seed);

        ManifestRow row;
        row.id = "song" + std::to_string(i);
        row.tags = spec.tags;
        row.caption = generate_caption(spec.tags, song_seed);
        row.split = i < n_train ? "train" : (i < n_train + n_valid ? "valid" : "test");
        row.role = double(rng() % 1000) / 1000.0 < cfg.svs_extra_fraction ? "svs" : "song";
        row.vocal_wav = (fs::path(cfg.out_dir) / (row.id + "_vocal.wav")).string();
        row.accomp_wav = (fs::path(cfg.out_dir) / (row.id + "_accomp.wav")).string();
        row.score_path = (fs::path(cfg.out_dir) / (row.id + "_score.json")).string();
        write_wav(row.vocal_wav, vocal);
        write_wav(row.accomp_wav, accomp);
        write_score(row.score_path, score);
        if (row.role == "svs" && cfg.exclude_svs_extra) continue;
        if (row.role == "song" && cfg.exclude_song_data) continue;
        manifest.rows.push_back(std::move(row));
    }
    return manifest;
}

}  // namespace melodist
