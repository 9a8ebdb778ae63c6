#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "melodist/datagen.hpp"

using namespace melodist;
namespace fs = std::filesystem;

namespace {

SongSpec single_note_spec(double hz, int frames, const std::vector<std::string>& tags) {
    SongSpec s;
    s.tempo_bpm = 100.0;
    s.key = 0;
    s.melody = {NoteEvent{hz, frames}};
    s.phonemes = {5};
    s.phrase_ends = {0};
    s.tags = tags;
    return s;
}

}  // namespace

TEST_CASE("vocal rendering follows the scored pitch") {
    auto spec = single_note_spec(220.0, 50, {"pop", "piano", "mellow"});  // 1 s at A3
    auto [w, score] = render_vocal(spec, 7);
    REQUIRE(int(w.samples.size()) == 50 * kFrameSamples);
    score.validate();
    REQUIRE(score.total_frames() == 50);

    auto est = dsp::extract_f0(w);
    int voiced = 0, close = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        if (est[i] == 0) continue;
        ++voiced;
        if (std::abs(est[i] - 220) <= 1) ++close;
    }
    REQUIRE(voiced > 0);
    CHECK(double(close) / voiced >= 0.95);
    // scored f0 is the rendered pitch rounded: within 1 Hz of the note
    for (int v : score.f0) CHECK(std::abs(v - 220) <= 1);
}

TEST_CASE("rest-only spec renders silence with an all-unvoiced score") {
    auto spec = single_note_spec(0.0, 30, {"jazz", "guitar", "dreamy"});
    auto [w, score] = render_vocal(spec, 3);
    for (double s : w.samples) CHECK(s == 0.0);
    for (int v : score.f0) CHECK(v == 0);
}

TEST_CASE("rendering is deterministic per seed") {
    Rng rng = make_rng(5);
    auto spec = random_song_spec(rng);
    auto [w1, s1] = render_vocal(spec, 9);
    auto [w2, s2] = render_vocal(spec, 9);
    CHECK(w1.samples == w2.samples);
    CHECK(s1.f0 == s2.f0);
    auto a1 = render_accompaniment(spec, 9);
    auto a2 = render_accompaniment(spec, 9);
    CHECK(a1.samples == a2.samples);
    // stems share the clock exactly
    CHECK(a1.samples.size() == w1.samples.size());
}

TEST_CASE("pitch outside the vocal range is rejected") {
    auto spec = single_note_spec(60.0, 20, {"pop", "synth", "mellow"});
    CHECK_THROWS_AS(render_vocal(spec, 1), ValidationError);
    spec.melody[0].pitch_hz = 1500.0;
    CHECK_THROWS_AS(render_vocal(spec, 1), ValidationError);
    spec.melody[0].pitch_hz = 220.0;
    spec.tags.clear();
    CHECK_THROWS_AS(render_vocal(spec, 1), ValidationError);
}

TEST_CASE("percussive styles produce far more onsets than pads") {
    Rng rng = make_rng(8);
    auto spec = random_song_spec(rng, 300, 320);
    spec.tags = {"rock", "drums", "energetic"};
    auto drums = render_accompaniment(spec, 4);
    spec.tags = {"jazz", "piano", "mellow"};
    auto pad = render_accompaniment(spec, 4);
    int onsets_drums = dsp::count_onsets(drums);
    int onsets_pad = dsp::count_onsets(pad);
    INFO("drums=" << onsets_drums << " pad=" << onsets_pad);
    CHECK(onsets_drums >= 2 * std::max(1, onsets_pad));
}

TEST_CASE("clip segmentation arithmetic and alignment") {
    Waveform v, a;
    v.samples.assign(35 * 16000, 0.25);
    a.samples.assign(35 * 16000, -0.25);
    for (std::size_t i = 0; i < v.samples.size(); ++i) v.samples[i] = double(i % 97) / 97.0;
    auto clips = segment_clips(v, a);
    REQUIRE(clips.size() == 3);
    for (std::size_t c = 0; c < clips.size(); ++c) {
        CHECK(clips[c].vocal.samples.size() == 10u * 16000u);
        // clip k covers the same sample range in both stems
        CHECK(clips[c].vocal.samples[0] == v.samples[c * 10 * 16000]);
    }
    Waveform w9;
    w9.samples.assign(9 * 16000, 0.0);
    CHECK(segment_clips(w9, w9).empty());
    CHECK_THROWS_AS(segment_clips(v, w9), ValidationError);
}

TEST_CASE("phrase segmentation cuts at boundaries and partitions the stream") {
    int total = 32 * 16000;
    std::vector<int> phrase_ends;
    for (int t = 4; t < 32; t += 4) phrase_ends.push_back(t * 16000);  // every 4 s

    auto segs = segment_by_phrase(total, phrase_ends);
    REQUIRE_FALSE(segs.empty());
    int cur = 0;
    for (const auto& s : segs) {
        CHECK(s.start_sample == cur);
        cur = s.end_sample;
        CHECK_FALSE(s.fallback_cut);
    }
    CHECK(cur == total);
    // greedy: two 4 s phrases per 8 s segment
    CHECK(segs[0].end_sample == 8 * 16000);

    // single 7 s phrase -> one 7 s segment
    auto one = segment_by_phrase(7 * 16000, {7 * 16000});
    REQUIRE(one.size() == 1);
    CHECK(one[0].end_sample == 7 * 16000);

    // no boundary in range -> hard cut, flagged
    auto hard = segment_by_phrase(25 * 16000, {});
    CHECK(hard[0].fallback_cut);
    CHECK(hard[0].end_sample == 10 * 16000);
    int end = 0;
    for (const auto& s : hard) end = s.end_sample;
    CHECK(end == 25 * 16000);
}

TEST_CASE("f0 extraction on controlled signals") {
    Waveform sine;
    int n = 16000;
    sine.samples.resize(size_t(n));
    for (int i = 0; i < n; ++i)
        sine.samples[size_t(i)] = 0.5 * std::sin(2.0 * M_PI * 220.0 * i / 16000.0);
    auto f0 = dsp::extract_f0(sine);
    int interior_ok = 0, interior = 0;
    for (std::size_t i = 2; i + 2 < f0.size(); ++i) {
        ++interior;
        if (f0[i] == 220) ++interior_ok;
    }
    CHECK(interior_ok == interior);

    Waveform silence;
    silence.samples.assign(16000, 0.0);
    for (int v : dsp::extract_f0(silence)) CHECK(v == 0);

    Waveform mix;
    mix.samples.resize(size_t(n));
    for (int i = 0; i < n; ++i)
        mix.samples[size_t(i)] = 0.4 * std::sin(2.0 * M_PI * 220.0 * i / 16000.0) +
                                 0.3 * std::sin(2.0 * M_PI * 440.0 * i / 16000.0);
    auto fm = dsp::extract_f0(mix);
    int ok = 0;
    for (int v : fm)
        if (std::abs(v - 220) <= 2) ++ok;
    CHECK(double(ok) / double(fm.size()) >= 0.9);
}

TEST_CASE("caption generation is faithful and deterministic") {
    std::vector<std::string> tags = {"pop", "piano", "mellow"};
    auto c1 = generate_caption(tags, 11);
    auto c2 = generate_caption(tags, 11);
    CHECK(c1 == c2);
    for (const auto& t : tags) CHECK(c1.find(t) != std::string::npos);

    // every taxonomy combination keeps all tags verbatim
    Rng rng = make_rng(1);
    for (const auto& g : genre_tags())
        for (const auto& i : instrument_tags())
            for (const auto& m : mood_tags()) {
                auto cap = generate_caption({g, i, m}, rng());
                CHECK(cap.find(g) != std::string::npos);
                CHECK(cap.find(i) != std::string::npos);
                CHECK(cap.find(m) != std::string::npos);
            }

    CHECK_THROWS_AS(generate_caption({}, 0), ValidationError);
    CHECK_THROWS_AS(generate_caption({"polka"}, 0), ValidationError);
}

TEST_CASE("corpus build: splits, determinism, invariants, ablation") {
    std::string dir = "datagen_corpus_test";
    CorpusConfig cfg;
    cfg.out_dir = dir;
    cfg.min_frames = 300;
    cfg.max_frames = 320;
    auto m1 = build_corpus(20, cfg, 42);
    REQUIRE(m1.rows.size() == 20);
    int train = 0, valid = 0, test = 0;
    for (const auto& r : m1.rows) {
        if (r.split == "train") ++train;
        if (r.split == "valid") ++valid;
        if (r.split == "test") ++test;
        // stems aligned, score consistent with the vocal length
        auto v = read_wav(r.vocal_wav);
        auto a = read_wav(r.accomp_wav);
        auto s = read_score(r.score_path);
        CHECK(v.samples.size() == a.samples.size());
        CHECK(s.total_frames() * kFrameSamples == int(v.samples.size()));
        for (const auto& t : r.tags) CHECK(r.caption.find(t) != std::string::npos);
    }
    CHECK(train == 16);
    CHECK(valid == 2);
    CHECK(test == 2);

    auto m2 = build_corpus(20, cfg, 42);
    REQUIRE(m2.rows.size() == m1.rows.size());
    for (std::size_t i = 0; i < m1.rows.size(); ++i)
        CHECK(m1.rows[i].to_json() == m2.rows[i].to_json());

    // ablations drop exactly the matching role
    CorpusConfig no_svs = cfg;
    no_svs.exclude_svs_extra = true;
    auto m3 = build_corpus(20, no_svs, 42);
    for (const auto& r : m3.rows) CHECK(r.role == "song");
    CorpusConfig no_song = cfg;
    no_song.exclude_song_data = true;
    auto m4 = build_corpus(20, no_song, 42);
    for (const auto& r : m4.rows) CHECK(r.role == "svs");
    CHECK(m3.rows.size() + m4.rows.size() == m1.rows.size());

    // manifest io round trip
    write_manifest(dir + "/manifest.jsonl", m1);
    auto back = read_manifest(dir + "/manifest.jsonl");
    REQUIRE(back.rows.size() == m1.rows.size());
    CHECK(back.rows[0].to_json() == m1.rows[0].to_json());

    fs::remove_all(dir);
}
