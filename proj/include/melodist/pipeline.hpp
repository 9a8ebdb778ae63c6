#pragma once

// Two-stage synthesis: score -> vocal tokens -> (with prompt) accompaniment
// tokens -> per-stem decoding -> mixdown.

#include <chrono>
#include <string>
#include <vector>

#include "melodist/codec.hpp"
#include "melodist/mstransformer.hpp"
#include "melodist/score.hpp"
#include "melodist/tritower.hpp"

namespace melodist {

// ---- pitch bucketing ----

constexpr int kPitchBuckets = 256;

// Log-spaced bucket over the 80-1000 Hz vocal range; 0 Hz maps past the last
// bucket (the unvoiced slot).
inline int pitch_bucket(int hz) {
    if (hz <= 0) return kPitchBuckets;
    double lo = 80.0, hi = 1000.0;
    double clamped = std::min(hi, std::max(lo, double(hz)));
    int b = int(std::floor(double(kPitchBuckets) * std::log(clamped / lo) / std::log(hi / lo)));
    return std::min(kPitchBuckets - 1, std::max(0, b));
}

// ---- stage 1 conditioning ----

// Frame-aligned interleaving: for every frame, the phoneme sounding there and
// the frame's pitch bucket, as two discrete condition elements.
inline ConditionSequence prepare_svs_condition(const MusicScore& score,
                                               const VocabLayout& layout) {
    score.validate();
    if (layout.pitch_size != kPitchBuckets + 1)
        throw ConfigurationError("prepare_svs_condition: layout pitch table size mismatch");
    ConditionSequence cond;
    int frame = 0;
    for (std::size_t p = 0; p < score.phonemes.size(); ++p)
        for (int i = 0; i < score.durations[p]; ++i, ++frame) {
            cond.push_back(CondElem::discrete(layout.phoneme_offset + score.phonemes[p]));
            cond.push_back(
                CondElem::discrete(layout.pitch_offset + pitch_bucket(score.f0[size_t(frame)])));
        }
    return cond;
}

inline UnifiedSequence condition_prefix(const VocabLayout& layout, const ConditionSequence& cond,
                                        Eigen::MatrixXd cont_rows = {}) {
    AcousticTokenGrid empty;
    empty.n_q_used = layout.n_q;
    auto patches = expand_condition(cond, layout.n_q);
    UnifiedSequence u = pack_sequence(patches, empty, layout, std::move(cont_rows));
    u.patches.resize(size_t(u.boundary));  // drop the EOS patch, keep BOS+cond+SEP
    u.loss_mask.resize(size_t(u.boundary));
    return u;
}

inline AcousticTokenGrid synthesize_vocal(const MsTransformer& model, const MusicScore& score,
                                          const SamplingParams& sp = {}, int max_frames = -1) {
    if (model.cfg.cond_dim != 0)
        throw ConfigurationError("synthesize_vocal: model expects continuous conditions");
    ConditionSequence cond = prepare_svs_condition(score, model.layout);
    UnifiedSequence prefix = condition_prefix(model.layout, cond);
    int frames = max_frames >= 0 ? max_frames : score.total_frames() + 8;
    return generate(model, prefix, frames, sp);
}

// ---- stage 2 conditioning ----

struct V2aCondition {
    ConditionSequence cond;
    Eigen::MatrixXd cont_rows;  // per-token text hidden states
};

// Continuous prompt rows (frozen text encoder hidden states) followed by the
// vocal token frames as full patches.
inline V2aCondition prepare_v2a_condition(const AcousticTokenGrid& vocal_tokens,
                                          const std::string& prompt, const TriTower& text_enc,
                                          const VocabLayout& layout) {
    if (prompt.empty()) throw ValidationError("prepare_v2a_condition: empty prompt");
    for (const auto& p : text_enc.params.all())
        if (p->requires_grad)
            throw ConfigurationError("prepare_v2a_condition: text encoder must be frozen");
    vocal_tokens.validate();
    V2aCondition out;
    out.cont_rows = encode_text_tokens(text_enc, prompt);
    for (int i = 0; i < int(out.cont_rows.rows()); ++i)
        out.cond.push_back(CondElem::continuous(out.cont_rows.row(i)));
    for (int t = 0; t < vocal_tokens.frames(); ++t) {
        std::vector<int> ids;
        for (int k = 0; k < vocal_tokens.n_q_used; ++k)
            ids.push_back(layout.audio_offset + vocal_tokens.tokens[size_t(t)][size_t(k)]);
        out.cond.push_back(CondElem::full_patch(std::move(ids)));
    }
    return out;
}

// Accompaniment generation pinned to exactly the vocal frame count: stopping
// early is suppressed and the stop is forced at that length.
inline AcousticTokenGrid synthesize_accompaniment(const MsTransformer& model,
                                                  const AcousticTokenGrid& vocal_tokens,
                                                  const std::string& prompt,
                                                  const TriTower& text_enc,
                                                  const SamplingParams& sp = {}) {
    if (model.cfg.cond_dim != text_enc.cfg.width)
        throw ConfigurationError(
            "synthesize_accompaniment: model condition width does not match the text encoder");
    V2aCondition vc = prepare_v2a_condition(vocal_tokens, prompt, text_enc, model.layout);
    Eigen::MatrixXd rows;
    auto patches = expand_condition(vc.cond, model.layout.n_q, &rows);
    AcousticTokenGrid empty;
    empty.n_q_used = model.layout.n_q;
    UnifiedSequence prefix = pack_sequence(patches, empty, model.layout, std::move(rows));
    prefix.patches.resize(size_t(prefix.boundary));
    prefix.loss_mask.resize(size_t(prefix.boundary));
    SamplingParams pinned = sp;
    pinned.min_frames = vocal_tokens.frames();
    pinned.force_stop_frames = vocal_tokens.frames();
    return generate(model, prefix, vocal_tokens.frames(), pinned);
}

// ---- end-to-end ----

struct SongModels {
    const MsTransformer* svs = nullptr;
    const MsTransformer* v2a = nullptr;
    const CodecModel* vocal_codec = nullptr;
    const CodecModel* accomp_codec = nullptr;
    const TriTower* text_enc = nullptr;
};

struct SongOutput {
    Waveform vocal, accompaniment, mix;
    AcousticTokenGrid stage1_tokens, stage2_tokens;
    std::string prompt;
    Json report;
};

namespace pipe_detail {

template <typename F>
auto run_stage(const char* stage, F&& f) {
    try {
        return f();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(stage) + ": " + e.what());
    } catch (const ConfigurationError& e) {
        throw ConfigurationError(std::string(stage) + ": " + e.what());
    } catch (const MissingPrerequisiteError& e) {
        throw MissingPrerequisiteError(std::string(stage) + ": " + e.what());
    } catch (const RuntimeFailure& e) {
        throw RuntimeFailure(std::string(stage) + ": " + e.what());
    }
}

}  // namespace pipe_detail

inline SongOutput text_to_song(const MusicScore& score, const std::string& prompt,
                               const SongModels& models, const SamplingParams& stage1_sp,
                               const SamplingParams& stage2_sp) {
    if (!models.svs || !models.v2a || !models.vocal_codec || !models.accomp_codec ||
        !models.text_enc)
        throw MissingPrerequisiteError("text_to_song: all five models must be provided");
    auto t0 = std::chrono::steady_clock::now();
    SongOutput out;
    out.prompt = prompt;
    out.stage1_tokens = pipe_detail::run_stage(
        "stage1", [&] { return synthesize_vocal(*models.svs, score, stage1_sp); });
    auto t1 = std::chrono::steady_clock::now();
    out.stage2_tokens = pipe_detail::run_stage("stage2", [&] {
        return synthesize_accompaniment(*models.v2a, out.stage1_tokens, prompt, *models.text_enc,
                                        stage2_sp);
    });
    auto t2 = std::chrono::steady_clock::now();
    out.vocal = pipe_detail::run_stage(
        "vocal decode", [&] { return vocode(out.stage1_tokens, *models.vocal_codec); });
    out.accompaniment = pipe_detail::run_stage(
        "accompaniment decode", [&] { return vocode(out.stage2_tokens, *models.accomp_codec); });
    out.mix = pipe_detail::run_stage("mixdown", [&] { return mix(out.vocal, out.accompaniment); });
    auto t3 = std::chrono::steady_clock::now();

    auto ms = [](auto a, auto b) {
        return std::chrono::duration_cast<std::chrono::milliseconds>(b - a).count();
    };
    out.report = Json{{"prompt", prompt},
                      {"stage1_frames", out.stage1_tokens.frames()},
                      {"stage2_frames", out.stage2_tokens.frames()},
                      {"stage1_seed", stage1_sp.seed},
                      {"stage2_seed", stage2_sp.seed},
                      {"top_k", stage1_sp.top_k},
                      {"temperature", stage1_sp.temperature},
                      {"mix_samples", out.mix.samples.size()},
                      {"timings_ms", Json{{"stage1", ms(t0, t1)},
                                          {"stage2", ms(t1, t2)},
                                          {"decode_and_mix", ms(t2, t3)}}}};
    return out;
}

}  // namespace melodist
