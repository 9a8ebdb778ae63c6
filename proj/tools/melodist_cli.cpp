// melodist command-line driver: data synthesis, training, generation, eval.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 missing
// prerequisite (file or checkpoint), 3 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "melodist/audio.hpp"
#include "melodist/checkpoint.hpp"
#include "melodist/codec.hpp"
#include "melodist/common.hpp"
#include "melodist/config.hpp"
#include "melodist/datagen.hpp"
#include "melodist/dsp.hpp"
#include "melodist/evalkit.hpp"
#include "melodist/mstransformer.hpp"
#include "melodist/pipeline.hpp"
#include "melodist/seqlayout.hpp"
#include "melodist/tritower.hpp"

namespace fs = std::filesystem;
using namespace melodist;

namespace {

void require_writable_dir(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw ValidationError("output directory " + dir +
                              " is not empty; pass --force to write into it");
    fs::create_directories(dir);
}

std::string ckpt_path(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.get("run.out")) / (name + ".ckpt")).string();
}

std::string manifest_path(const RunConfig& cfg) {
    return (fs::path(cfg.get("run.out")) / "corpus" / "manifest.jsonl").string();
}

CodecConfig codec_config(const RunConfig& cfg) {
    CodecConfig c;
    c.latent_dim = int(cfg.get_int("model.latent_dim"));
    c.n_q = int(cfg.get_int("model.n_q")) + 1;
    c.n_q_used = int(cfg.get_int("model.n_q"));
    int ch = int(cfg.get_int("model.codec_channels"));
    c.encoder_channels = {ch, ch, ch, ch, ch, c.latent_dim};
    c.decoder_channels = {c.latent_dim, ch, ch, ch, ch, ch};
    return c;
}

MsModelConfig ms_config(const RunConfig& cfg, int cond_dim) {
    MsModelConfig m;
    m.global_layers = int(cfg.get_int("model.global_layers"));
    m.global_width = int(cfg.get_int("model.global_width"));
    m.global_heads = int(cfg.get_int("model.global_heads"));
    m.global_ffn = 4 * m.global_width;
    m.local_layers = int(cfg.get_int("model.local_layers"));
    m.local_width = int(cfg.get_int("model.local_width"));
    m.local_heads = int(cfg.get_int("model.local_heads"));
    m.local_ffn = 4 * m.local_width;
    m.n_q = int(cfg.get_int("model.n_q"));
    m.max_frames = int(cfg.get_int("model.max_frames"));
    m.cond_dim = cond_dim;
    return m;
}

VocabLayout layout_for(const RunConfig& cfg) {
    VocabLayout L;
    L.n_q = int(cfg.get_int("model.n_q"));
    return L;
}

CodecModel load_codec_or_die(const RunConfig& cfg, const std::string& name) {
    std::string path = ckpt_path(cfg, name);
    if (!fs::exists(path))
        throw MissingPrerequisiteError(name + " checkpoint not found at " + path +
                                       "; run `melodist train codec` first");
    return load_codec(path);
}

std::vector<ManifestRow> split_rows(const CorpusManifest& m, const std::string& split) {
    std::vector<ManifestRow> out;
    for (const auto& r : m.rows)
        if (r.split == split) out.push_back(r);
    return out;
}

// Run-length re-encoding of a frame range of a score; used to train on short
// crops of full-length corpus songs.
MusicScore crop_score(const MusicScore& s, int t0, int len) {
    std::vector<int> ph_at;
    for (std::size_t i = 0; i < s.phonemes.size(); ++i)
        for (int d = 0; d < s.durations[i]; ++d) ph_at.push_back(s.phonemes[i]);
    MusicScore out;
    for (int t = t0; t < t0 + len; ++t) {
        if (out.phonemes.empty() || ph_at[size_t(t)] != out.phonemes.back()) {
            out.phonemes.push_back(ph_at[size_t(t)]);
            out.durations.push_back(1);
        } else {
            ++out.durations.back();
        }
        out.f0.push_back(s.f0[size_t(t)]);
    }
    return out;
}

AcousticTokenGrid crop_grid(const AcousticTokenGrid& g, int t0, int len) {
    AcousticTokenGrid out;
    out.n_q_used = g.n_q_used;
    out.frame_rate = g.frame_rate;
    out.tokens.assign(g.tokens.begin() + t0, g.tokens.begin() + t0 + len);
    return out;
}

UnifiedSequence pack(const VocabLayout& L, const ConditionSequence& cond,
                     const AcousticTokenGrid& g) {
    Eigen::MatrixXd rows;
    auto patches = expand_condition(cond, L.n_q, &rows);
    return pack_sequence(patches, g, L, std::move(rows));
}

void freeze(const nn::ParamStore& params) {
    for (const auto& p : params.all()) p->requires_grad = false;
}

Eigen::MatrixXd crop_spec(const Eigen::MatrixXd& spec, int frames) {
    return spec.middleCols(0, std::min<int>(frames, int(spec.cols())));
}

std::vector<Triplet> load_triplets(const RunConfig& cfg, const std::string& split,
                                   int crop_frames) {
    CorpusManifest manifest = read_manifest(manifest_path(cfg));
    std::vector<Triplet> out;
    for (const auto& r : split_rows(manifest, split)) {
        if (r.role != "song") continue;
        Triplet t;
        t.id = r.id;
        t.caption = r.caption;
        t.tags = r.tags;
        t.vocal_spec = crop_spec(dsp::log_mel_spectrogram(read_wav(r.vocal_wav)), crop_frames);
        t.accomp_spec = crop_spec(dsp::log_mel_spectrogram(read_wav(r.accomp_wav)), crop_frames);
        out.push_back(std::move(t));
    }
    if (out.empty())
        throw MissingPrerequisiteError("no captioned rows in split '" + split +
                                       "'; run `melodist data synth` first");
    return out;
}

// ---- subcommand bodies ----

int cmd_data_synth(const RunConfig& cfg, bool force) {
    std::string out_dir = cfg.get("run.out");
    std::string corpus_dir = (fs::path(out_dir) / "corpus").string();
    require_writable_dir(corpus_dir, force);
    CorpusConfig cc;
    cc.out_dir = corpus_dir;
    cc.exclude_svs_extra = cfg.get_bool("data.exclude_svs_extra");
    cc.exclude_song_data = cfg.get_bool("data.exclude_song_data");
    cc.min_frames = int(cfg.get_int("data.min_frames"));
    cc.max_frames = int(cfg.get_int("data.max_frames"));
    CorpusManifest manifest =
        build_corpus(int(cfg.get_int("data.songs")), cc, std::uint64_t(cfg.get_int("run.seed")));
    write_manifest(manifest_path(cfg), manifest);
    snapshot_config(cfg, out_dir);
    std::cout << "wrote " << manifest.rows.size() << " corpus rows to " << corpus_dir << "\n";
    return 0;
}

int cmd_train_codec(const RunConfig& cfg) {
    CorpusManifest manifest = read_manifest(manifest_path(cfg));
    auto rows = split_rows(manifest, "train");
    if (rows.empty()) throw MissingPrerequisiteError("no training rows in the corpus manifest");
    CodecTrainOptions opt;
    opt.steps = int(cfg.get_int("train.codec_steps"));
    opt.lr = cfg.get_double("train.lr");
    opt.segment_frames = int(cfg.get_int("train.segment_frames"));
    opt.seed = std::uint64_t(cfg.get_int("run.seed"));
    CodecConfig cc = codec_config(cfg);
    for (StemKind stem : {StemKind::Vocal, StemKind::Accompaniment}) {
        std::string name = stem == StemKind::Vocal ? "codec_vocal" : "codec_accomp";
        std::vector<StemClip> clips;
        for (const auto& r : rows)
            clips.push_back({stem == StemKind::Vocal ? r.vocal_wav : r.accomp_wav, stem});
        CodecTrainOptions o = opt;
        o.metrics_path = (fs::path(cfg.get("run.out")) / (name + "_metrics.jsonl")).string();
        CodecModel m = train_codec(clips, cc, stem, o);
        save_codec(ckpt_path(cfg, name), m);
        std::cout << "trained " << name << " (" << o.steps << " steps) -> "
                  << ckpt_path(cfg, name) << "\n";
    }
    snapshot_config(cfg, cfg.get("run.out"));
    return 0;
}

int cmd_train_tritower(const RunConfig& cfg) {
    auto triplets = load_triplets(cfg, "train", int(cfg.get_int("train.crop_frames")));
    std::vector<std::string> captions;
    for (const auto& t : triplets) captions.push_back(t.caption);
    TriTowerConfig tc;
    tc.width = int(cfg.get_int("model.tritower_width"));
    tc.embed_dim = tc.width;
    tc.layers = int(cfg.get_int("model.tritower_layers"));
    tc.ffn = 2 * tc.width;
    tc.text_aug = cfg.get_bool("tritower.text_aug");
    tc.spec_aug = cfg.get_bool("tritower.spec_aug");
    TriTower m = make_tritower(tc, TextVocab::build(captions, tc.max_text_chars),
                               std::uint64_t(cfg.get_int("run.seed")));
    TriTrainOptions opt;
    opt.steps = int(cfg.get_int("train.tritower_steps"));
    opt.lr = cfg.get_double("train.lr");
    opt.crop_frames = int(cfg.get_int("train.crop_frames"));
    opt.seed = std::uint64_t(cfg.get_int("run.seed"));
    opt.metrics_path = (fs::path(cfg.get("run.out")) / "tritower_metrics.jsonl").string();
    TriTrainReport report = train_tritower(m, triplets, opt);
    save_tritower(ckpt_path(cfg, "tritower"), m);
    snapshot_config(cfg, cfg.get("run.out"));
    std::cout << "trained tritower: loss " << report.initial_loss << " -> " << report.final_loss
              << (report.degenerate_corpus ? " (degenerate corpus!)" : "") << "\n";
    return 0;
}

int cmd_train_svs(const RunConfig& cfg) {
    CodecModel vocal_codec = load_codec_or_die(cfg, "codec_vocal");
    CorpusManifest manifest = read_manifest(manifest_path(cfg));
    auto rows = split_rows(manifest, "train");
    int overfit = int(cfg.get_int("train.overfit"));
    if (overfit > 0 && int(rows.size()) > overfit) rows.resize(std::size_t(overfit));
    if (rows.empty()) throw MissingPrerequisiteError("no training rows in the corpus manifest");

    VocabLayout L = layout_for(cfg);
    int crop = int(cfg.get_int("train.svs_crop_frames"));
    struct Example {
        MusicScore score;
        AcousticTokenGrid grid;
    };
    std::vector<Example> examples;
    for (const auto& r : rows) {
        Example e;
        e.score = read_score(r.score_path);
        e.grid = encode(read_wav(r.vocal_wav), vocal_codec);
        int frames = std::min<int>(e.grid.frames(), int(e.score.f0.size()));
        e.score = crop_score(e.score, 0, frames);
        e.grid = crop_grid(e.grid, 0, frames);
        examples.push_back(std::move(e));
    }

    MsTransformer model =
        make_mstransformer(ms_config(cfg, 0), L, std::uint64_t(cfg.get_int("run.seed")));
    MsTrainOptions mo;
    mo.lr = cfg.get_double("train.lr");
    mo.metrics_path = (fs::path(cfg.get("run.out")) / "svs_metrics.jsonl").string();
    MsTrainer trainer(model, mo);
    auto rng = make_rng(std::uint64_t(cfg.get_int("run.seed")) + 1);
    int steps = int(cfg.get_int("train.svs_steps"));
    double loss = 0.0;
    for (int s = 0; s < steps; ++s) {
        const Example& e = examples[rng() % examples.size()];
        int frames = e.grid.frames();
        int len = std::min(crop, frames);
        int t0 = frames > len ? int(rng() % std::uint64_t(frames - len + 1)) : 0;
        MusicScore sc = crop_score(e.score, t0, len);
        loss = trainer.train_step({pack(L, prepare_svs_condition(sc, L), crop_grid(e.grid, t0, len))});
    }
    save_mstransformer(ckpt_path(cfg, "svs"), model, "svs");
    snapshot_config(cfg, cfg.get("run.out"));
    std::cout << "trained svs (" << steps << " steps, final loss " << loss << ") -> "
              << ckpt_path(cfg, "svs") << "\n";
    return 0;
}

int cmd_train_v2a(const RunConfig& cfg) {
    std::string tri_path = ckpt_path(cfg, "tritower");
    if (!fs::exists(tri_path))
        throw MissingPrerequisiteError(
            "text encoder checkpoint not found at " + tri_path +
            "; run `melodist train tritower` before training the accompaniment stage");
    TriTower text_enc = load_tritower(tri_path);
    freeze(text_enc.params);
    CodecModel vocal_codec = load_codec_or_die(cfg, "codec_vocal");
    CodecModel accomp_codec = load_codec_or_die(cfg, "codec_accomp");
    CorpusManifest manifest = read_manifest(manifest_path(cfg));
    auto rows = split_rows(manifest, "train");
    std::erase_if(rows, [](const ManifestRow& r) { return r.role != "song"; });
    int overfit = int(cfg.get_int("train.overfit"));
    if (overfit > 0 && int(rows.size()) > overfit) rows.resize(std::size_t(overfit));
    if (rows.empty())
        throw MissingPrerequisiteError("no captioned training rows in the corpus manifest");

    VocabLayout L = layout_for(cfg);
    int crop = int(cfg.get_int("train.v2a_crop_frames"));
    struct Example {
        std::string caption;
        AcousticTokenGrid vocal, accomp;
    };
    std::vector<Example> examples;
    for (const auto& r : rows) {
        Example e;
        e.caption = r.caption;
        e.vocal = encode(read_wav(r.vocal_wav), vocal_codec);
        e.accomp = encode(read_wav(r.accomp_wav), accomp_codec);
        int frames = std::min(e.vocal.frames(), e.accomp.frames());
        e.vocal = crop_grid(e.vocal, 0, frames);
        e.accomp = crop_grid(e.accomp, 0, frames);
        examples.push_back(std::move(e));
    }

    MsTransformer model = make_mstransformer(ms_config(cfg, text_enc.cfg.width), L,
                                             std::uint64_t(cfg.get_int("run.seed")));
    MsTrainOptions mo;
    mo.lr = cfg.get_double("train.lr");
    mo.metrics_path = (fs::path(cfg.get("run.out")) / "v2a_metrics.jsonl").string();
    MsTrainer trainer(model, mo);
    auto rng = make_rng(std::uint64_t(cfg.get_int("run.seed")) + 2);
    int steps = int(cfg.get_int("train.v2a_steps"));
    double loss = 0.0;
    for (int s = 0; s < steps; ++s) {
        const Example& e = examples[rng() % examples.size()];
        int frames = e.vocal.frames();
        int len = std::min(crop, frames);
        int t0 = frames > len ? int(rng() % std::uint64_t(frames - len + 1)) : 0;
        V2aCondition vc =
            prepare_v2a_condition(crop_grid(e.vocal, t0, len), e.caption, text_enc, L);
        loss = trainer.train_step({pack(L, vc.cond, crop_grid(e.accomp, t0, len))});
    }
    save_mstransformer(ckpt_path(cfg, "v2a"), model, "v2a");
    snapshot_config(cfg, cfg.get("run.out"));
    std::cout << "trained v2a (" << steps << " steps, final loss " << loss << ") -> "
              << ckpt_path(cfg, "v2a") << "\n";
    return 0;
}

int cmd_generate(const RunConfig& cfg, const std::string& models_dir, const std::string& score_file,
                 const std::string& prompt, bool force) {
    std::string out_dir = cfg.get("run.out");
    require_writable_dir(out_dir, force);
    RunConfig mcfg = cfg;
    mcfg.set("run.out", models_dir);
    for (const char* name : {"codec_vocal", "codec_accomp", "tritower", "svs", "v2a"})
        if (!fs::exists(ckpt_path(mcfg, name)))
            throw MissingPrerequisiteError(std::string(name) + " checkpoint not found in " +
                                           models_dir);

    CodecModel vocal_codec = load_codec(ckpt_path(mcfg, "codec_vocal"));
    CodecModel accomp_codec = load_codec(ckpt_path(mcfg, "codec_accomp"));
    TriTower text_enc = load_tritower(ckpt_path(mcfg, "tritower"));
    freeze(text_enc.params);
    MsTransformer svs = load_mstransformer(ckpt_path(mcfg, "svs"));
    MsTransformer v2a = load_mstransformer(ckpt_path(mcfg, "v2a"));
    MusicScore score = read_score(score_file);

    SongModels models{&svs, &v2a, &vocal_codec, &accomp_codec, &text_enc};
    SamplingParams sp;
    sp.top_k = int(cfg.get_int("sample.top_k"));
    sp.temperature = cfg.get_double("sample.temperature");
    sp.seed = std::uint64_t(cfg.get_int("run.seed"));
    SamplingParams sp2 = sp;
    sp2.seed = sp.seed + 1;
    SongOutput song = text_to_song(score, prompt, models, sp, sp2);

    write_wav((fs::path(out_dir) / "vocal.wav").string(), song.vocal);
    write_wav((fs::path(out_dir) / "accompaniment.wav").string(), song.accompaniment);
    write_wav((fs::path(out_dir) / "mix.wav").string(), song.mix);
    Json report = song.report;
    Json hashes;
    for (const char* name : {"codec_vocal", "codec_accomp", "tritower", "svs", "v2a"})
        hashes[name] = file_hash(ckpt_path(mcfg, name));
    report["model_hashes"] = hashes;
    report["score"] = score_file;
    std::ofstream os(fs::path(out_dir) / "report.json");
    os << report.dump(2) << "\n";
    snapshot_config(cfg, out_dir);
    std::cout << "wrote " << out_dir << "/mix.wav (" << song.mix.samples.size() << " samples, "
              << song.stage1_tokens.frames() << " frames)\n";
    return 0;
}

int cmd_eval_retrieval(const RunConfig& cfg, const std::string& models_dir,
                       const std::string& split, bool force) {
    std::string out_dir = cfg.get("run.out");
    require_writable_dir(out_dir, force);
    RunConfig mcfg = cfg;
    mcfg.set("run.out", models_dir);
    std::string tri_path = ckpt_path(mcfg, "tritower");
    if (!fs::exists(tri_path))
        throw MissingPrerequisiteError("text encoder checkpoint not found at " + tri_path);
    TriTower m = load_tritower(tri_path);
    auto triplets = load_triplets(mcfg, split, int(cfg.get_int("train.crop_frames")));

    int N = int(triplets.size());
    Eigen::MatrixXd zp(N, m.cfg.embed_dim), zv(N, m.cfg.embed_dim), za(N, m.cfg.embed_dim);
    std::vector<int> truth(std::size_t(N), 0);
    for (int i = 0; i < N; ++i) {
        zp.row(i) = encode_text(m, triplets[std::size_t(i)].caption);
        zv.row(i) = encode_audio(m, triplets[std::size_t(i)].vocal_spec, AudioModality::Vocal);
        za.row(i) =
            encode_audio(m, triplets[std::size_t(i)].accomp_spec, AudioModality::Accompaniment);
        truth[std::size_t(i)] = i;
    }
    dump_corpus_embeddings((fs::path(out_dir) / "embeddings.jsonl").string(), m, triplets);

    Json report;
    report["split"] = split;
    report["pool_size"] = N;
    auto direction = [&](const char* name, const Eigen::MatrixXd& cand) {
        Json d;
        for (int k : {1, 5, 10})
            if (k <= N) d["recall_at_" + std::to_string(k)] = recall_at_k(zp, cand, truth, k);
        d["map"] = mean_average_precision(rank_all(zp, cand, truth));
        report[name] = d;
    };
    direction("text_to_vocal", zv);
    direction("text_to_accompaniment", za);
    std::ofstream os(fs::path(out_dir) / "retrieval.json");
    os << report.dump(2) << "\n";
    snapshot_config(cfg, out_dir);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_eval_ffe(const std::string& ref_path, const std::string& est_path) {
    for (const std::string& p : {ref_path, est_path})
        if (!fs::exists(p)) throw MissingPrerequisiteError("wav not found: " + p);
    auto ref = dsp::extract_f0(read_wav(ref_path));
    auto est = dsp::extract_f0(read_wav(est_path));
    std::size_t n = std::min(ref.size(), est.size());
    ref.resize(n);
    est.resize(n);
    Json report{{"ffe", ffe(ref, est)}, {"frames", n}};
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_eval_melody(const std::string& vocal_path, const std::string& accomp_path) {
    for (const std::string& p : {vocal_path, accomp_path})
        if (!fs::exists(p)) throw MissingPrerequisiteError("wav not found: " + p);
    Waveform a = read_wav(vocal_path), b = read_wav(accomp_path);
    std::size_t n = std::min(a.samples.size(), b.samples.size());
    a.samples.resize(n);
    b.samples.resize(n);
    Json report{{"melody_alignment", melody_alignment(a, b)}};
    std::cout << report.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"melodist: two-stage text-to-song over discrete audio tokens"};
    app.require_subcommand(1);

    RunConfig cfg = default_config();
    cfg.set("train.svs_crop_frames", "24");
    cfg.set("train.v2a_crop_frames", "24");

    std::string config_file, out_dir, models_dir = "artifacts", score_file, prompt, split = "test";
    std::string ref_path, est_path;
    long seed = -1, steps = -1, songs = -1, overfit = -1;
    bool force = false, exclude_svs_extra = false, exclude_song_data = false;
    bool no_text_aug = false, no_spec_aug = false;

    app.add_option("--config", config_file, "config file (key = value, [section] headers)");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--out", out_dir, "output / artifact directory");
    app.add_flag("--force", force, "write into a non-empty output directory");

    auto* data = app.add_subcommand("data", "dataset commands");
    auto* synth = data->add_subcommand("synth", "render a synthetic paired corpus");
    synth->add_option("--songs", songs, "number of songs to render");
    synth->add_flag("--exclude-svs-extra", exclude_svs_extra, "drop score-only rows");
    synth->add_flag("--exclude-song-data", exclude_song_data, "drop captioned pair rows");

    auto* train = app.add_subcommand("train", "training commands");
    auto* t_codec = train->add_subcommand("codec", "train vocal + accompaniment codecs");
    auto* t_tri = train->add_subcommand("tritower", "train the contrastive towers");
    auto* t_svs = train->add_subcommand("svs", "train the score-to-vocal stage");
    auto* t_v2a = train->add_subcommand("v2a", "train the accompaniment stage");
    for (auto* t : {t_codec, t_tri, t_svs, t_v2a})
        t->add_option("--steps", steps, "optimizer steps");
    for (auto* t : {t_svs, t_v2a})
        t->add_option("--overfit", overfit, "restrict training to the first N rows");
    t_tri->add_flag("--no-text-aug", no_text_aug, "disable caption augmentation");
    t_tri->add_flag("--no-spec-aug", no_spec_aug, "disable spectrogram masking");

    auto* gen = app.add_subcommand("generate", "synthesize a song from a score and a prompt");
    gen->add_option("--models", models_dir, "directory with trained checkpoints");
    gen->add_option("--score", score_file, "music score JSON")->required();
    gen->add_option("--prompt", prompt, "natural-language style prompt")->required();

    auto* eval = app.add_subcommand("eval", "evaluation commands");
    auto* e_ret = eval->add_subcommand("retrieval", "text-audio retrieval metrics");
    e_ret->add_option("--models", models_dir, "directory with trained checkpoints");
    e_ret->add_option("--split", split, "corpus split to evaluate");
    auto* e_ffe = eval->add_subcommand("ffe", "F0 frame error between two wavs");
    e_ffe->add_option("--ref", ref_path, "reference wav")->required();
    e_ffe->add_option("--est", est_path, "estimate wav")->required();
    auto* e_mel = eval->add_subcommand("melody", "chroma envelope correlation between two wavs");
    e_mel->add_option("--ref", ref_path, "vocal wav")->required();
    e_mel->add_option("--est", est_path, "accompaniment wav")->required();

    for (auto* s : {data, synth, train, t_codec, t_tri, t_svs, t_v2a, gen, eval, e_ret, e_ffe,
                    e_mel})
        s->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (!config_file.empty()) load_config_file(cfg, config_file);
        apply_env_overrides(cfg);
        if (seed >= 0) cfg.set("run.seed", std::to_string(seed));
        if (!out_dir.empty()) cfg.set("run.out", out_dir);
        if (songs >= 0) cfg.set("data.songs", std::to_string(songs));
        if (overfit >= 0) cfg.set("train.overfit", std::to_string(overfit));
        if (exclude_svs_extra) cfg.set("data.exclude_svs_extra", "true");
        if (exclude_song_data) cfg.set("data.exclude_song_data", "true");
        if (no_text_aug) cfg.set("tritower.text_aug", "false");
        if (no_spec_aug) cfg.set("tritower.spec_aug", "false");
        if (steps >= 0)
            for (const char* key : {"train.codec_steps", "train.tritower_steps", "train.svs_steps",
                                    "train.v2a_steps"})
                cfg.set(key, std::to_string(steps));

        if (synth->parsed()) return cmd_data_synth(cfg, force);
        if (t_codec->parsed()) return cmd_train_codec(cfg);
        if (t_tri->parsed()) return cmd_train_tritower(cfg);
        if (t_svs->parsed()) return cmd_train_svs(cfg);
        if (t_v2a->parsed()) return cmd_train_v2a(cfg);
        if (gen->parsed()) return cmd_generate(cfg, models_dir, score_file, prompt, force);
        if (e_ret->parsed()) return cmd_eval_retrieval(cfg, models_dir, split, force);
        if (e_ffe->parsed()) return cmd_eval_ffe(ref_path, est_path);
        if (e_mel->parsed()) return cmd_eval_melody(ref_path, est_path);
        std::cerr << "melodist: missing subcommand\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigurationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const MissingPrerequisiteError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const RuntimeFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
