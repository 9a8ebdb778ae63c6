#pragma once

// Three-tower contrastive module over (prompt text, vocal spectrogram,
// accompaniment spectrogram) triplets. All towers project into one
// L2-normalized joint space; the text tower additionally exposes per-token
// hidden states for downstream conditioning.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "melodist/checkpoint.hpp"
#include "melodist/dsp.hpp"
#include "melodist/nn.hpp"

namespace melodist {

struct Triplet {
    std::string id;
    std::string caption;
    std::vector<std::string> tags;
    Eigen::MatrixXd vocal_spec;   // n_mels x T, log mel
    Eigen::MatrixXd accomp_spec;  // n_mels x T
};

struct TriTowerConfig {
    double tau = 0.2;
    int embed_dim = 128;
    int width = 128;
    int layers = 2;
    int heads = 4;
    int ffn = 256;
    int max_text_chars = 77;
    int max_text_tokens = 24;  // word tokens after the character cap, plus CLS
    int patch = 16;
    int n_mels = 80;
    int max_patches = 160;
    bool text_aug = true;
    bool spec_aug = true;
    double p_text_aug = 0.5;

    Json to_json() const {
        return Json{{"tau", tau},       {"embed_dim", embed_dim},
                    {"width", width},   {"layers", layers},
                    {"heads", heads},   {"ffn", ffn},
                    {"max_text_chars", max_text_chars},
                    {"max_text_tokens", max_text_tokens},
                    {"patch", patch},   {"n_mels", n_mels},
                    {"max_patches", max_patches},
                    {"text_aug", text_aug}, {"spec_aug", spec_aug},
                    {"p_text_aug", p_text_aug}};
    }
    static TriTowerConfig from_json(const Json& j) {
        TriTowerConfig c;
        c.tau = j.at("tau");
        c.embed_dim = j.at("embed_dim");
        c.width = j.at("width");
        c.layers = j.at("layers");
        c.heads = j.at("heads");
        c.ffn = j.at("ffn");
        c.max_text_chars = j.at("max_text_chars");
        c.max_text_tokens = j.at("max_text_tokens");
        c.patch = j.at("patch");
        c.n_mels = j.at("n_mels");
        c.max_patches = j.at("max_patches");
        c.text_aug = j.at("text_aug");
        c.spec_aug = j.at("spec_aug");
        c.p_text_aug = j.at("p_text_aug");
        return c;
    }
};

// ---- text tokenization ----

// Lowercase word vocabulary learned from corpus captions. Ids: 0 PAD, 1 CLS,
// 2 UNK, then words sorted for determinism.
struct TextVocab {
    std::map<std::string, int> word_to_id;

    static constexpr int kPad = 0, kCls = 1, kUnk = 2, kReserved = 3;

    static std::vector<std::string> split_words(const std::string& text, int max_chars) {
        std::string s = text.substr(0, size_t(std::max(0, max_chars)));
        std::vector<std::string> words;
        std::string cur;
        for (char ch : s) {
            if (std::isalnum(static_cast<unsigned char>(ch)))
                cur.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
            else if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        }
        if (!cur.empty()) words.push_back(cur);
        return words;
    }

    static TextVocab build(const std::vector<std::string>& captions, int max_chars = 77) {
        std::set<std::string> seen;
        for (const auto& c : captions)
            for (const auto& w : split_words(c, max_chars)) seen.insert(w);
        TextVocab v;
        int id = kReserved;
        for (const auto& w : seen) v.word_to_id[w] = id++;
        return v;
    }

    int size() const { return kReserved + int(word_to_id.size()); }

    std::vector<int> encode(const std::string& text, int max_chars, int max_tokens) const {
        std::vector<int> ids = {kCls};
        for (const auto& w : split_words(text, max_chars)) {
            if (int(ids.size()) >= max_tokens) break;
            auto it = word_to_id.find(w);
            ids.push_back(it == word_to_id.end() ? kUnk : it->second);
        }
        return ids;
    }

    Json to_json() const {
        Json j = Json::object();
        for (const auto& [w, id] : word_to_id) j[w] = id;
        return j;
    }
    static TextVocab from_json(const Json& j) {
        TextVocab v;
        for (auto it = j.begin(); it != j.end(); ++it) v.word_to_id[it.key()] = it.value();
        return v;
    }
};

// ---- model ----

struct Tower {
    ag::Var pos_embed;  // positions x width
    nn::Linear input;   // patch pixels -> width (audio towers only)
    nn::TransformerStack stack;
    nn::Linear proj;  // width -> embed_dim
};

struct TriTower {
    TriTowerConfig cfg;
    TextVocab vocab;
    nn::ParamStore params;
    ag::Var tok_embed;  // text vocab x width
    ag::Var cls_embed;  // 1 x width, audio towers' pooling token
    Tower text, vocal, accomp;
};

inline TriTower make_tritower(const TriTowerConfig& cfg, const TextVocab& vocab,
                              std::uint64_t seed) {
    if (cfg.tau <= 0.0) throw ConfigurationError("tritower: temperature must be positive");
    TriTower m;
    m.cfg = cfg;
    m.vocab = vocab;
    auto rng = make_rng(seed);
    int d = cfg.width;
    m.tok_embed = m.params.create("tok_embed", ag::randn(vocab.size(), d, rng, 0.02));
    m.cls_embed = m.params.create("cls_embed", ag::randn(1, d, rng, 0.02));
    auto make_tower = [&](const std::string& name, int positions, bool with_input) {
        Tower t;
        t.pos_embed = m.params.create(name + "_pos", ag::randn(positions, d, rng, 0.02));
        if (with_input)
            t.input = nn::Linear(m.params, name + "_input", cfg.patch * cfg.patch, d, rng);
        t.stack = nn::TransformerStack(m.params, name, cfg.layers, d, cfg.heads, cfg.ffn, rng);
        t.proj = nn::Linear(m.params, name + "_proj", d, cfg.embed_dim, rng);
        return t;
    };
    m.text = make_tower("text", cfg.max_text_tokens, false);
    m.vocal = make_tower("vocal", cfg.max_patches + 1, true);
    m.accomp = make_tower("accomp", cfg.max_patches + 1, true);
    return m;
}

namespace tri_detail {

inline Eigen::MatrixXd zero_mask(int n) { return Eigen::MatrixXd::Zero(n, n); }

// Final-layer hidden states for a token id sequence (CLS first).
inline ag::Var text_hidden(const TriTower& m, const std::vector<int>& ids) {
    if (ids.empty()) throw ValidationError("encode_text: empty token sequence");
    int n = int(ids.size());
    std::vector<int> pos(size_t(n), 0);
    for (int i = 0; i < n; ++i) pos[size_t(i)] = i;
    ag::Var x = ag::add(ag::gather_rows(m.tok_embed, ids), ag::gather_rows(m.text.pos_embed, pos));
    return m.text.stack(x, zero_mask(n));
}

// 16x16 patches of a padded spectrogram, flattened row-major into rows.
inline Eigen::MatrixXd patchify(const Eigen::MatrixXd& spec, int patch) {
    if (spec.size() == 0) throw ValidationError("encode_audio: empty spectrogram");
    if (!spec.allFinite()) throw ValidationError("encode_audio: non-finite spectrogram");
    int F = int(spec.rows()), T = int(spec.cols());
    int Fp = (F + patch - 1) / patch * patch;
    int Tp = (T + patch - 1) / patch * patch;
    Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(Fp, Tp);
    padded.topLeftCorner(F, T) = spec;
    int rows_p = Fp / patch, cols_p = Tp / patch;
    Eigen::MatrixXd out(rows_p * cols_p, patch * patch);
    for (int r = 0; r < rows_p; ++r)
        for (int c = 0; c < cols_p; ++c) {
            for (int i = 0; i < patch; ++i)
                for (int j = 0; j < patch; ++j)
                    out(r * cols_p + c, i * patch + j) = padded(r * patch + i, c * patch + j);
        }
    return out;
}

inline ag::Var audio_hidden(const TriTower& m, const Tower& tower, const Eigen::MatrixXd& spec) {
    Eigen::MatrixXd patches = patchify(spec, m.cfg.patch);
    int n = int(patches.rows());
    if (n + 1 > m.cfg.max_patches + 1)
        throw ConfigurationError("encode_audio: spectrogram exceeds patch capacity");
    std::vector<int> pos(size_t(n) + 1, 0);
    for (int i = 0; i <= n; ++i) pos[size_t(i)] = i;
    ag::Var x = ag::concat_rows({m.cls_embed, tower.input(ag::constant(patches))});
    x = ag::add(x, ag::gather_rows(tower.pos_embed, pos));
    return tower.stack(x, zero_mask(n + 1));
}

}  // namespace tri_detail

// Unit-norm joint embedding of a prompt (input truncated to the char cap).
inline ag::Var encode_text_var(const TriTower& m, const std::string& text) {
    std::vector<int> ids = m.vocab.encode(text, m.cfg.max_text_chars, m.cfg.max_text_tokens);
    if (ids.size() <= 1 && TextVocab::split_words(text, m.cfg.max_text_chars).empty())
        throw ValidationError("encode_text: empty text after normalization");
    ag::Var h = tri_detail::text_hidden(m, ids);
    return ag::l2_normalize_rows(m.text.proj(ag::rows(h, 0, 1)));
}

inline Eigen::RowVectorXd encode_text(const TriTower& m, const std::string& text) {
    return encode_text_var(m, text)->value.row(0);
}

// Per-token final hidden states (CLS first, pre-pooling); the conditioning
// payload for downstream generation.
inline Eigen::MatrixXd encode_text_tokens(const TriTower& m, const std::string& text) {
    std::vector<int> ids = m.vocab.encode(text, m.cfg.max_text_chars, m.cfg.max_text_tokens);
    if (ids.size() <= 1 && TextVocab::split_words(text, m.cfg.max_text_chars).empty())
        throw ValidationError("encode_text: empty text after normalization");
    return tri_detail::text_hidden(m, ids)->value;
}

enum class AudioModality { Vocal, Accompaniment };

inline ag::Var encode_audio_var(const TriTower& m, const Eigen::MatrixXd& spec,
                                AudioModality mod) {
    const Tower& t = mod == AudioModality::Vocal ? m.vocal : m.accomp;
    ag::Var h = tri_detail::audio_hidden(m, t, spec);
    return ag::l2_normalize_rows(t.proj(ag::rows(h, 0, 1)));
}

inline Eigen::RowVectorXd encode_audio(const TriTower& m, const Eigen::MatrixXd& spec,
                                       AudioModality mod) {
    return encode_audio_var(m, spec, mod)->value.row(0);
}

// Symmetric InfoNCE over two batches of unit-norm rows: average of the
// row-softmax cross entropy on S = Z_x Z_y^T / tau and its transpose.
inline ag::Var info_nce_pair(const ag::Var& zx, const ag::Var& zy, double tau) {
    int N = int(zx->value.rows());
    if (N == 0) throw ValidationError("info_nce_pair: empty batch");
    if (zy->value.rows() != N || zx->value.cols() != zy->value.cols())
        throw ValidationError("info_nce_pair: batch shape mismatch");
    if (tau <= 0.0) throw ValidationError("info_nce_pair: temperature must be positive");
    std::vector<int> diag(size_t(N), 0);
    for (int i = 0; i < N; ++i) diag[size_t(i)] = i;
    std::vector<double> w(size_t(N), 1.0);
    ag::Var sxy = ag::scale(ag::matmul_nt(zx, zy), 1.0 / tau);
    ag::Var syx = ag::scale(ag::matmul_nt(zy, zx), 1.0 / tau);
    return ag::scale(ag::add(ag::cross_entropy_rows(sxy, diag, w),
                             ag::cross_entropy_rows(syx, diag, w)),
                     0.5);
}

// Sum of the three symmetric pairwise losses.
inline ag::Var tritower_loss(const ag::Var& zp, const ag::Var& zv, const ag::Var& za, double tau) {
    if (zp->value.rows() != zv->value.rows() || zp->value.rows() != za->value.rows())
        throw ValidationError("tritower_loss: batch size mismatch");
    return ag::add(ag::add(info_nce_pair(zp, zv, tau), info_nce_pair(zp, za, tau)),
                   info_nce_pair(zv, za, tau));
}

// ---- augmentation ----

// With probability p, appends a comma-joined random nonempty subset of tags.
inline std::string augment_text(const std::string& caption, const std::vector<std::string>& tags,
                                double p, Rng& rng) {
    if (tags.empty() || p <= 0.0) return caption;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng) >= p) return caption;
    std::vector<std::string> pool = tags;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t take = 1 + rng() % pool.size();
    std::string out = caption;
    for (std::size_t i = 0; i < take; ++i) out += ", " + pool[i];
    return out;
}

struct SpecAugParams {
    int max_freq_bands = 2;
    int max_freq_width = 8;
    int max_time_bands = 2;
    int max_time_width = 16;
};

// Masks random frequency and time bands with the pre-mask global mean.
inline Eigen::MatrixXd augment_spectrogram(Eigen::MatrixXd spec, Rng& rng,
                                           const SpecAugParams& p = {}) {
    if (spec.size() == 0) return spec;
    double mean = spec.mean();
    int F = int(spec.rows()), T = int(spec.cols());
    int nf = p.max_freq_bands > 0 ? int(rng() % std::uint64_t(p.max_freq_bands + 1)) : 0;
    for (int b = 0; b < nf; ++b) {
        int w = 1 + int(rng() % std::uint64_t(std::min(p.max_freq_width, F)));
        int f0 = int(rng() % std::uint64_t(F - w + 1));
        spec.middleRows(f0, w).setConstant(mean);
    }
    int nt = p.max_time_bands > 0 ? int(rng() % std::uint64_t(p.max_time_bands + 1)) : 0;
    for (int b = 0; b < nt; ++b) {
        int w = 1 + int(rng() % std::uint64_t(std::min(p.max_time_width, T)));
        int t0 = int(rng() % std::uint64_t(T - w + 1));
        spec.middleCols(t0, w).setConstant(mean);
    }
    return spec;
}

// ---- training ----

struct TriTrainOptions {
    int steps = 3000;
    int batch_size = 4;
    double lr = 1e-3;
    int crop_frames = 128;  // random time crop per training example
    std::uint64_t seed = 0;
    std::string metrics_path;
};

inline Eigen::MatrixXd random_time_crop(const Eigen::MatrixXd& spec, int frames, Rng& rng) {
    if (int(spec.cols()) <= frames) return spec;
    int t0 = int(rng() % std::uint64_t(spec.cols() - frames + 1));
    return spec.middleCols(t0, frames);
}

inline bool corpus_is_degenerate(const std::vector<Triplet>& corpus) {
    for (std::size_t i = 1; i < corpus.size(); ++i)
        if (corpus[i].caption != corpus[0].caption || corpus[i].vocal_spec != corpus[0].vocal_spec ||
            corpus[i].accomp_spec != corpus[0].accomp_spec)
            return false;
    return true;
}

struct TriTrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool degenerate_corpus = false;
};

inline TriTrainReport train_tritower(TriTower& m, const std::vector<Triplet>& corpus,
                                     const TriTrainOptions& opt = {}) {
    if (corpus.size() < 2) throw ValidationError("train_tritower: need at least 2 triplets");
    TriTrainReport report;
    report.degenerate_corpus = corpus_is_degenerate(corpus);
    auto rng = make_rng(opt.seed);
    ag::Adam optim(m.params.all(), opt.lr);
    std::ofstream log;
    if (!opt.metrics_path.empty()) log.open(opt.metrics_path);

    int B = std::min<int>(opt.batch_size, int(corpus.size()));
    for (int step = 0; step < opt.steps; ++step) {
        std::vector<std::size_t> idx(corpus.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<ag::Var> zp, zv, za;
        for (int b = 0; b < B; ++b) {
            const Triplet& t = corpus[idx[size_t(b)]];
            std::string text = m.cfg.text_aug ? augment_text(t.caption, t.tags,
                                                             m.cfg.p_text_aug, rng)
                                              : t.caption;
            Eigen::MatrixXd sv = random_time_crop(t.vocal_spec, opt.crop_frames, rng);
            Eigen::MatrixXd sa = random_time_crop(t.accomp_spec, opt.crop_frames, rng);
            if (m.cfg.spec_aug) {
                sv = augment_spectrogram(std::move(sv), rng);
                sa = augment_spectrogram(std::move(sa), rng);
            }
            zp.push_back(encode_text_var(m, text));
            zv.push_back(encode_audio_var(m, sv, AudioModality::Vocal));
            za.push_back(encode_audio_var(m, sa, AudioModality::Accompaniment));
        }
        ag::Var loss = tritower_loss(ag::concat_rows(zp), ag::concat_rows(zv),
                                     ag::concat_rows(za), m.cfg.tau);
        optim.zero_grad();
        ag::backward(loss);
        double value = loss->value(0, 0);
        if (!std::isfinite(value))
            throw RuntimeFailure("train_tritower: non-finite loss at step " +
                                 std::to_string(step));
        optim.step();
        if (step == 0) report.initial_loss = value;
        report.final_loss = value;
        if (log.is_open())
            log << Json{{"step", step + 1}, {"loss", value}, {"lr", opt.lr}}.dump() << "\n";
    }
    return report;
}

// ---- embedding dumps & persistence ----

inline void dump_embedding(std::ostream& os, const std::string& id, const std::string& modality,
                           const Eigen::RowVectorXd& vec) {
    Json row;
    row["id"] = id;
    row["modality"] = modality;
    std::vector<double> v(vec.data(), vec.data() + vec.size());
    row["vector"] = v;
    os << row.dump() << "\n";
}

inline void dump_corpus_embeddings(const std::string& path, const TriTower& m,
                                   const std::vector<Triplet>& corpus) {
    std::ofstream os(path);
    if (!os) throw RuntimeFailure("cannot open embedding dump: " + path);
    for (const auto& t : corpus) {
        dump_embedding(os, t.id, "p", encode_text(m, t.caption));
        dump_embedding(os, t.id, "v", encode_audio(m, t.vocal_spec, AudioModality::Vocal));
        dump_embedding(os, t.id, "a", encode_audio(m, t.accomp_spec, AudioModality::Accompaniment));
    }
}

inline void save_tritower(const std::string& path, const TriTower& m) {
    Json cfg;
    cfg["kind"] = "tritower";
    cfg["config"] = m.cfg.to_json();
    cfg["vocab"] = m.vocab.to_json();
    write_checkpoint(path, cfg, m.params);
}

inline TriTower load_tritower(const std::string& path) {
    Json header = read_checkpoint_config(path);
    if (header.value("kind", "") != "tritower")
        throw ValidationError("not a tri-tower checkpoint: " + path);
    TriTower m = make_tritower(TriTowerConfig::from_json(header.at("config")),
                               TextVocab::from_json(header.at("vocab")), 0);
    load_checkpoint(path, m.params);
    return m;
}

}  // namespace melodist
