#pragma once

// Two-level decoder-only transformer over unified patch sequences. The global
// stack attends causally across patches; the local stack predicts the n_q
// cells of a patch from the previous patch's global output plus previous-cell
// embeddings.

#include <fstream>
#include <string>
#include <vector>

#include "melodist/checkpoint.hpp"
#include "melodist/nn.hpp"
#include "melodist/seqlayout.hpp"

namespace melodist {

struct MsModelConfig {
    int global_layers = 4;
    int global_width = 256;
    int global_heads = 4;
    int global_ffn = 1024;
    int local_layers = 2;
    int local_width = 256;
    int local_heads = 4;
    int local_ffn = 1024;
    int n_q = 3;
    int max_frames = 512;  // capacity in patches
    int cond_dim = 0;      // width of continuous condition rows; 0 = discrete-only

    // Full-scale reference configuration; constructed in tests, not trained.
    static MsModelConfig paper_preset() {
        MsModelConfig c;
        c.global_layers = 20;
        c.global_width = 1152;
        c.global_heads = 16;
        c.global_ffn = 4608;
        c.local_layers = 6;
        c.local_width = 1152;
        c.local_heads = 8;
        c.local_ffn = 4608;
        return c;
    }

    Json to_json() const {
        return Json{{"global_layers", global_layers}, {"global_width", global_width},
                    {"global_heads", global_heads},   {"global_ffn", global_ffn},
                    {"local_layers", local_layers},   {"local_width", local_width},
                    {"local_heads", local_heads},     {"local_ffn", local_ffn},
                    {"n_q", n_q},                     {"max_frames", max_frames},
                    {"cond_dim", cond_dim}};
    }
    static MsModelConfig from_json(const Json& j) {
        MsModelConfig c;
        c.global_layers = j.at("global_layers");
        c.global_width = j.at("global_width");
        c.global_heads = j.at("global_heads");
        c.global_ffn = j.at("global_ffn");
        c.local_layers = j.at("local_layers");
        c.local_width = j.at("local_width");
        c.local_heads = j.at("local_heads");
        c.local_ffn = j.at("local_ffn");
        c.n_q = j.at("n_q");
        c.max_frames = j.at("max_frames");
        c.cond_dim = j.at("cond_dim");
        return c;
    }
};

struct MsTransformer {
    MsModelConfig cfg;
    VocabLayout layout;
    nn::ParamStore params;

    ag::Var tok_embed;    // vocab x d_l
    ag::Var start_embed;  // 1 x d_l, previous-token slot for cell 0
    ag::Var cell_embed;   // n_q x d_l
    ag::Var gpos_embed;   // max_frames x d_g
    nn::Linear patch_proj;  // n_q*d_l -> d_g
    nn::TransformerStack global_stack;
    nn::Linear g2l;  // d_g -> d_l
    nn::TransformerStack local_stack;
    nn::Linear head;       // d_l -> vocab
    nn::Linear cond_proj;  // cond_dim -> d_l (present when cond_dim > 0)
};

inline MsTransformer make_mstransformer(const MsModelConfig& cfg, const VocabLayout& layout,
                                        std::uint64_t seed) {
    if (cfg.n_q != layout.n_q) throw ValidationError("mstransformer: n_q mismatch with layout");
    MsTransformer m;
    m.cfg = cfg;
    m.layout = layout;
    auto rng = make_rng(seed);
    int dl = cfg.local_width, dg = cfg.global_width, V = layout.vocab_size();
    m.tok_embed = m.params.create("tok_embed", ag::randn(V, dl, rng, 0.02));
    m.start_embed = m.params.create("start_embed", ag::randn(1, dl, rng, 0.02));
    m.cell_embed = m.params.create("cell_embed", ag::randn(cfg.n_q, dl, rng, 0.02));
    m.gpos_embed = m.params.create("gpos_embed", ag::randn(cfg.max_frames, dg, rng, 0.02));
    m.patch_proj = nn::Linear(m.params, "patch_proj", cfg.n_q * dl, dg, rng);
    m.global_stack =
        nn::TransformerStack(m.params, "global", cfg.global_layers, dg, cfg.global_heads,
                             cfg.global_ffn, rng);
    m.g2l = nn::Linear(m.params, "g2l", dg, dl, rng);
    m.local_stack = nn::TransformerStack(m.params, "local", cfg.local_layers, dl, cfg.local_heads,
                                         cfg.local_ffn, rng);
    m.head = nn::Linear(m.params, "head", dl, V, rng);
    if (cfg.cond_dim > 0) m.cond_proj = nn::Linear(m.params, "cond_proj", cfg.cond_dim, dl, rng);
    return m;
}

namespace ms_detail {

// Per-cell embeddings for all patches: discrete cells from the token table,
// continuous cells through the condition projection.
inline ag::Var cell_embeddings(const MsTransformer& m, const UnifiedSequence& u) {
    std::vector<int> ids;
    std::vector<int> mapping;  // -1 discrete, else row into cont projection
    bool any_cont = false;
    for (const auto& p : u.patches)
        for (const auto& c : p.cells) {
            ids.push_back(c.continuous ? m.layout.pad_id() : c.id);
            mapping.push_back(c.continuous ? c.cont_row : -1);
            any_cont = any_cont || c.continuous;
        }
    ag::Var disc = ag::gather_rows(m.tok_embed, ids);
    if (!any_cont) return disc;
    if (m.cfg.cond_dim <= 0)
        throw ConfigurationError("mstransformer: continuous cells but cond_dim = 0");
    if (u.cont_rows.cols() != m.cfg.cond_dim)
        throw ConfigurationError("mstransformer: continuous row width mismatch");
    ag::Var cont = m.cond_proj(ag::constant(u.cont_rows));
    return ag::select_rows(disc, cont, mapping);
}

inline ag::Var patch_inputs(const MsTransformer& m, const ag::Var& cells, int n_patches) {
    std::vector<int> pos(size_t(n_patches), 0);
    for (int i = 0; i < n_patches; ++i) pos[size_t(i)] = i;
    return ag::add(m.patch_proj(ag::group_rows(cells, m.cfg.n_q)),
                   ag::gather_rows(m.gpos_embed, pos));
}

}  // namespace ms_detail

// Causal global pass: output at position t depends on patches <= t and is read
// as the predictor of patch t+1.
inline ag::Var global_forward(const MsTransformer& m, const ag::Var& patch_embeddings) {
    int T = int(patch_embeddings->value.rows());
    if (T < 1) throw ValidationError("global_forward: need at least one patch");
    if (T > m.cfg.max_frames)
        throw ConfigurationError("global_forward: sequence exceeds max_frames capacity");
    return m.global_stack(patch_embeddings, nn::causal_mask(T));
}

// Per-cell logits for one patch given the previous patch's global output and
// this patch's token ids (used as previous-cell inputs).
inline ag::Var local_forward(const MsTransformer& m, const ag::Var& g_out_row,
                             const std::vector<int>& patch_token_ids) {
    int n_q = m.cfg.n_q;
    if (int(patch_token_ids.size()) != n_q)
        throw ValidationError("local_forward: expected exactly n_q cells");
    ag::Var cells = ag::gather_rows(m.tok_embed, patch_token_ids);
    ag::Var prev = ag::shift_rows_in_groups(cells, m.start_embed, n_q);
    std::vector<int> cell_ids(size_t(n_q), 0);
    for (int k = 0; k < n_q; ++k) cell_ids[size_t(k)] = k;
    ag::Var local_in = ag::add(ag::add(ag::repeat_rows(m.g2l(g_out_row), n_q), prev),
                               ag::gather_rows(m.cell_embed, cell_ids));
    ag::Var h = m.local_stack(local_in, nn::patch_causal_mask(1, n_q));
    return m.head(h);
}

struct MsForward {
    ag::Var logits;               // (P-1)*n_q x vocab, predicting patches 1..P-1
    std::vector<int> targets;     // flattened cell ids
    std::vector<double> weights;  // flattened loss mask
};

// Teacher-forced pass over one unified sequence.
inline MsForward ms_forward(const MsTransformer& m, const UnifiedSequence& u) {
    int P = u.length();
    int n_q = m.cfg.n_q;
    if (P < 2) throw ValidationError("ms_forward: sequence too short");
    ag::Var cells = ms_detail::cell_embeddings(m, u);
    ag::Var g_in = ms_detail::patch_inputs(m, cells, P);
    // patches 0..P-2 predict 1..P-1
    ag::Var g_out = global_forward(m, ag::rows(g_in, 0, P - 1));
    ag::Var g_proj = ag::repeat_rows(m.g2l(g_out), n_q);

    ag::Var target_cells = ag::rows(cells, n_q, (P - 1) * n_q);
    ag::Var prev = ag::shift_rows_in_groups(target_cells, m.start_embed, n_q);
    std::vector<int> cell_ids(size_t((P - 1) * n_q), 0);
    for (int i = 0; i < (P - 1) * n_q; ++i) cell_ids[size_t(i)] = i % n_q;
    ag::Var local_in = ag::add(ag::add(g_proj, prev), ag::gather_rows(m.cell_embed, cell_ids));
    ag::Var h = m.local_stack(local_in, nn::patch_causal_mask(P - 1, n_q));

    MsForward out;
    out.logits = m.head(h);
    for (int p = 1; p < P; ++p)
        for (int k = 0; k < n_q; ++k) {
            const Cell& c = u.patches[size_t(p)].cells[size_t(k)];
            out.targets.push_back(c.continuous ? m.layout.pad_id() : c.id);
            out.weights.push_back(u.loss_mask[size_t(p)][size_t(k)] && !c.continuous ? 1.0 : 0.0);
        }
    return out;
}

// Pads a batch to a common patch length with PAD patches excluded from the loss.
inline std::vector<UnifiedSequence> pad_batch(std::vector<UnifiedSequence> batch,
                                              const VocabLayout& layout) {
    int maxlen = 0;
    for (const auto& u : batch) maxlen = std::max(maxlen, u.length());
    for (auto& u : batch)
        while (u.length() < maxlen) {
            u.patches.push_back(seq_detail::special_patch(layout.pad_id(), layout.n_q));
            u.loss_mask.emplace_back(size_t(layout.n_q), false);
        }
    return batch;
}

struct MsTrainOptions {
    double lr = 1e-3;
    std::string metrics_path;
};

struct MsTrainer {
    MsTransformer* model;
    ag::Adam optim;
    std::ofstream log;
    std::int64_t step = 0;

    MsTrainer(MsTransformer& m, const MsTrainOptions& opt = {})
        : model(&m), optim(m.params.all(), opt.lr) {
        if (!opt.metrics_path.empty()) log.open(opt.metrics_path);
    }

    // Mean cross-entropy over loss-masked cells for a padded batch; one
    // optimizer update.
    double train_step(const std::vector<UnifiedSequence>& batch) {
        if (batch.empty()) throw ValidationError("train_step: empty batch");
        double total_w = 0.0;
        for (const auto& u : batch)
            for (const auto& row : u.loss_mask)
                for (bool b : row) total_w += b ? 1.0 : 0.0;
        if (total_w <= 0.0) throw ValidationError("train_step: all cells masked out");
        optim.zero_grad();
        std::vector<ag::Var> losses;
        double batch_w = 0.0;
        std::vector<double> seq_w;
        for (const auto& u : batch) {
            MsForward f = ms_forward(*model, u);
            double w = 0.0;
            for (double x : f.weights) w += x;
            seq_w.push_back(w);
            batch_w += w;
            losses.push_back(ag::cross_entropy_rows(f.logits, f.targets, f.weights));
        }
        ag::Var loss = ag::scalar(0.0);
        for (std::size_t i = 0; i < losses.size(); ++i)
            loss = ag::add(loss, ag::scale(losses[i], seq_w[i] / batch_w));
        ag::backward(loss);
        double value = loss->value(0, 0);
        if (!std::isfinite(value))
            throw RuntimeFailure("train_step: non-finite loss at step " + std::to_string(step) +
                                 " (batch of " + std::to_string(batch.size()) + ")");
        optim.step();
        ++step;
        if (log.is_open())
            log << Json{{"step", step}, {"loss", value}, {"lr", optim.lr}}.dump() << "\n";
        return value;
    }
};

// Fraction of loss-masked cells whose argmax logit equals the target.
inline double teacher_forced_accuracy(const MsTransformer& m,
                                      const std::vector<UnifiedSequence>& seqs) {
    double hit = 0.0, total = 0.0;
    for (const auto& u : seqs) {
        MsForward f = ms_forward(m, u);
        for (std::size_t i = 0; i < f.targets.size(); ++i) {
            if (f.weights[i] <= 0.0) continue;
            Eigen::Index arg;
            f.logits->value.row(Eigen::Index(i)).maxCoeff(&arg);
            hit += int(arg) == f.targets[i] ? 1.0 : 0.0;
            total += 1.0;
        }
    }
    return total > 0.0 ? hit / total : 0.0;
}

struct SamplingParams {
    int top_k = 30;
    double temperature = 0.8;
    std::uint64_t seed = 0;
    int min_frames = 0;        // EOS suppressed before this many frames
    int force_stop_frames = -1;  // stop exactly here when >= 0
};

// Prefix-conditioned autoregressive generation, patch by patch, cell by cell.
inline AcousticTokenGrid generate(const MsTransformer& m, const UnifiedSequence& prefix,
                                  int max_frames, const SamplingParams& sp = {}) {
    const VocabLayout& L = m.layout;
    int n_q = m.cfg.n_q;
    AcousticTokenGrid grid;
    grid.n_q_used = n_q;
    if (max_frames <= 0) return grid;
    auto rng = make_rng(sp.seed);

    UnifiedSequence u = prefix;
    auto sample_from = [&](const Eigen::RowVectorXd& logits_row, bool allow_eos) {
        // candidate set: audio codes, plus EOS at patch starts
        std::vector<std::pair<double, int>> cand;
        for (int a = 0; a < L.audio_size; ++a)
            cand.emplace_back(logits_row(L.audio_offset + a), L.audio_offset + a);
        if (allow_eos) cand.emplace_back(logits_row(L.eos_id()), L.eos_id());
        int k = std::max(1, std::min(sp.top_k, int(cand.size())));
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end(),
                          [](const auto& a, const auto& b) {
                              return a.first != b.first ? a.first > b.first : a.second < b.second;
                          });
        if (k == 1) return cand[0].second;
        double temp = sp.temperature > 0 ? sp.temperature : 1.0;
        double mx = cand[0].first / temp;
        std::vector<double> probs(size_t(k), 0.0);
        double Z = 0.0;
        for (int i = 0; i < k; ++i) {
            probs[size_t(i)] = std::exp(cand[size_t(i)].first / temp - mx);
            Z += probs[size_t(i)];
        }
        std::uniform_real_distribution<double> unif(0.0, Z);
        double r = unif(rng);
        for (int i = 0; i < k; ++i) {
            r -= probs[size_t(i)];
            if (r <= 0.0) return cand[size_t(i)].second;
        }
        return cand[size_t(k) - 1].second;
    };

    for (int frame = 0; frame < max_frames; ++frame) {
        if (sp.force_stop_frames >= 0 && frame >= sp.force_stop_frames) break;
        ag::Var cells = ms_detail::cell_embeddings(m, u);
        int P = u.length();
        ag::Var g_out = global_forward(m, ms_detail::patch_inputs(m, cells, P));
        ag::Var last = ag::rows(g_out, P - 1, 1);
        ag::Var g_proj = m.g2l(last);

        bool eos_allowed = frame >= sp.min_frames &&
                           (sp.force_stop_frames < 0 || frame == sp.force_stop_frames);
        std::vector<int> patch_ids;
        bool ended = false;
        for (int k = 0; k < n_q; ++k) {
            // previous-token row i is the start embedding for i = 0, else the
            // (i-1)-th sampled cell
            ag::Var prev_rows =
                k == 0 ? m.start_embed
                       : ag::concat_rows({m.start_embed, ag::gather_rows(m.tok_embed, patch_ids)});
            std::vector<int> cids(size_t(k) + 1, 0);
            for (int i = 0; i <= k; ++i) cids[size_t(i)] = i;
            ag::Var local_in = ag::add(ag::add(ag::repeat_rows(g_proj, k + 1), prev_rows),
                                       ag::gather_rows(m.cell_embed, cids));
            ag::Var h = m.local_stack(local_in, nn::patch_causal_mask(1, k + 1));
            ag::Var logits = m.head(ag::rows(h, k, 1));
            int tok = sample_from(logits->value.row(0), eos_allowed && k == 0);
            if (tok == L.eos_id()) {
                ended = true;
                break;
            }
            patch_ids.push_back(tok);
        }
        if (ended) break;
        std::vector<int> frame_tokens;
        SeqPatch p;
        for (int id : patch_ids) {
            frame_tokens.push_back(id - L.audio_offset);
            p.cells.push_back(Cell{false, id, -1});
        }
        grid.tokens.push_back(std::move(frame_tokens));
        u.patches.push_back(std::move(p));
        u.loss_mask.emplace_back(size_t(n_q), false);
    }
    return grid;
}

// ---- gradient check ----

struct GradCheckEntry {
    std::string param;
    int row = 0, col = 0;
    double analytic = 0.0, numeric = 0.0, rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
};

// Central finite differences of the training loss on randomly chosen
// parameters of a model, against the analytic gradients.
inline GradCheckReport grad_check(MsTransformer& m, const UnifiedSequence& u, int n_samples = 50,
                                  double step = 1e-5, std::uint64_t seed = 0) {
    auto loss_value = [&] {
        MsForward f = ms_forward(m, u);
        return ag::cross_entropy_rows(f.logits, f.targets, f.weights);
    };
    for (auto& [name, p] : m.params.by_name) { p->ensure_grad(); p->grad.setZero(); }
    ag::backward(loss_value());

    std::vector<std::pair<std::string, ag::Var>> flat(m.params.by_name.begin(),
                                                      m.params.by_name.end());
    auto rng = make_rng(seed);
    GradCheckReport rep;
    for (int s = 0; s < n_samples; ++s) {
        auto& [name, p] = flat[rng() % flat.size()];
        int i = int(rng() % std::uint64_t(p->value.rows()));
        int j = int(rng() % std::uint64_t(p->value.cols()));
        double orig = p->value(i, j);
        p->value(i, j) = orig + step;
        double up = loss_value()->value(0, 0);
        p->value(i, j) = orig - step;
        double dn = loss_value()->value(0, 0);
        p->value(i, j) = orig;
        GradCheckEntry e;
        e.param = name;
        e.row = i;
        e.col = j;
        e.numeric = (up - dn) / (2.0 * step);
        e.analytic = p->grad(i, j);
        double denom = std::max({std::abs(e.numeric), std::abs(e.analytic), 1e-8});
        e.rel_error = std::abs(e.numeric - e.analytic) / denom;
        if (std::abs(e.numeric) < 1e-7 && std::abs(e.analytic) < 1e-7) e.rel_error = 0.0;
        rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
        rep.entries.push_back(std::move(e));
    }
    return rep;
}

// ---- persistence ----

inline void save_mstransformer(const std::string& path, const MsTransformer& m,
                               const std::string& role) {
    Json cfg;
    cfg["kind"] = "mstransformer";
    cfg["role"] = role;  // "svs" or "v2a"
    cfg["config"] = m.cfg.to_json();
    cfg["layout"] = m.layout.to_json();
    write_checkpoint(path, cfg, m.params);
}

inline MsTransformer load_mstransformer(const std::string& path, std::string* role = nullptr) {
    Json header = read_checkpoint_config(path);
    if (header.value("kind", "") != "mstransformer")
        throw ValidationError("not a transformer checkpoint: " + path);
    MsTransformer m = make_mstransformer(MsModelConfig::from_json(header.at("config")),
                                         VocabLayout::from_json(header.at("layout")), 0);
    load_checkpoint(path, m.params);
    if (role) *role = header.value("role", "");
    return m;
}

}  // namespace melodist
