#pragma once

// Deterministic construction/inversion of the unified patch sequence: one
// shared vocabulary partitioned into id ranges, whole-patch specials, loss
// masking on target patches plus EOS.

#include <Eigen/Dense>
#include <vector>

#include "melodist/checkpoint.hpp"
#include "melodist/tokens.hpp"

namespace melodist {

struct VocabLayout {
    int n_q = 3;
    int audio_offset = 0;
    int audio_size = kCodebookSize;
    int phoneme_offset = kCodebookSize;           // 1024
    int phoneme_size = 64;
    int duration_offset = kCodebookSize + 64;     // 1088
    int duration_size = 64;
    int pitch_offset = kCodebookSize + 128;       // 1152
    int pitch_size = 257;                         // 256 log buckets + unvoiced

    int special_offset() const { return pitch_offset + pitch_size; }
    int pad_id() const { return special_offset(); }
    int bos_id() const { return special_offset() + 1; }
    int sep_id() const { return special_offset() + 2; }
    int eos_id() const { return special_offset() + 3; }
    int vocab_size() const { return special_offset() + 4; }
    int unvoiced_pitch_id() const { return pitch_offset + pitch_size - 1; }

    Json to_json() const {
        return Json{{"n_q", n_q},
                    {"audio_offset", audio_offset},   {"audio_size", audio_size},
                    {"phoneme_offset", phoneme_offset}, {"phoneme_size", phoneme_size},
                    {"duration_offset", duration_offset}, {"duration_size", duration_size},
                    {"pitch_offset", pitch_offset},   {"pitch_size", pitch_size}};
    }
    static VocabLayout from_json(const Json& j) {
        VocabLayout v;
        v.n_q = j.at("n_q");
        v.audio_offset = j.at("audio_offset");
        v.audio_size = j.at("audio_size");
        v.phoneme_offset = j.at("phoneme_offset");
        v.phoneme_size = j.at("phoneme_size");
        v.duration_offset = j.at("duration_offset");
        v.duration_size = j.at("duration_size");
        v.pitch_offset = j.at("pitch_offset");
        v.pitch_size = j.at("pitch_size");
        return v;
    }
};

// One condition element. Discrete and Continuous elements are repeated n_q
// times to fill a patch; FullPatch elements (e.g. vocal token frames in the
// Stage-2 prefix) already carry their n_q cells.
struct CondElem {
    enum class Kind { Discrete, Continuous, FullPatch };
    Kind kind = Kind::Discrete;
    int id = 0;
    Eigen::RowVectorXd row;
    std::vector<int> patch_ids;

    static CondElem discrete(int token_id) {
        CondElem e;
        e.kind = Kind::Discrete;
        e.id = token_id;
        return e;
    }
    static CondElem continuous(Eigen::RowVectorXd r) {
        CondElem e;
        e.kind = Kind::Continuous;
        e.row = std::move(r);
        return e;
    }
    static CondElem full_patch(std::vector<int> ids) {
        CondElem e;
        e.kind = Kind::FullPatch;
        e.patch_ids = std::move(ids);
        return e;
    }
};

using ConditionSequence = std::vector<CondElem>;

// One cell: a discrete id, or a reference into UnifiedSequence::cont_rows.
struct Cell {
    bool continuous = false;
    int id = 0;
    int cont_row = -1;
};

struct SeqPatch {
    std::vector<Cell> cells;
};

struct UnifiedSequence {
    int n_q = 3;
    std::vector<SeqPatch> patches;
    std::vector<std::vector<bool>> loss_mask;  // [patch][cell]
    int boundary = 0;                          // index of the first target patch
    Eigen::MatrixXd cont_rows;                 // continuous condition payload

    int length() const { return int(patches.size()); }
};

// Repeats each condition element n_q times to fill its patch; FullPatch
// elements pass through unchanged.
inline std::vector<SeqPatch> expand_condition(const ConditionSequence& cond, int n_q,
                                              Eigen::MatrixXd* cont_rows = nullptr) {
    if (n_q < 1) throw ValidationError("expand_condition: n_q must be >= 1");
    int n_cont = 0;
    for (const auto& e : cond)
        if (e.kind == CondElem::Kind::Continuous) ++n_cont;
    int dim = 0;
    for (const auto& e : cond)
        if (e.kind == CondElem::Kind::Continuous) dim = int(e.row.size());
    Eigen::MatrixXd rows_m(n_cont, dim);
    std::vector<SeqPatch> out;
    out.reserve(cond.size());
    int cont_i = 0;
    for (const auto& e : cond) {
        SeqPatch p;
        p.cells.resize(size_t(n_q));
        switch (e.kind) {
            case CondElem::Kind::Discrete:
                for (auto& c : p.cells) c.id = e.id;
                break;
            case CondElem::Kind::Continuous:
                rows_m.row(cont_i) = e.row;
                for (auto& c : p.cells) {
                    c.continuous = true;
                    c.cont_row = cont_i;
                }
                ++cont_i;
                break;
            case CondElem::Kind::FullPatch:
                if (int(e.patch_ids.size()) != n_q)
                    throw ValidationError("expand_condition: full patch has wrong cell count");
                for (int k = 0; k < n_q; ++k) p.cells[size_t(k)].id = e.patch_ids[size_t(k)];
                break;
        }
        out.push_back(std::move(p));
    }
    if (cont_rows) *cont_rows = std::move(rows_m);
    return out;
}

namespace seq_detail {

inline SeqPatch special_patch(int id, int n_q) {
    SeqPatch p;
    p.cells.assign(size_t(n_q), Cell{false, id, -1});
    return p;
}

}  // namespace seq_detail

// [BOS] + condition + [SEP] + target-frames-as-patches + [EOS]; loss mask is
// true on target patches and the EOS patch only.
inline UnifiedSequence pack_sequence(const std::vector<SeqPatch>& cond_patches,
                                     const AcousticTokenGrid& target, const VocabLayout& layout,
                                     Eigen::MatrixXd cont_rows = {}) {
    if (target.frames() > 0 && target.n_q_used != layout.n_q)
        throw ValidationError("pack_sequence: target n_q mismatch");
    for (const auto& p : cond_patches)
        if (int(p.cells.size()) != layout.n_q)
            throw ValidationError("pack_sequence: condition patch n_q mismatch");
    UnifiedSequence u;
    u.n_q = layout.n_q;
    u.cont_rows = std::move(cont_rows);
    u.patches.push_back(seq_detail::special_patch(layout.bos_id(), layout.n_q));
    for (const auto& p : cond_patches) u.patches.push_back(p);
    u.patches.push_back(seq_detail::special_patch(layout.sep_id(), layout.n_q));
    u.boundary = int(u.patches.size());
    for (int t = 0; t < target.frames(); ++t) {
        SeqPatch p;
        for (int k = 0; k < layout.n_q; ++k)
            p.cells.push_back(
                Cell{false, layout.audio_offset + target.tokens[size_t(t)][size_t(k)], -1});
        u.patches.push_back(std::move(p));
    }
    u.patches.push_back(seq_detail::special_patch(layout.eos_id(), layout.n_q));
    u.loss_mask.assign(u.patches.size(), std::vector<bool>(size_t(layout.n_q), false));
    for (int p = u.boundary; p < int(u.patches.size()); ++p)
        u.loss_mask[size_t(p)].assign(size_t(layout.n_q), true);
    return u;
}

// Exact inverse on the target region.
inline AcousticTokenGrid unpack_targets(const UnifiedSequence& u, const VocabLayout& layout) {
    if (u.boundary < 2 || u.boundary > int(u.patches.size()))
        throw ValidationError("unpack_targets: malformed boundary");
    AcousticTokenGrid g;
    g.n_q_used = u.n_q;
    for (int p = u.boundary; p < int(u.patches.size()); ++p) {
        const auto& cells = u.patches[size_t(p)].cells;
        if (!cells.empty() && cells[0].id == layout.eos_id()) break;
        std::vector<int> row;
        for (const auto& c : cells) {
            if (c.continuous || c.id < layout.audio_offset ||
                c.id >= layout.audio_offset + layout.audio_size)
                throw ValidationError("unpack_targets: non-audio cell in target region");
            row.push_back(c.id - layout.audio_offset);
        }
        g.tokens.push_back(std::move(row));
    }
    return g;
}

}  // namespace melodist
