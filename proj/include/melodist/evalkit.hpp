#pragma once

// Objective metrics: F0 frame error, retrieval metrics over embedding pools,
// and a chroma-correlation melody-alignment proxy.

#include <algorithm>
#include <numeric>
#include <vector>

#include "melodist/audio.hpp"
#include "melodist/dsp.hpp"

namespace melodist {

// Fraction of frames with a voicing mismatch, or with both frames voiced and
// relative pitch error above 20%.
inline double ffe(const std::vector<int>& f0_ref, const std::vector<int>& f0_hyp) {
    if (f0_ref.size() != f0_hyp.size()) throw ValidationError("ffe: length mismatch");
    if (f0_ref.empty()) throw ValidationError("ffe: empty tracks");
    int errors = 0;
    for (std::size_t i = 0; i < f0_ref.size(); ++i) {
        bool vr = f0_ref[i] > 0, vh = f0_hyp[i] > 0;
        if (vr != vh)
            ++errors;
        else if (vr && std::abs(double(f0_hyp[i]) - double(f0_ref[i])) > 0.2 * double(f0_ref[i]))
            ++errors;
    }
    return double(errors) / double(f0_ref.size());
}

// Candidate indices of one pool ranked by descending cosine to the query;
// ties broken by candidate index ascending.
inline std::vector<int> rank_candidates(const Eigen::RowVectorXd& query,
                                        const Eigen::MatrixXd& candidates) {
    std::vector<int> order(size_t(candidates.rows()), 0);
    std::iota(order.begin(), order.end(), 0);
    Eigen::VectorXd sim = candidates * query.transpose();
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (sim(a) != sim(b)) return sim(a) > sim(b);
        return a < b;
    });
    return order;
}

// Fraction of queries whose true candidate lands in the top k.
inline double recall_at_k(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& candidates,
                          const std::vector<int>& truth, int k) {
    int Q = int(queries.rows()), C = int(candidates.rows());
    if (Q == 0) throw ValidationError("recall_at_k: empty query set");
    if (int(truth.size()) != Q) throw ValidationError("recall_at_k: truth size mismatch");
    if (k < 1 || k > C) throw ValidationError("recall_at_k: k outside pool size");
    int hits = 0;
    for (int q = 0; q < Q; ++q) {
        if (truth[size_t(q)] < 0 || truth[size_t(q)] >= C)
            throw ValidationError("recall_at_k: truth index out of range");
        auto order = rank_candidates(queries.row(q), candidates);
        for (int i = 0; i < k; ++i)
            if (order[size_t(i)] == truth[size_t(q)]) {
                ++hits;
                break;
            }
    }
    return double(hits) / double(Q);
}

struct RetrievalResult {
    std::vector<std::vector<int>> rankings;  // per query, full candidate ordering
    std::vector<int> truth;                  // one relevant candidate per query
};

inline RetrievalResult rank_all(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& candidates,
                                const std::vector<int>& truth) {
    RetrievalResult r;
    r.truth = truth;
    for (int q = 0; q < int(queries.rows()); ++q)
        r.rankings.push_back(rank_candidates(queries.row(q), candidates));
    return r;
}

// With one relevant item per query, average precision is the reciprocal rank.
inline double mean_average_precision(const RetrievalResult& res) {
    if (res.rankings.empty()) throw ValidationError("mean_average_precision: empty query set");
    if (res.rankings.size() != res.truth.size())
        throw ValidationError("mean_average_precision: truth size mismatch");
    double acc = 0.0;
    for (std::size_t q = 0; q < res.rankings.size(); ++q) {
        const auto& order = res.rankings[q];
        auto it = std::find(order.begin(), order.end(), res.truth[q]);
        if (it == order.end())
            throw ValidationError("mean_average_precision: ranking misses the true candidate");
        acc += 1.0 / double(std::distance(order.begin(), it) + 1);
    }
    return acc / double(res.rankings.size());
}

// Pearson correlation between frame-wise chroma energy envelopes of two
// equal-length stems; constant envelopes make the correlation undefined and
// raise a validation error.
inline double melody_alignment(const Waveform& vocal, const Waveform& accomp) {
    if (vocal.samples.size() != accomp.samples.size())
        throw ValidationError("melody_alignment: length mismatch");
    std::vector<double> ev = dsp::chroma_energy_envelope(vocal);
    std::vector<double> ea = dsp::chroma_energy_envelope(accomp);
    return dsp::pearson(ev, ea);
}

}  // namespace melodist
