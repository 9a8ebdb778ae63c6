#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "melodist/autograd.hpp"

namespace melodist::nn {

using ag::Mat;
using ag::Var;

// Flat named-parameter registry; the unit a checkpoint serializes.
struct ParamStore {
    std::map<std::string, Var> by_name;

    Var create(const std::string& name, Mat init) {
        if (by_name.count(name)) throw ValidationError("duplicate parameter: " + name);
        Var p = ag::param(std::move(init), name);
        by_name[name] = p;
        return p;
    }

    std::vector<Var> all() const {
        std::vector<Var> v;
        v.reserve(by_name.size());
        for (const auto& [k, p] : by_name) v.push_back(p);
        return v;
    }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& [k, p] : by_name) n += p->value.size();
        return n;
    }

    void freeze() {
        for (auto& [k, p] : by_name) p->requires_grad = false;
    }
};

struct Linear {
    Var W, b;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
        W = ps.create(name + ".W", ag::randn(in, out, rng, 1.0 / std::sqrt(double(in))));
        b = ps.create(name + ".b", Mat::Zero(1, out));
    }

    Var operator()(const Var& x) const { return ag::add_rowvec(ag::matmul(x, W), b); }
};

struct LayerNorm {
    Var gain, bias;

    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int d) {
        gain = ps.create(name + ".gain", Mat::Ones(1, d));
        bias = ps.create(name + ".bias", Mat::Zero(1, d));
    }

    Var operator()(const Var& x) const { return ag::layernorm_rows(x, gain, bias); }
};

enum class AttnMask { Causal, Full };

inline Mat causal_mask(int n) {
    Mat m = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m(i, j) = -1e30;
    return m;
}

// Block-causal mask for the local transformer: position i = (patch, cell) may
// attend to cells <= its own within the same patch only.
inline Mat patch_causal_mask(int n_patches, int n_q) {
    int n = n_patches * n_q;
    Mat m = Mat::Constant(n, n, -1e30);
    for (int p = 0; p < n_patches; ++p)
        for (int i = 0; i < n_q; ++i)
            for (int j = 0; j <= i; ++j) m(p * n_q + i, p * n_q + j) = 0.0;
    return m;
}

struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    int heads = 1;
    int width = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& ps, const std::string& name, int d, int h, Rng& rng)
        : wq(ps, name + ".q", d, d, rng),
          wk(ps, name + ".k", d, d, rng),
          wv(ps, name + ".v", d, d, rng),
          wo(ps, name + ".o", d, d, rng),
          heads(h),
          width(d) {
        if (d % h != 0) throw ValidationError("attention width not divisible by heads");
    }

    Var operator()(const Var& x, const Mat& add_mask) const {
        int dh = width / heads;
        Var q = wq(x), k = wk(x), v = wv(x);
        std::vector<Var> outs;
        outs.reserve(size_t(heads));
        double s = 1.0 / std::sqrt(double(dh));
        for (int h = 0; h < heads; ++h) {
            Var qh = ag::cols(q, h * dh, dh);
            Var kh = ag::cols(k, h * dh, dh);
            Var vh = ag::cols(v, h * dh, dh);
            Var scores = ag::scale(ag::matmul_nt(qh, kh), s);
            Var attn = ag::softmax_rows(scores, add_mask);
            outs.push_back(ag::matmul(attn, vh));
        }
        return wo(ag::concat_cols(outs));
    }
};

struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    Linear ff1, ff2;

    TransformerBlock() = default;
    TransformerBlock(ParamStore& ps, const std::string& name, int d, int heads, int ffn, Rng& rng)
        : ln1(ps, name + ".ln1", d),
          ln2(ps, name + ".ln2", d),
          attn(ps, name + ".attn", d, heads, rng),
          ff1(ps, name + ".ff1", d, ffn, rng),
          ff2(ps, name + ".ff2", ffn, d, rng) {}

    // pre-norm residual block
    Var operator()(const Var& x, const Mat& add_mask) const {
        Var h = ag::add(x, attn(ln1(x), add_mask));
        return ag::add(h, ff2(ag::gelu(ff1(ln2(h)))));
    }
};

struct TransformerStack {
    std::vector<TransformerBlock> blocks;
    LayerNorm final_ln;

    TransformerStack() = default;
    TransformerStack(ParamStore& ps, const std::string& name, int layers, int d, int heads, int ffn,
                     Rng& rng)
        : final_ln(ps, name + ".lnf", d) {
        for (int l = 0; l < layers; ++l)
            blocks.emplace_back(ps, name + ".block" + std::to_string(l), d, heads, ffn, rng);
    }

    Var operator()(Var x, const Mat& add_mask) const {
        for (const auto& b : blocks) x = b(x, add_mask);
        return final_ln(x);
    }
};

}  // namespace melodist::nn
