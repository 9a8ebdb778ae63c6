#pragma once

// Residual-vector-quantized audio codec. Strided-conv encoder, EMA-learned
// codebooks with a frozen zero entry per level, LUT + transposed-conv decoder.
// Vocal and accompaniment codecs are separate instances that never share
// parameters.

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "melodist/audio.hpp"
#include "melodist/autograd.hpp"
#include "melodist/checkpoint.hpp"
#include "melodist/dsp.hpp"
#include "melodist/nn.hpp"
#include "melodist/tokens.hpp"

namespace melodist {

enum class StemKind { Vocal, Accompaniment };

inline std::string to_string(StemKind s) {
    return s == StemKind::Vocal ? "vocal" : "accompaniment";
}
inline StemKind stem_from_string(const std::string& s) {
    if (s == "vocal") return StemKind::Vocal;
    if (s == "accompaniment") return StemKind::Accompaniment;
    throw ValidationError("unknown stem kind: " + s);
}

struct CodecConfig {
    int sample_rate = 16000;
    int latent_dim = 64;
    int n_q = 12;
    int n_q_used = 3;
    std::vector<int> upsample_rates = {5, 4, 2, 2, 2, 2};
    std::vector<int> upsample_kernels = {9, 8, 4, 4, 4, 4};
    std::vector<int> encoder_channels = {24, 32, 40, 48, 56, 64};   // per stage, audio -> latent
    std::vector<int> decoder_channels = {56, 48, 40, 32, 24, 16};   // per stage, latent -> audio

    int hop_product() const {
        return std::accumulate(upsample_rates.begin(), upsample_rates.end(), 1,
                               std::multiplies<int>());
    }

    Json to_json() const {
        return Json{{"sample_rate", sample_rate}, {"latent_dim", latent_dim},
                    {"n_q", n_q},                 {"n_q_used", n_q_used},
                    {"upsample_rates", upsample_rates}, {"upsample_kernels", upsample_kernels},
                    {"encoder_channels", encoder_channels}, {"decoder_channels", decoder_channels}};
    }
    static CodecConfig from_json(const Json& j) {
        CodecConfig c;
        c.sample_rate = j.at("sample_rate");
        c.latent_dim = j.at("latent_dim");
        c.n_q = j.at("n_q");
        c.n_q_used = j.at("n_q_used");
        c.upsample_rates = j.at("upsample_rates").get<std::vector<int>>();
        c.upsample_kernels = j.at("upsample_kernels").get<std::vector<int>>();
        c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
        c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
        return c;
    }
};

struct CodecModel {
    CodecConfig config;
    StemKind stem = StemKind::Vocal;
    nn::ParamStore params;               // conv stacks
    std::vector<ag::Var> codebooks;      // n_q tables of (codebook_size x latent_dim); entry 0 frozen zero

    // layer handles into params
    std::vector<ag::Var> enc_w, enc_b;
    ag::Var enc_final_w, enc_final_b;
    ag::Var dec_in_w, dec_in_b;
    std::vector<ag::Var> dec_w, dec_b;
    ag::Var dec_out_w, dec_out_b;
};

namespace codec_detail {

inline ag::Var conv1d(const ag::Var& x, const ag::Var& w, const ag::Var& b, int k, int stride,
                      int pad_left, int out_len) {
    return ag::add_rowvec(ag::matmul(ag::im2col(x, k, stride, pad_left, out_len), w), b);
}

// Transposed conv producing out = in * rate rows.
inline ag::Var tconv1d(const ag::Var& x, const ag::Var& w, const ag::Var& b, int k, int rate) {
    int in = int(x->value.rows());
    ag::Var up = ag::upsample_zeros(x, rate);
    int total_pad = k + rate - 2;
    int pad_left = total_pad / 2 + (total_pad % 2);
    return conv1d(up, w, b, k, 1, pad_left, in * rate);
}

}  // namespace codec_detail

inline CodecModel make_codec(const CodecConfig& cfg, StemKind stem, std::uint64_t seed) {
    CodecModel m;
    m.config = cfg;
    m.stem = stem;
    auto rng = make_rng(seed);
    const auto& ec = cfg.encoder_channels;
    const auto nstages = cfg.upsample_rates.size();
    if (ec.size() != nstages || cfg.decoder_channels.size() != nstages ||
        cfg.upsample_kernels.size() != nstages)
        throw ValidationError("codec config: stage lists must have equal length");

    // encoder: strides are the upsample rates reversed
    int prev = 1;
    for (std::size_t s = 0; s < nstages; ++s) {
        int stride = cfg.upsample_rates[nstages - 1 - s];
        int k = 2 * stride;
        int out_ch = ec[s];
        std::string name = "enc.stage" + std::to_string(s);
        m.enc_w.push_back(m.params.create(
            name + ".W", ag::randn(k * prev, out_ch, rng, 1.0 / std::sqrt(double(k * prev)))));
        m.enc_b.push_back(m.params.create(name + ".b", ag::Mat::Zero(1, out_ch)));
        prev = out_ch;
    }
    m.enc_final_w = m.params.create(
        "enc.final.W", ag::randn(3 * prev, cfg.latent_dim, rng, 1.0 / std::sqrt(3.0 * prev)));
    m.enc_final_b = m.params.create("enc.final.b", ag::Mat::Zero(1, cfg.latent_dim));

    // decoder
    m.dec_in_w = m.params.create(
        "dec.in.W", ag::randn(3 * cfg.latent_dim, cfg.decoder_channels[0], rng,
                              1.0 / std::sqrt(3.0 * cfg.latent_dim)));
    m.dec_in_b = m.params.create("dec.in.b", ag::Mat::Zero(1, cfg.decoder_channels[0]));
    prev = cfg.decoder_channels[0];
    for (std::size_t s = 0; s < nstages; ++s) {
        int k = cfg.upsample_kernels[s];
        int out_ch = s + 1 < nstages ? cfg.decoder_channels[s + 1] : cfg.decoder_channels.back();
        std::string name = "dec.stage" + std::to_string(s);
        m.dec_w.push_back(m.params.create(
            name + ".W", ag::randn(k * prev, out_ch, rng, 1.0 / std::sqrt(double(k * prev)))));
        m.dec_b.push_back(m.params.create(name + ".b", ag::Mat::Zero(1, out_ch)));
        prev = out_ch;
    }
    m.dec_out_w = m.params.create("dec.out.W",
                                  ag::randn(7 * prev, 1, rng, 1.0 / std::sqrt(7.0 * prev)));
    m.dec_out_b = m.params.create("dec.out.b", ag::Mat::Zero(1, 1));

    // codebooks: entry 0 frozen at zero, never updated
    for (int q = 0; q < cfg.n_q; ++q) {
        ag::Mat cb = ag::randn(kCodebookSize, cfg.latent_dim, rng, 0.5);
        cb.row(0).setZero();
        ag::Var v = m.params.create("codebook." + std::to_string(q), cb);
        v->requires_grad = false;
        m.codebooks.push_back(v);
    }
    return m;
}

// ---- encoder / decoder graphs ----

inline ag::Var encoder_graph(const CodecModel& m, const std::vector<double>& samples) {
    const auto& cfg = m.config;
    int hop = cfg.hop_product();
    int T = int(samples.size()) / hop;
    int L = T * hop;
    ag::Mat x(L, 1);
    for (int i = 0; i < L; ++i) x(i, 0) = samples[size_t(i)];
    ag::Var h = ag::constant(std::move(x));
    const auto nstages = cfg.upsample_rates.size();
    int len = L;
    for (std::size_t s = 0; s < nstages; ++s) {
        int stride = cfg.upsample_rates[nstages - 1 - s];
        int k = 2 * stride;
        len /= stride;
        h = ag::gelu(codec_detail::conv1d(h, m.enc_w[s], m.enc_b[s], k, stride, stride, len));
    }
    return codec_detail::conv1d(h, m.enc_final_w, m.enc_final_b, 3, 1, 1, len);
}

inline ag::Var decoder_graph(const CodecModel& m, const ag::Var& latents) {
    const auto& cfg = m.config;
    int T = int(latents->value.rows());
    ag::Var h = ag::gelu(codec_detail::conv1d(latents, m.dec_in_w, m.dec_in_b, 3, 1, 1, T));
    for (std::size_t s = 0; s < cfg.upsample_rates.size(); ++s)
        h = ag::gelu(codec_detail::tconv1d(h, m.dec_w[s], m.dec_b[s], cfg.upsample_kernels[s],
                                           cfg.upsample_rates[s]));
    int L = int(h->value.rows());
    return codec_detail::conv1d(h, m.dec_out_w, m.dec_out_b, 7, 1, 3, L);
}

// Latent frames (T x d), deterministic for fixed parameters.
inline ag::Mat encode_latents(const Waveform& w, const CodecModel& m) {
    if (w.sample_rate != m.config.sample_rate)
        throw ConfigurationError("encode_latents: sample rate mismatch");
    if (w.samples.empty()) return ag::Mat(0, m.config.latent_dim);
    if (int(w.samples.size()) < m.config.hop_product()) return ag::Mat(0, m.config.latent_dim);
    return encoder_graph(m, w.samples)->value;
}

// ---- RVQ ----

struct RvqResult {
    AcousticTokenGrid tokens;
    ag::Mat quantized;                      // T x d
    ag::Mat final_residual;                 // T x d
    std::vector<double> level_residual_norms;  // mean per-frame residual L2 norm after each level
};

// Nearest neighbor per level (squared Euclidean, ties toward the lowest index),
// residual update between levels.
inline RvqResult rvq_quantize(const ag::Mat& latents, const std::vector<ag::Var>& codebooks,
                              int n_levels,
                              std::vector<std::vector<int>>* assignments = nullptr) {
    if (n_levels > int(codebooks.size()))
        throw ValidationError("rvq_quantize: n_levels exceeds codebook count");
    int T = int(latents.rows());
    RvqResult r;
    r.tokens.n_q_used = n_levels;
    r.tokens.tokens.assign(size_t(T), std::vector<int>(size_t(std::max(0, n_levels)), 0));
    r.quantized = ag::Mat::Zero(T, latents.cols());
    ag::Mat residual = latents;
    if (assignments) assignments->assign(size_t(n_levels), std::vector<int>(size_t(T)));
    for (int q = 0; q < n_levels; ++q) {
        const ag::Mat& cb = codebooks[size_t(q)]->value;
        // argmin_j |r - c_j|^2 = argmin_j |c_j|^2 - 2 r.c_j
        Eigen::VectorXd cb_sq = cb.rowwise().squaredNorm();
        ag::Mat scores = residual * cb.transpose();  // T x entries
        for (int t = 0; t < T; ++t) {
            int best = 0;
            double best_d = cb_sq(0) - 2.0 * scores(t, 0);
            for (int j = 1; j < cb.rows(); ++j) {
                double d = cb_sq(j) - 2.0 * scores(t, j);
                // strict improvement only: ties break toward the lowest index
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            r.tokens.tokens[size_t(t)][size_t(q)] = best;
            if (assignments) (*assignments)[size_t(q)][size_t(t)] = best;
            residual.row(t) -= cb.row(best);
            r.quantized.row(t) += cb.row(best);
        }
        double norm_sum = 0.0;
        for (int t = 0; t < T; ++t) norm_sum += residual.row(t).norm();
        r.level_residual_norms.push_back(T > 0 ? norm_sum / T : 0.0);
    }
    r.final_residual = residual;
    return r;
}

// Exact inverse of quantization: per-frame sum of selected entries.
inline ag::Mat rvq_dequantize(const AcousticTokenGrid& tokens,
                              const std::vector<ag::Var>& codebooks) {
    if (tokens.n_q_used > int(codebooks.size()))
        throw ValidationError("rvq_dequantize: more levels than codebooks");
    int d = int(codebooks.empty() ? 0 : codebooks[0]->value.cols());
    ag::Mat out = ag::Mat::Zero(tokens.frames(), d);
    for (int t = 0; t < tokens.frames(); ++t)
        for (int q = 0; q < tokens.n_q_used; ++q) {
            int id = tokens.tokens[size_t(t)][size_t(q)];
            if (id < 0 || id >= int(codebooks[size_t(q)]->value.rows()))
                throw ValidationError("rvq_dequantize: token out of range");
            out.row(t) += codebooks[size_t(q)]->value.row(id);
        }
    return out;
}

// Waveform -> token grid at n_q_used levels.
inline AcousticTokenGrid encode(const Waveform& w, const CodecModel& m) {
    ag::Mat latents = encode_latents(w, m);
    RvqResult r = rvq_quantize(latents, m.codebooks, m.config.n_q_used);
    r.tokens.frame_rate = double(m.config.sample_rate) / m.config.hop_product();
    return r.tokens;
}

// Token grid -> waveform, length = T * hop, clamped to [-1, 1].
inline Waveform vocode(const AcousticTokenGrid& tokens, const CodecModel& m) {
    tokens.validate();
    if (tokens.n_q_used > m.config.n_q)
        throw ConfigurationError("vocode: grid has more levels than the codec");
    Waveform out;
    out.sample_rate = m.config.sample_rate;
    if (tokens.frames() == 0) return out;
    ag::Mat latents = rvq_dequantize(tokens, m.codebooks);
    ag::Var y = decoder_graph(m, ag::constant(latents));
    out.samples.resize(size_t(y->value.rows()));
    for (Eigen::Index i = 0; i < y->value.rows(); ++i)
        out.samples[size_t(i)] = clamp_sample(y->value(i, 0));
    return out;
}

inline Waveform reconstruct(const Waveform& w, const CodecModel& m) {
    return vocode(encode(w, m), m);
}

// ---- training ----

struct CodecTrainOptions {
    int steps = 2000;
    int segment_frames = 16;  // segment = frames * hop samples
    double lr = 1e-3;
    double commitment_weight = 0.25;
    double ema_decay = 0.99;
    int dead_entry_steps = 200;
    std::vector<int> spectral_ffts = {128, 256, 512};
    std::uint64_t seed = 0;
    std::string metrics_path;  // JSONL log; empty disables
};

struct StemClip {
    std::string path;
    StemKind stem;
};

namespace codec_detail {

// Multi-scale spectral L1 (magnitude + log magnitude) via the autograd graph.
inline ag::Var spectral_loss(const ag::Var& pred, const std::vector<double>& target,
                             const std::vector<int>& ffts) {
    ag::Mat tgt(int(target.size()), 1);
    for (std::size_t i = 0; i < target.size(); ++i) tgt(Eigen::Index(i), 0) = target[i];
    ag::Var tgt_v = ag::constant(std::move(tgt));
    ag::Var total = ag::scalar(0.0);
    for (int fft : ffts) {
        int hop = fft / 4;
        int L = int(target.size());
        if (L < fft) continue;
        int frames = (L - fft) / hop + 1;
        Eigen::VectorXd win = dsp::hann_window(fft);
        ag::Mat winrep(frames, fft);
        for (int t = 0; t < frames; ++t) winrep.row(t) = win.transpose();
        ag::Mat cosb(fft, fft / 2 + 1), sinb(fft, fft / 2 + 1);
        for (int i = 0; i < fft; ++i)
            for (int b = 0; b <= fft / 2; ++b) {
                double ang = -2.0 * M_PI * i * b / fft;
                cosb(i, b) = std::cos(ang);
                sinb(i, b) = std::sin(ang);
            }
        ag::Var cosv = ag::constant(cosb), sinv = ag::constant(sinb);
        ag::Var winv = ag::constant(winrep);
        auto mag_of = [&](const ag::Var& sig) {
            ag::Var framed = ag::cmul(ag::im2col(sig, fft, hop, 0, frames), winv);
            return ag::spectral_magnitude(ag::matmul(framed, cosv), ag::matmul(framed, sinv));
        };
        ag::Var mp = mag_of(pred);
        ag::Var mt = mag_of(tgt_v);
        ag::Var l1 = ag::mean_all(ag::abs_op(ag::sub(mp, mt)));
        ag::Var llog = ag::mean_all(ag::abs_op(ag::sub(ag::log_eps(mp), ag::log_eps(mt))));
        total = ag::add(total, ag::add(l1, llog));
    }
    return total;
}

struct EmaState {
    std::vector<Eigen::VectorXd> cluster_size;  // per level, per entry
    std::vector<ag::Mat> ema_sum;
    std::vector<std::vector<int>> unused_steps;
};

}  // namespace codec_detail

// Trains a codec for one stem. The corpus must contain only that stem.
inline CodecModel train_codec(const std::vector<StemClip>& corpus, const CodecConfig& cfg,
                              StemKind stem, const CodecTrainOptions& opt = {}) {
    if (corpus.empty()) throw ValidationError("train_codec: empty corpus");
    for (const auto& c : corpus)
        if (c.stem != stem)
            throw ValidationError("train_codec: mixed-stem corpus (found " + to_string(c.stem) +
                                  ", expected " + to_string(stem) + ")");
    CodecModel m = make_codec(cfg, stem, opt.seed);
    ag::Adam optim(m.params.all(), opt.lr);

    codec_detail::EmaState ema;
    for (int q = 0; q < cfg.n_q; ++q) {
        ema.cluster_size.emplace_back(Eigen::VectorXd::Zero(kCodebookSize));
        ema.ema_sum.emplace_back(ag::Mat::Zero(kCodebookSize, cfg.latent_dim));
        ema.unused_steps.emplace_back(kCodebookSize, 0);
    }

    std::vector<Waveform> clips;
    clips.reserve(corpus.size());
    for (const auto& c : corpus) clips.push_back(read_wav(c.path));

    auto rng = make_rng(opt.seed + 17);
    std::ofstream log;
    if (!opt.metrics_path.empty()) log.open(opt.metrics_path);
    int seg = opt.segment_frames * cfg.hop_product();

    for (int step = 0; step < opt.steps; ++step) {
        const Waveform& clip = clips[rng() % clips.size()];
        std::vector<double> x(size_t(seg), 0.0);
        if (int(clip.samples.size()) > seg) {
            std::size_t off = rng() % (clip.samples.size() - size_t(seg) + 1);
            std::copy_n(clip.samples.begin() + long(off), seg, x.begin());
        } else {
            std::copy(clip.samples.begin(), clip.samples.end(), x.begin());
        }

        ag::Var latents = encoder_graph(m, x);
        std::vector<std::vector<int>> assign;
        RvqResult rq = rvq_quantize(latents->value, m.codebooks, cfg.n_q, &assign);

        // straight-through: decoder sees quantized values, encoder gets the gradient
        ag::Var dec_in = ag::add(latents, ag::constant(rq.quantized - latents->value));
        ag::Var recon = decoder_graph(m, dec_in);
        ag::Var loss = codec_detail::spectral_loss(recon, x, opt.spectral_ffts);
        ag::Var commit = ag::mean_all(ag::square(ag::sub(latents, ag::constant(rq.quantized))));
        loss = ag::add(loss, ag::scale(commit, opt.commitment_weight));

        optim.zero_grad();
        ag::backward(loss);
        optim.step();

        // EMA codebook update on the residual stream; entry 0 stays zero.
        ag::Mat residual = latents->value;
        for (int q = 0; q < cfg.n_q; ++q) {
            ag::Mat& cb = m.codebooks[size_t(q)]->value;
            Eigen::VectorXd counts = Eigen::VectorXd::Zero(kCodebookSize);
            ag::Mat sums = ag::Mat::Zero(kCodebookSize, cfg.latent_dim);
            for (int t = 0; t < residual.rows(); ++t) {
                int id = assign[size_t(q)][size_t(t)];
                counts(id) += 1.0;
                sums.row(id) += residual.row(t);
            }
            for (int e = 1; e < kCodebookSize; ++e) {
                ema.cluster_size[size_t(q)](e) =
                    opt.ema_decay * ema.cluster_size[size_t(q)](e) + (1.0 - opt.ema_decay) * counts(e);
                ema.ema_sum[size_t(q)].row(e) =
                    opt.ema_decay * ema.ema_sum[size_t(q)].row(e) + (1.0 - opt.ema_decay) * sums.row(e);
                if (counts(e) > 0) {
                    ema.unused_steps[size_t(q)][size_t(e)] = 0;
                    cb.row(e) = ema.ema_sum[size_t(q)].row(e) / (ema.cluster_size[size_t(q)](e) + 1e-8);
                } else if (++ema.unused_steps[size_t(q)][size_t(e)] >= opt.dead_entry_steps) {
                    // reinit dead entry to a random batch residual
                    if (residual.rows() > 0) {
                        int t = int(rng() % std::uint64_t(residual.rows()));
                        cb.row(e) = residual.row(t);
                        ema.cluster_size[size_t(q)](e) = 1.0;
                        ema.ema_sum[size_t(q)].row(e) = residual.row(t);
                    }
                    ema.unused_steps[size_t(q)][size_t(e)] = 0;
                }
            }
            for (int t = 0; t < residual.rows(); ++t)
                residual.row(t) -= cb.row(assign[size_t(q)][size_t(t)]);
        }

        if (!std::isfinite(loss->value(0, 0)))
            throw RuntimeFailure("train_codec: non-finite loss at step " + std::to_string(step));
        if (log.is_open())
            log << Json{{"step", step}, {"loss", loss->value(0, 0)}, {"lr", opt.lr}}.dump() << "\n";
    }
    return m;
}

// Mean absolute and max absolute reconstruction error over clips.
struct ReconReport {
    double mean_abs = 0.0;
    double max_abs = 0.0;
};

inline ReconReport measure_reconstruction(const CodecModel& m, const std::vector<Waveform>& clips,
                                          int n_levels = -1) {
    ReconReport rep;
    std::size_t n = 0;
    for (const auto& w : clips) {
        ag::Mat latents = encode_latents(w, m);
        RvqResult rq =
            rvq_quantize(latents, m.codebooks, n_levels < 0 ? m.config.n_q_used : n_levels);
        ag::Var y = decoder_graph(m, ag::constant(rq.quantized));
        for (Eigen::Index i = 0; i < y->value.rows(); ++i) {
            double e = std::abs(clamp_sample(y->value(i, 0)) - w.samples[size_t(i)]);
            rep.mean_abs += e;
            rep.max_abs = std::max(rep.max_abs, e);
            ++n;
        }
    }
    if (n > 0) rep.mean_abs /= double(n);
    return rep;
}

// ---- persistence ----

inline void save_codec(const std::string& path, const CodecModel& m) {
    Json cfg;
    cfg["kind"] = "codec";
    cfg["stem"] = to_string(m.stem);
    cfg["config"] = m.config.to_json();
    write_checkpoint(path, cfg, m.params);
}

inline CodecModel load_codec(const std::string& path) {
    Json header = read_checkpoint_config(path);
    if (header.value("kind", "") != "codec")
        throw ValidationError("not a codec checkpoint: " + path);
    CodecModel m = make_codec(CodecConfig::from_json(header.at("config")),
                              stem_from_string(header.at("stem")), 0);
    load_checkpoint(path, m.params);
    return m;
}

}  // namespace melodist
