#pragma once

// Non-differentiable signal tooling: STFT magnitudes, log-mel spectrograms,
// autocorrelation F0, chroma envelopes, spectral-flux onset counting.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "melodist/audio.hpp"

namespace melodist::dsp {

using Mat = Eigen::MatrixXd;

inline Eigen::VectorXd hann_window(int n) {
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w(i) = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
    return w;
}

// Magnitude STFT, frames x (fft/2+1). Frame t covers samples [t*hop, t*hop+fft).
inline Mat stft_magnitude(const std::vector<double>& x, int fft, int hop) {
    int bins = fft / 2 + 1;
    int frames = int(x.size()) >= fft ? (int(x.size()) - fft) / hop + 1 : 0;
    Eigen::VectorXd win = hann_window(fft);
    // frame matrix x DFT basis as two GEMMs
    Mat frames_m(frames, fft);
    for (int t = 0; t < frames; ++t)
        for (int i = 0; i < fft; ++i) frames_m(t, i) = x[size_t(t * hop + i)] * win(i);
    Mat cosb(fft, bins), sinb(fft, bins);
    for (int i = 0; i < fft; ++i)
        for (int b = 0; b < bins; ++b) {
            double ang = -2.0 * M_PI * i * b / fft;
            cosb(i, b) = std::cos(ang);
            sinb(i, b) = std::sin(ang);
        }
    Mat re = frames_m * cosb;
    Mat im = frames_m * sinb;
    return (re.array().square() + im.array().square()).sqrt().matrix();
}

// Triangular mel filterbank, (bins x n_mels).
inline Mat mel_filterbank(int fft, int sample_rate, int n_mels, double fmin = 0.0,
                          double fmax = -1.0) {
    if (fmax <= 0.0) fmax = sample_rate / 2.0;
    auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    int bins = fft / 2 + 1;
    double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
    std::vector<double> centers(size_t(n_mels) + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        centers[size_t(i)] = mel_to_hz(mlo + (mhi - mlo) * i / (n_mels + 1));
    Mat fb = Mat::Zero(bins, n_mels);
    for (int b = 0; b < bins; ++b) {
        double f = double(b) * sample_rate / fft;
        for (int m = 0; m < n_mels; ++m) {
            double lo = centers[size_t(m)], c = centers[size_t(m) + 1], hi = centers[size_t(m) + 2];
            if (f > lo && f < hi)
                fb(b, m) = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
        }
    }
    return fb;
}

struct MelConfig {
    int fft = 1024;
    int hop = 256;
    int n_mels = 80;
    int sample_rate = 16000;
};

// Log mel spectrogram as (n_mels x T).
inline Mat log_mel_spectrogram(const Waveform& w, const MelConfig& cfg = {}) {
    Mat mag = stft_magnitude(w.samples, cfg.fft, cfg.hop);  // T x bins
    Mat fb = mel_filterbank(cfg.fft, cfg.sample_rate, cfg.n_mels);
    Mat mel = mag * fb;  // T x n_mels
    return (mel.array() + 1e-5).log().matrix().transpose();
}

struct F0Config {
    int hop = 320;
    int window = 1024;
    double fmin = 80.0;
    double fmax = 1000.0;
    double voicing_threshold = 0.5;  // normalized autocorrelation peak
};

// Per-frame rounded F0 in integer Hz, 0 = unvoiced. Autocorrelation with
// parabolic peak interpolation.
inline std::vector<int> extract_f0(const Waveform& w, const F0Config& cfg = {}) {
    int n = int(w.samples.size());
    int frames = n / cfg.hop;
    std::vector<int> f0(size_t(frames), 0);
    int lag_min = std::max(2, int(std::floor(w.sample_rate / cfg.fmax)));
    int lag_max = int(std::ceil(w.sample_rate / cfg.fmin));
    for (int t = 0; t < frames; ++t) {
        int center = t * cfg.hop + cfg.hop / 2;
        int start = center - cfg.window / 2;
        auto at = [&](int i) {
            int j = start + i;
            return (j >= 0 && j < n) ? w.samples[size_t(j)] : 0.0;
        };
        double e0 = 0.0;
        for (int i = 0; i < cfg.window; ++i) e0 += at(i) * at(i);
        if (e0 < 1e-8) continue;
        int best_lag = 0;
        double best_r = 0.0;
        std::vector<double> r(size_t(lag_max) + 2, 0.0);
        int hi = std::min(lag_max + 1, cfg.window - 1);
        for (int lag = lag_min - 1; lag <= hi; ++lag) {
            double acc = 0.0, ea = 0.0, eb = 0.0;
            for (int i = 0; i + lag < cfg.window; ++i) {
                acc += at(i) * at(i + lag);
                ea += at(i) * at(i);
                eb += at(i + lag) * at(i + lag);
            }
            double denom = std::sqrt(ea * eb);
            r[size_t(lag)] = denom > 1e-12 ? acc / denom : 0.0;
        }
        for (int lag = lag_min; lag <= std::min(lag_max, hi - 1); ++lag) {
            if (r[size_t(lag)] > best_r && r[size_t(lag)] >= r[size_t(lag) - 1] &&
                r[size_t(lag)] >= r[size_t(lag) + 1]) {
                best_r = r[size_t(lag)];
                best_lag = lag;
            }
        }
        // octave disambiguation: a periodic signal also peaks at multiples of
        // its period, so take the shortest lag whose peak is nearly as strong
        for (int lag = lag_min; lag < best_lag; ++lag) {
            if (r[size_t(lag)] >= 0.98 * best_r && r[size_t(lag)] >= r[size_t(lag) - 1] &&
                r[size_t(lag)] >= r[size_t(lag) + 1]) {
                best_lag = lag;
                break;
            }
        }
        if (best_lag == 0 || best_r < cfg.voicing_threshold) continue;
        // parabolic interpolation around the peak
        double y0 = r[size_t(best_lag) - 1], y1 = r[size_t(best_lag)], y2 = r[size_t(best_lag) + 1];
        double denom = y0 - 2.0 * y1 + y2;
        double delta = std::abs(denom) > 1e-12 ? 0.5 * (y0 - y2) / denom : 0.0;
        delta = std::min(0.5, std::max(-0.5, delta));
        double lag_f = best_lag + delta;
        double hz = w.sample_rate / lag_f;
        if (hz >= cfg.fmin && hz <= cfg.fmax) f0[size_t(t)] = int(std::lround(hz));
    }
    return f0;
}

// Per-frame chroma energy envelope: magnitude spectrum folded into 12 pitch
// classes, L2 norm across classes per frame.
inline std::vector<double> chroma_energy_envelope(const Waveform& w, int fft = 1024,
                                                  int hop = 320) {
    Mat mag = stft_magnitude(w.samples, fft, hop);
    int frames = int(mag.rows());
    std::vector<double> env(size_t(frames), 0.0);
    for (int t = 0; t < frames; ++t) {
        double chroma[12] = {0};
        for (int b = 1; b < mag.cols(); ++b) {
            double f = double(b) * w.sample_rate / fft;
            if (f < 55.0 || f > 4000.0) continue;
            int pc = int(std::lround(12.0 * std::log2(f / 440.0))) % 12;
            if (pc < 0) pc += 12;
            chroma[pc] += mag(t, b) * mag(t, b);
        }
        double sq = 0.0;
        for (double c : chroma) sq += c;
        env[size_t(t)] = std::sqrt(sq);
    }
    return env;
}

// Spectral-flux onset count: peaks of the half-wave-rectified flux above
// mean + k*std.
inline int count_onsets(const Waveform& w, int fft = 512, int hop = 160, double k = 1.5) {
    Mat mag = stft_magnitude(w.samples, fft, hop);
    int frames = int(mag.rows());
    if (frames < 3) return 0;
    std::vector<double> raw(size_t(frames), 0.0);
    for (int t = 1; t < frames; ++t) {
        double f = 0.0;
        for (int b = 0; b < mag.cols(); ++b) {
            double d = mag(t, b) - mag(t - 1, b);
            if (d > 0) f += d;
        }
        raw[size_t(t)] = f;
    }
    // ~100 ms moving average suppresses flux ripple from partials beating
    // within a bin while keeping sparse attacks
    int win = 5;
    std::vector<double> flux(size_t(frames), 0.0);
    for (int t = 0; t < frames; ++t) {
        double acc = 0.0;
        int c = 0;
        for (int j = -win; j <= win; ++j) {
            int u = t + j;
            if (u >= 0 && u < frames) {
                acc += raw[size_t(u)];
                ++c;
            }
        }
        flux[size_t(t)] = acc / c;
    }
    double mean = 0.0;
    for (double f : flux) mean += f;
    mean /= double(frames);
    double var = 0.0;
    for (double f : flux) var += (f - mean) * (f - mean);
    double sd = std::sqrt(var / double(frames));
    // the relative gate keeps slow timbral drift from registering as onsets
    double peak = *std::max_element(flux.begin(), flux.end());
    double thr = std::max(mean + k * sd, 0.3 * peak);
    int count = 0;
    for (int t = 1; t + 1 < frames; ++t)
        if (flux[size_t(t)] > thr && flux[size_t(t)] >= flux[size_t(t) - 1] &&
            flux[size_t(t)] > flux[size_t(t) + 1])
            ++count;
    return count;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw ValidationError("pearson: size mismatch");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) { ma += a[i]; mb += b[i]; }
    ma /= double(a.size());
    mb /= double(b.size());
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    if (da < 1e-18 || db < 1e-18) throw ValidationError("pearson: constant input");
    return num / std::sqrt(da * db);
}

}  // namespace melodist::dsp
