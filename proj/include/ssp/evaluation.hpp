#pragma once

// Rollout metrics, evaluation protocols, CSV/SVG output and the ablation
// harness.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ssp/datagen.hpp"
#include "ssp/fft.hpp"
#include "ssp/io.hpp"
#include "ssp/model.hpp"
#include "ssp/parallel.hpp"
#include "ssp/training.hpp"

namespace ssp {

// --- per-frame metrics ------------------------------------------------------------------
// Inputs are (frames, channels, nx, ny). Each metric is computed per frame and
// averaged over frames.

inline void check_pair(const Tensor& pred, const Tensor& truth, const char* what) {
    if (pred.shape() != truth.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + pred.shape().str() + " vs " + truth.shape().str());
}

inline double frame_rel_l2(const Tensor& pred, const Tensor& truth, int i) {
    const std::size_t n = pred.size() / pred.n();
    const double* p = pred.sample(i);
    const double* t = truth.sample(i);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        num += (p[k] - t[k]) * (p[k] - t[k]);
        den += t[k] * t[k];
    }
    if (den == 0.0) throw ConfigError("rel_l2: truth frame " + std::to_string(i) + " has zero norm");
    return std::sqrt(num / den);
}

inline double frame_e_max(const Tensor& pred, const Tensor& truth, int i) {
    const std::size_t n = pred.size() / pred.n();
    const double* p = pred.sample(i);
    const double* t = truth.sample(i);
    double m = 0.0;
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, std::abs(p[k] - t[k]));
    return m;
}

/// RMS of the error over the ring of width one grid cell along the domain
/// edges (first and last row and column), all channels.
inline double frame_brms(const Tensor& pred, const Tensor& truth, int i) {
    const int H = pred.h(), W = pred.w();
    double s = 0.0;
    std::size_t count = 0;
    for (int c = 0; c < pred.c(); ++c) {
        const double* p = pred.plane(i, c);
        const double* t = truth.plane(i, c);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (y != 0 && y != H - 1 && x != 0 && x != W - 1) continue;
                const double d = p[static_cast<std::size_t>(y) * W + x] - t[static_cast<std::size_t>(y) * W + x];
                s += d * d;
                ++count;
            }
    }
    return std::sqrt(s / static_cast<double>(count));
}

struct BandErrors {
    double low = 0.0, mid = 0.0, high = 0.0, mse = 0.0;
    // Mode counts (full spectrum, all channels) behind each mean.
    double n_low = 0.0, n_mid = 0.0, n_high = 0.0;
};

/// Radial band of the mode (kx, ky): 0 low, 1 mid, 2 high, with boundaries
/// at one and two thirds of min(nx, ny) / 2.
inline int radial_band(int kx, int ky, int nx, int ny) {
    const double nyq = std::min(nx, ny) / 2.0;
    const double rho = std::sqrt(static_cast<double>(kx) * kx + static_cast<double>(ky) * ky);
    if (rho <= nyq / 3.0) return 0;
    if (rho <= 2.0 * nyq / 3.0) return 1;
    return 2;
}

/// Spectral error |p_hat - t_hat|^2 / (nx ny)^2 averaged over the modes of
/// each radial band and over all modes, for one frame. The half spectrum
/// stands in for the full one with interior columns counted twice.
inline BandErrors frame_band_errors(const Tensor& pred, const Tensor& truth, int i) {
    Tensor diff = pred.slice(i, 1);
    diff -= truth.slice(i, 1);
    const SpectralField<double> s = fft2(diff);
    const int nx = pred.h(), ny = pred.w();
    const double norm = static_cast<double>(nx) * ny * static_cast<double>(nx) * ny;
    std::array<double, 3> sum{}, cnt{};
    for (int c = 0; c < pred.c(); ++c)
        for (int r = 0; r < nx; ++r)
            for (int k = 0; k <= ny / 2; ++k) {
                const double w = column_weight(k, ny);
                const int b = radial_band(signed_freq(r, nx), k, nx, ny);
                sum[b] += w * std::norm(s.data(0, c, r, k)) / norm;
                cnt[b] += w;
            }
    BandErrors e;
    e.low = cnt[0] > 0 ? sum[0] / cnt[0] : 0.0;
    e.mid = cnt[1] > 0 ? sum[1] / cnt[1] : 0.0;
    e.high = cnt[2] > 0 ? sum[2] / cnt[2] : 0.0;
    e.mse = (sum[0] + sum[1] + sum[2]) / (cnt[0] + cnt[1] + cnt[2]);
    e.n_low = cnt[0];
    e.n_mid = cnt[1];
    e.n_high = cnt[2];
    return e;
}

template <class F>
double frame_average(const Tensor& pred, const Tensor& truth, F f) {
    double s = 0.0;
    for (int i = 0; i < pred.n(); ++i) s += f(pred, truth, i);
    return pred.n() ? s / pred.n() : 0.0;
}

inline double rel_l2(const Tensor& pred, const Tensor& truth) {
    check_pair(pred, truth, "rel_l2");
    return frame_average(pred, truth, frame_rel_l2);
}
inline double e_max(const Tensor& pred, const Tensor& truth) {
    check_pair(pred, truth, "e_max");
    return frame_average(pred, truth, frame_e_max);
}
inline double brms(const Tensor& pred, const Tensor& truth) {
    check_pair(pred, truth, "brms");
    return frame_average(pred, truth, frame_brms);
}
inline BandErrors band_errors(const Tensor& pred, const Tensor& truth) {
    check_pair(pred, truth, "band_errors");
    BandErrors out;
    for (int i = 0; i < pred.n(); ++i) {
        const BandErrors e = frame_band_errors(pred, truth, i);
        out.low += e.low / pred.n();
        out.mid += e.mid / pred.n();
        out.high += e.high / pred.n();
        out.mse += e.mse / pred.n();
        out.n_low = e.n_low;
        out.n_mid = e.n_mid;
        out.n_high = e.n_high;
    }
    return out;
}

// --- reports -----------------------------------------------------------------------------

inline constexpr int kMetricCount = 7;
inline const std::array<const char*, kMetricCount> kMetricNames = {"rel_l2", "e_max", "brms", "f_low",
                                                                   "f_mid",  "f_high", "f_mse"};

using MetricVec = std::array<double, kMetricCount>;

inline MetricVec frame_metrics(const Tensor& pred, const Tensor& truth, int i) {
    const BandErrors b = frame_band_errors(pred, truth, i);
    return {frame_rel_l2(pred, truth, i), frame_e_max(pred, truth, i), frame_brms(pred, truth, i), b.low, b.mid,
            b.high, b.mse};
}

struct MetricsReport {
    std::string protocol;     // "rollout" or "extrapolation"
    int conditioning = 0;
    int horizon = 0;          // frames rolled out
    int first_step = 1;       // evaluated steps [first_step, last_step], 1-based from the first prediction
    int last_step = 0;
    int samples = 0;
    int diverged_step = -1;   // first step with a non-finite prediction, -1 if none
    std::vector<int> steps;
    std::vector<MetricVec> per_step; // mean over samples for each evaluated step
    MetricVec summary{};             // mean over evaluated steps

    double value(const std::string& metric) const {
        for (int k = 0; k < kMetricCount; ++k)
            if (metric == kMetricNames[k]) return summary[k];
        throw ConfigError("unknown metric '" + metric + "'");
    }
};

/// Maps an input window of T frames to the next T frames. `traj` is the
/// dataset index of the trajectory and `first` the frame index of the first
/// predicted frame; a learned model ignores both.
using Forecaster = std::function<Tensor(const Tensor& window, int traj, int first)>;

inline Forecaster model_forecaster(const Model& m) {
    return [&m](const Tensor& w, int, int) { return m.forward_step(m.params, w); };
}

/// Returns the ground truth: a stand-in model with zero error.
inline Forecaster oracle_forecaster(const Dataset& d, int T) {
    return [&d, T](const Tensor&, int traj, int first) { return d.trajectories[traj].frames(first, T); };
}

struct RolloutSpec {
    int T = 5;
    int conditioning = 10;
    int horizon = 20;          // total frames rolled out
    int supervised_horizon = 0; // metrics only on steps (supervised_horizon, horizon]
    Split split = Split::test;
};

/// Roll every trajectory of the split forward from its last T conditioning
/// frames and compute per-step metrics on steps (supervised_horizon, horizon].
inline MetricsReport run_protocol(const Forecaster& f, const Dataset& d, const RolloutSpec& s) {
    if (s.T < 1 || s.conditioning < s.T || s.conditioning % s.T != 0)
        throw ConfigError("eval: conditioning must be a positive multiple of T=" + std::to_string(s.T));
    if (s.horizon < 1) throw ConfigError("eval: horizon must be positive");
    if (s.supervised_horizon < 0 || s.supervised_horizon >= s.horizon)
        throw ConfigError("eval: supervised_horizon must lie in [0, horizon)");
    if (s.conditioning + s.horizon > d.L_total)
        throw ConfigError("eval: conditioning + horizon = " + std::to_string(s.conditioning + s.horizon) +
                          " exceeds the trajectory length " + std::to_string(d.L_total));
    const auto idx = d.indices(s.split);
    if (idx.empty()) throw ConfigError("eval: no trajectories in the " + to_string(s.split) + " split");

    const int first = s.supervised_horizon + 1;
    const int count = s.horizon - s.supervised_horizon;
    const int n_steps = (s.horizon + s.T - 1) / s.T;
    struct SampleResult {
        std::vector<MetricVec> m; // per evaluated step
        int diverged = -1;
    };
    std::vector<SampleResult> res(idx.size());
    parallel_for(static_cast<int>(idx.size()), [&](int j) {
        const int traj = idx[j];
        const Trajectory& tr = d.trajectories[traj];
        Tensor window = tr.frames(s.conditioning - s.T, s.T);
        Tensor pred(n_steps * s.T, tr.states.c(), tr.states.h(), tr.states.w());
        int diverged = -1;
        for (int k = 0; k < n_steps; ++k) {
            try {
                window = f(window, traj, s.conditioning + k * s.T);
            } catch (const DivergenceError&) {
                diverged = k * s.T + 1;
                break;
            }
            pred.set_slice(k * s.T, window);
            if (!all_finite(window)) {
                for (int t = 0; t < s.T && diverged < 0; ++t)
                    if (!all_finite(window.slice(t, 1))) diverged = k * s.T + t + 1;
                break;
            }
        }
        SampleResult& r = res[j];
        r.diverged = diverged;
        const int stop = diverged > 0 ? std::min(diverged - 1, s.horizon) : s.horizon;
        const Tensor truth = tr.frames(s.conditioning, s.horizon);
        for (int step = first; step <= stop; ++step) r.m.push_back(frame_metrics(pred, truth, step - 1));
    });

    MetricsReport rep;
    rep.protocol = s.supervised_horizon > 0 ? "extrapolation" : "rollout";
    rep.conditioning = s.conditioning;
    rep.horizon = s.horizon;
    rep.first_step = first;
    rep.samples = static_cast<int>(idx.size());
    int usable = count;
    for (const auto& r : res)
        if (r.diverged > 0) {
            rep.diverged_step = rep.diverged_step < 0 ? r.diverged : std::min(rep.diverged_step, r.diverged);
            usable = std::min(usable, static_cast<int>(r.m.size()));
        }
    rep.last_step = first + usable - 1;
    const double inv_s = 1.0 / static_cast<double>(res.size());
    for (int k = 0; k < usable; ++k) {
        MetricVec v{};
        for (const auto& r : res)
            for (int q = 0; q < kMetricCount; ++q) v[q] += r.m[k][q] * inv_s;
        rep.steps.push_back(first + k);
        rep.per_step.push_back(v);
    }
    for (int q = 0; q < kMetricCount; ++q) {
        if (usable == 0) {
            rep.summary[q] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        double sum = 0.0;
        for (const auto& v : rep.per_step) sum += v[q];
        rep.summary[q] = sum / usable;
    }
    return rep;
}

inline MetricsReport rollout_eval(const Forecaster& f, const Dataset& d, int T, int conditioning, int horizon,
                                  Split split = Split::test) {
    return run_protocol(f, d, RolloutSpec{T, conditioning, horizon, 0, split});
}

inline MetricsReport rollout_eval(const Model& m, const Dataset& d, int conditioning, int horizon,
                                  Split split = Split::test) {
    return rollout_eval(model_forecaster(m), d, m.cfg.T, conditioning, horizon, split);
}

inline MetricsReport extrapolation_eval(const Forecaster& f, const Dataset& d, int T, int conditioning,
                                        int supervised_horizon, int total_horizon, Split split = Split::test) {
    if (total_horizon <= supervised_horizon)
        throw ConfigError("eval: total_horizon must exceed supervised_horizon");
    return run_protocol(f, d, RolloutSpec{T, conditioning, total_horizon, supervised_horizon, split});
}

inline MetricsReport extrapolation_eval(const Model& m, const Dataset& d, int conditioning, int supervised_horizon,
                                        int total_horizon, Split split = Split::test) {
    return extrapolation_eval(model_forecaster(m), d, m.cfg.T, conditioning, supervised_horizon, total_horizon, split);
}

// --- output -------------------------------------------------------------------------------

inline std::string metrics_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "step";
    for (const char* n : kMetricNames) os << ',' << n;
    os << '\n';
    for (std::size_t k = 0; k < r.steps.size(); ++k) {
        os << r.steps[k];
        for (double v : r.per_step[k]) os << ',' << fmt_double(v);
        os << '\n';
    }
    os << "mean";
    for (double v : r.summary) os << ',' << fmt_double(v);
    os << '\n';
    return os.str();
}

/// Line plot of every metric against the step index on a log scale. The
/// plotted values are repeated in comments so the file can be diffed.
inline std::string metrics_svg(const MetricsReport& r, const std::string& title) {
    const double W = 720, H = 440, left = 70, right = 150, top = 40, bottom = 50;
    const double pw = W - left - right, ph = H - top - bottom;
    static const std::array<const char*, kMetricCount> colors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                                 "#8c564b", "#e377c2", "#7f7f7f"};
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& v : r.per_step)
        for (double x : v)
            if (x > 0.0 && std::isfinite(x)) {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
    if (!(hi > 0.0)) {
        lo = 1e-12;
        hi = 1.0;
    }
    double ylo = std::floor(std::log10(lo)), yhi = std::ceil(std::log10(hi));
    if (yhi <= ylo) yhi = ylo + 1;
    const int s0 = r.steps.empty() ? 0 : r.steps.front();
    const int s1 = r.steps.empty() ? 1 : std::max(r.steps.back(), s0 + 1);
    auto px = [&](int step) { return left + pw * (step - s0) / static_cast<double>(s1 - s0); };
    auto py = [&](double v) {
        const double lv = v > 0.0 ? std::log10(v) : ylo;
        return top + ph * (1.0 - (std::clamp(lv, ylo, yhi) - ylo) / (yhi - ylo));
    };
    auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<!-- protocol=" << r.protocol << " conditioning=" << r.conditioning << " horizon=" << r.horizon
       << " steps=" << r.first_step << ".." << r.last_step << " samples=" << r.samples << " -->\n";
    for (int q = 0; q < kMetricCount; ++q) {
        os << "<!-- data " << kMetricNames[q] << ":";
        for (std::size_t k = 0; k < r.steps.size(); ++k) os << ' ' << r.steps[k] << '=' << fmt_double(r.per_step[k][q]);
        os << " -->\n";
    }
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int e = static_cast<int>(ylo); e <= static_cast<int>(yhi); ++e) {
        const double y = py(std::pow(10.0, e));
        os << "<line x1=\"" << left << "\" y1=\"" << num(y) << "\" x2=\"" << left + pw << "\" y2=\"" << num(y)
           << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">1e" << e << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">rollout step</text>\n";
    os << "<text x=\"" << left << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << s0 << "</text>\n";
    os << "<text x=\"" << left + pw << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << s1 << "</text>\n";
    for (int q = 0; q < kMetricCount; ++q) {
        os << "<polyline id=\"" << kMetricNames[q] << "\" fill=\"none\" stroke=\"" << colors[q]
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < r.steps.size(); ++k)
            os << (k ? " " : "") << num(px(r.steps[k])) << ',' << num(py(r.per_step[k][q]));
        os << "\"/>\n";
        const double ly = top + 16 + 18 * q;
        os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 32 << "\" y2=\""
           << ly - 4 << "\" stroke=\"" << colors[q] << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << kMetricNames[q] << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// --- ablations ----------------------------------------------------------------------------

enum class Variant { full, wo_K, wo_G, wo_PR, t2c_enc, conv_encdec };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::wo_K: return "wo_K";
        case Variant::wo_G: return "wo_G";
        case Variant::wo_PR: return "wo_PR";
        case Variant::t2c_enc: return "T2C_enc";
        case Variant::conv_encdec: return "conv_encdec";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::full, Variant::wo_K, Variant::wo_G, Variant::wo_PR, Variant::t2c_enc, Variant::conv_encdec})
        if (s == to_string(v)) return v;
    throw ConfigError("unknown ablation variant '" + s + "' (expected full, wo_K, wo_G, wo_PR, T2C_enc, conv_encdec)");
}

/// How "w/o K" removes the backbone: drop its increment entirely, or keep the
/// gated update with the temporal matrices frozen at the identity.
enum class WithoutK { zero_increment, identity };

inline ModelConfig apply_variant(ModelConfig c, Variant v, WithoutK mode = WithoutK::zero_increment) {
    switch (v) {
        case Variant::full: break;
        case Variant::wo_K:
            if (mode == WithoutK::zero_increment)
                c.alpha = 0.0;
            else
                c.freeze_backbone = true;
            break;
        case Variant::wo_G: c.lambda_g = 0.0; break;
        case Variant::wo_PR:
            c.projector = false;
            c.C_z = c.C_s;
            break;
        case Variant::t2c_enc: c.time_to_channel = true; break;
        case Variant::conv_encdec: c.encoder = EncoderKind::conv; break;
    }
    return c;
}

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    std::string status; // "ok" or "diverged: ..."
    MetricVec metrics{};
    double final_train_loss = std::numeric_limits<double>::quiet_NaN();
    double train_seconds = 0.0;
};

/// Train the full model and every listed variant with the same seed and
/// budget, then evaluate each with `eval`. Divergence of one variant is
/// recorded and the run continues.
inline std::vector<AblationRow> ablation_run(const Dataset& data, const ModelConfig& base, const TrainConfig& tc,
                                             const LossWeights& w, const RolloutSpec& eval,
                                             const std::vector<Variant>& variants,
                                             WithoutK mode = WithoutK::zero_increment,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
    std::vector<Variant> all = {Variant::full};
    for (Variant v : variants)
        if (v != Variant::full) all.push_back(v);
    std::vector<AblationRow> rows;
    for (Variant v : all) {
        AblationRow row;
        row.variant = to_string(v);
        row.seed = tc.seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const ModelConfig mc = apply_variant(base, v, mode);
            TrainConfig t = tc;
            t.resume.clear();
            const TrainResult tr = train(data, mc, t, w, {});
            if (!tr.log.empty()) row.final_train_loss = tr.log.back().total;
            RolloutSpec e = eval;
            e.T = mc.T;
            const MetricsReport rep = run_protocol(model_forecaster(tr.model), data, e);
            row.metrics = rep.summary;
            row.status = rep.diverged_step > 0 ? "diverged: rollout step " + std::to_string(rep.diverged_step) : "ok";
        } catch (const DivergenceError& e) {
            row.status = std::string("diverged: ") + e.what();
            row.metrics.fill(std::numeric_limits<double>::quiet_NaN());
        }
        row.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(row);
        if (on_row) on_row(row);
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "variant,seed,status";
    for (const char* n : kMetricNames) os << ',' << n;
    os << ",final_train_loss,train_seconds\n";
    for (const auto& r : rows) {
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        os << r.variant << ',' << r.seed << ',' << status;
        for (double v : r.metrics) os << ',' << fmt_double(v);
        os << ',' << fmt_double(r.final_train_loss) << ',' << fmt_double(r.train_seconds) << '\n';
    }
    return os.str();
}

} // namespace ssp
