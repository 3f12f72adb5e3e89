#pragma once

// Rollout training: composite objective with hand-written adjoint through
// the fed-back predictions, Adam, CSV logging and checkpointing.

#include <chrono>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ssp/checkpoint.hpp"
#include "ssp/datagen.hpp"
#include "ssp/model.hpp"
#include "ssp/optim.hpp"
#include "ssp/parallel.hpp"

namespace ssp {

struct LossWeights {
    double rec = 1.0;
    double lat = 1.0;
    double phy = 1.0;
    double norm = 0.01;
    double orth = 0.01;

    void validate() const {
        for (double w : {rec, lat, phy, norm, orth})
            if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss: weights must be finite and nonnegative");
    }
    bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
    int n_roll = 2;
    int batch_size = 8;
    int epochs = 10;
    AdamConfig adam;
    std::uint64_t seed = 0;
    int checkpoint_every = 0; // epochs between intermediate checkpoints, 0 for final only
    /// Reconstruction through D(R(P(E(u)))) instead of D(E(u)).
    bool rec_through_projector = false;
    std::string resume; // checkpoint to resume from, empty for a fresh run

    void validate() const {
        auto need = [](bool ok, const std::string& msg) {
            if (!ok) throw ConfigError("train: " + msg);
        };
        need(n_roll >= 1, "n_roll must be at least 1");
        need(batch_size >= 1, "batch_size must be positive");
        need(epochs >= 0, "epochs must be nonnegative");
        need(adam.lr > 0.0, "lr must be positive");
        need(adam.lr_min >= 0.0 && adam.lr_min <= adam.lr, "lr_min must lie in [0, lr]");
        need(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0, "betas must lie in [0, 1)");
        need(adam.eps > 0.0, "adam_eps must be positive");
        need(checkpoint_every >= 0, "checkpoint_every must be nonnegative");
    }
    bool operator==(const TrainConfig&) const = default;
};

inline void write_loss_weights(const LossWeights& w, IniSection& s) {
    s.set("rec", fmt_double(w.rec));
    s.set("lat", fmt_double(w.lat));
    s.set("phy", fmt_double(w.phy));
    s.set("norm", fmt_double(w.norm));
    s.set("orth", fmt_double(w.orth));
}

inline LossWeights read_loss_weights(SectionReader& s) {
    LossWeights w;
    w.rec = s.num("rec", w.rec);
    w.lat = s.num("lat", w.lat);
    w.phy = s.num("phy", w.phy);
    w.norm = s.num("norm", w.norm);
    w.orth = s.num("orth", w.orth);
    w.validate();
    return w;
}

inline void write_train_config(const TrainConfig& t, IniSection& s) {
    s.set("n_roll", std::to_string(t.n_roll));
    s.set("batch_size", std::to_string(t.batch_size));
    s.set("epochs", std::to_string(t.epochs));
    s.set("lr", fmt_double(t.adam.lr));
    s.set("lr_min", fmt_double(t.adam.lr_min));
    s.set("beta1", fmt_double(t.adam.beta1));
    s.set("beta2", fmt_double(t.adam.beta2));
    s.set("adam_eps", fmt_double(t.adam.eps));
    s.set("clip", fmt_double(t.adam.clip));
    s.set("seed", std::to_string(t.seed));
    s.set("checkpoint_every", std::to_string(t.checkpoint_every));
    s.set("rec_through_projector", t.rec_through_projector ? "true" : "false");
    s.set("resume", t.resume);
}

inline TrainConfig read_train_config(SectionReader& s) {
    TrainConfig t;
    t.n_roll = static_cast<int>(s.integer("n_roll", t.n_roll));
    t.batch_size = static_cast<int>(s.integer("batch_size", t.batch_size));
    t.epochs = static_cast<int>(s.integer("epochs", t.epochs));
    t.adam.lr = s.num("lr", t.adam.lr);
    t.adam.lr_min = s.num("lr_min", t.adam.lr_min);
    t.adam.beta1 = s.num("beta1", t.adam.beta1);
    t.adam.beta2 = s.num("beta2", t.adam.beta2);
    t.adam.eps = s.num("adam_eps", t.adam.eps);
    t.adam.clip = s.num("clip", t.adam.clip);
    t.seed = s.u64("seed", t.seed);
    t.checkpoint_every = static_cast<int>(s.integer("checkpoint_every", t.checkpoint_every));
    t.rec_through_projector = s.boolean("rec_through_projector", t.rec_through_projector);
    t.resume = s.str("resume", t.resume);
    t.validate();
    return t;
}

// --- objective ----------------------------------------------------------------------

struct LossComponents {
    double rec = 0.0;
    std::vector<double> lat, phy, orth; // per rollout step
    double norm = 0.0;
    double total = 0.0;

    double mean(const std::vector<double>& v) const {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    }
    double lat_mean() const { return mean(lat); }
    double phy_mean() const { return mean(phy); }
    double orth_mean() const { return mean(orth); }
};

/// lambda_rec L_rec + (1/N) sum_r (lambda_lat L_lat + lambda_phy L_phy + lambda_orth L_orth),
/// i.e. everything except the parameter-only normality term.
inline double window_total(const LossComponents& c, const LossWeights& w) {
    double s = 0.0;
    const double n = static_cast<double>(c.lat.size());
    for (std::size_t r = 0; r < c.lat.size(); ++r) s += w.lat * c.lat[r] + w.phy * c.phy[r] + w.orth * c.orth[r];
    return w.rec * c.rec + s / n;
}

/// Terms of the objective on one ground-truth window of (n_roll + 1) T frames.
/// The rollout starts from the first T frames and feeds each prediction back.
/// Gradients (everything but the normality term) accumulate into `g`.
inline LossComponents window_terms(const Model& m, const ParamSet& ps, const Tensor& window, const LossWeights& w,
                                   int n_roll, bool rec_through_projector, Grads* g) {
    const int T = m.cfg.T;
    if (window.n() != (n_roll + 1) * T)
        throw ShapeError("loss: window has " + std::to_string(window.n()) + " frames, expected " +
                         std::to_string((n_roll + 1) * T));
    const double inv_n = 1.0 / n_roll;
    auto chunk = [&](int r) { return window.slice(r * T, T); };

    LossComponents out;
    const Tensor u0 = chunk(0);
    EncoderCache e0;
    const Tensor h0 = m.encode(ps, u0, g ? &e0 : nullptr);

    // Reconstruction.
    DecoderCache dc_rec;
    Tensor z_rec;
    Tensor y_rec;
    if (rec_through_projector) {
        z_rec = m.project(ps, h0);
        y_rec = m.decode(ps, m.lift(ps, z_rec), g ? &dc_rec : nullptr);
    } else {
        y_rec = m.decode(ps, h0, g ? &dc_rec : nullptr);
    }
    out.rec = mse(y_rec, u0);

    // Rollout.
    std::vector<StepCache> steps(n_roll);
    std::vector<EncoderCache> tenc(n_roll);
    std::vector<Tensor> preds(n_roll), th(n_roll), tz(n_roll);
    for (int r = 0; r < n_roll; ++r) {
        try {
            StepCache& sc = steps[r];
            preds[r] = r == 0 ? m.step_from_encoding(ps, h0, sc) : m.forward_step(ps, preds[r - 1], &sc);
            const Tensor truth = chunk(r + 1);
            th[r] = m.encode(ps, truth, g ? &tenc[r] : nullptr);
            tz[r] = m.project(ps, th[r]);
            out.lat.push_back(mse(sc.zt, tz[r]));
            out.phy.push_back(mse(preds[r], truth));
            out.orth.push_back(sc.prop.orth);
            if (!std::isfinite(out.lat.back()) || !std::isfinite(out.phy.back()) || !std::isfinite(out.orth.back()))
                throw DivergenceError("non-finite loss");
        } catch (const DivergenceError& e) {
            throw DivergenceError("rollout step " + std::to_string(r + 1) + ": " + e.what());
        }
    }
    if (!std::isfinite(out.rec)) throw DivergenceError("non-finite reconstruction loss");
    out.total = window_total(out, w);
    if (!g) return out;

    // Adjoint, last rollout step first.
    Tensor carry;
    Tensor dh0;
    for (int r = n_roll - 1; r >= 0; --r) {
        const StepCache& sc = steps[r];
        Tensor dy = mse_grad(preds[r], chunk(r + 1), w.phy * inv_n);
        if (!carry.empty()) dy += carry;
        const Tensor dzt = mse_grad(sc.zt, tz[r], w.lat * inv_n);
        const Tensor dh = m.step_backward_to_encoding(ps, sc, dy, &dzt, w.orth * inv_n, *g);
        // The latent target depends on the parameters as well.
        Tensor dtz = dzt;
        dtz *= -1.0;
        m.encode_backward(ps, tenc[r], m.project_backward(ps, th[r], dtz, *g), *g);
        if (r > 0)
            carry = m.encode_backward(ps, sc.enc, dh, *g);
        else
            dh0 = dh;
    }
    const Tensor dyr = mse_grad(y_rec, u0, w.rec);
    if (rec_through_projector) {
        const Tensor dz = m.lift_backward(ps, z_rec, m.decode_backward(ps, dc_rec, dyr, *g), *g);
        dh0 += m.project_backward(ps, h0, dz, *g);
    } else {
        dh0 += m.decode_backward(ps, dc_rec, dyr, *g);
    }
    m.encode_backward(ps, e0, dh0, *g);
    return out;
}

/// Full objective on one window, including the normality term.
inline LossComponents loss_components(const Model& m, const ParamSet& ps, const Tensor& window, const LossWeights& w,
                                      int n_roll, bool rec_through_projector = false, Grads* g = nullptr) {
    LossComponents c = window_terms(m, ps, window, w, n_roll, rec_through_projector, g);
    if (w.norm != 0.0 && g) {
        Grads gn(ps);
        c.norm = m.normality_penalty(ps, &gn);
        gn *= w.norm;
        *g += gn;
    } else {
        c.norm = m.normality_penalty(ps);
    }
    c.total += w.norm * c.norm;
    return c;
}

/// Objective averaged over a batch of windows. Per-window gradients are
/// computed concurrently and reduced in window order.
inline LossComponents batch_loss(const Model& m, const ParamSet& ps, const std::vector<Tensor>& windows,
                                 const LossWeights& w, int n_roll, bool rec_through_projector, Grads* g) {
    const std::size_t B = windows.size();
    std::vector<LossComponents> parts(B);
    std::vector<Grads> grads(g ? B : 0);
    parallel_for(static_cast<int>(B), [&](int i) {
        Grads* gi = nullptr;
        if (g) {
            grads[i] = Grads(ps);
            gi = &grads[i];
        }
        parts[i] = window_terms(m, ps, windows[i], w, n_roll, rec_through_projector, gi);
    });
    LossComponents out;
    out.lat.assign(n_roll, 0.0);
    out.phy.assign(n_roll, 0.0);
    out.orth.assign(n_roll, 0.0);
    const double inv_b = 1.0 / static_cast<double>(B);
    for (std::size_t i = 0; i < B; ++i) {
        out.rec += parts[i].rec * inv_b;
        out.total += parts[i].total * inv_b;
        for (int r = 0; r < n_roll; ++r) {
            out.lat[r] += parts[i].lat[r] * inv_b;
            out.phy[r] += parts[i].phy[r] * inv_b;
            out.orth[r] += parts[i].orth[r] * inv_b;
        }
        if (g) {
            grads[i] *= inv_b;
            *g += grads[i];
        }
    }
    if (g && w.norm != 0.0) {
        Grads gn(ps);
        out.norm = m.normality_penalty(ps, &gn);
        gn *= w.norm;
        *g += gn;
    } else {
        out.norm = m.normality_penalty(ps);
    }
    out.total += w.norm * out.norm;
    return out;
}

// --- data windows ---------------------------------------------------------------------

struct WindowRef {
    int traj = 0;
    int start = 0;
};

/// Non-overlapping windows of `length` frames from every trajectory of a split.
inline std::vector<WindowRef> make_windows(const Dataset& d, Split split, int length) {
    std::vector<WindowRef> out;
    for (int i : d.indices(split))
        for (int s = 0; s + length <= d.trajectories[i].length(); s += length) out.push_back({i, s});
    return out;
}

// --- training loop ----------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double rec = 0.0, lat = 0.0, phy = 0.0, norm = 0.0, orth = 0.0, total = 0.0;
    double wall_seconds = 0.0;
};

inline const char* kTrainLogHeader = "epoch,L_rec,L_lat,L_phy,L_norm,L_orth,total,wall_seconds";

inline std::string format_log_row(const EpochLog& e) {
    std::ostringstream os;
    os << e.epoch << ',' << fmt_double(e.rec) << ',' << fmt_double(e.lat) << ',' << fmt_double(e.phy) << ','
       << fmt_double(e.norm) << ',' << fmt_double(e.orth) << ',' << fmt_double(e.total) << ','
       << fmt_double(e.wall_seconds);
    return os.str();
}

struct TrainResult {
    Model model;
    AdamState adam;
    std::vector<EpochLog> log; // epochs run in this call
};

inline std::string checkpoint_name(int epoch) { return "checkpoint_epoch" + std::to_string(epoch) + ".sspc"; }

/// Train `mc` on the training split of `data`. When `out_dir` is non-empty
/// the log is written to train_log.csv there, intermediate checkpoints every
/// `checkpoint_every` epochs, and the final state to checkpoint.sspc. A
/// checkpoint passed as `resume` continues that run; the result is bitwise
/// identical to an uninterrupted run with the same configuration.
inline TrainResult train(const Dataset& data, const ModelConfig& mc, const TrainConfig& tc, const LossWeights& w,
                         const std::filesystem::path& out_dir, const Checkpoint* resume = nullptr,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
    namespace fs = std::filesystem;
    mc.validate();
    tc.validate();
    w.validate();
    if (data.d_u() != mc.d_u)
        throw ConfigError("train: dataset has d_u=" + std::to_string(data.d_u()) + " but the model expects d_u=" +
                          std::to_string(mc.d_u));
    if (data.nx != mc.Nx || data.ny != mc.Ny)
        throw ConfigError("train: dataset resolution " + std::to_string(data.nx) + "x" + std::to_string(data.ny) +
                          " does not match the model's " + std::to_string(mc.Nx) + "x" + std::to_string(mc.Ny));
    const int wlen = (tc.n_roll + 1) * mc.T;
    if (data.L_total < wlen)
        throw ConfigError("train: trajectories have " + std::to_string(data.L_total) + " frames, need at least " +
                          std::to_string(wlen) + " = (n_roll + 1) T");
    const auto windows = make_windows(data, Split::train, wlen);
    if (windows.empty()) throw ConfigError("train: the dataset has no training trajectories");

    TrainResult res;
    int start_epoch = 0;
    if (resume) {
        if (!(resume->model.cfg == mc)) throw ConfigError("train: resume checkpoint was written for a different model configuration");
        if (resume->progress.seed != tc.seed) throw ConfigError("train: resume checkpoint was written with a different seed");
        if (!resume->adam) throw ConfigError("train: resume checkpoint has no optimizer state");
        res.model = resume->model;
        res.adam = *resume->adam;
        start_epoch = resume->progress.epoch;
    } else {
        res.model = Model(mc, tc.seed);
        res.adam = AdamState(res.model.params);
    }
    Model& m = res.model;
    const std::int64_t per_epoch = (static_cast<std::int64_t>(windows.size()) + tc.batch_size - 1) / tc.batch_size;
    const std::int64_t total_steps = per_epoch * tc.epochs;

    std::vector<std::string> log_lines;
    const fs::path log_path = out_dir.empty() ? fs::path() : out_dir / "train_log.csv";
    if (resume && !log_path.empty() && fs::exists(log_path)) {
        // Keep the rows of the epochs the checkpoint already covers.
        std::istringstream is(read_text(log_path));
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line)) {
            std::int64_t e = 0;
            const auto f = split(line, ',');
            if (!f.empty() && parse_int64(f[0], e) && e <= start_epoch) log_lines.push_back(line);
        }
    }
    auto write_log = [&] {
        if (log_path.empty()) return;
        std::string text = std::string(kTrainLogHeader) + "\n";
        for (const auto& l : log_lines) text += l + "\n";
        write_text_atomic(log_path, text);
    };
    auto checkpoint = [&](const fs::path& p, int epoch) {
        save_checkpoint(p, m, &res.adam, TrainProgress{epoch, tc.seed, total_steps});
    };

    auto load_batch = [&](const std::vector<WindowRef>& order, std::size_t first) {
        std::vector<Tensor> batch;
        for (std::size_t k = first; k < std::min(order.size(), first + tc.batch_size); ++k)
            batch.push_back(data.trajectories[order[k].traj].frames(order[k].start, wlen));
        return batch;
    };

    const auto t0 = std::chrono::steady_clock::now();
    for (int epoch = start_epoch + 1; epoch <= tc.epochs; ++epoch) {
        std::vector<WindowRef> order = windows;
        Rng rng(Rng::mix(tc.seed) ^ static_cast<std::uint64_t>(epoch));
        rng.shuffle(order);
        EpochLog el;
        el.epoch = epoch;
        double seen = 0.0;
        try {
            for (std::size_t first = 0; first < order.size(); first += tc.batch_size) {
                const auto batch = load_batch(order, first);
                Grads g(m.params);
                const LossComponents c = batch_loss(m, m.params, batch, w, tc.n_roll, tc.rec_through_projector, &g);
                if (!std::isfinite(c.total)) throw DivergenceError("non-finite total loss");
                const double bw = static_cast<double>(batch.size());
                el.rec += bw * c.rec;
                el.lat += bw * c.lat_mean();
                el.phy += bw * c.phy_mean();
                el.norm += bw * c.norm;
                el.orth += bw * c.orth_mean();
                el.total += bw * c.total;
                seen += bw;
                adam_update(m.params, g, res.adam, tc.adam, cosine_lr(tc.adam, res.adam.step, total_steps));
            }
        } catch (const DivergenceError& e) {
            write_log();
            throw DivergenceError("train: epoch " + std::to_string(epoch) + ": " + e.what());
        }
        for (double* v : {&el.rec, &el.lat, &el.phy, &el.norm, &el.orth, &el.total}) *v /= seen;
        el.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.push_back(el);
        log_lines.push_back(format_log_row(el));
        write_log();
        if (on_epoch) on_epoch(el);
        if (!out_dir.empty() && tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0 && epoch < tc.epochs)
            checkpoint(out_dir / checkpoint_name(epoch), epoch);
    }
    if (!out_dir.empty()) {
        write_log();
        checkpoint(out_dir / "checkpoint.sspc", std::max(start_epoch, tc.epochs));
    }
    return res;
}

/// Objective averaged over every training window, without gradients.
inline LossComponents dataset_loss(const Model& m, const Dataset& data, const TrainConfig& tc, const LossWeights& w) {
    const int wlen = (tc.n_roll + 1) * m.cfg.T;
    const auto windows = make_windows(data, Split::train, wlen);
    std::vector<Tensor> all;
    for (const auto& r : windows) all.push_back(data.trajectories[r.traj].frames(r.start, wlen));
    return batch_loss(m, m.params, all, w, tc.n_roll, tc.rec_through_projector, nullptr);
}

} // namespace ssp
