#pragma once

// Latent spectral propagator: frequency-gated temporal backbone, convolutional
// closure over the retained frequency plane, and explicit residual substeps.
//
// Complex gradients follow one convention throughout: for a complex quantity
// z the gradient is dL/dRe(z) + i dL/dIm(z). With it, b = W a gives
// dW = dB a^H and da = W^H dB.

#include <string>
#include <vector>

#include "ssp/layers.hpp"
#include "ssp/modes.hpp"

namespace ssp {

// --- penalties ------------------------------------------------------------------

/// (1/C) sum_l ||A_l A_l^H - A_l^H A_l||_F^2 over the C square matrices stored
/// as interleaved complex (C, T, T, 2).
inline double normality_penalty(std::span<const double> kbar, int C, int T, std::span<double> grad = {}) {
    using CMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    double total = 0.0;
    const std::size_t tt = static_cast<std::size_t>(T) * T;
    for (int l = 0; l < C; ++l) {
        CMat A(T, T);
        for (std::size_t e = 0; e < tt; ++e) A.data()[e] = {kbar[2 * (l * tt + e)], kbar[2 * (l * tt + e) + 1]};
        const CMat Cm = A * A.adjoint() - A.adjoint() * A;
        total += Cm.squaredNorm();
        if (!grad.empty()) {
            const CMat G = (4.0 / C) * (Cm * A - A * Cm);
            for (std::size_t e = 0; e < tt; ++e) {
                grad[2 * (l * tt + e)] += G.data()[e].real();
                grad[2 * (l * tt + e) + 1] += G.data()[e].imag();
            }
        }
    }
    return total / C;
}

struct OrthResult {
    double value = 0.0;
    CTensor grad_k; // gradients w.r.t. the increments, filled on request
    CTensor grad_g;
};

/// |<dK, dG>|^2 / ((||dK||^2 + eps)(||dG||^2 + eps)) with the complex inner
/// product <a, b> = sum conj(a) b over all entries.
inline OrthResult orth_penalty(const CTensor& dk, const CTensor& dg, double eps, bool want_grad = false) {
    dk.check_same(dg);
    cplx ip = 0.0;
    double nk = 0.0, ng = 0.0;
    for (std::size_t e = 0; e < dk.size(); ++e) {
        ip += std::conj(dk[e]) * dg[e];
        nk += std::norm(dk[e]);
        ng += std::norm(dg[e]);
    }
    const double a = nk + eps, b = ng + eps, P = std::norm(ip);
    OrthResult r;
    r.value = P / (a * b);
    if (want_grad) {
        r.grad_k = CTensor(dk.shape());
        r.grad_g = CTensor(dg.shape());
        for (std::size_t e = 0; e < dk.size(); ++e) {
            r.grad_g[e] = 2.0 * ip * dk[e] / (a * b) - 2.0 * P * dg[e] / (a * b * b);
            r.grad_k[e] = 2.0 * std::conj(ip) * dg[e] / (a * b) - 2.0 * P * dk[e] / (a * a * b);
        }
    }
    return r;
}

// --- propagator -----------------------------------------------------------------

struct PropagatorConfig {
    int T = 5;
    int C = 4; // latent channels C_z
    int nx = 32, ny = 32;
    int mx = 8, my = 8;
    int n_sub = 2;
    double dtau = 0.5;
    double beta = 0.5;
    double alpha = 1.0;
    double lambda_g = 1.0;
    int gate_hidden = 64;
    double orth_eps = 1e-8;
    /// Zero the modes outside the retained set instead of passing them through.
    bool zero_unretained = false;
    /// Evaluate dK and dG at the last substep input for the orthogonality term.
    bool track_orth = true;
};

/// Gate values for every retained mode, (modes, C), with intermediates.
struct GateCache {
    RowMat features; // (P, 5)
    RowMat hidden;   // tanh(fc1)
    RowMat act;      // tanh(fc2)
    RowMat gate;     // 1 + beta * act
};

struct ClosureCache {
    Tensor x;   // (B, 2TC, mx, my) real/imag split input
    Tensor pre; // first conv output before gelu
    Tensor hid; // gelu(pre)
};

struct SubstepCache {
    CTensor q;      // substep input, (B*T, C, mx, my)
    CTensor kq;     // K(q)
    ClosureCache closure;
};

struct PropagateCache {
    int batch = 0;
    SpectralField<double> input_spec; // only the shape is needed for the adjoint
    GateCache gate;
    std::vector<SubstepCache> steps;
    CTensor dk_last, dg_last; // increments at the final substep input
    double orth = 0.0;
};

class Propagator {
public:
    PropagatorConfig cfg;
    RetainedSet modes;
    ParamId kbar = -1; // (C, T, T, 2)
    Dense gate_fc1, gate_fc2;
    Conv2d closure1, closure2;

    Propagator() = default;
    Propagator(ParamSet& ps, const std::string& name, const PropagatorConfig& c)
        : cfg(c), modes(c.nx, c.ny, c.mx, c.my) {
        const int tc2 = 2 * cfg.T * cfg.C;
        kbar = ps.add(name + ".kbar", {cfg.C, cfg.T, cfg.T, 2});
        gate_fc1 = Dense(ps, name + ".gate.fc1", 5, cfg.gate_hidden);
        gate_fc2 = Dense(ps, name + ".gate.fc2", cfg.gate_hidden, cfg.C);
        closure1 = Conv2d(ps, name + ".closure.conv1", tc2, 2 * tc2, 3);
        closure2 = Conv2d(ps, name + ".closure.conv2", 2 * tc2, tc2, 3);
    }

    void init(ParamSet& ps, Rng& rng) const {
        auto k = ps[kbar];
        const std::size_t tt = static_cast<std::size_t>(cfg.T) * cfg.T;
        for (int l = 0; l < cfg.C; ++l)
            for (int t = 0; t < cfg.T; ++t)
                for (int s = 0; s < cfg.T; ++s) {
                    const std::size_t e = l * tt + t * cfg.T + s;
                    k[2 * e] = (t == s ? 1.0 : 0.0) + 1e-2 * rng.normal();
                    k[2 * e + 1] = 1e-2 * rng.normal();
                }
        gate_fc1.init(ps, rng);
        zero(ps, gate_fc2.weight);
        zero(ps, gate_fc2.bias);
        closure1.init(ps, rng);
        zero(ps, closure2.weight);
        zero(ps, closure2.bias);
    }

    /// Set every K_l to the identity.
    void set_identity_backbone(ParamSet& ps) const {
        auto k = ps[kbar];
        std::fill(k.begin(), k.end(), 0.0);
        const std::size_t tt = static_cast<std::size_t>(cfg.T) * cfg.T;
        for (int l = 0; l < cfg.C; ++l)
            for (int t = 0; t < cfg.T; ++t) k[2 * (l * tt + t * cfg.T + t)] = 1.0;
    }

    // --- gate ---------------------------------------------------------------

    /// Gate vector M(k, .) in R^C for wavenumber (kx, ky).
    std::vector<double> gate(const ParamSet& ps, int kx, int ky) const {
        const auto f = freq_features(kx, ky);
        RowMat F(1, 5);
        for (int j = 0; j < 5; ++j) F(0, j) = f[j];
        const RowMat g = gate_values(ps, F).gate;
        return {g.data(), g.data() + cfg.C};
    }

    GateCache gate_values(const ParamSet& ps, const RowMat& F) const {
        GateCache c;
        c.features = F;
        c.hidden = gate_fc1.forward(ps, F).array().tanh();
        c.act = gate_fc2.forward(ps, c.hidden).array().tanh();
        c.gate = (1.0 + cfg.beta * c.act.array()).matrix();
        return c;
    }

    GateCache retained_gates(const ParamSet& ps) const {
        RowMat F(modes.count(), 5);
        for (int a = 0; a < modes.mx; ++a)
            for (int b = 0; b < modes.my; ++b) {
                const auto f = freq_features(modes.kx(a), modes.ky(b));
                for (int j = 0; j < 5; ++j) F(a * modes.my + b, j) = f[j];
            }
        return gate_values(ps, F);
    }

    void gate_backward(const ParamSet& ps, const GateCache& c, const RowMat& dgate, Grads& g) const {
        const RowMat dact = (dgate.array() * cfg.beta * (1.0 - c.act.array().square())).matrix();
        const RowMat dh = gate_fc2.backward(ps, c.hidden, dact, g);
        const RowMat dpre = (dh.array() * (1.0 - c.hidden.array().square())).matrix();
        gate_fc1.backward(ps, c.features, dpre, g);
    }

    // --- backbone -------------------------------------------------------------

    /// out(b, t, l, k) = M(k, l) sum_s K_l[t, s] q(b, s, l, k), frames laid out
    /// batch-major with T frames per sample.
    CTensor backbone(const ParamSet& ps, const GateCache& gc, const CTensor& q) const {
        check_block(q);
        const int B = q.n() / cfg.T, T = cfg.T, C = cfg.C, P = modes.count();
        const auto k = ps[kbar];
        CTensor out(q.shape());
        std::vector<cplx> K(static_cast<std::size_t>(T) * T);
        for (int l = 0; l < C; ++l) {
            load_kbar(k, l, K);
            for (int b = 0; b < B; ++b)
                for (int t = 0; t < T; ++t) {
                    cplx* o = out.plane(b * T + t, l);
                    for (int s = 0; s < T; ++s) {
                        const cplx w = K[t * T + s];
                        const cplx* src = q.plane(b * T + s, l);
                        for (int p = 0; p < P; ++p) o[p] += w * src[p];
                    }
                    for (int p = 0; p < P; ++p) o[p] *= gc.gate(p, l);
                }
        }
        return out;
    }

    /// Adjoint of backbone. Returns dq; accumulates dK and the gate gradient.
    CTensor backbone_backward(const ParamSet& ps, const GateCache& gc, const CTensor& q, const CTensor& dy,
                              Grads& g, RowMat& dgate) const {
        const int B = q.n() / cfg.T, T = cfg.T, C = cfg.C, P = modes.count();
        const auto k = ps[kbar];
        auto gk = g[kbar];
        CTensor dq(q.shape());
        std::vector<cplx> K(static_cast<std::size_t>(T) * T);
        std::vector<cplx> v(P), dv(P);
        const std::size_t tt = static_cast<std::size_t>(T) * T;
        for (int l = 0; l < C; ++l) {
            load_kbar(k, l, K);
            for (int b = 0; b < B; ++b)
                for (int t = 0; t < T; ++t) {
                    std::fill(v.begin(), v.end(), cplx{});
                    for (int s = 0; s < T; ++s) {
                        const cplx w = K[t * T + s];
                        const cplx* src = q.plane(b * T + s, l);
                        for (int p = 0; p < P; ++p) v[p] += w * src[p];
                    }
                    const cplx* d = dy.plane(b * T + t, l);
                    for (int p = 0; p < P; ++p) {
                        dgate(p, l) += (std::conj(d[p]) * v[p]).real();
                        dv[p] = gc.gate(p, l) * d[p];
                    }
                    for (int s = 0; s < T; ++s) {
                        const cplx* src = q.plane(b * T + s, l);
                        cplx* dst = dq.plane(b * T + s, l);
                        const cplx wc = std::conj(K[t * T + s]);
                        cplx acc = 0.0;
                        for (int p = 0; p < P; ++p) {
                            acc += dv[p] * std::conj(src[p]);
                            dst[p] += wc * dv[p];
                        }
                        gk[2 * (l * tt + t * T + s)] += acc.real();
                        gk[2 * (l * tt + t * T + s) + 1] += acc.imag();
                    }
                }
        }
        return dq;
    }

    /// backbone_apply on a RetainedBlock (gates evaluated from params).
    RetainedBlock backbone_apply(const ParamSet& ps, const RetainedBlock& blk) const {
        check_modes(blk);
        return {backbone(ps, retained_gates(ps), blk.data), blk.modes};
    }

    // --- closure ----------------------------------------------------------------

    CTensor closure(const ParamSet& ps, const CTensor& q, ClosureCache* cache = nullptr) const {
        check_block(q);
        const int B = q.n() / cfg.T, TC = cfg.T * cfg.C;
        Tensor x(B, 2 * TC, modes.mx, modes.my);
        const std::size_t P = static_cast<std::size_t>(modes.count());
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < cfg.T; ++t)
                for (int l = 0; l < cfg.C; ++l) {
                    const cplx* src = q.plane(b * cfg.T + t, l);
                    double* re = x.plane(b, t * cfg.C + l);
                    double* im = x.plane(b, TC + t * cfg.C + l);
                    for (std::size_t p = 0; p < P; ++p) {
                        re[p] = src[p].real();
                        im[p] = src[p].imag();
                    }
                }
        Tensor pre = closure1.forward(ps, x);
        Tensor hid = gelu(pre);
        const Tensor y = closure2.forward(ps, hid);
        CTensor out(q.shape());
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < cfg.T; ++t)
                for (int l = 0; l < cfg.C; ++l) {
                    const double* re = y.plane(b, t * cfg.C + l);
                    const double* im = y.plane(b, TC + t * cfg.C + l);
                    cplx* dst = out.plane(b * cfg.T + t, l);
                    for (std::size_t p = 0; p < P; ++p) dst[p] = {re[p], im[p]};
                }
        if (cache) *cache = {std::move(x), std::move(pre), std::move(hid)};
        return out;
    }

    CTensor closure_backward(const ParamSet& ps, const ClosureCache& c, const CTensor& dout, Grads& g) const {
        const int B = dout.n() / cfg.T, TC = cfg.T * cfg.C;
        const std::size_t P = static_cast<std::size_t>(modes.count());
        Tensor dy(B, 2 * TC, modes.mx, modes.my);
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < cfg.T; ++t)
                for (int l = 0; l < cfg.C; ++l) {
                    const cplx* src = dout.plane(b * cfg.T + t, l);
                    double* re = dy.plane(b, t * cfg.C + l);
                    double* im = dy.plane(b, TC + t * cfg.C + l);
                    for (std::size_t p = 0; p < P; ++p) {
                        re[p] = src[p].real();
                        im[p] = src[p].imag();
                    }
                }
        const Tensor dhid = closure2.backward(ps, c.hid, dy, g);
        const Tensor dx = closure1.backward(ps, c.x, gelu_backward(c.pre, dhid), g);
        CTensor dq(dout.shape());
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < cfg.T; ++t)
                for (int l = 0; l < cfg.C; ++l) {
                    const double* re = dx.plane(b, t * cfg.C + l);
                    const double* im = dx.plane(b, TC + t * cfg.C + l);
                    cplx* dst = dq.plane(b * cfg.T + t, l);
                    for (std::size_t p = 0; p < P; ++p) dst[p] = {re[p], im[p]};
                }
        return dq;
    }

    RetainedBlock closure_apply(const ParamSet& ps, const RetainedBlock& blk) const {
        check_modes(blk);
        return {closure(ps, blk.data), blk.modes};
    }

    // --- full propagator ------------------------------------------------------------

    /// Residual substeps on a retained block:
    /// q <- q + dtau (alpha (K(q) - q) + lambda_g G(q)).
    CTensor evolve(const ParamSet& ps, const CTensor& q0, PropagateCache* cache) const {
        GateCache gc = retained_gates(ps);
        CTensor q = q0;
        const bool need_closure = cfg.lambda_g != 0.0;
        const bool need_backbone = cfg.alpha != 0.0;
        if (cache) cache->steps.clear();
        for (int s = 0; s < cfg.n_sub; ++s) {
            SubstepCache sc;
            CTensor dk(q.shape()), dg(q.shape());
            if (need_backbone) {
                sc.kq = backbone(ps, gc, q);
                dk = sc.kq;
                dk -= q;
                dk *= cfg.alpha;
            }
            if (need_closure) {
                dg = closure(ps, q, cache ? &sc.closure : nullptr);
                dg *= cfg.lambda_g;
            }
            if (cache && s + 1 == cfg.n_sub && cfg.track_orth && need_backbone && need_closure) {
                const int B = q.n() / cfg.T;
                cache->orth = 0.0;
                for (int b = 0; b < B; ++b)
                    cache->orth += orth_penalty(dk.slice(b * cfg.T, cfg.T), dg.slice(b * cfg.T, cfg.T), cfg.orth_eps)
                                       .value;
                cache->orth /= B;
                cache->dk_last = dk;
                cache->dg_last = dg;
            }
            CTensor next = q;
            next.axpy(cfg.dtau, dk);
            next.axpy(cfg.dtau, dg);
            if (!all_finite(next)) throw DivergenceError("propagate: non-finite state at substep " + std::to_string(s + 1));
            if (cache) {
                sc.q = std::move(q);
                cache->steps.push_back(std::move(sc));
            }
            q = std::move(next);
        }
        if (cache) cache->gate = std::move(gc);
        return q;
    }

    /// Adjoint of evolve. `dq_out` is dL/dq_final; `orth_weight` scales the
    /// gradient of the cached orthogonality value. Returns dL/dq0.
    CTensor evolve_backward(const ParamSet& ps, const PropagateCache& c, const CTensor& dq_out, double orth_weight,
                            Grads& g) const {
        const bool need_closure = cfg.lambda_g != 0.0;
        const bool need_backbone = cfg.alpha != 0.0;
        RowMat dgate = RowMat::Zero(modes.count(), cfg.C);
        CTensor dq = dq_out;
        for (int s = cfg.n_sub - 1; s >= 0; --s) {
            const SubstepCache& sc = c.steps[s];
            // Gradients w.r.t. the increments dk and dg of this substep.
            CTensor gdk = dq;
            gdk *= cfg.dtau;
            CTensor gdg = gdk;
            if (s + 1 == cfg.n_sub && orth_weight != 0.0 && cfg.track_orth && need_backbone && need_closure) {
                const int B = dq.n() / cfg.T;
                for (int b = 0; b < B; ++b) {
                    auto r = orth_penalty(c.dk_last.slice(b * cfg.T, cfg.T), c.dg_last.slice(b * cfg.T, cfg.T),
                                          cfg.orth_eps, true);
                    for (std::size_t e = 0; e < r.grad_k.size(); ++e) {
                        gdk[b * r.grad_k.size() + e] += orth_weight / B * r.grad_k[e];
                        gdg[b * r.grad_g.size() + e] += orth_weight / B * r.grad_g[e];
                    }
                }
            }
            CTensor dprev = dq;
            if (need_backbone) {
                gdk *= cfg.alpha;
                dprev -= gdk;
                dprev += backbone_backward(ps, c.gate, sc.q, gdk, g, dgate);
            }
            if (need_closure) {
                gdg *= cfg.lambda_g;
                dprev += closure_backward(ps, sc.closure, gdg, g);
            }
            dq = std::move(dprev);
        }
        if (need_backbone) gate_backward(ps, c.gate, dgate, g);
        return dq;
    }

    /// fft2 -> truncate -> evolve -> embed -> ifft2 on latent frames (B*T, C, nx, ny).
    Tensor propagate(const ParamSet& ps, const Tensor& z, PropagateCache* cache = nullptr) const {
        if (z.c() != cfg.C || z.h() != cfg.nx || z.w() != cfg.ny || z.n() % cfg.T != 0)
            throw ShapeError("propagate: expected (B*" + std::to_string(cfg.T) + ", " + std::to_string(cfg.C) + ", " +
                             std::to_string(cfg.nx) + ", " + std::to_string(cfg.ny) + "), got " + z.shape().str());
        SpectralField<double> spec = fft2(z);
        const RetainedBlock blk = truncate(spec, cfg.mx, cfg.my);
        const CTensor q = evolve(ps, blk.data, cache);
        if (cfg.zero_unretained) spec.data.fill(cplx{});
        embed_into({q, blk.modes}, spec);
        if (cache) {
            cache->batch = z.n() / cfg.T;
            cache->input_spec = SpectralField<double>{CTensor(), spec.nx, spec.ny};
        }
        return ifft2(spec);
    }

    Tensor propagate_backward(const ParamSet& ps, const PropagateCache& c, const Tensor& dz_out, double orth_weight,
                              Grads& g) const {
        SpectralField<double> ds = ifft2_adjoint(dz_out);
        const RetainedBlock dq_out = truncate(ds, cfg.mx, cfg.my);
        const CTensor dq0 = evolve_backward(ps, c, dq_out.data, orth_weight, g);
        if (cfg.zero_unretained) ds.data.fill(cplx{});
        embed_into({dq0, dq_out.modes}, ds);
        return fft2_adjoint(ds);
    }

private:
    static void zero(ParamSet& ps, ParamId id) {
        for (auto& v : ps[id]) v = 0.0;
    }

    void load_kbar(std::span<const double> k, int l, std::vector<cplx>& K) const {
        const std::size_t tt = static_cast<std::size_t>(cfg.T) * cfg.T;
        for (std::size_t e = 0; e < tt; ++e) K[e] = {k[2 * (l * tt + e)], k[2 * (l * tt + e) + 1]};
    }

    void check_block(const CTensor& q) const {
        if (q.c() != cfg.C || q.h() != modes.mx || q.w() != modes.my || q.n() % cfg.T != 0)
            throw ShapeError("propagator: block shape " + q.shape().str() + " does not match config");
    }
    void check_modes(const RetainedBlock& blk) const {
        if (blk.modes.mx != modes.mx || blk.modes.my != modes.my)
            throw ShapeError("propagator: retained set does not match config");
    }
};

} // namespace ssp
