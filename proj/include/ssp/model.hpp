#pragma once

// The factorized forecaster u -> D(R(Phi(P(E(u))))) on sequences of T frames.
//
// Frame tensors are (B*T, channels, h, w) with T consecutive frames per
// sample. Every stage has a forward taking an optional cache and a matching
// backward that accumulates parameter gradients and returns the input
// gradient.

#include <string>
#include <vector>

#include "ssp/io.hpp"
#include "ssp/layers.hpp"
#include "ssp/propagator.hpp"

namespace ssp {

enum class EncoderKind { spectral, conv };

inline std::string to_string(EncoderKind k) { return k == EncoderKind::spectral ? "spectral" : "conv"; }

inline EncoderKind parse_encoder_kind(const std::string& s) {
    if (s == "spectral") return EncoderKind::spectral;
    if (s == "conv") return EncoderKind::conv;
    throw ConfigError("unknown encoder kind '" + s + "' (expected spectral or conv)");
}

struct ModelConfig {
    int d_u = 1;
    int C_s = 8;
    int C_z = 4;
    int T = 5;
    int Nx = 32, Ny = 32;
    int r = 1;
    int mx = 8, my = 8;
    int n_sub = 2;
    double dtau = 0.5;
    double beta = 0.5;
    double alpha = 1.0;
    double lambda_g = 1.0;
    int enc_blocks = 2;
    int dec_blocks = 1;
    int gate_hidden = 64;
    double orth_eps = 1e-8;
    /// Coordinate channels appended to the encoder input (zeros when false).
    bool use_coords = true;
    /// Zero modes outside the retained set inside the propagator.
    bool zero_unretained = false;
    EncoderKind encoder = EncoderKind::spectral;
    /// Encode the T-frame history as one channel-stacked field.
    bool time_to_channel = false;
    /// When false, P and R are identities and C_z must equal C_s.
    bool projector = true;
    /// Keep every K_l fixed at the identity (gates stay trainable).
    bool freeze_backbone = false;

    int nx() const { return Nx / r; }
    int ny() const { return Ny / r; }

    void validate() const {
        auto need = [](bool ok, const std::string& msg) {
            if (!ok) throw ConfigError("model: " + msg);
        };
        need(d_u >= 1, "d_u must be positive");
        need(T >= 1, "T must be positive");
        need(C_s >= 1 && C_z >= 1, "channel counts must be positive");
        need(r >= 1 && Nx % r == 0 && Ny % r == 0, "r must divide Nx and Ny");
        check_grid_dims(Nx, Ny);
        check_grid_dims(nx(), ny());
        if (projector)
            need(C_z < C_s, "C_z must be smaller than C_s");
        else
            need(C_z == C_s, "without the projector pair C_z must equal C_s");
        need(mx >= 1 && mx <= nx(), "mx must lie in [1, nx]");
        need(my >= 1 && my <= ny() / 2 + 1, "my must lie in [1, ny/2 + 1]");
        need(n_sub >= 1, "n_sub must be positive");
        need(dtau > 0.0, "dtau must be positive");
        need(beta >= 0.0, "beta must be nonnegative");
        need(enc_blocks >= 0 && dec_blocks >= 0, "block counts must be nonnegative");
        need(gate_hidden >= 1, "gate_hidden must be positive");
        need(orth_eps > 0.0, "orth_eps must be positive");
    }

    PropagatorConfig propagator() const {
        PropagatorConfig p;
        p.T = T;
        p.C = C_z;
        p.nx = nx();
        p.ny = ny();
        p.mx = mx;
        p.my = my;
        p.n_sub = n_sub;
        p.dtau = dtau;
        p.beta = beta;
        p.alpha = alpha;
        p.lambda_g = lambda_g;
        p.gate_hidden = gate_hidden;
        p.orth_eps = orth_eps;
        p.zero_unretained = zero_unretained;
        return p;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void write_model_config(const ModelConfig& m, IniSection& s) {
    s.set("d_u", std::to_string(m.d_u));
    s.set("C_s", std::to_string(m.C_s));
    s.set("C_z", std::to_string(m.C_z));
    s.set("T", std::to_string(m.T));
    s.set("Nx", std::to_string(m.Nx));
    s.set("Ny", std::to_string(m.Ny));
    s.set("r", std::to_string(m.r));
    s.set("mx", std::to_string(m.mx));
    s.set("my", std::to_string(m.my));
    s.set("n_sub", std::to_string(m.n_sub));
    s.set("dtau", fmt_double(m.dtau));
    s.set("beta", fmt_double(m.beta));
    s.set("alpha", fmt_double(m.alpha));
    s.set("lambda_g", fmt_double(m.lambda_g));
    s.set("enc_blocks", std::to_string(m.enc_blocks));
    s.set("dec_blocks", std::to_string(m.dec_blocks));
    s.set("gate_hidden", std::to_string(m.gate_hidden));
    s.set("orth_eps", fmt_double(m.orth_eps));
    s.set("use_coords", m.use_coords ? "true" : "false");
    s.set("zero_unretained", m.zero_unretained ? "true" : "false");
    s.set("encoder", to_string(m.encoder));
    s.set("time_to_channel", m.time_to_channel ? "true" : "false");
    s.set("projector", m.projector ? "true" : "false");
    s.set("freeze_backbone", m.freeze_backbone ? "true" : "false");
}

/// Read a model section. T, mx and my must be explicit when
/// `require_physics` is set; everything else has a default.
inline ModelConfig read_model_config(SectionReader& s, bool require_physics) {
    ModelConfig m;
    auto i32 = [&](const char* key, int def) { return static_cast<int>(s.integer(key, def)); };
    if (require_physics) {
        m.T = static_cast<int>(s.integer("T"));
        m.mx = static_cast<int>(s.integer("mx"));
        m.my = static_cast<int>(s.integer("my"));
    } else {
        m.T = i32("T", m.T);
        m.mx = i32("mx", m.mx);
        m.my = i32("my", m.my);
    }
    m.d_u = i32("d_u", m.d_u);
    m.C_s = i32("C_s", m.C_s);
    m.C_z = i32("C_z", m.C_z);
    m.Nx = i32("Nx", m.Nx);
    m.Ny = i32("Ny", m.Ny);
    m.r = i32("r", m.r);
    m.n_sub = i32("n_sub", m.n_sub);
    m.dtau = s.num("dtau", m.dtau);
    m.beta = s.num("beta", m.beta);
    m.alpha = s.num("alpha", m.alpha);
    m.lambda_g = s.num("lambda_g", m.lambda_g);
    m.enc_blocks = i32("enc_blocks", m.enc_blocks);
    m.dec_blocks = i32("dec_blocks", m.dec_blocks);
    m.gate_hidden = i32("gate_hidden", m.gate_hidden);
    m.orth_eps = s.num("orth_eps", m.orth_eps);
    m.use_coords = s.boolean("use_coords", m.use_coords);
    m.zero_unretained = s.boolean("zero_unretained", m.zero_unretained);
    m.encoder = parse_encoder_kind(s.str("encoder", to_string(m.encoder)));
    m.time_to_channel = s.boolean("time_to_channel", m.time_to_channel);
    m.projector = s.boolean("projector", m.projector);
    m.freeze_backbone = s.boolean("freeze_backbone", m.freeze_backbone);
    return m;
}

/// Normalized coordinate channels (i/Nx, j/Ny) for n samples.
inline Tensor coordinate_grid(int n, int Nx, int Ny, bool enabled) {
    Tensor g(n, 2, Nx, Ny);
    if (!enabled) return g;
    for (int i = 0; i < n; ++i)
        for (int x = 0; x < Nx; ++x)
            for (int y = 0; y < Ny; ++y) {
                g(i, 0, x, y) = static_cast<double>(x) / Nx;
                g(i, 1, x, y) = static_cast<double>(y) / Ny;
            }
    return g;
}

// --- encoder ----------------------------------------------------------------------

struct EncoderCache {
    Tensor x0;                  // lift input (with coordinates)
    std::vector<Tensor> block_in;
    std::vector<SpectralBlockCache> blocks;
    Tensor ca_in;
    AttentionCache ca;
};

class Encoder {
public:
    Conv2d lift;
    std::vector<FactorizedSpectralBlock> spectral;
    std::vector<ConvBlock> conv;
    ChannelAttention ca;

    Encoder() = default;
    Encoder(ParamSet& ps, const std::string& name, const ModelConfig& c) : cfg_(c) {
        const int in = c.time_to_channel ? c.T * c.d_u + 2 : c.d_u + 2;
        const int out = c.time_to_channel ? c.T * c.C_s : c.C_s;
        lift = Conv2d(ps, name + ".lift", in, out, 3, c.r);
        for (int b = 0; b < c.enc_blocks; ++b) {
            const std::string bn = name + ".block" + std::to_string(b);
            if (c.encoder == EncoderKind::spectral)
                spectral.emplace_back(ps, bn, c.C_s, c.nx(), c.ny(), c.nx() / 2, c.ny() / 2);
            else
                conv.emplace_back(ps, bn, c.C_s);
        }
        ca = ChannelAttention(ps, name + ".ca", c.C_s, 4);
    }

    void init(ParamSet& ps, Rng& rng) const {
        lift.init(ps, rng);
        for (const auto& b : spectral) b.init(ps, rng);
        for (const auto& b : conv) b.init(ps, rng);
        ca.init(ps, rng);
    }

    Tensor forward(const ParamSet& ps, const Tensor& u, EncoderCache* cache = nullptr) const {
        const auto& c = cfg_;
        if (u.c() != c.d_u || u.h() != c.Nx || u.w() != c.Ny || u.n() % c.T != 0)
            throw ShapeError("encode: expected frames (B*" + std::to_string(c.T) + ", " + std::to_string(c.d_u) + ", " +
                             std::to_string(c.Nx) + ", " + std::to_string(c.Ny) + "), got " + u.shape().str());
        Tensor x0;
        if (c.time_to_channel) {
            const int B = u.n() / c.T;
            x0 = concat_channels(u.reshaped({B, c.T * c.d_u, c.Nx, c.Ny}), coordinate_grid(B, c.Nx, c.Ny, c.use_coords));
        } else {
            x0 = concat_channels(u, coordinate_grid(u.n(), c.Nx, c.Ny, c.use_coords));
        }
        Tensor h = lift.forward(ps, x0);
        if (c.time_to_channel) h.reshape_inplace({u.n(), c.C_s, c.nx(), c.ny()});
        if (cache) {
            cache->x0 = std::move(x0);
            cache->block_in.clear();
            cache->blocks.assign(nblocks(), {});
        }
        for (int b = 0; b < nblocks(); ++b) {
            if (cache) cache->block_in.push_back(h);
            SpectralBlockCache* bc = cache ? &cache->blocks[b] : nullptr;
            h = spectral.empty() ? conv[b].forward(ps, h, bc) : spectral[b].forward(ps, h, bc);
        }
        Tensor out = ca.forward(ps, h, cache ? &cache->ca : nullptr);
        if (cache) cache->ca_in = std::move(h);
        return out;
    }

    Tensor backward(const ParamSet& ps, const EncoderCache& cache, const Tensor& dh, Grads& g) const {
        const auto& c = cfg_;
        Tensor d = ca.backward(ps, cache.ca_in, cache.ca, dh, g);
        for (int b = nblocks() - 1; b >= 0; --b)
            d = spectral.empty() ? conv[b].backward(ps, cache.block_in[b], cache.blocks[b], d, g)
                                 : spectral[b].backward(ps, cache.block_in[b], cache.blocks[b], d, g);
        const int n = d.n();
        if (c.time_to_channel) d.reshape_inplace({n / c.T, c.T * c.C_s, c.nx(), c.ny()});
        const Tensor dx0 = lift.backward(ps, cache.x0, d, g);
        Tensor du = channel_slice(dx0, 0, dx0.c() - 2);
        if (c.time_to_channel) du.reshape_inplace({n, c.d_u, c.Nx, c.Ny});
        return du;
    }

private:
    ModelConfig cfg_;
    int nblocks() const { return static_cast<int>(spectral.size() + conv.size()); }
};

// --- decoder ----------------------------------------------------------------------

struct DecoderCache {
    Tensor ca_in;
    AttentionCache ca;
    std::vector<Tensor> block_in;
    std::vector<Tensor> block_pre;
    Tensor readout_in;
    Tensor up_in;
};

/// d <- d + gelu(spectral_mix(d) + conv3x3(d)); the spectral branch is absent
/// in the convolutional variant.
struct DecoderBlock {
    FactorizedSpectralBlock spec;
    Conv2d local;
    bool has_spec = true;
};

class Decoder {
public:
    ChannelAttention ca;
    std::vector<DecoderBlock> blocks;
    Conv2d readout;
    Upsample up;

    Decoder() = default;
    Decoder(ParamSet& ps, const std::string& name, const ModelConfig& c) : cfg_(c) {
        ca = ChannelAttention(ps, name + ".ca", c.C_s, 4);
        for (int b = 0; b < c.dec_blocks; ++b) {
            const std::string bn = name + ".block" + std::to_string(b);
            DecoderBlock blk;
            blk.has_spec = c.encoder == EncoderKind::spectral;
            if (blk.has_spec) blk.spec = FactorizedSpectralBlock(ps, bn, c.C_s, c.nx(), c.ny(), c.nx() / 2, c.ny() / 2);
            blk.local = Conv2d(ps, bn + ".local", c.C_s, c.C_s, 3);
            blocks.push_back(std::move(blk));
        }
        readout = Conv2d(ps, name + ".readout", c.C_s, c.r > 1 ? c.C_s : c.d_u, 1);
        if (c.r > 1) up = Upsample(ps, name + ".upsample", c.C_s, c.d_u, c.r);
    }

    void init(ParamSet& ps, Rng& rng) const {
        ca.init(ps, rng);
        for (const auto& b : blocks) {
            if (b.has_spec) b.spec.init(ps, rng);
            b.local.init(ps, rng, 0.5);
        }
        readout.init(ps, rng);
        if (cfg_.r > 1) up.init(ps, rng);
    }

    Tensor forward(const ParamSet& ps, const Tensor& h, DecoderCache* cache = nullptr) const {
        if (h.c() != cfg_.C_s || h.h() != cfg_.nx() || h.w() != cfg_.ny())
            throw ShapeError("decode: expected (*, " + std::to_string(cfg_.C_s) + ", " + std::to_string(cfg_.nx()) +
                             ", " + std::to_string(cfg_.ny()) + "), got " + h.shape().str());
        Tensor d = ca.forward(ps, h, cache ? &cache->ca : nullptr);
        if (cache) {
            cache->ca_in = h;
            cache->block_in.clear();
            cache->block_pre.clear();
        }
        for (const auto& b : blocks) {
            Tensor pre = b.local.forward(ps, d);
            if (b.has_spec) pre += b.spec.mix(ps, d);
            Tensor next = d + gelu(pre);
            if (cache) {
                cache->block_in.push_back(std::move(d));
                cache->block_pre.push_back(std::move(pre));
            }
            d = std::move(next);
        }
        Tensor y = readout.forward(ps, d);
        if (cache) cache->readout_in = std::move(d);
        if (cfg_.r > 1) {
            Tensor out = up.forward(ps, y);
            if (cache) cache->up_in = std::move(y);
            return out;
        }
        return y;
    }

    Tensor backward(const ParamSet& ps, const DecoderCache& cache, const Tensor& dy, Grads& g) const {
        Tensor d = cfg_.r > 1 ? up.backward(ps, cache.up_in, dy, g) : dy;
        d = readout.backward(ps, cache.readout_in, d, g);
        for (int b = static_cast<int>(blocks.size()) - 1; b >= 0; --b) {
            const auto& blk = blocks[b];
            const Tensor& x = cache.block_in[b];
            const Tensor dpre = gelu_backward(cache.block_pre[b], d);
            Tensor dx = d;
            dx += blk.local.backward(ps, x, dpre, g);
            if (blk.has_spec) dx += blk.spec.mix_backward(ps, x, dpre, g);
            d = std::move(dx);
        }
        return ca.backward(ps, cache.ca_in, cache.ca, d, g);
    }

private:
    ModelConfig cfg_;
};

// --- full model ---------------------------------------------------------------------

struct StepCache {
    EncoderCache enc;
    Tensor h;  // encoder output
    Tensor z;  // projected
    PropagateCache prop;
    Tensor zt; // propagated
    Tensor ht; // lifted
    DecoderCache dec;
};

class Model {
public:
    ModelConfig cfg;
    ParamSet params;
    Encoder enc;
    Conv2d proj_P, proj_R;
    Propagator prop;
    Decoder dec;
    /// Test hook: negate the projector's input gradient, producing an
    /// inconsistent adjoint that gradient checks must catch.
    bool fault_flip_projector_adjoint = false;

    Model() = default;
    Model(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
        cfg.validate();
        enc = Encoder(params, "enc", cfg);
        if (cfg.projector) {
            proj_P = Conv2d(params, "proj.P", cfg.C_s, cfg.C_z, 1);
            proj_R = Conv2d(params, "proj.R", cfg.C_z, cfg.C_s, 1);
        }
        prop = Propagator(params, "prop", cfg.propagator());
        dec = Decoder(params, "dec", cfg);
        Rng rng(seed);
        enc.init(params, rng);
        if (cfg.projector) {
            proj_P.init(params, rng);
            proj_R.init(params, rng);
        }
        prop.init(params, rng);
        dec.init(params, rng);
        if (cfg.freeze_backbone) {
            prop.set_identity_backbone(params);
            params.set_trainable(prop.kbar, false);
        }
    }

    Tensor encode(const ParamSet& ps, const Tensor& u, EncoderCache* c = nullptr) const { return enc.forward(ps, u, c); }
    Tensor encode_backward(const ParamSet& ps, const EncoderCache& c, const Tensor& dh, Grads& g) const {
        return enc.backward(ps, c, dh, g);
    }

    Tensor project(const ParamSet& ps, const Tensor& h) const {
        if (h.c() != cfg.C_s) throw ShapeError("project: expected " + std::to_string(cfg.C_s) + " channels");
        return cfg.projector ? proj_P.forward(ps, h) : h;
    }
    Tensor project_backward(const ParamSet& ps, const Tensor& h, const Tensor& dz, Grads& g) const {
        Tensor dh = cfg.projector ? proj_P.backward(ps, h, dz, g) : dz;
        if (fault_flip_projector_adjoint) dh *= -1.0;
        return dh;
    }

    Tensor lift(const ParamSet& ps, const Tensor& z) const {
        if (z.c() != cfg.C_z) throw ShapeError("lift: expected " + std::to_string(cfg.C_z) + " channels");
        return cfg.projector ? proj_R.forward(ps, z) : z;
    }
    Tensor lift_backward(const ParamSet& ps, const Tensor& z, const Tensor& dh, Grads& g) const {
        return cfg.projector ? proj_R.backward(ps, z, dh, g) : dh;
    }

    Tensor propagate(const ParamSet& ps, const Tensor& z, PropagateCache* c = nullptr) const {
        return prop.propagate(ps, z, c);
    }

    Tensor decode(const ParamSet& ps, const Tensor& h, DecoderCache* c = nullptr) const { return dec.forward(ps, h, c); }
    Tensor decode_backward(const ParamSet& ps, const DecoderCache& c, const Tensor& dy, Grads& g) const {
        return dec.backward(ps, c, dy, g);
    }

    /// Everything after the encoder: D(R(Phi(P(h)))).
    Tensor step_from_encoding(const ParamSet& ps, const Tensor& h, StepCache& s) const {
        s.h = h;
        s.z = project(ps, s.h);
        s.zt = propagate(ps, s.z, &s.prop);
        s.ht = lift(ps, s.zt);
        return decode(ps, s.ht, &s.dec);
    }

    /// u_next = D(R(Phi(P(E(u))))).
    Tensor forward_step(const ParamSet& ps, const Tensor& u, StepCache* c = nullptr) const {
        StepCache local;
        StepCache& s = c ? *c : local;
        return step_from_encoding(ps, encode(ps, u, &s.enc), s);
    }
    Tensor forward_step(const Tensor& u) const { return forward_step(params, u); }

    /// Adjoint of step_from_encoding given dL/du_next, an optional extra
    /// gradient on the propagated latent, and the weight of the cached
    /// orthogonality term. Returns dL/dh.
    Tensor step_backward_to_encoding(const ParamSet& ps, const StepCache& c, const Tensor& dy, const Tensor* dzt_extra,
                                     double orth_weight, Grads& g) const {
        const Tensor dht = decode_backward(ps, c.dec, dy, g);
        Tensor dzt = lift_backward(ps, c.zt, dht, g);
        if (dzt_extra) dzt += *dzt_extra;
        const Tensor dz = prop.propagate_backward(ps, c.prop, dzt, orth_weight, g);
        return project_backward(ps, c.h, dz, g);
    }

    /// Adjoint of forward_step. Returns dL/du.
    Tensor forward_step_backward(const ParamSet& ps, const StepCache& c, const Tensor& dy, const Tensor* dzt_extra,
                                 double orth_weight, Grads& g) const {
        return encode_backward(ps, c.enc, step_backward_to_encoding(ps, c, dy, dzt_extra, orth_weight, g), g);
    }

    double normality_penalty(const ParamSet& ps, Grads* g = nullptr) const {
        std::span<double> gs;
        if (g) gs = (*g)[prop.kbar];
        return ssp::normality_penalty(ps[prop.kbar], cfg.C_z, cfg.T, gs);
    }

    int trainable_count() const {
        std::size_t n = 0;
        for (const auto& i : params.infos())
            if (i.trainable) n += i.size;
        return static_cast<int>(n);
    }
};

} // namespace ssp
