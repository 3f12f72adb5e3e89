#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "ssp/fft.hpp"
#include "ssp/io.hpp"
#include "ssp/parallel.hpp"
#include "ssp/random.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

enum class PdeKind { heat, advection_diffusion, reaction_diffusion };

inline std::string to_string(PdeKind k) {
    switch (k) {
    case PdeKind::heat: return "heat";
    case PdeKind::advection_diffusion: return "advection-diffusion";
    case PdeKind::reaction_diffusion: return "reaction-diffusion";
    }
    return "?";
}

inline PdeKind parse_pde_kind(const std::string& s) {
    if (s == "heat") return PdeKind::heat;
    if (s == "advection-diffusion") return PdeKind::advection_diffusion;
    if (s == "reaction-diffusion") return PdeKind::reaction_diffusion;
    throw ConfigError("unknown PDE kind '" + s + "' (expected heat, advection-diffusion or reaction-diffusion)");
}

/// Largest |u| the reaction step is expected to see; the explicit Euler
/// stability bound below is derived for states within [-u_max, u_max].
inline constexpr double kReactionStateBound = 2.0;

/// Explicit Euler on the FitzHugh-Nagumo reaction Jacobian
/// [[1 - 3u^2, -1], [1, -1]] stays stable for dt < 2 / (3 u_max^2 + 2).
inline double reaction_dt_bound() { return 2.0 / (3.0 * kReactionStateBound * kReactionStateBound + 2.0); }

/// Periodic 2D PDE on [0, 2pi)^2 with integer wavenumbers.
struct PDESpec {
    PdeKind kind = PdeKind::heat;
    /// Per-channel diffusivity for the linear kinds; one value is broadcast.
    std::vector<double> nu{0.05};
    double cx = 0.0, cy = 0.0;
    /// FitzHugh-Nagumo parameters.
    double k_r = 5e-3, D_u = 1e-3, D_v = 5e-3;
    /// Solver step and solver steps per saved frame.
    double dt = 0.05;
    int substeps = 1;
    /// Spectral slope of random initial conditions.
    double decay = 2.0;
    /// Multiplies the reaction term. 1 in normal use; 0 reduces the reaction
    /// step to pure per-channel diffusion.
    double reaction_scale = 1.0;

    int channels() const {
        if (kind == PdeKind::reaction_diffusion) return 2;
        return static_cast<int>(nu.size());
    }
    double frame_dt() const { return dt * substeps; }

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("pde: dt must be positive");
        if (substeps < 1) throw ConfigError("pde: substeps must be at least 1");
        if (!(decay > 0.0)) throw ConfigError("pde: decay must be positive");
        if (kind == PdeKind::reaction_diffusion) {
            if (!(D_u >= 0.0) || !(D_v >= 0.0)) throw ConfigError("pde: D_u and D_v must be nonnegative");
            if (!std::isfinite(k_r)) throw ConfigError("pde: k_r must be finite");
            if (dt >= reaction_dt_bound())
                throw ConfigError("pde: dt = " + fmt_double(dt) + " violates the reaction stability bound dt < " +
                                  fmt_double(reaction_dt_bound()));
        } else {
            if (nu.empty()) throw ConfigError("pde: nu must list at least one diffusivity");
            for (double v : nu)
                if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("pde: nu must be nonnegative");
            if (!std::isfinite(cx) || !std::isfinite(cy)) throw ConfigError("pde: advection velocity must be finite");
            if (kind == PdeKind::heat && (cx != 0.0 || cy != 0.0))
                throw ConfigError("pde: heat has no advection velocity; use advection-diffusion");
        }
    }

    static PDESpec heat() {
        PDESpec s;
        s.kind = PdeKind::heat;
        s.nu = {0.05};
        return s;
    }
    static PDESpec advection_diffusion() {
        PDESpec s;
        s.kind = PdeKind::advection_diffusion;
        s.nu = {0.01};
        s.cx = 1.0;
        s.cy = 0.5;
        return s;
    }
    static PDESpec reaction_diffusion() {
        PDESpec s;
        s.kind = PdeKind::reaction_diffusion;
        s.dt = 5e-3;
        s.substeps = 10;
        return s;
    }
    static PDESpec defaults(PdeKind k) {
        switch (k) {
        case PdeKind::heat: return heat();
        case PdeKind::advection_diffusion: return advection_diffusion();
        case PdeKind::reaction_diffusion: return reaction_diffusion();
        }
        return heat();
    }

    friend bool operator==(const PDESpec&, const PDESpec&) = default;
};

inline void write_pde(const PDESpec& s, IniSection& sec) {
    sec.set("kind", to_string(s.kind));
    std::string nu;
    for (std::size_t i = 0; i < s.nu.size(); ++i) nu += (i ? "," : "") + fmt_double(s.nu[i]);
    sec.set("nu", nu);
    sec.set("cx", fmt_double(s.cx));
    sec.set("cy", fmt_double(s.cy));
    sec.set("k_r", fmt_double(s.k_r));
    sec.set("D_u", fmt_double(s.D_u));
    sec.set("D_v", fmt_double(s.D_v));
    sec.set("dt", fmt_double(s.dt));
    sec.set("substeps", std::to_string(s.substeps));
    sec.set("decay", fmt_double(s.decay));
    sec.set("reaction_scale", fmt_double(s.reaction_scale));
}

/// Read a PDE section. Keys absent from the section take the defaults of the
/// selected kind, except dt and nu which must be given explicitly when
/// `require_physics` is set.
inline PDESpec read_pde(SectionReader& r, bool require_physics) {
    const PdeKind kind = parse_pde_kind(r.str("kind"));
    PDESpec s = PDESpec::defaults(kind);
    if (require_physics) {
        s.dt = r.num("dt");
        if (kind != PdeKind::reaction_diffusion) {
            if (!r.has("nu")) r.str("nu");
        }
    } else {
        s.dt = r.num("dt", s.dt);
    }
    s.nu = r.nums("nu", s.nu);
    s.cx = r.num("cx", s.cx);
    s.cy = r.num("cy", s.cy);
    s.k_r = r.num("k_r", s.k_r);
    s.D_u = r.num("D_u", s.D_u);
    s.D_v = r.num("D_v", s.D_v);
    s.substeps = static_cast<int>(r.integer("substeps", s.substeps));
    s.decay = r.num("decay", s.decay);
    s.reaction_scale = r.num("reaction_scale", s.reaction_scale);
    s.validate();
    return s;
}

// --- solvers -------------------------------------------------------------------

/// Linear symbol a(k) with du/dt = a(k) u per Fourier mode. The advection part
/// is odd in k and has no consistent value on a Nyquist index (the mode is its
/// own conjugate partner), so it is taken as zero there.
inline cplx linear_symbol(const PDESpec& s, int channel, int kx, int ky, int nx, int ny) {
    const double nu = s.nu.size() == 1 ? s.nu[0] : s.nu.at(channel);
    const double k2 = static_cast<double>(kx) * kx + static_cast<double>(ky) * ky;
    const double ax = (2 * std::abs(kx) == nx) ? 0.0 : kx;
    const double ay = (2 * std::abs(ky) == ny) ? 0.0 : ky;
    return {-nu * k2, -(s.cx * ax + s.cy * ay)};
}

/// Advance a linear constant-coefficient PDE by dt exactly:
/// u_hat(k, t + dt) = exp(dt a(k)) u_hat(k, t).
inline Tensor exact_linear_step(const Tensor& state, const PDESpec& spec, double dt) {
    if (spec.kind == PdeKind::reaction_diffusion)
        throw UnsupportedKindError("exact_linear_step: " + to_string(spec.kind) + " is not linear");
    if (spec.nu.size() != 1 && static_cast<int>(spec.nu.size()) != state.c())
        throw ShapeError("exact_linear_step: nu has " + std::to_string(spec.nu.size()) + " entries for " +
                         std::to_string(state.c()) + " channels");
    if (dt == 0.0) return state;
    auto s = fft2(state);
    const int nx = s.nx, ny = s.ny, nh = s.ny_half();
    for (int ch = 0; ch < state.c(); ++ch)
        for (int r = 0; r < nx; ++r) {
            const int kx = signed_freq(r, nx);
            for (int ky = 0; ky < nh; ++ky) {
                const cplx f = std::exp(dt * linear_symbol(spec, ch, kx, ky, nx, ny));
                for (int i = 0; i < state.n(); ++i) s.data(i, ch, r, ky) *= f;
            }
        }
    return ifft2(s);
}

/// FitzHugh-Nagumo reaction terms (R_u, R_v).
inline std::pair<double, double> fhn_reaction(double u, double v, double k_r) {
    return {u - u * u * u - k_r - v, u - v};
}

/// One IMEX step of two-channel reaction-diffusion:
/// u_hat <- exp(-D |k|^2 dt) (u_hat + dt R_hat), reaction by explicit Euler.
inline Tensor reaction_diffusion_step(const Tensor& state, const PDESpec& spec) {
    if (spec.kind != PdeKind::reaction_diffusion)
        throw UnsupportedKindError("reaction_diffusion_step: spec kind is " + to_string(spec.kind));
    if (state.c() != 2)
        throw ShapeError("reaction_diffusion_step: expected 2 channels (u, v), got " + std::to_string(state.c()));
    const double dt = spec.dt;
    Tensor w = state;
    const std::size_t plane = state.shape().plane();
    for (int i = 0; i < state.n(); ++i) {
        const double* u = state.plane(i, 0);
        const double* v = state.plane(i, 1);
        double* wu = w.plane(i, 0);
        double* wv = w.plane(i, 1);
        for (std::size_t p = 0; p < plane; ++p) {
            const auto [ru, rv] = fhn_reaction(u[p], v[p], spec.k_r);
            wu[p] += dt * spec.reaction_scale * ru;
            wv[p] += dt * spec.reaction_scale * rv;
        }
    }
    auto s = fft2(w);
    const int nx = s.nx, nh = s.ny_half();
    for (int ch = 0; ch < 2; ++ch) {
        const double D = ch == 0 ? spec.D_u : spec.D_v;
        for (int r = 0; r < nx; ++r) {
            const double kx = signed_freq(r, nx);
            for (int ky = 0; ky < nh; ++ky) {
                const double f = std::exp(-D * (kx * kx + static_cast<double>(ky) * ky) * dt);
                for (int i = 0; i < state.n(); ++i) s.data(i, ch, r, ky) *= f;
            }
        }
    }
    Tensor out = ifft2(s);
    if (!all_finite(out))
        throw DivergenceError("reaction_diffusion_step produced non-finite values (dt=" + fmt_double(dt) +
                              ", D_u=" + fmt_double(spec.D_u) + ", D_v=" + fmt_double(spec.D_v) +
                              ", k_r=" + fmt_double(spec.k_r) + "); reduce dt");
    return out;
}

/// Advance one saved frame: `substeps` solver steps of size dt.
inline Tensor advance_frame(const Tensor& state, const PDESpec& spec) {
    Tensor s = state;
    for (int k = 0; k < spec.substeps; ++k)
        s = spec.kind == PdeKind::reaction_diffusion ? reaction_diffusion_step(s, spec)
                                                     : exact_linear_step(s, spec, spec.dt);
    return s;
}

/// Random smooth periodic field of shape (1, channels, nx, ny): spectral
/// magnitudes (1 + |k|)^-decay with uniform phases, then zero mean and unit
/// max-abs per channel.
inline Tensor random_initial_condition(std::uint64_t seed, int nx, int ny, int channels, double decay) {
    if (!(decay > 0.0)) throw ConfigError("random_initial_condition: decay must be positive");
    if (channels < 1) throw ShapeError("random_initial_condition: channels must be positive");
    check_grid_dims(nx, ny);
    Rng rng(seed);
    SpectralField<double> s{CTensor(1, channels, nx, ny / 2 + 1), nx, ny};
    for (int ch = 0; ch < channels; ++ch)
        for (int r = 0; r < nx; ++r) {
            const double kx = signed_freq(r, nx);
            for (int ky = 0; ky < s.ny_half(); ++ky) {
                const double mag = std::pow(1.0 + std::hypot(kx, static_cast<double>(ky)), -decay);
                const double ph = 2.0 * std::numbers::pi * rng.uniform();
                if (r == 0 && ky == 0) continue;
                s.data(0, ch, r, ky) = std::polar(mag, ph);
            }
        }
    Tensor f = ifft2(s);
    const std::size_t plane = f.shape().plane();
    for (int ch = 0; ch < channels; ++ch) {
        double* p = f.plane(0, ch);
        double mean = 0.0;
        for (std::size_t k = 0; k < plane; ++k) mean += p[k];
        mean /= static_cast<double>(plane);
        double mx = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
            p[k] -= mean;
            mx = std::max(mx, std::abs(p[k]));
        }
        if (mx > 0.0)
            for (std::size_t k = 0; k < plane; ++k) p[k] /= mx;
    }
    return f;
}

// --- datasets ------------------------------------------------------------------

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct Trajectory {
    Tensor states; // (L_total, d_u, nx, ny)
    std::uint64_t seed = 0;
    Split split = Split::train;

    int length() const { return states.n(); }
    /// Frames [first, first + count) as a (count, d_u, nx, ny) tensor.
    Tensor frames(int first, int count) const { return states.slice(first, count); }
};

struct Dataset {
    PDESpec spec;
    int nx = 0, ny = 0, L_total = 0;
    std::uint64_t seed_base = 0;
    std::vector<Trajectory> trajectories;

    int d_u() const { return spec.channels(); }
    int size() const { return static_cast<int>(trajectories.size()); }
    std::vector<int> indices(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < size(); ++i)
            if (trajectories[i].split == s) out.push_back(i);
        return out;
    }
};

struct GenOptions {
    int n_train = 50;
    int n_test = 10;
    int L_total = 100;
    int nx = 32, ny = 32;
    std::uint64_t seed_base = 0;

    bool operator==(const GenOptions&) const = default;
};

inline Trajectory generate_trajectory(const PDESpec& spec, std::uint64_t seed, int nx, int ny, int L_total) {
    if (L_total < 1) throw ConfigError("trajectory length must be positive");
    Trajectory t;
    t.seed = seed;
    t.states = Tensor(L_total, spec.channels(), nx, ny);
    Tensor s = random_initial_condition(seed, nx, ny, spec.channels(), spec.decay);
    t.states.set_slice(0, s);
    for (int n = 1; n < L_total; ++n) {
        s = advance_frame(s, spec);
        t.states.set_slice(n, s);
    }
    return t;
}

/// Train trajectory i uses seed seed_base + i; test trajectory j uses
/// seed_base + n_train + j, so the two seed sets never overlap.
inline Dataset generate_dataset(const PDESpec& spec, const GenOptions& opt) {
    spec.validate();
    check_grid_dims(opt.nx, opt.ny);
    if (opt.n_train < 0 || opt.n_test < 0 || opt.n_train + opt.n_test < 1)
        throw ConfigError("dataset must contain at least one trajectory");
    Dataset d;
    d.spec = spec;
    d.nx = opt.nx;
    d.ny = opt.ny;
    d.L_total = opt.L_total;
    d.seed_base = opt.seed_base;
    const int n = opt.n_train + opt.n_test;
    d.trajectories.resize(n);
    parallel_for(n, [&](int i) {
        d.trajectories[i] = generate_trajectory(spec, opt.seed_base + static_cast<std::uint64_t>(i), opt.nx, opt.ny,
                                                opt.L_total);
        d.trajectories[i].split = i < opt.n_train ? Split::train : Split::test;
    });
    return d;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<char> serialize_dataset(const Dataset& d) {
    IniDoc meta;
    write_pde(d.spec, meta.section("pde"));
    auto& ds = meta.section("dataset");
    ds.set("nx", std::to_string(d.nx));
    ds.set("ny", std::to_string(d.ny));
    ds.set("n_traj", std::to_string(d.size()));
    ds.set("L_total", std::to_string(d.L_total));
    ds.set("d_u", std::to_string(d.d_u()));
    ds.set("seed_base", std::to_string(d.seed_base));
    std::string seeds, splits;
    for (int i = 0; i < d.size(); ++i) {
        seeds += (i ? "," : "") + std::to_string(d.trajectories[i].seed);
        splits += (i ? "," : "") + to_string(d.trajectories[i].split);
    }
    ds.set("seeds", seeds);
    ds.set("splits", splits);
    const std::string text = write_ini(meta);

    BinaryWriter w;
    write_header(w, "SSPD", kDatasetVersion);
    w.put<std::uint64_t>(text.size());
    w.str(text);
    for (const auto& t : d.trajectories) {
        if (t.states.shape() != Shape4{d.L_total, d.d_u(), d.nx, d.ny})
            throw ShapeError("trajectory shape " + t.states.shape().str() + " does not match dataset metadata");
        w.f64_array(t.states.data(), t.states.size());
    }
    return w.buffer();
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_dataset(d));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    BinaryReader r(read_file(path), path.string());
    read_header(r, "SSPD", kDatasetVersion);
    const auto meta_len = r.get<std::uint64_t>();
    if (meta_len > r.remaining()) throw IoError(path.string() + ": metadata length exceeds file size");
    const IniDoc meta = parse_ini(r.str(meta_len), path.string() + " metadata");

    Dataset d;
    try {
        SectionReader pr(meta.find("pde"), "pde", path.string());
        d.spec = read_pde(pr, false);
        pr.finish();
        SectionReader dr(meta.find("dataset"), "dataset", path.string());
        d.nx = static_cast<int>(dr.integer("nx"));
        d.ny = static_cast<int>(dr.integer("ny"));
        const int n = static_cast<int>(dr.integer("n_traj"));
        d.L_total = static_cast<int>(dr.integer("L_total"));
        const int du = static_cast<int>(dr.integer("d_u"));
        d.seed_base = dr.u64("seed_base", 0);
        const auto seeds = split(dr.str("seeds"), ',');
        const auto splits = split(dr.str("splits"), ',');
        dr.finish();
        check_grid_dims(d.nx, d.ny);
        if (du != d.spec.channels()) throw IoError("d_u does not match the PDE channel count");
        if (n < 0 || d.L_total < 1 || static_cast<int>(seeds.size()) != n || static_cast<int>(splits.size()) != n)
            throw IoError("inconsistent trajectory count");
        const std::size_t per = static_cast<std::size_t>(d.L_total) * du * d.nx * d.ny;
        if (r.remaining() != per * n * sizeof(double)) throw IoError("payload size does not match metadata");
        d.trajectories.resize(n);
        for (int i = 0; i < n; ++i) {
            auto& t = d.trajectories[i];
            if (!parse_uint64(seeds[i], t.seed)) throw IoError("bad seed '" + seeds[i] + "'");
            if (splits[i] == "train")
                t.split = Split::train;
            else if (splits[i] == "test")
                t.split = Split::test;
            else
                throw IoError("bad split tag '" + splits[i] + "'");
            t.states = Tensor(d.L_total, du, d.nx, d.ny);
            r.f64_array(t.states.data(), t.states.size());
        }
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw IoError(path.string() + ": bad metadata: " + e.what());
    }
    return d;
}

/// Generate, write to `out_path`, and return the dataset.
inline Dataset generate_dataset(const PDESpec& spec, const GenOptions& opt, const std::filesystem::path& out_path) {
    Dataset d = generate_dataset(spec, opt);
    save_dataset(d, out_path);
    return d;
}

} // namespace ssp
