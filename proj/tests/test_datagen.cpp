#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

#include "ssp/datagen.hpp"

using namespace ssp;

namespace {

constexpr double kPi = std::numbers::pi;

double grid_x(int i, int n) { return 2.0 * kPi * i / n; }

struct Mode {
    int kx, ky;
    double amp, phase;
};

Tensor cosine_field(const std::vector<Mode>& modes, int nx, int ny, double nu, double t) {
    Tensor f(1, 1, nx, ny);
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j) {
            double v = 0.0;
            for (const auto& m : modes) {
                const double k2 = m.kx * m.kx + m.ky * m.ky;
                v += m.amp * std::exp(-nu * k2 * t) * std::cos(m.kx * grid_x(i, nx) + m.ky * grid_x(j, ny) + m.phase);
            }
            f(0, 0, i, j) = v;
        }
    return f;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "ssp_test_datagen";
    std::filesystem::create_directories(dir);
    return dir / name;
}

// Scalar FitzHugh-Nagumo ODE by classical RK4.
std::pair<double, double> fhn_rk4(double u, double v, double k_r, double T, int steps) {
    const double h = T / steps;
    auto f = [&](double a, double b) { return fhn_reaction(a, b, k_r); };
    for (int n = 0; n < steps; ++n) {
        const auto [a1, b1] = f(u, v);
        const auto [a2, b2] = f(u + 0.5 * h * a1, v + 0.5 * h * b1);
        const auto [a3, b3] = f(u + 0.5 * h * a2, v + 0.5 * h * b2);
        const auto [a4, b4] = f(u + h * a3, v + h * b3);
        u += h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4);
        v += h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4);
    }
    return {u, v};
}

} // namespace

TEST(InitialCondition, DeterministicAndNormalized) {
    const Tensor a = random_initial_condition(42, 32, 32, 2, 2.0);
    const Tensor b = random_initial_condition(42, 32, 32, 2, 2.0);
    EXPECT_EQ(a, b);
    for (int ch = 0; ch < 2; ++ch) {
        double mean = 0.0, mx = 0.0;
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) {
                mean += a(0, ch, i, j);
                mx = std::max(mx, std::abs(a(0, ch, i, j)));
            }
        EXPECT_NEAR(mean / 1024.0, 0.0, 1e-14);
        EXPECT_NEAR(mx, 1.0, 1e-14);
    }
}

TEST(InitialCondition, DifferentSeedsDiffer) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Tensor a = random_initial_condition(s, 32, 32, 1, 2.0);
        const Tensor b = random_initial_condition(s + 1, 32, 32, 1, 2.0);
        EXPECT_GT(std::sqrt(sq_norm(a - b)), 0.1);
    }
}

TEST(InitialCondition, SteepDecayConcentratesEnergyAtLowK) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor f = random_initial_condition(seed, 32, 32, 1, 8.0);
        const auto s = fft2(f);
        double total = 0.0, high = 0.0;
        for (int r = 0; r < 32; ++r)
            for (int ky = 0; ky < 17; ++ky) {
                const double kx = signed_freq(r, 32);
                const double e = column_weight(ky, 32) * std::norm(s.data(0, 0, r, ky));
                total += e;
                if (std::hypot(kx, static_cast<double>(ky)) > 8.0) high += e;
            }
        EXPECT_LT(high, 1e-3 * total);
    }
}

TEST(InitialCondition, RejectsBadArguments) {
    EXPECT_THROW(random_initial_condition(0, 32, 32, 1, 0.0), ConfigError);
    EXPECT_THROW(random_initial_condition(0, 31, 32, 1, 2.0), ConfigError);
}

TEST(ExactLinearStep, SingleHeatModeDecays) {
    PDESpec spec = PDESpec::heat();
    spec.nu = {0.1};
    const Tensor u0 = cosine_field({{1, 0, 1.0, 0.0}}, 32, 32, 0.0, 0.0);
    const Tensor u1 = exact_linear_step(u0, spec, 0.5);
    EXPECT_LT(max_abs_diff(u1, std::exp(-0.05) * u0), 1e-14);
}

TEST(ExactLinearStep, ZeroStepIsIdentity) {
    const Tensor u0 = random_initial_condition(3, 16, 16, 1, 2.0);
    EXPECT_EQ(exact_linear_step(u0, PDESpec::advection_diffusion(), 0.0), u0);
}

TEST(ExactLinearStep, HeatMatchesClosedFormOver50Steps) {
    const double nu = 0.05, dt = 0.05;
    const std::vector<Mode> modes = {{1, 0, 1.0, 0.3},  {0, 2, 0.5, -1.0}, {3, -4, 0.25, 2.0},
                                     {-5, 7, 0.1, 0.7}, {16, 1, 0.05, 0.0}, {2, 16, 0.05, 0.0}};
    PDESpec spec = PDESpec::heat();
    spec.nu = {nu};
    Tensor u = cosine_field(modes, 32, 32, nu, 0.0);
    double worst = 0.0;
    for (int n = 1; n <= 50; ++n) {
        u = exact_linear_step(u, spec, dt);
        worst = std::max(worst, max_abs_diff(u, cosine_field(modes, 32, 32, nu, n * dt)));
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(ExactLinearStep, PureAdvectionFullPeriodRecoversInitialField) {
    PDESpec spec = PDESpec::advection_diffusion();
    spec.nu = {0.0};
    spec.cx = 1.0;
    spec.cy = 0.5;
    // Over t = 4 pi the shift is (4 pi, 2 pi): whole periods along both axes.
    const int steps = 200;
    const double dt = 4.0 * kPi / steps;
    const Tensor u0 = random_initial_condition(5, 32, 32, 1, 1.5);
    Tensor u = u0;
    for (int n = 0; n < steps; ++n) u = exact_linear_step(u, spec, dt);
    EXPECT_LT(max_abs_diff(u, u0), 1e-10);
}

TEST(ExactLinearStep, AdvectionByWholeCellsIsTranslation) {
    PDESpec spec = PDESpec::advection_diffusion();
    spec.nu = {0.0};
    spec.cx = 1.0;
    spec.cy = -2.0;
    // Shift of (3, -2) cells on a band-limited field (no Nyquist content).
    SpectralField<double> s = fft2(random_initial_condition(6, 32, 32, 1, 2.0));
    for (int r = 0; r < 32; ++r) s.data(0, 0, r, 16) = 0.0;
    for (int ky = 0; ky < 17; ++ky) s.data(0, 0, 16, ky) = 0.0;
    const Tensor u0 = ifft2(s);
    const Tensor u1 = exact_linear_step(u0, spec, 2.0 * kPi * 3.0 / 32.0);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) EXPECT_NEAR(u1(0, 0, (i + 3) % 32, (j + 26) % 32), u0(0, 0, i, j), 1e-12);
}

TEST(ExactLinearStep, AdvectionPreservesShellEnergy) {
    PDESpec spec = PDESpec::advection_diffusion();
    spec.nu = {0.0};
    spec.cx = 0.37;
    spec.cy = -1.21;
    const Tensor u0 = random_initial_condition(7, 32, 32, 1, 1.0);
    const Tensor u1 = exact_linear_step(u0, spec, 0.83);
    auto shells = [](const Tensor& u) {
        const auto s = fft2(u);
        std::map<int, double> e;
        for (int r = 0; r < 32; ++r)
            for (int ky = 0; ky < 17; ++ky) {
                const int kx = signed_freq(r, 32);
                e[kx * kx + ky * ky] += column_weight(ky, 32) * std::norm(s.data(0, 0, r, ky));
            }
        return e;
    };
    const auto a = shells(u0), b = shells(u1);
    for (const auto& [k2, e] : a) EXPECT_NEAR(b.at(k2), e, 1e-10 * (1.0 + e)) << "shell |k|^2=" << k2;
}

TEST(ExactLinearStep, RejectsNonlinearKind) {
    EXPECT_THROW(exact_linear_step(Tensor(1, 2, 8, 8), PDESpec::reaction_diffusion(), 0.1), UnsupportedKindError);
}

TEST(ReactionDiffusion, WithoutReactionIsHeatPerChannel) {
    PDESpec rd = PDESpec::reaction_diffusion();
    rd.reaction_scale = 0.0;
    rd.D_u = 0.02;
    rd.D_v = 0.07;
    PDESpec heat = PDESpec::heat();
    heat.nu = {rd.D_u, rd.D_v};
    const Tensor u0 = random_initial_condition(8, 32, 32, 2, 2.0);
    EXPECT_LT(max_abs_diff(reaction_diffusion_step(u0, rd), exact_linear_step(u0, heat, rd.dt)), 1e-12);
}

TEST(ReactionDiffusion, ConstantStateFollowsOde) {
    PDESpec spec = PDESpec::reaction_diffusion();
    spec.dt = 1e-4;
    const double u0 = 0.6, v0 = -0.2;
    Tensor s(1, 2, 16, 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            s(0, 0, i, j) = u0;
            s(0, 1, i, j) = v0;
        }
    double eu = u0, ev = v0;
    for (int n = 0; n < 100; ++n) {
        s = reaction_diffusion_step(s, spec);
        const auto [ru, rv] = fhn_reaction(eu, ev, spec.k_r);
        eu += spec.dt * ru;
        ev += spec.dt * rv;
    }
    const auto [ou, ov] = fhn_rk4(u0, v0, spec.k_r, 100 * spec.dt, 100000);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            EXPECT_NEAR(s(0, 0, i, j), ou, 1e-6);
            EXPECT_NEAR(s(0, 1, i, j), ov, 1e-6);
            // Diffusion leaves a constant field untouched, so the step is the Euler map exactly.
            EXPECT_NEAR(s(0, 0, i, j), eu, 1e-12);
            EXPECT_NEAR(s(0, 1, i, j), ev, 1e-12);
        }
}

TEST(ReactionDiffusion, FirstOrderSelfConvergence) {
    PDESpec spec = PDESpec::reaction_diffusion();
    spec.D_u = 0.01;
    spec.D_v = 0.05;
    const Tensor u0 = random_initial_condition(9, 32, 32, 2, 2.0);
    auto frame = [&](int refine) {
        PDESpec s = spec;
        s.dt = spec.dt / refine;
        s.substeps = spec.substeps * refine;
        return advance_frame(u0, s);
    };
    const Tensor f1 = frame(1), f2 = frame(2), f4 = frame(4);
    const double ratio = std::sqrt(sq_norm(f1 - f2) / sq_norm(f2 - f4));
    EXPECT_GE(ratio, 1.7);
    EXPECT_LE(ratio, 2.3);
}

TEST(ReactionDiffusion, Errors) {
    const PDESpec spec = PDESpec::reaction_diffusion();
    EXPECT_THROW(reaction_diffusion_step(Tensor(1, 1, 8, 8), spec), ShapeError);
    EXPECT_THROW(reaction_diffusion_step(Tensor(1, 2, 8, 8), PDESpec::heat()), UnsupportedKindError);
    Tensor blow(1, 2, 8, 8, 1e200);
    try {
        reaction_diffusion_step(blow, spec);
        FAIL() << "expected a divergence error";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("dt="), std::string::npos);
    }
}

TEST(PdeSpec, Validation) {
    PDESpec s = PDESpec::heat();
    s.nu = {-0.1};
    EXPECT_THROW(s.validate(), ConfigError);
    s = PDESpec::heat();
    s.dt = 0.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = PDESpec::reaction_diffusion();
    s.D_v = -1.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = PDESpec::reaction_diffusion();
    s.dt = reaction_dt_bound();
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_NO_THROW(PDESpec::reaction_diffusion().validate());
    EXPECT_NO_THROW(PDESpec::advection_diffusion().validate());
}

TEST(Dataset, RoundTripsThroughLoaderBitwise) {
    GenOptions opt;
    opt.n_train = 1;
    opt.n_test = 1;
    opt.L_total = 20;
    const auto path = temp_path("heat_rt.sspd");
    const Dataset d = generate_dataset(PDESpec::heat(), opt, path);
    const Dataset e = load_dataset(path);
    EXPECT_EQ(e.spec, d.spec);
    EXPECT_EQ(e.nx, 32);
    EXPECT_EQ(e.L_total, 20);
    ASSERT_EQ(e.size(), 2);
    for (int i = 0; i < 2; ++i) {
        EXPECT_EQ(e.trajectories[i].states, d.trajectories[i].states);
        EXPECT_EQ(e.trajectories[i].seed, d.trajectories[i].seed);
        EXPECT_EQ(e.trajectories[i].split, d.trajectories[i].split);
    }
    EXPECT_EQ(serialize_dataset(e), serialize_dataset(d));
}

TEST(Dataset, RegenerationIsByteIdenticalAndThreadIndependent) {
    GenOptions opt;
    opt.n_train = 3;
    opt.n_test = 2;
    opt.L_total = 6;
    opt.seed_base = 77;
    const PDESpec spec = PDESpec::reaction_diffusion();
    set_threads(1);
    const auto a = temp_path("rd_a.sspd"), b = temp_path("rd_b.sspd");
    generate_dataset(spec, opt, a);
    set_threads(3);
    generate_dataset(spec, opt, b);
    set_threads(1);
    EXPECT_EQ(file_crc32(a), file_crc32(b));
    EXPECT_EQ(read_file(a), read_file(b));
}

TEST(Dataset, TrainAndTestSeedsDisjoint) {
    GenOptions opt;
    opt.n_train = 4;
    opt.n_test = 3;
    opt.L_total = 2;
    opt.nx = opt.ny = 8;
    const Dataset d = generate_dataset(PDESpec::heat(), opt);
    std::set<std::uint64_t> train, test;
    for (int i : d.indices(Split::train)) train.insert(d.trajectories[i].seed);
    for (int i : d.indices(Split::test)) test.insert(d.trajectories[i].seed);
    EXPECT_EQ(train.size(), 4u);
    EXPECT_EQ(test.size(), 3u);
    for (auto s : test) EXPECT_FALSE(train.count(s));
}

TEST(Dataset, HeatVarianceNonIncreasing) {
    GenOptions opt;
    opt.n_train = 2;
    opt.n_test = 0;
    opt.L_total = 20;
    const Dataset d = generate_dataset(PDESpec::heat(), opt);
    for (const auto& t : d.trajectories) {
        double prev = INFINITY;
        for (int n = 0; n < t.length(); ++n) {
            const Tensor f = t.frames(n, 1);
            double mean = 0.0, var = 0.0;
            for (double v : f.vec()) mean += v;
            mean /= static_cast<double>(f.size());
            for (double v : f.vec()) var += (v - mean) * (v - mean);
            EXPECT_LE(var, prev + 1e-12);
            prev = var;
        }
    }
}

TEST(Dataset, LoaderRejectsUnknownVersionAndTruncation) {
    GenOptions opt;
    opt.n_train = 1;
    opt.n_test = 0;
    opt.L_total = 2;
    opt.nx = opt.ny = 8;
    auto bytes = serialize_dataset(generate_dataset(PDESpec::heat(), opt));
    const auto good = temp_path("good.sspd");
    write_file_atomic(good, bytes);
    EXPECT_NO_THROW(load_dataset(good));

    auto v2 = bytes;
    v2[4] = 2;
    const auto p2 = temp_path("v2.sspd");
    write_file_atomic(p2, v2);
    EXPECT_THROW(load_dataset(p2), IoError);

    auto cut = bytes;
    cut.resize(cut.size() - 8);
    const auto p3 = temp_path("cut.sspd");
    write_file_atomic(p3, cut);
    EXPECT_THROW(load_dataset(p3), IoError);

    auto bad = bytes;
    bad[0] = 'X';
    const auto p4 = temp_path("magic.sspd");
    write_file_atomic(p4, bad);
    EXPECT_THROW(load_dataset(p4), IoError);

    EXPECT_THROW(load_dataset(temp_path("does_not_exist.sspd")), IoError);
}

TEST(Dataset, ConsecutiveFramesAreExactlySubstepsApart) {
    PDESpec spec = PDESpec::reaction_diffusion();
    const Trajectory t = generate_trajectory(spec, 3, 16, 16, 4);
    for (int n = 0; n + 1 < 4; ++n) EXPECT_EQ(advance_frame(t.frames(n, 1), spec), t.frames(n + 1, 1));
    EXPECT_TRUE(all_finite(t.states));
}
