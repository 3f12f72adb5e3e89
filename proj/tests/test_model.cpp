#include <gtest/gtest.h>

#include <Eigen/SVD>

#include "ssp/model.hpp"
#include "test_util.hpp"

using namespace ssp;
using ssp::testing::check_layer;
using ssp::testing::perturb_all;
using ssp::testing::random_ctensor;
using ssp::testing::random_tensor;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.d_u = 1;
    c.C_s = 4;
    c.C_z = 2;
    c.T = 3;
    c.Nx = c.Ny = 8;
    c.mx = 4;
    c.my = 3;
    c.n_sub = 2;
    c.dtau = 0.5;
    c.gate_hidden = 6;
    return c;
}

CTensor random_block(const Propagator& p, int B, std::uint64_t seed) {
    return random_ctensor({B * p.cfg.T, p.cfg.C, p.modes.mx, p.modes.my}, seed);
}

} // namespace

// --- gate -------------------------------------------------------------------------

TEST(Gate, ZeroOutputLayerGivesUnitGates) {
    Model m(small_config(), 1);
    for (int kx = -3; kx <= 3; ++kx)
        for (int ky = 0; ky < 4; ++ky)
            for (double g : m.prop.gate(m.params, kx, ky)) EXPECT_EQ(g, 1.0);
}

TEST(Gate, BoundedForAnyParameters) {
    ModelConfig c = small_config();
    c.beta = 0.5;
    Model m(c, 2);
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        perturb_all(m.params, 100 + trial, 5.0);
        for (int probe = 0; probe < 1000; ++probe) {
            const int kx = static_cast<int>(rng.below(41)) - 20;
            const int ky = static_cast<int>(rng.below(21));
            for (double g : m.prop.gate(m.params, kx, ky)) {
                EXPECT_GE(g, 0.5);
                EXPECT_LE(g, 1.5);
            }
        }
    }
}

TEST(Gate, DependsOnlyOnFeatures) {
    Model m(small_config(), 4);
    perturb_all(m.params, 5, 1.0);
    // (0, 0) and (0, 0) via different call paths, and (3, 4) vs itself after other calls.
    const auto a = m.prop.gate(m.params, 3, 4);
    m.prop.gate(m.params, -2, 1);
    EXPECT_EQ(a, m.prop.gate(m.params, 3, 4));
    const auto gates = m.prop.retained_gates(m.params);
    const auto direct = m.prop.gate(m.params, m.prop.modes.kx(2), m.prop.modes.ky(1));
    for (int l = 0; l < m.cfg.C_z; ++l) EXPECT_DOUBLE_EQ(gates.gate(2 * m.prop.modes.my + 1, l), direct[l]);
}

// --- backbone ----------------------------------------------------------------------

TEST(Backbone, IdentityMatricesAndNeutralGatesAreIdentity) {
    Model m(small_config(), 6);
    m.prop.set_identity_backbone(m.params);
    const CTensor q = random_block(m.prop, 2, 7);
    const auto out = m.prop.backbone_apply(m.params, {q, m.prop.modes});
    EXPECT_LT(max_abs_diff(out.data, q), 1e-15);
}

TEST(Backbone, SingleModeMatchesDirectProduct) {
    Model m(small_config(), 8);
    perturb_all(m.params, 9, 0.5);
    const auto& pc = m.prop.cfg;
    const int a0 = 3, b0 = 2, l0 = 1;
    CTensor q(pc.T, pc.C, m.prop.modes.mx, m.prop.modes.my);
    Rng rng(10);
    for (int t = 0; t < pc.T; ++t) q(t, l0, a0, b0) = {rng.normal(), rng.normal()};
    const auto out = m.prop.backbone_apply(m.params, {q, m.prop.modes}).data;
    const double M = m.prop.gate(m.params, m.prop.modes.kx(a0), m.prop.modes.ky(b0))[l0];
    const auto K = m.params[m.prop.kbar];
    const std::size_t tt = static_cast<std::size_t>(pc.T) * pc.T;
    for (int t = 0; t < pc.T; ++t) {
        cplx expect = 0.0;
        for (int s = 0; s < pc.T; ++s) {
            const std::size_t e = l0 * tt + t * pc.T + s;
            expect += cplx(K[2 * e], K[2 * e + 1]) * q(s, l0, a0, b0);
        }
        EXPECT_LT(std::abs(out(t, l0, a0, b0) - M * expect), 1e-13);
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        const int p = static_cast<int>(k % (m.prop.modes.mx * m.prop.modes.my));
        const int l = static_cast<int>((k / (m.prop.modes.mx * m.prop.modes.my)) % pc.C);
        if (l != l0 || p != a0 * m.prop.modes.my + b0) {
            EXPECT_EQ(out[k], cplx{});
        }
    }
}

TEST(Backbone, Linear) {
    Model m(small_config(), 11);
    perturb_all(m.params, 12, 0.5);
    const CTensor x = random_block(m.prop, 2, 13), y = random_block(m.prop, 2, 14);
    const cplx a(0.3, -1.1), b(-2.0, 0.4);
    CTensor xy = x;
    xy *= a;
    xy.axpy(b, y);
    auto f = [&](const CTensor& q) { return m.prop.backbone_apply(m.params, {q, m.prop.modes}).data; };
    CTensor expect = f(x);
    expect *= a;
    expect.axpy(b, f(y));
    EXPECT_LT(max_abs_diff(f(xy), expect), 1e-10);
}

// --- closure -----------------------------------------------------------------------

TEST(Closure, ZeroAtInitialization) {
    Model m(small_config(), 15);
    const CTensor q = random_block(m.prop, 2, 16);
    const RetainedBlock out = m.prop.closure_apply(m.params, {q, m.prop.modes});
    for (const auto& v : out.data.vec()) EXPECT_EQ(v, cplx{});
}

TEST(Closure, TwoLayerReceptiveField) {
    ModelConfig c = small_config();
    c.Nx = c.Ny = 32;
    c.mx = 12;
    c.my = 10;
    Model m(c, 17);
    perturb_all(m.params, 18, 0.5);
    const CTensor q = random_block(m.prop, 1, 19);
    CTensor q2 = q;
    const int a0 = 6, b0 = 5;
    q2(1, 0, a0, b0) += cplx(0.7, -0.2);
    const auto y1 = m.prop.closure_apply(m.params, {q, m.prop.modes}).data;
    const auto y2 = m.prop.closure_apply(m.params, {q2, m.prop.modes}).data;
    bool changed = false;
    for (int i = 0; i < y1.n(); ++i)
        for (int l = 0; l < y1.c(); ++l)
            for (int a = 0; a < c.mx; ++a)
                for (int b = 0; b < c.my; ++b) {
                    const double d = std::abs(y1(i, l, a, b) - y2(i, l, a, b));
                    if (std::abs(a - a0) > 2 || std::abs(b - b0) > 2)
                        EXPECT_EQ(d, 0.0) << a << "," << b;
                    else if (d > 0.0)
                        changed = true;
                }
    EXPECT_TRUE(changed);
}

TEST(Closure, FiniteForLargeInputs) {
    Model m(small_config(), 20);
    perturb_all(m.params, 21, 3.0);
    const CTensor q = random_ctensor({3, 2, 4, 3}, 22, 1e3);
    EXPECT_TRUE(all_finite(m.prop.closure_apply(m.params, {q, m.prop.modes}).data));
}

// --- penalties -----------------------------------------------------------------------

TEST(Normality, ClosedFormValues) {
    // [[1, 1], [0, 1]]: the commutator is diag(1, -1) with squared norm 2.
    const std::vector<double> jordan = {1, 0, 1, 0, 0, 0, 1, 0};
    EXPECT_EQ(normality_penalty(jordan, 1, 2), 2.0);
    const std::vector<double> diag = {2, 1, 0, 0, 0, 0, -3, 0.5};
    EXPECT_EQ(normality_penalty(diag, 1, 2), 0.0);
    const double s = 1.0 / std::sqrt(2.0);
    const std::vector<double> unitary = {s, 0, 0, s, 0, s, s, 0}; // [[1, i], [i, 1]] / sqrt 2
    EXPECT_LT(normality_penalty(unitary, 1, 2), 1e-15);
}

TEST(Normality, GradientMatchesFiniteDifferences) {
    ParamSet ps;
    const ParamId k = ps.add("kbar", {3, 4, 4, 2});
    Rng rng(23);
    ps.fill_normal(k, rng, 1.0);
    DiffOp op;
    op.loss = [=](const ParamSet& p) { return normality_penalty(p[k], 3, 4); };
    op.loss_and_grad = [=](const ParamSet& p, Grads& g) { return normality_penalty(p[k], 3, 4, g[k]); };
    const auto rep = grad_check(op, ps, 40, 1e-5, 1e-7);
    EXPECT_TRUE(rep.passed) << rep.summary();
}

TEST(Orth, Examples) {
    const CTensor dk = random_ctensor({2, 3, 4, 4}, 24);
    const CTensor zero(dk.shape());
    EXPECT_EQ(orth_penalty(dk, zero, 1e-8).value, 0.0);
    EXPECT_NEAR(orth_penalty(dk, dk, 1e-8).value, 1.0, 1e-8);
    CTensor a(dk.shape()), b(dk.shape());
    for (std::size_t e = 0; e < a.size(); ++e) (e % 2 ? a : b)[e] = dk[e];
    EXPECT_EQ(orth_penalty(a, b, 1e-8).value, 0.0);
    CTensor scaled = dk;
    scaled *= cplx(0.0, -3.0);
    EXPECT_NEAR(orth_penalty(dk, scaled, 1e-8).value, 1.0, 1e-8);
}

TEST(Orth, GradientMatchesFiniteDifferences) {
    ParamSet ps;
    const ParamId pk = ps.add("dk", {2, 2, 3, 2});
    const ParamId pg = ps.add("dg", {2, 2, 3, 2});
    Rng rng(25);
    ps.fill_normal(pk, rng, 1.0);
    ps.fill_normal(pg, rng, 1.0);
    auto load = [](std::span<const double> v) {
        CTensor t(1, 2, 3, 2);
        for (std::size_t e = 0; e < t.size(); ++e) t[e] = {v[2 * e], v[2 * e + 1]};
        return t;
    };
    DiffOp op;
    op.loss = [=](const ParamSet& p) { return orth_penalty(load(p[pk]), load(p[pg]), 1e-8).value; };
    op.loss_and_grad = [=](const ParamSet& p, Grads& g) {
        const auto r = orth_penalty(load(p[pk]), load(p[pg]), 1e-8, true);
        for (std::size_t e = 0; e < r.grad_k.size(); ++e) {
            g[pk][2 * e] += r.grad_k[e].real();
            g[pk][2 * e + 1] += r.grad_k[e].imag();
            g[pg][2 * e] += r.grad_g[e].real();
            g[pg][2 * e + 1] += r.grad_g[e].imag();
        }
        return r.value;
    };
    const auto rep = grad_check(op, ps, 40, 1e-6, 1e-6);
    EXPECT_TRUE(rep.passed) << rep.summary();
}

// --- propagate -----------------------------------------------------------------------

TEST(Propagate, IdentityConfigurationIsIdentity) {
    ModelConfig c = small_config();
    c.n_sub = 3;
    Model m(c, 26);
    m.prop.set_identity_backbone(m.params);
    const Tensor z = random_tensor({2 * c.T, c.C_z, c.Nx, c.Ny}, 27);
    EXPECT_LT(max_abs_diff(m.propagate(m.params, z), z), 1e-12);
}

TEST(Propagate, SingleUnitSubstepEqualsBackbone) {
    ModelConfig c = small_config();
    c.alpha = 1.0;
    c.lambda_g = 0.0;
    c.n_sub = 1;
    c.dtau = 1.0;
    Model m(c, 28);
    perturb_all(m.params, 29, 0.3);
    const Tensor z = random_tensor({c.T, c.C_z, c.Nx, c.Ny}, 30);
    const auto out = truncate(fft2(m.propagate(m.params, z)), c.mx, c.my);
    const auto in = truncate(fft2(z), c.mx, c.my);
    const auto expect = m.prop.backbone_apply(m.params, in);
    EXPECT_LT(max_abs_diff(m.prop.evolve(m.params, in.data, nullptr), expect.data), 1e-12);
    // ifft2 symmetrizes edge columns together with pass-through partners; compare interior columns.
    for (int i = 0; i < c.T; ++i)
        for (int l = 0; l < c.C_z; ++l)
            for (int a = 0; a < c.mx; ++a)
                for (int b = 1; b < c.my; ++b)
                    if (2 * b != c.Ny) {
                        EXPECT_LT(std::abs(out.data(i, l, a, b) - expect.data(i, l, a, b)), 1e-12);
                    }
}

TEST(Propagate, LinearSubstepsMatchDenseRecursion) {
    for (int n_sub : {1, 2}) {
        ModelConfig c = small_config();
        c.lambda_g = 0.0;
        c.n_sub = n_sub;
        c.dtau = 1.0 / n_sub;
        Model m(c, 31);
        perturb_all(m.params, 32, 0.3);
        const CTensor q0 = random_block(m.prop, 1, 33);
        const CTensor q = m.prop.evolve(m.params, q0, nullptr);
        // Oracle: q <- (I + dtau (M K - I)) q per mode and channel, by dense products.
        const auto K = m.params[m.prop.kbar];
        const auto gates = m.prop.retained_gates(m.params);
        const int T = c.T;
        const std::size_t tt = static_cast<std::size_t>(T) * T;
        for (int l = 0; l < c.C_z; ++l)
            for (int p = 0; p < c.mx * c.my; ++p) {
                std::vector<cplx> v(T);
                for (int t = 0; t < T; ++t) v[t] = q0.plane(t, l)[p];
                for (int s = 0; s < n_sub; ++s) {
                    std::vector<cplx> w(T);
                    for (int t = 0; t < T; ++t) {
                        cplx kv = 0.0;
                        for (int u = 0; u < T; ++u) kv += cplx(K[2 * (l * tt + t * T + u)], K[2 * (l * tt + t * T + u) + 1]) * v[u];
                        w[t] = v[t] + c.dtau * (gates.gate(p, l) * kv - v[t]);
                    }
                    v = w;
                }
                for (int t = 0; t < T; ++t) EXPECT_LT(std::abs(q.plane(t, l)[p] - v[t]), 1e-13);
            }
    }
}

TEST(Propagate, PassThroughAndZeroingOutsideRetainedSet) {
    ModelConfig c = small_config();
    Model m(c, 34);
    perturb_all(m.params, 35, 0.3);
    const Tensor z = random_tensor({c.T, c.C_z, c.Nx, c.Ny}, 36);
    const auto in = fft2(z), out = fft2(m.propagate(m.params, z));
    const RetainedSet set(c.Nx, c.Ny, c.mx, c.my);
    for (int i = 0; i < c.T; ++i)
        for (int l = 0; l < c.C_z; ++l)
            for (int r = 0; r < c.Nx; ++r)
                for (int k = 0; k <= c.Ny / 2; ++k) {
                    if (set.contains(r, k)) continue;
                    // Edge-column partners of retained modes are shared with the retained set.
                    if ((k == 0 || 2 * k == c.Ny) && set.contains((c.Nx - r) % c.Nx, k)) continue;
                    EXPECT_LT(std::abs(out.data(i, l, r, k) - in.data(i, l, r, k)), 1e-12);
                }

    c.zero_unretained = true;
    Model mz(c, 34);
    mz.params = m.params;
    const auto outz = fft2(mz.propagate(mz.params, z));
    for (int i = 0; i < c.T; ++i)
        for (int l = 0; l < c.C_z; ++l)
            for (int r = 0; r < c.Nx; ++r)
                for (int k = 0; k <= c.Ny / 2; ++k) {
                    if (set.contains(r, k)) continue;
                    if ((k == 0 || 2 * k == c.Ny) && set.contains((c.Nx - r) % c.Nx, k)) continue;
                    EXPECT_LT(std::abs(outz.data(i, l, r, k)), 1e-12);
                }
}

TEST(Propagate, IndependentOfClosureHiddenWeightsAtInit) {
    ModelConfig c = small_config();
    Model m(c, 37);
    const Tensor z = random_tensor({c.T, c.C_z, c.Nx, c.Ny}, 38);
    const Tensor a = m.propagate(m.params, z);
    Rng rng(39);
    m.params.fill_normal(m.prop.closure1.weight, rng, 3.0);
    EXPECT_EQ(m.propagate(m.params, z), a);
}

TEST(Propagate, WithoutClosureIsLinear) {
    ModelConfig c = small_config();
    c.lambda_g = 0.0;
    Model m(c, 40);
    perturb_all(m.params, 41, 0.5);
    const Tensor x = random_tensor({c.T, c.C_z, c.Nx, c.Ny}, 42), y = random_tensor({c.T, c.C_z, c.Nx, c.Ny}, 43);
    const Tensor lhs = m.propagate(m.params, 0.7 * x + (-1.3) * y);
    const Tensor rhs = 0.7 * m.propagate(m.params, x) + (-1.3) * m.propagate(m.params, y);
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-10);
}

TEST(Propagate, DivergenceNamesSubstep) {
    ModelConfig c = small_config();
    Model m(c, 44);
    for (auto& v : m.params[m.prop.kbar]) v = 1e308;
    const Tensor z = random_tensor({c.T, c.C_z, c.Nx, c.Ny}, 45);
    try {
        m.propagate(m.params, z);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("substep 1"), std::string::npos);
    }
}

// --- encoder / projector / decoder ------------------------------------------------------

TEST(Encoder, FrameWiseAndTimeEquivariant) {
    ModelConfig c = small_config();
    Model m(c, 46);
    perturb_all(m.params, 47, 0.1);
    const Tensor u = random_tensor({c.T, 1, c.Nx, c.Ny}, 48);
    Tensor v = u;
    v.set_slice(1, random_tensor({1, 1, c.Nx, c.Ny}, 49));
    const Tensor eu = m.encode(m.params, u), ev = m.encode(m.params, v);
    for (int t = 0; t < c.T; ++t) {
        if (t == 1)
            EXPECT_GT(max_abs_diff(eu.slice(t, 1), ev.slice(t, 1)), 1e-6);
        else
            EXPECT_EQ(eu.slice(t, 1), ev.slice(t, 1));
    }
    // Reverse the frame order.
    Tensor w(u.shape());
    for (int t = 0; t < c.T; ++t) w.set_slice(t, u.slice(c.T - 1 - t, 1));
    const Tensor ew = m.encode(m.params, w);
    for (int t = 0; t < c.T; ++t) EXPECT_EQ(ew.slice(t, 1), eu.slice(c.T - 1 - t, 1));
}

TEST(Encoder, TranslationEquivariantWithoutCoordinates) {
    ModelConfig c = small_config();
    c.use_coords = false;
    Model m(c, 50);
    perturb_all(m.params, 51, 0.1);
    const Tensor u = random_tensor({c.T, 1, c.Nx, c.Ny}, 52);
    Tensor s(u.shape());
    for (int t = 0; t < c.T; ++t)
        for (int x = 0; x < c.Nx; ++x)
            for (int y = 0; y < c.Ny; ++y) s(t, 0, (x + 1) % c.Nx, y) = u(t, 0, x, y);
    const Tensor eu = m.encode(m.params, u), es = m.encode(m.params, s);
    double worst = 0.0;
    for (int t = 0; t < c.T; ++t)
        for (int ch = 0; ch < c.C_s; ++ch)
            for (int x = 0; x < c.Nx; ++x)
                for (int y = 0; y < c.Ny; ++y)
                    worst = std::max(worst, std::abs(es(t, ch, (x + 1) % c.Nx, y) - eu(t, ch, x, y)));
    EXPECT_LT(worst, 1e-8);

    // With coordinates the shift is no longer an exact symmetry.
    ModelConfig cc = small_config();
    Model mc(cc, 50);
    perturb_all(mc.params, 51, 0.1);
    const Tensor a = mc.encode(mc.params, u), b = mc.encode(mc.params, s);
    double diff = 0.0;
    for (int t = 0; t < c.T; ++t)
        for (int ch = 0; ch < c.C_s; ++ch)
            for (int x = 0; x < c.Nx; ++x)
                for (int y = 0; y < c.Ny; ++y) diff = std::max(diff, std::abs(b(t, ch, (x + 1) % c.Nx, y) - a(t, ch, x, y)));
    EXPECT_GT(diff, 1e-6);
}

TEST(Encoder, RejectsWrongShape) {
    Model m(small_config(), 53);
    EXPECT_THROW(m.encode(m.params, Tensor(3, 2, 8, 8)), ShapeError);
    EXPECT_THROW(m.encode(m.params, Tensor(4, 1, 8, 8)), ShapeError);
}

TEST(Projector, PointwiseLinearAndRankBounded) {
    ModelConfig c = small_config();
    Model m(c, 54);
    for (auto& v : m.params[m.proj_P.bias]) v = 0.0;
    for (auto& v : m.params[m.proj_R.bias]) v = 0.0;
    Tensor k(2, c.C_s, 8, 8);
    for (int i = 0; i < 2; ++i)
        for (int ch = 0; ch < c.C_s; ++ch)
            for (int p = 0; p < 64; ++p) k.plane(i, ch)[p] = 0.1 * (ch + 1) - i;
    const Tensor pk = m.project(m.params, k);
    for (int i = 0; i < 2; ++i)
        for (int ch = 0; ch < c.C_z; ++ch)
            for (int p = 1; p < 64; ++p) EXPECT_EQ(pk.plane(i, ch)[p], pk.plane(i, ch)[0]);

    const Tensor x = random_tensor({3, c.C_s, 8, 8}, 55), y = random_tensor({3, c.C_s, 8, 8}, 56);
    EXPECT_LT(max_abs_diff(m.project(m.params, 2.0 * x + (-0.5) * y),
                           2.0 * m.project(m.params, x) + (-0.5) * m.project(m.params, y)),
              1e-12);

    // R(P(h)) stacked as a (C_s, samples * pixels) matrix has rank <= C_z.
    const Tensor rp = m.lift(m.params, m.project(m.params, x));
    RowMat stack(c.C_s, 3 * 64);
    for (int i = 0; i < 3; ++i)
        for (int ch = 0; ch < c.C_s; ++ch)
            for (int p = 0; p < 64; ++p) stack(ch, i * 64 + p) = rp.plane(i, ch)[p];
    Eigen::JacobiSVD<RowMat> svd(stack);
    const auto sv = svd.singularValues();
    for (int j = c.C_z; j < sv.size(); ++j) EXPECT_LT(sv(j), 1e-10 * sv(0));
    EXPECT_THROW(m.project(m.params, Tensor(1, c.C_z, 8, 8)), ShapeError);
    EXPECT_THROW(m.lift(m.params, Tensor(1, c.C_s, 8, 8)), ShapeError);
}

TEST(Decoder, FrameWiseAndShape) {
    ModelConfig c = small_config();
    Model m(c, 57);
    perturb_all(m.params, 58, 0.1);
    const Tensor h = random_tensor({c.T, c.C_s, c.nx(), c.ny()}, 59);
    const Tensor y = m.decode(m.params, h);
    EXPECT_EQ(y.shape(), (Shape4{c.T, c.d_u, c.Nx, c.Ny}));
    Tensor w(h.shape());
    for (int t = 0; t < c.T; ++t) w.set_slice(t, h.slice(c.T - 1 - t, 1));
    const Tensor yw = m.decode(m.params, w);
    for (int t = 0; t < c.T; ++t) EXPECT_EQ(yw.slice(t, 1), y.slice(c.T - 1 - t, 1));
}

TEST(ForwardStep, ShapeAndIdentityPropagatorReducesToAutoencoder) {
    ModelConfig c = small_config();
    Model m(c, 60);
    m.prop.set_identity_backbone(m.params);
    const Tensor u = random_tensor({2 * c.T, 1, c.Nx, c.Ny}, 61);
    const Tensor y = m.forward_step(m.params, u);
    EXPECT_EQ(y.shape(), u.shape());
    const Tensor ae = m.decode(m.params, m.lift(m.params, m.project(m.params, m.encode(m.params, u))));
    EXPECT_LT(max_abs_diff(y, ae), 1e-12);
}

TEST(ModelConfig, Validation) {
    ModelConfig c = small_config();
    c.C_z = c.C_s;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.mx = 9;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.my = 6;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.r = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.projector = false;
    EXPECT_THROW(c.validate(), ConfigError);
    c.C_z = c.C_s;
    EXPECT_NO_THROW(c.validate());
}

// --- adjoints --------------------------------------------------------------------------

namespace {

CheckReport check_stage(Model& m, const std::string& stage, std::uint64_t seed, double tol = 1e-6) {
    const auto& c = m.cfg;
    const Model* mp = &m;
    if (stage == "encode")
        return check_layer(
            m.params, {c.T, c.d_u, c.Nx, c.Ny}, seed,
            [mp](const ParamSet& p, const Tensor& x) { return mp->encode(p, x); },
            [mp](const ParamSet& p, const Tensor& x, const Tensor& dy, Grads& g) {
                EncoderCache ec;
                mp->encode(p, x, &ec);
                return mp->encode_backward(p, ec, dy, g);
            },
            60, tol);
    if (stage == "propagate")
        return check_layer(
            m.params, {c.T, c.C_z, c.nx(), c.ny()}, seed,
            [mp](const ParamSet& p, const Tensor& x) { return mp->propagate(p, x); },
            [mp](const ParamSet& p, const Tensor& x, const Tensor& dy, Grads& g) {
                PropagateCache pc;
                mp->propagate(p, x, &pc);
                return mp->prop.propagate_backward(p, pc, dy, 0.0, g);
            },
            60, tol);
    if (stage == "decode")
        return check_layer(
            m.params, {c.T, c.C_s, c.nx(), c.ny()}, seed,
            [mp](const ParamSet& p, const Tensor& x) { return mp->decode(p, x); },
            [mp](const ParamSet& p, const Tensor& x, const Tensor& dy, Grads& g) {
                DecoderCache dc;
                mp->decode(p, x, &dc);
                return mp->decode_backward(p, dc, dy, g);
            },
            60, tol);
    return check_layer(
        m.params, {c.T, c.d_u, c.Nx, c.Ny}, seed,
        [mp](const ParamSet& p, const Tensor& x) { return mp->forward_step(p, x); },
        [mp](const ParamSet& p, const Tensor& x, const Tensor& dy, Grads& g) {
            StepCache sc;
            mp->forward_step(p, x, &sc);
            return mp->forward_step_backward(p, sc, dy, nullptr, 0.0, g);
        },
        80, tol);
}

} // namespace

TEST(ModelAdjoint, EachStage) {
    for (const char* stage : {"encode", "propagate", "decode"}) {
        Model m(small_config(), 62);
        perturb_all(m.params, 63, 0.2);
        const auto rep = check_stage(m, stage, 64);
        EXPECT_TRUE(rep.passed) << stage << ": " << rep.summary();
    }
}

TEST(ModelAdjoint, FullStepAllVariants) {
    std::vector<std::pair<std::string, ModelConfig>> variants;
    variants.emplace_back("full", small_config());
    ModelConfig v = small_config();
    v.encoder = EncoderKind::conv;
    variants.emplace_back("conv", v);
    v = small_config();
    v.time_to_channel = true;
    variants.emplace_back("t2c", v);
    v = small_config();
    v.projector = false;
    v.C_z = v.C_s;
    variants.emplace_back("no-proj", v);
    v = small_config();
    v.r = 2;
    v.Nx = v.Ny = 16;
    variants.emplace_back("r2", v);
    v = small_config();
    v.alpha = 0.0;
    variants.emplace_back("no-backbone", v);
    v = small_config();
    v.lambda_g = 0.0;
    v.zero_unretained = true;
    variants.emplace_back("no-closure-zeroed", v);
    for (auto& [name, cfg] : variants) {
        Model m(cfg, 65);
        perturb_all(m.params, 66, 0.2);
        const auto rep = check_stage(m, "step", 67, 1e-5);
        EXPECT_TRUE(rep.passed) << name << ": " << rep.summary();
    }
}

TEST(ModelAdjoint, InjectedProjectorFaultIsCaught) {
    Model m(small_config(), 68);
    perturb_all(m.params, 69, 0.2);
    m.fault_flip_projector_adjoint = true;
    const auto rep = check_stage(m, "step", 70, 1e-4);
    EXPECT_FALSE(rep.passed);
}
