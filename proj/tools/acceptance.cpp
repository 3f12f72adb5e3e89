// ssp_acceptance: one PASS/FAIL line per acceptance criterion.
//
// Criteria 1-5, 8 and 9 are property and oracle checks that run in about a
// minute. Criteria 6 and 7 train models at desk scale and take tens of
// minutes; select subsets with --only.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ssp/ssp.hpp"

#ifndef SSP_SOURCE_DIR
#define SSP_SOURCE_DIR "."
#endif

namespace fs = std::filesystem;
using namespace ssp;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path configs;
    fs::path work;
};

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string sci(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os.precision(digits);
    os << std::fixed << v;
    return os.str();
}

Tensor random_tensor(Shape4 s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(s);
    for (auto& v : t.vec()) v = rng.normal();
    return t;
}

CTensor random_ctensor(Shape4 s, std::uint64_t seed) {
    Rng rng(seed);
    CTensor t(s);
    for (auto& v : t.vec()) v = cplx(rng.normal(), rng.normal());
    return t;
}

void perturb(ParamSet& ps, std::uint64_t seed, double scale) {
    Rng rng(seed);
    for (auto& v : ps.values()) v += scale * rng.normal();
}

RunConfig load_config(const Context& ctx, const std::string& name, const std::string& out) {
    RunConfig c = load_run_config(ctx.configs / name);
    c.out = (ctx.work / out).string();
    c.finalize();
    return c;
}

/// Run a subcommand with its report going to <out>/<command>.log.
void run_logged(const std::string& command, const RunConfig& c) {
    fs::create_directories(c.out_dir());
    std::ofstream log(c.out_dir() / (command + ".log"));
    const int rc = run_command(command, c, log);
    if (rc != kExitOk) throw std::runtime_error(command + " exited with " + std::to_string(rc));
}

ModelConfig tiny_model() {
    ModelConfig c;
    c.C_s = 4;
    c.C_z = 2;
    c.T = 3;
    c.Nx = c.Ny = 8;
    c.mx = 4;
    c.my = 3;
    c.gate_hidden = 6;
    return c;
}

Dataset heat_dataset(int n_train, int n_test, int L, int n) {
    GenOptions o;
    o.n_train = n_train;
    o.n_test = n_test;
    o.L_total = L;
    o.nx = o.ny = n;
    return generate_dataset(PDESpec::heat(), o);
}

// --- 1: gradient fidelity ---------------------------------------------------------------

Outcome gradient_fidelity(const Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out{true, ""};
    // The shipped heat model at full size, and a reduced model with heavier
    // regularizer weights so the normality and orthogonality terms dominate.
    for (const char* name : {"heat.ini", "gradcheck.ini"}) {
        RunConfig c = load_config(ctx, name, "gradcheck");
        c.gradcheck.probes = std::max(c.gradcheck.probes, 200);
        c.gradcheck.eps = 1e-5;
        c.gradcheck.tol = 1e-4;
        c.train.n_roll = 2;
        auto problem = make_grad_check_problem(c);
        const LossComponents lc = loss_components(problem->model, problem->model.params, problem->window, c.loss,
                                                  c.train.n_roll, c.train.rec_through_projector);
        const bool terms = lc.rec > 0 && lc.lat_mean() > 0 && lc.phy_mean() > 0 && lc.norm > 0 && lc.orth_mean() > 0;
        const CheckReport rep = run_grad_check(c);
        std::set<std::string> probed;
        for (const auto& p : rep.probes) probed.insert(p.param);
        int trainable = 0;
        for (const auto& info : problem->model.params.infos()) trainable += info.trainable;
        const bool spans = static_cast<int>(probed.size()) == trainable;
        const bool ok = rep.passed && terms && spans && rep.probes.size() >= 200;
        out.pass = out.pass && ok;
        out.detail += std::string(out.detail.empty() ? "" : "; ") + name + ": " + std::to_string(rep.probes.size()) +
                      " probes over " + std::to_string(probed.size()) + "/" + std::to_string(trainable) +
                      " tensors, max_rel_error " + sci(rep.max_rel_error) +
                      (terms ? "" : ", a loss term is zero") + (rep.passed ? "" : ", worst " + rep.worst.param);
    }
    const double secs = elapsed(t0);
    out.pass = out.pass && secs <= 600.0;
    out.detail += "; " + fixed(secs, 1) + " s";
    return out;
}

// --- 2: spectral core ---------------------------------------------------------------------

Outcome spectral_core(const Context&) {
    double round_trip = 0.0, parseval = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor f = random_tensor({2, 3, 32, 32}, seed);
        round_trip = std::max(round_trip, max_abs_diff(ifft2(fft2(f)), f));
        const auto s = fft2(f);
        for (int n = 0; n < 2; ++n)
            for (int ch = 0; ch < 3; ++ch) {
                double phys = 0.0, spec = 0.0;
                for (int x = 0; x < 32; ++x)
                    for (int y = 0; y < 32; ++y) phys += f(n, ch, x, y) * f(n, ch, x, y);
                for (int kx = 0; kx < 32; ++kx)
                    for (int ky = 0; ky <= 16; ++ky) spec += column_weight(ky, 32) * std::norm(s.data(n, ch, kx, ky));
                parseval = std::max(parseval, std::abs(phys - spec / 1024.0) / phys);
            }
    }
    bool exact = true;
    {
        const auto s = fft2(random_tensor({2, 1, 8, 6}, 7));
        exact = exact && embed(truncate(s, 8, 4), 8, 6).data == s.data;
    }
    {
        const RetainedBlock b{random_ctensor({3, 2, 5, 4}, 8), RetainedSet(12, 10, 5, 4)};
        exact = exact && truncate(embed(b, 12, 10), 5, 4).data == b.data;
        const auto s = fft2(random_tensor({1, 2, 12, 10}, 9));
        const auto once = embed(truncate(s, 5, 4), 12, 10);
        exact = exact && embed(truncate(once, 5, 4), 12, 10).data == once.data;
        const RetainedBlock zero{CTensor(1, 1, 3, 2), RetainedSet(8, 8, 3, 2)};
        const auto zs = embed(zero, 8, 8);
        for (const auto& v : zs.data.vec()) exact = exact && v == cplx{};
        SpectralField<double> high{CTensor(1, 1, 16, 9), 16, 16};
        high.data(0, 0, 8, 7) = cplx(1, 2);
        high.data(0, 0, 5, 1) = cplx(-3, 0.5);
        const auto hb = truncate(high, 6, 4);
        for (const auto& v : hb.data.vec()) exact = exact && v == cplx{};
    }
    return {round_trip <= 1e-10 && parseval <= 1e-10 && exact,
            "round trip " + sci(round_trip) + ", Parseval " + sci(parseval) + ", truncate/embed identities " +
                (exact ? "exact" : "violated")};
}

// --- 3: analytic PDE oracle -----------------------------------------------------------------

Outcome analytic_pde(const Context&) {
    struct Mode {
        int kx, ky;
        double amp, phase;
    };
    const std::vector<Mode> modes = {{1, 0, 1.0, 0.3},  {0, 2, 0.5, -1.0}, {3, -4, 0.25, 2.0},
                                     {-5, 7, 0.1, 0.7}, {16, 1, 0.05, 0.0}, {2, 16, 0.05, 0.0}};
    const double nu = 0.05, dt = 0.05;
    auto closed_form = [&](double t) {
        Tensor f(1, 1, 32, 32);
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) {
                double v = 0.0;
                for (const auto& m : modes)
                    v += m.amp * std::exp(-nu * (m.kx * m.kx + m.ky * m.ky) * t) *
                         std::cos(m.kx * 2.0 * kPi * i / 32 + m.ky * 2.0 * kPi * j / 32 + m.phase);
                f(0, 0, i, j) = v;
            }
        return f;
    };
    PDESpec heat = PDESpec::heat();
    heat.nu = {nu};
    Tensor u = closed_form(0.0);
    double heat_err = 0.0;
    for (int n = 1; n <= 50; ++n) {
        u = exact_linear_step(u, heat, dt);
        heat_err = std::max(heat_err, max_abs_diff(u, closed_form(n * dt)));
    }

    PDESpec adv = PDESpec::advection_diffusion();
    adv.nu = {0.0};
    adv.cx = 1.0;
    adv.cy = 0.5;
    const int steps = 200;
    const Tensor u0 = random_initial_condition(5, 32, 32, 1, 1.5);
    Tensor v = u0;
    for (int n = 0; n < steps; ++n) v = exact_linear_step(v, adv, 4.0 * kPi / steps);
    const double adv_err = max_abs_diff(v, u0);
    return {heat_err <= 1e-10 && adv_err <= 1e-10,
            "heat vs closed form over 50 steps " + sci(heat_err) + ", advection over one period " + sci(adv_err)};
}

// --- 4: architecture identities ----------------------------------------------------------------

Outcome architecture(const Context&) {
    ModelConfig c = tiny_model();
    c.d_u = 1;
    c.n_sub = 2;
    c.dtau = 0.5;

    // (a) gate bounds
    ModelConfig cb = c;
    cb.beta = 0.5;
    Model mg(cb, 2);
    Rng rng(3);
    double lo = INFINITY, hi = -INFINITY;
    int probes = 0;
    for (int trial = 0; trial < 10; ++trial) {
        perturb(mg.params, 100 + trial, 5.0);
        for (int p = 0; p < 1000; ++p, ++probes) {
            const int kx = static_cast<int>(rng.below(41)) - 20;
            const int ky = static_cast<int>(rng.below(21));
            for (double g : mg.prop.gate(mg.params, kx, ky)) {
                lo = std::min(lo, g);
                hi = std::max(hi, g);
            }
        }
    }
    const bool a = lo >= 1.0 - cb.beta && hi <= 1.0 + cb.beta;

    // (b) closure zero at initialization
    Model mc(c, 15);
    const CTensor q = random_ctensor({2 * c.T, c.C_z, c.mx, c.my}, 16);
    const RetainedBlock cl = mc.prop.closure_apply(mc.params, {q, mc.prop.modes});
    bool b = true;
    for (const auto& v : cl.data.vec()) b = b && v == cplx{};

    // (c) identity backbone with zero closure
    ModelConfig ci = c;
    ci.n_sub = 3;
    Model mi(ci, 26);
    mi.prop.set_identity_backbone(mi.params);
    const Tensor z = random_tensor({2 * ci.T, ci.C_z, ci.Nx, ci.Ny}, 27);
    const double id_err =
        max_abs_diff(truncate(fft2(mi.propagate(mi.params, z)), ci.mx, ci.my).data, truncate(fft2(z), ci.mx, ci.my).data);
    const bool cc = id_err <= 1e-12;

    // (d) one unit substep without closure is the backbone
    ModelConfig cd = c;
    cd.alpha = 1.0;
    cd.lambda_g = 0.0;
    cd.n_sub = 1;
    cd.dtau = 1.0;
    Model md(cd, 28);
    perturb(md.params, 29, 0.3);
    const auto in = truncate(fft2(random_tensor({cd.T, cd.C_z, cd.Nx, cd.Ny}, 30)), cd.mx, cd.my);
    const double bb_err =
        max_abs_diff(md.prop.evolve(md.params, in.data, nullptr), md.prop.backbone_apply(md.params, in).data);
    const bool d = bb_err <= 1e-12;

    // (e) normality of [[1, 1], [0, 1]]
    const std::vector<double> jordan = {1, 0, 1, 0, 0, 0, 1, 0};
    const double nj = normality_penalty(jordan, 1, 2);
    const bool e = nj == 2.0;

    return {a && b && cc && d && e,
            "(a) gate in [" + fixed(lo, 4) + ", " + fixed(hi, 4) + "] over " + std::to_string(probes) +
                " probes; (b) closure " + (b ? "exactly zero" : "nonzero") + "; (c) identity " + sci(id_err) +
                "; (d) backbone " + sci(bb_err) + "; (e) normality " + fixed(nj, 1)};
}

// --- 5: regularizers ----------------------------------------------------------------------

Outcome regularizers(const Context&) {
    ModelConfig c = tiny_model();
    c.T = 4;
    Model m(c, 25);
    Rng rng(26);
    m.params.fill_normal(m.prop.kbar, rng, 0.5);
    for (int id = 0; id < m.params.count(); ++id) m.params.set_trainable(id, id == m.prop.kbar);
    const double start = m.normality_penalty(m.params);
    double prev = start;
    bool decreasing = true;
    for (int step = 0; step < 10; ++step) {
        Grads g(m.params);
        m.normality_penalty(m.params, &g);
        auto k = m.params[m.prop.kbar];
        for (std::size_t e = 0; e < k.size(); ++e) k[e] -= 0.01 * g[m.prop.kbar][e];
        const double now = m.normality_penalty(m.params);
        decreasing = decreasing && now < prev;
        prev = now;
    }

    const CTensor dk = random_ctensor({2, 3, 4, 4}, 24);
    CTensor ea(dk.shape()), eb(dk.shape());
    for (std::size_t e = 0; e < dk.size(); ++e) (e % 2 ? ea : eb)[e] = dk[e];
    CTensor scaled = dk;
    scaled *= cplx(0.0, -3.0);
    const double orth_zero = std::max(orth_penalty(dk, CTensor(dk.shape()), 1e-8).value, orth_penalty(ea, eb, 1e-8).value);
    const double orth_one = std::max(std::abs(orth_penalty(dk, dk, 1e-8).value - 1.0),
                                     std::abs(orth_penalty(dk, scaled, 1e-8).value - 1.0));
    return {decreasing && start > 0.1 && orth_zero == 0.0 && orth_one <= 1e-8,
            "L_norm " + sci(start) + " -> " + sci(prev) + (decreasing ? " strictly decreasing" : " not monotone") +
                " over 10 steps; orth orthogonal " + sci(orth_zero) + ", parallel |1 - L| " + sci(orth_one)};
}

// --- 6: desk-scale learning ----------------------------------------------------------------

Outcome desk_learning(const Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig c = load_config(ctx, "heat.ini", "heat");
    run_logged("gen", c);
    const Dataset data = load_dataset(c.dataset_path());
    auto progress = [](const EpochLog& e) {
        std::cerr << "  [6] epoch " << e.epoch << " total " << fmt_double(e.total) << "\n";
    };
    const TrainResult tr = train(data, c.model, c.train, c.loss, c.out_dir(), nullptr, progress);
    RolloutSpec spec;
    spec.T = c.model.T;
    spec.conditioning = 10;
    spec.horizon = 20;
    const double trained = run_protocol(model_forecaster(tr.model), data, spec).summary[0];
    const double init = run_protocol(model_forecaster(Model(c.model, c.seed)), data, spec).summary[0];
    const double secs = elapsed(t0);
    return {trained <= 5e-2 && init >= 5.0 * trained && secs <= 3600.0,
            "20-step rel_l2 trained " + sci(trained) + ", at init " + sci(init) + " (" + fixed(init / trained, 1) +
                "x), " + std::to_string(c.train.epochs) + " epochs in " + fixed(secs / 60.0, 1) + " min"};
}

// --- 7: ablation direction ----------------------------------------------------------------

Outcome ablation_direction(const Context& ctx) {
    const RunConfig c = load_config(ctx, "rd_ablation.ini", "rd");
    run_logged("gen", c);
    const Dataset data = load_dataset(c.dataset_path());
    RolloutSpec spec;
    spec.conditioning = c.eval.conditioning;
    spec.horizon = c.eval.horizon;
    spec.split = c.eval.split;
    std::vector<AblationRow> done;
    auto on_row = [&](const AblationRow& r) {
        done.push_back(r);
        write_text_atomic(c.out_dir() / "ablation.csv", ablation_csv(done));
        std::cerr << "  [7] " << r.variant << " rel_l2 " << fmt_double(r.metrics[0]) << " (" << fixed(r.train_seconds, 1)
                  << " s)\n";
    };
    const auto rows = ablation_run(data, c.model, c.train, c.loss, spec, {Variant::wo_K, Variant::wo_G},
                                   c.ablate.wo_K, on_row);
    const double full = rows.front().metrics[0];
    Outcome out{rows.front().status == "ok", "full " + sci(full)};
    for (std::size_t k = 1; k < rows.size(); ++k) {
        const double v = rows[k].metrics[0];
        const bool ok = rows[k].status != "ok" || full <= 1.05 * v;
        out.pass = out.pass && ok;
        out.detail += ", " + rows[k].variant + " " + sci(v) + " (full/variant " + fixed(full / v, 3) + ")";
    }
    out.detail += "; directional, seed " + std::to_string(c.seed) + ", " + std::to_string(c.train.epochs) + " epochs";
    return out;
}

// --- 8: extrapolation protocol ---------------------------------------------------------------

Outcome extrapolation_protocol(const Context&) {
    const Dataset d = heat_dataset(1, 3, 30, 8);
    Model m(tiny_model(), 5);
    perturb(m.params, 6, 0.05);

    const MetricsReport a = rollout_eval(m, d, 6, 15);
    const MetricsReport b = extrapolation_eval(m, d, 6, 0, 15);
    double sup0 = 0.0;
    bool same_steps = a.steps == b.steps;
    for (std::size_t k = 0; k < a.per_step.size() && same_steps; ++k)
        for (int q = 0; q < kMetricCount; ++q) sup0 = std::max(sup0, std::abs(a.per_step[k][q] - b.per_step[k][q]));
    for (int q = 0; q < kMetricCount; ++q) sup0 = std::max(sup0, std::abs(a.summary[q] - b.summary[q]));

    double mean_err = 0.0;
    for (int sup : {0, 7}) {
        const MetricsReport r = run_protocol(model_forecaster(m), d, {3, 9, 20, sup, Split::test});
        for (int q = 0; q < kMetricCount; ++q) {
            double s = 0.0;
            for (const auto& v : r.per_step) s += v[q];
            mean_err = std::max(mean_err, std::abs(s / r.per_step.size() - r.summary[q]));
        }
    }

    // Truth plus one low-band cosine whose amplitude is zero through step 50
    // and grows linearly after it.
    const int n = 16, T = 5, cond = 10, sup = 50, total = 90;
    GenOptions o;
    o.n_train = 0;
    o.n_test = 3;
    o.L_total = cond + total;
    o.nx = o.ny = n;
    const Dataset e = generate_dataset(PDESpec::heat(), o);
    auto amp = [&](int step) { return step <= sup ? 0.0 : 1e-3 * (step - sup); };
    Forecaster f = [&](const Tensor&, int traj, int first) {
        Tensor out = e.trajectories[traj].frames(first, T);
        for (int t = 0; t < T; ++t) {
            const double aa = amp(first - cond + t + 1);
            for (int x = 0; x < n; ++x)
                for (int y = 0; y < n; ++y) out(t, 0, x, y) += aa * std::cos(2.0 * kPi * (x + y) / n);
        }
        return out;
    };
    const MetricsReport ex = extrapolation_eval(f, e, T, cond, sup, total);
    int n_low = 0;
    for (int kx = -n / 2; kx < n / 2; ++kx)
        for (int ky = -n / 2; ky < n / 2; ++ky)
            if (std::sqrt(double(kx * kx + ky * ky)) <= (n / 2) / 3.0) ++n_low;
    bool window = ex.steps.size() == 40 && ex.steps.front() == 51 && ex.steps.back() == 90;
    double band_err = 0.0;
    for (std::size_t k = 0; k < ex.steps.size() && window; ++k) {
        const double aa = amp(ex.steps[k]);
        const auto& v = ex.per_step[k];
        band_err = std::max({band_err, std::abs(v[1] - aa), std::abs(v[3] - 2.0 * aa * aa / 4.0 / n_low), v[4], v[5]});
    }
    const MetricsReport early = rollout_eval(f, e, T, cond, sup);
    for (double v : early.summary) window = window && v == 0.0;
    const MetricsReport full = rollout_eval(f, e, T, cond, total);
    const double dilution = std::abs(full.summary[0] - ex.summary[0] * 40.0 / 90.0);

    return {same_steps && sup0 <= 1e-12 && mean_err <= 1e-12 && window && band_err <= 1e-12 && dilution <= 1e-12,
            "sup=0 vs rollout " + sci(sup0) + ", curve mean vs summary " + sci(mean_err) + ", steps 51-90 window " +
                (window ? "exact" : "wrong") + " with band/e_max error " + sci(band_err)};
}

// --- 9: determinism and formats ----------------------------------------------------------------

/// Drop the last column (wall-clock time) of a CSV.
std::string without_last_column(const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

std::string read_text(const fs::path& p) {
    const auto bytes = read_file(p);
    return {bytes.begin(), bytes.end()};
}

Outcome determinism(const Context& ctx) {
    const char* text = R"(
[run]
seed = 3
[pde]
kind = heat
nu = 0.05
dt = 0.05
[dataset]
nx = 8
ny = 8
n_train = 3
n_test = 2
L_total = 24
[model]
T = 3
C_s = 4
C_z = 2
mx = 4
my = 3
gate_hidden = 6
[train]
epochs = 2
batch_size = 2
n_roll = 1
checkpoint_every = 1
[eval]
conditioning = 6
horizon = 9
[ablate]
variants = wo_K
)";
    std::vector<std::string> mismatched;
    std::vector<RunConfig> runs;
    for (const char* dir : {"determinism_a", "determinism_b"}) {
        RunConfig c = parse_run_config(text, "determinism");
        c.out = (ctx.work / dir).string();
        fs::remove_all(c.out_dir());
        c.finalize();
        for (const char* cmd : {"gen", "train", "eval", "gradcheck"}) run_logged(cmd, c);
        runs.push_back(c);
    }
    const fs::path a = runs[0].out_dir(), b = runs[1].out_dir();
    for (const char* name : {"dataset.sspd", "checkpoint.sspc", "checkpoint_epoch1.sspc", "metrics_rollout.csv",
                             "metrics_rollout.svg", "gradcheck.csv"})
        if (read_file(a / name) != read_file(b / name)) mismatched.push_back(name);
    if (without_last_column(read_text(a / "train_log.csv")) != without_last_column(read_text(b / "train_log.csv")))
        mismatched.push_back("train_log.csv");

    const Dataset d = load_dataset(a / "dataset.sspd");
    const bool sspd = serialize_dataset(d) == read_file(a / "dataset.sspd");
    bool sspc = true;
    for (const char* name : {"checkpoint.sspc", "checkpoint_epoch1.sspc"}) {
        const Checkpoint ck = load_checkpoint(a / name);
        sspc = sspc && serialize_checkpoint(ck.model, ck.adam ? &*ck.adam : nullptr, ck.progress) == read_file(a / name);
    }
    std::string detail = "repeated gen/train/eval/gradcheck: ";
    if (mismatched.empty())
        detail += "all artifacts bitwise identical";
    else
        for (const auto& m : mismatched) detail += m + " differs ";
    detail += std::string("; SSPD round trip ") + (sspd ? "exact" : "differs") + ", SSPC round trip " +
              (sspc ? "exact" : "differs");
    return {mismatched.empty() && sspd && sspc, detail};
}

struct Criterion {
    int id;
    const char* title;
    bool hard;
    std::function<Outcome(const Context&)> run;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite: one PASS/FAIL line per criterion"};
    Context ctx;
    std::string configs = std::string(SSP_SOURCE_DIR) + "/configs";
    std::string work = "acceptance_runs";
    std::vector<int> only;
    int threads = 0;
    app.add_option("--configs", configs, "directory holding heat.ini, gradcheck.ini and rd_ablation.ini")
        ->check(CLI::ExistingDirectory);
    app.add_option("--work", work, "scratch directory for generated artifacts");
    app.add_option("--only", only, "run only these criteria (1-9)")->delimiter(',')->check(CLI::Range(1, 9));
    app.add_option("--threads", threads, "worker threads (0 = hardware concurrency)")->check(CLI::NonNegativeNumber);
    CLI11_PARSE(app, argc, argv);
    ctx.configs = configs;
    ctx.work = work;
    fs::create_directories(ctx.work);
    set_threads(threads);

    const std::vector<Criterion> all = {
        {1, "gradient fidelity", true, gradient_fidelity},
        {2, "spectral core exactness", true, spectral_core},
        {3, "analytic PDE oracle", true, analytic_pde},
        {4, "architecture identities", true, architecture},
        {5, "regularizer behavior", true, regularizers},
        {6, "desk-scale learning", true, desk_learning},
        {7, "ablation direction", false, ablation_direction},
        {8, "extrapolation protocol", true, extrapolation_protocol},
        {9, "determinism and formats", true, determinism},
    };
    int hard_failures = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        Outcome o;
        try {
            o = c.run(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.pass && c.hard) ++hard_failures;
        std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << (c.hard ? "" : " (directional)")
                  << "  " << c.title << ": " << o.detail << std::endl;
    }
    return hard_failures == 0 ? 0 : 1;
}
