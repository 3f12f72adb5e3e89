#pragma once

// Subcommands behind the ssp binary. Each takes a finalized RunConfig, writes
// its artifacts under the output directory and reports to `os`.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>

#include "ssp/checkpoint.hpp"
#include "ssp/config.hpp"
#include "ssp/grad_check.hpp"

namespace ssp {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitDivergence = 3, kExitIo = 4 };

/// Exclusive lock on an output directory, released on destruction.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir) : path_(dir / ".ssp.lock") {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
        FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f)
            throw IoError("output directory " + dir.string() + " is locked by another command (remove " +
                          path_.string() + " if stale)");
        std::fclose(f);
    }
    ~RunLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

inline void echo_config(const RunConfig& c, const std::string& command) {
    write_text_atomic(c.out_dir() / (command + "_config.ini"), write_run_config(c));
}

inline std::string dataset_summary(const Dataset& d) {
    std::ostringstream os;
    os << "kind=" << to_string(d.spec.kind) << " nx=" << d.nx << " ny=" << d.ny << " n_traj=" << d.size()
       << " n_train=" << d.indices(Split::train).size() << " n_test=" << d.indices(Split::test).size()
       << " L_total=" << d.L_total << " d_u=" << d.d_u() << " dt=" << fmt_double(d.spec.dt)
       << " seed_base=" << d.seed_base;
    return os.str();
}

inline int cmd_gen(const RunConfig& c, std::ostream& os) {
    RunLock lock(c.out_dir());
    echo_config(c, "gen");
    const auto path = c.dataset_path();
    generate_dataset(c.pde, c.data, path);
    const Dataset back = load_dataset(path);
    os << "wrote " << path.string() << " (" << std::filesystem::file_size(path) << " bytes, crc32 "
       << hex32(file_crc32(path)) << ")\n";
    os << dataset_summary(back) << "\n";
    return kExitOk;
}

inline int cmd_train(const RunConfig& c, std::ostream& os) {
    RunLock lock(c.out_dir());
    echo_config(c, "train");
    const Dataset data = load_dataset(c.dataset_path());
    std::optional<Checkpoint> resume;
    if (!c.train.resume.empty()) resume = load_checkpoint(c.resolve(c.train.resume));
    Model probe(c.model, c.seed);
    os << "training " << probe.params.total_size() << " parameters on " << data.indices(Split::train).size()
       << " trajectories, " << c.train.epochs << " epochs\n";
    auto report = [&](const EpochLog& e) {
        os << "epoch " << e.epoch << " total " << fmt_double(e.total) << " rec " << fmt_double(e.rec) << " lat "
           << fmt_double(e.lat) << " phy " << fmt_double(e.phy) << " norm " << fmt_double(e.norm) << " orth "
           << fmt_double(e.orth) << " (" << std::fixed << std::setprecision(1) << e.wall_seconds << " s)\n"
           << std::defaultfloat;
        os.flush();
    };
    train(data, c.model, c.train, c.loss, c.out_dir(), resume ? &*resume : nullptr, report);
    const auto ck = c.out_dir() / "checkpoint.sspc";
    os << "wrote " << ck.string() << " (crc32 " << hex32(file_crc32(ck)) << ")\n";
    return kExitOk;
}

inline int cmd_eval(const RunConfig& c, std::ostream& os) {
    RunLock lock(c.out_dir());
    echo_config(c, "eval");
    const Dataset data = load_dataset(c.dataset_path());
    RolloutSpec spec;
    spec.conditioning = c.eval.conditioning;
    spec.horizon = c.eval.horizon;
    spec.supervised_horizon = c.eval.protocol == "extrapolation" ? c.eval.supervised_horizon : 0;
    spec.split = c.eval.split;
    MetricsReport rep;
    if (c.eval.forecaster == "oracle") {
        spec.T = c.model.T;
        rep = run_protocol(oracle_forecaster(data, spec.T), data, spec);
    } else {
        const auto path = c.checkpoint_path();
        if (!std::filesystem::exists(path)) throw IoError("checkpoint " + path.string() + " does not exist");
        const Checkpoint ck = load_checkpoint(path);
        spec.T = ck.model.cfg.T;
        rep = run_protocol(model_forecaster(ck.model), data, spec);
    }
    const std::string stem = "metrics_" + c.eval.protocol;
    const auto csv = c.out_dir() / (stem + ".csv");
    write_text_atomic(csv, metrics_csv(rep));
    os << rep.protocol << " steps " << rep.first_step << ".." << rep.last_step << " over " << rep.samples
       << " trajectories\n";
    for (int q = 0; q < kMetricCount; ++q) os << "  " << kMetricNames[q] << " " << fmt_double(rep.summary[q]) << "\n";
    os << "wrote " << csv.string() << " (crc32 " << hex32(file_crc32(csv)) << ")\n";
    if (c.eval.plot) {
        const auto svg = c.out_dir() / (stem + ".svg");
        write_text_atomic(svg, metrics_svg(rep, rep.protocol + " error, steps " + std::to_string(rep.first_step) +
                                                    "-" + std::to_string(rep.last_step)));
        os << "wrote " << svg.string() << "\n";
    }
    if (rep.diverged_step > 0) {
        os << "rollout diverged at step " << rep.diverged_step << "; metrics cover steps up to " << rep.last_step
           << "\n";
        return kExitDivergence;
    }
    return kExitOk;
}

/// Objective of one (n_roll + 1) T frame window of a generated trajectory,
/// as a differentiable op of the model parameters.
struct GradCheckProblem {
    Model model;
    Tensor window;
    DiffOp op;
};

inline std::unique_ptr<GradCheckProblem> make_grad_check_problem(const RunConfig& c) {
    auto p = std::make_unique<GradCheckProblem>();
    p->model = Model(c.model, c.seed);
    if (c.gradcheck.perturb > 0.0) {
        Rng rng(Rng::mix(c.seed) ^ 0x9e3779b97f4a7c15ULL);
        for (auto& v : p->model.params.values()) v += c.gradcheck.perturb * rng.normal();
    }
    p->model.fault_flip_projector_adjoint = c.gradcheck.fault;
    const int len = (c.train.n_roll + 1) * c.model.T;
    p->window = generate_trajectory(c.pde, c.seed, c.model.Nx, c.model.Ny, len).states;
    GradCheckProblem* raw = p.get();
    const LossWeights w = c.loss;
    const int n_roll = c.train.n_roll;
    const bool rtp = c.train.rec_through_projector;
    p->op.name = "objective";
    p->op.loss = [raw, w, n_roll, rtp](const ParamSet& ps) {
        return loss_components(raw->model, ps, raw->window, w, n_roll, rtp).total;
    };
    p->op.loss_and_grad = [raw, w, n_roll, rtp](const ParamSet& ps, Grads& g) {
        return loss_components(raw->model, ps, raw->window, w, n_roll, rtp, &g).total;
    };
    return p;
}

inline CheckReport run_grad_check(const RunConfig& c) {
    auto p = make_grad_check_problem(c);
    GradCheckOptions opt;
    opt.seed = c.seed;
    opt.floor = c.gradcheck.floor;
    return grad_check(p->op, p->model.params, c.gradcheck.probes, c.gradcheck.eps, c.gradcheck.tol, opt);
}

inline std::string grad_check_csv(const CheckReport& r) {
    std::ostringstream os;
    os << "param,index,adjoint,numeric,rel_error\n";
    for (const auto& p : r.probes)
        os << p.param << ',' << p.local_index << ',' << fmt_double(p.adjoint) << ',' << fmt_double(p.numeric) << ','
           << fmt_double(p.rel_error) << '\n';
    return os.str();
}

inline int cmd_gradcheck(const RunConfig& c, std::ostream& os) {
    RunLock lock(c.out_dir());
    echo_config(c, "gradcheck");
    const CheckReport rep = run_grad_check(c);
    std::map<std::string, std::pair<int, double>> per; // probes and worst error per tensor
    for (const auto& p : rep.probes) {
        auto& e = per[p.param];
        ++e.first;
        e.second = std::max(e.second, p.rel_error);
    }
    os << std::left;
    for (const auto& [name, e] : per)
        os << "  " << std::setw(28) << name << " probes " << std::setw(4) << e.first << " max_rel_error "
           << fmt_double(e.second) << "\n";
    os << std::right;
    os << rep.summary() << "\n";
    os << "worst parameter: " << rep.worst.param << "[" << rep.worst.local_index
       << "] adjoint=" << fmt_double(rep.worst.adjoint) << " numeric=" << fmt_double(rep.worst.numeric) << "\n";
    write_text_atomic(c.out_dir() / "gradcheck.csv", grad_check_csv(rep));
    return rep.passed ? kExitOk : kExitCheckFailed;
}

inline int cmd_ablate(const RunConfig& c, std::ostream& os) {
    RunLock lock(c.out_dir());
    echo_config(c, "ablate");
    const Dataset data = load_dataset(c.dataset_path());
    RolloutSpec spec;
    spec.conditioning = c.eval.conditioning;
    spec.horizon = c.eval.horizon;
    spec.supervised_horizon = c.eval.protocol == "extrapolation" ? c.eval.supervised_horizon : 0;
    spec.split = c.eval.split;
    const auto csv = c.out_dir() / "ablation.csv";
    std::vector<AblationRow> done;
    auto on_row = [&](const AblationRow& r) {
        done.push_back(r);
        write_text_atomic(csv, ablation_csv(done));
        os << r.variant << " seed " << r.seed << " " << r.status << " rel_l2 " << fmt_double(r.metrics[0])
           << " (" << std::fixed << std::setprecision(1) << r.train_seconds << " s)\n"
           << std::defaultfloat;
        os.flush();
    };
    ablation_run(data, c.model, c.train, c.loss, spec, c.ablate.variants, c.ablate.wo_K, on_row);
    os << "wrote " << csv.string() << "\n";
    return kExitOk;
}

/// Run `fn`, mapping the error hierarchy to exit codes.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        err << "numerical divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "io error: " << e.what() << "\n";
        return kExitIo;
    }
}

inline int run_command(const std::string& name, const RunConfig& c, std::ostream& os) {
    if (name == "gen") return cmd_gen(c, os);
    if (name == "train") return cmd_train(c, os);
    if (name == "eval") return cmd_eval(c, os);
    if (name == "gradcheck") return cmd_gradcheck(c, os);
    if (name == "ablate") return cmd_ablate(c, os);
    throw ConfigError("unknown command '" + name + "'");
}

} // namespace ssp
