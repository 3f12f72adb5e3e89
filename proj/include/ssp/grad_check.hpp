#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ssp/params.hpp"

namespace ssp {

/// A differentiable scalar function of a ParamSet together with its
/// hand-written adjoint.
struct DiffOp {
    std::string name;
    std::function<double(const ParamSet&)> loss;
    /// Returns the loss and accumulates dL/dparams into grads (assumed zeroed).
    std::function<double(const ParamSet&, Grads&)> loss_and_grad;
};

struct ProbeResult {
    std::string param;
    std::size_t flat_index = 0;
    std::size_t local_index = 0;
    double adjoint = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct CheckReport {
    bool passed = false;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::vector<ProbeResult> probes;
    ProbeResult worst;
    std::string failure; // set when a loss evaluation was non-finite

    std::string summary() const {
        std::ostringstream os;
        os.precision(3);
        os << (passed ? "PASS" : "FAIL") << " probes=" << probes.size() << " max_rel_error=" << std::scientific
           << max_rel_error << " tol=" << tolerance << " worst=" << worst.param << "[" << worst.local_index << "]";
        if (!failure.empty()) os << " (" << failure << ")";
        return os.str();
    }
};

struct GradCheckOptions {
    std::uint64_t seed = 0;
    /// Gradients below this magnitude are compared on an absolute scale of
    /// `floor * tol`; a central difference cannot resolve relative error
    /// on values near roundoff.
    double floor = 1e-6;
    /// Restrict probes to tensors whose name starts with one of these prefixes.
    std::vector<std::string> only_prefixes;
};

inline double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compare the adjoint gradient of `op` with central differences
/// (L(p+eps) - L(p-eps)) / (2 eps) on `probe_count` randomly selected scalar
/// parameters. Probes cycle over the trainable tensors so that each tensor is
/// hit once before any is hit twice. `params` is restored on return.
inline CheckReport grad_check(const DiffOp& op, ParamSet& params, int probe_count, double eps, double tol,
                              const GradCheckOptions& opt = {}) {
    if (!(eps >= 1e-7 && eps <= 1e-4)) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-4]");
    if (probe_count < 1) throw ConfigError("grad_check: probe_count must be positive");

    CheckReport rep;
    rep.tolerance = tol;

    std::vector<ParamId> tensors;
    for (int id = 0; id < params.count(); ++id) {
        const auto& info = params.info(id);
        if (!info.trainable) continue;
        if (!opt.only_prefixes.empty() &&
            std::none_of(opt.only_prefixes.begin(), opt.only_prefixes.end(),
                         [&](const std::string& p) { return info.name.rfind(p, 0) == 0; }))
            continue;
        tensors.push_back(id);
    }
    if (tensors.empty()) throw ConfigError("grad_check: no trainable parameters to probe");

    Grads grads(params);
    const double base = op.loss_and_grad(params, grads);
    if (!std::isfinite(base)) {
        rep.failure = "non-finite loss at the base point";
        return rep;
    }

    Rng rng(opt.seed);
    std::vector<ParamId> order = tensors;
    rng.shuffle(order);
    auto& values = params.values();
    for (int p = 0; p < probe_count; ++p) {
        const ParamId id = order[static_cast<std::size_t>(p) % order.size()];
        const auto& info = params.info(id);
        const std::size_t local = rng.below(info.size);
        const std::size_t k = info.offset + local;
        const double saved = values[k];
        values[k] = saved + eps;
        const double up = op.loss(params);
        values[k] = saved - eps;
        const double down = op.loss(params);
        values[k] = saved;

        ProbeResult r{info.name, k, local, grads.values()[k], (up - down) / (2.0 * eps), 0.0};
        if (!std::isfinite(up) || !std::isfinite(down)) {
            rep.failure = "non-finite loss when probing " + info.name + "[" + std::to_string(local) + "]";
            rep.worst = r;
            rep.max_rel_error = INFINITY;
            rep.probes.push_back(r);
            return rep;
        }
        r.rel_error = relative_error(r.adjoint, r.numeric, opt.floor);
        if (rep.probes.empty() || r.rel_error > rep.max_rel_error) {
            rep.max_rel_error = r.rel_error;
            rep.worst = r;
        }
        rep.probes.push_back(r);
    }
    rep.passed = rep.max_rel_error <= tol;
    return rep;
}

} // namespace ssp
