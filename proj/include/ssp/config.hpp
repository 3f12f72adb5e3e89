#pragma once

// Run configuration: one INI file describing an experiment.
//
//   [run]        seed, out, dataset, checkpoint
//   [pde]        kind, dt, nu (explicit), solver coefficients
//   [dataset]    nx, ny, n_train, n_test, L_total
//   [model]      T, mx, my (explicit), architecture
//   [train]      optimizer and schedule
//   [loss]       term weights
//   [eval]       protocol, conditioning, horizon, supervised_horizon, split, forecaster, plot
//   [ablate]     variants, wo_K
//   [gradcheck]  probes, eps, tol, floor, perturb, fault
//
// [run], [pde], [dataset] and [model] are required; the others fall back to
// defaults. Unknown sections and keys are rejected. Relative dataset and
// checkpoint paths resolve against the output directory.

#include <filesystem>
#include <string>
#include <vector>

#include "ssp/datagen.hpp"
#include "ssp/evaluation.hpp"
#include "ssp/io.hpp"
#include "ssp/model.hpp"
#include "ssp/training.hpp"

namespace ssp {

struct EvalConfig {
    std::string protocol = "rollout"; // rollout | extrapolation
    int conditioning = 10;
    int horizon = 20;
    int supervised_horizon = 0;
    Split split = Split::test;
    std::string forecaster = "model"; // model | oracle
    bool plot = true;

    bool operator==(const EvalConfig&) const = default;
};

struct AblateConfig {
    std::vector<Variant> variants = {Variant::wo_K, Variant::wo_G};
    WithoutK wo_K = WithoutK::zero_increment;

    bool operator==(const AblateConfig&) const = default;
};

struct GradCheckConfig {
    int probes = 200;
    double eps = 1e-5;
    double tol = 1e-4;
    double floor = 1e-6;
    /// Std of Gaussian noise added to the initial parameters. The closure
    /// starts at exactly zero, where the alignment penalty is flat to within
    /// its epsilon and central differences cannot resolve it; a small jitter
    /// moves the check to a generic point.
    double perturb = 0.01;
    bool fault = false;   // flip the projector adjoint to exercise failure reporting

    bool operator==(const GradCheckConfig&) const = default;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "run";
    std::string dataset = "dataset.sspd";
    std::string checkpoint = "checkpoint.sspc";
    PDESpec pde;
    GenOptions data;
    ModelConfig model;
    TrainConfig train;
    LossWeights loss;
    EvalConfig eval;
    AblateConfig ablate;
    GradCheckConfig gradcheck;

    std::filesystem::path out_dir() const { return out; }
    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path q(p);
        return q.is_absolute() ? q : out_dir() / q;
    }
    std::filesystem::path dataset_path() const { return resolve(dataset); }
    std::filesystem::path checkpoint_path() const { return resolve(checkpoint); }

    /// Propagate the run seed and re-check every cross-field constraint.
    void finalize() {
        data.seed_base = seed;
        train.seed = seed;
        validate();
    }

    void validate() const {
        pde.validate();
        check_grid_dims(data.nx, data.ny);
        if (data.n_train < 0 || data.n_test < 0 || data.n_train + data.n_test < 1)
            throw ConfigError("dataset: need at least one trajectory");
        if (data.L_total < 1) throw ConfigError("dataset: L_total must be positive");
        model.validate();
        if (model.d_u != pde.channels())
            throw ConfigError("model: d_u=" + std::to_string(model.d_u) + " but the " + to_string(pde.kind) +
                              " system has " + std::to_string(pde.channels()) + " channel(s)");
        if (model.Nx != data.nx || model.Ny != data.ny)
            throw ConfigError("model: Nx, Ny must match the dataset resolution");
        train.validate();
        loss.validate();
        if (eval.protocol != "rollout" && eval.protocol != "extrapolation")
            throw ConfigError("eval: protocol must be rollout or extrapolation");
        if (eval.forecaster != "model" && eval.forecaster != "oracle")
            throw ConfigError("eval: forecaster must be model or oracle");
        if (eval.conditioning < model.T || eval.conditioning % model.T != 0)
            throw ConfigError("eval: conditioning must be a positive multiple of T");
        if (eval.horizon < 1) throw ConfigError("eval: horizon must be positive");
        if (eval.protocol == "extrapolation" && (eval.supervised_horizon < 1 || eval.supervised_horizon >= eval.horizon))
            throw ConfigError("eval: extrapolation needs 0 < supervised_horizon < horizon");
        if (eval.protocol == "rollout" && eval.supervised_horizon != 0)
            throw ConfigError("eval: supervised_horizon applies to the extrapolation protocol only");
        if (gradcheck.probes < 1) throw ConfigError("gradcheck: probes must be positive");
        if (!(gradcheck.eps >= 1e-7 && gradcheck.eps <= 1e-4)) throw ConfigError("gradcheck: eps must lie in [1e-7, 1e-4]");
        if (!(gradcheck.tol > 0.0) || !(gradcheck.floor > 0.0) || !(gradcheck.perturb >= 0.0))
            throw ConfigError("gradcheck: tol and floor must be positive, perturb nonnegative");
    }

    bool operator==(const RunConfig&) const = default;
};

inline std::string to_string(WithoutK m) { return m == WithoutK::identity ? "identity" : "zero_increment"; }

inline WithoutK parse_without_k(const std::string& s) {
    if (s == "zero_increment") return WithoutK::zero_increment;
    if (s == "identity") return WithoutK::identity;
    throw ConfigError("ablate: wo_K must be zero_increment or identity (got '" + s + "')");
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ConfigError("eval: split must be train or test (got '" + s + "')");
}

inline RunConfig parse_run_config(const std::string& text, const std::string& source) {
    const IniDoc doc = parse_ini(text, source);
    static const std::vector<std::string> known = {"run",  "pde",  "dataset", "model",    "train",
                                                   "loss", "eval", "ablate",  "gradcheck"};
    for (const auto& s : doc.sections)
        if (std::find(known.begin(), known.end(), s.name) == known.end())
            throw ConfigError(source + ":" + std::to_string(s.line) + ": unknown section [" + s.name + "]");
    auto required = [&](const char* name) {
        const IniSection* s = doc.find(name);
        if (!s) throw ConfigError(source + ": missing required section [" + std::string(name) + "]");
        return s;
    };

    RunConfig c;
    SectionReader run(required("run"), "run", source);
    c.seed = run.u64("seed");
    c.out = run.str("out", c.out);
    c.dataset = run.str("dataset", c.dataset);
    c.checkpoint = run.str("checkpoint", c.checkpoint);
    run.finish();

    SectionReader pde(required("pde"), "pde", source);
    c.pde = read_pde(pde, true);
    pde.finish();

    SectionReader ds(required("dataset"), "dataset", source);
    c.data.nx = static_cast<int>(ds.integer("nx"));
    c.data.ny = static_cast<int>(ds.integer("ny"));
    c.data.n_train = static_cast<int>(ds.integer("n_train", c.data.n_train));
    c.data.n_test = static_cast<int>(ds.integer("n_test", c.data.n_test));
    c.data.L_total = static_cast<int>(ds.integer("L_total", c.data.L_total));
    ds.finish();

    const IniSection* msec = required("model");
    SectionReader mr(msec, "model", source);
    c.model = read_model_config(mr, true);
    if (!msec->find("d_u")) c.model.d_u = c.pde.channels();
    if (!msec->find("Nx")) c.model.Nx = c.data.nx;
    if (!msec->find("Ny")) c.model.Ny = c.data.ny;
    mr.finish();

    const IniSection* tsec = doc.find("train");
    if (tsec && tsec->find("seed"))
        throw ConfigError(source + ":" + std::to_string(tsec->find("seed")->line) +
                          ": the training seed is set by 'seed' in [run]");
    SectionReader tr(tsec, "train", source);
    c.train = read_train_config(tr);
    tr.finish();

    SectionReader lr(doc.find("loss"), "loss", source);
    c.loss = read_loss_weights(lr);
    lr.finish();

    SectionReader er(doc.find("eval"), "eval", source);
    c.eval.protocol = er.str("protocol", c.eval.protocol);
    c.eval.conditioning = static_cast<int>(er.integer("conditioning", c.eval.conditioning));
    c.eval.horizon = static_cast<int>(er.integer("horizon", c.eval.horizon));
    c.eval.supervised_horizon = static_cast<int>(er.integer("supervised_horizon", c.eval.supervised_horizon));
    c.eval.split = parse_split(er.str("split", to_string(c.eval.split)));
    c.eval.forecaster = er.str("forecaster", c.eval.forecaster);
    c.eval.plot = er.boolean("plot", c.eval.plot);
    er.finish();

    SectionReader ar(doc.find("ablate"), "ablate", source);
    if (ar.has("variants")) {
        c.ablate.variants.clear();
        for (const auto& v : split(ar.str("variants"), ','))
            if (!v.empty()) c.ablate.variants.push_back(parse_variant(v));
    }
    c.ablate.wo_K = parse_without_k(ar.str("wo_K", to_string(c.ablate.wo_K)));
    ar.finish();

    SectionReader gr(doc.find("gradcheck"), "gradcheck", source);
    c.gradcheck.probes = static_cast<int>(gr.integer("probes", c.gradcheck.probes));
    c.gradcheck.eps = gr.num("eps", c.gradcheck.eps);
    c.gradcheck.tol = gr.num("tol", c.gradcheck.tol);
    c.gradcheck.floor = gr.num("floor", c.gradcheck.floor);
    c.gradcheck.perturb = gr.num("perturb", c.gradcheck.perturb);
    c.gradcheck.fault = gr.boolean("fault", c.gradcheck.fault);
    gr.finish();

    try {
        c.finalize();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& p) {
    std::string text;
    try {
        text = read_text(p);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    return parse_run_config(text, p.string());
}

/// Every field written explicitly, so the echo re-parses to the same RunConfig.
inline std::string write_run_config(const RunConfig& c) {
    IniDoc doc;
    auto& run = doc.section("run");
    run.set("seed", std::to_string(c.seed));
    run.set("out", c.out);
    run.set("dataset", c.dataset);
    run.set("checkpoint", c.checkpoint);
    write_pde(c.pde, doc.section("pde"));
    auto& ds = doc.section("dataset");
    ds.set("nx", std::to_string(c.data.nx));
    ds.set("ny", std::to_string(c.data.ny));
    ds.set("n_train", std::to_string(c.data.n_train));
    ds.set("n_test", std::to_string(c.data.n_test));
    ds.set("L_total", std::to_string(c.data.L_total));
    write_model_config(c.model, doc.section("model"));
    auto& tr = doc.section("train");
    write_train_config(c.train, tr);
    tr.entries.erase(std::remove_if(tr.entries.begin(), tr.entries.end(), [](const IniEntry& e) { return e.key == "seed"; }),
                     tr.entries.end());
    write_loss_weights(c.loss, doc.section("loss"));
    auto& ev = doc.section("eval");
    ev.set("protocol", c.eval.protocol);
    ev.set("conditioning", std::to_string(c.eval.conditioning));
    ev.set("horizon", std::to_string(c.eval.horizon));
    ev.set("supervised_horizon", std::to_string(c.eval.supervised_horizon));
    ev.set("split", to_string(c.eval.split));
    ev.set("forecaster", c.eval.forecaster);
    ev.set("plot", c.eval.plot ? "true" : "false");
    auto& ab = doc.section("ablate");
    std::string vs;
    for (Variant v : c.ablate.variants) vs += (vs.empty() ? "" : ",") + to_string(v);
    ab.set("variants", vs);
    ab.set("wo_K", to_string(c.ablate.wo_K));
    auto& gc = doc.section("gradcheck");
    gc.set("probes", std::to_string(c.gradcheck.probes));
    gc.set("eps", fmt_double(c.gradcheck.eps));
    gc.set("tol", fmt_double(c.gradcheck.tol));
    gc.set("floor", fmt_double(c.gradcheck.floor));
    gc.set("perturb", fmt_double(c.gradcheck.perturb));
    gc.set("fault", c.gradcheck.fault ? "true" : "false");
    return write_ini(doc);
}

} // namespace ssp
