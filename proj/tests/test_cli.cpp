#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssp/commands.hpp"

using namespace ssp;
namespace fs = std::filesystem;

namespace {

const std::string kSmall = R"(
[run]
seed = 3
out = OUT

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
)";

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("ssp_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string with_out(std::string text, const fs::path& out) {
    text.replace(text.find("OUT"), 3, out.string());
    return text;
}

/// Replace `key = ...` in [section] or append it when absent.
std::string set_key(const std::string& text, const std::string& section, const std::string& key,
                    const std::string& value) {
    IniDoc doc = parse_ini(text);
    doc.section(section).set(key, value);
    return write_ini(doc);
}

RunConfig small(const fs::path& out, const std::string& text = kSmall) {
    return parse_run_config(with_out(text, out), "small.ini");
}

std::string bytes(const fs::path& p) {
    const auto v = read_file(p);
    return std::string(v.begin(), v.end());
}

int run(const std::string& cmd, const RunConfig& c, std::string* out = nullptr) {
    std::ostringstream os, err;
    const int rc = guarded([&] { return run_command(cmd, c, os); }, err);
    if (out) *out = os.str() + err.str();
    return rc;
}

int expect_config_error(const std::string& text, const std::string& needle) {
    try {
        parse_run_config(text, "bad.ini");
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        return 1;
    }
    ADD_FAILURE() << "expected a ConfigError mentioning '" << needle << "'";
    return 0;
}

} // namespace

// --- configuration -------------------------------------------------------------------------

TEST(Config, ShippedConfigsParse) {
    for (const char* name : {"heat.ini", "heat_extrapolation.ini", "rd_ablation.ini", "gradcheck.ini"}) {
        const fs::path p = fs::path(SSP_SOURCE_DIR) / "configs" / name;
        EXPECT_NO_THROW(load_run_config(p)) << name;
    }
    const RunConfig rd = load_run_config(fs::path(SSP_SOURCE_DIR) / "configs" / "rd_ablation.ini");
    EXPECT_EQ(rd.model.d_u, 2);
    EXPECT_EQ(rd.ablate.variants, (std::vector<Variant>{Variant::wo_K, Variant::wo_G}));
}

TEST(Config, EchoRoundTripsExactly) {
    for (const char* name : {"heat.ini", "heat_extrapolation.ini", "rd_ablation.ini", "gradcheck.ini"}) {
        const RunConfig a = load_run_config(fs::path(SSP_SOURCE_DIR) / "configs" / name);
        const std::string echo = write_run_config(a);
        const RunConfig b = parse_run_config(echo, "echo");
        EXPECT_TRUE(a == b) << name;
        EXPECT_EQ(write_run_config(b), echo) << name;
    }
    RunConfig c = small("x");
    c.pde.dt = 0.1 + 0.2; // not representable in short decimal form
    c.ablate.variants.clear();
    c.loss.orth = 1.0 / 3.0;
    const RunConfig d = parse_run_config(write_run_config(c), "echo");
    EXPECT_TRUE(c == d);
}

TEST(Config, SeedPropagatesToDatasetAndTraining) {
    const RunConfig c = small("x");
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.data.seed_base, 3u);
    EXPECT_EQ(c.train.seed, 3u);
    EXPECT_EQ(c.model.Nx, 8);
    EXPECT_EQ(c.model.d_u, 1);
}

TEST(Config, RejectsUnknownKeysAndSections) {
    expect_config_error(kSmall + "\n[extra]\na = 1\n", "unknown section [extra]");
    expect_config_error(set_key(kSmall, "model", "Cs", "4"), "unknown key 'Cs'");
    expect_config_error(set_key(kSmall, "train", "seed", "4"), "[run]");
}

TEST(Config, ReportsLineNumbers) {
    const std::string text = "[run]\nseed = 1\n\n[pde]\nkind = heat\nnu = 0.05\ndt = fast\n";
    expect_config_error(text, "bad.ini:7");
}

TEST(Config, PhysicsFieldsMustBeExplicit) {
    for (const auto& [section, key] : std::vector<std::pair<std::string, std::string>>{
             {"pde", "dt"}, {"pde", "nu"}, {"model", "T"}, {"model", "mx"}, {"model", "my"}}) {
        IniDoc doc = parse_ini(kSmall);
        auto& e = doc.section(section).entries;
        e.erase(std::remove_if(e.begin(), e.end(), [&](const IniEntry& x) { return x.key == key; }), e.end());
        expect_config_error(write_ini(doc), "'" + key + "'");
    }
    expect_config_error("[pde]\nkind = heat\n", "missing required section [run]");
}

TEST(Config, RevalidatesCrossFieldConstraints) {
    expect_config_error(set_key(kSmall, "dataset", "nx", "9"), "");
    expect_config_error(set_key(kSmall, "model", "d_u", "2"), "d_u");
    expect_config_error(set_key(kSmall, "model", "Nx", "16"), "Nx");
    expect_config_error(set_key(kSmall, "model", "C_z", "4"), "C_z");
    expect_config_error(set_key(kSmall, "eval", "conditioning", "5"), "multiple of T");
    expect_config_error(set_key(kSmall, "eval", "protocol", "extrapolation"), "supervised_horizon");
    expect_config_error(set_key(kSmall, "loss", "lat", "-1"), "nonnegative");
    expect_config_error(set_key(kSmall, "ablate", "variants", "wo_K, wo_Q"), "wo_Q");
}

// --- commands ------------------------------------------------------------------------------

TEST(Commands, GenIsDeterministicAndSummarizesTheHeader) {
    const auto a = scratch("gen_a"), b = scratch("gen_b");
    std::string out;
    ASSERT_EQ(run("gen", small(a), &out), kExitOk) << out;
    ASSERT_EQ(run("gen", small(b)), kExitOk);
    EXPECT_EQ(bytes(a / "dataset.sspd"), bytes(b / "dataset.sspd"));
    const Dataset d = load_dataset(a / "dataset.sspd");
    EXPECT_NE(out.find(dataset_summary(d)), std::string::npos) << out;
    EXPECT_NE(out.find("crc32 " + hex32(file_crc32(a / "dataset.sspd"))), std::string::npos);
    EXPECT_NE(out.find("n_traj=5 n_train=3 n_test=2 L_total=24"), std::string::npos) << out;
    // The echoed config re-parses to the same run.
    EXPECT_TRUE(parse_run_config(read_text(a / "gen_config.ini"), "echo") == small(a));
}

TEST(Commands, TrainWritesLogAndResumesBitwise) {
    const auto a = scratch("train_a"), b = scratch("train_b");
    ASSERT_EQ(run("gen", small(a)), kExitOk);
    std::string out;
    ASSERT_EQ(run("train", small(a), &out), kExitOk) << out;
    ASSERT_TRUE(fs::exists(a / "checkpoint.sspc"));
    ASSERT_TRUE(fs::exists(a / "checkpoint_epoch1.sspc"));
    std::istringstream log(read_text(a / "train_log.csv"));
    std::string header, row;
    std::getline(log, header);
    EXPECT_EQ(header, "epoch,L_rec,L_lat,L_phy,L_norm,L_orth,total,wall_seconds");
    int rows = 0;
    while (std::getline(log, row)) ++rows;
    EXPECT_EQ(rows, 2);

    // Resume from epoch 1 in a second directory.
    fs::create_directories(b);
    fs::copy_file(a / "dataset.sspd", b / "dataset.sspd");
    const std::string resume = set_key(kSmall, "train", "resume", (a / "checkpoint_epoch1.sspc").string());
    ASSERT_EQ(run("train", small(b, resume), &out), kExitOk) << out;
    EXPECT_EQ(bytes(a / "checkpoint.sspc"), bytes(b / "checkpoint.sspc"));
}

TEST(Commands, TrainRefusesMismatchedDataset) {
    const auto a = scratch("mismatch");
    std::string rd = set_key(kSmall, "pde", "kind", "reaction-diffusion");
    rd = set_key(rd, "pde", "dt", "5e-3");
    ASSERT_EQ(run("gen", small(a, rd)), kExitOk);
    std::string out;
    EXPECT_EQ(run("train", small(a), &out), kExitConfig);
    EXPECT_NE(out.find("d_u"), std::string::npos) << out;
}

TEST(Commands, EvalOracleIsZeroAndPlotCoversEverySeries) {
    const auto a = scratch("eval_oracle");
    ASSERT_EQ(run("gen", small(a)), kExitOk);
    std::string text = set_key(kSmall, "eval", "forecaster", "oracle");
    text = set_key(text, "eval", "protocol", "extrapolation");
    text = set_key(text, "eval", "horizon", "18");
    text = set_key(text, "eval", "supervised_horizon", "10");
    ASSERT_EQ(run("eval", small(a, text)), kExitOk);
    std::istringstream csv(read_text(a / "metrics_extrapolation.csv"));
    std::string line;
    std::getline(csv, line);
    const auto columns = split(line, ',');
    std::vector<std::string> steps;
    while (std::getline(csv, line)) {
        const auto f = split(line, ',');
        steps.push_back(f[0]);
        for (std::size_t k = 1; k < f.size(); ++k) EXPECT_EQ(f[k], "0") << line;
    }
    EXPECT_EQ(steps, (std::vector<std::string>{"11", "12", "13", "14", "15", "16", "17", "18", "mean"}));
    const std::string svg = read_text(a / "metrics_extrapolation.svg");
    for (std::size_t k = 1; k < columns.size(); ++k) {
        EXPECT_NE(svg.find("<!-- data " + columns[k] + ":"), std::string::npos) << columns[k];
        EXPECT_NE(svg.find("id=\"" + columns[k] + "\""), std::string::npos) << columns[k];
    }
}

TEST(Commands, EvalNeedsACheckpointAndIsDeterministic) {
    const auto a = scratch("eval_model");
    ASSERT_EQ(run("gen", small(a)), kExitOk);
    std::string out;
    EXPECT_EQ(run("eval", small(a), &out), kExitIo);
    EXPECT_NE(out.find("checkpoint"), std::string::npos) << out;
    ASSERT_EQ(run("train", small(a)), kExitOk);
    ASSERT_EQ(run("eval", small(a)), kExitOk);
    const std::string first = bytes(a / "metrics_rollout.csv");
    ASSERT_EQ(run("eval", small(a)), kExitOk);
    EXPECT_EQ(bytes(a / "metrics_rollout.csv"), first);
}

TEST(Commands, GradcheckPassesAndCatchesInjectedFault) {
    const auto a = scratch("gradcheck");
    std::string text = set_key(kSmall, "gradcheck", "probes", "60");
    std::string out;
    EXPECT_EQ(run("gradcheck", small(a, text), &out), kExitOk) << out;
    EXPECT_NE(out.find("PASS"), std::string::npos);
    EXPECT_TRUE(fs::exists(a / "gradcheck.csv"));
    text = set_key(text, "gradcheck", "fault", "true");
    EXPECT_EQ(run("gradcheck", small(a, text), &out), kExitCheckFailed) << out;
    EXPECT_NE(out.find("FAIL"), std::string::npos);
    EXPECT_NE(out.find("worst parameter: enc."), std::string::npos) << out;
}

TEST(Commands, GradcheckAtExactInitialization) {
    // Without jitter every term except the alignment penalty checks cleanly:
    // with a zero closure increment the penalty varies on a parameter scale
    // of sqrt(orth_eps), below what a 1e-5 central difference resolves.
    const auto a = scratch("gradcheck_init");
    std::string text = set_key(kSmall, "gradcheck", "probes", "80");
    text = set_key(text, "gradcheck", "perturb", "0");
    std::string out;
    EXPECT_EQ(run("gradcheck", small(a, set_key(text, "loss", "orth", "0")), &out), kExitOk) << out;
    EXPECT_EQ(run("gradcheck", small(a, text), &out), kExitCheckFailed) << out;
    EXPECT_NE(out.find("worst=prop.closure.conv2"), std::string::npos) << out;
}

TEST(Commands, AblateEmitsOneRowPerVariant) {
    const auto a = scratch("ablate");
    ASSERT_EQ(run("gen", small(a)), kExitOk);
    const std::string text = set_key(kSmall, "ablate", "variants", "wo_K, wo_G, wo_PR");
    std::string out;
    ASSERT_EQ(run("ablate", small(a, text), &out), kExitOk) << out;
    std::istringstream csv(read_text(a / "ablation.csv"));
    std::string line;
    std::getline(csv, line);
    std::vector<std::string> variants;
    while (std::getline(csv, line)) {
        const auto f = split(line, ',');
        variants.push_back(f[0]);
        EXPECT_EQ(f[1], "3");
        EXPECT_EQ(f[2], "ok");
    }
    EXPECT_EQ(variants, (std::vector<std::string>{"full", "wo_K", "wo_G", "wo_PR"}));
}

TEST(Commands, LockFileExcludesConcurrentRuns) {
    const auto a = scratch("lock");
    RunLock held(a);
    std::string out;
    EXPECT_EQ(run("gen", small(a), &out), kExitIo);
    EXPECT_NE(out.find("locked"), std::string::npos) << out;
}

TEST(Commands, ExitCodesFollowTheErrorKind) {
    std::ostringstream err;
    EXPECT_EQ(guarded([]() -> int { throw ConfigError("c"); }, err), kExitConfig);
    EXPECT_EQ(guarded([]() -> int { throw ShapeError("s"); }, err), kExitConfig);
    EXPECT_EQ(guarded([]() -> int { throw DivergenceError("d"); }, err), kExitDivergence);
    EXPECT_EQ(guarded([]() -> int { throw IoError("i"); }, err), kExitIo);
}

// --- binary --------------------------------------------------------------------------------

namespace {

int run_binary(const std::string& args) {
    const std::string cmd = std::string(SSP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    fs::create_directories(dir);
    const auto p = dir / "run.ini";
    std::ofstream(p) << text;
    return p;
}

} // namespace

TEST(Binary, ExitCodes) {
    const auto dir = scratch("binary");
    const auto good = write_config(dir / "cfg", with_out(kSmall, dir / "out"));
    EXPECT_EQ(run_binary("--config " + good.string() + " --threads 2 gen"), kExitOk);
    EXPECT_TRUE(fs::exists(dir / "out" / "dataset.sspd"));
    // --out and --seed override the file.
    EXPECT_EQ(run_binary("--config " + good.string() + " --out " + (dir / "out2").string() + " --seed 9 gen"), kExitOk);
    EXPECT_EQ(load_dataset(dir / "out2" / "dataset.sspd").seed_base, 9u);
    EXPECT_NE(bytes(dir / "out" / "dataset.sspd"), bytes(dir / "out2" / "dataset.sspd"));

    const auto bad = write_config(dir / "bad", with_out(set_key(kSmall, "dataset", "nx", "7"), dir / "out"));
    EXPECT_EQ(run_binary("--config " + bad.string() + " gen"), kExitConfig);
    EXPECT_EQ(run_binary("--config " + good.string() + " frobnicate"), kExitConfig);
    EXPECT_EQ(run_binary("--config " + good.string() + " eval"), kExitIo);

    std::string div = set_key(kSmall, "model", "dtau", "1e300");
    div = set_key(div, "train", "lr", "0.5");
    const auto diverging = write_config(dir / "div", with_out(div, dir / "out"));
    EXPECT_EQ(run_binary("--config " + diverging.string() + " train"), kExitDivergence);
}

TEST(Binary, MatchesInProcessCommandsBitwise) {
    // The library is compiled separately into the CLI and into this test;
    // both builds must produce the same bytes.
    const auto dir = scratch("cross");
    const auto cfg = write_config(dir / "cfg", with_out(kSmall, dir / "cli"));
    for (const char* cmd : {"gen", "train", "eval", "gradcheck"})
        ASSERT_EQ(run_binary("--config " + cfg.string() + " " + cmd), kExitOk) << cmd;
    RunConfig c = small(dir / "lib");
    c.finalize();
    for (const char* cmd : {"gen", "train", "eval", "gradcheck"}) ASSERT_EQ(run(cmd, c), kExitOk) << cmd;
    for (const char* name : {"dataset.sspd", "checkpoint.sspc", "metrics_rollout.csv", "gradcheck.csv"})
        EXPECT_EQ(bytes(dir / "cli" / name), bytes(dir / "lib" / name)) << name;
}
