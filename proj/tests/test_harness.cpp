#include "qlbgk/config.hpp"
#include "qlbgk/harness.hpp"
#include "qlbgk/report.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace qlbgk;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kSource{QLBGK_SOURCE_DIR};

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("qlbgk-test-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json minimal() {
    return json{{"schema_version", 1},
                {"grid", {{"n_points", 8}}},
                {"epsilon", 0.5},
                {"dt", 0.05},
                {"t_final", 0.1}};
}

std::string field_of(const json& j) {
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "<accepted>";
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
    args.insert(args.begin(), "qlbgk");
    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text != nullptr) *out_text = out.str();
    if (err_text != nullptr) *err_text = err.str();
    return rc;
}

fs::path write_config(const fs::path& dir, const json& j) {
    const fs::path p = dir / "config.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

}  // namespace

TEST(Config, DefaultsFromMinimalDocument) {
    const RunConfig c = parse_config(minimal());
    EXPECT_EQ(c.grid.n_points, 8);
    EXPECT_DOUBLE_EQ(c.grid.length, 2 * std::numbers::pi);
    EXPECT_EQ(c.grid.method, DiffMethod::spectral);
    EXPECT_EQ(c.solver.quadrature, SourceQuadrature::midpoint);
    EXPECT_EQ(c.initial.kind, InitialStateSpec::Kind::equilibrium);
}

TEST(Config, RejectsUnknownKeysWithFieldPath) {
    json j = minimal();
    j["grid"]["npoints"] = 8;
    EXPECT_EQ(field_of(j), "grid.npoints");
    j = minimal();
    j["initial"] = {{"kind", "equilibrium"}, {"density", {{"kind", "cosine"}, {"amplitude", 0.3}, {"phase", 1}}}};
    EXPECT_EQ(field_of(j), "initial.density.phase");
    j = minimal();
    j["extra"] = true;
    EXPECT_EQ(field_of(j), "extra");
}

TEST(Config, ValidatesValues) {
    json j = minimal();
    j.erase("schema_version");
    EXPECT_EQ(field_of(j), "schema_version");
    j = minimal();
    j["schema_version"] = 2;
    EXPECT_EQ(field_of(j), "schema_version");
    j = minimal();
    j["epsilon"] = -1.0;
    EXPECT_EQ(field_of(j), "epsilon");
    j = minimal();
    j["dt"] = "small";
    EXPECT_EQ(field_of(j), "dt");
    j = minimal();
    j["grid"]["n_points"] = 1;
    EXPECT_EQ(field_of(j), "grid.n_points");
    j = minimal();
    j["solver"] = {{"quadrature", "simpson"}};
    EXPECT_EQ(field_of(j), "solver.quadrature");
    j = minimal();
    j["sweep"] = {{"dts", {0.01, -0.02}}};
    EXPECT_EQ(field_of(j), "sweep.dts[1]");
    j = minimal();
    j["potential"] = {{"kind", "table"}, {"values", {1.0, 2.0}}};
    EXPECT_EQ(field_of(j), "potential.values");
    j = minimal();
    j["seed"] = -3;
    EXPECT_EQ(field_of(j), "seed");
    EXPECT_EQ(field_of(minimal()), "<accepted>");
}

TEST(Config, ShippedConfigsParse) {
    for (const auto& entry : fs::directory_iterator(kSource / "configs")) {
        EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
    }
    EXPECT_THROW(load_config((kSource / "tests/data/unknown-key.json").string()), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, BuildsDensityAndPotential) {
    json j = minimal();
    j["potential"] = {{"kind", "cosine"}, {"amplitude", 0.3}, {"mode", 2}};
    j["initial"] = {{"kind", "equilibrium"}, {"density", {{"kind", "cosine"}, {"amplitude", 0.4}}}};
    const RunConfig c = parse_config(j);
    const PhysicalSetup s = build_setup(c);
    EXPECT_NEAR(s.hamiltonians.potential(0), 0.3, 1e-15);
    const Eigen::VectorXd n = build_density(c.initial.density, s.grid);
    EXPECT_NEAR(s.spacing() * n.sum(), 1.0, 1e-14);
    EXPECT_NEAR(n(0), 1.4 / s.grid.length, 1e-14);
}

TEST(Config, IllPreparedStateIsSeeded) {
    json j = minimal();
    j["initial"] = {{"kind", "ill-prepared"}, {"mixture_weight", 0.3}};
    j["seed"] = 1234;
    const RunConfig c = parse_config(j);
    const PhysicalSetup s = build_setup(c);
    const CMatrix a = build_initial_state(c, s), b = build_initial_state(c, s);
    EXPECT_EQ(max_abs(a - b), 0.0);
    EXPECT_NEAR(a.trace().real(), 1.0, 1e-12);
    EXPECT_GE(min_eigenvalue(a), -1e-14);
    j["seed"] = 1235;
    EXPECT_GT(max_abs(build_initial_state(parse_config(j), s) - a), 1e-3);
}

TEST(Report, DoublesRoundTripExactly) {
    const fs::path dir = fresh_dir("roundtrip");
    const std::vector<double> times{0.0, 0.1, 1.0 / 3.0};
    std::vector<Eigen::VectorXd> dens;
    for (int k = 0; k < 3; ++k) dens.push_back(Eigen::VectorXd::LinSpaced(4, std::numbers::pi, k + std::exp(1.0)));
    dens[1](2) = 1e-300;
    dens[2](3) = -0.0;
    write_density_series(dir / "d.csv", times, dens);
    const CsvTable t = read_csv(dir / "d.csv");
    ASSERT_EQ(t.header.size(), 5u);
    EXPECT_EQ(t.header[0], "time");
    EXPECT_EQ(t.header[1], "n_0");
    ASSERT_EQ(t.rows.size(), 3u);
    for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(t.rows[k][0], times[k]);
        for (int i = 0; i < 4; ++i) EXPECT_EQ(t.rows[k][i + 1], dens[k](i));
    }
    EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

TEST(Report, EmptyTablesHaveHeaderOnly) {
    const fs::path dir = fresh_dir("empty");
    write_diagnostics(dir / "diag.csv", {});
    const CsvTable t = read_csv(dir / "diag.csv");
    EXPECT_EQ(t.header, diagnostics_columns());
    EXPECT_EQ(t.header.size(), 13u);
    EXPECT_TRUE(t.rows.empty());
    write_sweep(dir / "sweep.csv", {});
    EXPECT_EQ(read_csv(dir / "sweep.csv").header,
              (std::vector<std::string>{"epsilon", "dt", "max_l1_density_error", "max_e2_operator_error",
                                        "fitted_order"}));
}

TEST(Report, UnwritableDirectoryIsAnIoError) {
    const fs::path dir = fresh_dir("io");
    std::ofstream(dir / "file") << "x";
    EXPECT_THROW(write_json(dir / "file" / "sub" / "a.json", json::object()), IoError);
}

TEST(ParallelFor, CoversEveryIndexAndRethrowsLowest) {
    for (int workers : {1, 3}) {
        std::vector<std::atomic<int>> hits(50);
        parallel_for(50, workers, [&](std::size_t i) { hits[i]++; });
        for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
        try {
            parallel_for(20, workers, [](std::size_t i) {
                if (i == 7 || i == 13) throw std::runtime_error(std::to_string(i));
            });
            FAIL() << "no exception";
        } catch (const std::runtime_error& e) {
            EXPECT_STREQ(e.what(), "7");
        }
    }
}

TEST(Cli, FixedPointConfigKeepsConstantDensity) {
    const fs::path dir = fresh_dir("fixed");
    std::string out;
    ASSERT_EQ(cli({"run-ap", "-c", (kSource / "configs/equilibrium-fixed-point.json").string(), "-o", dir.string()},
                  &out),
              kExitOk);
    const CsvTable t = read_csv(dir / "densities.csv");
    ASSERT_EQ(t.rows.size(), 101u);
    const double nbar = 1.0 / (2 * std::numbers::pi);
    for (const auto& row : t.rows) {
        for (std::size_t i = 1; i < row.size(); ++i) EXPECT_NEAR(row[i], nbar, 1e-9);
    }
    const json summary = json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(summary["steps"], 100);
    EXPECT_EQ(summary["positivity_violations"], 0);
    EXPECT_EQ(read_csv(dir / "diagnostics.csv").rows.size(), 100u);
}

TEST(Cli, RunsAreBitwiseDeterministic) {
    json j = minimal();
    j["initial"] = {{"kind", "ill-prepared"}};
    j["seed"] = 77;
    const fs::path a = fresh_dir("det-a"), b = fresh_dir("det-b");
    const fs::path cfg = write_config(a, j);
    ASSERT_EQ(cli({"run-ap", "-c", cfg.string(), "-o", a.string()}), kExitOk);
    ASSERT_EQ(cli({"run-ap", "-c", cfg.string(), "-o", b.string()}), kExitOk);
    EXPECT_EQ(slurp(a / "densities.csv"), slurp(b / "densities.csv"));
    EXPECT_EQ(slurp(a / "diagnostics.csv"), slurp(b / "diagnostics.csv"));
}

TEST(Cli, OtherModesWriteTheirTables) {
    json j = minimal();
    j["initial"] = {{"kind", "ill-prepared"}};
    j["sweep"] = {{"epsilons", {0.5}}, {"dts", {0.05, 0.025}}, {"workers", 1}};
    j["lemma"] = {{"epsilons", {0.5}}, {"gaps", {0.05, 0.025}}, {"start", 0.0}};
    const fs::path dir = fresh_dir("modes");
    const fs::path cfg = write_config(dir, j);
    ASSERT_EQ(cli({"run-split", "-c", cfg.string(), "-o", (dir / "split").string()}), kExitOk);
    EXPECT_EQ(read_csv(dir / "split/densities.csv").rows.size(), 3u);
    ASSERT_EQ(cli({"run-qdd", "-c", cfg.string(), "-o", (dir / "qdd").string()}), kExitOk);
    EXPECT_EQ(read_csv(dir / "qdd/densities.csv").rows.size(), 3u);
    ASSERT_EQ(cli({"sweep", "-c", cfg.string(), "-o", (dir / "sweep").string(), "-j", "2"}), kExitOk);
    const CsvTable sweep = read_csv(dir / "sweep/errors.csv");
    ASSERT_EQ(sweep.rows.size(), 2u);
    EXPECT_EQ(sweep.rows[0][4], sweep.rows[1][4]);
    ASSERT_EQ(cli({"check-lemma", "-c", cfg.string(), "-o", (dir / "lemma").string()}), kExitOk);
    EXPECT_EQ(read_csv(dir / "lemma/lemma.csv").rows.size(), 2u);
}

TEST(Cli, EnvironmentOverridesConfigDirectory) {
    const fs::path dir = fresh_dir("env");
    json j = minimal();
    j["output"] = {{"directory", (dir / "from-config").string()}};
    const fs::path cfg = write_config(dir, j);
    ASSERT_EQ(setenv(kOutputDirEnv, (dir / "from-env").string().c_str(), 1), 0);
    const int rc = cli({"run-ap", "-c", cfg.string()});
    unsetenv(kOutputDirEnv);
    ASSERT_EQ(rc, kExitOk);
    EXPECT_TRUE(fs::exists(dir / "from-env/densities.csv"));
    EXPECT_FALSE(fs::exists(dir / "from-config"));
    ASSERT_EQ(cli({"run-ap", "-c", cfg.string()}), kExitOk);
    EXPECT_TRUE(fs::exists(dir / "from-config/densities.csv"));
}

TEST(Cli, ConfigErrorsExitWithTwo) {
    const fs::path dir = fresh_dir("bad");
    std::string err;
    EXPECT_EQ(cli({"run-ap", "-c", (kSource / "tests/data/unknown-key.json").string(), "-o", dir.string()}, nullptr,
                  &err),
              kExitConfig);
    const json report = json::parse(err);
    EXPECT_EQ(report["exit_code"], kExitConfig);
    EXPECT_EQ(report["field"], "initial.densty");
    EXPECT_TRUE(fs::exists(dir / "error.json"));
    EXPECT_EQ(cli({"run-ap"}, nullptr, &err), kExitConfig);
    EXPECT_EQ(cli({"frobnicate"}, nullptr, &err), kExitConfig);
}

TEST(Cli, SolverFailureExitsWithThreeAndKeepsPartialOutput) {
    json j = minimal();
    j["initial"] = {{"kind", "ill-prepared"}};
    j["solver"] = {{"max_iterations", 1}, {"tolerance", 1e-16}};
    const fs::path dir = fresh_dir("numerical");
    const fs::path cfg = write_config(dir, j);
    std::string err;
    EXPECT_EQ(cli({"run-ap", "-c", cfg.string(), "-o", dir.string()}, nullptr, &err), kExitNumerical);
    const json report = json::parse(slurp(dir / "error.json"));
    EXPECT_EQ(report["kind"], "numerical");
    EXPECT_EQ(report["diagnostics"]["failed_step"], 1);
    EXPECT_EQ(read_csv(dir / "densities.csv").rows.size(), 1u);
}

TEST(Cli, UnwritableOutputExitsWithFour) {
    const fs::path dir = fresh_dir("io-cli");
    std::ofstream(dir / "file") << "x";
    const fs::path cfg = write_config(dir, minimal());
    std::string err;
    EXPECT_EQ(cli({"run-ap", "-c", cfg.string(), "-o", (dir / "file" / "out").string()}, nullptr, &err), kExitIo);
}

TEST(Cli, SelftestPasses) {
    std::string out;
    EXPECT_EQ(cli({"selftest"}, &out), kExitOk);
    EXPECT_EQ(out.find("FAIL"), std::string::npos);
    for (const CheckResult& c : run_selftest()) EXPECT_TRUE(c.passed) << c.name << " " << c.value;
}
