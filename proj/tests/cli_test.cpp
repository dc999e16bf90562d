#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("ppde_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string(PPDE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path write_config(const fs::path& dir, const json& j) {
    const auto p = dir / "config.json";
    std::ofstream(p) << j.dump();
    return p;
}

json small_solver() { return {{"tree_steps", 50}, {"lsmc_steps", 20}, {"paths", 2000}}; }

}  // namespace

TEST(Cli, ValueOnQuadraticMartingaleIsOne) {
    const auto dir = scratch("value");
    const auto cfg = write_config(dir, {{"problem", "quadratic_martingale"}, {"solver", small_solver()}});
    ASSERT_EQ(run("value --config " + cfg.string() + " --out " + (dir / "out").string()), 0);
    const auto j = json::parse(slurp(dir / "out" / "value.json"));
    ASSERT_EQ(j.at("command"), "value");
    for (const auto& row : j.at("result")) {
        const double se = row.at("std_error").get<double>();
        EXPECT_NEAR(row.at("estimate").get<double>(), 1.0, 1e-6 + 4.0 * se) << row.at("method");
    }
}

TEST(Cli, ValidateFlagsDegenerateSigma) {
    const auto dir = scratch("validate");
    const auto cfg = write_config(dir, {{"problem", {{"instance", "quadratic_martingale"}, {"sigma", {0.0}}}}});
    EXPECT_EQ(run("validate --config " + cfg.string() + " --out " + (dir / "out").string()), 3);
    const auto j = json::parse(slurp(dir / "out" / "validate.json"));
    EXPECT_FALSE(j.at("result").at("all_passed").get<bool>());
    bool found = false;
    for (const auto& c : j.at("result").at("clauses"))
        if (c.at("name") == "nondegenerate") {
            found = true;
            EXPECT_FALSE(c.at("passed").get<bool>());
        }
    EXPECT_TRUE(found);
}

TEST(Cli, ValidatePassesOnDefaultInstance) {
    const auto dir = scratch("validate_ok");
    EXPECT_EQ(run("validate --out " + (dir / "out").string()), 0);
}

TEST(Cli, SameConfigAndSeedGiveIdenticalCsv) {
    const auto dir = scratch("repro");
    const auto cfg = write_config(dir, {{"problem", "abs_stopping"}, {"solver", small_solver()}, {"out", (dir / "out").string()}});
    ASSERT_EQ(run("value --config " + cfg.string() + " --seed 7"), 0);
    const auto first = slurp(dir / "out" / "value.csv");
    ASSERT_EQ(run("value --config " + cfg.string() + " --seed 7"), 0);
    ASSERT_FALSE(first.empty());
    EXPECT_EQ(first, slurp(dir / "out" / "value.csv"));
}

TEST(Cli, DifferentSeedsChangeMonteCarloRows) {
    const auto dir = scratch("seeds");
    const auto cfg = write_config(dir, {{"problem", "abs_stopping"}, {"solver", small_solver()}, {"out", (dir / "o").string()}});
    ASSERT_EQ(run("value --config " + cfg.string() + " --seed 1 --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run("value --config " + cfg.string() + " --seed 2 --out " + (dir / "b").string()), 0);
    const auto a = slurp(dir / "a" / "value.csv"), b = slurp(dir / "b" / "value.csv");
    EXPECT_NE(a.substr(a.find("lsmc,")), b.substr(b.find("lsmc,")));
}

TEST(Cli, CsvCarriesConfigHashAndSeed) {
    const auto dir = scratch("hash");
    const auto cfg = write_config(dir, {{"problem", "abs_stopping"}, {"seed", 11}, {"out", (dir / "out").string()}});
    ASSERT_EQ(run("snell --config " + cfg.string()), 0);
    const auto csv = slurp(dir / "out" / "snell.csv");
    const auto j = json::parse(slurp(dir / "out" / "snell.json"));
    const std::string hash = j.at("config_hash");
    EXPECT_EQ(hash.size(), 16u);
    EXPECT_EQ(csv.rfind("# config_hash: " + hash + "\n# seed: 11\n", 0), 0u);
    EXPECT_EQ(j.at("seed"), 11);
}

TEST(Cli, BadConfigWritesErrorRecord) {
    const auto dir = scratch("error");
    const auto cfg = write_config(dir, {{"solver", {{"paths", 1}}}});
    EXPECT_EQ(run("value --config " + cfg.string() + " --out " + (dir / "out").string()), 2);
    const auto j = json::parse(slurp(dir / "out" / "error.json"));
    EXPECT_EQ(j.at("error").at("type"), "parameter_error");
    EXPECT_EQ(j.at("command"), "value");
}

TEST(Cli, MissingConfigAndUnknownProblemExitTwo) {
    const auto dir = scratch("missing");
    EXPECT_EQ(run("value --config " + (dir / "nope.json").string() + " --out " + (dir / "out").string()), 2);
    EXPECT_TRUE(fs::exists(dir / "out" / "error.json"));
    const auto cfg = write_config(dir, {{"problem", "no_such_problem"}});
    EXPECT_EQ(run("value --config " + cfg.string() + " --out " + (dir / "out").string()), 2);
    EXPECT_EQ(run(""), 2);
}

TEST(Cli, DppAndSnellProduceTables) {
    const auto dir = scratch("tables");
    const auto cfg = write_config(dir, {{"problem", "abs_stopping"}, {"out", (dir / "out").string()}});
    ASSERT_EQ(run("dpp --config " + cfg.string()), 0);
    ASSERT_EQ(run("snell --config " + cfg.string()), 0);
    const auto dpp = slurp(dir / "out" / "dpp.csv");
    EXPECT_NE(dpp.find("variant,t1,delta,direct,nested,residual"), std::string::npos);
    const auto snell = json::parse(slurp(dir / "out" / "snell.json")).at("result");
    EXPECT_GE(snell.at("dominance").get<double>(), -1e-12);
    EXPECT_LE(snell.at("supermartingale").get<double>(), 1e-12);
}

TEST(Cli, SandwichHoldsOnLinearInstance) {
    const auto dir = scratch("sandwich");
    const auto cfg = write_config(dir, {{"problem", "linear_terminal"},
                                        {"solver", {{"alphas", {0.4, 0.2}}, {"m", 64}, {"depth_cap", 1}}},
                                        {"out", (dir / "out").string()}});
    ASSERT_EQ(run("sandwich --config " + cfg.string()), 0);
    const auto j = json::parse(slurp(dir / "out" / "sandwich.json")).at("result");
    EXPECT_TRUE(j.at("all_hold").get<bool>());
    EXPECT_EQ(j.at("rows").size(), 2u);
}
