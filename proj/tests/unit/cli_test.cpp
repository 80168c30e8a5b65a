#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "trips/cli.hpp"
#include "trips/io.hpp"

namespace trips {
namespace {

namespace fs = std::filesystem;

struct CliRun {
    int code;
    std::string out;
    std::string err;
};

CliRun run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string value_of(const std::string& text, const std::string& key) {
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        if (line.rfind(key + ": ", 0) == 0) return line.substr(key.size() + 2);
    }
    return "<missing>";
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("trips_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TEST(Cli, ForwardWithoutSelectionKeepsAllTokens) {
    const CliRun r = run({"forward", "--locations", "", "--rates", ""});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(value_of(r.out, "final_length"), "37");
}

TEST(Cli, ForwardDefaultSelectionIsDeterministic) {
    const CliRun a = run({"forward", "--seed", "4"});
    const CliRun b = run({"forward", "--seed", "4"});
    EXPECT_EQ(a.code, kExitOk) << a.err;
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(value_of(a.out, "final_length"), "20");
}

TEST(Cli, ForwardWritesTraceAndTokens) {
    const fs::path dir = scratch("forward");
    const CliRun r = run({"forward", "--out", dir.string(), "--locations", "3,6", "--rates", "0.5,0.5"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    std::ifstream in(dir / "trace.jsonl");
    std::size_t records = 0;
    for (std::string line; std::getline(in, line);) {
        records += !nlohmann::json::parse(line).empty();
    }
    EXPECT_EQ(records, 2u);
    EXPECT_EQ(load_tensor((dir / "tokens.tnsr").string()).rows(), 1u + 9u + 1u);
    fs::remove_all(dir);
}

TEST(Cli, CostDefaultRowKeepRate) {
    const CliRun r = run({"cost"});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(value_of(r.out, "overall_keep_rate"), "49");
    EXPECT_NEAR(std::stod(value_of(r.out, "baseline_ratio")), 55.60 / 76.03, 0.03);
}

TEST(Cli, CostRatioIgnoresConvention) {
    const CliRun mac = run({"cost", "--flops-convention", "mac"});
    const CliRun two = run({"cost", "--flops-convention", "2mac"});
    EXPECT_EQ(value_of(mac.out, "baseline_ratio"), value_of(two.out, "baseline_ratio"));
    EXPECT_EQ(run({"cost", "--flops-convention", "3mac"}).code, kExitConfig);
}

TEST(Cli, SweepEmitsTsvAndJson) {
    const fs::path dir = scratch("sweep");
    const CliRun r = run({"sweep", "--table", "location", "--out", dir.string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    std::size_t lines = 0;
    std::istringstream in(r.out);
    for (std::string line; std::getline(in, line);) lines += !line.empty();
    EXPECT_EQ(lines, 14u);
    std::ifstream js(dir / "sweep.json");
    const auto j = nlohmann::json::parse(js);
    EXPECT_EQ(j.size(), 13u);
    EXPECT_TRUE(fs::exists(dir / "sweep.tsv"));
    EXPECT_EQ(run({"sweep", "--table", "depth"}).code, kExitConfig);
    fs::remove_all(dir);
}

TEST(Cli, VisualizeWritesOverlays) {
    const fs::path dir = scratch("visualize");
    const CliRun r = run({"visualize", "--out", dir.string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_TRUE(fs::exists(dir / "input.ppm"));
    EXPECT_EQ(load_image_ppm((dir / "overlay_layer5.ppm").string()).shape(), (Shape{3, 96, 96}));
    EXPECT_TRUE(fs::exists(dir / "overlay_layer10.ppm"));
    fs::remove_all(dir);
}

TEST(Cli, GradcheckPassesAndFailsOnImpossibleTolerance) {
    const CliRun ok = run({"gradcheck", "--trials", "2"});
    EXPECT_EQ(ok.code, kExitOk) << ok.out << ok.err;
    const CliRun strict = run({"gradcheck", "--trials", "1", "--tolerance", "1e-30"});
    EXPECT_EQ(strict.code, kExitCheckFailed);
}

TEST(Cli, BenchReportsSpeedupAtHalfRates) {
    const CliRun r = run({"bench", "--rates", "0.5,0.5", "--warmup", "1", "--repeats", "2"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(value_of(r.out, "tokens"), "577");
    EXPECT_GT(std::stod(value_of(r.out, "speedup")), 1.0);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run({}).code, kExitConfig);
    EXPECT_EQ(run({"--help"}).code, kExitOk);
    EXPECT_EQ(run({"launch"}).code, kExitConfig);
    EXPECT_EQ(run({"forward", "--locations", "5,10", "--rates", "0.7"}).code, kExitConfig);
    EXPECT_EQ(run({"forward", "--image-size", "100"}).code, kExitConfig);
    EXPECT_EQ(run({"forward", "--mode", "image-cls", "--no-td-att"}).code, kExitConfig);
    EXPECT_EQ(run({"forward", "--config", "/nonexistent/run.cfg"}).code, kExitIo);

    const fs::path dir = scratch("exit_codes");
    std::ofstream(dir / "bad.cfg") << "unknown_key = 1\n";
    EXPECT_EQ(run({"forward", "--config", (dir / "bad.cfg").string()}).code, kExitConfig);
    std::ofstream(dir / "img.cfg") << "image = " << (dir / "missing.ppm").string() << "\n";
    EXPECT_EQ(run({"forward", "--config", (dir / "img.cfg").string()}).code, kExitIo);
    fs::remove_all(dir);
}

TEST(Cli, ConfigFileDrivesRun) {
    const fs::path dir = scratch("config");
    std::ofstream(dir / "run.cfg") << "layers = 4\nwidth = 32\nheads = 2\nimage_size = 64\n"
                                   << "locations = 2\nrates = 0.5\nmode = image-cls\n";
    const CliRun r = run({"forward", "--config", (dir / "run.cfg").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(value_of(r.out, "lengths"), "17,10,10,10");
    fs::remove_all(dir);
}

}  // namespace
}  // namespace trips
