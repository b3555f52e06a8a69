#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nvp/cli.hpp"

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = nvp::cli::run(std::move(args), out, err);
    return {code, out.str(), err.str()};
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Cli, CountParamsPrintsTableValues) {
    auto r = run_cli({"count-params", "--model", "benchmark", "--channels", "64", "--height",
                      "19", "--width", "19"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "4123266\n");

    r = run_cli({"count-params", "--model", "mrlayer", "--channels", "128", "--height", "19",
                 "--width", "19"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "15619844\n");

    r = run_cli({"count-params", "--model", "mrlstm", "--channels", "64", "--height", "19",
                 "--width", "19"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "8265732\n");
}

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run_cli({}).code, 1);
    EXPECT_EQ(run_cli({"no-such-command"}).code, 1);
    EXPECT_EQ(run_cli({"count-params", "--bogus-flag", "3"}).code, 1);
    EXPECT_EQ(run_cli({"count-params", "--model", "unknown-model"}).code, 1);
    EXPECT_EQ(run_cli({"train"}).code, 1);  // missing required --data
    EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, DataErrorsExitTwo) {
    const auto missing = temp_path("nvp_cli_missing.nvt");
    std::remove(missing.c_str());
    auto r = run_cli({"eval", "--checkpoint", missing, "--data", missing, "--report",
                      temp_path("r.csv")});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());

    // Empty data file -> exit 2 with a message.
    const auto empty = temp_path("nvp_cli_empty.nvt");
    {
        std::ofstream os(empty, std::ios::binary);
    }
    const auto ck = temp_path("nvp_cli_ck.nvck");
    r = run_cli({"eval", "--checkpoint", ck, "--data", empty, "--report", temp_path("r.csv")});
    EXPECT_EQ(r.code, 2);
    std::remove(empty.c_str());
}

TEST(Cli, GenDataShapesAndDeterminism) {
    const auto p1 = temp_path("nvp_cli_w1.nvt");
    const auto p2 = temp_path("nvp_cli_w2.nvt");
    auto r = run_cli({"gen-data", "--out", p1, "--frames", "50", "--height", "6", "--width",
                      "7", "--kind", "spiral", "--speed", "0.4", "--noise", "0.02", "--seed",
                      "5"});
    EXPECT_EQ(r.code, 0);
    r = run_cli({"gen-data", "--out", p2, "--frames", "50", "--height", "6", "--width", "7",
                 "--kind", "spiral", "--speed", "0.4", "--noise", "0.02", "--seed", "5"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(slurp(p1), slurp(p2));
    auto frames = nvp::read_tensor_file<float>(p1);
    EXPECT_EQ(frames.shape(), (nvp::Shape{50, 6, 7}));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST(Cli, EndToEndTinyPipeline) {
    const auto data = temp_path("nvp_cli_data.nvt");
    const auto ck = temp_path("nvp_cli_train.nvck");
    const auto metrics1 = temp_path("nvp_cli_m1.csv");
    const auto metrics2 = temp_path("nvp_cli_m2.csv");
    const auto report = temp_path("nvp_cli_report.csv");
    const auto pred = temp_path("nvp_cli_pred.nvt");
    const auto act = temp_path("nvp_cli_act");

    ASSERT_EQ(run_cli({"gen-data", "--out", data, "--frames", "120", "--height", "6",
                       "--width", "6", "--kind", "plane", "--speed", "0.5", "--noise", "0",
                       "--seed", "3"})
                  .code,
              0);

    std::vector<std::string> train_args{
        "train", "--data", data,     "--model",         "benchmark", "--channels", "2",
        "--adv", "on",     "--iters", "6",              "--batch",   "1",          "--seed",
        "9",     "--t",    "4",       "--n",            "4",         "--out-checkpoint", ck,
        "--metrics-csv", metrics1};
    ASSERT_EQ(run_cli(train_args).code, 0);

    // Determinism: identical run, bit-identical metrics CSV.
    train_args.back() = metrics2;
    ASSERT_EQ(run_cli(train_args).code, 0);
    EXPECT_EQ(slurp(metrics1), slurp(metrics2));
    EXPECT_NE(slurp(metrics1).find("iteration,lr,l_rec,l_pred,l_adv,l_d\n"),
              std::string::npos);

    auto r = run_cli({"eval", "--checkpoint", ck, "--data", data, "--report", report,
                      "--stride", "8"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report_text = slurp(report);
    EXPECT_NE(report_text.find("horizon,psnr\n"), std::string::npos);
    EXPECT_NE(report_text.find("aggregate,"), std::string::npos);
    EXPECT_FALSE(slurp(report + ".persistence.csv").empty());

    r = run_cli({"predict", "--checkpoint", ck, "--data", data, "--out", pred, "--stride",
                 "8"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto predictions = nvp::read_tensor_file<float>(pred);
    EXPECT_EQ(predictions.extent(1), 6);
    EXPECT_EQ(predictions.extent(2), 6);
    EXPECT_EQ(predictions.extent(0) % 4, 0);  // whole windows of n=4 frames

    r = run_cli({"inspect-critic", "--checkpoint", ck, "--data", data, "--out", act});
    ASSERT_EQ(r.code, 0) << r.err;
    auto map_true = nvp::read_tensor_file<float>(act + ".true.nvt");
    auto map_gen = nvp::read_tensor_file<float>(act + ".gen.nvt");
    EXPECT_EQ(map_true.extent(0), 8);  // resampled to t+n input frames
    EXPECT_EQ(map_true.shape(), map_gen.shape());

    for (const auto& p : {data, ck, metrics1, metrics2, report,
                          report + ".persistence.csv", pred, act + ".true.nvt",
                          act + ".gen.nvt"})
        std::remove(p.c_str());
}

TEST(Cli, InspectCriticWithoutCriticExitsTwo) {
    const auto data = temp_path("nvp_cli_data2.nvt");
    const auto ck = temp_path("nvp_cli_noadv.nvck");
    ASSERT_EQ(run_cli({"gen-data", "--out", data, "--frames", "60", "--height", "6", "--width",
                       "6", "--seed", "1"})
                  .code,
              0);
    ASSERT_EQ(run_cli({"train", "--data", data, "--model", "benchmark", "--channels", "2",
                       "--adv", "off", "--iters", "2", "--batch", "1", "--t", "4", "--n", "4",
                       "--out-checkpoint", ck})
                  .code,
              0);
    auto r = run_cli({"inspect-critic", "--checkpoint", ck, "--data", data, "--out",
                      temp_path("x")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("no critic"), std::string::npos);
    std::remove(data.c_str());
    std::remove(ck.c_str());
}

TEST(Cli, GradCheckSubcommandRuns) {
    auto r = run_cli({"grad-check", "--seeds", "1"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("convlstm_cell"), std::string::npos);
    EXPECT_NE(r.out.find("pass"), std::string::npos);
}

TEST(Cli, ConfigFileWithFlagPrecedence) {
    const auto cfg = temp_path("nvp_cli_cfg.ini");
    {
        std::ofstream os(cfg);
        os << "[count-params]\n";
        os << "model=benchmark\n";
        os << "channels=64\n";
        os << "height=19\n";
        os << "width=19\n";
    }
    auto r = run_cli({"--config", cfg, "count-params"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "4123266\n");

    // Flags override the config file.
    r = run_cli({"--config", cfg, "count-params", "--channels", "128"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "15619330\n");
    std::remove(cfg.c_str());
}
