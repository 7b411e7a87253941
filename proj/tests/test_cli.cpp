#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "lcnn/model.hpp"
#include "lcnn/report.hpp"
#include "lcnn/train.hpp"
#include "surrogate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out; // stdout and stderr interleaved
};

Run run(const std::string& args) {
    const std::string cmd = std::string(LCNN_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class CliDir : public ::testing::Test {
protected:
    void SetUp() override { dir_ = fixture::scratch_dir("cli"); }
    void TearDown() override { fs::remove_all(dir_); }

    // Small CIFAR-10 tree, prepared into a 2-class file with edge stream.
    fs::path prepared() {
        surrogate::write_cifar10(dir_ / "cifar", 5, 20, 20);
        const auto out = dir_ / "two.lcds";
        const auto r = run("prepare-data --dataset cifar10 --source " + (dir_ / "cifar").string() + " --out " + out.string() +
                           " --edges --seed 4 --classes 2 --per-class 10");
        EXPECT_EQ(r.code, 0) << r.out;
        return out;
    }

    fs::path config(const std::string& name, const std::string& topology, json extra = json::object()) {
        lcnn::ModelSpec base{"tiny32", {3, 32, 32},
                             {lcnn::LayerSpec::conv(4, 5, 3, 0), lcnn::LayerSpec::max_pool(2, 2), lcnn::LayerSpec::flat(),
                              lcnn::LayerSpec::linear(2)},
                             lcnn::Topology::single, {}, 2};
        const auto topo = lcnn::parse_topology(topology);
        const auto spec = topo == lcnn::Topology::single ? base : lcnn::to_multistream(base, topo);
        std::ofstream(dir_ / (name + "-spec.json")) << lcnn::to_json(spec).dump(2);
        json j{{"name", name},
               {"model", {{"spec_file", name + "-spec.json"}, {"topology", topology}}},
               {"dataset", {{"train", "two.lcds"}}},
               {"epochs", 2},
               {"batch_size", 4},
               {"folds", 2},
               {"seed", 7},
               {"learning_rate", 0.01}};
        j.update(extra);
        const auto path = dir_ / (name + ".json");
        std::ofstream(path) << j.dump(2);
        return path;
    }

    fs::path dir_;
};

} // namespace

TEST(Cli, NoSubcommandIsUsageError) {
    const auto r = run("");
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, ParamCountMatchesLibrary) {
    const auto late = run("param-count --model vgg16 --topology multistream_late --json");
    const auto lattice = run("param-count --model vgg16 --topology multistream_lattice --json");
    ASSERT_EQ(late.code, 0) << late.out;
    ASSERT_EQ(lattice.code, 0) << lattice.out;
    const auto jl = json::parse(late.out), jt = json::parse(lattice.out);
    const auto spec = lcnn::to_multistream(lcnn::build_backbone("vgg16", 10, 0.25), lcnn::Topology::multistream_lattice);
    EXPECT_EQ(jt.at("total").get<std::size_t>(), lcnn::count_params(spec));
    EXPECT_EQ(jl.at("total"), jt.at("total"));
    EXPECT_GT(jt.at("l_blocks").get<std::size_t>(), 0u);
    EXPECT_EQ(jl.at("l_blocks").get<std::size_t>(), 0u);

    const auto text = run("param-count --model alexnet --topology single --width-scale 1.0");
    EXPECT_EQ(text.code, 0);
    const auto full = lcnn::count_params(lcnn::build_backbone("alexnet", 10, 1.0));
    EXPECT_NE(text.out.find("total      " + std::to_string(full)), std::string::npos) << text.out;

    EXPECT_EQ(run("param-count --model lenet --topology single").code, 2);
    EXPECT_EQ(run("param-count --model alexnet --topology diagonal").code, 2);
    EXPECT_EQ(run("param-count --model alexnet").code, 2);
}

TEST(Cli, GradcheckPasses) {
    const auto r = run("gradcheck --points 10");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("PASS: 13 primitives"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("log_compression"), std::string::npos);
}

TEST_F(CliDir, PrepareDataWritesLoadableFileAndEdgeDumps) {
    surrogate::write_cifar10(dir_ / "cifar", 5, 20, 20);
    const auto out = dir_ / "p.lcds";
    const auto r = run("prepare-data --dataset cifar10 --source " + (dir_ / "cifar").string() + " --out " + out.string() +
                       " --edges --seed 2 --classes 3 --per-class 4 --dump-edges " + (dir_ / "edges").string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto ds = lcnn::load_prepared(out);
    EXPECT_EQ(ds.size(), 12u);
    EXPECT_EQ(ds.num_classes, 3u);
    for (const auto& s : ds.samples) {
        ASSERT_TRUE(s.secondary);
        EXPECT_EQ(s.secondary->channels, 3u);
    }
    std::size_t pgms = 0;
    for (const auto& e : fs::directory_iterator(dir_ / "edges")) pgms += e.path().extension() == ".pgm";
    EXPECT_EQ(pgms, 12u);

    // same flags, same bytes
    const auto again = dir_ / "q.lcds";
    ASSERT_EQ(run("prepare-data --dataset cifar10 --source " + (dir_ / "cifar").string() + " --out " + again.string() +
                  " --edges --seed 2 --classes 3 --per-class 4")
                  .code,
              0);
    EXPECT_EQ(slurp(out), slurp(again));

    const auto test_split = dir_ / "t.lcds";
    ASSERT_EQ(run("prepare-data --dataset cifar10 --split test --source " + (dir_ / "cifar").string() + " --out " +
                  test_split.string())
                  .code,
              0);
    EXPECT_EQ(lcnn::load_prepared(test_split).size(), 20u);
}

TEST_F(CliDir, PrepareDataErrors) {
    const auto missing = run("prepare-data --dataset cifar10 --source " + (dir_ / "nothing").string() + " --out " +
                             (dir_ / "x").string());
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.out.find("cannot open"), std::string::npos) << missing.out;
    EXPECT_EQ(run("prepare-data --dataset mnist --out x").code, 2);
    EXPECT_EQ(run("prepare-data --dataset cifar10 --out x --classes 2").code, 2); // --per-class required alongside
    surrogate::write_cifar10(dir_ / "cifar", 5, 20, 20);
    const auto too_many = run("prepare-data --dataset cifar10 --source " + (dir_ / "cifar").string() + " --out " +
                              (dir_ / "x").string() + " --classes 2 --per-class 500");
    EXPECT_EQ(too_many.code, 2) << too_many.out;
    EXPECT_FALSE(fs::exists(dir_ / "x"));
}

TEST_F(CliDir, TrainThenCompare) {
    prepared();
    const auto single = run("train --config " + config("single", "single").string() + " --out " + (dir_ / "r1").string());
    ASSERT_EQ(single.code, 0) << single.out;
    EXPECT_NE(single.out.find("mean val"), std::string::npos);
    const auto lattice =
        run("train --config " + config("lattice", "multistream_lattice").string() + " --out " + (dir_ / "r2").string());
    ASSERT_EQ(lattice.code, 0) << lattice.out;

    const auto s1 = lcnn::read_summary(dir_ / "r1");
    EXPECT_EQ(s1.at("folds").size(), 2u);
    EXPECT_EQ(s1.at("label"), "single");
    const auto curves = slurp(dir_ / "r1" / "curves.csv");
    EXPECT_EQ(std::count(curves.begin(), curves.end(), '\n'), 1 + 2 * 2);

    const auto cmp = run("compare " + (dir_ / "r1").string() + " " + (dir_ / "r2").string());
    ASSERT_EQ(cmp.code, 0) << cmp.out;
    EXPECT_NE(cmp.out.find("reference: single"), std::string::npos) << cmp.out;
    EXPECT_NE(cmp.out.find("lattice"), std::string::npos);
    const auto cj = run("compare --json " + (dir_ / "r1").string() + " " + (dir_ / "r2" / "summary.json").string());
    ASSERT_EQ(cj.code, 0) << cj.out;
    EXPECT_EQ(json::parse(cj.out).at("rows").size(), 2u);

    // rerun reproduces the report bytes
    ASSERT_EQ(run("train --config " + config("single", "single").string() + " --out " + (dir_ / "r3").string()).code, 0);
    EXPECT_EQ(slurp(dir_ / "r1" / "summary.json"), slurp(dir_ / "r3" / "summary.json"));
    EXPECT_EQ(slurp(dir_ / "r1" / "curves.csv"), slurp(dir_ / "r3" / "curves.csv"));

    EXPECT_EQ(run("compare " + (dir_ / "r1").string()).code, 2);
}

TEST_F(CliDir, CompareRefusesDifferentData) {
    prepared();
    ASSERT_EQ(run("train --config " + config("a", "single").string() + " --out " + (dir_ / "ra").string()).code, 0);
    // a second prepared file drawn with another seed
    ASSERT_EQ(run("prepare-data --dataset cifar10 --source " + (dir_ / "cifar").string() + " --out " +
                  (dir_ / "two.lcds").string() + " --edges --seed 9 --classes 2 --per-class 10")
                  .code,
              0);
    ASSERT_EQ(run("train --config " + config("b", "single").string() + " --out " + (dir_ / "rb").string()).code, 0);
    const auto r = run("compare " + (dir_ / "ra").string() + " " + (dir_ / "rb").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("comparison refused"), std::string::npos) << r.out;
}

TEST_F(CliDir, TrainConfigErrorsAndDivergence) {
    prepared();
    const auto unknown = run("train --config " + config("u", "single", {{"momentum", 0.9}}).string() + " --out " +
                             (dir_ / "ru").string());
    EXPECT_EQ(unknown.code, 2);
    EXPECT_NE(unknown.out.find("momentum"), std::string::npos) << unknown.out;
    EXPECT_EQ(run("train --config " + (dir_ / "absent.json").string() + " --out x").code, 2);

    const auto diverge = run("train --config " + config("d", "single", {{"learning_rate", 1e200}}).string() + " --out " +
                             (dir_ / "rd").string());
    EXPECT_EQ(diverge.code, 3) << diverge.out;
    EXPECT_NE(diverge.out.find("epoch"), std::string::npos);
    const auto partial = lcnn::read_summary(dir_ / "rd");
    EXPECT_TRUE(partial.at("partial").get<bool>());
}
