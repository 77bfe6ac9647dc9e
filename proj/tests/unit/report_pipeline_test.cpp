// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "moelens/checkpoint.hpp"
#include "moelens/corpus.hpp"
#include "moelens/error.hpp"
#include "moelens/pipeline.hpp"
#include "moelens/planted.hpp"
#include "moelens/report.hpp"
#include "oracle.hpp"

using namespace moelens;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

struct Inputs {
    fs::path dir;
    PipelineConfig cfg;
};

Inputs planted_inputs(const std::string& name) {
    Inputs in{oracle::temp_dir(name), {}};
    const auto spec = default_planted_spec();
    save_checkpoint(build_planted_model(spec).first, (in.dir / "model.ckpt").string());
    write_corpus(synthesize_corpus(spec.domains, SyntheticOptions{64, 4, 16, 11}), (in.dir / "corpus.tsv").string());
    write_task(synthesize_task(spec.domains, SyntheticOptions{200, 2, 8, 23}), (in.dir / "task.tsv").string());
    in.cfg.model_path = (in.dir / "model.ckpt").string();
    in.cfg.corpus_path = (in.dir / "corpus.tsv").string();
    in.cfg.task_path = (in.dir / "task.tsv").string();
    in.cfg.out_dir = (in.dir / "out").string();
    return in;
}

}  // namespace

TEST(Report, NumberFormatting) {
    EXPECT_EQ(format_number(0.5), "0.5");
    EXPECT_EQ(format_number(1.0 / 3.0), "0.3333333333");
    EXPECT_EQ(format_number(kInfiniteRatio), "inf");
    EXPECT_EQ(format_number(-kInfiniteRatio), "-inf");
}

TEST(Report, DriversCsvRoundTrip) {
    const auto dir = oracle::temp_dir("drivers-csv");
    DriverSet d;
    d.thresholds = {0.1, 0.2};
    d.members = {{0, 3, 0.5, 10}, {1, 1, 0.7, 10}};
    d.warnings = {"layer 2: flat"};
    const auto path = (dir / "d.csv").string();
    write_drivers_csv(d, path, "moelens test");
    const auto l = lines(slurp(path));
    ASSERT_GE(l.size(), 5u);
    EXPECT_EQ(l[0], "# moelens test");
    EXPECT_EQ(l[1], "# warning: layer 2: flat");
    EXPECT_EQ(l[2], "layer,expert,CE,threshold");
    EXPECT_EQ(read_drivers_csv(path), (std::vector<ExpertRef>{{0, 3}, {1, 1}}));
}

TEST(Report, SweepCsvHeader) {
    const auto dir = oracle::temp_dir("sweep-csv");
    EvalReport r;
    r.label = "baseline";
    r.accuracy = 0.5;
    r.weighted_f1 = 0.25;
    write_sweep_csv({r}, (dir / "s.csv").string(), "p");
    const auto l = lines(slurp(dir / "s.csv"));
    ASSERT_EQ(l.size(), 3u);
    EXPECT_EQ(l[1], "plan,ACC,WF1,\xCE\x94" "ACC,\xCE\x94" "WF1");
    EXPECT_EQ(l[2], "baseline,0.5,0.25,0,0");
}

TEST(Report, BinsCsvNamesBinsAndFlagsZeroSupport) {
    const auto dir = oracle::temp_dir("bins-csv");
    PositionBinReport a{"a", {1, 1, 1, 1, 1}, {0.2, 0.2, 0.2, 0.2, 0.2}, 5, false};
    PositionBinReport b{"b", {}, {}, 0, true};
    write_bins_csv({a, b}, (dir / "b.csv").string(), "p");
    const auto text = slurp(dir / "b.csv");
    EXPECT_NE(text.find("domain,bin,fraction,count"), std::string::npos);
    EXPECT_NE(text.find("a,[0.8,1.0],0.2,1"), std::string::npos);
    EXPECT_NE(text.find("zero support"), std::string::npos);
}

TEST(Report, SvgEmbedsData) {
    const auto dir = oracle::temp_dir("svg");
    write_causal_rate_svg({0.25, 0.5}, (dir / "r.svg").string(), "prov");
    const auto svg = slurp(dir / "r.svg");
    EXPECT_EQ(svg.rfind("<svg", 0) == 0 || svg.find("<svg") != std::string::npos, true);
    EXPECT_NE(svg.find("<metadata"), std::string::npos);
    EXPECT_NE(svg.find("1,0.5"), std::string::npos);
    EXPECT_NE(svg.find("prov"), std::string::npos);
}

TEST(Pipeline, WritesAllArtifactsWithProvenance) {
    auto in = planted_inputs("pipeline");
    const auto res = run_pipeline(in.cfg);
    for (const auto& name : kPipelineArtifacts) {
        ASSERT_TRUE(fs::exists(fs::path(in.cfg.out_dir) / name)) << name;
        if (name.ends_with(".csv")) {
            const auto first = lines(slurp(fs::path(in.cfg.out_dir) / name)).at(0);
            EXPECT_EQ(first, "# " + in.cfg.provenance()) << name;
            EXPECT_NE(first.find("rho=2"), std::string::npos);
            EXPECT_NE(first.find("sign=-1"), std::string::npos);
        }
    }
    for (const auto& name : kPipelinePlots) EXPECT_TRUE(fs::exists(fs::path(in.cfg.out_dir) / name)) << name;
    EXPECT_EQ(res.domain_experts.size(), 8u);
    EXPECT_EQ(res.drivers.size(), 4u);
    ASSERT_EQ(res.sweep.size(), 5u);
    EXPECT_EQ(res.sweep[0].label, "baseline");
}

TEST(Pipeline, RerunIsIdentical) {
    auto in = planted_inputs("pipeline-rerun");
    run_pipeline(in.cfg);
    auto second = in.cfg;
    second.out_dir = (in.dir / "out2").string();
    run_pipeline(second);
    for (const auto& name : kPipelineArtifacts)
        EXPECT_EQ(slurp(fs::path(in.cfg.out_dir) / name), slurp(fs::path(second.out_dir) / name)) << name;
}

TEST(Pipeline, SingleDomainCorpusFailsAtTaxonomy) {
    auto in = planted_inputs("pipeline-one-domain");
    const auto spec = default_planted_spec();
    write_corpus(synthesize_corpus({spec.domains[0]}, SyntheticOptions{16, 4, 8, 1}), in.cfg.corpus_path);
    try {
        run_pipeline(in.cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Classification);
        EXPECT_NE(std::string(e.what()).find("stage 'taxonomy'"), std::string::npos) << e.what();
    }
}

TEST(Pipeline, MissingInputsFailAtLoadOrConfig) {
    auto in = planted_inputs("pipeline-missing");
    auto cfg = in.cfg;
    cfg.model_path = (in.dir / "nope.ckpt").string();
    try {
        run_pipeline(cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Io);
        EXPECT_NE(std::string(e.what()).find("stage 'load'"), std::string::npos);
    }
    cfg = in.cfg;
    cfg.rho = 0.5;
    try {
        run_pipeline(cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Configuration);
        EXPECT_NE(std::string(e.what()).find("stage 'config'"), std::string::npos);
    }
}
