// SPDX-License-Identifier: Apache-2.0
// Exercises the shared library through its C header only.

#include <gtest/gtest.h>
#include <moelens/moelens.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
    auto p = fs::temp_directory_path() / (std::string("moelens-capi-") + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string take(char* s) {
    std::string out = s ? s : "";
    moelens_string_free(s);
    return out;
}

struct Planted {
    moelens_model* model = nullptr;
    moelens_corpus* corpus = nullptr;
    moelens_task* task = nullptr;
    Planted() {
        EXPECT_EQ(moelens_model_create_planted(nullptr, &model, nullptr), MOELENS_OK);
        EXPECT_EQ(moelens_corpus_synthesize(nullptr, 64, 4, 16, 11, &corpus), MOELENS_OK);
        EXPECT_EQ(moelens_task_synthesize(nullptr, 200, 2, 8, 23, &task), MOELENS_OK);
    }
    ~Planted() {
        moelens_model_free(model);
        moelens_corpus_free(corpus);
        moelens_task_free(task);
    }
};

}  // namespace

TEST(CApi, VersionAndStatusNames) {
    EXPECT_STREQ(moelens_version(), "0.1.0");
    EXPECT_STREQ(moelens_status_name(MOELENS_ERR_CONFIG), "configuration");
    EXPECT_EQ(static_cast<int>(MOELENS_ERR_CONFIG), 2);
}

TEST(CApi, NullArgumentsAreInvalidInput) {
    EXPECT_EQ(moelens_model_create_random(nullptr, nullptr), MOELENS_ERR_INVALID_INPUT);
    EXPECT_NE(std::string(moelens_last_error()).find("NULL"), std::string::npos);
    size_t n = 0;
    EXPECT_EQ(moelens_trace_record_count(nullptr, &n), MOELENS_ERR_INVALID_INPUT);
    moelens_model_free(nullptr);
    moelens_string_free(nullptr);
}

TEST(CApi, BadSpecIsConfigError) {
    moelens_model_spec spec{1, 4, 5, 8, 8, 16, 0};
    moelens_model* m = nullptr;
    EXPECT_EQ(moelens_model_create_random(&spec, &m), MOELENS_ERR_CONFIG);
    EXPECT_EQ(m, nullptr);
    EXPECT_NE(std::string(moelens_last_error()).find("top_k"), std::string::npos);
}

TEST(CApi, ForwardMatchesSpecShapes) {
    moelens_model_spec spec{2, 4, 2, 8, 6, 16, 3};
    moelens_model* m = nullptr;
    ASSERT_EQ(moelens_model_create_random(&spec, &m), MOELENS_OK);
    const uint32_t toks[3] = {1, 2, 15};
    std::vector<double> dist(3 * 16), probs(3 * 2 * 2);
    std::vector<uint32_t> ids(3 * 2 * 2);
    ASSERT_EQ(moelens_model_forward(m, toks, 3, dist.data(), ids.data(), probs.data()), MOELENS_OK);
    for (int p = 0; p < 3; ++p) {
        double s = 0;
        for (int v = 0; v < 16; ++v) s += dist[p * 16 + v];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    for (size_t i = 0; i < probs.size(); i += 2) EXPECT_NEAR(probs[i] + probs[i + 1], 1.0, 1e-12);
    const uint32_t bad = 16;
    EXPECT_EQ(moelens_model_forward(m, &bad, 1, dist.data(), nullptr, nullptr), MOELENS_ERR_INVALID_INPUT);
    moelens_model_free(m);
}

TEST(CApi, CheckpointRoundTripAndErrors) {
    const auto dir = scratch("ckpt");
    moelens_model* m = nullptr;
    char* gt = nullptr;
    ASSERT_EQ(moelens_model_create_planted(nullptr, &m, &gt), MOELENS_OK);
    EXPECT_NE(take(gt).find("driver_experts"), std::string::npos);
    const auto path = (dir / "m.ckpt").string();
    ASSERT_EQ(moelens_model_save(m, path.c_str()), MOELENS_OK);
    moelens_model* back = nullptr;
    ASSERT_EQ(moelens_model_load(path.c_str(), &back), MOELENS_OK);
    moelens_model_spec s{};
    ASSERT_EQ(moelens_model_get_spec(back, &s), MOELENS_OK);
    EXPECT_EQ(s.n_layers, 4u);
    EXPECT_EQ(s.n_experts, 8u);
    EXPECT_EQ(s.top_k, 2u);
    EXPECT_EQ(moelens_model_load((dir / "none").string().c_str(), &back), MOELENS_ERR_IO);
    FILE* f = std::fopen((dir / "junk").string().c_str(), "wb");
    std::fputs("\x01garbage", f);
    std::fclose(f);
    moelens_model* junk = nullptr;
    EXPECT_EQ(moelens_model_load((dir / "junk").string().c_str(), &junk), MOELENS_ERR_MALFORMED);
    moelens_model_free(m);
    moelens_model_free(back);
}

TEST(CApi, FullAnalysisThroughHandles) {
    Planted p;
    moelens_trace* t = nullptr;
    ASSERT_EQ(moelens_trace_run(p.model, p.corpus, &t), MOELENS_OK);
    size_t n_rec = 0, n_viol = 1, n_tok = 0;
    moelens_trace_record_count(t, &n_rec);
    moelens_corpus_size(p.corpus, nullptr, &n_tok);
    EXPECT_EQ(n_rec, n_tok);
    ASSERT_EQ(moelens_trace_validate(t, &n_viol, nullptr), MOELENS_OK);
    EXPECT_EQ(n_viol, 0u);

    moelens_scores* sc = nullptr;
    ASSERT_EQ(moelens_scores_compute(t, &sc), MOELENS_OK);
    double H = 0, A = 0, S = 0;
    uint64_t support = 0;
    ASSERT_EQ(moelens_scores_get(sc, 0, 1, "alpha", &H, &A, &S, &support), MOELENS_OK);
    EXPECT_GT(A, 0.95);
    EXPECT_EQ(moelens_scores_get(sc, 0, 1, "gamma", &H, &A, &S, &support), MOELENS_ERR_CONFIG);
    size_t n_dom = 0;
    ASSERT_EQ(moelens_domain_experts(sc, 2.0, 0.25, nullptr, nullptr, 0, &n_dom), MOELENS_OK);
    EXPECT_EQ(n_dom, 8u);
    EXPECT_EQ(moelens_domain_experts(sc, 1.0, 0.25, nullptr, nullptr, 0, &n_dom), MOELENS_ERR_CONFIG);

    moelens_causal* ce = nullptr;
    ASSERT_EQ(moelens_causal_compute(p.model, p.corpus, 1.0, -1, &ce), MOELENS_OK);
    moelens_drivers* d = nullptr;
    ASSERT_EQ(moelens_drivers_identify(ce, 0.05, &d), MOELENS_OK);
    size_t nd = 0;
    moelens_drivers_count(d, &nd);
    ASSERT_EQ(nd, 4u);
    const uint32_t want[4][2] = {{0, 6}, {1, 0}, {2, 5}, {3, 2}};
    for (size_t i = 0; i < nd; ++i) {
        uint32_t l = 9, e = 9;
        moelens_drivers_get(d, i, &l, &e);
        EXPECT_EQ(l, want[i][0]);
        EXPECT_EQ(e, want[i][1]);
    }
    double rates[4] = {};
    ASSERT_EQ(moelens_causal_rate(t, d, rates, 4), MOELENS_OK);
    for (double r : rates) EXPECT_GT(r, 0.0);
    EXPECT_EQ(moelens_causal_rate(t, d, rates, 2), MOELENS_ERR_INVALID_INPUT);

    const uint32_t layers[1] = {0}, experts[1] = {6};
    double frac[5] = {};
    uint64_t total = 0;
    ASSERT_EQ(moelens_position_bins(t, layers, experts, 1, "beta", frac, &total), MOELENS_OK);
    EXPECT_GT(total, 0u);
    EXPECT_NEAR(frac[0] + frac[1] + frac[2] + frac[3] + frac[4], 1.0, 1e-9);

    const auto dir = scratch("analysis");
    size_t rows = 0;
    ASSERT_EQ(moelens_assoc_write(t, layers, experts, 1, 5, "driver", (dir / "a.csv").string().c_str(), "p", &rows),
              MOELENS_OK);
    EXPECT_GT(rows, 0u);
    ASSERT_EQ(moelens_drivers_write(d, (dir / "d.csv").string().c_str(), "p"), MOELENS_OK);
    moelens_drivers* d2 = nullptr;
    ASSERT_EQ(moelens_drivers_read((dir / "d.csv").string().c_str(), &d2), MOELENS_OK);
    moelens_drivers_count(d2, &nd);
    EXPECT_EQ(nd, 4u);

    moelens_drivers_free(d2);
    moelens_drivers_free(d);
    moelens_causal_free(ce);
    moelens_scores_free(sc);
    moelens_trace_free(t);
}

TEST(CApi, SweepRowsAndPlanBounds) {
    Planted p;
    const auto dir = scratch("sweep");
    moelens_plans* plans = nullptr;
    ASSERT_EQ(moelens_plans_create(&plans), MOELENS_OK);
    size_t rows = 0;
    ASSERT_EQ(moelens_sweep_write(p.model, p.task, plans, (dir / "s.csv").string().c_str(), "p", &rows), MOELENS_OK);
    EXPECT_EQ(rows, 1u);
    for (const char* label : {"a", "b", "c", "d"}) {
        moelens_plans_add(plans, label);
        moelens_plans_add_edit(plans, 0, 1, 1.2);
    }
    ASSERT_EQ(moelens_sweep_write(p.model, p.task, plans, (dir / "s.csv").string().c_str(), "p", &rows), MOELENS_OK);
    EXPECT_EQ(rows, 5u);
    moelens_plans_add(plans, "bad");
    moelens_plans_add_edit(plans, 0, 99, 1.2);
    EXPECT_EQ(moelens_sweep_write(p.model, p.task, plans, (dir / "s.csv").string().c_str(), "p", &rows),
              MOELENS_ERR_CONFIG);
    EXPECT_EQ(moelens_plans_add_edit(plans, 0, 1, 0.0), MOELENS_ERR_INVALID_INPUT);
    double acc = 0, wf1 = 0;
    ASSERT_EQ(moelens_evaluate(p.model, p.task, nullptr, 0, &acc, &wf1), MOELENS_OK);
    EXPECT_GT(acc, 0.5);
    moelens_plans_free(plans);
}

TEST(CApi, PipelineRunsAndNamesFailingStage) {
    Planted p;
    const auto dir = scratch("pipeline");
    const auto model = (dir / "m.ckpt").string(), corpus = (dir / "c.tsv").string(), task = (dir / "t.tsv").string();
    ASSERT_EQ(moelens_model_save(p.model, model.c_str()), MOELENS_OK);
    ASSERT_EQ(moelens_corpus_write(p.corpus, corpus.c_str()), MOELENS_OK);
    ASSERT_EQ(moelens_task_write(p.task, task.c_str()), MOELENS_OK);
    const auto out = (dir / "out").string();
    moelens_pipeline_config cfg;
    moelens_pipeline_config_init(&cfg);
    EXPECT_EQ(cfg.rho, 2.0);
    EXPECT_EQ(cfg.sign, -1);
    cfg.model_path = model.c_str();
    cfg.corpus_path = corpus.c_str();
    cfg.task_path = task.c_str();
    cfg.out_dir = out.c_str();
    char* summary = nullptr;
    ASSERT_EQ(moelens_pipeline_run(&cfg, &summary), MOELENS_OK) << moelens_last_error();
    EXPECT_NE(take(summary).find("drivers: (0,6) (1,0) (2,5) (3,2)"), std::string::npos);
    cfg.quantile = 1.5;
    EXPECT_EQ(moelens_pipeline_run(&cfg, nullptr), MOELENS_ERR_CONFIG);
    EXPECT_NE(std::string(moelens_last_error()).find("stage 'config'"), std::string::npos);
}

TEST(CApi, TraceFileValidation) {
    const auto dir = scratch("trace");
    const auto path = (dir / "t.jsonl").string();
    FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("{\"schema_version\":\"9\"}\n", f);
    std::fclose(f);
    moelens_trace* t = nullptr;
    EXPECT_EQ(moelens_trace_read(path.c_str(), &t), MOELENS_ERR_SCHEMA);
}
