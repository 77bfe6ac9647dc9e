// SPDX-License-Identifier: Apache-2.0

#include "moelens/moelens.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "moelens/causal.hpp"
#include "moelens/checkpoint.hpp"
#include "moelens/corpus.hpp"
#include "moelens/domain_metrics.hpp"
#include "moelens/error.hpp"
#include "moelens/intervention.hpp"
#include "moelens/pipeline.hpp"
#include "moelens/planted.hpp"
#include "moelens/report.hpp"
#include "moelens/token_analysis.hpp"
#include "moelens/trace.hpp"
#include "moelens/trainer.hpp"

struct moelens_model {
    moelens::MoEModel impl;
};
struct moelens_corpus {
    moelens::Corpus impl;
};
struct moelens_task {
    moelens::Task impl;
};
struct moelens_trace {
    moelens::RoutingTrace impl;
};
struct moelens_scores {
    moelens::ExpertScoreTable impl;
};
struct moelens_causal {
    moelens::CausalEffectMatrix impl;
};
struct moelens_drivers {
    moelens::DriverSet impl;
};
struct moelens_plans {
    std::vector<moelens::InterventionPlan> impl;
};

namespace {

using namespace moelens;

thread_local std::string g_last_error;

moelens_status map_code(ErrorCode c) {
    switch (c) {
        case ErrorCode::InvalidInput: return MOELENS_ERR_INVALID_INPUT;
        case ErrorCode::Configuration: return MOELENS_ERR_CONFIG;
        case ErrorCode::EmptyDomain: return MOELENS_ERR_EMPTY_DOMAIN;
        case ErrorCode::Classification: return MOELENS_ERR_CLASSIFICATION;
        case ErrorCode::Schema: return MOELENS_ERR_SCHEMA;
        case ErrorCode::Malformed: return MOELENS_ERR_MALFORMED;
        case ErrorCode::TrainingFailure: return MOELENS_ERR_TRAINING;
        case ErrorCode::Io: return MOELENS_ERR_IO;
    }
    return MOELENS_ERR_INTERNAL;
}

template <typename F>
moelens_status guard(F&& f) noexcept {
    try {
        g_last_error.clear();
        f();
        return MOELENS_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return map_code(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
    } catch (const std::exception& e) {
        g_last_error = e.what();
    } catch (...) {
        g_last_error = "unknown error";
    }
    return MOELENS_ERR_INTERNAL;
}

template <typename T>
const T& need(const T* p, const char* name) {
    require(p != nullptr, ErrorCode::InvalidInput, std::string(name) + " is NULL");
    return *p;
}

template <typename T>
T& need_mut(T* p, const char* name) {
    require(p != nullptr, ErrorCode::InvalidInput, std::string(name) + " is NULL");
    return *p;
}

std::string str(const char* s, const char* name) {
    require(s != nullptr, ErrorCode::InvalidInput, std::string(name) + " is NULL");
    return s;
}

std::string opt_str(const char* s) { return s ? s : ""; }

char* dup(const std::string& s) {
    auto* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <typename H, typename V>
void emit(H** out, V&& value) {
    need_mut(out, "out");
    *out = new H{std::forward<V>(value)};
}

PlantedSpec planted_from(const char* json) { return json ? planted_spec_from_json(json) : default_planted_spec(); }

std::vector<ExpertRef> expert_list(const uint32_t* layers, const uint32_t* experts, size_t n) {
    require(n == 0 || (layers && experts), ErrorCode::InvalidInput, "expert arrays are NULL");
    std::vector<ExpertRef> out;
    for (size_t i = 0; i < n; ++i) out.push_back({layers[i], experts[i]});
    return out;
}

SyntheticOptions synth(uint32_t per_domain, uint32_t min_len, uint32_t max_len, uint64_t seed) {
    return SyntheticOptions{per_domain, min_len, max_len, seed};
}

}  // namespace

extern "C" {

const char* moelens_version(void) { return "0.1.0"; }

const char* moelens_status_name(moelens_status status) {
    switch (status) {
        case MOELENS_OK: return "ok";
        case MOELENS_ERR_INVALID_INPUT: return "invalid-input";
        case MOELENS_ERR_CONFIG: return "configuration";
        case MOELENS_ERR_EMPTY_DOMAIN: return "empty-domain";
        case MOELENS_ERR_CLASSIFICATION: return "classification";
        case MOELENS_ERR_SCHEMA: return "schema";
        case MOELENS_ERR_MALFORMED: return "malformed";
        case MOELENS_ERR_TRAINING: return "training-failure";
        case MOELENS_ERR_IO: return "io";
        case MOELENS_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* moelens_last_error(void) { return g_last_error.c_str(); }

void moelens_string_free(char* s) { std::free(s); }

// ---- models

moelens_status moelens_model_create_random(const moelens_model_spec* spec, moelens_model** out) {
    return guard([&] {
        const auto& s = need(spec, "spec");
        emit(out, init_random(ModelSpec{s.n_layers, s.n_experts, s.top_k, s.d_model, s.d_ff, s.vocab_size, s.seed}));
    });
}

moelens_status moelens_model_create_planted(const char* planted_spec_json, moelens_model** out,
                                            char** ground_truth_json) {
    return guard([&] {
        need_mut(out, "out");
        auto [model, truth] = build_planted_model(planted_from(planted_spec_json));
        std::string gt = ground_truth_to_json(truth);
        *out = new moelens_model{std::move(model)};
        if (ground_truth_json) *ground_truth_json = dup(gt);
    });
}

moelens_status moelens_default_planted_spec(char** json) {
    return guard([&] {
        need_mut(json, "json");
        *json = dup(planted_spec_to_json(default_planted_spec()));
    });
}

moelens_status moelens_model_load(const char* path, moelens_model** out) {
    return guard([&] { emit(out, load_checkpoint(str(path, "path"))); });
}

moelens_status moelens_model_save(const moelens_model* model, const char* path) {
    return guard([&] { save_checkpoint(need(model, "model").impl, str(path, "path")); });
}

moelens_status moelens_model_get_spec(const moelens_model* model, moelens_model_spec* out) {
    return guard([&] {
        const auto& s = need(model, "model").impl.spec;
        need_mut(out, "out") = moelens_model_spec{s.n_layers, s.n_experts, s.top_k, s.d_model, s.d_ff, s.vocab_size,
                                                  s.seed};
    });
}

moelens_status moelens_model_descriptor(const moelens_model* model, char** out) {
    return guard([&] { need_mut(out, "out") = dup(need(model, "model").impl.descriptor()); });
}

moelens_status moelens_model_forward(const moelens_model* model, const uint32_t* tokens, size_t n,
                                     double* distributions, uint32_t* topk_ids, double* topk_probs) {
    return guard([&] {
        const auto& m = need(model, "model").impl;
        require(tokens != nullptr || n == 0, ErrorCode::InvalidInput, "tokens is NULL");
        need_mut(distributions, "distributions");
        const auto r = forward(m, std::span<const TokenId>(tokens, n));
        const auto V = m.spec.vocab_size, L = m.spec.n_layers, K = m.spec.top_k;
        for (size_t p = 0; p < n; ++p) {
            std::memcpy(distributions + p * V, r.distributions[p].data(), V * sizeof(double));
            for (size_t l = 0; l < L; ++l)
                for (size_t k = 0; k < K; ++k) {
                    const auto idx = (p * L + l) * K + k;
                    if (topk_ids) topk_ids[idx] = r.routing[p][l].topk.ids[k];
                    if (topk_probs) topk_probs[idx] = r.routing[p][l].topk.probs[k];
                }
        }
    });
}

moelens_status moelens_model_train(moelens_model* model, const moelens_corpus* corpus, double learning_rate,
                                   uint32_t steps, uint32_t batch_size, uint64_t seed, double* initial_loss,
                                   double* final_loss) {
    return guard([&] {
        auto& m = need_mut(model, "model");
        auto res = train_toy(m.impl, need(corpus, "corpus").impl, TrainOptions{learning_rate, steps, batch_size, seed});
        m.impl = std::move(res.model);
        if (initial_loss) *initial_loss = res.initial_loss;
        if (final_loss) *final_loss = res.final_loss;
    });
}

void moelens_model_free(moelens_model* model) { delete model; }

// ---- corpora and tasks

moelens_status moelens_corpus_read(const char* path, moelens_corpus** out) {
    return guard([&] {
        auto c = read_corpus(str(path, "path"));
        c.validate();
        emit(out, std::move(c));
    });
}

moelens_status moelens_corpus_write(const moelens_corpus* corpus, const char* path) {
    return guard([&] { write_corpus(need(corpus, "corpus").impl, str(path, "path")); });
}

moelens_status moelens_corpus_synthesize(const char* planted_spec_json, uint32_t sequences_per_domain,
                                         uint32_t min_length, uint32_t max_length, uint64_t seed,
                                         moelens_corpus** out) {
    return guard([&] {
        const auto spec = planted_from(planted_spec_json);
        emit(out, synthesize_corpus(spec.domains, synth(sequences_per_domain, min_length, max_length, seed)));
    });
}

moelens_status moelens_corpus_size(const moelens_corpus* corpus, size_t* n_sequences, size_t* n_tokens) {
    return guard([&] {
        const auto& c = need(corpus, "corpus").impl;
        if (n_sequences) *n_sequences = c.sequences.size();
        if (n_tokens) *n_tokens = c.token_count();
    });
}

void moelens_corpus_free(moelens_corpus* corpus) { delete corpus; }

moelens_status moelens_task_read(const char* path, moelens_task** out) {
    return guard([&] { emit(out, read_task(str(path, "path"))); });
}

moelens_status moelens_task_write(const moelens_task* task, const char* path) {
    return guard([&] { write_task(need(task, "task").impl, str(path, "path")); });
}

moelens_status moelens_task_synthesize(const char* planted_spec_json, uint32_t examples_per_domain,
                                       uint32_t min_length, uint32_t max_length, uint64_t seed, moelens_task** out) {
    return guard([&] {
        const auto spec = planted_from(planted_spec_json);
        emit(out, synthesize_task(spec.domains, synth(examples_per_domain, min_length, max_length, seed)));
    });
}

moelens_status moelens_task_size(const moelens_task* task, size_t* n_examples) {
    return guard([&] { need_mut(n_examples, "n_examples") = need(task, "task").impl.examples.size(); });
}

void moelens_task_free(moelens_task* task) { delete task; }

// ---- traces

moelens_status moelens_trace_run(const moelens_model* model, const moelens_corpus* corpus, moelens_trace** out) {
    return guard([&] { emit(out, run_trace(need(model, "model").impl, need(corpus, "corpus").impl)); });
}

moelens_status moelens_trace_read(const char* path, moelens_trace** out) {
    return guard([&] { emit(out, read_trace(str(path, "path"))); });
}

moelens_status moelens_trace_write(const moelens_trace* trace, const char* path) {
    return guard([&] { write_trace(need(trace, "trace").impl, str(path, "path")); });
}

moelens_status moelens_trace_record_count(const moelens_trace* trace, size_t* n) {
    return guard([&] { need_mut(n, "n") = need(trace, "trace").impl.records.size(); });
}

moelens_status moelens_trace_validate(const moelens_trace* trace, size_t* n_violations, char** report) {
    return guard([&] {
        const auto v = validate_trace(need(trace, "trace").impl);
        need_mut(n_violations, "n_violations") = v.size();
        if (report) {
            std::string text;
            for (const auto& x : v) text += to_string(x) + "\n";
            *report = dup(text);
        }
    });
}

void moelens_trace_free(moelens_trace* trace) { delete trace; }

// ---- domain metrics

moelens_status moelens_scores_compute(const moelens_trace* trace, moelens_scores** out) {
    return guard([&] { emit(out, score_table(need(trace, "trace").impl)); });
}

moelens_status moelens_scores_get(const moelens_scores* scores, uint32_t layer, uint32_t expert, const char* domain,
                                  double* H, double* A, double* S, uint64_t* support) {
    return guard([&] {
        const auto& t = need(scores, "scores").impl;
        const auto d = str(domain, "domain");
        const auto it = std::find(t.domains.begin(), t.domains.end(), d);
        require(it != t.domains.end(), ErrorCode::Configuration, "unknown domain '" + d + "'");
        const auto& c = t.at(layer, expert, static_cast<std::size_t>(it - t.domains.begin()));
        if (H) *H = c.H;
        if (A) *A = c.A;
        if (S) *S = c.S;
        if (support) *support = c.support;
    });
}

moelens_status moelens_scores_write(const moelens_scores* scores, const char* path, const char* provenance) {
    return guard([&] { write_scores_csv(need(scores, "scores").impl, str(path, "path"), opt_str(provenance)); });
}

moelens_status moelens_scores_plot(const moelens_scores* scores, const char* svg_path, const char* provenance) {
    return guard([&] { write_cwas_svg(need(scores, "scores").impl, str(svg_path, "svg_path"), opt_str(provenance)); });
}

moelens_status moelens_taxonomy_write(const moelens_scores* scores, double rho, double sigma_max, const char* path,
                                      const char* provenance, size_t* n_domain_experts) {
    return guard([&] {
        const auto tax = classify_experts(need(scores, "scores").impl, rho, sigma_max);
        write_taxonomy_csv(tax, str(path, "path"), opt_str(provenance));
        if (n_domain_experts)
            *n_domain_experts = static_cast<size_t>(std::count_if(
                tax.begin(), tax.end(), [](const TaxonomyEntry& t) { return t.kind == TaxonomyKind::Domain; }));
    });
}

moelens_status moelens_domain_experts(const moelens_scores* scores, double rho, double sigma_max, uint32_t* layers,
                                      uint32_t* experts, size_t capacity, size_t* n) {
    return guard([&] {
        const auto tax = classify_experts(need(scores, "scores").impl, rho, sigma_max);
        size_t count = 0;
        for (const auto& t : tax) {
            if (t.kind != TaxonomyKind::Domain) continue;
            if (count < capacity && layers && experts) {
                layers[count] = t.layer;
                experts[count] = t.expert;
            }
            ++count;
        }
        need_mut(n, "n") = count;
    });
}

void moelens_scores_free(moelens_scores* scores) { delete scores; }

// ---- causal

moelens_status moelens_causal_compute(const moelens_model* model, const moelens_corpus* corpus, double magnitude,
                                      int sign, moelens_causal** out) {
    return guard([&] {
        emit(out, causal_effect_matrix(need(model, "model").impl, need(corpus, "corpus").impl, magnitude, sign));
    });
}

moelens_status moelens_causal_get(const moelens_causal* causal, uint32_t layer, uint32_t expert, double* ce) {
    return guard([&] { need_mut(ce, "ce") = need(causal, "causal").impl.at(layer, expert).ce; });
}

moelens_status moelens_causal_write(const moelens_causal* causal, const char* path, const char* provenance) {
    return guard([&] { write_causal_csv(need(causal, "causal").impl, str(path, "path"), opt_str(provenance)); });
}

void moelens_causal_free(moelens_causal* causal) { delete causal; }

moelens_status moelens_drivers_identify(const moelens_causal* causal, double quantile, moelens_drivers** out) {
    return guard([&] { emit(out, identify_drivers(need(causal, "causal").impl, quantile)); });
}

namespace {
DriverSet drivers_of(const std::vector<ExpertRef>& refs) {
    DriverSet d;
    for (const auto& r : refs) d.members.push_back({r.layer, r.expert, 0.0, 0});
    std::sort(d.members.begin(), d.members.end(), [](const CausalCell& a, const CausalCell& b) {
        return ExpertRef{a.layer, a.expert} < ExpertRef{b.layer, b.expert};
    });
    std::uint32_t layers = 0;
    for (const auto& r : refs) layers = std::max(layers, r.layer + 1);
    d.thresholds.assign(layers, 0.0);
    return d;
}
}  // namespace

moelens_status moelens_drivers_read(const char* path, moelens_drivers** out) {
    return guard([&] { emit(out, drivers_of(read_drivers_csv(str(path, "path")))); });
}

moelens_status moelens_drivers_from_list(const uint32_t* layers, const uint32_t* experts, size_t n,
                                         moelens_drivers** out) {
    return guard([&] { emit(out, drivers_of(expert_list(layers, experts, n))); });
}

moelens_status moelens_drivers_count(const moelens_drivers* drivers, size_t* n) {
    return guard([&] { need_mut(n, "n") = need(drivers, "drivers").impl.members.size(); });
}

moelens_status moelens_drivers_get(const moelens_drivers* drivers, size_t index, uint32_t* layer, uint32_t* expert) {
    return guard([&] {
        const auto& d = need(drivers, "drivers").impl;
        require(index < d.members.size(), ErrorCode::InvalidInput, "driver index out of range");
        if (layer) *layer = d.members[index].layer;
        if (expert) *expert = d.members[index].expert;
    });
}

moelens_status moelens_drivers_warnings(const moelens_drivers* drivers, char** out) {
    return guard([&] {
        std::string text;
        for (const auto& w : need(drivers, "drivers").impl.warnings) text += w + "\n";
        need_mut(out, "out") = dup(text);
    });
}

moelens_status moelens_drivers_write(const moelens_drivers* drivers, const char* path, const char* provenance) {
    return guard([&] { write_drivers_csv(need(drivers, "drivers").impl, str(path, "path"), opt_str(provenance)); });
}

void moelens_drivers_free(moelens_drivers* drivers) { delete drivers; }

moelens_status moelens_causal_rate(const moelens_trace* trace, const moelens_drivers* drivers, double* rates,
                                   size_t capacity) {
    return guard([&] {
        const auto r = causal_rate(need(trace, "trace").impl, need(drivers, "drivers").impl.refs());
        require(rates != nullptr && capacity >= r.size(), ErrorCode::InvalidInput,
                "rates buffer needs " + std::to_string(r.size()) + " entries");
        std::copy(r.begin(), r.end(), rates);
    });
}

moelens_status moelens_causal_rate_write(const moelens_trace* trace, const moelens_drivers* drivers, const char* path,
                                         const char* svg_path, const char* provenance) {
    return guard([&] {
        const auto r = causal_rate(need(trace, "trace").impl, need(drivers, "drivers").impl.refs());
        write_causal_rate_csv(r, str(path, "path"), opt_str(provenance));
        if (svg_path) write_causal_rate_svg(r, svg_path, opt_str(provenance));
    });
}

// ---- token analysis

moelens_status moelens_position_bins(const moelens_trace* trace, const uint32_t* layers, const uint32_t* experts,
                                     size_t n, const char* domain, double* fractions, uint64_t* total) {
    return guard([&] {
        const auto rep = position_bins(need(trace, "trace").impl, expert_list(layers, experts, n), str(domain, "domain"));
        need_mut(fractions, "fractions");
        std::copy(rep.fractions.begin(), rep.fractions.end(), fractions);
        if (total) *total = rep.total;
    });
}

moelens_status moelens_bins_write(const moelens_trace* trace, const uint32_t* layers, const uint32_t* experts,
                                  size_t n, const char* path, const char* svg_path, const char* provenance) {
    return guard([&] {
        const auto& t = need(trace, "trace").impl;
        const auto set = expert_list(layers, experts, n);
        std::vector<PositionBinReport> reports;
        for (const auto& d : t.domains) reports.push_back(position_bins(t, set, d));
        write_bins_csv(reports, str(path, "path"), opt_str(provenance));
        if (svg_path) write_bins_svg(reports, svg_path, opt_str(provenance));
    });
}

moelens_status moelens_assoc_write(const moelens_trace* trace, const uint32_t* layers, const uint32_t* experts,
                                   size_t n, uint64_t min_count, const char* set_label, const char* path,
                                   const char* provenance, size_t* n_rows) {
    return guard([&] {
        const auto label = set_label ? std::string(set_label) : std::string("experts");
        const auto table =
            token_expert_association(need(trace, "trace").impl, expert_list(layers, experts, n), min_count, label);
        write_association_csv({table}, str(path, "path"), opt_str(provenance));
        if (n_rows) *n_rows = table.rows.size();
    });
}

// ---- interventions

moelens_status moelens_plans_create(moelens_plans** out) {
    return guard([&] { emit(out, std::vector<InterventionPlan>{}); });
}

moelens_status moelens_plans_read(const char* path, moelens_plans** out) {
    return guard([&] { emit(out, read_plans(str(path, "path"))); });
}

moelens_status moelens_plans_add(moelens_plans* plans, const char* label) {
    return guard([&] { need_mut(plans, "plans").impl.push_back({str(label, "label"), {}}); });
}

moelens_status moelens_plans_add_edit(moelens_plans* plans, uint32_t layer, uint32_t expert, double factor) {
    return guard([&] {
        auto& p = need_mut(plans, "plans").impl;
        require(!p.empty(), ErrorCode::InvalidInput, "add a plan before adding edits");
        require(std::isfinite(factor) && factor > 0.0, ErrorCode::InvalidInput, "factor must be > 0");
        p.back().edits.push_back({layer, expert, factor});
    });
}

moelens_status moelens_plans_count(const moelens_plans* plans, size_t* n) {
    return guard([&] { need_mut(n, "n") = need(plans, "plans").impl.size(); });
}

void moelens_plans_free(moelens_plans* plans) { delete plans; }

moelens_status moelens_evaluate(const moelens_model* model, const moelens_task* task, const moelens_plans* plans,
                                size_t index, double* accuracy, double* weighted_f1) {
    return guard([&] {
        InterventionPlan plan{"baseline", {}};
        if (plans) {
            require(index < plans->impl.size(), ErrorCode::InvalidInput, "plan index out of range");
            plan = plans->impl[index];
        }
        const auto r = evaluate(need(model, "model").impl, need(task, "task").impl, plan);
        if (accuracy) *accuracy = r.accuracy;
        if (weighted_f1) *weighted_f1 = r.weighted_f1;
    });
}

moelens_status moelens_sweep_write(const moelens_model* model, const moelens_task* task, const moelens_plans* plans,
                                   const char* path, const char* provenance, size_t* n_rows) {
    return guard([&] {
        const auto& m = need(model, "model").impl;
        const auto& t = need(task, "task").impl;
        const auto& p = need(plans, "plans").impl;
        const auto reports = p.empty() ? std::vector<EvalReport>{evaluate(m, t, InterventionPlan{"baseline", {}})}
                                       : sweep(m, t, p);
        write_sweep_csv(reports, str(path, "path"), opt_str(provenance));
        if (n_rows) *n_rows = reports.size();
    });
}

// ---- pipeline

void moelens_pipeline_config_init(moelens_pipeline_config* config) {
    if (!config) return;
    *config = moelens_pipeline_config{nullptr, nullptr, nullptr, nullptr, kDefaultRho, kDefaultSigmaMax,
                                      kDefaultQuantile, kDefaultMinCount, 1.0, -1, 0};
}

moelens_status moelens_pipeline_run(const moelens_pipeline_config* config, char** summary) {
    return guard([&] {
        const auto& c = need(config, "config");
        PipelineConfig cfg;
        cfg.model_path = opt_str(c.model_path);
        cfg.corpus_path = opt_str(c.corpus_path);
        cfg.task_path = opt_str(c.task_path);
        cfg.out_dir = opt_str(c.out_dir);
        cfg.rho = c.rho;
        cfg.sigma_max = c.sigma_max;
        cfg.quantile = c.quantile;
        cfg.min_count = c.min_count;
        cfg.magnitude = c.magnitude;
        cfg.sign = c.sign;
        cfg.seed = c.seed;
        const auto res = run_pipeline(cfg);
        if (summary) {
            std::string s;
            s += "artifacts:";
            for (const auto& a : res.artifacts) s += " " + a;
            s += "\ndomain experts:";
            for (const auto& r : res.domain_experts) s += " " + to_string(r);
            s += "\ndrivers:";
            for (const auto& r : res.drivers) s += " " + to_string(r);
            s += "\n";
            for (const auto& r : res.sweep)
                s += r.label + ": ACC " + format_number(r.accuracy) + " (" + format_number(r.delta_accuracy) +
                     ") WF1 " + format_number(r.weighted_f1) + "\n";
            for (const auto& w : res.warnings) s += "warning: " + w + "\n";
            *summary = dup(s);
        }
    });
}

}  // extern "C"
