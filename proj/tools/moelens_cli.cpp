// SPDX-License-Identifier: Apache-2.0
// moelens command-line front end. Talks to the library only through the C API.

#include <moelens/moelens.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct CliError : std::runtime_error {
    int code;
    CliError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
};

void check(moelens_status s, const std::string& what) {
    if (s != MOELENS_OK) throw CliError(static_cast<int>(s), what + ": " + moelens_last_error());
}

void config_error(const std::string& msg) { throw CliError(MOELENS_ERR_CONFIG, msg); }

// Owning wrappers over the C handles.
template <typename T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    ~Handle() { Free(p); }
    T** out() { return &p; }
    operator T*() const { return p; }
};
using Model = Handle<moelens_model, moelens_model_free>;
using Corpus = Handle<moelens_corpus, moelens_corpus_free>;
using TaskH = Handle<moelens_task, moelens_task_free>;
using Trace = Handle<moelens_trace, moelens_trace_free>;
using Scores = Handle<moelens_scores, moelens_scores_free>;
using Causal = Handle<moelens_causal, moelens_causal_free>;
using Drivers = Handle<moelens_drivers, moelens_drivers_free>;
using Plans = Handle<moelens_plans, moelens_plans_free>;

std::string take(char* s) {
    std::string out = s ? s : "";
    moelens_string_free(s);
    return out;
}

struct Options {
    std::string model, corpus, task, trace, plans, drivers, experts, spec, out, label = "experts";
    double rho = 2.0, sigma_max = 0.25, quantile = 0.05, magnitude = 1.0;
    std::uint64_t min_count = 5, seed = 0;
    int sign = -1;
    // gen-model
    std::optional<std::uint32_t> n_layers, n_experts, top_k, d_model, d_ff, vocab;
    // gen-corpus
    std::uint32_t sequences = 64, min_len = 4, max_len = 16;
    std::uint32_t task_examples = 200, task_min_len = 2, task_max_len = 8;
    std::uint64_t corpus_seed = 11, task_seed = 23;
};

const std::string& need(const std::string& value, const char* flag) {
    if (value.empty()) config_error(std::string(flag) + " is required");
    return value;
}

std::string out_dir(const Options& o) {
    std::string dir = o.out;
    if (dir.empty()) {
        const char* env = std::getenv("MOELENS_OUT_DIR");
        dir = env && *env ? env : "moelens-out";
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw CliError(MOELENS_ERR_IO, "cannot create output directory '" + dir + "'");
    return dir;
}

std::string join(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string provenance(const std::string& cmd, const Options& o) {
    return "moelens " + cmd + " model=" + o.model + " corpus=" + o.corpus + " task=" + o.task + " trace=" + o.trace +
           " rho=" + fmt(o.rho) + " sigma_max=" + fmt(o.sigma_max) + " quantile=" + fmt(o.quantile) +
           " min_count=" + std::to_string(o.min_count) + " magnitude=" + fmt(o.magnitude) +
           " sign=" + std::to_string(o.sign) + " seed=" + std::to_string(o.seed);
}

void validate_thresholds(const Options& o) {
    if (!(o.rho > 1.0)) config_error("--rho must be > 1");
    if (!(o.sigma_max >= 0.0)) config_error("--sigma-max must be >= 0");
    if (!(o.quantile > 0.0 && o.quantile < 1.0)) config_error("--quantile must lie in (0,1)");
    if (o.min_count < 1) config_error("--min-count must be >= 1");
    if (!(o.magnitude >= 0.0)) config_error("--magnitude must be >= 0");
    if (o.sign != 1 && o.sign != -1) config_error("--sign must be +1 or -1");
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError(MOELENS_ERR_IO, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw CliError(MOELENS_ERR_IO, "cannot write '" + path + "'");
}

struct ExpertSet {
    std::vector<std::uint32_t> layers, experts;
    std::size_t size() const { return layers.size(); }
};

ExpertSet parse_experts(const std::string& text) {
    ExpertSet s;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        try {
            if (colon == std::string::npos) throw std::invalid_argument(item);
            std::size_t a = 0, b = 0;
            const auto l = std::stoul(item.substr(0, colon), &a);
            const auto e = std::stoul(item.substr(colon + 1), &b);
            if (a != colon || b != item.size() - colon - 1) throw std::invalid_argument(item);
            s.layers.push_back(static_cast<std::uint32_t>(l));
            s.experts.push_back(static_cast<std::uint32_t>(e));
        } catch (const std::logic_error&) {
            config_error("bad expert '" + item + "' in --experts (expected layer:expert)");
        }
    }
    return s;
}

ExpertSet from_drivers(const moelens_drivers* d) {
    ExpertSet s;
    std::size_t n = 0;
    check(moelens_drivers_count(d, &n), "drivers");
    s.layers.resize(n);
    s.experts.resize(n);
    for (std::size_t i = 0; i < n; ++i) check(moelens_drivers_get(d, i, &s.layers[i], &s.experts[i]), "drivers");
    return s;
}

// Expert set from --experts or --drivers.
ExpertSet expert_set(const Options& o) {
    if (!o.experts.empty() && !o.drivers.empty()) config_error("give either --experts or --drivers, not both");
    if (!o.experts.empty()) return parse_experts(o.experts);
    if (o.drivers.empty()) config_error("--experts or --drivers is required");
    Drivers d;
    check(moelens_drivers_read(o.drivers.c_str(), d.out()), "reading drivers");
    return from_drivers(d);
}

std::string list(const ExpertSet& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i)
        out += (i ? "," : "") + std::to_string(s.layers[i]) + ":" + std::to_string(s.experts[i]);
    return out.empty() ? "(none)" : out;
}

void load_trace(const Options& o, Trace& t) {
    check(moelens_trace_read(need(o.trace, "--trace").c_str(), t.out()), "reading trace");
}

// ---- subcommands

int cmd_gen_model(const Options& o) {
    const auto dir = out_dir(o);
    const auto ckpt = join(dir, "model.ckpt");
    Model m;
    const bool random = o.n_layers || o.n_experts || o.top_k || o.d_model || o.d_ff || o.vocab;
    if (random && !o.spec.empty()) config_error("--spec cannot be combined with model-shape flags");
    std::string truth;
    if (random) {
        const auto base = nlohmann::json::parse(take([] {
                              char* s = nullptr;
                              check(moelens_default_planted_spec(&s), "default spec");
                              return s;
                          }()))
                              .at("base");
        moelens_model_spec spec{o.n_layers.value_or(base.at("n_layers").get<std::uint32_t>()),
                                o.n_experts.value_or(base.at("n_experts").get<std::uint32_t>()),
                                o.top_k.value_or(base.at("top_k").get<std::uint32_t>()),
                                o.d_model.value_or(base.at("d_model").get<std::uint32_t>()),
                                o.d_ff.value_or(base.at("d_ff").get<std::uint32_t>()),
                                o.vocab.value_or(base.at("vocab_size").get<std::uint32_t>()),
                                o.seed};
        check(moelens_model_create_random(&spec, m.out()), "invalid model spec");
    } else {
        const std::string spec_text = o.spec.empty() ? std::string() : read_file(o.spec);
        char* gt = nullptr;
        check(moelens_model_create_planted(o.spec.empty() ? nullptr : spec_text.c_str(), m.out(), &gt),
              "invalid planted spec");
        truth = take(gt);
    }
    check(moelens_model_save(m, ckpt.c_str()), "writing checkpoint");
    Model back;
    check(moelens_model_load(ckpt.c_str(), back.out()), "validating checkpoint");
    std::cout << "checkpoint: " << ckpt << "\n";
    if (!truth.empty()) {
        const auto gt_path = join(dir, "ground_truth.json");
        write_file(gt_path, truth);
        std::cout << "ground truth: " << gt_path << "\n";
    }
    char* desc = nullptr;
    check(moelens_model_descriptor(back, &desc), "descriptor");
    std::cout << "model: " << take(desc) << "\n";
    return 0;
}

int cmd_gen_corpus(const Options& o) {
    const auto dir = out_dir(o);
    const std::string spec_text = o.spec.empty() ? std::string() : read_file(o.spec);
    const char* spec = o.spec.empty() ? nullptr : spec_text.c_str();
    Corpus c;
    check(moelens_corpus_synthesize(spec, o.sequences, o.min_len, o.max_len, o.corpus_seed, c.out()), "corpus");
    TaskH t;
    check(moelens_task_synthesize(spec, o.task_examples, o.task_min_len, o.task_max_len, o.task_seed, t.out()),
          "task");
    const auto cp = join(dir, "corpus.tsv"), tp = join(dir, "task.tsv");
    check(moelens_corpus_write(c, cp.c_str()), "writing corpus");
    check(moelens_task_write(t, tp.c_str()), "writing task");
    std::size_t n_seq = 0, n_tok = 0, n_ex = 0;
    check(moelens_corpus_size(c, &n_seq, &n_tok), "corpus");
    check(moelens_task_size(t, &n_ex), "task");
    std::cout << "corpus: " << cp << " (" << n_seq << " sequences, " << n_tok << " tokens)\n"
              << "task: " << tp << " (" << n_ex << " examples)\n";
    return 0;
}

int cmd_trace(const Options& o) {
    Model m;
    check(moelens_model_load(need(o.model, "--model").c_str(), m.out()), "loading model");
    Corpus c;
    check(moelens_corpus_read(need(o.corpus, "--corpus").c_str(), c.out()), "loading corpus");
    Trace t;
    check(moelens_trace_run(m, c, t.out()), "tracing");
    const auto path = join(out_dir(o), "trace.jsonl");
    check(moelens_trace_write(t, path.c_str()), "writing trace");
    Trace back;
    check(moelens_trace_read(path.c_str(), back.out()), "re-reading trace");
    std::size_t n_viol = 0, n_rec = 0;
    check(moelens_trace_validate(back, &n_viol, nullptr), "validating trace");
    if (n_viol) throw CliError(MOELENS_ERR_SCHEMA, "written trace has " + std::to_string(n_viol) + " violations");
    check(moelens_trace_record_count(back, &n_rec), "trace");
    std::cout << "trace: " << path << " (" << n_rec << " records)\n";
    return 0;
}

int cmd_domain_experts(const Options& o) {
    validate_thresholds(o);
    Trace t;
    load_trace(o, t);
    Scores s;
    check(moelens_scores_compute(t, s.out()), "scores");
    const auto dir = out_dir(o);
    const auto prov = provenance("domain-experts", o);
    check(moelens_scores_write(s, join(dir, "scores.csv").c_str(), prov.c_str()), "writing scores");
    check(moelens_taxonomy_write(s, o.rho, o.sigma_max, join(dir, "taxonomy.csv").c_str(), prov.c_str(), nullptr),
          "taxonomy");
    check(moelens_scores_plot(s, join(dir, "cwas.svg").c_str(), prov.c_str()), "plot");
    std::size_t n = 0;
    check(moelens_domain_experts(s, o.rho, o.sigma_max, nullptr, nullptr, 0, &n), "taxonomy");
    ExpertSet set;
    set.layers.resize(n);
    set.experts.resize(n);
    check(moelens_domain_experts(s, o.rho, o.sigma_max, set.layers.data(), set.experts.data(), n, &n), "taxonomy");
    std::cout << "domain experts: " << list(set) << "\n";
    return 0;
}

int cmd_driver_experts(const Options& o) {
    validate_thresholds(o);
    Model m;
    check(moelens_model_load(need(o.model, "--model").c_str(), m.out()), "loading model");
    Corpus c;
    check(moelens_corpus_read(need(o.corpus, "--corpus").c_str(), c.out()), "loading corpus");
    Causal ce;
    check(moelens_causal_compute(m, c, o.magnitude, o.sign, ce.out()), "causal effects");
    Drivers d;
    check(moelens_drivers_identify(ce, o.quantile, d.out()), "drivers");
    const auto dir = out_dir(o);
    const auto prov = provenance("driver-experts", o);
    check(moelens_causal_write(ce, join(dir, "causal_matrix.csv").c_str(), prov.c_str()), "writing causal matrix");
    const auto dpath = join(dir, "drivers.csv");
    check(moelens_drivers_write(d, dpath.c_str(), prov.c_str()), "writing drivers");
    Drivers back;
    check(moelens_drivers_read(dpath.c_str(), back.out()), "re-reading drivers");
    char* warn = nullptr;
    check(moelens_drivers_warnings(d, &warn), "drivers");
    std::cerr << take(warn);
    std::cout << "drivers: " << list(from_drivers(d)) << "\n";
    return 0;
}

int cmd_causal_rate(const Options& o) {
    Trace t;
    load_trace(o, t);
    const auto set = expert_set(o);
    Drivers d;
    check(moelens_drivers_from_list(set.layers.data(), set.experts.data(), set.size(), d.out()), "expert set");
    const auto dir = out_dir(o);
    const auto prov = provenance("causal-rate", o);
    check(moelens_causal_rate_write(t, d, join(dir, "causal_rate.csv").c_str(), join(dir, "causal_rate.svg").c_str(),
                                    prov.c_str()),
          "causal rate");
    std::cout << "causal rate: " << join(dir, "causal_rate.csv") << "\n";
    return 0;
}

int cmd_bins(const Options& o) {
    Trace t;
    load_trace(o, t);
    const auto set = expert_set(o);
    const auto dir = out_dir(o);
    const auto prov = provenance("bins", o);
    check(moelens_bins_write(t, set.layers.data(), set.experts.data(), set.size(),
                             join(dir, "position_bins.csv").c_str(), join(dir, "position_bins.svg").c_str(),
                             prov.c_str()),
          "position bins");
    std::cout << "position bins: " << join(dir, "position_bins.csv") << "\n";
    return 0;
}

int cmd_assoc(const Options& o) {
    validate_thresholds(o);
    Trace t;
    load_trace(o, t);
    const auto set = expert_set(o);
    const auto dir = out_dir(o);
    const auto prov = provenance("assoc", o);
    std::size_t rows = 0;
    check(moelens_assoc_write(t, set.layers.data(), set.experts.data(), set.size(), o.min_count, o.label.c_str(),
                              join(dir, "association.csv").c_str(), prov.c_str(), &rows),
          "association");
    std::cout << "association: " << join(dir, "association.csv") << " (" << rows << " tokens)\n";
    return 0;
}

int cmd_intervene(const Options& o) {
    Model m;
    check(moelens_model_load(need(o.model, "--model").c_str(), m.out()), "loading model");
    TaskH t;
    check(moelens_task_read(need(o.task, "--task").c_str(), t.out()), "loading task");
    Plans p;
    if (o.plans.empty())
        check(moelens_plans_create(p.out()), "plans");
    else
        check(moelens_plans_read(o.plans.c_str(), p.out()), "reading plans");
    const auto path = join(out_dir(o), "intervention.csv");
    std::size_t rows = 0;
    check(moelens_sweep_write(m, t, p, path.c_str(), provenance("intervene", o).c_str(), &rows), "intervention");
    std::cout << read_file(path);
    std::cerr << "intervention: " << path << " (" << rows << " rows)\n";
    return 0;
}

int cmd_pipeline(const Options& o) {
    validate_thresholds(o);
    const auto dir = out_dir(o);
    moelens_pipeline_config cfg;
    moelens_pipeline_config_init(&cfg);
    cfg.model_path = need(o.model, "--model").c_str();
    cfg.corpus_path = need(o.corpus, "--corpus").c_str();
    cfg.task_path = need(o.task, "--task").c_str();
    cfg.out_dir = dir.c_str();
    cfg.rho = o.rho;
    cfg.sigma_max = o.sigma_max;
    cfg.quantile = o.quantile;
    cfg.min_count = o.min_count;
    cfg.magnitude = o.magnitude;
    cfg.sign = o.sign;
    cfg.seed = o.seed;
    char* summary = nullptr;
    check(moelens_pipeline_run(&cfg, &summary), "pipeline");
    std::cout << take(summary);
    return 0;
}

int cmd_validate(const Options& o) {
    Trace t;
    load_trace(o, t);
    std::size_t n = 0;
    char* report = nullptr;
    check(moelens_trace_validate(t, &n, &report), "validate");
    std::cout << take(report) << n << " violation" << (n == 1 ? "" : "s") << "\n";
    return n == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moelens: routing and causal analysis of mixture-of-experts models"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML or INI file with option defaults; command-line flags take precedence");
    app.set_version_flag("--version", std::string(moelens_version()));

    Options o;
    app.add_option("--model", o.model, "model checkpoint");
    app.add_option("--corpus", o.corpus, "domain-labelled corpus (TSV)");
    app.add_option("--task", o.task, "classification task (TSV)");
    app.add_option("--trace", o.trace, "routing trace (JSON lines)");
    app.add_option("--plans", o.plans, "intervention plan file");
    app.add_option("--drivers", o.drivers, "drivers.csv used as the expert set");
    app.add_option("--experts", o.experts, "expert set as layer:expert,...");
    app.add_option("--label", o.label, "name of the expert set in association output");
    app.add_option("--out", o.out, "output directory (default $MOELENS_OUT_DIR or ./moelens-out)");
    app.add_option("--rho", o.rho, "preference ratio threshold (> 1)");
    app.add_option("--sigma-max", o.sigma_max, "coefficient-of-variation cap for general experts");
    app.add_option("--quantile", o.quantile, "driver quantile q in (0,1)");
    app.add_option("--min-count", o.min_count, "minimum token count for association");
    app.add_option("--magnitude", o.magnitude, "gate perturbation magnitude");
    app.add_option("--sign", o.sign, "gate perturbation sign (+1 or -1)");
    app.add_option("--seed", o.seed, "seed for random models");
    app.add_option("--spec", o.spec, "planted spec JSON (default: reference spec)");
    app.add_option("--n-layers", o.n_layers, "random model: layers");
    app.add_option("--n-experts", o.n_experts, "random model: experts per layer");
    app.add_option("--top-k", o.top_k, "random model: experts per token");
    app.add_option("--d-model", o.d_model, "random model: residual width");
    app.add_option("--d-ff", o.d_ff, "random model: expert hidden width");
    app.add_option("--vocab", o.vocab, "random model: vocabulary size");
    app.add_option("--sequences", o.sequences, "corpus sequences per domain");
    app.add_option("--min-len", o.min_len, "corpus minimum sequence length");
    app.add_option("--max-len", o.max_len, "corpus maximum sequence length");
    app.add_option("--corpus-seed", o.corpus_seed, "corpus sampling seed");
    app.add_option("--task-examples", o.task_examples, "task examples per domain");
    app.add_option("--task-min-len", o.task_min_len, "task minimum example length");
    app.add_option("--task-max-len", o.task_max_len, "task maximum example length");
    app.add_option("--task-seed", o.task_seed, "task sampling seed");

    struct Sub {
        const char* name;
        const char* help;
        int (*run)(const Options&);
    };
    const Sub subs[] = {
        {"gen-model", "write a planted (or random) checkpoint and its ground truth", cmd_gen_model},
        {"gen-corpus", "sample a corpus and a classification task from a planted spec", cmd_gen_corpus},
        {"trace", "record routing decisions for a corpus", cmd_trace},
        {"domain-experts", "score experts per domain and classify them", cmd_domain_experts},
        {"driver-experts", "compute causal effects and select drivers", cmd_driver_experts},
        {"causal-rate", "per-layer fraction of tokens routed to an expert set", cmd_causal_rate},
        {"bins", "relative-position bins of tokens routed to an expert set", cmd_bins},
        {"assoc", "token association with an expert set", cmd_assoc},
        {"intervene", "evaluate gate-scaling plans on a task", cmd_intervene},
        {"pipeline", "run every analysis and write the report bundle", cmd_pipeline},
        {"validate", "check a trace file against the schema rules", cmd_validate},
    };
    int (*chosen)(const Options&) = nullptr;
    for (const auto& s : subs) {
        auto* sc = app.add_subcommand(s.name, s.help);
        sc->fallthrough();
        sc->callback([&chosen, run = s.run] { chosen = run; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : MOELENS_ERR_CONFIG;
    }

    try {
        return chosen(o);
    } catch (const CliError& e) {
        std::cerr << "moelens: error: " << e.what() << "\n";
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "moelens: error: " << e.what() << "\n";
        return MOELENS_ERR_INTERNAL;
    }
}
