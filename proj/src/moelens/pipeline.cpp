// SPDX-License-Identifier: Apache-2.0

#include "moelens/pipeline.hpp"

#include <filesystem>
#include <functional>

#include "moelens/checkpoint.hpp"
#include "moelens/corpus.hpp"
#include "moelens/error.hpp"
#include "moelens/report.hpp"
#include "moelens/trace.hpp"

namespace moelens {

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        fail(e.code(), std::string("stage '") + name + "' failed: " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("stage '") + name + "' failed: " + e.what());
    }
}

InterventionPlan make_plan(const std::string& label, const std::vector<ExpertRef>& refs, double factor) {
    InterventionPlan p{label, {}};
    for (const auto& r : refs) p.edits.push_back({r.layer, r.expert, factor});
    return p;
}

}  // namespace

std::string PipelineConfig::provenance(const std::string& command) const {
    return "moelens " + command + " model=" + model_path + " corpus=" + corpus_path + " task=" + task_path +
           " rho=" + format_number(rho) + " sigma_max=" + format_number(sigma_max) +
           " quantile=" + format_number(quantile) + " min_count=" + std::to_string(min_count) +
           " magnitude=" + format_number(magnitude) + " sign=" + std::to_string(sign) +
           " seed=" + std::to_string(seed);
}

std::vector<InterventionPlan> standard_plans(const std::vector<ExpertRef>& domain_experts,
                                             const std::vector<ExpertRef>& drivers, double up, double down) {
    return {make_plan("domain\xE2\x86\x91", domain_experts, up), make_plan("domain\xE2\x86\x93", domain_experts, down),
            make_plan("driver\xE2\x86\x91", drivers, up), make_plan("driver\xE2\x86\x93", drivers, down)};
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    PipelineResult res;
    const auto prov = cfg.provenance();
    namespace fs = std::filesystem;
    const fs::path dir(cfg.out_dir);

    stage("config", [&] {
        require(!cfg.model_path.empty(), ErrorCode::Configuration, "a model checkpoint is required");
        require(!cfg.corpus_path.empty(), ErrorCode::Configuration, "a corpus is required");
        require(!cfg.task_path.empty(), ErrorCode::Configuration, "a task file is required");
        require(!cfg.out_dir.empty(), ErrorCode::Configuration, "an output directory is required");
        require(cfg.rho > 1.0, ErrorCode::Configuration, "rho must be > 1");
        require(cfg.sigma_max >= 0.0, ErrorCode::Configuration, "sigma_max must be >= 0");
        require(cfg.quantile > 0.0 && cfg.quantile < 1.0, ErrorCode::Configuration, "quantile must lie in (0,1)");
        require(cfg.min_count >= 1, ErrorCode::Configuration, "min_count must be >= 1");
        std::error_code ec;
        fs::create_directories(dir, ec);
        require(!ec && fs::is_directory(dir), ErrorCode::Io, "cannot create output directory '" + cfg.out_dir + "'");
        return 0;
    });
    auto out = [&](const std::string& name) {
        res.artifacts.push_back(name);
        return (dir / name).string();
    };

    const auto model = stage("load", [&] { return load_checkpoint(cfg.model_path); });
    const auto corpus = stage("load", [&] {
        auto c = read_corpus(cfg.corpus_path);
        c.validate();
        return c;
    });
    const auto task = stage("load", [&] {
        auto t = read_task(cfg.task_path);
        t.validate(model.spec.vocab_size);
        return t;
    });

    const auto trace = stage("trace", [&] {
        auto t = run_trace(model, corpus);
        const auto path = out("trace.jsonl");
        write_trace(t, path);
        const auto violations = validate_trace(read_trace(path));
        require(violations.empty(), ErrorCode::Schema,
                "written trace fails validation: " + (violations.empty() ? std::string() : to_string(violations[0])));
        return t;
    });

    const auto table = stage("scores", [&] {
        auto t = score_table(trace);
        write_scores_csv(t, out("scores.csv"), prov);
        return t;
    });

    stage("taxonomy", [&] {
        const auto tax = classify_experts(table, cfg.rho, cfg.sigma_max);
        write_taxonomy_csv(tax, out("taxonomy.csv"), prov);
        for (const auto& t : tax)
            if (t.kind == TaxonomyKind::Domain) res.domain_experts.push_back({t.layer, t.expert});
        return 0;
    });

    const auto matrix = stage("causal", [&] {
        auto m = causal_effect_matrix(model, corpus, cfg.magnitude, cfg.sign);
        write_causal_csv(m, out("causal_matrix.csv"), prov);
        return m;
    });

    const auto drivers = stage("drivers", [&] {
        auto d = identify_drivers(matrix, cfg.quantile);
        write_drivers_csv(d, out("drivers.csv"), prov);
        res.drivers = d.refs();
        res.warnings.insert(res.warnings.end(), d.warnings.begin(), d.warnings.end());
        return d;
    });

    const auto rates = stage("causal-rate", [&] {
        auto r = causal_rate(trace, drivers.refs());
        write_causal_rate_csv(r, out("causal_rate.csv"), prov);
        return r;
    });

    const auto bins = stage("bins", [&] {
        std::vector<PositionBinReport> reports;
        for (const auto& d : trace.domains) {
            if (res.drivers.empty()) {
                reports.push_back(PositionBinReport{d, {}, {}, 0, true});
                continue;
            }
            reports.push_back(position_bins(trace, res.drivers, d));
        }
        write_bins_csv(reports, out("position_bins.csv"), prov);
        return reports;
    });

    stage("assoc", [&] {
        std::vector<TokenAssociationTable> tables;
        tables.push_back(token_expert_association(trace, res.domain_experts, cfg.min_count, "domain"));
        tables.push_back(token_expert_association(trace, res.drivers, cfg.min_count, "driver"));
        write_association_csv(tables, out("association.csv"), prov);
        return 0;
    });

    stage("intervention", [&] {
        res.sweep = sweep(model, task, standard_plans(res.domain_experts, res.drivers, cfg.up_factor, cfg.down_factor));
        write_sweep_csv(res.sweep, out("intervention.csv"), prov);
        return 0;
    });

    stage("plots", [&] {
        write_cwas_svg(table, out("cwas.svg"), prov);
        write_causal_rate_svg(rates, out("causal_rate.svg"), prov);
        write_bins_svg(bins, out("position_bins.svg"), prov);
        return 0;
    });
    return res;
}

}  // namespace moelens
