// SPDX-License-Identifier: Apache-2.0

#include "moelens/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "moelens/error.hpp"

namespace moelens {

namespace {

using nlohmann::json;

std::string fmt(double v, int digits) {
    require(std::isfinite(v), ErrorCode::InvalidInput, "cannot serialise a non-finite trace value");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string quote(const std::string& s) { return json(s).dump(); }

void write_header(const RoutingTrace& t, std::string& out) {
    out += "{\"schema_version\":" + quote(t.schema_version);
    out += ",\"model_descriptor\":" + quote(t.model_descriptor);
    out += ",\"n_layers\":" + std::to_string(t.n_layers);
    out += ",\"n_experts\":" + std::to_string(t.n_experts);
    out += ",\"top_k\":" + std::to_string(t.top_k);
    out += ",\"domains\":[";
    for (std::size_t i = 0; i < t.domains.size(); ++i) {
        if (i) out += ',';
        out += quote(t.domains[i]);
    }
    out += "]}\n";
}

void write_record(const TraceRecord& r, std::string& out) {
    out += "{\"seq\":" + quote(r.seq);
    out += ",\"pos\":" + std::to_string(r.pos);
    out += ",\"rel_pos\":" + fmt(r.rel_pos, 17);
    out += ",\"tok\":" + std::to_string(r.tok);
    out += ",\"text\":" + quote(r.text);
    out += ",\"dom\":" + quote(r.dom);
    out += ",\"layers\":[";
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
        const auto& layer = r.layers[l];
        if (l) out += ',';
        out += '{';
        if (layer.logits) {
            out += "\"logits\":[";
            for (std::size_t i = 0; i < layer.logits->size(); ++i) {
                if (i) out += ',';
                out += fmt((*layer.logits)[i], 17);
            }
            out += "],";
        }
        out += "\"topk\":[";
        for (std::size_t i = 0; i < layer.topk.size(); ++i) {
            if (i) out += ',';
            out += '[' + std::to_string(layer.topk[i].expert) + ',' + fmt(layer.topk[i].prob, 9) + ']';
        }
        out += "]}";
    }
    out += "]}\n";
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
    require(j.contains(key), ErrorCode::Malformed, where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorCode::Malformed, where + ": field '" + key + "' has the wrong type");
    }
}

TraceRecord parse_record(const json& j, const std::string& where) {
    require(j.is_object(), ErrorCode::Malformed, where + ": record is not an object");
    TraceRecord r;
    require(j.contains("seq"), ErrorCode::Malformed, where + ": missing field 'seq'");
    const auto& seq = j.at("seq");
    if (seq.is_string())
        r.seq = seq.get<std::string>();
    else if (seq.is_number_integer())
        r.seq = seq.dump();
    else
        fail(ErrorCode::Malformed, where + ": field 'seq' must be a string or integer");
    r.pos = field<std::uint64_t>(j, "pos", where);
    r.rel_pos = field<double>(j, "rel_pos", where);
    r.tok = field<TokenId>(j, "tok", where);
    r.text = field<std::string>(j, "text", where);
    r.dom = field<std::string>(j, "dom", where);
    require(j.contains("layers") && j.at("layers").is_array(), ErrorCode::Malformed,
            where + ": missing or non-array field 'layers'");
    for (const auto& lj : j.at("layers")) {
        require(lj.is_object(), ErrorCode::Malformed, where + ": layer entry is not an object");
        TraceLayer layer;
        if (lj.contains("logits")) layer.logits = field<std::vector<double>>(lj, "logits", where);
        require(lj.contains("topk") && lj.at("topk").is_array(), ErrorCode::Malformed,
                where + ": layer entry without a 'topk' array");
        for (const auto& c : lj.at("topk")) {
            require(c.is_array() && c.size() == 2 && c[0].is_number_unsigned() && c[1].is_number(),
                    ErrorCode::Malformed, where + ": topk entries must be [expert_id, probability]");
            layer.topk.push_back({c[0].get<std::uint32_t>(), c[1].get<double>()});
        }
        r.layers.push_back(std::move(layer));
    }
    return r;
}

bool close(double a, double b, double tol) { return std::fabs(a - b) <= tol * std::max(1.0, std::fabs(b)); }

}  // namespace

RoutingTrace run_trace(const MoEModel& model, const Corpus& corpus) {
    model.validate();
    RoutingTrace t;
    t.model_descriptor = model.descriptor();
    t.n_layers = model.spec.n_layers;
    t.n_experts = model.spec.n_experts;
    t.top_k = model.spec.top_k;
    t.domains = corpus.domains();
    std::vector<LayerRouting> routing;
    for (std::size_t s = 0; s < corpus.sequences.size(); ++s) {
        const auto& seq = corpus.sequences[s];
        require(!seq.domain.empty(), ErrorCode::InvalidInput, "sequence " + std::to_string(s) + " has no domain label");
        require(!seq.tokens.empty(), ErrorCode::InvalidInput, "sequence " + std::to_string(s) + " is empty");
        const auto n = seq.tokens.size();
        for (std::size_t p = 0; p < n; ++p) {
            try {
                forward_token(model, seq.tokens[p], NoModifier{}, &routing);
            } catch (const Error& e) {
                fail(e.code(), "sequence " + std::to_string(s) + " position " + std::to_string(p) + ": " + e.what());
            }
            TraceRecord r;
            r.seq = std::to_string(s);
            r.pos = p;
            r.rel_pos = static_cast<double>(p) / static_cast<double>(n);
            r.tok = seq.tokens[p];
            r.text = token_text(seq.tokens[p]);
            r.dom = seq.domain;
            for (auto& lr : routing) {
                TraceLayer layer;
                layer.logits = std::move(lr.logits);
                for (std::size_t i = 0; i < lr.topk.ids.size(); ++i)
                    layer.topk.push_back({lr.topk.ids[i], lr.topk.probs[i]});
                r.layers.push_back(std::move(layer));
            }
            t.records.push_back(std::move(r));
        }
    }
    return t;
}

std::string trace_to_string(const RoutingTrace& trace) {
    std::string out;
    write_header(trace, out);
    for (const auto& r : trace.records) write_record(r, out);
    return out;
}

void write_trace(const RoutingTrace& trace, std::ostream& out) {
    std::string line;
    write_header(trace, line);
    out << line;
    for (const auto& r : trace.records) {
        line.clear();
        write_record(r, line);
        out << line;
    }
    require(out.good(), ErrorCode::Io, "trace write failed");
}

void write_trace(const RoutingTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot create '" + path + "'");
    write_trace(trace, out);
    out.close();
    require(!out.fail(), ErrorCode::Io, "write failed for '" + path + "'");
}

RoutingTrace read_trace(std::istream& in, const std::string& source) {
    RoutingTrace t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto where = source + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(ErrorCode::Malformed, where + ": not valid JSON (" + e.what() + ")");
        }
        if (!have_header) {
            require(j.is_object(), ErrorCode::Malformed, where + ": header is not an object");
            require(j.contains("schema_version"), ErrorCode::Malformed, where + ": header lacks schema_version");
            const auto& v = j.at("schema_version");
            const std::string version = v.is_string() ? v.get<std::string>() : v.dump();
            require(version == kTraceSchemaVersion, ErrorCode::Schema,
                    source + ": unsupported trace schema_version '" + version + "' (expected '" +
                        kTraceSchemaVersion + "')");
            t.schema_version = version;
            t.model_descriptor = field<std::string>(j, "model_descriptor", where);
            t.n_layers = field<std::uint32_t>(j, "n_layers", where);
            t.n_experts = field<std::uint32_t>(j, "n_experts", where);
            t.top_k = field<std::uint32_t>(j, "top_k", where);
            t.domains = field<std::vector<std::string>>(j, "domains", where);
            have_header = true;
            continue;
        }
        t.records.push_back(parse_record(j, where));
    }
    require(have_header, ErrorCode::Malformed, source + ": missing header line");
    return t;
}

RoutingTrace read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::Io, "cannot open '" + path + "'");
    return read_trace(in, path);
}

bool traces_equivalent(const RoutingTrace& a, const RoutingTrace& b, double tol) {
    if (a.schema_version != b.schema_version || a.model_descriptor != b.model_descriptor ||
        a.n_layers != b.n_layers || a.n_experts != b.n_experts || a.top_k != b.top_k || a.domains != b.domains ||
        a.records.size() != b.records.size())
        return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const auto& x = a.records[i];
        const auto& y = b.records[i];
        if (x.seq != y.seq || x.pos != y.pos || x.tok != y.tok || x.text != y.text || x.dom != y.dom ||
            !close(x.rel_pos, y.rel_pos, tol) || x.layers.size() != y.layers.size())
            return false;
        for (std::size_t l = 0; l < x.layers.size(); ++l) {
            const auto& lx = x.layers[l];
            const auto& ly = y.layers[l];
            if (lx.logits.has_value() != ly.logits.has_value() || lx.topk.size() != ly.topk.size()) return false;
            if (lx.logits) {
                if (lx.logits->size() != ly.logits->size()) return false;
                for (std::size_t j = 0; j < lx.logits->size(); ++j)
                    if (!close((*lx.logits)[j], (*ly.logits)[j], tol)) return false;
            }
            for (std::size_t j = 0; j < lx.topk.size(); ++j)
                if (lx.topk[j].expert != ly.topk[j].expert || std::fabs(lx.topk[j].prob - ly.topk[j].prob) > tol)
                    return false;
        }
    }
    return true;
}

std::string to_string(const TraceViolation& v) {
    std::string out = v.record < 0 ? std::string("header") : "record " + std::to_string(v.record);
    if (v.layer >= 0) out += " layer " + std::to_string(v.layer);
    return out + " [" + v.rule + "]: " + v.message;
}

std::vector<TraceViolation> validate_trace(const RoutingTrace& trace) noexcept {
    std::vector<TraceViolation> out;
    try {
        auto add = [&out](long long rec, long long layer, const char* rule, std::string msg) {
            out.push_back({rec, layer, rule, std::move(msg)});
        };
        if (trace.schema_version != kTraceSchemaVersion)
            add(-1, -1, "schema-version", "schema_version '" + trace.schema_version + "' is not supported");
        if (trace.n_layers == 0) add(-1, -1, "spec", "n_layers must be >= 1");
        if (trace.top_k == 0 || trace.top_k > trace.n_experts)
            add(-1, -1, "spec", "top_k must satisfy 1 <= top_k <= n_experts");
        std::set<std::string> domains;
        for (const auto& d : trace.domains)
            if (!domains.insert(d).second) add(-1, -1, "domains", "domain '" + d + "' listed twice");

        // Sequence lengths for the rel_pos identity, only for sequences whose
        // positions are exactly 0..n-1.
        std::map<std::string, std::set<std::uint64_t>> positions;
        for (const auto& r : trace.records) positions[r.seq].insert(r.pos);
        std::map<std::string, std::uint64_t> complete_length;
        for (const auto& [seq, ps] : positions)
            if (!ps.empty() && *ps.begin() == 0 && *ps.rbegin() + 1 == ps.size()) complete_length[seq] = ps.size();

        for (std::size_t i = 0; i < trace.records.size(); ++i) {
            const auto& r = trace.records[i];
            const auto rec = static_cast<long long>(i);
            if (!domains.contains(r.dom)) add(rec, -1, "domain", "domain '" + r.dom + "' is not in the header");
            if (!(r.rel_pos >= 0.0 && r.rel_pos < 1.0))
                add(rec, -1, "rel-pos-range", "rel_pos " + std::to_string(r.rel_pos) + " outside [0,1)");
            else if (auto it = complete_length.find(r.seq); it != complete_length.end()) {
                const double expect = static_cast<double>(r.pos) / static_cast<double>(it->second);
                if (std::fabs(r.rel_pos - expect) > 1e-9)
                    add(rec, -1, "rel-pos", "rel_pos differs from position / sequence length");
            }
            if (r.layers.size() != trace.n_layers)
                add(rec, -1, "layer-count",
                    std::to_string(r.layers.size()) + " layers, header says " + std::to_string(trace.n_layers));
            for (std::size_t l = 0; l < r.layers.size(); ++l) {
                const auto& layer = r.layers[l];
                const auto li = static_cast<long long>(l);
                if (layer.logits && layer.logits->size() != trace.n_experts)
                    add(rec, li, "logits-size",
                        std::to_string(layer.logits->size()) + " logits for " + std::to_string(trace.n_experts) +
                            " experts");
                if (layer.topk.size() != trace.top_k)
                    add(rec, li, "topk-size",
                        std::to_string(layer.topk.size()) + " selected experts, top_k is " +
                            std::to_string(trace.top_k));
                std::set<std::uint32_t> ids;
                double sum = 0.0;
                bool probs_ok = true;
                for (const auto& c : layer.topk) {
                    if (c.expert >= trace.n_experts)
                        add(rec, li, "expert-range", "expert id " + std::to_string(c.expert) + " out of range");
                    if (!ids.insert(c.expert).second)
                        add(rec, li, "duplicate-expert", "expert id " + std::to_string(c.expert) + " repeated");
                    if (!(c.prob > 0.0 && c.prob <= 1.0 + kTraceSumTolerance)) probs_ok = false;
                    sum += c.prob;
                }
                if (!probs_ok) add(rec, li, "prob-range", "probabilities must lie in (0,1]");
                if (!(std::fabs(sum - 1.0) <= kTraceSumTolerance))
                    add(rec, li, "prob-sum", "probabilities sum to " + std::to_string(sum));
            }
        }
    } catch (...) {
        out.push_back({-1, -1, "internal", "validation aborted"});
    }
    return out;
}

RoutingTrace merge_traces(const std::vector<RoutingTrace>& traces) {
    require(!traces.empty(), ErrorCode::InvalidInput, "nothing to merge");
    RoutingTrace out = traces.front();
    out.records.clear();
    for (const auto& t : traces) {
        require(t.schema_version == out.schema_version && t.model_descriptor == out.model_descriptor &&
                    t.n_layers == out.n_layers && t.n_experts == out.n_experts && t.top_k == out.top_k,
                ErrorCode::Configuration, "cannot merge traces from different models");
        for (const auto& d : t.domains)
            if (std::find(out.domains.begin(), out.domains.end(), d) == out.domains.end()) out.domains.push_back(d);
        out.records.insert(out.records.end(), t.records.begin(), t.records.end());
    }
    return out;
}

}  // namespace moelens
