// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "moelens/corpus.hpp"
#include "moelens/model.hpp"

namespace moelens {

inline constexpr const char* kTraceSchemaVersion = "1";
inline constexpr double kTraceSumTolerance = 1e-6;

struct TraceChoice {
    std::uint32_t expert = 0;
    double prob = 0.0;

    friend bool operator==(const TraceChoice&, const TraceChoice&) = default;
};

struct TraceLayer {
    std::optional<std::vector<double>> logits;
    std::vector<TraceChoice> topk;

    friend bool operator==(const TraceLayer&, const TraceLayer&) = default;
};

struct TraceRecord {
    std::string seq;
    std::uint64_t pos = 0;
    double rel_pos = 0.0;
    TokenId tok = 0;
    std::string text;
    std::string dom;
    std::vector<TraceLayer> layers;

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct RoutingTrace {
    std::string schema_version = kTraceSchemaVersion;
    std::string model_descriptor;
    std::uint32_t n_layers = 0;
    std::uint32_t n_experts = 0;
    std::uint32_t top_k = 0;
    std::vector<std::string> domains;
    std::vector<TraceRecord> records;

    friend bool operator==(const RoutingTrace&, const RoutingTrace&) = default;
};

/// One record per (sequence, position) in corpus order, with full logits.
RoutingTrace run_trace(const MoEModel& model, const Corpus& corpus);

/// Canonical serialisation: fixed key order, probabilities with 9 significant
/// digits, logits and rel_pos with 17. Equal traces give identical bytes.
void write_trace(const RoutingTrace& trace, std::ostream& out);
void write_trace(const RoutingTrace& trace, const std::string& path);
std::string trace_to_string(const RoutingTrace& trace);

/// Throws Schema on a schema_version other than "1" and Malformed (naming the
/// line) on unparsable lines or missing fields. Does not validate invariants.
RoutingTrace read_trace(std::istream& in, const std::string& source = "<stream>");
RoutingTrace read_trace(const std::string& path);

/// Structural equality with probabilities, logits and rel_pos compared within
/// `tol`.
bool traces_equivalent(const RoutingTrace& a, const RoutingTrace& b, double tol = 1e-9);

struct TraceViolation {
    long long record = -1;  // -1 for header-level violations
    long long layer = -1;   // -1 when the rule is not per layer
    std::string rule;
    std::string message;
};

std::string to_string(const TraceViolation& v);

/// Checks every type invariant; never throws.
std::vector<TraceViolation> validate_trace(const RoutingTrace& trace) noexcept;

/// Concatenates traces of the same model; domains are merged in order of
/// first appearance. Throws Configuration when the headers disagree.
RoutingTrace merge_traces(const std::vector<RoutingTrace>& traces);

}  // namespace moelens
