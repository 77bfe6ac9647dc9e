// SPDX-License-Identifier: Apache-2.0

#include "moelens/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "moelens/error.hpp"
#include "moelens/rng.hpp"

namespace moelens {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    return out;
}

TokenId parse_id(const std::string& s, const std::string& where) {
    TokenId v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    require(ec == std::errc() && ptr == end, ErrorCode::Malformed, where + ": bad token id '" + s + "'");
    return v;
}

std::vector<TokenId> parse_ids(const std::string& field, const std::string& where) {
    std::vector<TokenId> out;
    std::istringstream is(field);
    std::string tok;
    while (is >> tok) out.push_back(parse_id(tok, where));
    return out;
}

std::string join_ids(const std::vector<TokenId>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(ids[i]);
    }
    return out;
}

bool skip_line(const std::string& line) { return line.empty() || line[0] == '#'; }

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::Io, "cannot open '" + path + "'");
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot create '" + path + "'");
    return out;
}

std::vector<TokenId> draw_sequence(Rng& rng, const PlantedDomain& d, const SyntheticOptions& o) {
    const std::uint32_t span = o.max_length - o.min_length + 1;
    const auto len = o.min_length + static_cast<std::uint32_t>(rng.below(span));
    std::vector<TokenId> seq(len);
    for (auto& t : seq) t = d.tokens[rng.below(d.tokens.size())];
    return seq;
}

void check_options(const SyntheticOptions& o) {
    require(o.min_length >= 1 && o.min_length <= o.max_length, ErrorCode::Configuration,
            "synthetic lengths must satisfy 1 <= min <= max");
    require(o.sequences_per_domain >= 1, ErrorCode::Configuration, "need at least one sequence per domain");
}

}  // namespace

std::vector<std::string> Corpus::domains() const {
    std::vector<std::string> out;
    for (const auto& s : sequences)
        if (std::find(out.begin(), out.end(), s.domain) == out.end()) out.push_back(s.domain);
    return out;
}

std::size_t Corpus::token_count() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.tokens.size();
    return n;
}

void Corpus::validate() const {
    require(!sequences.empty(), ErrorCode::InvalidInput, "corpus has no sequences");
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        require(!sequences[i].tokens.empty(), ErrorCode::InvalidInput, "sequence " + std::to_string(i) + " is empty");
        require(!sequences[i].domain.empty(), ErrorCode::InvalidInput,
                "sequence " + std::to_string(i) + " has an empty domain label");
    }
}

void Task::validate(std::uint32_t vocab_size) const {
    require(!examples.empty(), ErrorCode::InvalidInput, "task has no examples");
    require(!labels.empty(), ErrorCode::InvalidInput, "task declares no labels");
    std::set<TokenId> declared;
    for (TokenId l : labels) {
        require(l < vocab_size, ErrorCode::Configuration,
                "label token " + std::to_string(l) + " not in vocabulary of " + std::to_string(vocab_size));
        require(declared.insert(l).second, ErrorCode::InvalidInput, "label " + std::to_string(l) + " declared twice");
    }
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        require(!ex.tokens.empty(), ErrorCode::InvalidInput, "task example " + std::to_string(i) + " is empty");
        require(declared.contains(ex.gold), ErrorCode::InvalidInput,
                "task example " + std::to_string(i) + " gold label " + std::to_string(ex.gold) + " not declared");
    }
}

std::string token_text(TokenId id) { return "t" + std::to_string(id); }

Corpus read_corpus(const std::string& path) {
    auto in = open_in(path);
    Corpus c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (skip_line(line)) continue;
        const auto where = path + ":" + std::to_string(lineno);
        const auto fields = split(line, '\t');
        require(fields.size() == 2, ErrorCode::Malformed, where + ": expected '<domain>\\t<tokens>'");
        Sequence s{fields[0], parse_ids(fields[1], where)};
        require(!s.domain.empty(), ErrorCode::Malformed, where + ": empty domain label");
        require(!s.tokens.empty(), ErrorCode::Malformed, where + ": empty sequence");
        c.sequences.push_back(std::move(s));
    }
    return c;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
    auto out = open_out(path);
    for (const auto& s : corpus.sequences) out << s.domain << '\t' << join_ids(s.tokens) << '\n';
    require(out.good(), ErrorCode::Io, "write failed for '" + path + "'");
}

Task read_task(const std::string& path) {
    auto in = open_in(path);
    Task t;
    bool have_labels = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (skip_line(line)) continue;
        const auto where = path + ":" + std::to_string(lineno);
        const auto fields = split(line, '\t');
        if (!have_labels) {
            require(fields.size() == 2 && fields[0] == "labels", ErrorCode::Malformed,
                    where + ": expected 'labels\\t<ids>' before examples");
            t.labels = parse_ids(fields[1], where);
            have_labels = true;
            continue;
        }
        require(fields.size() == 3, ErrorCode::Malformed, where + ": expected '<gold>\\t<domain>\\t<tokens>'");
        TaskExample ex{fields[1], parse_ids(fields[2], where), parse_id(fields[0], where)};
        require(!ex.tokens.empty(), ErrorCode::Malformed, where + ": empty example");
        t.examples.push_back(std::move(ex));
    }
    require(have_labels, ErrorCode::Malformed, path + ": missing labels line");
    return t;
}

void write_task(const Task& task, const std::string& path) {
    auto out = open_out(path);
    out << "labels\t" << join_ids(task.labels) << '\n';
    for (const auto& ex : task.examples) out << ex.gold << '\t' << ex.domain << '\t' << join_ids(ex.tokens) << '\n';
    require(out.good(), ErrorCode::Io, "write failed for '" + path + "'");
}

Corpus synthesize_corpus(const std::vector<PlantedDomain>& domains, const SyntheticOptions& options) {
    check_options(options);
    require(!domains.empty(), ErrorCode::Configuration, "no domains to sample from");
    Rng rng(options.seed);
    Corpus c;
    // Interleave domains so prefixes of the corpus stay balanced.
    for (std::uint32_t i = 0; i < options.sequences_per_domain; ++i)
        for (const auto& d : domains) c.sequences.push_back({d.name, draw_sequence(rng, d, options)});
    return c;
}

Task synthesize_task(const std::vector<PlantedDomain>& domains, const SyntheticOptions& options) {
    check_options(options);
    Rng rng(options.seed ^ 0x5bd1e995ULL);
    Task t;
    std::vector<const PlantedDomain*> labelled;
    for (const auto& d : domains)
        if (d.label_token) {
            labelled.push_back(&d);
            t.labels.push_back(*d.label_token);
        }
    require(labelled.size() >= 2, ErrorCode::Configuration, "a synthetic task needs two labelled domains");
    for (std::uint32_t i = 0; i < options.sequences_per_domain; ++i)
        for (const auto* d : labelled) t.examples.push_back({d->name, draw_sequence(rng, *d, options), *d->label_token});
    return t;
}

}  // namespace moelens
