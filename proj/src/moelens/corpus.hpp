// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moelens/model.hpp"
#include "moelens/planted.hpp"

namespace moelens {

struct Sequence {
    std::string domain;
    std::vector<TokenId> tokens;

    friend bool operator==(const Sequence&, const Sequence&) = default;
};

/// Domain-labelled token sequences.
struct Corpus {
    std::vector<Sequence> sequences;

    /// Distinct domain labels in order of first appearance.
    std::vector<std::string> domains() const;
    std::size_t token_count() const;

    /// Throws InvalidInput on empty sequences or empty domain labels.
    void validate() const;
};

struct TaskExample {
    std::string domain;
    std::vector<TokenId> tokens;
    TokenId gold = 0;
};

/// Classification task answered by the next-token distribution at the last
/// position, restricted to `labels`.
struct Task {
    std::vector<TokenId> labels;
    std::vector<TaskExample> examples;

    void validate(std::uint32_t vocab_size) const;
};

/// Surface form used for token ids in traces and association tables.
std::string token_text(TokenId id);

// Corpus file: one sequence per line, `<domain>\t<id> <id> ...`; blank lines
// and lines starting with '#' are skipped.
Corpus read_corpus(const std::string& path);
void write_corpus(const Corpus& corpus, const std::string& path);

// Task file: a `labels\t<id> <id> ...` line, then one example per line,
// `<gold id>\t<domain>\t<id> <id> ...`.
Task read_task(const std::string& path);
void write_task(const Task& task, const std::string& path);

struct SyntheticOptions {
    std::uint32_t sequences_per_domain = 64;
    std::uint32_t min_length = 4;
    std::uint32_t max_length = 16;
    std::uint64_t seed = 1;
};

/// Sequences drawn uniformly from each domain's token subset.
Corpus synthesize_corpus(const std::vector<PlantedDomain>& domains, const SyntheticOptions& options);

/// Domain-identification task: each example's gold label is its domain's
/// label token. Domains without a label token are skipped.
Task synthesize_task(const std::vector<PlantedDomain>& domains, const SyntheticOptions& options);

}  // namespace moelens
