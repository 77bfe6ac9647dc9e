// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "moelens/causal.hpp"
#include "moelens/domain_metrics.hpp"
#include "moelens/intervention.hpp"
#include "moelens/token_analysis.hpp"

namespace moelens {

// Tabular outputs are comma separated. The first line is '# ' + provenance;
// further '#' lines carry warnings or caveats.

std::string format_number(double v);

void write_scores_csv(const ExpertScoreTable& table, const std::string& path, const std::string& provenance);
void write_taxonomy_csv(const std::vector<TaxonomyEntry>& taxonomy, const std::string& path,
                        const std::string& provenance);
void write_causal_csv(const CausalEffectMatrix& matrix, const std::string& path, const std::string& provenance);
void write_drivers_csv(const DriverSet& drivers, const std::string& path, const std::string& provenance);
void write_causal_rate_csv(const std::vector<double>& rates, const std::string& path, const std::string& provenance);
void write_bins_csv(const std::vector<PositionBinReport>& reports, const std::string& path,
                    const std::string& provenance);
void write_association_csv(const std::vector<TokenAssociationTable>& tables, const std::string& path,
                           const std::string& provenance);
void write_sweep_csv(const std::vector<EvalReport>& reports, const std::string& path, const std::string& provenance);

/// Reads the layer and expert columns of a drivers CSV.
std::vector<ExpertRef> read_drivers_csv(const std::string& path);

// SVG plots with the plotted numbers embedded as CSV in a <metadata> block.
void write_cwas_svg(const ExpertScoreTable& table, const std::string& path, const std::string& provenance);
void write_causal_rate_svg(const std::vector<double>& rates, const std::string& path, const std::string& provenance);
void write_bins_svg(const std::vector<PositionBinReport>& reports, const std::string& path,
                    const std::string& provenance);

}  // namespace moelens
