// SPDX-License-Identifier: Apache-2.0

#include "moelens/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "moelens/error.hpp"

namespace moelens {

namespace {

constexpr const char* kBinNames[kPositionBins] = {"[0.0,0.2)", "[0.2,0.4)", "[0.4,0.6)", "[0.6,0.8)", "[0.8,1.0]"};
constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1"};

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string single_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::Io, "cannot create '" + path + "'");
    out << body;
    out.close();
    require(!out.fail(), ErrorCode::Io, "write failed for '" + path + "'");
}

std::string px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

struct Series {
    std::string name;
    std::vector<double> values;
};

/// Grouped bar chart (groups along x, one bar per series) or line chart.
std::string svg_chart(const std::string& title, const std::string& y_label, const std::vector<std::string>& groups,
                      const std::vector<Series>& series, bool lines, const std::string& data_csv,
                      const std::string& provenance) {
    const double left = 60, right = 20, top = 40, bottom = 70;
    const double slot = lines ? 60.0 : std::max(14.0, 8.0 * static_cast<double>(series.size()) + 6.0);
    const double plot_w = std::max(300.0, slot * static_cast<double>(groups.size()));
    const double plot_h = 240;
    const double width = left + plot_w + right, height = top + plot_h + bottom;
    double ymax = 0.0;
    for (const auto& s : series)
        for (double v : s.values)
            if (std::isfinite(v)) ymax = std::max(ymax, v);
    if (ymax <= 0.0) ymax = 1.0;
    auto y_of = [&](double v) { return top + plot_h - plot_h * std::clamp(v, 0.0, ymax) / ymax; };
    const double gw = plot_w / static_cast<double>(std::max<std::size_t>(groups.size(), 1));

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(width) << "\" height=\"" << px(height)
       << "\" viewBox=\"0 0 " << px(width) << ' ' << px(height) << "\">\n";
    os << "<!-- " << xml_escape(single_line(provenance)) << " -->\n";
    os << "<metadata id=\"data\"><![CDATA[\n" << data_csv << "]]></metadata>\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << px(width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"14\">"
       << xml_escape(title) << "</text>\n";
    os << "<line x1=\"" << px(left) << "\" y1=\"" << px(top + plot_h) << "\" x2=\"" << px(left + plot_w) << "\" y2=\""
       << px(top + plot_h) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << px(left) << "\" y1=\"" << px(top) << "\" x2=\"" << px(left) << "\" y2=\""
       << px(top + plot_h) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = ymax * t / 4.0;
        os << "<text x=\"" << px(left - 4) << "\" y=\"" << px(y_of(v) + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << format_number(v)
           << "</text>\n";
    }
    os << "<text x=\"14\" y=\"" << px(top + plot_h / 2) << "\" transform=\"rotate(-90 14 " << px(top + plot_h / 2)
       << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(y_label)
       << "</text>\n";
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double cx = left + gw * (static_cast<double>(g) + 0.5);
        os << "<text x=\"" << px(cx) << "\" y=\"" << px(top + plot_h + 12) << "\" transform=\"rotate(60 " << px(cx)
           << ' ' << px(top + plot_h + 12) << ")\" font-family=\"sans-serif\" font-size=\"9\">"
           << xml_escape(groups[g]) << "</text>\n";
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % std::size(kPalette)];
        if (lines) {
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (std::size_t g = 0; g < series[s].values.size(); ++g)
                os << (g ? " " : "") << px(left + gw * (static_cast<double>(g) + 0.5)) << ','
                   << px(y_of(series[s].values[g]));
            os << "\"/>\n";
            for (std::size_t g = 0; g < series[s].values.size(); ++g)
                os << "<circle cx=\"" << px(left + gw * (static_cast<double>(g) + 0.5)) << "\" cy=\""
                   << px(y_of(series[s].values[g])) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        } else {
            const double bw = (gw - 4.0) / static_cast<double>(series.size());
            for (std::size_t g = 0; g < series[s].values.size(); ++g) {
                const double x = left + gw * static_cast<double>(g) + 2.0 + bw * static_cast<double>(s);
                const double y = y_of(series[s].values[g]);
                os << "<rect x=\"" << px(x) << "\" y=\"" << px(y) << "\" width=\"" << px(bw) << "\" height=\""
                   << px(top + plot_h - y) << "\" fill=\"" << color << "\"/>\n";
            }
        }
        os << "<rect x=\"" << px(left + 10 + 110 * static_cast<double>(s)) << "\" y=\"" << px(height - 16)
           << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>";
        os << "<text x=\"" << px(left + 24 + 110 * static_cast<double>(s)) << "\" y=\"" << px(height - 7)
           << "\" font-family=\"sans-serif\" font-size=\"10\">" << xml_escape(series[s].name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string bins_body(const std::vector<PositionBinReport>& reports) {
    std::string out = "domain,bin,fraction,count\n";
    for (const auto& r : reports)
        for (std::size_t b = 0; b < kPositionBins; ++b)
            out += csv_field(r.domain) + ',' + kBinNames[b] + ',' + format_number(r.fractions[b]) + ',' +
                   std::to_string(r.counts[b]) + '\n';
    return out;
}

std::string rate_body(const std::vector<double>& rates) {
    std::string out = "layer,rate\n";
    for (std::size_t l = 0; l < rates.size(); ++l) out += std::to_string(l) + ',' + format_number(rates[l]) + '\n';
    return out;
}

std::string header(const std::string& provenance) { return "# " + single_line(provenance) + '\n'; }

}  // namespace

std::string format_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_scores_csv(const ExpertScoreTable& table, const std::string& path, const std::string& provenance) {
    std::string out = header(provenance) + "layer,expert,domain,H,A,S,support\n";
    for (const auto& c : table.cells)
        out += std::to_string(c.layer) + ',' + std::to_string(c.expert) + ',' + csv_field(c.domain) + ',' +
               format_number(c.H) + ',' + format_number(c.A) + ',' + format_number(c.S) + ',' +
               std::to_string(c.support) + '\n';
    write_file(path, out);
}

void write_taxonomy_csv(const std::vector<TaxonomyEntry>& taxonomy, const std::string& path,
                        const std::string& provenance) {
    std::string out = header(provenance) + "layer,expert,label,preference_ratio\n";
    for (const auto& t : taxonomy)
        out += std::to_string(t.layer) + ',' + std::to_string(t.expert) + ',' + csv_field(t.label()) + ',' +
               format_number(t.preference_ratio) + '\n';
    write_file(path, out);
}

void write_causal_csv(const CausalEffectMatrix& m, const std::string& path, const std::string& provenance) {
    std::string out = header(provenance) + "layer,expert,CE,n_examples,magnitude,sign\n";
    for (const auto& c : m.cells)
        out += std::to_string(c.layer) + ',' + std::to_string(c.expert) + ',' + format_number(c.ce) + ',' +
               std::to_string(c.n_examples) + ',' + format_number(m.magnitude) + ',' + std::to_string(m.sign) + '\n';
    write_file(path, out);
}

void write_drivers_csv(const DriverSet& drivers, const std::string& path, const std::string& provenance) {
    std::string out = header(provenance);
    for (const auto& w : drivers.warnings) out += "# warning: " + single_line(w) + '\n';
    out += "layer,expert,CE,threshold\n";
    for (const auto& m : drivers.members)
        out += std::to_string(m.layer) + ',' + std::to_string(m.expert) + ',' + format_number(m.ce) + ',' +
               format_number(drivers.thresholds.at(m.layer)) + '\n';
    write_file(path, out);
}

void write_causal_rate_csv(const std::vector<double>& rates, const std::string& path, const std::string& provenance) {
    write_file(path, header(provenance) + rate_body(rates));
}

void write_bins_csv(const std::vector<PositionBinReport>& reports, const std::string& path,
                    const std::string& provenance) {
    std::string out = header(provenance);
    for (const auto& r : reports)
        if (r.zero_support) out += "# zero support: no qualifying tokens in domain " + single_line(r.domain) + '\n';
    write_file(path, out + bins_body(reports));
}

void write_association_csv(const std::vector<TokenAssociationTable>& tables, const std::string& path,
                           const std::string& provenance) {
    std::string out = header(provenance);
    for (const auto& t : tables)
        if (t.zero_support) out += "# zero support: set " + single_line(t.set_label) + " is never activated\n";
    out += "set,token,score,count,conditional_rate,base_rate\n";
    for (const auto& t : tables)
        for (const auto& r : t.rows)
            out += csv_field(t.set_label) + ',' + csv_field(r.token) + ',' + format_number(r.score) + ',' +
                   std::to_string(r.count) + ',' + format_number(r.conditional_rate) + ',' +
                   format_number(r.base_rate) + '\n';
    write_file(path, out);
}

void write_sweep_csv(const std::vector<EvalReport>& reports, const std::string& path, const std::string& provenance) {
    std::string out = header(provenance);
    for (const auto& r : reports)
        for (const auto& c : r.caveats) out += "# caveat: " + single_line(r.label) + ": " + single_line(c) + '\n';
    out += "plan,ACC,WF1,\xCE\x94" "ACC,\xCE\x94WF1\n";
    for (const auto& r : reports)
        out += csv_field(r.label) + ',' + format_number(r.accuracy) + ',' + format_number(r.weighted_f1) + ',' +
               format_number(r.delta_accuracy) + ',' + format_number(r.delta_weighted_f1) + '\n';
    write_file(path, out);
}

std::vector<ExpertRef> read_drivers_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::Io, "cannot open '" + path + "'");
    std::vector<ExpertRef> out;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!have_header) {
            require(line.rfind("layer,expert", 0) == 0, ErrorCode::Malformed,
                    path + ":" + std::to_string(lineno) + ": expected a 'layer,expert,...' header");
            have_header = true;
            continue;
        }
        unsigned layer = 0, expert = 0;
        require(std::sscanf(line.c_str(), "%u,%u", &layer, &expert) == 2, ErrorCode::Malformed,
                path + ":" + std::to_string(lineno) + ": expected '<layer>,<expert>,...'");
        out.push_back({layer, expert});
    }
    require(have_header, ErrorCode::Malformed, path + ": missing header line");
    return out;
}

void write_cwas_svg(const ExpertScoreTable& table, const std::string& path, const std::string& provenance) {
    std::vector<std::string> groups;
    std::vector<Series> series;
    for (const auto& d : table.domains) series.push_back({d, {}});
    for (std::uint32_t l = 0; l < table.n_layers; ++l)
        for (std::uint32_t e = 0; e < table.n_experts; ++e) {
            groups.push_back("L" + std::to_string(l) + "E" + std::to_string(e));
            for (std::size_t d = 0; d < table.domains.size(); ++d) series[d].values.push_back(table.at(l, e, d).S);
        }
    std::string data = "layer,expert,domain,S\n";
    for (const auto& c : table.cells)
        data += std::to_string(c.layer) + ',' + std::to_string(c.expert) + ',' + csv_field(c.domain) + ',' +
                format_number(c.S) + '\n';
    write_file(path, svg_chart("CWAS per expert", "S = (1 - H) A", groups, series, false, data, provenance));
}

void write_causal_rate_svg(const std::vector<double>& rates, const std::string& path, const std::string& provenance) {
    std::vector<std::string> groups;
    for (std::size_t l = 0; l < rates.size(); ++l) groups.push_back("layer " + std::to_string(l));
    write_file(path, svg_chart("Causal rate by layer", "fraction of tokens", groups, {{"causal rate", rates}}, true,
                               rate_body(rates), provenance));
}

void write_bins_svg(const std::vector<PositionBinReport>& reports, const std::string& path,
                    const std::string& provenance) {
    std::vector<std::string> groups(std::begin(kBinNames), std::end(kBinNames));
    std::vector<Series> series;
    for (const auto& r : reports) series.push_back({r.domain, {r.fractions.begin(), r.fractions.end()}});
    write_file(path, svg_chart("Positions of driver-activating tokens", "fraction", groups, series, false,
                               bins_body(reports), provenance));
}

}  // namespace moelens
