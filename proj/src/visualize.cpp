#include "drtext/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace drtext {

LineVisualization visualize_line(const Model& model, const Vocabulary& vocab,
                                 const ParseOptions& options, const std::string& line) {
    const bool word_routes = is_routing(model.config().aggregator);
    const bool sentence_routes =
        model.config().hierarchical && is_routing(model.config().sentence_kind());
    if (!word_routes && !sentence_routes) {
        throw ContractError("no routing state to visualize (aggregator is " +
                            to_string(model.config().aggregator) + ")");
    }
    LineVisualization viz;
    viz.hierarchical = model.config().hierarchical;

    auto tokens = tokenize(line, options.lowercase);
    std::vector<std::string> current;
    for (auto& tok : tokens) {
        if (options.format == DataFormat::kDocument && tok == options.sentence_separator) {
            if (!current.empty()) viz.sentence_tokens.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(std::move(tok));
        }
    }
    if (!current.empty()) viz.sentence_tokens.push_back(std::move(current));
    if (viz.sentence_tokens.empty()) throw ContractError("visualize: input line has no tokens");

    std::vector<std::vector<std::int64_t>> sentences;
    std::vector<std::vector<bool>> masks;
    for (const auto& sent : viz.sentence_tokens) {
        std::vector<std::int64_t> ids;
        ids.reserve(sent.size());
        for (const auto& tok : sent) ids.push_back(vocab.id_of(tok));
        sentences.push_back(std::move(ids));
        masks.emplace_back(sent.size(), true);
        viz.flat_tokens.insert(viz.flat_tokens.end(), sent.begin(), sent.end());
    }

    auto fr = model.forward(sentences, masks, DropoutContext{});
    viz.word_states = std::move(fr.word_states);
    viz.sentence_state = std::move(fr.sentence_state);
    return viz;
}

void select_iteration(LineVisualization& viz, std::int64_t iteration) {
    if (iteration == 0) return;
    auto apply = [iteration](RoutingState& state) {
        if (iteration < 1 || iteration > state.iterations) {
            throw ConfigError("routing iteration " + std::to_string(iteration) +
                              " outside [1, " + std::to_string(state.iterations) + "]");
        }
        state.coupling = state.coupling_history[static_cast<std::size_t>(iteration - 1)];
    };
    for (auto& s : viz.word_states) apply(s);
    if (viz.sentence_state.has_value()) apply(*viz.sentence_state);
}

std::string line_tsv(const LineVisualization& viz) {
    std::ostringstream os;
    os << "level\tcapsule_j\tposition_i\ttoken\tc_ij\n";
    std::int64_t offset = 0;
    for (std::size_t s = 0; s < viz.word_states.size(); ++s) {
        const auto& tokens = viz.sentence_tokens.size() == viz.word_states.size()
                                 ? viz.sentence_tokens[s]
                                 : viz.flat_tokens;
        append_routing_tsv(os, "word", viz.word_states[s], tokens, offset, false);
        offset += viz.word_states[s].seq_len;
    }
    if (viz.sentence_state.has_value()) {
        std::vector<std::string> sentence_names;
        sentence_names.reserve(viz.sentence_tokens.size());
        for (std::size_t s = 0; s < viz.sentence_tokens.size(); ++s)
            sentence_names.push_back("s" + std::to_string(s));
        append_routing_tsv(os, "sentence", *viz.sentence_state, sentence_names, 0, false);
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// html
// ---------------------------------------------------------------------------

namespace {

std::string escape_html(const std::string& s) {
    std::string out;
    out.reserve(s.size());
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

// One display row per capsule; intensity = c / row max (monotone in c).
void render_state(std::ostringstream& os, const std::string& heading,
                  const RoutingState& state, const std::vector<std::string>& tokens) {
    os << "<h3>" << escape_html(heading) << "</h3>\n";
    for (std::int64_t j = 0; j < state.capsules; ++j) {
        double row_max = 0.0;
        for (auto i : state.real_positions) row_max = std::max(row_max, state.coupling_at(i, j));
        os << "<div class=\"caps\"><span class=\"lbl\">capsule " << j << "</span> ";
        for (auto i : state.real_positions) {
            const double c = state.coupling_at(i, j);
            const double intensity = row_max > 0 ? c / row_max : 0.0;
            char color[64];
            std::snprintf(color, sizeof(color), "rgba(30,90,200,%.3f)", intensity * 0.85);
            char raw[40];
            std::snprintf(raw, sizeof(raw), "%.6g", c);
            const std::string token =
                i < static_cast<std::int64_t>(tokens.size()) ? tokens[i] : "?";
            os << "<span class=\"tok\" style=\"background:" << color << "\" title=\"c_ij="
               << raw << "\">" << escape_html(token) << "</span> ";
        }
        os << "</div>\n";
    }
}

}  // namespace

std::string render_html(const std::vector<LineVisualization>& lines, const std::string& title) {
    std::ostringstream os;
    os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>"
       << escape_html(title) << "</title>\n<style>\n"
       << "body { font-family: sans-serif; margin: 2em; }\n"
       << ".caps { margin: 0.3em 0; line-height: 1.9; }\n"
       << ".lbl { display: inline-block; width: 7em; color: #555; font-size: 0.85em; }\n"
       << ".tok { padding: 0.15em 0.3em; border-radius: 3px; }\n"
       << "</style></head><body>\n<h1>" << escape_html(title) << "</h1>\n";
    for (std::size_t k = 0; k < lines.size(); ++k) {
        const auto& viz = lines[k];
        os << "<h2>line " << k << "</h2>\n";
        std::int64_t offset = 0;
        for (std::size_t s = 0; s < viz.word_states.size(); ++s) {
            const auto& tokens = viz.sentence_tokens.size() == viz.word_states.size()
                                     ? viz.sentence_tokens[s]
                                     : viz.flat_tokens;
            const std::string heading =
                viz.hierarchical ? "word level, sentence " + std::to_string(s) : "word level";
            render_state(os, heading, viz.word_states[s], tokens);
            offset += viz.word_states[s].seq_len;
        }
        if (viz.sentence_state.has_value()) {
            std::vector<std::string> names;
            names.reserve(viz.sentence_tokens.size());
            for (std::size_t s = 0; s < viz.sentence_tokens.size(); ++s) {
                std::string joined = "s" + std::to_string(s) + ": ";
                for (std::size_t t = 0; t < viz.sentence_tokens[s].size() && t < 6; ++t)
                    joined += viz.sentence_tokens[s][t] + " ";
                if (viz.sentence_tokens[s].size() > 6) joined += "...";
                names.push_back(joined);
            }
            render_state(os, "sentence level", *viz.sentence_state, names);
        }
    }
    os << "</body></html>\n";
    return os.str();
}

}  // namespace drtext
