#pragma once

#include <optional>
#include <string>
#include <vector>

#include "drtext/data.hpp"
#include "drtext/model.hpp"

namespace drtext {

/// Routing run over one input line, kept with its tokens for rendering.
struct LineVisualization {
    std::vector<std::vector<std::string>> sentence_tokens;
    std::vector<std::string> flat_tokens;
    std::vector<RoutingState> word_states;  // flat models: exactly one
    std::optional<RoutingState> sentence_state;
    bool hierarchical{false};
};

/// Forward pass (dropout off) over a tokenized input line; the model must use
/// a routing aggregator.
LineVisualization visualize_line(const Model& model, const Vocabulary& vocab,
                                 const ParseOptions& options, const std::string& line);

/// Replaces each state's displayed coupling with iteration `iteration`
/// (1-based); 0 keeps the final iteration, the one that produced V.
void select_iteration(LineVisualization& viz, std::int64_t iteration);

/// `level capsule_j position_i token c_ij` rows. Word-level rows use flat
/// document token positions; the sentence level indexes sentences and labels
/// them `s<k>`.
std::string line_tsv(const LineVisualization& viz);

/// Standalone page: one row of colored tokens per output capsule, intensity
/// proportional to c_ij with per-row max normalization; raw value in the
/// tooltip.
std::string render_html(const std::vector<LineVisualization>& lines, const std::string& title);

}  // namespace drtext
