#include "drtext/model.hpp"

namespace drtext {

using ad::TensorPtr;

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocabulary must include pad and unk");
    if (classes < 2) throw ConfigError("need at least two classes");
    if (embedding_dim < 1) throw ConfigError("embedding size must be >= 1");
    if (hidden_units < 1) throw ConfigError("LSTM hidden units must be >= 1");
    if (is_routing(aggregator) || (hierarchical && is_routing(sentence_kind()))) {
        if (capsules < 1) throw ConfigError("capsule number must be >= 1");
        if (capsule_dim < 1) throw ConfigError("capsule dimension must be >= 1");
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
    }
    if (mlp_hidden < 0) throw ConfigError("mlp hidden width must be >= 0");
}

Model::Model(const ModelConfig& config, std::mt19937_64& init_rng)
    : config_(config), embedding_(config.vocab_size, config.embedding_dim, init_rng) {
    init_rest(init_rng);
}

Model::Model(const ModelConfig& config, TensorPtr embedding_table, std::mt19937_64& init_rng)
    : config_(config), embedding_(std::move(embedding_table)) {
    if (embedding_.vocab_size() != config.vocab_size ||
        embedding_.dim() != config.embedding_dim) {
        throw DimensionError("embedding table " + ad::shape_str(embedding_.table()->shape) +
                             " does not match configured " +
                             std::to_string(config.vocab_size) + " x " +
                             std::to_string(config.embedding_dim));
    }
    init_rest(init_rng);
}

void Model::init_rest(std::mt19937_64& rng) {
    config_.validate();
    encoder_ = BiLstm(config_.embedding_dim, config_.hidden_units, rng);
    word_agg_ = AggregatorUnit(config_.aggregator, encoder_.output_dim(), config_.capsules,
                               config_.capsule_dim, config_.iterations, rng);
    if (config_.hierarchical) {
        sentence_agg_ = AggregatorUnit(config_.sentence_kind(), word_agg_.output_dim(),
                                       config_.capsules, config_.capsule_dim,
                                       config_.iterations, rng);
    }
    const std::int64_t enc_dim = encoder_output_dim();
    const std::int64_t hidden = config_.mlp_hidden > 0 ? config_.mlp_hidden : enc_dim;
    head_ = MlpHead(enc_dim, hidden, config_.classes, rng);
}

std::int64_t Model::encoder_output_dim() const {
    return config_.hierarchical ? sentence_agg_.output_dim() : word_agg_.output_dim();
}

ForwardResult Model::forward(const std::vector<std::vector<std::int64_t>>& sentences,
                             const std::vector<std::vector<bool>>& masks,
                             const DropoutContext& dropout) const {
    if (sentences.empty()) throw ContractError("forward: empty example");
    if (sentences.size() != masks.size()) {
        throw ContractError("forward: sentence/mask count mismatch");
    }
    ForwardResult result;
    if (config_.hierarchical) {
        std::vector<TensorPtr> sentence_h;
        sentence_h.reserve(sentences.size());
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            auto x = apply_dropout(embedding_.embed(sentences[s]), dropout);
            sentence_h.push_back(encoder_.encode(x, masks[s]));
        }
        auto hier = hierarchical_encode(sentence_h, masks, word_agg_, sentence_agg_);
        result.word_states = std::move(hier.word_states);
        result.sentence_state = std::move(hier.sentence_state);
        result.probabilities = head_.classify(hier.encoding, dropout);
        return result;
    }

    // flat: one sequence over all sentences
    std::vector<std::int64_t> flat_ids;
    std::vector<bool> flat_mask;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        flat_ids.insert(flat_ids.end(), sentences[s].begin(), sentences[s].end());
        flat_mask.insert(flat_mask.end(), masks[s].begin(), masks[s].end());
    }
    auto x = apply_dropout(embedding_.embed(flat_ids), dropout);
    auto h = encoder_.encode(x, flat_mask);
    auto agg = word_agg_.apply(h, flat_mask);
    if (agg.routing.has_value()) result.word_states.push_back(std::move(*agg.routing));
    result.probabilities = head_.classify(agg.encoding, dropout);
    return result;
}

ForwardResult Model::forward_example(const Example& example,
                                     const DropoutContext& dropout) const {
    std::vector<std::vector<bool>> masks;
    masks.reserve(example.sentences.size());
    for (const auto& s : example.sentences) masks.emplace_back(s.size(), true);
    return forward(example.sentences, masks, dropout);
}

std::vector<NamedParam> Model::params() const {
    std::vector<NamedParam> out;
    embedding_.collect_params(out, "embedding");
    encoder_.collect_params(out, "encoder");
    word_agg_.collect_params(out, "agg.word");
    if (config_.hierarchical) sentence_agg_.collect_params(out, "agg.sentence");
    head_.collect_params(out, "head");
    return out;
}

}  // namespace drtext
