#pragma once

#include <optional>
#include <random>
#include <vector>

#include "drtext/aggregate.hpp"
#include "drtext/data.hpp"
#include "drtext/layers.hpp"

namespace drtext {

struct ModelConfig {
    std::int64_t vocab_size{0};
    std::int64_t classes{0};
    std::int64_t embedding_dim{300};
    std::int64_t hidden_units{200};
    std::int64_t capsules{5};
    std::int64_t capsule_dim{200};
    std::int64_t iterations{3};
    AggregatorKind aggregator{AggregatorKind::kDrStandard};
    // hierarchical models may mix aggregator types across levels; by default
    // the sentence level follows the word level
    std::optional<AggregatorKind> sentence_aggregator;
    bool hierarchical{false};
    std::int64_t mlp_hidden{0};  // 0 -> encoder output dimension

    AggregatorKind sentence_kind() const { return sentence_aggregator.value_or(aggregator); }
    void validate() const;
};

struct ForwardResult {
    ad::TensorPtr probabilities;  // [1 x C]
    std::vector<RoutingState> word_states;
    std::optional<RoutingState> sentence_state;
};

/// Embedding table + BiLSTM encoder + aggregator(s) + classifier head.
/// Flat models concatenate all sentences into one sequence; hierarchical
/// models aggregate words per sentence, then the sentence encodings, with
/// separate aggregator weights per level.
class Model {
  public:
    Model(const ModelConfig& config, std::mt19937_64& init_rng);
    /// Same, but starts from an existing (pretrained) embedding table.
    Model(const ModelConfig& config, ad::TensorPtr embedding_table, std::mt19937_64& init_rng);

    /// Dropout (when active) hits the word embeddings before the encoder and
    /// the classifier's hidden layer, nowhere else.
    ForwardResult forward(const std::vector<std::vector<std::int64_t>>& sentences,
                          const std::vector<std::vector<bool>>& masks,
                          const DropoutContext& dropout) const;

    /// Real tokens only, masks all true.
    ForwardResult forward_example(const Example& example,
                                  const DropoutContext& dropout) const;

    std::vector<NamedParam> params() const;
    const ModelConfig& config() const { return config_; }
    std::int64_t encoder_output_dim() const;

    const EmbeddingTable& embedding() const { return embedding_; }
    const BiLstm& encoder() const { return encoder_; }
    const AggregatorUnit& word_aggregator() const { return word_agg_; }
    const AggregatorUnit& sentence_aggregator() const { return sentence_agg_; }
    const MlpHead& head() const { return head_; }

  private:
    void init_rest(std::mt19937_64& rng);

    ModelConfig config_;
    EmbeddingTable embedding_;
    BiLstm encoder_;
    AggregatorUnit word_agg_;
    AggregatorUnit sentence_agg_;  // hierarchical only
    MlpHead head_;
};

}  // namespace drtext
