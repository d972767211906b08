#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "drtext/layers.hpp"
#include "drtext/tensor.hpp"

namespace drtext {

enum class AggregatorKind { kMax, kAvg, kAttn, kDrStandard, kDrReversed };
enum class RouteDirection { kStandard, kReversed };

std::string to_string(AggregatorKind kind);
AggregatorKind aggregator_from_string(const std::string& name);
bool is_routing(AggregatorKind kind);
RouteDirection direction_of(AggregatorKind kind);

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

struct SelfAttentionWeights {
    ad::TensorPtr query;  // input_dim x 1

    SelfAttentionWeights() = default;
    SelfAttentionWeights(std::int64_t input_dim, std::mt19937_64& rng);
    void collect_params(std::vector<NamedParam>& out, const std::string& prefix) const;
};

/// Per output capsule j: an affine map input_dim -> capsule_dim selecting
/// which aspect of an input is transferable to that capsule.
struct TransformWeights {
    std::vector<ad::TensorPtr> weight;  // M x [input_dim x capsule_dim]
    std::vector<ad::TensorPtr> bias;    // M x [capsule_dim]
    std::int64_t input_dim{0};
    std::int64_t capsule_dim{0};

    TransformWeights() = default;
    TransformWeights(std::int64_t input_dim, std::int64_t capsule_dim, std::int64_t capsules,
                     std::mt19937_64& rng);
    std::int64_t capsules() const { return static_cast<std::int64_t>(weight.size()); }
    void collect_params(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// ---------------------------------------------------------------------------
// routing state
// ---------------------------------------------------------------------------

/// Value snapshot of one routing run, kept for inspection and visualization.
/// Matrices are stored dense over the padded length L; masked rows are
/// exactly zero. `coupling` is the final iteration's c — the weights that
/// produced the returned capsules; `logits` is b after its final update.
struct RoutingState {
    RouteDirection direction{RouteDirection::kStandard};
    std::int64_t iterations{0};
    std::int64_t seq_len{0};      // L
    std::int64_t capsules{0};     // M
    std::int64_t capsule_dim{0};  // d_c
    std::vector<std::int64_t> real_positions;

    std::vector<double> coupling;                       // L x M
    std::vector<double> logits;                         // L x M
    std::vector<std::vector<double>> coupling_history;  // one L x M matrix per iteration
    std::vector<double> messages;                       // L x M x d_c
    std::vector<double> pre_squash;                     // M x d_c
    std::vector<double> capsule_values;                 // M x d_c

    double coupling_at(std::int64_t i, std::int64_t j) const {
        return coupling[i * capsules + j];
    }
};

// ---------------------------------------------------------------------------
// aggregation operations (H is the [L x dim] encoder output)
// ---------------------------------------------------------------------------

/// Per-dimension maximum over unmasked rows; gradient reaches argmax rows only.
ad::TensorPtr max_pool(const ad::TensorPtr& h, const std::vector<bool>& mask);

/// Mean over unmasked rows (the divisor counts real rows only).
ad::TensorPtr avg_pool(const ad::TensorPtr& h, const std::vector<bool>& mask);

/// softmax(q . h_i) over unmasked rows, then the weighted sum of those rows.
ad::TensorPtr self_attention(const ad::TensorPtr& h, const SelfAttentionWeights& w,
                             const std::vector<bool>& mask);

/// [K x dim] -> [K x M x d_c]; entry (i, j) is transform j applied to row i.
/// Computed once per forward pass; the values are iteration-independent, so
/// routing reuses them across its loop.
ad::TensorPtr transform_messages(const ad::TensorPtr& h, const TransformWeights& transforms);

/// Iterative routing. b starts at zero; each iteration computes c from b
/// (softmax over capsules for standard routing, over unmasked positions for
/// reversed), forms the coupled message sums, squashes them into capsules,
/// then updates b with the capsule/message agreement. Returns the capsules
/// from iteration T and the full state; gradients flow through the whole
/// unrolled loop.
std::pair<ad::TensorPtr, RoutingState> route(const ad::TensorPtr& h,
                                             const TransformWeights& transforms,
                                             std::int64_t iterations, RouteDirection direction,
                                             const std::vector<bool>& mask);

/// [M x d_c] -> [1 x M*d_c], capsules in order.
ad::TensorPtr concat_capsules(const ad::TensorPtr& capsules);

// ---------------------------------------------------------------------------
// aggregator unit: one choice of aggregator with its weights for one level
// ---------------------------------------------------------------------------

struct AggregateResult {
    ad::TensorPtr encoding;  // [1 x output_dim]
    std::optional<RoutingState> routing;
};

class AggregatorUnit {
  public:
    AggregatorUnit() = default;
    AggregatorUnit(AggregatorKind kind, std::int64_t input_dim, std::int64_t capsules,
                   std::int64_t capsule_dim, std::int64_t iterations, std::mt19937_64& rng);

    AggregateResult apply(const ad::TensorPtr& h, const std::vector<bool>& mask) const;

    AggregatorKind kind() const { return kind_; }
    std::int64_t input_dim() const { return input_dim_; }
    std::int64_t output_dim() const;
    void collect_params(std::vector<NamedParam>& out, const std::string& prefix) const;

  private:
    AggregatorKind kind_{AggregatorKind::kMax};
    std::int64_t input_dim_{0};
    std::int64_t iterations_{1};
    SelfAttentionWeights attention_;
    TransformWeights transforms_;
};

// ---------------------------------------------------------------------------
// hierarchical composition
// ---------------------------------------------------------------------------

struct HierarchicalResult {
    ad::TensorPtr encoding;  // [1 x sentence-level output_dim]
    std::vector<RoutingState> word_states;  // one per sentence when word level routes
    std::optional<RoutingState> sentence_state;
};

/// Word-level aggregation of each sentence's H, then sentence-level
/// aggregation of the stacked sentence encodings (separate weights per
/// level). Both levels' routing states are exposed.
HierarchicalResult hierarchical_encode(const std::vector<ad::TensorPtr>& sentence_h,
                                       const std::vector<std::vector<bool>>& sentence_masks,
                                       const AggregatorUnit& word_agg,
                                       const AggregatorUnit& sentence_agg);

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

/// Appends `level capsule_j position_i token c_ij` rows for the real
/// positions of one routing state, capsule-major. `tokens` aligns with
/// sequence positions; `position_offset` shifts the emitted positions so
/// hierarchical word rows can use flat document positions. Values print with
/// enough digits to round-trip exactly.
void append_routing_tsv(std::ostream& os, const std::string& level, const RoutingState& state,
                        const std::vector<std::string>& tokens,
                        std::int64_t position_offset = 0, bool write_header = false);

}  // namespace drtext
