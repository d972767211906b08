#include "drtext/aggregate.hpp"

#include <cinttypes>
#include <cstdio>

namespace drtext {

using ad::TensorPtr;

std::string to_string(AggregatorKind kind) {
    switch (kind) {
        case AggregatorKind::kMax: return "max";
        case AggregatorKind::kAvg: return "avg";
        case AggregatorKind::kAttn: return "attn";
        case AggregatorKind::kDrStandard: return "dr-standard";
        case AggregatorKind::kDrReversed: return "dr-reversed";
    }
    return "?";
}

AggregatorKind aggregator_from_string(const std::string& name) {
    if (name == "max") return AggregatorKind::kMax;
    if (name == "avg") return AggregatorKind::kAvg;
    if (name == "attn") return AggregatorKind::kAttn;
    if (name == "dr-standard") return AggregatorKind::kDrStandard;
    if (name == "dr-reversed") return AggregatorKind::kDrReversed;
    throw ConfigError("unknown aggregator '" + name +
                      "' (expected max|avg|attn|dr-standard|dr-reversed)");
}

bool is_routing(AggregatorKind kind) {
    return kind == AggregatorKind::kDrStandard || kind == AggregatorKind::kDrReversed;
}

RouteDirection direction_of(AggregatorKind kind) {
    if (kind == AggregatorKind::kDrStandard) return RouteDirection::kStandard;
    if (kind == AggregatorKind::kDrReversed) return RouteDirection::kReversed;
    throw ContractError("direction_of: aggregator " + to_string(kind) + " does not route");
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

SelfAttentionWeights::SelfAttentionWeights(std::int64_t input_dim, std::mt19937_64& rng) {
    query = xavier_normal({input_dim, 1}, rng);
}

void SelfAttentionWeights::collect_params(std::vector<NamedParam>& out,
                                          const std::string& prefix) const {
    out.push_back({prefix + ".query", query});
}

TransformWeights::TransformWeights(std::int64_t in_dim, std::int64_t caps_dim,
                                   std::int64_t capsules, std::mt19937_64& rng)
    : input_dim(in_dim), capsule_dim(caps_dim) {
    if (capsules < 1) throw ConfigError("capsule number must be >= 1");
    weight.reserve(static_cast<std::size_t>(capsules));
    bias.reserve(static_cast<std::size_t>(capsules));
    for (std::int64_t j = 0; j < capsules; ++j) {
        weight.push_back(xavier_normal({input_dim, capsule_dim}, rng));
        bias.push_back(ad::zeros({capsule_dim}, /*requires_grad=*/true));
    }
}

void TransformWeights::collect_params(std::vector<NamedParam>& out,
                                      const std::string& prefix) const {
    for (std::size_t j = 0; j < weight.size(); ++j) {
        out.push_back({prefix + ".w" + std::to_string(j), weight[j]});
        out.push_back({prefix + ".b" + std::to_string(j), bias[j]});
    }
}

// ---------------------------------------------------------------------------
// masking helpers
// ---------------------------------------------------------------------------

namespace {

std::vector<std::int64_t> real_positions_of(const TensorPtr& h,
                                            const std::vector<bool>& mask, const char* op) {
    if (h->ndim() != 2) {
        throw DimensionError(std::string(op) + ": expected [L x dim] input, got " +
                             ad::shape_str(h->shape));
    }
    if (static_cast<std::int64_t>(mask.size()) != h->dim(0)) {
        throw ContractError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                            " != row count " + std::to_string(h->dim(0)));
    }
    std::vector<std::int64_t> real;
    real.reserve(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) real.push_back(static_cast<std::int64_t>(i));
    if (real.empty()) throw ContractError(std::string(op) + ": all positions are masked");
    return real;
}

TensorPtr compact_rows(const TensorPtr& h, const std::vector<std::int64_t>& real) {
    if (static_cast<std::int64_t>(real.size()) == h->dim(0)) return h;
    return ad::gather_rows(h, real);
}

// Scatter a K x M (or K x M x d) compact matrix into an L-row dense one with
// zeros at masked rows.
std::vector<double> expand_rows(const std::vector<double>& compact,
                                const std::vector<std::int64_t>& real, std::int64_t seq_len,
                                std::int64_t row_width) {
    std::vector<double> full(static_cast<std::size_t>(seq_len * row_width), 0.0);
    for (std::size_t r = 0; r < real.size(); ++r) {
        for (std::int64_t j = 0; j < row_width; ++j)
            full[real[r] * row_width + j] = compact[static_cast<std::int64_t>(r) * row_width + j];
    }
    return full;
}

}  // namespace

// ---------------------------------------------------------------------------
// pooling and attention
// ---------------------------------------------------------------------------

TensorPtr max_pool(const TensorPtr& h, const std::vector<bool>& mask) {
    const auto real = real_positions_of(h, mask, "max_pool");
    auto hr = compact_rows(h, real);
    return ad::reshape(ad::max_axis(hr, 0), {1, h->dim(1)});
}

TensorPtr avg_pool(const TensorPtr& h, const std::vector<bool>& mask) {
    const auto real = real_positions_of(h, mask, "avg_pool");
    auto hr = compact_rows(h, real);
    auto sum = ad::sum_axis(hr, 0);
    return ad::reshape(ad::scale(sum, 1.0 / static_cast<double>(real.size())), {1, h->dim(1)});
}

TensorPtr self_attention(const TensorPtr& h, const SelfAttentionWeights& w,
                         const std::vector<bool>& mask) {
    const auto real = real_positions_of(h, mask, "self_attention");
    auto hr = compact_rows(h, real);
    const std::int64_t k = hr->dim(0);
    auto scores = ad::reshape(ad::matmul(hr, w.query), {k});
    auto weights = ad::softmax(scores, 0);
    return ad::matmul(ad::reshape(weights, {1, k}), hr);
}

// ---------------------------------------------------------------------------
// dynamic routing
// ---------------------------------------------------------------------------

TensorPtr transform_messages(const TensorPtr& h, const TransformWeights& transforms) {
    if (h->ndim() != 2 || h->dim(1) != transforms.input_dim) {
        throw DimensionError("transform_messages: input " + ad::shape_str(h->shape) +
                             " does not match transform input dim " +
                             std::to_string(transforms.input_dim));
    }
    std::vector<TensorPtr> per_capsule;
    per_capsule.reserve(transforms.weight.size());
    for (std::size_t j = 0; j < transforms.weight.size(); ++j) {
        per_capsule.push_back(
            ad::add_rowvec(ad::matmul(h, transforms.weight[j]), transforms.bias[j]));
    }
    return ad::transform_stack(per_capsule);
}

std::pair<TensorPtr, RoutingState> route(const TensorPtr& h, const TransformWeights& transforms,
                                         std::int64_t iterations, RouteDirection direction,
                                         const std::vector<bool>& mask) {
    if (iterations < 1) {
        throw ConfigError("routing iterations must be >= 1, got " + std::to_string(iterations));
    }
    const auto real = real_positions_of(h, mask, "route");
    auto hr = compact_rows(h, real);

    // Messages are iteration-independent; compute once and reuse.
    auto msgs = transform_messages(hr, transforms);
    const std::int64_t m = transforms.capsules();
    const std::int64_t d = transforms.capsule_dim;
    const std::int64_t k = hr->dim(0);
    const std::int64_t seq_len = h->dim(0);

    RoutingState state;
    state.direction = direction;
    state.iterations = iterations;
    state.seq_len = seq_len;
    state.capsules = m;
    state.capsule_dim = d;
    state.real_positions = real;
    state.messages = expand_rows(msgs->values, real, seq_len, m * d);

    // log probabilities, all zero at the start
    TensorPtr b = ad::zeros({k, m});
    TensorPtr coupling, capsules, pooled;
    const std::int64_t softmax_axis = direction == RouteDirection::kStandard ? 1 : 0;
    for (std::int64_t t = 0; t < iterations; ++t) {
        coupling = ad::softmax(b, softmax_axis);
        pooled = ad::weighted_message_sum(coupling, msgs);
        capsules = ad::squash(pooled);
        b = ad::add(b, ad::message_agreement(capsules, msgs));
        state.coupling_history.push_back(expand_rows(coupling->values, real, seq_len, m));
    }
    state.coupling = state.coupling_history.back();
    state.logits = expand_rows(b->values, real, seq_len, m);
    state.pre_squash = pooled->values;
    state.capsule_values = capsules->values;
    return {capsules, std::move(state)};
}

TensorPtr concat_capsules(const TensorPtr& capsules) {
    if (capsules->ndim() != 2) {
        throw DimensionError("concat_capsules: expected [M x d_c], got " +
                             ad::shape_str(capsules->shape));
    }
    return ad::reshape(capsules, {1, capsules->dim(0) * capsules->dim(1)});
}

// ---------------------------------------------------------------------------
// AggregatorUnit
// ---------------------------------------------------------------------------

AggregatorUnit::AggregatorUnit(AggregatorKind kind, std::int64_t input_dim,
                               std::int64_t capsules, std::int64_t capsule_dim,
                               std::int64_t iterations, std::mt19937_64& rng)
    : kind_(kind), input_dim_(input_dim), iterations_(iterations) {
    if (kind == AggregatorKind::kAttn) {
        attention_ = SelfAttentionWeights(input_dim, rng);
    } else if (is_routing(kind)) {
        if (iterations < 1) {
            throw ConfigError("routing iterations must be >= 1, got " +
                              std::to_string(iterations));
        }
        transforms_ = TransformWeights(input_dim, capsule_dim, capsules, rng);
    }
}

std::int64_t AggregatorUnit::output_dim() const {
    if (is_routing(kind_)) return transforms_.capsules() * transforms_.capsule_dim;
    return input_dim_;
}

AggregateResult AggregatorUnit::apply(const TensorPtr& h, const std::vector<bool>& mask) const {
    switch (kind_) {
        case AggregatorKind::kMax: return {max_pool(h, mask), std::nullopt};
        case AggregatorKind::kAvg: return {avg_pool(h, mask), std::nullopt};
        case AggregatorKind::kAttn: return {self_attention(h, attention_, mask), std::nullopt};
        case AggregatorKind::kDrStandard:
        case AggregatorKind::kDrReversed: {
            auto [capsules, state] =
                route(h, transforms_, iterations_, direction_of(kind_), mask);
            return {concat_capsules(capsules), std::move(state)};
        }
    }
    throw ContractError("apply: unreachable aggregator kind");
}

void AggregatorUnit::collect_params(std::vector<NamedParam>& out,
                                    const std::string& prefix) const {
    if (kind_ == AggregatorKind::kAttn) attention_.collect_params(out, prefix);
    if (is_routing(kind_)) transforms_.collect_params(out, prefix);
}

// ---------------------------------------------------------------------------
// hierarchical composition
// ---------------------------------------------------------------------------

HierarchicalResult hierarchical_encode(const std::vector<TensorPtr>& sentence_h,
                                       const std::vector<std::vector<bool>>& sentence_masks,
                                       const AggregatorUnit& word_agg,
                                       const AggregatorUnit& sentence_agg) {
    if (sentence_h.empty()) throw ContractError("hierarchical_encode: empty document");
    if (sentence_masks.size() != sentence_h.size()) {
        throw ContractError("hierarchical_encode: mask count != sentence count");
    }
    HierarchicalResult result;
    std::vector<TensorPtr> encodings;
    encodings.reserve(sentence_h.size());
    for (std::size_t s = 0; s < sentence_h.size(); ++s) {
        auto r = word_agg.apply(sentence_h[s], sentence_masks[s]);
        encodings.push_back(r.encoding);
        if (r.routing.has_value()) result.word_states.push_back(std::move(*r.routing));
    }
    auto stacked = ad::stack_rows(encodings);
    std::vector<bool> all_real(encodings.size(), true);
    auto top = sentence_agg.apply(stacked, all_real);
    result.encoding = top.encoding;
    result.sentence_state = std::move(top.routing);
    return result;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

void append_routing_tsv(std::ostream& os, const std::string& level, const RoutingState& state,
                        const std::vector<std::string>& tokens, std::int64_t position_offset,
                        bool write_header) {
    if (write_header) os << "level\tcapsule_j\tposition_i\ttoken\tc_ij\n";
    char buf[40];
    for (std::int64_t j = 0; j < state.capsules; ++j) {
        for (auto i : state.real_positions) {
            std::snprintf(buf, sizeof(buf), "%.17g", state.coupling_at(i, j));
            const std::string token =
                i < static_cast<std::int64_t>(tokens.size()) ? tokens[i] : "?";
            os << level << '\t' << j << '\t' << (position_offset + i) << '\t' << token << '\t'
               << buf << '\n';
        }
    }
}

}  // namespace drtext
