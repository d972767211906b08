#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "drtext/tensor.hpp"

namespace drtext {

/// A trainable tensor with a stable name for checkpoints and the optimizer.
/// The embedding table is excluded from L2 regularization by default.
struct NamedParam {
    std::string name;
    ad::TensorPtr tensor;
    bool regularize{true};
};

double xavier_stddev(std::int64_t fan_in, std::int64_t fan_out);
ad::TensorPtr xavier_normal(std::vector<std::int64_t> shape, std::mt19937_64& rng);

/// Inverted-dropout configuration; inactive (rate 0 or no rng) means identity.
struct DropoutContext {
    double rate{0.0};
    std::mt19937_64* rng{nullptr};
    bool active() const { return rate > 0.0 && rng != nullptr; }
};

/// Multiplies by a 0 / (1/keep) mask in training mode; identity otherwise.
ad::TensorPtr apply_dropout(const ad::TensorPtr& x, const DropoutContext& ctx);

// ---------------------------------------------------------------------------
// embedding
// ---------------------------------------------------------------------------

class EmbeddingTable {
  public:
    static constexpr std::int64_t kPadId = 0;
    static constexpr std::int64_t kUnkId = 1;

    // Rows ~ N(0, 0.1); the pad row is zero and, because masked positions are
    // never consumed downstream, it receives no gradient and stays zero.
    EmbeddingTable(std::int64_t vocab_size, std::int64_t dim, std::mt19937_64& rng);
    // Wraps an existing table (pretrained loading, checkpoint restore).
    explicit EmbeddingTable(ad::TensorPtr table);

    /// ids -> [L x dim]; throws LookupError on out-of-range ids. An empty id
    /// list yields a 0 x dim tensor; callers enforce their own minimum length.
    ad::TensorPtr embed(const std::vector<std::int64_t>& ids) const;

    std::int64_t vocab_size() const { return table_->dim(0); }
    std::int64_t dim() const { return table_->dim(1); }
    const ad::TensorPtr& table() const { return table_; }

    void collect_params(std::vector<NamedParam>& out, const std::string& prefix) const;

  private:
    ad::TensorPtr table_;
};

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// One direction's weights. Gate layout along the 4u axis: input, forget,
/// cell candidate, output. Forget-gate bias starts at 1, everything else
/// Xavier-normal with zero biases.
struct LstmCell {
    ad::TensorPtr w_ih;  // input_dim x 4u
    ad::TensorPtr w_hh;  // u x 4u
    ad::TensorPtr bias;  // 4u

    std::int64_t input_dim{0};
    std::int64_t hidden_dim{0};

    LstmCell() = default;
    LstmCell(std::int64_t input_dim, std::int64_t hidden_dim, std::mt19937_64& rng);

    /// (x [1 x d], h [1 x u], c [1 x u]) -> (h', c')
    std::pair<ad::TensorPtr, ad::TensorPtr> step(const ad::TensorPtr& x,
                                                 const ad::TensorPtr& h,
                                                 const ad::TensorPtr& c) const;

    void collect_params(std::vector<NamedParam>& out, const std::string& prefix) const;
};

class BiLstm {
  public:
    BiLstm() = default;
    BiLstm(std::int64_t input_dim, std::int64_t hidden_dim, std::mt19937_64& rng);

    /// X [L x d] -> [L x 2u]; row t is [forward_t ; backward_t], both passes
    /// starting from zero states. Masked positions carry the previous state
    /// through unchanged and emit zero rows, so padding cannot leak into real
    /// positions. mask.size() must equal L.
    ad::TensorPtr encode(const ad::TensorPtr& x, const std::vector<bool>& mask) const;

    std::int64_t output_dim() const { return 2 * forward_cell.hidden_dim; }
    void collect_params(std::vector<NamedParam>& out, const std::string& prefix) const;

    LstmCell forward_cell;
    LstmCell backward_cell;
};

// ---------------------------------------------------------------------------
// classifier head
// ---------------------------------------------------------------------------

/// One hidden affine layer with a rectifier, then an affine map to class
/// logits and a softmax. Dropout hits the hidden layer only, in training.
class MlpHead {
  public:
    MlpHead() = default;
    MlpHead(std::int64_t input_dim, std::int64_t hidden_dim, std::int64_t classes,
            std::mt19937_64& rng);

    /// e [1 x input_dim] -> class probabilities [1 x C], rows sum to 1.
    ad::TensorPtr classify(const ad::TensorPtr& encoding, const DropoutContext& dropout) const;

    std::int64_t input_dim() const { return w1->dim(0); }
    std::int64_t classes() const { return w2->dim(1); }
    void collect_params(std::vector<NamedParam>& out, const std::string& prefix) const;

    ad::TensorPtr w1, b1, w2, b2;
};

}  // namespace drtext
