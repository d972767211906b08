#include "drtext/layers.hpp"

#include <cmath>

namespace drtext {

using ad::TensorPtr;

double xavier_stddev(std::int64_t fan_in, std::int64_t fan_out) {
    return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}

TensorPtr xavier_normal(std::vector<std::int64_t> shape, std::mt19937_64& rng) {
    if (shape.size() != 2) throw DimensionError("xavier_normal: expected a matrix shape");
    const double stddev = xavier_stddev(shape[0], shape[1]);
    return ad::randn(std::move(shape), 0.0, stddev, rng, /*requires_grad=*/true);
}

TensorPtr apply_dropout(const TensorPtr& x, const DropoutContext& ctx) {
    if (!ctx.active()) return x;
    const double keep = 1.0 - ctx.rate;
    std::bernoulli_distribution kept(keep);
    std::vector<double> mask(x->values.size());
    for (auto& m : mask) m = kept(*ctx.rng) ? 1.0 / keep : 0.0;
    return ad::dropout_apply(x, ad::leaf(x->shape, std::move(mask)));
}

// ---------------------------------------------------------------------------
// EmbeddingTable
// ---------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(std::int64_t vocab_size, std::int64_t dim,
                               std::mt19937_64& rng) {
    table_ = ad::randn({vocab_size, dim}, 0.0, 0.1, rng, /*requires_grad=*/true);
    for (std::int64_t j = 0; j < dim; ++j) table_->values[kPadId * dim + j] = 0.0;
}

EmbeddingTable::EmbeddingTable(ad::TensorPtr table) : table_(std::move(table)) {
    if (table_->ndim() != 2) {
        throw DimensionError("EmbeddingTable: expected matrix, got " + ad::shape_str(table_->shape));
    }
}

TensorPtr EmbeddingTable::embed(const std::vector<std::int64_t>& ids) const {
    return ad::embedding_lookup(table_, ids);
}

void EmbeddingTable::collect_params(std::vector<NamedParam>& out,
                                    const std::string& prefix) const {
    out.push_back({prefix + ".table", table_, /*regularize=*/false});
}

// ---------------------------------------------------------------------------
// LstmCell / BiLstm
// ---------------------------------------------------------------------------

LstmCell::LstmCell(std::int64_t in_dim, std::int64_t hid_dim, std::mt19937_64& rng)
    : input_dim(in_dim), hidden_dim(hid_dim) {
    w_ih = xavier_normal({input_dim, 4 * hidden_dim}, rng);
    w_hh = xavier_normal({hidden_dim, 4 * hidden_dim}, rng);
    std::vector<double> b(static_cast<std::size_t>(4 * hidden_dim), 0.0);
    // forget gate slice starts at u
    for (std::int64_t j = 0; j < hidden_dim; ++j) b[hidden_dim + j] = 1.0;
    bias = ad::leaf({4 * hidden_dim}, std::move(b), /*requires_grad=*/true);
}

std::pair<TensorPtr, TensorPtr> LstmCell::step(const TensorPtr& x, const TensorPtr& h,
                                               const TensorPtr& c) const {
    using namespace ad;
    const std::int64_t u = hidden_dim;
    auto gates = add_rowvec(add(matmul(x, w_ih), matmul(h, w_hh)), bias);
    auto i = ad::sigmoid(slice_cols(gates, 0, u));
    auto f = ad::sigmoid(slice_cols(gates, u, u));
    auto g = tanh_op(slice_cols(gates, 2 * u, u));
    auto o = ad::sigmoid(slice_cols(gates, 3 * u, u));
    auto c_next = add(mul(f, c), mul(i, g));
    auto h_next = mul(o, tanh_op(c_next));
    return {h_next, c_next};
}

void LstmCell::collect_params(std::vector<NamedParam>& out, const std::string& prefix) const {
    out.push_back({prefix + ".w_ih", w_ih});
    out.push_back({prefix + ".w_hh", w_hh});
    out.push_back({prefix + ".bias", bias});
}

BiLstm::BiLstm(std::int64_t input_dim, std::int64_t hidden_dim, std::mt19937_64& rng)
    : forward_cell(input_dim, hidden_dim, rng), backward_cell(input_dim, hidden_dim, rng) {}

TensorPtr BiLstm::encode(const TensorPtr& x, const std::vector<bool>& mask) const {
    using namespace ad;
    if (x->ndim() != 2) throw DimensionError("bilstm: expected [L x d] input");
    const std::int64_t len = x->dim(0);
    if (len < 1) throw ContractError("bilstm: sequence must have at least one position");
    if (static_cast<std::int64_t>(mask.size()) != len) {
        throw ContractError("bilstm: mask length " + std::to_string(mask.size()) +
                            " != sequence length " + std::to_string(len));
    }
    const std::int64_t u = forward_cell.hidden_dim;
    auto zero_state = zeros({1, u});
    auto zero_row = zeros({1, u});

    std::vector<TensorPtr> fwd(static_cast<std::size_t>(len));
    {
        TensorPtr h = zero_state, c = zero_state;
        for (std::int64_t t = 0; t < len; ++t) {
            if (mask[static_cast<std::size_t>(t)]) {
                auto [h2, c2] = forward_cell.step(slice_rows(x, t, 1), h, c);
                h = h2;
                c = c2;
                fwd[static_cast<std::size_t>(t)] = h;
            } else {
                fwd[static_cast<std::size_t>(t)] = zero_row;
            }
        }
    }
    std::vector<TensorPtr> bwd(static_cast<std::size_t>(len));
    {
        TensorPtr h = zero_state, c = zero_state;
        for (std::int64_t t = len - 1; t >= 0; --t) {
            if (mask[static_cast<std::size_t>(t)]) {
                auto [h2, c2] = backward_cell.step(slice_rows(x, t, 1), h, c);
                h = h2;
                c = c2;
                bwd[static_cast<std::size_t>(t)] = h;
            } else {
                bwd[static_cast<std::size_t>(t)] = zero_row;
            }
        }
    }
    std::vector<TensorPtr> rows(static_cast<std::size_t>(len));
    for (std::int64_t t = 0; t < len; ++t) {
        rows[static_cast<std::size_t>(t)] =
            concat(fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)], 1);
    }
    return stack_rows(rows);
}

void BiLstm::collect_params(std::vector<NamedParam>& out, const std::string& prefix) const {
    forward_cell.collect_params(out, prefix + ".fw");
    backward_cell.collect_params(out, prefix + ".bw");
}

// ---------------------------------------------------------------------------
// MlpHead
// ---------------------------------------------------------------------------

MlpHead::MlpHead(std::int64_t input_dim, std::int64_t hidden_dim, std::int64_t classes,
                 std::mt19937_64& rng) {
    w1 = xavier_normal({input_dim, hidden_dim}, rng);
    b1 = ad::zeros({hidden_dim}, /*requires_grad=*/true);
    w2 = xavier_normal({hidden_dim, classes}, rng);
    b2 = ad::zeros({classes}, /*requires_grad=*/true);
}

TensorPtr MlpHead::classify(const TensorPtr& encoding, const DropoutContext& dropout) const {
    using namespace ad;
    if (encoding->ndim() != 2 || encoding->dim(0) != 1 || encoding->dim(1) != w1->dim(0)) {
        throw ContractError("classify: encoding " + shape_str(encoding->shape) +
                            " does not match head input width " + std::to_string(w1->dim(0)));
    }
    auto hidden = relu(add_rowvec(matmul(encoding, w1), b1));
    hidden = apply_dropout(hidden, dropout);
    auto logits = add_rowvec(matmul(hidden, w2), b2);
    return softmax(logits, 1);
}

void MlpHead::collect_params(std::vector<NamedParam>& out, const std::string& prefix) const {
    out.push_back({prefix + ".w1", w1});
    out.push_back({prefix + ".b1", b1});
    out.push_back({prefix + ".w2", w2});
    out.push_back({prefix + ".b2", b2});
}

}  // namespace drtext
