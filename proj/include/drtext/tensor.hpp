#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "drtext/errors.hpp"

namespace drtext::ad {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major 64-bit float tensor participating in reverse-mode
/// differentiation. Leaves (parameters, constants) have no parents; operation
/// outputs keep shared links to their inputs plus a closure that pushes the
/// output gradient back to them. A Tensor and the tape it was recorded on form
/// a single-threaded unit of work; read-only tensors may be shared across
/// threads.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> values;
    bool requires_grad{false};

    // Same length as values once allocated; empty until first accumulation.
    std::vector<double> grad;

    // Tape bookkeeping. Empty for leaves.
    std::vector<TensorPtr> parents;
    std::function<void(const Tensor&)> backprop;

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape.size()); }
    std::int64_t dim(std::int64_t i) const { return shape[static_cast<std::size_t>(i)]; }

    // Scalar extraction; contract: size() == 1.
    double item() const;

    void ensure_grad();
    void zero_grad();
    bool is_leaf() const { return parents.empty(); }
};

std::string shape_str(const std::vector<std::int64_t>& shape);
std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

TensorPtr leaf(std::vector<std::int64_t> shape, std::vector<double> values,
               bool requires_grad = false);
TensorPtr zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
TensorPtr full(std::vector<std::int64_t> shape, double value, bool requires_grad = false);
TensorPtr scalar(double value);
TensorPtr randn(std::vector<std::int64_t> shape, double mean, double stddev,
                std::mt19937_64& rng, bool requires_grad = false);

// ---------------------------------------------------------------------------
// gradient sinks
// ---------------------------------------------------------------------------

/// Redirects gradient accumulation for a fixed set of leaf tensors into
/// private buffers. Worker threads run backward passes against shared
/// read-only parameters with one sink each; the trainer then flushes the
/// sinks into the parameter grads in a fixed order so reductions stay
/// deterministic.
class GradSink {
  public:
    void watch(const TensorPtr& t);
    bool watches(const Tensor* t) const { return index_.count(t) != 0; }

    void add(const Tensor* t, const double* g, std::size_t n);
    void add_rows(const Tensor* t, const std::vector<std::int64_t>& rows,
                  const double* g, std::int64_t row_width);

    void reset();
    /// Adds every buffer into the watched tensor's grad. Single-threaded.
    void flush_into_grads();

  private:
    struct Slot {
        TensorPtr tensor;
        std::vector<double> buffer;
    };
    std::vector<Slot> slots_;
    std::unordered_map<const Tensor*, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// tape
// ---------------------------------------------------------------------------

/// Ordered record of executed operations. Creation order is a topological
/// order of the graph, so the backward pass replays the record in reverse.
/// Instantiating a Tape makes it active for the current thread; operations
/// executed while no tape is active compute values only (inference mode).
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();
    void record(TensorPtr node) { nodes_.push_back(std::move(node)); }
    std::size_t node_count() const { return nodes_.size(); }

    /// Reverse sweep from a scalar loss. Populates grad for every
    /// requires_grad tensor reachable from it; gradients accumulate
    /// additively across fan-out. When sink is given, gradients of watched
    /// leaves go to the sink instead of the tensors.
    void backward(const TensorPtr& loss, GradSink* sink = nullptr);

  private:
    std::vector<TensorPtr> nodes_;
    Tape* previous_{nullptr};
};

/// Accumulate g into t.grad, or into the active sink when t is a watched
/// leaf. Backward closures route every write through these two functions.
void accumulate(Tensor& t, const double* g, std::size_t n);
void accumulate_rows(Tensor& t, const std::vector<std::int64_t>& rows,
                     const double* g, std::int64_t row_width);

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

// Elementwise; shapes must match exactly.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);

/// [k x m] + broadcast row vector [m]
TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& v);

TensorPtr tanh_op(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr relu(const TensorPtr& a);

/// log(max(x, floor)); gradient is 1/x above the floor and 0 at or below it.
TensorPtr log_floor(const TensorPtr& a, double floor = 1e-12);

/// Numerically stable softmax along `axis` of a 1-D or 2-D tensor. Each
/// slice is shifted by its maximum before exponentiation; slices sum to 1.
TensorPtr softmax(const TensorPtr& a, std::int64_t axis);

/// Norm-limiting nonlinearity (|s|^2/(1+|s|^2)) * s/|s|, applied to the whole
/// vector for 1-D input and to each row for 2-D input. s = 0 maps to 0 with
/// gradient 0 (the limit value).
TensorPtr squash(const TensorPtr& a);

TensorPtr l2norm(const TensorPtr& a);       // -> [1]
TensorPtr sum_all(const TensorPtr& a);      // -> [1]
TensorPtr sum_squares(const TensorPtr& a);  // -> [1]
TensorPtr sum_axis(const TensorPtr& a, std::int64_t axis);  // 2-D only

/// Per-slice maximum; remembers argmax (first winner on ties) and routes the
/// gradient to those positions only.
TensorPtr max_axis(const TensorPtr& a, std::int64_t axis);  // 2-D only

TensorPtr concat(const TensorPtr& a, const TensorPtr& b, std::int64_t axis);  // 2-D
/// n row-like tensors ([d] or [1 x d]) -> [n x d]
TensorPtr stack_rows(const std::vector<TensorPtr>& rows);
TensorPtr slice_cols(const TensorPtr& a, std::int64_t start, std::int64_t len);
TensorPtr slice_rows(const TensorPtr& a, std::int64_t start, std::int64_t len);
TensorPtr gather_rows(const TensorPtr& a, const std::vector<std::int64_t>& indices);
TensorPtr reshape(const TensorPtr& a, std::vector<std::int64_t> new_shape);

/// Single element by flat index -> [1]
TensorPtr pick(const TensorPtr& a, std::int64_t flat_index);

/// Multiply by a 0/(1/keep)-scaled mask of identical shape (inverted
/// dropout). The mask is a plain constant; keep = 1 makes this the identity.
TensorPtr dropout_apply(const TensorPtr& x, const TensorPtr& mask);

/// table[V x d], ids -> [L x d]; row i is the embedding of ids[i].
/// Backward scatters row gradients into the table (sparse-friendly).
TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<std::int64_t>& ids);

/// M matrices [K x D] -> [K x M x D]; entry (i, j, :) is mats[j] row i.
TensorPtr transform_stack(const std::vector<TensorPtr>& mats);

/// c[K x M], msgs[K x M x D] -> s[M x D] with s[j] = sum_i c[i,j] * msgs[i,j].
TensorPtr weighted_message_sum(const TensorPtr& c, const TensorPtr& msgs);

/// v[M x D], msgs[K x M x D] -> a[K x M] with a[i,j] = v[j] . msgs[i,j].
TensorPtr message_agreement(const TensorPtr& v, const TensorPtr& msgs);

}  // namespace drtext::ad
