#include "drtext/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace drtext::ad {

namespace {

thread_local Tape* tls_active_tape = nullptr;
thread_local GradSink* tls_active_sink = nullptr;

// Builds an op node. The output requires grad only when a tape is active and
// some parent requires grad; otherwise parents and the closure are dropped
// and the node is a plain value (inference mode).
TensorPtr make_op(std::vector<std::int64_t> shape, std::vector<double> values,
                  std::vector<TensorPtr> parents,
                  std::function<void(const Tensor&)> backprop) {
    auto out = std::make_shared<Tensor>();
    out->shape = std::move(shape);
    out->values = std::move(values);
    Tape* tape = Tape::active();
    if (tape != nullptr) {
        bool any = false;
        for (const auto& p : parents) any = any || p->requires_grad;
        if (any) {
            out->requires_grad = true;
            out->parents = std::move(parents);
            out->backprop = std::move(backprop);
            tape->record(out);
        }
    }
    return out;
}

void require_2d(const TensorPtr& t, const char* op) {
    if (t->ndim() != 2) {
        throw DimensionError(std::string(op) + ": expected 2-D tensor, got shape " +
                             shape_str(t->shape));
    }
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape) {
        throw DimensionError(std::string(op) + ": shape mismatch: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    }
}

}  // namespace

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item(): tensor has " + std::to_string(size()) +
                            " elements, expected scalar");
    }
    return values[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
    if (grad.empty()) {
        grad.assign(values.size(), 0.0);
    } else {
        std::fill(grad.begin(), grad.end(), 0.0);
    }
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

TensorPtr leaf(std::vector<std::int64_t> shape, std::vector<double> values,
               bool requires_grad) {
    for (auto d : shape) {
        if (d <= 0) throw DimensionError("leaf: non-positive dimension in " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("leaf: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    auto n = static_cast<std::size_t>(shape_numel(shape));
    return leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    auto n = static_cast<std::size_t>(shape_numel(shape));
    return leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
}

TensorPtr scalar(double value) { return leaf({1}, {value}); }

TensorPtr randn(std::vector<std::int64_t> shape, double mean, double stddev,
                std::mt19937_64& rng, bool requires_grad) {
    auto n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<double> v(n);
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& x : v) x = dist(rng);
    return leaf(std::move(shape), std::move(v), requires_grad);
}

// ---------------------------------------------------------------------------
// GradSink
// ---------------------------------------------------------------------------

void GradSink::watch(const TensorPtr& t) {
    if (watches(t.get())) return;
    index_[t.get()] = slots_.size();
    slots_.push_back({t, std::vector<double>(t->values.size(), 0.0)});
}

void GradSink::add(const Tensor* t, const double* g, std::size_t n) {
    auto& buf = slots_[index_.at(t)].buffer;
    for (std::size_t i = 0; i < n; ++i) buf[i] += g[i];
}

void GradSink::add_rows(const Tensor* t, const std::vector<std::int64_t>& rows,
                        const double* g, std::int64_t row_width) {
    auto& buf = slots_[index_.at(t)].buffer;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double* dst = buf.data() + rows[r] * row_width;
        const double* src = g + static_cast<std::int64_t>(r) * row_width;
        for (std::int64_t j = 0; j < row_width; ++j) dst[j] += src[j];
    }
}

void GradSink::reset() {
    for (auto& s : slots_) std::fill(s.buffer.begin(), s.buffer.end(), 0.0);
}

void GradSink::flush_into_grads() {
    for (auto& s : slots_) {
        s.tensor->ensure_grad();
        auto& g = s.tensor->grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s.buffer[i];
    }
}

// ---------------------------------------------------------------------------
// accumulation
// ---------------------------------------------------------------------------

void accumulate(Tensor& t, const double* g, std::size_t n) {
    if (!t.requires_grad) return;
    if (tls_active_sink != nullptr && t.is_leaf() && tls_active_sink->watches(&t)) {
        tls_active_sink->add(&t, g, n);
        return;
    }
    t.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) t.grad[i] += g[i];
}

void accumulate_rows(Tensor& t, const std::vector<std::int64_t>& rows, const double* g,
                     std::int64_t row_width) {
    if (!t.requires_grad) return;
    if (tls_active_sink != nullptr && t.is_leaf() && tls_active_sink->watches(&t)) {
        tls_active_sink->add_rows(&t, rows, g, row_width);
        return;
    }
    t.ensure_grad();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double* dst = t.grad.data() + rows[r] * row_width;
        const double* src = g + static_cast<std::int64_t>(r) * row_width;
        for (std::int64_t j = 0; j < row_width; ++j) dst[j] += src[j];
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : previous_(tls_active_tape) { tls_active_tape = this; }

Tape::~Tape() { tls_active_tape = previous_; }

Tape* Tape::active() { return tls_active_tape; }

void Tape::backward(const TensorPtr& loss, GradSink* sink) {
    if (loss->size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss->shape));
    }
    if (!loss->requires_grad) return;  // nothing reachable

    // Mark everything the loss depends on; nodes outside this set are left
    // untouched even if they sit on the tape.
    std::unordered_set<const Tensor*> reachable;
    std::vector<const Tensor*> stack{loss.get()};
    reachable.insert(loss.get());
    while (!stack.empty()) {
        const Tensor* t = stack.back();
        stack.pop_back();
        for (const auto& p : t->parents) {
            if (p->requires_grad && reachable.insert(p.get()).second) stack.push_back(p.get());
        }
    }

    GradSink* saved = tls_active_sink;
    tls_active_sink = sink;
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Tensor* t = it->get();
        if (t->backprop && reachable.count(t) != 0) {
            if (t->grad.empty()) t->ensure_grad();
            t->backprop(*t);
        }
    }
    tls_active_sink = saved;
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a->dim(1) != b->dim(0)) {
        throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    }
    const std::int64_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    const double* A = a->values.data();
    const double* B = b->values.data();
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = out.data() + i * n;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = A[i * k + kk];
            const double* brow = B + kk * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return make_op({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const Tensor& self) {
        const double* g = self.grad.data();
        const double* A = a->values.data();
        const double* B = b->values.data();
        if (a->requires_grad) {
            std::vector<double> ga(static_cast<std::size_t>(m * k), 0.0);
            // ga = g . B^T
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const double* grow = g + i * n;
                    const double* brow = B + kk * n;
                    double s = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    ga[i * k + kk] = s;
                }
            }
            accumulate(*a, ga.data(), ga.size());
        }
        if (b->requires_grad) {
            std::vector<double> gb(static_cast<std::size_t>(k * n), 0.0);
            // gb = A^T . g
            for (std::int64_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const double av = A[i * k + kk];
                    double* brow = gb.data() + kk * n;
                    for (std::int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
            }
            accumulate(*b, gb.data(), gb.size());
        }
    });
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] + b->values[i];
    return make_op(a->shape, std::move(out), {a, b}, [a, b](const Tensor& self) {
        accumulate(*a, self.grad.data(), self.grad.size());
        accumulate(*b, self.grad.data(), self.grad.size());
    });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] - b->values[i];
    return make_op(a->shape, std::move(out), {a, b}, [a, b](const Tensor& self) {
        accumulate(*a, self.grad.data(), self.grad.size());
        if (b->requires_grad) {
            std::vector<double> gb(self.grad.size());
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -self.grad[i];
            accumulate(*b, gb.data(), gb.size());
        }
    });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] * b->values[i];
    return make_op(a->shape, std::move(out), {a, b}, [a, b](const Tensor& self) {
        if (a->requires_grad) {
            std::vector<double> ga(self.grad.size());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * b->values[i];
            accumulate(*a, ga.data(), ga.size());
        }
        if (b->requires_grad) {
            std::vector<double> gb(self.grad.size());
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = self.grad[i] * a->values[i];
            accumulate(*b, gb.data(), gb.size());
        }
    });
}

TensorPtr scale(const TensorPtr& a, double c) {
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] * c;
    return make_op(a->shape, std::move(out), {a}, [a, c](const Tensor& self) {
        std::vector<double> ga(self.grad.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * c;
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& v) {
    require_2d(x, "add_rowvec");
    if (v->ndim() != 1 || v->dim(0) != x->dim(1)) {
        throw DimensionError("add_rowvec: vector " + shape_str(v->shape) +
                             " does not match matrix " + shape_str(x->shape));
    }
    const std::int64_t rows = x->dim(0), cols = x->dim(1);
    std::vector<double> out(x->values.size());
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            out[i * cols + j] = x->values[i * cols + j] + v->values[j];
    return make_op(x->shape, std::move(out), {x, v}, [x, v, rows, cols](const Tensor& self) {
        accumulate(*x, self.grad.data(), self.grad.size());
        if (v->requires_grad) {
            std::vector<double> gv(static_cast<std::size_t>(cols), 0.0);
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < cols; ++j) gv[j] += self.grad[i * cols + j];
            accumulate(*v, gv.data(), gv.size());
        }
    });
}

TensorPtr tanh_op(const TensorPtr& a) {
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a->values[i]);
    return make_op(a->shape, std::move(out), {a}, [a](const Tensor& self) {
        std::vector<double> ga(self.grad.size());
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] = self.grad[i] * (1.0 - self.values[i] * self.values[i]);
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr sigmoid(const TensorPtr& a) {
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a->values[i];
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_op(a->shape, std::move(out), {a}, [a](const Tensor& self) {
        std::vector<double> ga(self.grad.size());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double y = self.values[i];
            ga[i] = self.grad[i] * y * (1.0 - y);
        }
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr relu(const TensorPtr& a) {
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] > 0 ? a->values[i] : 0.0;
    return make_op(a->shape, std::move(out), {a}, [a](const Tensor& self) {
        std::vector<double> ga(self.grad.size());
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] = a->values[i] > 0 ? self.grad[i] : 0.0;
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr log_floor(const TensorPtr& a, double floor) {
    std::vector<double> out(a->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(a->values[i], floor));
    return make_op(a->shape, std::move(out), {a}, [a, floor](const Tensor& self) {
        std::vector<double> ga(self.grad.size());
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] = a->values[i] > floor ? self.grad[i] / a->values[i] : 0.0;
        accumulate(*a, ga.data(), ga.size());
    });
}

namespace {

// softmax over contiguous or strided slices, shared by the 1-D/2-D cases.
// slice s has elements at base + s*slice_stride + t*elem_stride, t in [0, len).
void softmax_slices(const double* in, double* out, std::int64_t n_slices,
                    std::int64_t slice_stride, std::int64_t len, std::int64_t elem_stride) {
    for (std::int64_t s = 0; s < n_slices; ++s) {
        const double* src = in + s * slice_stride;
        double* dst = out + s * slice_stride;
        double mx = src[0];
        for (std::int64_t t = 1; t < len; ++t) mx = std::max(mx, src[t * elem_stride]);
        double sum = 0.0;
        for (std::int64_t t = 0; t < len; ++t) {
            const double e = std::exp(src[t * elem_stride] - mx);
            dst[t * elem_stride] = e;
            sum += e;
        }
        for (std::int64_t t = 0; t < len; ++t) dst[t * elem_stride] /= sum;
    }
}

void softmax_backward_slices(const double* y, const double* g, double* gx,
                             std::int64_t n_slices, std::int64_t slice_stride,
                             std::int64_t len, std::int64_t elem_stride) {
    for (std::int64_t s = 0; s < n_slices; ++s) {
        const double* ys = y + s * slice_stride;
        const double* gs = g + s * slice_stride;
        double* os = gx + s * slice_stride;
        double dot = 0.0;
        for (std::int64_t t = 0; t < len; ++t)
            dot += gs[t * elem_stride] * ys[t * elem_stride];
        for (std::int64_t t = 0; t < len; ++t) {
            const auto idx = t * elem_stride;
            os[idx] = ys[idx] * (gs[idx] - dot);
        }
    }
}

}  // namespace

TensorPtr softmax(const TensorPtr& a, std::int64_t axis) {
    if (a->ndim() != 1 && a->ndim() != 2) {
        throw DimensionError("softmax: expected 1-D or 2-D tensor, got " + shape_str(a->shape));
    }
    if (axis < 0 || axis >= a->ndim()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(a->shape));
    }
    std::int64_t n_slices, slice_stride, len, elem_stride;
    if (a->ndim() == 1) {
        n_slices = 1;
        slice_stride = 0;
        len = a->dim(0);
        elem_stride = 1;
    } else if (axis == 1) {  // within each row
        n_slices = a->dim(0);
        slice_stride = a->dim(1);
        len = a->dim(1);
        elem_stride = 1;
    } else {  // axis == 0: within each column
        n_slices = a->dim(1);
        slice_stride = 1;
        len = a->dim(0);
        elem_stride = a->dim(1);
    }
    std::vector<double> out(a->values.size());
    softmax_slices(a->values.data(), out.data(), n_slices, slice_stride, len, elem_stride);
    return make_op(a->shape, std::move(out), {a},
                   [a, n_slices, slice_stride, len, elem_stride](const Tensor& self) {
                       std::vector<double> ga(self.grad.size(), 0.0);
                       softmax_backward_slices(self.values.data(), self.grad.data(), ga.data(),
                                               n_slices, slice_stride, len, elem_stride);
                       accumulate(*a, ga.data(), ga.size());
                   });
}

namespace {

void squash_row(const double* s, double* v, std::int64_t d) {
    double n2 = 0.0;
    for (std::int64_t i = 0; i < d; ++i) n2 += s[i] * s[i];
    if (n2 == 0.0) {
        std::fill(v, v + d, 0.0);
        return;
    }
    const double n = std::sqrt(n2);
    const double a = n / (1.0 + n2);  // v = a * s, |v| = n^2/(1+n^2)
    for (std::int64_t i = 0; i < d; ++i) v[i] = a * s[i];
}

void squash_backward_row(const double* s, const double* gv, double* gs, std::int64_t d) {
    double n2 = 0.0;
    for (std::int64_t i = 0; i < d; ++i) n2 += s[i] * s[i];
    if (n2 == 0.0) return;  // gradient defined as 0 at the origin
    const double n = std::sqrt(n2);
    const double a = n / (1.0 + n2);
    const double ap = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
    double sg = 0.0;
    for (std::int64_t i = 0; i < d; ++i) sg += s[i] * gv[i];
    const double coef = ap / n * sg;
    for (std::int64_t i = 0; i < d; ++i) gs[i] += a * gv[i] + coef * s[i];
}

}  // namespace

TensorPtr squash(const TensorPtr& a) {
    if (a->ndim() != 1 && a->ndim() != 2) {
        throw DimensionError("squash: expected 1-D or 2-D tensor, got " + shape_str(a->shape));
    }
    const std::int64_t rows = a->ndim() == 1 ? 1 : a->dim(0);
    const std::int64_t d = a->ndim() == 1 ? a->dim(0) : a->dim(1);
    std::vector<double> out(a->values.size());
    for (std::int64_t r = 0; r < rows; ++r)
        squash_row(a->values.data() + r * d, out.data() + r * d, d);
    return make_op(a->shape, std::move(out), {a}, [a, rows, d](const Tensor& self) {
        std::vector<double> ga(self.grad.size(), 0.0);
        for (std::int64_t r = 0; r < rows; ++r)
            squash_backward_row(a->values.data() + r * d, self.grad.data() + r * d,
                                ga.data() + r * d, d);
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr l2norm(const TensorPtr& a) {
    double n2 = 0.0;
    for (double x : a->values) n2 += x * x;
    const double n = std::sqrt(n2);
    return make_op({1}, {n}, {a}, [a, n](const Tensor& self) {
        if (n == 0.0) return;
        std::vector<double> ga(a->values.size());
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] = self.grad[0] * a->values[i] / n;
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr sum_all(const TensorPtr& a) {
    double s = 0.0;
    for (double x : a->values) s += x;
    return make_op({1}, {s}, {a}, [a](const Tensor& self) {
        std::vector<double> ga(a->values.size(), self.grad[0]);
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr sum_squares(const TensorPtr& a) {
    double s = 0.0;
    for (double x : a->values) s += x * x;
    return make_op({1}, {s}, {a}, [a](const Tensor& self) {
        std::vector<double> ga(a->values.size());
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] = 2.0 * self.grad[0] * a->values[i];
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr sum_axis(const TensorPtr& a, std::int64_t axis) {
    require_2d(a, "sum_axis");
    if (axis != 0 && axis != 1) throw DimensionError("sum_axis: axis must be 0 or 1");
    const std::int64_t rows = a->dim(0), cols = a->dim(1);
    if (axis == 0) {
        std::vector<double> out(static_cast<std::size_t>(cols), 0.0);
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < cols; ++j) out[j] += a->values[i * cols + j];
        return make_op({cols}, std::move(out), {a}, [a, rows, cols](const Tensor& self) {
            std::vector<double> ga(a->values.size());
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < cols; ++j) ga[i * cols + j] = self.grad[j];
            accumulate(*a, ga.data(), ga.size());
        });
    }
    std::vector<double> out(static_cast<std::size_t>(rows), 0.0);
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j) out[i] += a->values[i * cols + j];
    return make_op({rows}, std::move(out), {a}, [a, rows, cols](const Tensor& self) {
        std::vector<double> ga(a->values.size());
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < cols; ++j) ga[i * cols + j] = self.grad[i];
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr max_axis(const TensorPtr& a, std::int64_t axis) {
    require_2d(a, "max_axis");
    if (axis != 0 && axis != 1) throw DimensionError("max_axis: axis must be 0 or 1");
    const std::int64_t rows = a->dim(0), cols = a->dim(1);
    const std::int64_t out_len = axis == 0 ? cols : rows;
    std::vector<double> out(static_cast<std::size_t>(out_len));
    std::vector<std::int64_t> arg(static_cast<std::size_t>(out_len));
    if (axis == 0) {
        for (std::int64_t j = 0; j < cols; ++j) {
            double best = a->values[j];
            std::int64_t bi = 0;
            for (std::int64_t i = 1; i < rows; ++i) {
                const double v = a->values[i * cols + j];
                if (v > best) {
                    best = v;
                    bi = i;
                }
            }
            out[j] = best;
            arg[j] = bi * cols + j;
        }
    } else {
        for (std::int64_t i = 0; i < rows; ++i) {
            double best = a->values[i * cols];
            std::int64_t bj = 0;
            for (std::int64_t j = 1; j < cols; ++j) {
                const double v = a->values[i * cols + j];
                if (v > best) {
                    best = v;
                    bj = j;
                }
            }
            out[i] = best;
            arg[i] = i * cols + bj;
        }
    }
    return make_op({out_len}, std::move(out), {a}, [a, arg](const Tensor& self) {
        std::vector<double> ga(a->values.size(), 0.0);
        for (std::size_t t = 0; t < arg.size(); ++t) ga[arg[t]] += self.grad[t];
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr concat(const TensorPtr& a, const TensorPtr& b, std::int64_t axis) {
    require_2d(a, "concat");
    require_2d(b, "concat");
    if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
    if (axis == 0 && a->dim(1) != b->dim(1)) {
        throw DimensionError("concat axis 0: column counts differ: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    }
    if (axis == 1 && a->dim(0) != b->dim(0)) {
        throw DimensionError("concat axis 1: row counts differ: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    }
    if (axis == 0) {
        std::vector<double> out;
        out.reserve(a->values.size() + b->values.size());
        out.insert(out.end(), a->values.begin(), a->values.end());
        out.insert(out.end(), b->values.begin(), b->values.end());
        return make_op({a->dim(0) + b->dim(0), a->dim(1)}, std::move(out), {a, b},
                       [a, b](const Tensor& self) {
                           accumulate(*a, self.grad.data(), a->values.size());
                           accumulate(*b, self.grad.data() + a->values.size(), b->values.size());
                       });
    }
    const std::int64_t rows = a->dim(0), ca = a->dim(1), cb = b->dim(1);
    std::vector<double> out(static_cast<std::size_t>(rows * (ca + cb)));
    for (std::int64_t i = 0; i < rows; ++i) {
        std::memcpy(out.data() + i * (ca + cb), a->values.data() + i * ca,
                    static_cast<std::size_t>(ca) * sizeof(double));
        std::memcpy(out.data() + i * (ca + cb) + ca, b->values.data() + i * cb,
                    static_cast<std::size_t>(cb) * sizeof(double));
    }
    return make_op({rows, ca + cb}, std::move(out), {a, b},
                   [a, b, rows, ca, cb](const Tensor& self) {
                       if (a->requires_grad) {
                           std::vector<double> ga(static_cast<std::size_t>(rows * ca));
                           for (std::int64_t i = 0; i < rows; ++i)
                               std::memcpy(ga.data() + i * ca, self.grad.data() + i * (ca + cb),
                                           static_cast<std::size_t>(ca) * sizeof(double));
                           accumulate(*a, ga.data(), ga.size());
                       }
                       if (b->requires_grad) {
                           std::vector<double> gb(static_cast<std::size_t>(rows * cb));
                           for (std::int64_t i = 0; i < rows; ++i)
                               std::memcpy(gb.data() + i * cb,
                                           self.grad.data() + i * (ca + cb) + ca,
                                           static_cast<std::size_t>(cb) * sizeof(double));
                           accumulate(*b, gb.data(), gb.size());
                       }
                   });
}

TensorPtr stack_rows(const std::vector<TensorPtr>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: no rows given");
    auto row_width = [](const TensorPtr& r) -> std::int64_t {
        if (r->ndim() == 1) return r->dim(0);
        if (r->ndim() == 2 && r->dim(0) == 1) return r->dim(1);
        throw DimensionError("stack_rows: row must be [d] or [1 x d], got " +
                             shape_str(r->shape));
    };
    const std::int64_t d = row_width(rows[0]);
    const std::int64_t n = static_cast<std::int64_t>(rows.size());
    std::vector<double> out(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        if (row_width(rows[i]) != d) {
            throw DimensionError("stack_rows: row widths differ: " + std::to_string(d) +
                                 " vs " + shape_str(rows[i]->shape));
        }
        std::memcpy(out.data() + i * d, rows[i]->values.data(),
                    static_cast<std::size_t>(d) * sizeof(double));
    }
    return make_op({n, d}, std::move(out), rows, [rows, d](const Tensor& self) {
        for (std::size_t i = 0; i < rows.size(); ++i)
            accumulate(*rows[i], self.grad.data() + static_cast<std::int64_t>(i) * d,
                       static_cast<std::size_t>(d));
    });
}

TensorPtr slice_cols(const TensorPtr& a, std::int64_t start, std::int64_t len) {
    require_2d(a, "slice_cols");
    const std::int64_t rows = a->dim(0), cols = a->dim(1);
    if (start < 0 || len <= 0 || start + len > cols) {
        throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") invalid for " +
                             shape_str(a->shape));
    }
    std::vector<double> out(static_cast<std::size_t>(rows * len));
    for (std::int64_t i = 0; i < rows; ++i)
        std::memcpy(out.data() + i * len, a->values.data() + i * cols + start,
                    static_cast<std::size_t>(len) * sizeof(double));
    return make_op({rows, len}, std::move(out), {a},
                   [a, start, len, rows, cols](const Tensor& self) {
                       std::vector<double> ga(a->values.size(), 0.0);
                       for (std::int64_t i = 0; i < rows; ++i)
                           std::memcpy(ga.data() + i * cols + start, self.grad.data() + i * len,
                                       static_cast<std::size_t>(len) * sizeof(double));
                       accumulate(*a, ga.data(), ga.size());
                   });
}

TensorPtr slice_rows(const TensorPtr& a, std::int64_t start, std::int64_t len) {
    require_2d(a, "slice_rows");
    const std::int64_t rows = a->dim(0), cols = a->dim(1);
    if (start < 0 || len <= 0 || start + len > rows) {
        throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") invalid for " +
                             shape_str(a->shape));
    }
    std::vector<double> out(a->values.begin() + start * cols,
                            a->values.begin() + (start + len) * cols);
    return make_op({len, cols}, std::move(out), {a}, [a, start, cols](const Tensor& self) {
        std::vector<std::int64_t> rows_idx(self.shape[0]);
        for (std::int64_t i = 0; i < self.shape[0]; ++i) rows_idx[i] = start + i;
        accumulate_rows(*a, rows_idx, self.grad.data(), cols);
    });
}

TensorPtr gather_rows(const TensorPtr& a, const std::vector<std::int64_t>& indices) {
    require_2d(a, "gather_rows");
    if (indices.empty()) throw ContractError("gather_rows: no indices given");
    const std::int64_t rows = a->dim(0), cols = a->dim(1);
    for (auto i : indices) {
        if (i < 0 || i >= rows) {
            throw LookupError("gather_rows: index " + std::to_string(i) +
                              " out of range for " + shape_str(a->shape));
        }
    }
    const std::int64_t k = static_cast<std::int64_t>(indices.size());
    std::vector<double> out(static_cast<std::size_t>(k * cols));
    for (std::int64_t r = 0; r < k; ++r)
        std::memcpy(out.data() + r * cols, a->values.data() + indices[r] * cols,
                    static_cast<std::size_t>(cols) * sizeof(double));
    return make_op({k, cols}, std::move(out), {a}, [a, indices, cols](const Tensor& self) {
        accumulate_rows(*a, indices, self.grad.data(), cols);
    });
}

TensorPtr reshape(const TensorPtr& a, std::vector<std::int64_t> new_shape) {
    if (shape_numel(new_shape) != a->size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a->shape) + " as " +
                             shape_str(new_shape));
    }
    std::vector<double> out = a->values;
    return make_op(std::move(new_shape), std::move(out), {a}, [a](const Tensor& self) {
        accumulate(*a, self.grad.data(), self.grad.size());
    });
}

TensorPtr pick(const TensorPtr& a, std::int64_t flat_index) {
    if (flat_index < 0 || flat_index >= a->size()) {
        throw LookupError("pick: index " + std::to_string(flat_index) + " out of range for " +
                          shape_str(a->shape));
    }
    return make_op({1}, {a->values[flat_index]}, {a}, [a, flat_index](const Tensor& self) {
        std::vector<double> ga(a->values.size(), 0.0);
        ga[flat_index] = self.grad[0];
        accumulate(*a, ga.data(), ga.size());
    });
}

TensorPtr dropout_apply(const TensorPtr& x, const TensorPtr& mask) {
    require_same_shape(x, mask, "dropout_apply");
    return mul(x, mask);
}

TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<std::int64_t>& ids) {
    require_2d(table, "embedding_lookup");
    const std::int64_t vocab = table->dim(0), d = table->dim(1);
    for (auto id : ids) {
        if (id < 0 || id >= vocab) {
            throw LookupError("embedding_lookup: token id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(vocab));
        }
    }
    const std::int64_t n = static_cast<std::int64_t>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i)
        std::memcpy(out.data() + i * d, table->values.data() + ids[i] * d,
                    static_cast<std::size_t>(d) * sizeof(double));
    return make_op({n, d}, std::move(out), {table}, [table, ids, d](const Tensor& self) {
        accumulate_rows(*table, ids, self.grad.data(), d);
    });
}

TensorPtr transform_stack(const std::vector<TensorPtr>& mats) {
    if (mats.empty()) throw ContractError("transform_stack: no matrices given");
    require_2d(mats[0], "transform_stack");
    const std::int64_t k = mats[0]->dim(0), d = mats[0]->dim(1);
    const std::int64_t m = static_cast<std::int64_t>(mats.size());
    for (const auto& mat : mats) {
        if (mat->ndim() != 2 || mat->dim(0) != k || mat->dim(1) != d) {
            throw DimensionError("transform_stack: matrix shapes differ: " +
                                 shape_str(mats[0]->shape) + " vs " + shape_str(mat->shape));
        }
    }
    std::vector<double> out(static_cast<std::size_t>(k * m * d));
    for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < m; ++j)
            std::memcpy(out.data() + (i * m + j) * d, mats[j]->values.data() + i * d,
                        static_cast<std::size_t>(d) * sizeof(double));
    return make_op({k, m, d}, std::move(out), mats, [mats, k, m, d](const Tensor& self) {
        for (std::int64_t j = 0; j < m; ++j) {
            if (!mats[j]->requires_grad) continue;
            std::vector<double> gj(static_cast<std::size_t>(k * d));
            for (std::int64_t i = 0; i < k; ++i)
                std::memcpy(gj.data() + i * d, self.grad.data() + (i * m + j) * d,
                            static_cast<std::size_t>(d) * sizeof(double));
            accumulate(*mats[j], gj.data(), gj.size());
        }
    });
}

TensorPtr weighted_message_sum(const TensorPtr& c, const TensorPtr& msgs) {
    require_2d(c, "weighted_message_sum");
    if (msgs->ndim() != 3) {
        throw DimensionError("weighted_message_sum: messages must be 3-D, got " +
                             shape_str(msgs->shape));
    }
    const std::int64_t k = msgs->dim(0), m = msgs->dim(1), d = msgs->dim(2);
    if (c->dim(0) != k || c->dim(1) != m) {
        throw DimensionError("weighted_message_sum: coupling " + shape_str(c->shape) +
                             " does not match messages " + shape_str(msgs->shape));
    }
    std::vector<double> out(static_cast<std::size_t>(m * d), 0.0);
    for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < m; ++j) {
            const double w = c->values[i * m + j];
            const double* src = msgs->values.data() + (i * m + j) * d;
            double* dst = out.data() + j * d;
            for (std::int64_t t = 0; t < d; ++t) dst[t] += w * src[t];
        }
    return make_op({m, d}, std::move(out), {c, msgs}, [c, msgs, k, m, d](const Tensor& self) {
        const double* g = self.grad.data();
        if (c->requires_grad) {
            std::vector<double> gc(static_cast<std::size_t>(k * m), 0.0);
            for (std::int64_t i = 0; i < k; ++i)
                for (std::int64_t j = 0; j < m; ++j) {
                    const double* msg = msgs->values.data() + (i * m + j) * d;
                    const double* gr = g + j * d;
                    double s = 0.0;
                    for (std::int64_t t = 0; t < d; ++t) s += gr[t] * msg[t];
                    gc[i * m + j] = s;
                }
            accumulate(*c, gc.data(), gc.size());
        }
        if (msgs->requires_grad) {
            std::vector<double> gm(msgs->values.size());
            for (std::int64_t i = 0; i < k; ++i)
                for (std::int64_t j = 0; j < m; ++j) {
                    const double w = c->values[i * m + j];
                    const double* gr = g + j * d;
                    double* dst = gm.data() + (i * m + j) * d;
                    for (std::int64_t t = 0; t < d; ++t) dst[t] = w * gr[t];
                }
            accumulate(*msgs, gm.data(), gm.size());
        }
    });
}

TensorPtr message_agreement(const TensorPtr& v, const TensorPtr& msgs) {
    require_2d(v, "message_agreement");
    if (msgs->ndim() != 3) {
        throw DimensionError("message_agreement: messages must be 3-D, got " +
                             shape_str(msgs->shape));
    }
    const std::int64_t k = msgs->dim(0), m = msgs->dim(1), d = msgs->dim(2);
    if (v->dim(0) != m || v->dim(1) != d) {
        throw DimensionError("message_agreement: capsules " + shape_str(v->shape) +
                             " do not match messages " + shape_str(msgs->shape));
    }
    std::vector<double> out(static_cast<std::size_t>(k * m), 0.0);
    for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < m; ++j) {
            const double* msg = msgs->values.data() + (i * m + j) * d;
            const double* vj = v->values.data() + j * d;
            double s = 0.0;
            for (std::int64_t t = 0; t < d; ++t) s += vj[t] * msg[t];
            out[i * m + j] = s;
        }
    return make_op({k, m}, std::move(out), {v, msgs}, [v, msgs, k, m, d](const Tensor& self) {
        const double* g = self.grad.data();
        if (v->requires_grad) {
            std::vector<double> gv(v->values.size(), 0.0);
            for (std::int64_t i = 0; i < k; ++i)
                for (std::int64_t j = 0; j < m; ++j) {
                    const double w = g[i * m + j];
                    const double* msg = msgs->values.data() + (i * m + j) * d;
                    double* dst = gv.data() + j * d;
                    for (std::int64_t t = 0; t < d; ++t) dst[t] += w * msg[t];
                }
            accumulate(*v, gv.data(), gv.size());
        }
        if (msgs->requires_grad) {
            std::vector<double> gm(msgs->values.size());
            for (std::int64_t i = 0; i < k; ++i)
                for (std::int64_t j = 0; j < m; ++j) {
                    const double w = g[i * m + j];
                    const double* vj = v->values.data() + j * d;
                    double* dst = gm.data() + (i * m + j) * d;
                    for (std::int64_t t = 0; t < d; ++t) dst[t] = w * vj[t];
                }
            accumulate(*msgs, gm.data(), gm.size());
        }
    });
}

}  // namespace drtext::ad
