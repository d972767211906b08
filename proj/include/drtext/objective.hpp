#pragma once

#include <cstdint>
#include <vector>

#include "drtext/layers.hpp"
#include "drtext/tensor.hpp"

namespace drtext {

/// -(1/B) sum_i log p_i(target_i), log clamped below at 1e-12. Each
/// probability row must be [C] or [1 x C]; targets index into [0, C).
ad::TensorPtr nll_mean(const std::vector<ad::TensorPtr>& probability_rows,
                       const std::vector<std::int64_t>& targets);

/// lambda * sum over regularized params of ||theta||_2^2. Zero tensor when
/// nothing qualifies.
ad::TensorPtr l2_penalty(const std::vector<NamedParam>& params, double lambda);

/// Full training objective: mean cross entropy plus the L2 term over
/// trainable non-embedding parameters.
ad::TensorPtr loss(const std::vector<ad::TensorPtr>& probability_rows,
                   const std::vector<std::int64_t>& targets,
                   const std::vector<NamedParam>& params, double lambda);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1{0.9};
    double beta2{0.999};
    double epsilon{1e-8};
};

/// Canonical Adam with bias correction; moments are zero-initialized and the
/// step counter starts at 0. Bound to one set of parameters, single writer.
class Adam {
  public:
    explicit Adam(std::vector<ad::TensorPtr> params, AdamConfig config = {});

    /// Applies one update in place from the parameters' grads; throws
    /// ContractError when a parameter has no populated grad buffer.
    void step(double learning_rate);

    std::int64_t step_count() const { return step_; }

  private:
    std::vector<ad::TensorPtr> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamConfig config_;
    std::int64_t step_{0};
};

// ---------------------------------------------------------------------------
// learning-rate schedule
// ---------------------------------------------------------------------------

/// rate(step) = initial * decay^(step / steps) with a continuous exponent.
struct LrSchedule {
    double initial{1e-4};
    double decay{0.9};
    std::int64_t steps{1000};

    double at(std::int64_t step) const;
    void validate() const;
};

/// Global-norm gradient clipping; returns the pre-clip norm. No-op when the
/// norm is under the threshold.
double clip_global_norm(const std::vector<ad::TensorPtr>& params, double max_norm);

}  // namespace drtext
