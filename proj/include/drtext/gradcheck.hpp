#pragma once

#include <functional>
#include <vector>

#include "drtext/tensor.hpp"

namespace drtext::ad {

struct FiniteDiffOptions {
    double step{1e-5};
    // Tensors larger than this get a seeded random sample of coordinates so
    // full-model checks stay fast.
    std::int64_t max_coords_per_tensor{64};
    std::uint64_t sample_seed{0x5eed};
    double denom_floor{1e-8};
    // Central differences of an O(1) loss carry ~1e-11 of double roundoff;
    // when |g_ad - g_fd| is under this floor the two sides agree to within
    // measurement noise and the coordinate counts as exact.
    double noise_floor{1e-9};
};

/// Central-difference check of the reverse-mode gradients of a scalar
/// function. `build_loss` must construct the loss graph from the given
/// parameters and be deterministic (dropout disabled, fixed inputs); it is
/// evaluated twice up front and the check is refused if the values differ.
/// Returns max over checked coordinates of
///     |g_ad - g_fd| / max(denom_floor, |g_ad| + |g_fd|),
/// and 0 when there is nothing to check.
double finite_diff_check(const std::function<TensorPtr()>& build_loss,
                         const std::vector<TensorPtr>& params,
                         const FiniteDiffOptions& options = {});

}  // namespace drtext::ad
