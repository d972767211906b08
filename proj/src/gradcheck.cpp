#include "drtext/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace drtext::ad {

namespace {

// Plain value of the loss, no recording.
double eval_value(const std::function<TensorPtr()>& build_loss) {
    TensorPtr t = build_loss();
    return t->item();
}

std::vector<std::int64_t> pick_coords(std::int64_t n, std::int64_t max_coords,
                                      std::uint64_t seed) {
    std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), std::int64_t{0});
    if (n <= max_coords) return coords;
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: first max_coords entries are a uniform sample.
    for (std::int64_t i = 0; i < max_coords; ++i) {
        std::uniform_int_distribution<std::int64_t> pickd(i, n - 1);
        std::swap(coords[i], coords[pickd(rng)]);
    }
    coords.resize(static_cast<std::size_t>(max_coords));
    std::sort(coords.begin(), coords.end());
    return coords;
}

}  // namespace

double finite_diff_check(const std::function<TensorPtr()>& build_loss,
                         const std::vector<TensorPtr>& params,
                         const FiniteDiffOptions& options) {
    const double v1 = eval_value(build_loss);
    const double v2 = eval_value(build_loss);
    if (!(v1 == v2)) {
        throw ContractError("finite_diff_check: function is not deterministic (" +
                            std::to_string(v1) + " vs " + std::to_string(v2) + ")");
    }

    // Reverse-mode gradients, one tape for the whole graph.
    for (const auto& p : params) p->zero_grad();
    {
        Tape tape;
        TensorPtr loss = build_loss();
        tape.backward(loss);
    }

    double worst = 0.0;
    std::uint64_t tensor_counter = 0;
    for (const auto& p : params) {
        ++tensor_counter;
        if (!p->requires_grad) continue;
        p->ensure_grad();
        const auto coords = pick_coords(p->size(), options.max_coords_per_tensor,
                                        options.sample_seed + tensor_counter);
        for (auto idx : coords) {
            const double saved = p->values[idx];
            p->values[idx] = saved + options.step;
            const double fplus = eval_value(build_loss);
            p->values[idx] = saved - options.step;
            const double fminus = eval_value(build_loss);
            p->values[idx] = saved;
            const double g_fd = (fplus - fminus) / (2.0 * options.step);
            const double g_ad = p->grad[idx];
            const double diff = std::abs(g_ad - g_fd);
            if (diff <= options.noise_floor) continue;
            const double rel =
                diff / std::max(options.denom_floor, std::abs(g_ad) + std::abs(g_fd));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace drtext::ad
