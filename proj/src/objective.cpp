#include "drtext/objective.hpp"

#include <cmath>

namespace drtext {

using ad::TensorPtr;

namespace {
constexpr double kLogFloor = 1e-12;
}

TensorPtr nll_mean(const std::vector<TensorPtr>& probability_rows,
                   const std::vector<std::int64_t>& targets) {
    if (probability_rows.empty()) throw ContractError("nll_mean: empty batch");
    if (probability_rows.size() != targets.size()) {
        throw ContractError("nll_mean: " + std::to_string(probability_rows.size()) +
                            " probability rows vs " + std::to_string(targets.size()) +
                            " targets");
    }
    TensorPtr total;
    for (std::size_t i = 0; i < probability_rows.size(); ++i) {
        const auto& row = probability_rows[i];
        const std::int64_t classes = row->size();
        if (targets[i] < 0 || targets[i] >= classes) {
            throw ContractError("nll_mean: label " + std::to_string(targets[i]) +
                                " outside [0, " + std::to_string(classes) + ")");
        }
        auto term = ad::log_floor(ad::pick(row, targets[i]), kLogFloor);
        total = total ? ad::add(total, term) : term;
    }
    return ad::scale(total, -1.0 / static_cast<double>(probability_rows.size()));
}

TensorPtr l2_penalty(const std::vector<NamedParam>& params, double lambda) {
    if (lambda < 0) throw ConfigError("regularization rate must be >= 0");
    TensorPtr total;
    if (lambda > 0) {
        for (const auto& p : params) {
            if (!p.regularize || !p.tensor->requires_grad) continue;
            auto sq = ad::sum_squares(p.tensor);
            total = total ? ad::add(total, sq) : sq;
        }
    }
    if (!total) return ad::scalar(0.0);
    return ad::scale(total, lambda);
}

TensorPtr loss(const std::vector<TensorPtr>& probability_rows,
               const std::vector<std::int64_t>& targets,
               const std::vector<NamedParam>& params, double lambda) {
    return ad::add(nll_mean(probability_rows, targets), l2_penalty(params, lambda));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<TensorPtr> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->values.size(), 0.0);
        v_.emplace_back(p->values.size(), 0.0);
    }
}

void Adam::step(double learning_rate) {
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = *params_[pi];
        if (p.grad.size() != p.values.size()) {
            throw ContractError("adam_step: parameter " + std::to_string(pi) +
                                " has no populated gradient");
        }
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const double g = p.grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.values[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

void LrSchedule::validate() const {
    if (!(initial > 0)) throw ConfigError("initial learning rate must be > 0");
    if (!(decay > 0) || decay > 1) throw ConfigError("learning rate decay must be in (0, 1]");
    if (steps < 1) throw ConfigError("learning rate decay steps must be >= 1");
}

double LrSchedule::at(std::int64_t step) const {
    return initial * std::pow(decay, static_cast<double>(step) / static_cast<double>(steps));
}

double clip_global_norm(const std::vector<TensorPtr>& params, double max_norm) {
    double norm_sq = 0.0;
    for (const auto& p : params)
        for (double g : p->grad) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    if (norm > max_norm && norm > 0) {
        const double s = max_norm / norm;
        for (const auto& p : params)
            for (double& g : p->grad) g *= s;
    }
    return norm;
}

}  // namespace drtext
