#pragma once

#include "q4dg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace q4dg {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay: decay is applied to the parameter
// directly, never folded into the gradient moments.
class AdamW {
public:
    explicit AdamW(std::vector<Tensor> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), 0.0);
            v_[i].assign(params_[i].numel(), 0.0);
        }
    }

    void step() {
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].mutable_value();
            const auto& g = params_[i].grad();
            if (g.size() != p.size()) throw std::logic_error("adamw: grad/param shape mismatch");
            for (std::size_t k = 0; k < p.size(); ++k) {
                m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g[k];
                v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g[k] * g[k];
                const double mhat = m_[i][k] / bc1;
                const double vhat = v_[i][k] / bc2;
                p[k] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[k]);
            }
        }
    }

    void zero_grads() {
        for (auto& p : params_) p.zero_grad();
    }

    std::uint64_t step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t step_count_ = 0;
};

// Central-difference gradient verification. loss_fn must be deterministic:
// it is evaluated repeatedly at perturbed parameter values and once more at
// the base point to detect nondeterminism.
//
// Returns max over all parameter entries of
//   |analytic - central_difference| / (|central_difference| + 1e-8).
inline double finite_diff_check(const std::function<Tensor()>& loss_fn,
                                const std::vector<Tensor>& params, double eps = 1e-5,
                                std::size_t max_entries_per_tensor =
                                    std::numeric_limits<std::size_t>::max()) {
    Tensor base = loss_fn();
    const double base_val = base.item();
    {
        Tensor again = loss_fn();
        if (again.item() != base_val)
            throw std::runtime_error("finite_diff_check: loss_fn is non-deterministic");
    }
    for (auto p : params) p.zero_grad();
    backward(base);
    // Rounding-noise bound on a central difference of this loss: evaluating
    // loss_fn carries relative error of a few machine epsilons, so the
    // difference quotient cannot resolve gradient entries much smaller than
    // |loss| * eps_machine / (2 * eps). Entries where even a perfect analytic
    // gradient could not meet a meaningful tolerance are excluded from the
    // maximum -- but only when the analytic value also agrees with the
    // (noise-limited) difference to within the noise bound, so a genuinely
    // wrong gradient on a small entry still fails.
    const double noise_fd = 10.0 * std::abs(base_val) * 2.2e-16 / (2.0 * eps);
    double worst = 0.0;
    for (auto p : params) {
        const std::vector<double> analytic = p.grad();
        auto& vals = p.mutable_value();
        // deterministic stride when capped, so every tensor region is probed
        const std::size_t stride =
            std::max<std::size_t>(1, (vals.size() + max_entries_per_tensor - 1) /
                                         max_entries_per_tensor);
        for (std::size_t k = 0; k < vals.size(); k += stride) {
            const double orig = vals[k];
            vals[k] = orig + eps;
            const double up = loss_fn().item();
            vals[k] = orig - eps;
            const double dn = loss_fn().item();
            vals[k] = orig;
            const double fd = (up - dn) / (2.0 * eps);
            const double rel = std::abs(analytic[k] - fd) / (std::abs(fd) + 1e-8);
            const bool unresolvable = noise_fd > 1e-5 * (std::abs(fd) + 1e-8) &&
                                      std::abs(analytic[k] - fd) <= 10.0 * noise_fd;
            if (!unresolvable) worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace q4dg
