#pragma once

// Test-only reference computations. Nothing here calls the engine's backward
// pass; gradients are estimated from loss values alone.

#include "adaptids/continual.hpp"
#include "adaptids/federated.hpp"
#include "adaptids/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace adaptids::testing {

/// Central finite differences of loss(params) at every parameter.
inline std::vector<double> finite_difference_gradient(nn::NetworkModel model,
                                                      const std::function<double(const nn::NetworkModel&)>& loss,
                                                      double step = 1e-5) {
    std::vector<double> g(model.param_count());
    auto p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + step;
        const double up = loss(model);
        p[i] = saved - step;
        const double down = loss(model);
        p[i] = saved;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// max_i |a_i - fd_i| / max(1, |fd_i|)
inline double max_relative_error(std::span<const double> analytic, std::span<const double> fd) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, std::abs(analytic[i] - fd[i]) / std::max(1.0, std::abs(fd[i])));
    }
    return worst;
}

inline nn::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = 0.0,
                                double hi = 1.0) {
    nn::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

/// Sum over samples of the mean-over-steps cross-entropy, eval mode.
inline double reference_cross_entropy(const nn::NetworkModel& model, std::span<const nn::Tensor> inputs,
                                      std::span<const int> targets) {
    double total = 0.0;
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        const auto out = nn::forward(model, inputs[s], nn::Mode::eval);
        double seq = 0.0;
        for (const auto& z : out.logits) {
            const double m = std::max(z[0], z[1]);
            const double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
            seq += lse - z[static_cast<std::size_t>(targets[s])];
        }
        total += seq / static_cast<double>(out.logits.size());
    }
    return total / static_cast<double>(inputs.size());
}

// Eq. 2 regularizer from first principles: walks both models layer by layer
// instead of using the expansion's bookkeeping vectors.
inline double reference_eq2_penalty(const nn::NetworkModel& prv, const nn::NetworkModel& exp,
                                    std::span<const double> fisher, const continual::ContinualConfig& c) {
    const auto p = prv.params();
    const auto e = exp.params();
    double drift = 0.0, old_sq = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < prv.base_param_count(); ++i) {
        drift += fisher[i] * (e[i] - p[i]) * (e[i] - p[i]);
        old_sq += e[i] * e[i];
    }
    for (std::size_t l = 0; l < prv.dense_layers().size(); ++l) {
        const auto& a = prv.dense_layers()[l];
        const auto& b = exp.dense_layers()[l];
        const bool output = l + 1 == prv.dense_layers().size();
        for (std::size_t o = 0; o < b.out; ++o) {
            for (std::size_t i = 0; i < b.in; ++i) {
                const double w = e[b.weight_index(o, i)];
                if (o < a.out && i < a.in) {
                    const auto pi = a.weight_index(o, i);
                    drift += fisher[pi] * (w - p[pi]) * (w - p[pi]);
                    old_sq += w * w;
                } else if (o >= a.out || output) {
                    l1 += std::abs(w);
                }
            }
            const double bias = e[b.bias_index(o)];
            if (o < a.out) {
                const auto pi = a.bias_index(o);
                drift += fisher[pi] * (bias - p[pi]) * (bias - p[pi]);
                old_sq += bias * bias;
            } else {
                l1 += std::abs(bias);
            }
        }
    }
    double all_sq = 0.0;
    for (double v : e) all_sq += v * v;
    return c.lambda1 * drift + c.lambda2 * (std::sqrt(all_sq) + std::sqrt(old_sq)) + c.lambda3 * l1;
}

// Eq. 4 written out directly from logits.
inline double reference_distillation(const nn::NetworkModel& m, const federated::DistillationBatch& b,
                                     std::span<const double> fisher, std::span<const double> w_init, double lambda,
                                     double T) {
    double total = 0.0;
    for (std::size_t s = 0; s < b.size(); ++s) {
        const auto out = nn::forward(m, b.inputs[s], nn::Mode::eval);
        double sample = 0.0;
        for (std::size_t t = 0; t < out.logits.size(); ++t) {
            const auto& z = out.logits[t];
            const auto& zt = b.teacher_logits[s][t];
            const double lse = std::log(std::exp(z[0]) + std::exp(z[1]));
            sample += lse - z[static_cast<std::size_t>(b.labels[s])];
            const double ls = std::log(std::exp(z[0] / T) + std::exp(z[1] / T));
            const double lt = std::log(std::exp(zt[0] / T) + std::exp(zt[1] / T));
            for (std::size_t c = 0; c < 2; ++c) {
                const double pt = std::exp(zt[c] / T - lt);
                sample += -T * T * pt * (z[c] / T - ls);
            }
        }
        total += sample / static_cast<double>(out.logits.size());
    }
    double drift = 0.0;
    const auto p = m.params();
    for (std::size_t i = 0; i < p.size(); ++i) drift += fisher[i] * (p[i] - w_init[i]) * (p[i] - w_init[i]);
    return total / static_cast<double>(b.size()) + lambda * drift;
}

}  // namespace adaptids::testing
