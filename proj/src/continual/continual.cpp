#include "adaptids/continual.hpp"
#include "adaptids/error.hpp"

#include <cmath>
#include <numeric>

namespace adaptids::continual {

using nn::NetworkModel;
using nn::TrainingSet;

void ContinualConfig::validate() const {
    if (k < 0) throw InvalidInput("k must be non-negative");
    if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidInput("tau must lie in [0, 1]");
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0) throw InvalidInput("regularizer weights must be non-negative");
    if (batch_size == 0) throw InvalidInput("batch size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
}

nn::TrainMask ExpandedNetwork::added_mask() const { return added; }

nn::TrainMask ExpandedNetwork::dense_mask() const {
    nn::TrainMask m(connected);
    std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(model.base_param_count()), 0);
    return m;
}

std::vector<double> ExpandedNetwork::prv_view() const {
    std::vector<double> v(prv_index.size());
    const auto p = model.params();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = p[prv_index[i]];
    return v;
}

ExpandedNetwork expand(const NetworkModel& model, std::ptrdiff_t k, std::uint64_t seed) {
    if (k < 0) throw InvalidInput("k must be non-negative");
    const auto& old_layers = model.dense_layers();
    if (old_layers.size() < 2) throw InvalidInput("expansion needs at least one dense hidden layer");

    auto arch = model.architecture();
    for (std::size_t l = 0; l + 1 < arch.dense_widths.size(); ++l) arch.dense_widths[l] += static_cast<std::size_t>(k);

    ExpandedNetwork net{model, NetworkModel(arch), static_cast<std::size_t>(k), {}, {}, {}};
    auto dst = net.model.params();
    const auto src = model.params();
    net.prv_index.resize(src.size());
    net.connected.assign(dst.size(), 1);
    net.added.assign(dst.size(), 0);

    for (std::size_t i = 0; i < model.base_param_count(); ++i) {
        net.prv_index[i] = i;
        dst[i] = src[i];
    }

    nn::Rng rng(seed);
    const auto& new_layers = net.model.dense_layers();
    for (std::size_t l = 0; l < new_layers.size(); ++l) {
        const auto& o = old_layers[l];
        const auto& n = new_layers[l];
        const bool output = l + 1 == new_layers.size();
        const double limit = std::sqrt(6.0 / static_cast<double>(n.in + n.out));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (std::size_t in = 0; in < n.in; ++in) {
            for (std::size_t out = 0; out < n.out; ++out) {
                const auto idx = n.weight_index(out, in);
                const bool old_in = in < o.in, old_out = out < o.out;
                if (old_in && old_out) {
                    const auto src_idx = o.weight_index(out, in);
                    net.prv_index[src_idx] = idx;
                    dst[idx] = src[src_idx];
                } else if (old_out && !output) {
                    net.connected[idx] = 0;  // old units never read new ones
                    dst[idx] = 0.0;
                } else {
                    net.added[idx] = 1;
                    // New units feed the fixed outputs through zero weights so
                    // the expanded function starts equal to the original.
                    dst[idx] = old_out ? 0.0 : u(rng);
                }
            }
        }
        for (std::size_t out = 0; out < n.out; ++out) {
            if (out < o.out) {
                net.prv_index[o.bias_index(out)] = n.bias_index(out);
                dst[n.bias_index(out)] = src[o.bias_index(out)];
            } else {
                net.added[n.bias_index(out)] = 1;
            }
        }
    }
    return net;
}

namespace {

nn::TrainOptions train_options(const ContinualConfig& c) { return {c.epochs, c.batch_size, c.seed}; }

void check_fisher(const ExpandedNetwork& net, const FisherDiagonal& f) {
    if (f.size() != net.prv.param_count()) {
        throw InvalidInput("Fisher diagonal has " + std::to_string(f.size()) + " entries, pre-expansion model has " +
                           std::to_string(net.prv.param_count()) + " parameters");
    }
}

}  // namespace

nn::TrainReport train_added_only(ExpandedNetwork& net, const TrainingSet& data, const ContinualConfig& config) {
    if (data.size() == 0) throw InvalidInput("continual training set is empty");
    nn::OptimizerState opt;
    opt.learning_rate = config.learning_rate;
    return nn::train(net.model, data, net.added_mask(), train_options(config), opt,
                     nn::cross_entropy_objective(data.targets));
}

double eq2_regularizer(const ExpandedNetwork& net, const FisherDiagonal& fisher, const ContinualConfig& c,
                       std::span<const double> params, std::span<double> grad) {
    check_fisher(net, fisher);
    const auto prv = net.prv.params();
    double value = 0.0;

    if (c.lambda1 != 0.0) {
        double drift = 0.0;
        for (std::size_t i = 0; i < fisher.size(); ++i) {
            const auto idx = net.prv_index[i];
            const double d = params[idx] - prv[i];
            if (c.strict_paper_penalty) {
                drift += fisher[i] * d;
                grad[idx] += c.lambda1 * fisher[i];
            } else {
                drift += fisher[i] * d * d;
                grad[idx] += 2.0 * c.lambda1 * fisher[i] * d;
            }
        }
        value += c.lambda1 * drift;
    }

    if (c.lambda2 != 0.0) {
        // Two groups: the whole expanded vector and its pre-expansion slice.
        double all = 0.0, old = 0.0;
        for (double v : params) all += v * v;
        for (auto idx : net.prv_index) old += params[idx] * params[idx];
        all = std::sqrt(all);
        old = std::sqrt(old);
        value += c.lambda2 * (all + old);
        if (all > 0.0) {
            for (std::size_t i = 0; i < params.size(); ++i) grad[i] += c.lambda2 * params[i] / all;
        }
        if (old > 0.0) {
            for (auto idx : net.prv_index) grad[idx] += c.lambda2 * params[idx] / old;
        }
    }

    if (c.lambda3 != 0.0) {
        double l1 = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!net.added[i]) continue;
            l1 += std::abs(params[i]);
            grad[i] += c.lambda3 * static_cast<double>((params[i] > 0.0) - (params[i] < 0.0));
        }
        value += c.lambda3 * l1;
    }
    return value;
}

double eq2_loss(const ExpandedNetwork& net, const TrainingSet& data, std::span<const std::size_t> batch,
                const FisherDiagonal& fisher, const ContinualConfig& config, std::span<double> grad) {
    double loss = nn::batch_gradient(net.model, data, batch, nn::Mode::eval, nullptr,
                                     nn::cross_entropy_objective(data.targets), grad);
    return loss + eq2_regularizer(net, fisher, config, net.model.params(), grad);
}

nn::TrainReport train_full_regularized(ExpandedNetwork& net, const TrainingSet& data, const FisherDiagonal& fisher,
                                       const ContinualConfig& config) {
    if (data.size() == 0) throw InvalidInput("continual training set is empty");
    check_fisher(net, fisher);
    nn::OptimizerState opt;
    opt.learning_rate = config.learning_rate;
    auto reg = [&](std::span<const double> params, std::span<double> grad) {
        return eq2_regularizer(net, fisher, config, params, grad);
    };
    return nn::train(net.model, data, net.dense_mask(), train_options(config), opt,
                     nn::cross_entropy_objective(data.targets), reg);
}

FisherDiagonal compute_fisher_diagonal(const NetworkModel& model, const TrainingSet& data, bool strict_paper) {
    if (data.size() == 0) throw InvalidInput("Fisher estimate needs a non-empty dataset");
    FisherDiagonal f(model.param_count(), 0.0);
    std::vector<double> g(model.param_count());
    std::vector<nn::Logits> dlogits;
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto out = nn::forward(model, data.inputs[s], nn::Mode::eval);
        const double steps = static_cast<double>(out.logits.size());
        dlogits.resize(out.logits.size());
        for (std::size_t t = 0; t < out.logits.size(); ++t) {
            // d log p(y|x) / d z = onehot - softmax
            const auto ce = nn::cross_entropy(out.logits[t], data.targets[s]);
            dlogits[t] = {-ce.dlogits[0] / steps, -ce.dlogits[1] / steps};
        }
        std::fill(g.begin(), g.end(), 0.0);
        nn::backward(model, data.inputs[s], out.cache, dlogits, g);
        if (strict_paper) {
            for (std::size_t i = 0; i < f.size(); ++i) f[i] += g[i];
        } else {
            for (std::size_t i = 0; i < f.size(); ++i) f[i] += g[i] * g[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    for (auto& v : f) v *= inv;
    return f;
}

ContinualResult continual_learn(const NetworkModel& model, const TrainingSet& train, const TrainingSet& val,
                                const FisherDiagonal& fisher_prv, const ContinualConfig& config) {
    config.validate();
    if (train.size() == 0 || val.size() == 0) throw InvalidInput("continual learning needs non-empty train and validation sets");
    ContinualResult r{expand(model, config.k, config.seed), {}};
    r.report.added_loss = train_added_only(r.net, train, config).epoch_loss;
    r.report.val_after_added = nn::evaluate(r.net.model, val).detection_rate;
    r.report.val_final = r.report.val_after_added;
    if (r.report.val_after_added < config.tau) {
        r.report.fallback = true;
        r.report.full_loss = train_full_regularized(r.net, train, fisher_prv, config).epoch_loss;
        r.report.val_final = nn::evaluate(r.net.model, val).detection_rate;
    }
    return r;
}

}  // namespace adaptids::continual
