#include "adaptids/error.hpp"
#include "adaptids/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adaptids::nn {

LossValue cross_entropy(const Logits& z, int target) {
    LossValue v;
    v.loss = -log_softmax_at(z, target);
    const auto p = softmax(z);
    v.dlogits = p;
    v.dlogits[static_cast<std::size_t>(target)] -= 1.0;
    return v;
}

LossValue distillation_kd(const Logits& student, const Logits& teacher, double temperature) {
    if (!(temperature > 0.0)) throw InvalidInput("distillation temperature must be positive");
    const auto ps = softmax(student, temperature);
    const auto pt = softmax(teacher, temperature);
    const Logits st{student[0] / temperature, student[1] / temperature};
    LossValue v;
    const double t2 = temperature * temperature;
    v.loss = -t2 * (pt[0] * log_softmax_at(st, 0) + pt[1] * log_softmax_at(st, 1));
    // d/dz_s of T^2 * CE(pt, softmax(z_s / T)) = T * (ps - pt)
    v.dlogits = {temperature * (ps[0] - pt[0]), temperature * (ps[1] - pt[1])};
    return v;
}

SampleObjective cross_entropy_objective(std::span<const int> targets) {
    return [targets](std::size_t sample, std::span<const Logits> logits, std::span<Logits> dlogits) {
        const double scale = 1.0 / static_cast<double>(logits.size());
        double loss = 0.0;
        for (std::size_t t = 0; t < logits.size(); ++t) {
            const auto v = cross_entropy(logits[t], targets[sample]);
            loss += v.loss * scale;
            dlogits[t] = {v.dlogits[0] * scale, v.dlogits[1] * scale};
        }
        return loss;
    };
}

TrainMask all_trainable(const NetworkModel& model) { return TrainMask(model.param_count(), 1); }

void sgd_step(std::span<double> params, std::span<const double> grads, const TrainMask& mask, OptimizerState& opt) {
    if (params.size() != grads.size() || params.size() != mask.size()) {
        throw ShapeMismatch("sgd_step: params " + std::to_string(params.size()) + ", grads " +
                            std::to_string(grads.size()) + ", mask " + std::to_string(mask.size()));
    }
    if (!(opt.learning_rate >= 0.0)) throw InvalidInput("learning rate must be non-negative");
    const double mu = opt.learning_rate;
    if (opt.momentum == 0.0) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (mask[i]) params[i] -= mu * grads[i];
        }
        return;
    }
    if (opt.velocity.size() != params.size()) opt.velocity.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!mask[i]) continue;
        opt.velocity[i] = opt.momentum * opt.velocity[i] + grads[i];
        params[i] -= mu * opt.velocity[i];
    }
}

void sgd_step(NetworkModel& model, std::span<const double> grads, const TrainMask& mask, OptimizerState& opt) {
    sgd_step(model.params(), grads, mask, opt);
}

TrainingSet make_training_set(const Architecture& arch, const ingest::LabeledDataset& dataset) {
    TrainingSet set;
    set.inputs.reserve(dataset.size());
    set.targets.reserve(dataset.size());
    for (const auto& s : dataset.samples) {
        set.inputs.push_back(model_input(arch, *s.matrix));
        set.targets.push_back(s.label == ingest::kBenignLabel ? 0 : 1);
    }
    return set;
}

double batch_gradient(const NetworkModel& model, const TrainingSet& data, std::span<const std::size_t> batch,
                      Mode mode, Rng* rng, const SampleObjective& objective, std::span<double> grad) {
    if (batch.empty()) throw InvalidInput("empty batch");
    std::fill(grad.begin(), grad.end(), 0.0);
    std::vector<Logits> dlogits;
    double total = 0.0;
    for (auto idx : batch) {
        auto fwd = forward(model, data.inputs[idx], mode, rng);
        dlogits.assign(fwd.logits.size(), Logits{});
        total += objective(idx, fwd.logits, dlogits);
        backward(model, data.inputs[idx], fwd.cache, dlogits, grad);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grad) g *= inv;
    return total * inv;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw InvalidInput("batch size must be positive");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Fisher-Yates with explicit draws keeps the order identical across
    // standard library implementations.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < n; s += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
    }
    return batches;
}

TrainReport train(NetworkModel& model, const TrainingSet& data, const TrainMask& mask, const TrainOptions& options,
                  OptimizerState& opt, const SampleObjective& objective, const ParamRegularizer& regularizer) {
    if (data.size() == 0) throw InvalidInput("cannot train on an empty dataset");
    if (mask.size() != model.param_count()) throw ShapeMismatch("train mask length differs from parameter count");
    Rng rng(options.seed);
    TrainReport report;
    GradientSet grad(model.param_count());
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        double epoch_loss = 0.0;
        const auto batches = epoch_batches(data.size(), options.batch_size, rng);
        for (const auto& batch : batches) {
            double loss = batch_gradient(model, data, batch, Mode::train, &rng, objective, grad);
            if (regularizer) loss += regularizer(model.params(), grad);
            sgd_step(model, grad, mask, opt);
            epoch_loss += loss;
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(batches.size()));
    }
    return report;
}

Logits predict_proba(const NetworkModel& model, const Tensor& input) {
    return forward(model, input, Mode::eval).probs.back();
}

int predict(const NetworkModel& model, const Tensor& input) {
    const auto p = predict_proba(model, input);
    return p[1] > p[0] ? 1 : 0;
}

Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) throw ShapeMismatch("truth and prediction counts differ");
    if (truth.empty()) throw InvalidInput("cannot evaluate on an empty dataset");
    Metrics m;
    m.total = truth.size();
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    }
    const auto correct = m.confusion[0][0] + m.confusion[1][1];
    m.detection_rate = static_cast<double>(correct) / static_cast<double>(m.total);
    const auto benign = m.confusion[0][0] + m.confusion[0][1];
    const auto attack = m.confusion[1][0] + m.confusion[1][1];
    m.recall_benign = benign ? static_cast<double>(m.confusion[0][0]) / static_cast<double>(benign) : 0.0;
    m.recall_attack = attack ? static_cast<double>(m.confusion[1][1]) / static_cast<double>(attack) : 0.0;
    return m;
}

Metrics evaluate(const NetworkModel& model, const TrainingSet& data) {
    std::vector<int> predicted;
    predicted.reserve(data.size());
    for (const auto& x : data.inputs) predicted.push_back(predict(model, x));
    return metrics_from_predictions(data.targets, predicted);
}

Metrics evaluate(const NetworkModel& model, const ingest::LabeledDataset& dataset) {
    if (dataset.empty()) throw InvalidInput("cannot evaluate on an empty dataset");
    return evaluate(model, make_training_set(model.architecture(), dataset));
}

}  // namespace adaptids::nn
