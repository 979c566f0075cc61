#pragma once

// Expansion-based continual learning: grow every dense hidden layer by k
// units, train only the new weights, and fall back to Fisher-regularized
// training of the whole dense part when validation accuracy stays below tau.

#include "adaptids/nn.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace adaptids::continual {

/// One non-negative importance value per model parameter.
using FisherDiagonal = std::vector<double>;

struct ContinualConfig {
    std::ptrdiff_t k = 10;
    double tau = 0.9;
    double lambda1 = 1.0;
    double lambda2 = 1e-3;
    double lambda3 = 1e-3;
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    double learning_rate = 0.01;
    std::uint64_t seed = 1;
    // Literal forms as printed: linear Fisher drift in the penalty and
    // unsquared gradients in the Fisher estimate.
    bool strict_paper_penalty = false;
    bool strict_paper_fisher = false;

    void validate() const;
};

/// The pre-expansion model together with its expanded copy. New units are
/// appended after the old ones in every dense hidden layer.
struct ExpandedNetwork {
    nn::NetworkModel prv;
    nn::NetworkModel model;
    std::size_t k = 0;
    /// prv_index[i] is where prv parameter i lives in model.
    std::vector<std::size_t> prv_index;
    /// 0 for weights the connectivity rule leaves out (old unit <- new unit).
    std::vector<std::uint8_t> connected;
    /// W^Add membership: connected parameters that did not exist in prv.
    std::vector<std::uint8_t> added;

    nn::TrainMask added_mask() const;
    /// Every connected dense parameter; the base stays frozen.
    nn::TrainMask dense_mask() const;
    /// Parameters at prv_index gathered into prv order.
    std::vector<double> prv_view() const;
};

ExpandedNetwork expand(const nn::NetworkModel& model, std::ptrdiff_t k, std::uint64_t seed = 1);

/// Eq. 1: cross-entropy on the new weights only.
nn::TrainReport train_added_only(ExpandedNetwork& net, const nn::TrainingSet& data,
                                 const ContinualConfig& config);

/// Eq. 2 regularizer over the expanded parameters. Adds its gradient to grad.
double eq2_regularizer(const ExpandedNetwork& net, const FisherDiagonal& fisher_prv,
                       const ContinualConfig& config, std::span<const double> params,
                       std::span<double> grad);

/// Eq. 2 objective on a batch in eval mode, as the training path computes it.
double eq2_loss(const ExpandedNetwork& net, const nn::TrainingSet& data,
                std::span<const std::size_t> batch, const FisherDiagonal& fisher_prv,
                const ContinualConfig& config, std::span<double> grad);

/// Eq. 2: full dense part trainable under the Fisher, l2,1 and l1 penalties.
nn::TrainReport train_full_regularized(ExpandedNetwork& net, const nn::TrainingSet& data,
                                       const FisherDiagonal& fisher_prv,
                                       const ContinualConfig& config);

/// Eq. 3: mean of squared per-sample log-likelihood gradients (eval mode).
/// For many-to-many models the log-likelihood is the mean over steps.
FisherDiagonal compute_fisher_diagonal(const nn::NetworkModel& model, const nn::TrainingSet& data,
                                       bool strict_paper = false);

struct ContinualReport {
    bool fallback = false;
    double val_after_added = 0.0;
    double val_final = 0.0;
    std::vector<double> added_loss;
    std::vector<double> full_loss;
};

struct ContinualResult {
    ExpandedNetwork net;
    ContinualReport report;
};

/// Algorithm 1. fisher_prv is the Fisher diagonal of model on its previous
/// data; only read when the fallback branch runs.
ContinualResult continual_learn(const nn::NetworkModel& model, const nn::TrainingSet& train,
                                const nn::TrainingSet& val, const FisherDiagonal& fisher_prv,
                                const ContinualConfig& config);

}  // namespace adaptids::continual
