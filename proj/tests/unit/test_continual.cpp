#include "doctest.h"

#include "adaptids/continual.hpp"
#include "adaptids/error.hpp"

#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>

using namespace adaptids;
using namespace adaptids::continual;
using nn::Tensor;
using nn::TrainingSet;

namespace {

TrainingSet toy_set(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    TrainingSet set;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        Tensor x({dim});
        for (std::size_t j = 0; j < dim; ++j) x[j] = 0.5 * u(rng) + (j == 1 ? 0.5 * y : 0.0);
        set.inputs.push_back(x);
        set.targets.push_back(y);
    }
    return set;
}

bool prv_untouched(const ExpandedNetwork& net) {
    const auto view = net.prv_view();
    const auto prv = net.prv.params();
    return std::equal(view.begin(), view.end(), prv.begin(), prv.end());
}

}  // namespace

TEST_CASE("expand widths and validation") {
    const auto model = nn::build_model(nn::cnn_architecture(8, 9, {2, 2}, {256, 128, 64, 2}), 1);
    const auto net = expand(model, 10);
    CHECK(net.model.architecture().dense_widths == std::vector<std::size_t>{266, 138, 74, 2});
    CHECK(net.model.base_param_count() == model.base_param_count());
    CHECK_THROWS_AS(expand(model, -1), InvalidInput);
    CHECK_THROWS_AS(expand(nn::build_model(nn::dense_architecture(1, 3, {2}), 1), 1), InvalidInput);
}

TEST_CASE("k=0 expansion is an identity") {
    const auto model = nn::build_model(nn::dense_architecture(1, 5, {4, 3, 2}), 2);
    const auto net = expand(model, 0);
    CHECK(net.model == model);
    CHECK(std::none_of(net.added.begin(), net.added.end(), [](auto a) { return a != 0; }));
}

TEST_CASE("expansion is function-preserving at initialization") {
    std::mt19937_64 rng(7);
    SUBCASE("dense") {
        const auto model = nn::build_model(nn::dense_architecture(1, 6, {5, 4, 2}), 3);
        const auto net = expand(model, 10, 9);
        for (int t = 0; t < 200; ++t) {
            const auto x = testing::random_tensor({6}, rng, -2.0, 2.0);
            CHECK(nn::forward(net.model, x, nn::Mode::eval).logits == nn::forward(model, x, nn::Mode::eval).logits);
        }
    }
    SUBCASE("cnn") {
        const auto model = nn::build_model(nn::cnn_architecture(6, 7, {2, 3}, {6, 4, 2}), 4);
        const auto net = expand(model, 10, 9);
        for (int t = 0; t < 100; ++t) {
            const auto x = testing::random_tensor({6, 7}, rng);
            CHECK(nn::forward(net.model, x, nn::Mode::eval).logits == nn::forward(model, x, nn::Mode::eval).logits);
        }
    }
    SUBCASE("lstm") {
        const auto model = nn::build_model(nn::lstm_architecture(5, 100, 4, {6, 2}), 5);
        const auto net = expand(model, 10, 9);
        for (int t = 0; t < 100; ++t) {
            const auto x = testing::random_tensor({1 + static_cast<std::size_t>(t % 6), 5}, rng);
            CHECK(nn::forward(net.model, x, nn::Mode::eval).logits == nn::forward(model, x, nn::Mode::eval).logits);
        }
    }
}

TEST_CASE("expansion connectivity") {
    const auto model = nn::build_model(nn::dense_architecture(1, 3, {4, 3, 2}), 6);
    const auto net = expand(model, 2, 1);
    const auto& layers = net.model.dense_layers();
    const auto p = net.model.params();
    // hidden 1: new units 4,5 read every input
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(net.added[layers[0].weight_index(4, i)]);
        CHECK(p[layers[0].weight_index(5, i)] != 0.0);
    }
    // hidden 2: old unit 0 never reads new units 4,5; new unit 3 reads all six
    CHECK_FALSE(net.connected[layers[1].weight_index(0, 4)]);
    CHECK(p[layers[1].weight_index(0, 5)] == 0.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(net.added[layers[1].weight_index(3, i)]);
    // output: new final-hidden units feed both outputs, starting at zero
    for (std::size_t o = 0; o < 2; ++o) {
        CHECK(net.added[layers[2].weight_index(o, 3)]);
        CHECK(net.connected[layers[2].weight_index(o, 4)]);
        CHECK(p[layers[2].weight_index(o, 4)] == 0.0);
    }
    CHECK(net.added[layers[0].bias_index(5)]);
    CHECK_FALSE(net.added[layers[0].bias_index(0)]);
}

TEST_CASE("train_added_only keeps W^Prv bit-identical") {
    const auto data = toy_set(40, 6, 1);
    ContinualConfig cfg;
    cfg.epochs = 15;
    cfg.learning_rate = 0.1;
    SUBCASE("dense") {
        auto net = expand(nn::build_model(nn::dense_architecture(1, 6, {5, 4, 2}), 3), 4, 2);
        const auto before = net.model;
        const auto report = train_added_only(net, data, cfg);
        CHECK(prv_untouched(net));
        CHECK(report.epoch_loss.back() <= report.epoch_loss.front());
        CHECK_FALSE(net.model == before);
        // structurally absent weights stay zero
        const auto p = net.model.params();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (!net.connected[i]) CHECK(p[i] == 0.0);
        }
    }
    SUBCASE("cnn base") {
        std::mt19937_64 rng(2);
        TrainingSet img;
        for (int i = 0; i < 16; ++i) {
            img.inputs.push_back(testing::random_tensor({5, 6}, rng));
            img.targets.push_back(i % 2);
        }
        auto net = expand(nn::build_model(nn::cnn_architecture(5, 6, {2, 2}, {4, 3, 2}), 3), 3, 2);
        train_added_only(net, img, cfg);
        CHECK(prv_untouched(net));
    }
    CHECK_THROWS_AS(
        [&] {
            auto net = expand(nn::build_model(nn::dense_architecture(1, 6, {5, 2}), 1), 1);
            train_added_only(net, TrainingSet{}, cfg);
        }(),
        InvalidInput);
}

TEST_CASE("Eq. 2 loss: reference value and finite differences") {
    std::mt19937_64 rng(3);
    auto net = expand(nn::build_model(nn::cnn_architecture(5, 4, {2}, {5, 3, 2}), 8), 2, 3);
    TrainingSet img;
    for (int i = 0; i < 5; ++i) {
        img.inputs.push_back(testing::random_tensor({5, 4}, rng));
        img.targets.push_back(i % 2);
    }
    // perturb everything so drift and l1 terms are non-trivial
    for (auto& v : net.model.params()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    for (std::size_t i = 0; i < net.model.param_count(); ++i) {
        if (!net.connected[i]) net.model.params()[i] = 0.0;
    }
    FisherDiagonal fisher(net.prv.param_count());
    for (auto& f : fisher) f = std::uniform_real_distribution<double>(0, 2)(rng);
    ContinualConfig cfg;
    cfg.lambda1 = 0.7;
    cfg.lambda2 = 0.3;
    cfg.lambda3 = 0.2;

    std::vector<std::size_t> batch{0, 1, 2, 3, 4};
    std::vector<double> grad(net.model.param_count());
    const double engine = eq2_loss(net, img, batch, fisher, cfg, grad);
    auto reference = [&](const nn::NetworkModel& m) {
        return testing::reference_cross_entropy(m, img.inputs, img.targets) +
               testing::reference_eq2_penalty(net.prv, m, fisher, cfg);
    };
    CHECK(std::abs(engine - reference(net.model)) < 1e-9);
    CHECK(net.model.param_count() < 2000);
    const auto fd = testing::finite_difference_gradient(net.model, reference);
    CHECK(testing::max_relative_error(grad, fd) < nn::tolerance::kFiniteDifference);

    SUBCASE("zero lambdas contribute nothing") {
        ContinualConfig off = cfg;
        off.lambda1 = off.lambda2 = off.lambda3 = 0.0;
        std::vector<double> g(net.model.param_count(), 0.0);
        CHECK(eq2_regularizer(net, fisher, off, net.model.params(), g) == 0.0);
        CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
    }
    SUBCASE("fisher length mismatch") {
        FisherDiagonal bad(3);
        CHECK_THROWS_AS(eq2_loss(net, img, batch, bad, cfg, grad), InvalidInput);
    }
}

TEST_CASE("large lambda1 pins pre-expansion parameters") {
    const auto data = toy_set(32, 6, 9);
    auto net = expand(nn::build_model(nn::dense_architecture(1, 6, {5, 4, 2}), 3), 3, 2);
    ContinualConfig cfg;
    cfg.lambda1 = 1e6;
    cfg.epochs = 1;
    cfg.learning_rate = 1e-7;  // keeps mu * 2 * lambda1 below 1 so the penalty contracts
    FisherDiagonal ones(net.prv.param_count(), 1.0);
    train_full_regularized(net, data, ones, cfg);
    const auto view = net.prv_view();
    const auto prv = net.prv.params();
    double worst = 0.0;
    for (std::size_t i = 0; i < view.size(); ++i) worst = std::max(worst, std::abs(view[i] - prv[i]));
    CHECK(worst < 1e-3);
}

TEST_CASE("regularizer-off full training equals plain cross-entropy training") {
    const auto data = toy_set(24, 6, 4);
    auto a = expand(nn::build_model(nn::dense_architecture(1, 6, {5, 2}), 3), 2, 2);
    auto b = a;
    ContinualConfig cfg;
    cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = 0.0;
    cfg.epochs = 3;
    train_full_regularized(a, data, FisherDiagonal(a.prv.param_count(), 1.0), cfg);
    nn::OptimizerState opt;
    opt.learning_rate = cfg.learning_rate;
    nn::train(b.model, data, b.dense_mask(), {cfg.epochs, cfg.batch_size, cfg.seed}, opt,
              nn::cross_entropy_objective(data.targets));
    CHECK(a.model == b.model);
}

TEST_CASE("Fisher diagonal") {
    SUBCASE("closed form for a one-weight logistic model") {
        // logits (0, theta*x): p(attack) = sigmoid(theta*x)
        nn::NetworkModel m(nn::dense_architecture(1, 1, {2}));
        const double theta = 0.8, x = 1.7;
        const auto& l = m.dense_layers()[0];
        m.params()[l.weight_index(1, 0)] = theta;
        for (int y : {0, 1}) {
            TrainingSet s{{Tensor({1}, x)}, {y}};
            const auto f = compute_fisher_diagonal(m, s);
            const double sig = 1.0 / (1.0 + std::exp(-theta * x));
            const double expected = (sig - y) * (sig - y) * x * x;
            CHECK(std::abs(f[l.weight_index(1, 0)] - expected) < 1e-10);
        }
    }
    SUBCASE("saturated correct outputs give zero") {
        nn::NetworkModel m(nn::dense_architecture(1, 2, {3, 2}));
        m.params()[m.dense_layers()[1].bias_index(1)] = 800.0;
        TrainingSet s{{Tensor({2}), Tensor({2})}, {1, 1}};
        const auto f = compute_fisher_diagonal(m, s);
        CHECK(std::all_of(f.begin(), f.end(), [](double v) { return v == 0.0; }));
    }
    SUBCASE("non-negative, finite and order independent on random models") {
        std::mt19937_64 rng(12);
        for (int trial = 0; trial < 5; ++trial) {
            const auto model = nn::build_model(nn::lstm_architecture(4, 100, 3, {5, 2}), 100 + trial);
            TrainingSet s;
            for (int i = 0; i < 12; ++i) {
                s.inputs.push_back(testing::random_tensor({1 + static_cast<std::size_t>(i % 4), 4}, rng));
                s.targets.push_back(static_cast<int>(rng() % 2));
            }
            const auto f = compute_fisher_diagonal(model, s);
            CHECK(std::all_of(f.begin(), f.end(), [](double v) { return v >= 0.0 && std::isfinite(v); }));
            TrainingSet rev{{s.inputs.rbegin(), s.inputs.rend()}, {s.targets.rbegin(), s.targets.rend()}};
            const auto g = compute_fisher_diagonal(model, rev);
            for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(f[i] - g[i]) < 1e-12);
        }
    }
    CHECK_THROWS_AS(compute_fisher_diagonal(nn::NetworkModel(nn::dense_architecture(1, 1, {2})), TrainingSet{}),
                    InvalidInput);
}

TEST_CASE("continual_learn threshold branches") {
    const auto data = toy_set(32, 6, 2);
    const auto model = nn::build_model(nn::dense_architecture(1, 6, {5, 4, 2}), 3);
    FisherDiagonal fisher(model.param_count(), 0.5);
    ContinualConfig cfg;
    cfg.k = 3;
    cfg.epochs = 2;

    cfg.tau = 0.0;
    const auto floor = continual_learn(model, data, data, fisher, cfg);
    CHECK_FALSE(floor.report.fallback);
    CHECK(floor.report.full_loss.empty());
    CHECK(prv_untouched(floor.net));

    // Contradictory duplicate labels cap validation accuracy below 1.
    TrainingSet val{{data.inputs[0], data.inputs[0]}, {0, 1}};
    cfg.tau = 1.0;
    const auto ceiling = continual_learn(model, data, val, fisher, cfg);
    CHECK(ceiling.report.fallback);
    CHECK(ceiling.report.full_loss.size() == cfg.epochs);
}
