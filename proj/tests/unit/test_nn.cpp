#include "doctest.h"

#include "adaptids/error.hpp"
#include "adaptids/nn.hpp"

#include "support/oracles.hpp"

#include <sstream>

using namespace adaptids;
using namespace adaptids::nn;

namespace {

double analytic_vs_fd(const NetworkModel& model, const std::vector<Tensor>& inputs, const std::vector<int>& targets) {
    TrainingSet set{inputs, targets};
    std::vector<std::size_t> batch(inputs.size());
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
    GradientSet grad(model.param_count());
    batch_gradient(model, set, batch, Mode::eval, nullptr, cross_entropy_objective(set.targets), grad);
    const auto fd = testing::finite_difference_gradient(
        model, [&](const NetworkModel& m) { return testing::reference_cross_entropy(m, inputs, targets); });
    return testing::max_relative_error(grad, fd);
}

}  // namespace

TEST_CASE("paper CNN architecture") {
    const auto arch = cnn_architecture();
    CHECK(arch.input_rows == 100);
    CHECK(arch.input_cols == 200);
    CHECK(arch.conv_channels == std::vector<std::size_t>{8, 16});
    CHECK(arch.dense_widths == std::vector<std::size_t>{256, 128, 64, 2});
    const auto dims = conv_output_dims(arch);
    REQUIRE(dims.size() == 2);
    CHECK(dims[0] == std::pair<std::size_t, std::size_t>{98, 198});
    CHECK(dims[1] == std::pair<std::size_t, std::size_t>{96, 196});
    CHECK(arch.feature_count() == 96u * 196u * 16u);

    std::size_t dense = 0, relu = 0, dropout = 0, conv = 0;
    for (const auto& l : arch.layers()) {
        dense += l.kind == LayerKind::dense;
        relu += l.kind == LayerKind::relu;
        conv += l.kind == LayerKind::conv2d;
        if (l.kind == LayerKind::dropout) {
            ++dropout;
            CHECK(l.drop_rate == doctest::Approx(0.2));
        }
        if (l.kind == LayerKind::conv2d) {
            CHECK(l.kernel_h == 3);
            CHECK(l.stride_w == 1);
        }
    }
    CHECK(conv == 2);
    CHECK(dense == 4);
    CHECK(relu == 5);  // every layer but the last
    CHECK(dropout == 5);
    CHECK(arch.layers().back().kind == LayerKind::softmax);
}

TEST_CASE("paper CNN forward on a full flow matrix") {
    const auto model = build_cnn_model(3);
    std::mt19937_64 rng(1);
    const auto x = testing::random_tensor({100, 200}, rng);
    const auto out = forward(model, x, Mode::eval);
    REQUIRE(out.probs.size() == 1);
    CHECK(out.probs[0][0] + out.probs[0][1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.probs[0][0] > 0.0);
    CHECK(out.probs[0][1] > 0.0);
}

TEST_CASE("paper LSTM architecture and sequence lengths") {
    const auto arch = lstm_architecture();
    CHECK(arch.lstm_cells == 1024);
    CHECK(arch.dense_widths == std::vector<std::size_t>{512, 256, 128, 64, 2});
    // Narrower cell count keeps the test fast; the many-to-many contract is
    // independent of width.
    const auto model = build_lstm_model(5, lstm_architecture(200, 100, 16));
    std::mt19937_64 rng(2);
    CHECK(forward(model, testing::random_tensor({1, 200}, rng), Mode::eval).probs.size() == 1);
    CHECK(forward(model, testing::random_tensor({15, 200}, rng), Mode::eval).probs.size() == 15);
    CHECK_THROWS_AS(forward(model, Tensor({0, 200}), Mode::eval), InvalidInput);
}

TEST_CASE("LSTM prefix consistency") {
    const auto model = build_lstm_model(9, lstm_architecture(12, 100, 8, {6, 2}));
    std::mt19937_64 rng(3);
    const auto full = testing::random_tensor({20, 12}, rng);
    const auto full_out = forward(model, full, Mode::eval);
    for (std::size_t k : {1u, 7u, 19u}) {
        Tensor prefix({k, 12}, std::vector<double>(full.values().begin(), full.values().begin() + k * 12));
        const auto out = forward(model, prefix, Mode::eval);
        for (std::size_t t = 0; t < k; ++t) {
            CHECK(std::abs(out.probs[t][1] - full_out.probs[t][1]) <= tolerance::kPrefixConsistency);
        }
    }
    LstmStream stream(model);
    for (std::size_t t = 0; t < 20; ++t) {
        const auto p = stream.push(std::span<const double>(full.data() + t * 12, 12));
        CHECK(p[1] == full_out.probs[t][1]);
    }
}

TEST_CASE("forward modes and shape errors") {
    const auto model = build_model(dense_architecture(2, 3, {5, 2}), 4);
    std::mt19937_64 rng(4);
    const auto x = testing::random_tensor({6}, rng);
    const auto a = forward(model, x, Mode::eval);
    const auto b = forward(model, x, Mode::eval);
    CHECK(a.logits == b.logits);

    SUBCASE("dropout rate 0 makes train equal eval") {
        auto arch = dense_architecture(2, 3, {5, 2});
        arch.dropout = 0.0;
        auto m = build_model(arch, 4);
        Rng r(1);
        CHECK(forward(m, x, Mode::train, &r).logits == forward(m, x, Mode::eval).logits);
    }
    SUBCASE("shape mismatch names both shapes") {
        try {
            forward(model, Tensor({7}), Mode::eval);
            FAIL("expected ShapeMismatch");
        } catch (const ShapeMismatch& e) {
            const std::string msg = e.what();
            CHECK(msg.find("[6]") != std::string::npos);
            CHECK(msg.find("[7]") != std::string::npos);
        }
    }
}

TEST_CASE("zero input reduces to the bias path") {
    // 2-layer toy: hidden = relu(b1), logits = W2 relu(b1) + b2.
    auto arch = dense_architecture(1, 2, {2, 2});
    NetworkModel m(arch);
    auto p = m.params();
    const auto& l1 = m.dense_layers()[0];
    const auto& l2 = m.dense_layers()[1];
    p[l1.bias_index(0)] = 0.5;
    p[l1.bias_index(1)] = -0.3;  // clipped by relu
    p[l2.weight_index(0, 0)] = 2.0;
    p[l2.weight_index(1, 0)] = -1.0;
    p[l2.weight_index(0, 1)] = 7.0;
    p[l2.bias_index(0)] = 0.1;
    p[l2.bias_index(1)] = 0.2;
    const auto out = forward(m, Tensor({2}), Mode::eval);
    // hand-computed: z0 = 2*0.5 + 0.1 = 1.1, z1 = -1*0.5 + 0.2 = -0.3
    const double e0 = std::exp(1.1), e1 = std::exp(-0.3);
    CHECK(out.logits[0][0] == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(out.logits[0][1] == doctest::Approx(-0.3).epsilon(1e-15));
    CHECK(out.probs[0][0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
}

TEST_CASE("gradients agree with finite differences") {
    std::mt19937_64 rng(11);
    SUBCASE("dense") {
        const auto model = build_model(dense_architecture(2, 3, {5, 4, 2}), 21);
        std::vector<Tensor> xs{testing::random_tensor({6}, rng), testing::random_tensor({6}, rng)};
        CHECK(analytic_vs_fd(model, xs, {0, 1}) < tolerance::kFiniteDifference);
    }
    SUBCASE("conv") {
        const auto model = build_model(cnn_architecture(7, 8, {2, 3}, {5, 2}), 22);
        CHECK(model.param_count() < 2000);
        std::vector<Tensor> xs{testing::random_tensor({7, 8}, rng), testing::random_tensor({7, 8}, rng)};
        CHECK(analytic_vs_fd(model, xs, {1, 0}) < tolerance::kFiniteDifference);
    }
    SUBCASE("lstm") {
        const auto model = build_model(lstm_architecture(5, 100, 4, {6, 2}), 23);
        CHECK(model.param_count() < 2000);
        std::vector<Tensor> xs{testing::random_tensor({4, 5}, rng), testing::random_tensor({2, 5}, rng)};
        CHECK(analytic_vs_fd(model, xs, {1, 0}) < tolerance::kFiniteDifference);
    }
}

TEST_CASE("sgd_step respects the mask") {
    std::vector<double> params{1.0, 2.0, 3.0};
    const std::vector<double> grads{2.0, 2.0, 2.0};
    OptimizerState opt{0.1};
    SUBCASE("arithmetic") {
        sgd_step(params, grads, TrainMask{1, 0, 1}, opt);
        CHECK(params[0] == 1.0 - 0.1 * 2.0);
        CHECK(params[1] == 2.0);
        CHECK(params[2] == 3.0 - 0.2);
    }
    SUBCASE("all frozen") {
        sgd_step(params, grads, TrainMask{0, 0, 0}, opt);
        CHECK(params == std::vector<double>{1.0, 2.0, 3.0});
    }
    SUBCASE("zero step") {
        opt.learning_rate = 0.0;
        sgd_step(params, grads, TrainMask{1, 1, 1}, opt);
        CHECK(params == std::vector<double>{1.0, 2.0, 3.0});
    }
    SUBCASE("random masks never touch frozen entries") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(-1, 1);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> p(40), g(40);
            TrainMask mask(40);
            for (std::size_t i = 0; i < 40; ++i) {
                p[i] = u(rng);
                g[i] = u(rng);
                mask[i] = rng() & 1;
            }
            const auto before = p;
            OptimizerState o{0.3, trial % 2 ? 0.9 : 0.0};
            sgd_step(p, g, mask, o);
            for (std::size_t i = 0; i < 40; ++i) {
                if (!mask[i]) CHECK(p[i] == before[i]);
            }
        }
    }
}

TEST_CASE("evaluate on constant and oracle classifiers") {
    // Output bias forces class 0 regardless of input.
    auto arch = dense_architecture(1, 4, {3, 2});
    NetworkModel m(arch);
    m.params()[m.dense_layers()[1].bias_index(0)] = 5.0;
    TrainingSet set;
    for (int i = 0; i < 10; ++i) {
        set.inputs.push_back(Tensor({4}, 0.25 * i));
        set.targets.push_back(i % 2);
    }
    const auto metrics = evaluate(m, set);
    CHECK(metrics.detection_rate == 0.5);
    CHECK(metrics.recall_benign == 1.0);
    CHECK(metrics.recall_attack == 0.0);
    CHECK(metrics.confusion[0][0] + metrics.confusion[0][1] + metrics.confusion[1][0] + metrics.confusion[1][1] == 10);

    const std::vector<int> truth{0, 1, 1, 0};
    CHECK(metrics_from_predictions(truth, truth).detection_rate == 1.0);
}

TEST_CASE("checkpoint round trip") {
    const auto model = build_model(cnn_architecture(6, 7, {2, 2}, {4, 2}), 8);
    std::vector<double> fisher(model.param_count(), 0.5);
    std::stringstream buf;
    save_checkpoint(buf, model, &fisher);
    const auto ck = load_checkpoint(buf);
    CHECK(ck.model == model);
    REQUIRE(ck.fisher.has_value());
    CHECK(*ck.fisher == fisher);

    std::stringstream plain;
    save_checkpoint(plain, model);
    CHECK_FALSE(load_checkpoint(plain).fisher.has_value());

    std::string bytes = buf.str();
    bytes[0] = 'X';
    std::stringstream bad(bytes);
    CHECK_THROWS_AS(load_checkpoint(bad), ContainerError);
}

TEST_CASE("training reduces loss on a separable toy problem") {
    auto arch = dense_architecture(1, 4, {8, 2});
    auto model = build_model(arch, 3);
    TrainingSet set;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 64; ++i) {
        const int y = i % 2;
        Tensor x({4});
        for (std::size_t j = 0; j < 4; ++j) x[j] = u(rng) * 0.5 + (j == 0 ? 0.5 * y : 0.0);
        set.inputs.push_back(x);
        set.targets.push_back(y);
    }
    OptimizerState opt{0.1};
    const auto report = train(model, set, all_trainable(model), {40, 8, 1}, opt, cross_entropy_objective(set.targets));
    CHECK(report.epoch_loss.back() < report.epoch_loss.front());
    CHECK(evaluate(model, set).detection_rate >= 0.9);
}
