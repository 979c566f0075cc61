#include "doctest.h"

#include "adaptids/error.hpp"
#include "adaptids/seqlabel.hpp"

#include "support/scenario.hpp"

#include <sstream>

using namespace adaptids;
using namespace adaptids::seqlabel;

namespace {

PacketProbabilityTrace trace_of(std::vector<double> p, std::uint32_t label = 1) { return {0, std::move(p), label}; }

// Small LSTM trained on benign vs one attack class, 64-byte packet windows.
const nn::NetworkModel& trained_lstm() {
    static const nn::NetworkModel model = [] {
        auto m = nn::build_model(nn::lstm_architecture(64, 20, 12, {12, 2}), 3);
        const auto data = nn::make_training_set(m.architecture(), testing::synth({0, 1}, 60, 77));
        nn::OptimizerState opt;
        opt.learning_rate = 0.3;
        nn::train(m, data, nn::all_trainable(m), {15, 16, 2}, opt, nn::cross_entropy_objective(data.targets));
        return m;
    }();
    return model;
}

}  // namespace

TEST_CASE("decide") {
    CHECK(decide(trace_of({0.99, 0.99, 0.99}), 0.9).verdict == Verdict::attack);
    CHECK(decide(trace_of({0.99, 0.99, 0.99}), 0.9).packet == 1);
    CHECK(decide(trace_of(std::vector<double>(30, 0.5)), 0.9).verdict == Verdict::undecided);
    CHECK(decide(trace_of(std::vector<double>(30, 0.5)), 0.9).packet == 0);
    CHECK(decide(trace_of({0.3, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95}), 0.9).packet == 7);
    const auto benign = decide(trace_of({0.4, 0.2, 0.05}), 0.9);
    CHECK(benign.verdict == Verdict::benign);
    CHECK(benign.packet == 3);
    SUBCASE("min_packets guard") {
        const auto d = decide(trace_of({0.99, 0.99, 0.5, 0.97}), 0.9, 3);
        CHECK(d.verdict == Verdict::attack);
        CHECK(d.packet == 4);
    }
    SUBCASE("monotone in theta") {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(0, 1);
        for (int trial = 0; trial < 300; ++trial) {
            std::vector<double> p(1 + rng() % 40);
            for (auto& v : p) v = u(rng);
            const auto t = trace_of(p);
            std::size_t prev = 0;
            for (double theta : {0.55, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0}) {
                const auto d = decide(t, theta);
                const std::size_t at = d.verdict == Verdict::undecided ? p.size() + 1 : d.packet;
                CHECK(at >= prev);
                prev = at;
            }
        }
    }
    CHECK_THROWS_AS(decide(trace_of({0.9}), 0.5), InvalidInput);
    CHECK_THROWS_AS(decide(trace_of({0.9}), 1.1), InvalidInput);
}

TEST_CASE("streaming equals the batch forward pass") {
    const auto model = nn::build_model(nn::lstm_architecture(64, 20, 6, {5, 2}), 11);
    const auto ds = testing::synth({0, 1, 2}, 15, 5);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.samples[i];
        const auto a = stream_probabilities(model, *s.matrix, i, s.label);
        const auto b = batch_probabilities(model, *s.matrix, i, s.label);
        REQUIRE(a.size() == b.size());
        CHECK(a.size() == std::min<std::size_t>(s.matrix->n_real_packets, 20));
        for (std::size_t t = 0; t < a.size(); ++t) {
            CHECK(std::abs(a.attack_prob[t] - b.attack_prob[t]) <= nn::tolerance::kPrefixConsistency);
            CHECK(a.attack_prob[t] >= 0.0);
            CHECK(a.attack_prob[t] <= 1.0);
        }
    }
    SUBCASE("one-packet flow") {
        ingest::FlowMatrix m;
        m.n_real_packets = 1;
        CHECK(stream_probabilities(model, m).size() == 1);
    }
    SUBCASE("labeler refuses packets past the model window") {
        FlowLabeler labeler(model, 0, 0);
        const std::vector<double> packet(64, 0.1);
        for (int i = 0; i < 20; ++i) labeler.push(packet);
        CHECK_THROWS_AS(labeler.push(packet), InvalidInput);
        CHECK_THROWS_AS(FlowLabeler(model, 0, 0).push(std::vector<double>(3)), ShapeMismatch);
    }
    const auto cnn = nn::build_model(nn::cnn_architecture(6, 64, {2}, {4, 2}), 1);
    CHECK_THROWS_AS(stream_probabilities(cnn, *ds.samples[0].matrix), UnsupportedModel);
    CHECK_THROWS_AS(early_detection_curve(cnn, ds), UnsupportedModel);
}

TEST_CASE("early-detection curve") {
    const auto model = nn::build_model(nn::lstm_architecture(64, 100, 6, {5, 2}), 12);
    SUBCASE("identical flows average to the single trace") {
        const auto one = testing::synth({1}, 1, 9);
        ingest::LabeledDataset same = one;
        for (int i = 0; i < 4; ++i) same.append(one);
        const auto curve = early_detection_curve(model, same);
        const auto t = stream_probabilities(model, *one.samples[0].matrix, 0, 1);
        REQUIRE(curve.size() == t.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
            CHECK(curve.mean_true_label_prob[i] == doctest::Approx(t.attack_prob[i]).epsilon(1e-14));
            CHECK(curve.n_flows[i] == 5);
        }
    }
    SUBCASE("counts shrink with index and workers do not change the result") {
        ingest::SyntheticSpec spec;
        spec.classes = 3;
        spec.flows_per_class = 12;
        spec.min_packets = 1;
        spec.max_packets = 140;
        spec.seed = 4;
        const auto ds = ingest::generate_synthetic(spec);
        const auto curve = early_detection_curve(model, ds);
        CHECK(curve.size() <= 100);
        CHECK(curve.n_flows.front() == ds.size());
        for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve.n_flows[i] <= curve.n_flows[i - 1]);
        const auto sharded = early_detection_curve(model, ds, 3);
        CHECK(sharded.mean_true_label_prob == curve.mean_true_label_prob);
        CHECK(sharded.mean_accuracy == curve.mean_accuracy);

        std::ostringstream csv;
        write_curve_csv(csv, curve);
        std::istringstream lines(csv.str());
        std::string header;
        std::getline(lines, header);
        CHECK(header == "packet_index,mean_true_label_prob,mean_accuracy,n_flows");
        std::size_t rows = 0;
        for (std::string l; std::getline(lines, l);) ++rows;
        CHECK(rows == curve.size());
    }
    CHECK_THROWS_AS(early_detection_curve(model, ingest::LabeledDataset{}), InvalidInput);
}

TEST_CASE("more packets help a trained model") {
    const auto& model = trained_lstm();
    const auto eval = testing::synth({0, 1}, 40, 1234);
    const auto curve = early_detection_curve(model, eval);
    REQUIRE(curve.size() >= 6);
    CHECK(curve.mean_true_label_prob[5] >= curve.mean_true_label_prob[0]);
    CHECK(curve.mean_accuracy[5] >= 0.8);
}
