#include "adaptids/seqlabel.hpp"

#include "adaptids/error.hpp"

#include <algorithm>
#include <ostream>
#include <thread>

namespace adaptids::seqlabel {

FlowLabeler::FlowLabeler(const nn::NetworkModel& model, std::uint64_t flow_id, std::uint32_t label)
    : stream_(model), max_steps_(model.architecture().input_rows) {
    trace_.flow_id = flow_id;
    trace_.label = label;
}

double FlowLabeler::push(std::span<const double> packet) {
    if (trace_.size() >= max_steps_) {
        throw InvalidInput("flow already holds the model's maximum of " + std::to_string(max_steps_) + " packets");
    }
    const double p = stream_.push(packet)[1];
    trace_.attack_prob.push_back(p);
    return p;
}

PacketProbabilityTrace stream_probabilities(const nn::NetworkModel& model, const ingest::FlowMatrix& flow,
                                            std::uint64_t flow_id, std::uint32_t label) {
    FlowLabeler labeler(model, flow_id, label);
    // model_input crops to the model window and keeps at least one packet.
    const auto input = nn::model_input(model.architecture(), flow);
    const std::size_t cols = input.dim(1);
    for (std::size_t t = 0; t < input.dim(0); ++t) labeler.push(input.values().subspan(t * cols, cols));
    return labeler.trace();
}

PacketProbabilityTrace batch_probabilities(const nn::NetworkModel& model, const ingest::FlowMatrix& flow,
                                           std::uint64_t flow_id, std::uint32_t label) {
    if (model.base() != nn::BaseKind::lstm) {
        throw UnsupportedModel("per-packet labeling needs an LSTM-based model, got " + nn::to_string(model.base()));
    }
    const auto out = nn::forward(model, nn::model_input(model.architecture(), flow), nn::Mode::eval);
    PacketProbabilityTrace trace{flow_id, {}, label};
    for (const auto& p : out.probs) trace.attack_prob.push_back(p[1]);
    return trace;
}

Decision decide(const PacketProbabilityTrace& trace, double theta, std::size_t min_packets) {
    if (!(theta > 0.5 && theta <= 1.0)) throw InvalidInput("decision threshold must lie in (0.5, 1]");
    for (std::size_t i = std::max<std::size_t>(min_packets, 1); i <= trace.size(); ++i) {
        const double p = trace.attack_prob[i - 1];
        if (p >= theta) return {Verdict::attack, i};
        if (p <= 1.0 - theta) return {Verdict::benign, i};
    }
    return {};
}

namespace {

struct Sums {
    std::vector<double> true_prob, attack_prob, correct;
    std::vector<std::size_t> n;

    void add(const PacketProbabilityTrace& t) {
        if (n.size() < t.size()) {
            true_prob.resize(t.size());
            attack_prob.resize(t.size());
            correct.resize(t.size());
            n.resize(t.size());
        }
        for (std::size_t i = 0; i < t.size(); ++i) {
            true_prob[i] += t.true_label_prob(i);
            attack_prob[i] += t.attack_prob[i];
            correct[i] += ((t.attack_prob[i] > 0.5) == t.is_attack()) ? 1.0 : 0.0;
            ++n[i];
        }
    }
};

}  // namespace

EarlyDetectionCurve early_detection_curve(const nn::NetworkModel& model, const ingest::LabeledDataset& dataset,
                                          std::size_t workers) {
    if (dataset.empty()) throw InvalidInput("early-detection curve needs a non-empty dataset");
    if (model.base() != nn::BaseKind::lstm) {
        throw UnsupportedModel("per-packet labeling needs an LSTM-based model, got " + nn::to_string(model.base()));
    }
    workers = std::clamp<std::size_t>(workers, 1, dataset.size());
    std::vector<std::vector<PacketProbabilityTrace>> shards(workers);
    auto run = [&](std::size_t w) {
        for (std::size_t i = w; i < dataset.size(); i += workers) {
            const auto& s = dataset.samples[i];
            shards[w].push_back(stream_probabilities(model, *s.matrix, i, s.label));
        }
    };
    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    }

    // Sum in dataset order so the floating-point result is worker-independent.
    Sums sums;
    for (std::size_t i = 0; i < dataset.size(); ++i) sums.add(shards[i % workers][i / workers]);

    EarlyDetectionCurve curve;
    curve.n_flows = sums.n;
    for (std::size_t i = 0; i < sums.n.size(); ++i) {
        const double n = static_cast<double>(sums.n[i]);
        curve.mean_true_label_prob.push_back(sums.true_prob[i] / n);
        curve.mean_attack_prob.push_back(sums.attack_prob[i] / n);
        curve.mean_accuracy.push_back(sums.correct[i] / n);
    }
    return curve;
}

void write_curve_csv(std::ostream& out, const EarlyDetectionCurve& curve) {
    const auto old = out.precision(17);
    out << "packet_index,mean_true_label_prob,mean_accuracy,n_flows\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
        out << i + 1 << ',' << curve.mean_true_label_prob[i] << ',' << curve.mean_accuracy[i] << ','
            << curve.n_flows[i] << '\n';
    }
    out.precision(old);
}

}  // namespace adaptids::seqlabel
