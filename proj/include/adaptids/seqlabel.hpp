#pragma once

// Per-packet flow labeling with a many-to-many LSTM model: an attack
// probability after every packet, a dual-threshold early decision, and
// early-detection curves averaged over a dataset.

#include "adaptids/nn.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace adaptids::seqlabel {

struct PacketProbabilityTrace {
    std::uint64_t flow_id = 0;
    std::vector<double> attack_prob;  // one entry per consumed packet
    std::uint32_t label = ingest::kBenignLabel;

    std::size_t size() const { return attack_prob.size(); }
    bool is_attack() const { return label != ingest::kBenignLabel; }
    double true_label_prob(std::size_t i) const { return is_attack() ? attack_prob[i] : 1.0 - attack_prob[i]; }
};

/// Streaming labeler for one flow; each push costs one recurrence step.
class FlowLabeler {
public:
    FlowLabeler(const nn::NetworkModel& model, std::uint64_t flow_id, std::uint32_t label);
    /// Consumes a packet row and returns p(attack) after it.
    double push(std::span<const double> packet);
    const PacketProbabilityTrace& trace() const { return trace_; }

private:
    nn::LstmStream stream_;
    std::size_t max_steps_;
    PacketProbabilityTrace trace_;
};

/// Feeds a flow's real packets (capped at the model's sequence length) through
/// a FlowLabeler. Throws UnsupportedModel for non-LSTM models.
PacketProbabilityTrace stream_probabilities(const nn::NetworkModel& model, const ingest::FlowMatrix& flow,
                                            std::uint64_t flow_id = 0, std::uint32_t label = ingest::kBenignLabel);
/// Same trace from one full-sequence forward pass.
PacketProbabilityTrace batch_probabilities(const nn::NetworkModel& model, const ingest::FlowMatrix& flow,
                                           std::uint64_t flow_id = 0, std::uint32_t label = ingest::kBenignLabel);

enum class Verdict { undecided, benign, attack };

struct Decision {
    Verdict verdict = Verdict::undecided;
    std::size_t packet = 0;  // 1-based index of the deciding packet; 0 when undecided
};

/// First index >= min_packets where p >= theta (attack) or p <= 1 - theta
/// (benign). theta must lie in (0.5, 1].
Decision decide(const PacketProbabilityTrace& trace, double theta, std::size_t min_packets = 1);

/// Entry i describes packet index i + 1 over the flows that have that many
/// packets.
struct EarlyDetectionCurve {
    std::vector<double> mean_true_label_prob;
    std::vector<double> mean_attack_prob;
    std::vector<double> mean_accuracy;
    std::vector<std::size_t> n_flows;

    std::size_t size() const { return n_flows.size(); }
};

/// Averages streaming traces over a non-empty dataset. Flows are independent,
/// so they are sharded over `workers` threads; the result does not depend on
/// the worker count.
EarlyDetectionCurve early_detection_curve(const nn::NetworkModel& model, const ingest::LabeledDataset& dataset,
                                          std::size_t workers = 1);

/// CSV: packet_index,mean_true_label_prob,mean_accuracy,n_flows
void write_curve_csv(std::ostream& out, const EarlyDetectionCurve& curve);

}  // namespace adaptids::seqlabel
