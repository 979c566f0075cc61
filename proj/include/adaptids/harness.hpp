#pragma once

// Desk-scale experiment runner: scenario configuration, the pairwise,
// sequential, federated and early-detection scenarios, model compression and
// metric export.

#include "adaptids/continual.hpp"
#include "adaptids/federated.hpp"
#include "adaptids/seqlabel.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace adaptids::harness {

inline constexpr int kMetricsSchemaVersion = 1;

enum class ScenarioKind { pairwise, sequential, federated, early_detection };
enum class ModelKind { cnn, lstm };

std::string to_string(ScenarioKind kind);
std::string to_string(ModelKind kind);

/// Flows come from dataset containers (merged in order) or from a synthetic
/// generator; exactly one of the two.
struct DataSource {
    std::vector<std::filesystem::path> files;
    std::optional<ingest::SyntheticSpec> synthetic;
};

struct InitialTrainingConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
};

struct CompressConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    double learning_rate = 0.01;
    double temperature = 2.0;
};

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::pairwise;
    DataSource data;
    ModelKind model = ModelKind::cnn;
    /// Overrides the desk-scale default architecture for the model kind.
    std::optional<nn::Architecture> architecture;
    InitialTrainingConfig initial;
    continual::ContinualConfig continual;
    federated::FederatedConfig federated;
    CompressConfig compress;
    std::optional<std::uint64_t> seed;  // mandatory
    std::filesystem::path output_dir;

    /// Initial training: this many attack flows (split evenly over the known
    /// classes) and as many benign flows.
    std::size_t train_per_class = 400;
    std::size_t update_flows = 128;     // new-attack flows per update
    std::size_t eval_per_class = 150;   // held-out flows per class
    std::size_t permutations = 3;       // sequential scenario
    /// Initial known attack classes (pairwise, federated); empty = every
    /// attack class.
    std::vector<std::uint32_t> known_classes;
    /// Round-robin scheduling for federated runs; live threads otherwise.
    bool deterministic = true;
    /// Replays a recorded transcript in the federated scenario.
    std::optional<std::filesystem::path> replay;
    double decision_threshold = 0.9;  // early detection
    std::size_t min_packets = 1;
    std::size_t workers = 1;

    /// Throws ConfigError on missing seed, bad values or missing files.
    void validate() const;
    nn::Architecture resolved_architecture() const;
};

ScenarioConfig parse_config(const std::string& json_text);
ScenarioConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ScenarioConfig& config);

nn::Architecture desk_architecture(ModelKind kind);

/// Loads or generates the scenario's flows.
ingest::LabeledDataset load_data(const DataSource& source);

/// Per-class held-out split. Each class is shuffled with the seed; the first
/// eval_per_class flows are held out and the rest are available for training.
struct ClassSplit {
    std::map<std::uint32_t, ingest::LabeledDataset> train;
    std::map<std::uint32_t, ingest::LabeledDataset> eval;
    std::map<std::uint32_t, std::string> catalog;

    std::vector<std::uint32_t> attack_labels() const;
};

/// Throws InsufficientPool naming the class and the required count when a
/// class has fewer than eval_per_class + train_needs[label] flows.
ClassSplit split_classes(const ingest::LabeledDataset& data, std::size_t eval_per_class,
                         const std::map<std::uint32_t, std::size_t>& train_needs, std::uint64_t seed);

/// Balanced detection rate: mean of benign and attack recall over the given
/// attack classes' held-out flows plus the benign held-out flows.
double detection_rate(const nn::NetworkModel& model, const ClassSplit& split,
                      const std::vector<std::uint32_t>& attack_labels);

struct InitialModel {
    nn::NetworkModel model;
    continual::FisherDiagonal fisher;
    sampling::SamplePools pools;
    std::size_t train_size = 0;
    nn::TrainReport report;
};

/// Trains a model on per_class attack flows spread over the known classes plus
/// per_class benign flows, computes its Fisher diagonal and seeds the sample
/// pools with the training flows.
InitialModel train_initial(const nn::Architecture& arch, const ClassSplit& split,
                           const std::vector<std::uint32_t>& known, std::size_t per_class,
                           const InitialTrainingConfig& config, std::uint64_t seed);

/// Distills an expanded teacher back into its pre-expansion architecture.
/// The student starts from the pre-expansion weights and minimizes the
/// distillation loss with the Fisher term disabled.
nn::NetworkModel compress_model(const continual::ExpandedNetwork& teacher, const nn::Architecture& target,
                                const nn::TrainingSet& data, const CompressConfig& config, std::uint64_t seed);

/// One continual update: sample a balanced task set, expand and train, then
/// compress back. Pools are updated in place.
struct UpdateResult {
    nn::NetworkModel compressed;
    continual::ContinualResult continual;
    continual::FisherDiagonal fisher;  // of the compressed model on the task training set
    sampling::SamplingReport sampling;
    std::size_t train_size = 0;
};

UpdateResult continual_update(const nn::NetworkModel& model, const continual::FisherDiagonal& fisher,
                              const ingest::LabeledDataset& new_flows, sampling::SamplePools& pools,
                              const continual::ContinualConfig& cont, const CompressConfig& compress,
                              double val_fraction, std::uint64_t seed);

// ---- scenarios ------------------------------------------------------------

inline constexpr const char* kBeforeZeroDay = "Before Update (zero-day)";
inline constexpr const char* kAfterZeroDay = "After Update (zero-day)";
inline constexpr const char* kAfterInitial = "After Update (initial)";
inline constexpr const char* kUnknownsBefore = "Unknowns-Before";
inline constexpr const char* kUnknownsAfter = "Unknowns-After";
inline constexpr const char* kKnownAfter = "Known-After";

struct PairRecord {
    std::uint32_t known = 0;
    std::uint32_t zero_day = 0;
    double before_zero_day = 0.0;
    double after_zero_day = 0.0;
    double after_initial = 0.0;
    bool fallback = false;
};

struct PairwiseResult {
    std::map<std::uint32_t, double> initial_accuracy;  // per known class
    std::vector<PairRecord> pairs;
    std::map<std::uint32_t, std::string> catalog;
};

struct StepRecord {
    std::size_t permutation = 0;
    std::size_t step = 0;
    std::uint32_t label = 0;
    std::size_t known_classes = 0;  // attack classes known after the step
    double before_zero_day = 0.0;
    double after_zero_day = 0.0;
    double known = 0.0;  // compressed model on every known class so far
    bool fallback = false;
};

struct SequentialResult {
    std::vector<std::vector<std::uint32_t>> orders;
    std::vector<StepRecord> steps;
    // Averages over permutations, indexed by step.
    std::vector<double> mean_before_zero_day;
    std::vector<double> mean_after_zero_day;
    std::vector<double> mean_known;
    std::map<std::uint32_t, std::string> catalog;
};

struct FederatedRow {
    std::uint32_t known = 0;
    std::vector<std::uint32_t> unknown;
    double known_before = 0.0;
    double unknowns_before = 0.0;
    double unknowns_after = 0.0;
    double known_after = 0.0;
    std::vector<federated::AgentReport> agents;
    federated::SimulationResult simulation;
};

struct FederatedResult {
    std::vector<FederatedRow> rows;
    std::map<std::uint32_t, std::string> catalog;
};

struct EarlyDetectionResult {
    seqlabel::EarlyDetectionCurve curve;
    nn::NetworkModel model;
    double final_accuracy = 0.0;  // last-step prediction, balanced
    double decided_fraction = 0.0;
    double mean_decision_packet = 0.0;
    double decision_accuracy = 0.0;
};

PairwiseResult scenario_pairwise(const ScenarioConfig& config);
SequentialResult scenario_sequential(const ScenarioConfig& config);
FederatedResult scenario_federated(const ScenarioConfig& config);
EarlyDetectionResult scenario_early_detection(const ScenarioConfig& config);

// ---- export ---------------------------------------------------------------

std::string metrics_json(const ScenarioConfig& config, const PairwiseResult& r);
std::string metrics_json(const ScenarioConfig& config, const SequentialResult& r);
std::string metrics_json(const ScenarioConfig& config, const FederatedResult& r);
std::string metrics_json(const ScenarioConfig& config, const EarlyDetectionResult& r);

/// Tables shaped like the paper's: rows are (known attack, state).
std::string table_csv(const PairwiseResult& r);
std::string table_csv(const SequentialResult& r);
std::string table_csv(const FederatedResult& r);

/// Runs the configured scenario and writes metrics.json plus table or curve
/// CSVs (and checkpoints where the scenario produces a model) into the
/// output directory. Returns the metrics JSON.
std::string run_scenario(const ScenarioConfig& config);

}  // namespace adaptids::harness
