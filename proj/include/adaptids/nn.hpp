#pragma once

// Small neural-network engine for the two detector architectures (a conv
// base or a many-to-many LSTM base, followed by a dense part ending in a
// 2-way softmax). Parameters live in one flat vector so masks, Fisher
// diagonals and gradient messages index them uniformly.

#include "adaptids/ingest.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace adaptids::nn {

using Rng = std::mt19937_64;
using Logits = std::array<double, 2>;

/// Tolerances used by tests and runtime checks. Tests run in 64-bit.
namespace tolerance {
inline constexpr double kSoftmaxSum = 1e-9;
inline constexpr double kFiniteDifference = 1e-4;
inline constexpr double kPrefixConsistency = 1e-10;
}  // namespace tolerance

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return values_.size(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    std::string shape_string() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

enum class BaseKind { none, cnn, lstm };
enum class LayerKind { dense, conv2d, lstm_m2m, relu, dropout, softmax };

std::string to_string(BaseKind kind);
std::string to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t inputs = 0;  // fan-in: features, input channels or packet dim
    std::size_t units = 0;   // dense units, output channels or LSTM cells
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride_h = 0;
    std::size_t stride_w = 0;
    double drop_rate = 0.0;
};

/// Shape of a detector. The model reads the top-left input_rows x input_cols
/// window of a flow matrix (the whole matrix with the default sizes). For an
/// LSTM base input_rows is the longest sequence consumed.
struct Architecture {
    BaseKind base = BaseKind::none;
    std::size_t input_rows = 1;
    std::size_t input_cols = 0;
    std::vector<std::size_t> conv_channels;
    std::size_t kernel = 3;
    std::size_t lstm_cells = 0;
    std::vector<std::size_t> dense_widths;
    double dropout = 0.2;

    bool operator==(const Architecture&) const = default;
    void validate() const;
    /// Width of the vector entering the dense part.
    std::size_t feature_count() const;
    std::vector<LayerSpec> layers() const;
};

Architecture cnn_architecture(std::size_t rows = ingest::kMatrixRows,
                              std::size_t cols = ingest::kMatrixCols,
                              std::vector<std::size_t> conv_channels = {8, 16},
                              std::vector<std::size_t> dense_widths = {256, 128, 64, 2});
Architecture lstm_architecture(std::size_t packet_dim = ingest::kMatrixCols,
                               std::size_t max_steps = ingest::kMatrixRows,
                               std::size_t cells = 1024,
                               std::vector<std::size_t> dense_widths = {512, 256, 128, 64, 2});
/// Base-less model over a flattened rows x cols window; used for toy models.
Architecture dense_architecture(std::size_t rows, std::size_t cols,
                                std::vector<std::size_t> dense_widths);

// Offsets into the flat parameter vector. Weight layouts are input-major so
// the hot loops run contiguously over outputs.
struct ConvLayer {
    std::size_t in_channels = 0, out_channels = 0;
    std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    std::size_t kernel = 3;
    std::size_t kernel_offset = 0;  // [kr][kc][in][out]
    std::size_t bias_offset = 0;
    std::size_t weight_index(std::size_t kr, std::size_t kc, std::size_t in, std::size_t out) const {
        return kernel_offset + ((kr * kernel + kc) * in_channels + in) * out_channels + out;
    }
};

struct LstmLayer {
    std::size_t input = 0, cells = 0;
    std::size_t weight_offset = 0;  // [input + cells][4 * cells], gates i,f,g,o
    std::size_t bias_offset = 0;
    std::size_t weight_index(std::size_t row, std::size_t gate_unit) const {
        return weight_offset + row * 4 * cells + gate_unit;
    }
};

struct DenseLayer {
    std::size_t in = 0, out = 0;
    std::size_t weight_offset = 0;  // [in][out]
    std::size_t bias_offset = 0;
    std::size_t weight_index(std::size_t out_unit, std::size_t in_unit) const {
        return weight_offset + in_unit * out + out_unit;
    }
    std::size_t bias_index(std::size_t out_unit) const { return bias_offset + out_unit; }
};

class NetworkModel {
public:
    NetworkModel() = default;
    /// Allocates zeroed parameters for the architecture.
    explicit NetworkModel(Architecture arch);

    const Architecture& architecture() const { return arch_; }
    BaseKind base() const { return arch_.base; }
    std::size_t param_count() const { return params_.size(); }
    /// Parameters [0, base_param_count) belong to the conv/LSTM base.
    std::size_t base_param_count() const { return base_params_; }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    const std::vector<ConvLayer>& conv_layers() const { return conv_; }
    const std::optional<LstmLayer>& lstm_layer() const { return lstm_; }
    const std::vector<DenseLayer>& dense_layers() const { return dense_; }
    std::vector<std::size_t> dense_widths() const { return arch_.dense_widths; }
    std::vector<LayerSpec> layers() const { return arch_.layers(); }

    bool operator==(const NetworkModel& other) const {
        return arch_ == other.arch_ && params_ == other.params_;
    }

private:
    Architecture arch_;
    std::vector<ConvLayer> conv_;
    std::optional<LstmLayer> lstm_;
    std::vector<DenseLayer> dense_;
    std::size_t base_params_ = 0;
    std::vector<double> params_;
};

/// Uniform +/- sqrt(6 / (fan_in + fan_out)) weights, zero biases.
void initialize(NetworkModel& model, std::uint64_t seed);
NetworkModel build_model(const Architecture& arch, std::uint64_t seed);
NetworkModel build_cnn_model(std::uint64_t seed = 1, const Architecture& arch = cnn_architecture());
NetworkModel build_lstm_model(std::uint64_t seed = 1, const Architecture& arch = lstm_architecture());

/// Spatial size after each conv layer (valid convolution, stride 1).
std::vector<std::pair<std::size_t, std::size_t>> conv_output_dims(const Architecture& arch);

// ---- forward / backward ---------------------------------------------------

enum class Mode { train, eval };

/// Builds the model input for a flow: [rows, cols] for cnn, [steps, cols] for
/// lstm (steps = min(n_real_packets, input_rows), at least 1), [rows*cols]
/// for a base-less model.
Tensor model_input(const Architecture& arch, const ingest::FlowMatrix& matrix);
/// Checks the input tensor against the architecture; throws ShapeMismatch.
void check_input(const Architecture& arch, const Tensor& input);

struct DenseCache {
    std::vector<std::vector<double>> pre;  // pre-activation per dense layer
    std::vector<std::vector<double>> out;  // post relu/dropout, hidden layers only
    std::vector<std::vector<double>> drop; // dropout multipliers (empty in eval)
};

struct ForwardCache {
    // cnn
    std::vector<std::vector<double>> conv_pre;
    std::vector<std::vector<double>> conv_out;
    std::vector<std::vector<double>> conv_drop;
    // lstm, per step
    std::vector<std::vector<double>> gates;  // activated i,f,g,o
    std::vector<std::vector<double>> cell;
    std::vector<std::vector<double>> hidden; // post-dropout h_t fed to the dense part
    std::vector<std::vector<double>> hidden_raw;
    std::vector<std::vector<double>> hidden_drop;
    // dense part, one per step (one step for cnn / none)
    std::vector<DenseCache> dense;
};

struct ForwardResult {
    std::vector<Logits> logits;  // one per step
    std::vector<Logits> probs;
    ForwardCache cache;
};

/// Eval mode is deterministic. Train mode applies dropout drawn from rng,
/// which must then be non-null when the model has a non-zero drop rate.
ForwardResult forward(const NetworkModel& model, const Tensor& input, Mode mode,
                      Rng* rng = nullptr);

/// Accumulates d(loss)/d(params) into grad given d(loss)/d(logits) per step.
void backward(const NetworkModel& model, const Tensor& input, const ForwardCache& cache,
              std::span<const Logits> dlogits, std::span<double> grad);

Logits softmax(const Logits& z, double temperature = 1.0);
double log_softmax_at(const Logits& z, int index);

/// Incremental many-to-many LSTM evaluation (eval mode). Each push consumes
/// one packet vector and returns that step's class probabilities, computed
/// with exactly the arithmetic of a full-sequence forward pass.
class LstmStream {
public:
    explicit LstmStream(const NetworkModel& model);
    Logits push(std::span<const double> packet);
    std::size_t steps() const { return steps_; }

private:
    const NetworkModel* model_;
    std::vector<double> h_, c_;
    std::size_t steps_ = 0;
};

// ---- losses ---------------------------------------------------------------

struct LossValue {
    double loss = 0.0;
    Logits dlogits{};
};

/// -log softmax(z)[target]; gradient softmax(z) - onehot(target).
LossValue cross_entropy(const Logits& z, int target);
/// T^2 * CE(softmax(teacher/T), softmax(student/T)); gradient with respect to
/// the student logits.
LossValue distillation_kd(const Logits& student, const Logits& teacher, double temperature);

/// Per-sample loss hook: fills dlogits (one per step) and returns the loss.
using SampleObjective =
    std::function<double(std::size_t sample, std::span<const Logits> logits, std::span<Logits> dlogits)>;
/// Parameter-space penalty: returns its value and adds its gradient to grad.
using ParamRegularizer = std::function<double(std::span<const double> params, std::span<double> grad)>;

/// Mean cross-entropy over steps against binary targets.
SampleObjective cross_entropy_objective(std::span<const int> targets);

// ---- training -------------------------------------------------------------

using GradientSet = std::vector<double>;
using TrainMask = std::vector<std::uint8_t>;

TrainMask all_trainable(const NetworkModel& model);

struct OptimizerState {
    double learning_rate = 0.01;
    double momentum = 0.0;  // 0 = plain gradient descent
    std::vector<double> velocity;
};

/// theta_i -= mu * g_i where mask_i is set; frozen entries are not touched.
void sgd_step(std::span<double> params, std::span<const double> grads, const TrainMask& mask,
              OptimizerState& opt);
void sgd_step(NetworkModel& model, std::span<const double> grads, const TrainMask& mask,
              OptimizerState& opt);

/// Model inputs with binary targets (1 = attack).
struct TrainingSet {
    std::vector<Tensor> inputs;
    std::vector<int> targets;
    std::size_t size() const { return inputs.size(); }
};

TrainingSet make_training_set(const Architecture& arch, const ingest::LabeledDataset& dataset);

/// Mean objective over the batch; grad receives the mean gradient.
double batch_gradient(const NetworkModel& model, const TrainingSet& data,
                      std::span<const std::size_t> batch, Mode mode, Rng* rng,
                      const SampleObjective& objective, std::span<double> grad);

struct TrainOptions {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
};

struct TrainReport {
    std::vector<double> epoch_loss;
};

TrainReport train(NetworkModel& model, const TrainingSet& data, const TrainMask& mask,
                  const TrainOptions& options, OptimizerState& opt,
                  const SampleObjective& objective, const ParamRegularizer& regularizer = {});

/// Deterministic epoch shuffles shared by every training loop.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng);

// ---- evaluation -----------------------------------------------------------

struct Metrics {
    double detection_rate = 0.0;
    double recall_benign = 0.0;
    double recall_attack = 0.0;
    /// confusion[true][predicted], 0 = benign, 1 = attack
    std::array<std::array<std::size_t, 2>, 2> confusion{};
    std::size_t total = 0;
};

/// Binary class of the last step's output.
int predict(const NetworkModel& model, const Tensor& input);
Logits predict_proba(const NetworkModel& model, const Tensor& input);
Metrics evaluate(const NetworkModel& model, const ingest::LabeledDataset& dataset);
Metrics evaluate(const NetworkModel& model, const TrainingSet& data);
Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted);

// ---- checkpoints ----------------------------------------------------------

std::string architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const std::string& json);

struct Checkpoint {
    NetworkModel model;
    std::optional<std::vector<double>> fisher;
};

void save_checkpoint(std::ostream& out, const NetworkModel& model,
                     const std::vector<double>* fisher = nullptr);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const NetworkModel& model,
                     const std::vector<double>* fisher = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace adaptids::nn
