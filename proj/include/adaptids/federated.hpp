#pragma once

// Asynchronous multi-agent distillation into a shared fixed-architecture
// main-model. Agents run continual learning on their own traffic, then push
// distillation gradients (Eq. 4) that the server sums and applies (Eq. 5),
// and finally merge their Fisher diagonals into the main one (Eq. 6).

#include "adaptids/continual.hpp"
#include "adaptids/sampling.hpp"

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace adaptids::federated {

using continual::FisherDiagonal;

enum class AlphaMode { agent_fraction, raw_ratio };

struct FederatedConfig {
    double lambda = 1.0;
    double mu = 0.01;
    double temperature = 2.0;
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    AlphaMode alpha_mode = AlphaMode::agent_fraction;
    /// Largest number of queued messages applied together; 0 waits for one
    /// message per distilling agent.
    std::size_t max_batch = 0;
    double val_fraction = 0.2;
    bool strict_paper_penalty = false;
    // Retry policy for an unreachable server.
    std::size_t retries = 3;
    double backoff_ms = 5.0;

    void validate() const;
};

// ---- Eq. 4 ----------------------------------------------------------------

struct DistillationBatch {
    std::vector<nn::Tensor> inputs;
    std::vector<int> labels;
    std::vector<std::vector<nn::Logits>> teacher_logits;  // per sample, per step

    std::size_t size() const { return inputs.size(); }
};

/// f_dist = CE(student, y) + T^2 CE(soft teacher, soft student)
///          + lambda * sum_i F_i (theta_i - theta_init_i)^2
/// averaged over the batch (and over steps for many-to-many models). Writes
/// the gradient with respect to the main-model parameters into grad.
double distillation_loss(const nn::NetworkModel& main, const DistillationBatch& batch,
                         const FisherDiagonal& fisher, std::span<const double> w_init,
                         double lambda, double temperature, std::span<double> grad,
                         nn::Mode mode = nn::Mode::eval, nn::Rng* rng = nullptr,
                         bool strict_paper_penalty = false);

/// Teacher logits for every sample, eval mode.
std::vector<std::vector<nn::Logits>> teacher_logits(const nn::NetworkModel& teacher,
                                                    const nn::TrainingSet& data);
DistillationBatch make_batch(const nn::TrainingSet& data,
                             const std::vector<std::vector<nn::Logits>>& logits,
                             std::span<const std::size_t> indices);

// ---- server state ---------------------------------------------------------

struct MainModelState {
    nn::NetworkModel model;
    FisherDiagonal fisher;
    std::uint64_t version = 0;
    std::uint64_t n_samples = 0;  // samples the main-model has been trained on
};

struct GradientMessage {
    std::size_t sender = 0;
    std::uint64_t base_version = 0;
    std::vector<double> gradient;
    std::size_t batch_size = 0;
    double loss = 0.0;
};

/// Eq. 5: W' = W - mu * sum of message gradients; version + 1.
MainModelState server_apply(const MainModelState& main, std::span<const GradientMessage> messages,
                            double mu);
/// Eq. 6: F' = (1 - alpha) F_main + alpha F_agent.
FisherDiagonal merge_fisher(const FisherDiagonal& main, const FisherDiagonal& agent, double alpha);
double compute_alpha(std::uint64_t n_main, std::uint64_t n_agent,
                     AlphaMode mode = AlphaMode::agent_fraction);

// ---- transcript -----------------------------------------------------------

struct TranscriptEvent {
    std::uint64_t seq = 0;
    std::string kind;  // fetch, begin_distill, submit, apply, receive, end_distill, fisher_merge
    std::int64_t agent = -1;  // -1 for server-side apply
    std::uint64_t version = 0;
    std::uint64_t base_version = 0;
    std::uint64_t staleness = 0;
    double loss = 0.0;
    std::size_t messages = 0;
    double alpha = 0.0;
};

std::string to_json_line(const TranscriptEvent& e);
TranscriptEvent parse_transcript_line(const std::string& line);
void write_transcript(std::ostream& out, std::span<const TranscriptEvent> events);
std::vector<TranscriptEvent> read_transcript(std::istream& in);

// ---- scheduling -----------------------------------------------------------

enum class ScheduleMode { live, round_robin, replay };

/// Orders agent-server interactions. Live mode lets the server mutex decide;
/// round-robin hands turns to agents in id order; replay follows a recorded
/// transcript.
class Sequencer {
public:
    Sequencer(ScheduleMode mode, std::size_t agents, std::vector<TranscriptEvent> replay = {});

    void acquire(std::size_t agent, const std::string& kind);
    /// Ends a turn; in round-robin mode the turn passes to the next agent.
    void release(std::size_t agent);
    /// The agent makes no further calls.
    void retire(std::size_t agent);
    ScheduleMode mode() const { return mode_; }
    /// Replay mode: every recorded interaction was consumed.
    bool replay_complete();

private:
    void advance_locked();

    ScheduleMode mode_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::vector<bool> active_;
    std::size_t turn_ = 0;
    std::vector<std::pair<std::size_t, std::string>> schedule_;
    std::size_t pos_ = 0;
    bool failed_ = false;
};

/// In-process main-model server. All methods are safe to call concurrently.
class Server {
public:
    Server(MainModelState initial, FederatedConfig config, Sequencer* sequencer = nullptr);

    std::shared_ptr<const MainModelState> fetch(std::size_t agent);
    void begin_distill(std::size_t agent);
    void end_distill(std::size_t agent);
    /// Queues a message and returns its ticket. Applies the queue when the
    /// drain policy is met.
    std::uint64_t submit(GradientMessage message);
    /// Blocks until the ticket's message has been applied; returns the model
    /// current at that point. Yields the turn while waiting under a sequencer.
    std::shared_ptr<const MainModelState> await_applied(std::size_t agent, std::uint64_t ticket);
    double merge_fisher(std::size_t agent, const FisherDiagonal& fisher, std::uint64_t n_agent);

    /// Called once an agent is gone for good; a distillation it left open no
    /// longer holds back the drain policy.
    void agent_finished(std::size_t agent);

    std::shared_ptr<const MainModelState> snapshot() const;
    std::vector<TranscriptEvent> transcript() const;

private:
    void drain_locked();
    void record_locked(TranscriptEvent e);
    void enter(std::size_t agent, const std::string& kind);
    void leave(std::size_t agent);

    FederatedConfig config_;
    Sequencer* seq_;
    mutable std::mutex mu_;
    std::condition_variable applied_cv_;
    std::shared_ptr<const MainModelState> state_;
    std::deque<std::pair<std::uint64_t, GradientMessage>> queue_;
    std::uint64_t next_ticket_ = 0;
    std::uint64_t applied_through_ = 0;  // tickets below this are applied
    std::size_t n_params_ = 0;
    std::vector<std::size_t> distilling_;  // agents between begin and end
    std::vector<TranscriptEvent> events_;
};

/// What an agent needs to reach the server; tests wrap it to inject faults.
class ServerHandle {
public:
    virtual ~ServerHandle() = default;
    virtual std::shared_ptr<const MainModelState> fetch(std::size_t agent) = 0;
    virtual void begin_distill(std::size_t agent) = 0;
    virtual void end_distill(std::size_t agent) = 0;
    virtual std::uint64_t submit(GradientMessage message) = 0;
    virtual std::shared_ptr<const MainModelState> await_applied(std::size_t agent, std::uint64_t ticket) = 0;
    virtual double merge_fisher(std::size_t agent, const FisherDiagonal& fisher, std::uint64_t n_agent) = 0;
};

class LocalHandle : public ServerHandle {
public:
    explicit LocalHandle(Server& server) : server_(server) {}
    std::shared_ptr<const MainModelState> fetch(std::size_t agent) override { return server_.fetch(agent); }
    void begin_distill(std::size_t agent) override { server_.begin_distill(agent); }
    void end_distill(std::size_t agent) override { server_.end_distill(agent); }
    std::uint64_t submit(GradientMessage m) override { return server_.submit(std::move(m)); }
    std::shared_ptr<const MainModelState> await_applied(std::size_t agent, std::uint64_t ticket) override {
        return server_.await_applied(agent, ticket);
    }
    double merge_fisher(std::size_t agent, const FisherDiagonal& f, std::uint64_t n) override {
        return server_.merge_fisher(agent, f, n);
    }

private:
    Server& server_;
};

// ---- agents ---------------------------------------------------------------

struct AgentState {
    std::size_t id = 0;
    ingest::LabeledDataset traffic;  // D_l: raw new traffic assigned to the agent
    sampling::SamplePools pools;
};

struct AgentReport {
    std::size_t id = 0;
    bool completed = false;
    std::string error;
    continual::ContinualReport continual;
    sampling::SamplingReport sampling;
    std::size_t steps = 0;
    std::size_t train_size = 0;
    double alpha = 0.0;
    std::optional<nn::NetworkModel> serving;  // final main-model copy
};

/// Deterministic per-agent seed. The agent's distillation shuffles and
/// dropout draw from Rng(agent_seed(seed, id) ^ kDistillSalt).
std::uint64_t agent_seed(std::uint64_t seed, std::size_t agent);
inline constexpr std::uint64_t kDistillSalt = 0xD157111ull;

/// Splits a dataset into train/validation parts (seeded, stratified by the
/// binary target).
std::pair<nn::TrainingSet, nn::TrainingSet> split_train_val(const nn::TrainingSet& data, double val_fraction,
                                                            std::uint64_t seed);

/// Algorithm 3 for one agent.
AgentReport agent_run(const AgentState& agent, ServerHandle& server, const FederatedConfig& fed,
                      const continual::ContinualConfig& cont, std::uint64_t seed);

struct SimulationConfig {
    MainModelState initial;
    std::vector<AgentState> agents;
    FederatedConfig federated;
    continual::ContinualConfig continual;
    std::uint64_t seed = 1;
    ScheduleMode mode = ScheduleMode::round_robin;
    std::vector<TranscriptEvent> replay;  // required in replay mode
};

struct SimulationResult {
    MainModelState final_state;
    std::vector<TranscriptEvent> transcript;
    std::vector<AgentReport> agents;
};

/// One worker thread per agent against a shared server.
SimulationResult run_simulation(const SimulationConfig& config);

}  // namespace adaptids::federated
