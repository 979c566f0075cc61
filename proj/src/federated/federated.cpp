#include "adaptids/error.hpp"
#include "adaptids/federated.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <thread>

namespace adaptids::federated {

using nn::Logits;
using nn::NetworkModel;
using nn::TrainingSet;

void FederatedConfig::validate() const {
    if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
    if (!(mu > 0.0)) throw ConfigError("mu must be positive");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
}

// ---- Eq. 4 ----------------------------------------------------------------

double distillation_loss(const NetworkModel& main, const DistillationBatch& batch, const FisherDiagonal& fisher,
                         std::span<const double> w_init, double lambda, double temperature, std::span<double> grad,
                         nn::Mode mode, nn::Rng* rng, bool strict_paper_penalty) {
    const auto n = main.param_count();
    if (batch.size() == 0) throw InvalidInput("empty distillation batch");
    if (batch.labels.size() != batch.size() || batch.teacher_logits.size() != batch.size()) {
        throw ShapeMismatch("distillation batch inputs, labels and teacher logits differ in length");
    }
    if (fisher.size() != n || w_init.size() != n || grad.size() != n) {
        throw ShapeMismatch("Fisher diagonal, W_init and gradient must match the main-model parameter count");
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    double total = 0.0;
    std::vector<Logits> dlogits;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto out = nn::forward(main, batch.inputs[s], mode, rng);
        const auto& teacher = batch.teacher_logits[s];
        if (teacher.size() != out.logits.size()) {
            throw ShapeMismatch("teacher provides " + std::to_string(teacher.size()) + " steps, student produced " +
                                std::to_string(out.logits.size()));
        }
        const double steps = static_cast<double>(out.logits.size());
        dlogits.resize(out.logits.size());
        double sample = 0.0;
        for (std::size_t t = 0; t < out.logits.size(); ++t) {
            const auto ce = nn::cross_entropy(out.logits[t], batch.labels[s]);
            const auto kd = nn::distillation_kd(out.logits[t], teacher[t], temperature);
            sample += ce.loss + kd.loss;
            for (std::size_t c = 0; c < 2; ++c) dlogits[t][c] = (ce.dlogits[c] + kd.dlogits[c]) / steps;
        }
        total += sample / steps;
        nn::backward(main, batch.inputs[s], out.cache, dlogits, grad);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grad) g *= inv;
    double loss = total * inv;
    if (lambda != 0.0) {
        const auto p = main.params();
        double drift = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = p[i] - w_init[i];
            if (strict_paper_penalty) {
                drift += fisher[i] * d;
                grad[i] += lambda * fisher[i];
            } else {
                drift += fisher[i] * d * d;
                grad[i] += 2.0 * lambda * fisher[i] * d;
            }
        }
        loss += lambda * drift;
    }
    return loss;
}

std::vector<std::vector<Logits>> teacher_logits(const NetworkModel& teacher, const TrainingSet& data) {
    std::vector<std::vector<Logits>> out;
    out.reserve(data.size());
    for (const auto& x : data.inputs) out.push_back(nn::forward(teacher, x, nn::Mode::eval).logits);
    return out;
}

DistillationBatch make_batch(const TrainingSet& data, const std::vector<std::vector<Logits>>& logits,
                             std::span<const std::size_t> indices) {
    DistillationBatch b;
    for (auto i : indices) {
        b.inputs.push_back(data.inputs.at(i));
        b.labels.push_back(data.targets.at(i));
        b.teacher_logits.push_back(logits.at(i));
    }
    return b;
}

// ---- Eq. 5 / Eq. 6 --------------------------------------------------------

MainModelState server_apply(const MainModelState& main, std::span<const GradientMessage> messages, double mu) {
    if (messages.empty()) throw InvalidInput("server_apply needs at least one message");
    const auto n = main.model.param_count();
    std::vector<double> sum(n, 0.0);
    for (const auto& m : messages) {
        if (m.gradient.size() != n) {
            throw ShapeMismatch("gradient from agent " + std::to_string(m.sender) + " has " +
                                std::to_string(m.gradient.size()) + " entries, main-model has " + std::to_string(n));
        }
        for (std::size_t i = 0; i < n; ++i) sum[i] += m.gradient[i];
    }
    MainModelState next = main;
    auto p = next.model.params();
    for (std::size_t i = 0; i < n; ++i) p[i] -= mu * sum[i];
    ++next.version;
    return next;
}

FisherDiagonal merge_fisher(const FisherDiagonal& main, const FisherDiagonal& agent, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("alpha must lie in [0, 1]");
    if (main.size() != agent.size()) throw ShapeMismatch("Fisher diagonals differ in length");
    FisherDiagonal out(main.size());
    for (std::size_t i = 0; i < main.size(); ++i) out[i] = (1.0 - alpha) * main[i] + alpha * agent[i];
    return out;
}

double compute_alpha(std::uint64_t n_main, std::uint64_t n_agent, AlphaMode mode) {
    if (mode == AlphaMode::raw_ratio) {
        if (n_main == 0) throw InvalidInput("raw-ratio alpha needs a positive main-model sample count");
        return std::min(1.0, static_cast<double>(n_agent) / static_cast<double>(n_main));
    }
    if (n_main + n_agent == 0) throw InvalidInput("alpha needs a positive total sample count");
    return static_cast<double>(n_agent) / static_cast<double>(n_main + n_agent);
}

// ---- transcript -----------------------------------------------------------

std::string to_json_line(const TranscriptEvent& e) {
    nlohmann::ordered_json j{{"seq", e.seq},         {"event", e.kind},        {"agent", e.agent},
                             {"version", e.version}, {"base_version", e.base_version},
                             {"staleness", e.staleness}, {"loss", e.loss}, {"messages", e.messages},
                             {"alpha", e.alpha}};
    return j.dump();
}

TranscriptEvent parse_transcript_line(const std::string& line) {
    try {
        const auto j = nlohmann::json::parse(line);
        TranscriptEvent e;
        e.seq = j.at("seq").get<std::uint64_t>();
        e.kind = j.at("event").get<std::string>();
        e.agent = j.at("agent").get<std::int64_t>();
        e.version = j.value("version", std::uint64_t{0});
        e.base_version = j.value("base_version", std::uint64_t{0});
        e.staleness = j.value("staleness", std::uint64_t{0});
        e.loss = j.value("loss", 0.0);
        e.messages = j.value("messages", std::size_t{0});
        e.alpha = j.value("alpha", 0.0);
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw InvalidInput(std::string("bad transcript line: ") + ex.what());
    }
}

void write_transcript(std::ostream& out, std::span<const TranscriptEvent> events) {
    for (const auto& e : events) out << to_json_line(e) << '\n';
}

std::vector<TranscriptEvent> read_transcript(std::istream& in) {
    std::vector<TranscriptEvent> events;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) events.push_back(parse_transcript_line(line));
    }
    return events;
}

// ---- sequencer ------------------------------------------------------------

Sequencer::Sequencer(ScheduleMode mode, std::size_t agents, std::vector<TranscriptEvent> replay)
    : mode_(mode), active_(agents, true) {
    if (mode == ScheduleMode::replay) {
        if (replay.empty()) throw ConfigError("replay mode needs a recorded transcript");
        for (const auto& e : replay) {
            if (e.kind == "apply") continue;
            if (e.agent < 0 || static_cast<std::size_t>(e.agent) >= agents) {
                throw ConfigError("transcript names agent " + std::to_string(e.agent) + " outside the scenario");
            }
            schedule_.emplace_back(static_cast<std::size_t>(e.agent), e.kind);
        }
    }
}

void Sequencer::acquire(std::size_t agent, const std::string& kind) {
    if (mode_ == ScheduleMode::live) return;
    std::unique_lock lock(mu_);
    if (mode_ == ScheduleMode::round_robin) {
        cv_.wait(lock, [&] { return turn_ == agent; });
        return;
    }
    cv_.wait(lock, [&] { return failed_ || pos_ >= schedule_.size() || schedule_[pos_].first == agent; });
    if (failed_ || pos_ >= schedule_.size() || schedule_[pos_].second != kind) {
        failed_ = true;
        cv_.notify_all();
        throw Error("replay diverged: agent " + std::to_string(agent) + " attempted '" + kind + "' at step " +
                    std::to_string(pos_));
    }
}

bool Sequencer::replay_complete() {
    std::lock_guard lock(mu_);
    return !failed_ && pos_ == schedule_.size();
}

void Sequencer::release(std::size_t agent) {
    if (mode_ == ScheduleMode::live) return;
    {
        std::lock_guard lock(mu_);
        if (mode_ == ScheduleMode::replay) {
            ++pos_;
        } else if (turn_ == agent) {
            advance_locked();
        }
    }
    cv_.notify_all();
}

void Sequencer::retire(std::size_t agent) {
    if (mode_ == ScheduleMode::live) return;
    {
        std::lock_guard lock(mu_);
        active_.at(agent) = false;
        if (mode_ == ScheduleMode::round_robin && turn_ == agent) advance_locked();
    }
    cv_.notify_all();
}

void Sequencer::advance_locked() {
    const auto n = active_.size();
    for (std::size_t step = 1; step <= n; ++step) {
        const auto next = (turn_ + step) % n;
        if (active_[next]) {
            turn_ = next;
            return;
        }
    }
}

// ---- server ---------------------------------------------------------------

Server::Server(MainModelState initial, FederatedConfig config, Sequencer* sequencer)
    : config_(std::move(config)), seq_(sequencer),
      state_(std::make_shared<const MainModelState>(std::move(initial))), n_params_(state_->model.param_count()) {
    config_.validate();
    if (state_->fisher.size() != state_->model.param_count()) {
        throw ShapeMismatch("main-model Fisher diagonal length differs from its parameter count");
    }
}

void Server::enter(std::size_t agent, const std::string& kind) {
    if (seq_) seq_->acquire(agent, kind);
}

void Server::leave(std::size_t agent) {
    if (seq_) seq_->release(agent);
}

void Server::record_locked(TranscriptEvent e) {
    e.seq = events_.size();
    events_.push_back(std::move(e));
}

std::shared_ptr<const MainModelState> Server::fetch(std::size_t agent) {
    enter(agent, "fetch");
    std::shared_ptr<const MainModelState> snap;
    {
        std::lock_guard lock(mu_);
        snap = state_;
        record_locked({0, "fetch", static_cast<std::int64_t>(agent), snap->version});
    }
    leave(agent);
    return snap;
}

void Server::begin_distill(std::size_t agent) {
    enter(agent, "begin_distill");
    {
        std::lock_guard lock(mu_);
        distilling_.push_back(agent);
        record_locked({0, "begin_distill", static_cast<std::int64_t>(agent), state_->version});
    }
    leave(agent);
}

void Server::end_distill(std::size_t agent) {
    enter(agent, "end_distill");
    {
        std::lock_guard lock(mu_);
        std::erase(distilling_, agent);
        record_locked({0, "end_distill", static_cast<std::int64_t>(agent), state_->version});
        drain_locked();
    }
    applied_cv_.notify_all();
    leave(agent);
}

void Server::agent_finished(std::size_t agent) {
    {
        std::lock_guard lock(mu_);
        if (std::erase(distilling_, agent) == 0) return;
        drain_locked();
    }
    applied_cv_.notify_all();
}

std::uint64_t Server::submit(GradientMessage message) {
    const auto agent = message.sender;
    if (message.gradient.size() != n_params_) {
        throw ShapeMismatch("gradient message length " + std::to_string(message.gradient.size()) +
                            " differs from main-model parameter count " + std::to_string(n_params_));
    }
    enter(agent, "submit");
    std::uint64_t ticket = 0;
    {
        std::lock_guard lock(mu_);
        ticket = next_ticket_++;
        TranscriptEvent e{0, "submit", static_cast<std::int64_t>(agent), state_->version, message.base_version};
        e.staleness = state_->version - message.base_version;
        e.loss = message.loss;
        record_locked(e);
        queue_.emplace_back(ticket, std::move(message));
        drain_locked();
    }
    applied_cv_.notify_all();
    leave(agent);
    return ticket;
}

void Server::drain_locked() {
    // Eq. 5 sums the messages that arrived since the last update; here a
    // batch closes once every distilling agent has one message queued.
    for (;;) {
        std::size_t need = std::max<std::size_t>(distilling_.size(), 1);
        if (config_.max_batch > 0) need = std::min(need, config_.max_batch);
        if (queue_.empty() || (queue_.size() < need && !distilling_.empty())) return;
        const std::size_t take = config_.max_batch > 0 ? std::min(queue_.size(), config_.max_batch) : queue_.size();
        std::vector<GradientMessage> batch;
        std::uint64_t stale = 0;
        for (std::size_t i = 0; i < take; ++i) {
            stale = std::max(stale, state_->version - queue_.front().second.base_version);
            applied_through_ = queue_.front().first + 1;
            batch.push_back(std::move(queue_.front().second));
            queue_.pop_front();
        }
        state_ = std::make_shared<const MainModelState>(server_apply(*state_, batch, config_.mu));
        TranscriptEvent e{0, "apply", -1, state_->version};
        e.staleness = stale;
        e.messages = batch.size();
        record_locked(e);
    }
}

std::shared_ptr<const MainModelState> Server::await_applied(std::size_t agent, std::uint64_t ticket) {
    if (!seq_ || seq_->mode() == ScheduleMode::live) {
        std::unique_lock lock(mu_);
        applied_cv_.wait(lock, [&] { return applied_through_ > ticket; });
        record_locked({0, "receive", static_cast<std::int64_t>(agent), state_->version});
        return state_;
    }
    for (;;) {
        enter(agent, "receive");
        std::shared_ptr<const MainModelState> snap;
        {
            std::lock_guard lock(mu_);
            if (applied_through_ > ticket) {
                snap = state_;
                record_locked({0, "receive", static_cast<std::int64_t>(agent), snap->version});
            }
        }
        if (!snap && seq_->mode() == ScheduleMode::replay) {
            throw Error("replay diverged: message of agent " + std::to_string(agent) + " not applied when expected");
        }
        // Without a result this turn is a yield; the agent tries again later.
        leave(agent);
        if (snap) return snap;
    }
}

double Server::merge_fisher(std::size_t agent, const FisherDiagonal& fisher, std::uint64_t n_agent) {
    enter(agent, "fisher_merge");
    double alpha = 0.0;
    {
        std::lock_guard lock(mu_);
        alpha = compute_alpha(state_->n_samples, n_agent, config_.alpha_mode);
        auto next = std::make_shared<MainModelState>(*state_);
        next->fisher = federated::merge_fisher(state_->fisher, fisher, alpha);
        next->n_samples += n_agent;
        state_ = std::move(next);
        TranscriptEvent e{0, "fisher_merge", static_cast<std::int64_t>(agent), state_->version};
        e.alpha = alpha;
        record_locked(e);
    }
    leave(agent);
    return alpha;
}

std::shared_ptr<const MainModelState> Server::snapshot() const {
    std::lock_guard lock(mu_);
    return state_;
}

std::vector<TranscriptEvent> Server::transcript() const {
    std::lock_guard lock(mu_);
    return events_;
}

// ---- agents ---------------------------------------------------------------

std::uint64_t agent_seed(std::uint64_t seed, std::size_t agent) {
    // splitmix64 finalizer over (seed, agent)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(agent) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::pair<TrainingSet, TrainingSet> split_train_val(const TrainingSet& data, double val_fraction, std::uint64_t seed) {
    if (data.size() < 2) throw InvalidInput("need at least 2 samples to split train and validation sets");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train_idx, val_idx;
    for (int cls = 0; cls < 2; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data.targets[i] == cls) idx.push_back(i);
        }
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
        auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
        if (idx.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
        val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    if (train_idx.empty() || val_idx.empty()) throw InvalidInput("train/validation split left a side empty");
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    auto pick = [&](const std::vector<std::size_t>& idx) {
        TrainingSet s;
        for (auto i : idx) {
            s.inputs.push_back(data.inputs[i]);
            s.targets.push_back(data.targets[i]);
        }
        return s;
    };
    return {pick(train_idx), pick(val_idx)};
}

namespace {

template <class F>
auto with_retry(const FederatedConfig& cfg, F&& call) {
    for (std::size_t attempt = 0;; ++attempt) {
        try {
            return call();
        } catch (const ServerUnavailable&) {
            if (attempt >= cfg.retries) throw;
            const double wait = cfg.backoff_ms * std::pow(2.0, static_cast<double>(attempt));
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(wait));
        }
    }
}

}  // namespace

AgentReport agent_run(const AgentState& agent, ServerHandle& server, const FederatedConfig& fed,
                      const continual::ContinualConfig& cont, std::uint64_t seed) {
    AgentReport report;
    report.id = agent.id;
    const auto id = agent.id;
    try {
        fed.validate();
        const auto s = agent_seed(seed, id);
        const auto task = sampling::build_task_dataset(agent.traffic, agent.pools, s);
        report.sampling = task.report;

        const auto fetched = with_retry(fed, [&] { return server.fetch(id); });
        const auto data = nn::make_training_set(fetched->model.architecture(), task.data);
        const auto [train, val] = split_train_val(data, fed.val_fraction, s);
        report.train_size = train.size();

        auto cfg = cont;
        cfg.seed = s;
        const auto learned = continual::continual_learn(fetched->model, train, val, fetched->fisher, cfg);
        report.continual = learned.report;
        const auto logits = teacher_logits(learned.net.model, train);

        // Re-fetch in case other agents updated the main-model meanwhile.
        auto current = with_retry(fed, [&] { return server.fetch(id); });
        const std::vector<double> w_init(current->model.params().begin(), current->model.params().end());
        const auto fisher = current->fisher;
        with_retry(fed, [&] { server.begin_distill(id); });

        nn::Rng rng(s ^ kDistillSalt);
        std::vector<double> grad(current->model.param_count());
        for (std::size_t epoch = 0; epoch < fed.epochs; ++epoch) {
            for (const auto& idx : nn::epoch_batches(train.size(), fed.batch_size, rng)) {
                const auto batch = make_batch(train, logits, idx);
                const double loss = distillation_loss(current->model, batch, fisher, w_init, fed.lambda,
                                                      fed.temperature, grad, nn::Mode::train, &rng,
                                                      fed.strict_paper_penalty);
                GradientMessage msg{id, current->version, grad, idx.size(), loss};
                const auto ticket = with_retry(fed, [&] { return server.submit(msg); });
                current = with_retry(fed, [&] { return server.await_applied(id, ticket); });
                ++report.steps;
            }
        }
        with_retry(fed, [&] { server.end_distill(id); });

        const auto f_agent = continual::compute_fisher_diagonal(current->model, train);
        report.alpha = with_retry(fed, [&] { return server.merge_fisher(id, f_agent, train.size()); });
        report.serving = with_retry(fed, [&] { return server.fetch(id); })->model;
        report.completed = true;
    } catch (const ServerUnavailable& e) {
        report.error = std::string("server unreachable: ") + e.what();
    } catch (const std::exception& e) {
        report.error = e.what();
    }
    return report;
}

SimulationResult run_simulation(const SimulationConfig& config) {
    if (config.agents.empty()) throw ConfigError("simulation needs at least one agent");
    config.federated.validate();
    config.continual.validate();
    for (std::size_t i = 0; i < config.agents.size(); ++i) {
        if (config.agents[i].id != i) throw ConfigError("agent ids must be 0..n-1 in order");
    }
    Sequencer seq(config.mode, config.agents.size(), config.replay);
    Server server(config.initial, config.federated, &seq);
    LocalHandle handle(server);

    SimulationResult result;
    result.agents.resize(config.agents.size());
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < config.agents.size(); ++i) {
        workers.emplace_back([&, i] {
            result.agents[i] = agent_run(config.agents[i], handle, config.federated, config.continual, config.seed);
            server.agent_finished(i);
            seq.retire(i);
        });
    }
    for (auto& w : workers) w.join();
    if (config.mode == ScheduleMode::replay && !seq.replay_complete()) {
        throw Error("replay did not follow the recorded transcript to its end");
    }
    result.final_state = *server.snapshot();
    result.transcript = server.transcript();
    return result;
}

}  // namespace adaptids::federated
