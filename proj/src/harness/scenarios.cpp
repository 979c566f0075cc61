#include "adaptids/harness.hpp"

#include "adaptids/error.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace adaptids::harness {

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return federated::agent_seed(federated::agent_seed(seed, a), b);
}

// Fisher-Yates with explicit modulo so the order does not depend on the
// standard library's distribution implementation.
std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    nn::Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    return idx;
}

ingest::LabeledDataset first_n(const ingest::LabeledDataset& ds, std::size_t n) {
    std::vector<std::size_t> idx(std::min(n, ds.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return ds.subset(idx);
}

constexpr std::uint64_t kCompressSalt = 0xC0335ull;

}  // namespace

ingest::LabeledDataset load_data(const DataSource& source) {
    if (source.synthetic) return ingest::generate_synthetic(*source.synthetic);
    ingest::LabeledDataset all;
    for (const auto& f : source.files) all.append(ingest::read_dataset(f));
    return all;
}

std::vector<std::uint32_t> ClassSplit::attack_labels() const {
    std::vector<std::uint32_t> out;
    for (const auto& [label, _] : eval) {
        if (label != ingest::kBenignLabel) out.push_back(label);
    }
    return out;
}

ClassSplit split_classes(const ingest::LabeledDataset& data, std::size_t eval_per_class,
                         const std::map<std::uint32_t, std::size_t>& train_needs, std::uint64_t seed) {
    std::map<std::uint32_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < data.size(); ++i) by_label[data.samples[i].label].push_back(i);
    for (const auto& [label, need] : train_needs) {
        if (!by_label.count(label)) {
            throw InsufficientPool("class " + std::to_string(label) + " has no flows; the scenario needs " +
                                   std::to_string(eval_per_class + need));
        }
    }
    ClassSplit split;
    split.catalog = data.catalog;
    for (const auto& [label, members] : by_label) {
        const auto it = train_needs.find(label);
        const std::size_t need = it == train_needs.end() ? 0 : it->second;
        const auto name = data.catalog.count(label) ? data.catalog.at(label) : std::to_string(label);
        if (members.size() < eval_per_class + need) {
            throw InsufficientPool("class " + name + " has " + std::to_string(members.size()) +
                                   " flows; the scenario needs " + std::to_string(eval_per_class + need) + " (" +
                                   std::to_string(eval_per_class) + " held out + " + std::to_string(need) +
                                   " for training)");
        }
        const auto order = shuffled(members.size(), derive(seed, label, 0x5B17));
        std::vector<std::size_t> ev, tr;
        for (std::size_t i = 0; i < order.size(); ++i) (i < eval_per_class ? ev : tr).push_back(members[order[i]]);
        split.eval[label] = data.subset(ev);
        split.train[label] = data.subset(tr);
    }
    if (!split.eval.count(ingest::kBenignLabel)) throw InsufficientPool("the scenario needs benign flows");
    return split;
}

double detection_rate(const nn::NetworkModel& model, const ClassSplit& split,
                      const std::vector<std::uint32_t>& attack_labels) {
    ingest::LabeledDataset eval = split.eval.at(ingest::kBenignLabel);
    for (auto label : attack_labels) eval.append(split.eval.at(label));
    const auto m = nn::evaluate(model, eval);
    return 0.5 * (m.recall_benign + m.recall_attack);
}

InitialModel train_initial(const nn::Architecture& arch, const ClassSplit& split,
                           const std::vector<std::uint32_t>& known, std::size_t per_class,
                           const InitialTrainingConfig& config, std::uint64_t seed) {
    if (known.empty()) throw InvalidInput("initial training needs at least one known class");
    InitialModel out;
    out.pools.benign.data.catalog = split.catalog;
    ingest::LabeledDataset data;
    data.catalog = split.catalog;
    const auto benign = first_n(split.train.at(ingest::kBenignLabel), per_class);
    data.append(benign);
    sampling::append_to_pool(out.pools.benign, benign, out.pools.cap, derive(seed, 0, 0xB0));
    for (std::size_t i = 0; i < known.size(); ++i) {
        const std::size_t share = per_class / known.size() + (i < per_class % known.size() ? 1 : 0);
        const auto flows = first_n(split.train.at(known[i]), share);
        data.append(flows);
        auto& pool = out.pools.attacks[known[i]];
        sampling::append_to_pool(pool, flows, out.pools.cap, derive(seed, known[i], 0xA0));
    }
    const auto set = nn::make_training_set(arch, data);
    out.train_size = set.size();
    out.model = nn::build_model(arch, seed);
    nn::OptimizerState opt;
    opt.learning_rate = config.learning_rate;
    out.report = nn::train(out.model, set, nn::all_trainable(out.model), {config.epochs, config.batch_size, seed}, opt,
                           nn::cross_entropy_objective(set.targets));
    out.fisher = continual::compute_fisher_diagonal(out.model, set);
    return out;
}

nn::NetworkModel compress_model(const continual::ExpandedNetwork& teacher, const nn::Architecture& target,
                                const nn::TrainingSet& data, const CompressConfig& config, std::uint64_t seed) {
    if (!(target == teacher.prv.architecture())) {
        throw InvalidInput("compression target must be the pre-expansion architecture");
    }
    if (data.size() == 0) throw InvalidInput("compression needs a non-empty dataset");
    nn::NetworkModel student = teacher.prv;
    const auto logits = federated::teacher_logits(teacher.model, data);
    const std::vector<double> none(student.param_count(), 0.0);
    const auto mask = nn::all_trainable(student);
    nn::OptimizerState opt;
    opt.learning_rate = config.learning_rate;
    nn::Rng rng(seed);
    std::vector<double> grad(student.param_count());
    for (std::size_t e = 0; e < config.epochs; ++e) {
        for (const auto& idx : nn::epoch_batches(data.size(), config.batch_size, rng)) {
            federated::distillation_loss(student, federated::make_batch(data, logits, idx), none, none, 0.0,
                                         config.temperature, grad, nn::Mode::train, &rng);
            nn::sgd_step(student, grad, mask, opt);
        }
    }
    return student;
}

UpdateResult continual_update(const nn::NetworkModel& model, const continual::FisherDiagonal& fisher,
                              const ingest::LabeledDataset& new_flows, sampling::SamplePools& pools,
                              const continual::ContinualConfig& cont, const CompressConfig& compress,
                              double val_fraction, std::uint64_t seed) {
    auto task = sampling::build_task_dataset(new_flows, pools, seed);
    pools = std::move(task.pools);
    const auto data = nn::make_training_set(model.architecture(), task.data);
    const auto [train, val] = federated::split_train_val(data, val_fraction, seed);
    auto cfg = cont;
    cfg.seed = seed;
    UpdateResult out;
    out.sampling = task.report;
    out.train_size = train.size();
    out.continual = continual::continual_learn(model, train, val, fisher, cfg);
    out.compressed = compress_model(out.continual.net, model.architecture(), train, compress, seed ^ kCompressSalt);
    out.fisher = continual::compute_fisher_diagonal(out.compressed, train);
    return out;
}

// ---- scenarios ------------------------------------------------------------

namespace {

std::vector<std::uint32_t> known_of(const ScenarioConfig& c, const std::vector<std::uint32_t>& attacks) {
    if (c.known_classes.empty()) return attacks;
    for (auto k : c.known_classes) {
        if (std::find(attacks.begin(), attacks.end(), k) == attacks.end()) {
            throw ConfigError("known class " + std::to_string(k) + " is not an attack class of the data");
        }
    }
    return c.known_classes;
}

std::vector<std::uint32_t> attack_labels_of(const ingest::LabeledDataset& data) {
    std::set<std::uint32_t> labels;
    for (const auto& s : data.samples) {
        if (s.label != ingest::kBenignLabel) labels.insert(s.label);
    }
    return {labels.begin(), labels.end()};
}

}  // namespace

PairwiseResult scenario_pairwise(const ScenarioConfig& config) {
    config.validate();
    const auto seed = *config.seed;
    const auto data = load_data(config.data);
    const auto attacks = attack_labels_of(data);
    if (attacks.size() < 2) throw InsufficientPool("pairwise scenario needs at least 2 attack classes");
    const auto known = known_of(config, attacks);

    std::map<std::uint32_t, std::size_t> needs{{ingest::kBenignLabel, config.train_per_class}};
    for (auto a : attacks) needs[a] = config.update_flows;
    for (auto k : known) needs[k] = std::max(config.train_per_class, config.update_flows);
    const auto split = split_classes(data, config.eval_per_class, needs, seed);
    const auto arch = config.resolved_architecture();

    PairwiseResult result;
    result.catalog = split.catalog;
    for (auto k : known) {
        const auto init = train_initial(arch, split, {k}, config.train_per_class, config.initial, derive(seed, k));
        result.initial_accuracy[k] = detection_rate(init.model, split, {k});
        for (auto z : attacks) {
            if (z == k) continue;
            PairRecord rec{k, z};
            rec.before_zero_day = detection_rate(init.model, split, {z});
            auto pools = init.pools;
            const auto upd = continual_update(init.model, init.fisher, first_n(split.train.at(z), config.update_flows),
                                              pools, config.continual, config.compress, config.federated.val_fraction,
                                              derive(seed, k, z));
            rec.after_zero_day = detection_rate(upd.compressed, split, {z});
            rec.after_initial = detection_rate(upd.compressed, split, {k});
            rec.fallback = upd.continual.report.fallback;
            result.pairs.push_back(rec);
        }
    }
    return result;
}

SequentialResult scenario_sequential(const ScenarioConfig& config) {
    config.validate();
    const auto seed = *config.seed;
    const auto data = load_data(config.data);
    const auto attacks = attack_labels_of(data);
    if (attacks.size() < 2) throw InsufficientPool("sequential scenario needs at least 3 classes (benign + 2 attacks)");

    std::map<std::uint32_t, std::size_t> needs{{ingest::kBenignLabel, config.train_per_class}};
    for (auto a : attacks) needs[a] = std::max(config.train_per_class, config.update_flows);
    const auto split = split_classes(data, config.eval_per_class, needs, seed);
    const auto arch = config.resolved_architecture();

    SequentialResult result;
    result.catalog = split.catalog;
    const std::size_t n_steps = attacks.size();
    result.mean_before_zero_day.assign(n_steps, 0.0);
    result.mean_after_zero_day.assign(n_steps, 0.0);
    result.mean_known.assign(n_steps, 0.0);
    for (std::size_t p = 0; p < config.permutations; ++p) {
        std::vector<std::uint32_t> order;
        for (auto i : shuffled(attacks.size(), derive(seed, 0x9E, p))) order.push_back(attacks[i]);
        result.orders.push_back(order);

        const auto init =
            train_initial(arch, split, {order[0]}, config.train_per_class, config.initial, derive(seed, p, 0));
        auto model = init.model;
        auto fisher = init.fisher;
        auto pools = init.pools;
        const double initial = detection_rate(model, split, {order[0]});
        result.steps.push_back({p, 0, order[0], 1, initial, initial, initial, false});
        for (std::size_t j = 1; j < n_steps; ++j) {
            StepRecord rec{p, j, order[j], j + 1};
            rec.before_zero_day = detection_rate(model, split, {order[j]});
            auto upd = continual_update(model, fisher, first_n(split.train.at(order[j]), config.update_flows), pools,
                                        config.continual, config.compress, config.federated.val_fraction,
                                        derive(seed, p, j));
            model = std::move(upd.compressed);
            fisher = std::move(upd.fisher);
            rec.after_zero_day = detection_rate(model, split, {order[j]});
            rec.known = detection_rate(model, split, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(j + 1)});
            rec.fallback = upd.continual.report.fallback;
            result.steps.push_back(rec);
        }
    }
    const double inv = 1.0 / static_cast<double>(config.permutations);
    for (const auto& s : result.steps) {
        result.mean_before_zero_day[s.step] += inv * s.before_zero_day;
        result.mean_after_zero_day[s.step] += inv * s.after_zero_day;
        result.mean_known[s.step] += inv * s.known;
    }
    return result;
}

FederatedResult scenario_federated(const ScenarioConfig& config) {
    config.validate();
    const auto seed = *config.seed;
    const auto data = load_data(config.data);
    const auto attacks = attack_labels_of(data);
    if (attacks.size() < 2) throw InsufficientPool("federated scenario needs at least 2 attack classes");
    const auto known = known_of(config, attacks);

    std::map<std::uint32_t, std::size_t> needs{{ingest::kBenignLabel, config.train_per_class}};
    for (auto a : attacks) needs[a] = config.update_flows;
    for (auto k : known) needs[k] = std::max(config.train_per_class, config.update_flows);
    const auto split = split_classes(data, config.eval_per_class, needs, seed);
    const auto arch = config.resolved_architecture();

    std::vector<federated::TranscriptEvent> replay;
    if (config.replay) {
        std::ifstream in(*config.replay);
        replay = federated::read_transcript(in);
    }

    FederatedResult result;
    result.catalog = split.catalog;
    for (auto k : known) {
        FederatedRow row;
        row.known = k;
        for (auto a : attacks) {
            if (a != k) row.unknown.push_back(a);
        }
        const auto init = train_initial(arch, split, {k}, config.train_per_class, config.initial, derive(seed, k));
        row.known_before = detection_rate(init.model, split, {k});
        row.unknowns_before = detection_rate(init.model, split, row.unknown);

        federated::SimulationConfig sim;
        sim.initial = {init.model, init.fisher, 0, init.train_size};
        for (std::size_t i = 0; i < row.unknown.size(); ++i) {
            sim.agents.push_back({i, first_n(split.train.at(row.unknown[i]), config.update_flows), init.pools});
        }
        sim.federated = config.federated;
        sim.continual = config.continual;
        sim.seed = derive(seed, k, 0xFED);
        sim.mode = config.replay          ? federated::ScheduleMode::replay
                   : config.deterministic ? federated::ScheduleMode::round_robin
                                          : federated::ScheduleMode::live;
        sim.replay = replay;
        row.simulation = federated::run_simulation(sim);
        row.agents = row.simulation.agents;
        const auto& final_model = row.simulation.final_state.model;
        row.unknowns_after = detection_rate(final_model, split, row.unknown);
        row.known_after = detection_rate(final_model, split, {k});
        result.rows.push_back(std::move(row));
    }
    return result;
}

EarlyDetectionResult scenario_early_detection(const ScenarioConfig& config) {
    config.validate();
    const auto seed = *config.seed;
    const auto data = load_data(config.data);
    const auto attacks = attack_labels_of(data);
    if (attacks.empty()) throw InsufficientPool("early-detection scenario needs at least 1 attack class");

    std::map<std::uint32_t, std::size_t> needs{{ingest::kBenignLabel, config.train_per_class}};
    for (auto a : attacks) needs[a] = (config.train_per_class + attacks.size() - 1) / attacks.size();
    const auto split = split_classes(data, config.eval_per_class, needs, seed);

    EarlyDetectionResult result;
    const auto init = train_initial(config.resolved_architecture(), split, attacks, config.train_per_class,
                                    config.initial, derive(seed, 0xED));
    result.model = init.model;
    result.final_accuracy = detection_rate(init.model, split, attacks);

    // Balanced evaluation: the benign held-out flows plus as many attack
    // flows spread evenly over the attack classes.
    ingest::LabeledDataset eval = split.eval.at(ingest::kBenignLabel);
    for (std::size_t i = 0; i < attacks.size(); ++i) {
        const std::size_t share =
            config.eval_per_class / attacks.size() + (i < config.eval_per_class % attacks.size() ? 1 : 0);
        eval.append(first_n(split.eval.at(attacks[i]), share));
    }
    result.curve = seqlabel::early_detection_curve(init.model, eval, config.workers);

    std::size_t decided = 0, correct = 0, packets = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto& s = eval.samples[i];
        const auto d = seqlabel::decide(seqlabel::stream_probabilities(init.model, *s.matrix, i, s.label),
                                        config.decision_threshold, config.min_packets);
        if (d.verdict == seqlabel::Verdict::undecided) continue;
        ++decided;
        packets += d.packet;
        correct += (d.verdict == seqlabel::Verdict::attack) == (s.label != ingest::kBenignLabel);
    }
    result.decided_fraction = static_cast<double>(decided) / static_cast<double>(eval.size());
    if (decided) {
        result.mean_decision_packet = static_cast<double>(packets) / static_cast<double>(decided);
        result.decision_accuracy = static_cast<double>(correct) / static_cast<double>(decided);
    }
    return result;
}

}  // namespace adaptids::harness
