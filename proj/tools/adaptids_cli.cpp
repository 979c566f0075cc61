// adaptids: command-line front end for ingestion, training, continual and
// federated updates, per-packet labeling and scenario reports.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data error,
// 1 anything else.

#include "adaptids/error.hpp"
#include "adaptids/harness.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>

namespace {

using namespace adaptids;
using ojson = nlohmann::ordered_json;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool deterministic = false;
};

harness::ScenarioConfig base_config(const Globals& g) {
    harness::ScenarioConfig c = g.config.empty() ? harness::ScenarioConfig{} : harness::load_config(g.config);
    if (g.seed) c.seed = *g.seed;
    if (!c.seed) c.seed = 1;
    if (g.deterministic) c.deterministic = true;
    return c;
}

std::filesystem::path require_out(const Globals& g) {
    if (g.out.empty()) throw ConfigError("--out is required");
    return g.out;
}

void write_json(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text << '\n';
    if (!out) throw Error("cannot write " + path.string());
}

std::filesystem::path sidecar(const std::filesystem::path& out, const std::string& suffix) {
    return out.string() + suffix;
}

ojson metrics_of(const nn::Metrics& m) {
    return {{"detection_rate", m.detection_rate},
            {"recall_benign", m.recall_benign},
            {"recall_attack", m.recall_attack},
            {"total", m.total}};
}

// ---- subcommands ----------------------------------------------------------

struct IngestArgs {
    std::vector<std::string> pcaps;
    std::string labels;
    bool drop_unmatched = false;
    bool keep_addresses = false;
    double idle_timeout = ingest::kDefaultIdleTimeoutSeconds;
};

int run_ingest(const Globals& g, const IngestArgs& a) {
    const auto out = require_out(g);
    std::vector<ingest::RawPacket> packets;
    for (const auto& p : a.pcaps) {
        auto more = ingest::parse_pcap_file(p);
        packets.insert(packets.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    }
    const auto assembled = ingest::assemble_flows(packets, a.idle_timeout);
    std::vector<ingest::LabelRule> rules;
    if (!a.labels.empty()) rules = ingest::read_label_rules(a.labels);
    ingest::LabelOptions opts;
    opts.drop_unmatched = a.drop_unmatched;
    opts.anonymize = !a.keep_addresses;
    const auto labeled = ingest::label_flows(assembled.flows, rules, opts);
    ingest::write_dataset(out, labeled.dataset);
    ojson j{{"packets", packets.size()},
            {"skipped_packets", assembled.skipped},
            {"flows", assembled.flows.size()},
            {"samples", labeled.dataset.size()},
            {"warnings", labeled.warnings}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

struct SynthArgs {
    std::size_t classes = 3;
    std::size_t flows = 200;
    std::size_t min_packets = 5;
    std::size_t max_packets = 40;
    double signature_rate = 0.6;
    std::vector<std::uint32_t> only;
};

int run_synth(const Globals& g, const SynthArgs& a) {
    const auto out = require_out(g);
    ingest::SyntheticSpec s;
    s.classes = a.classes;
    s.flows_per_class = a.flows;
    s.min_packets = a.min_packets;
    s.max_packets = a.max_packets;
    s.signature_rate = a.signature_rate;
    s.only_labels = a.only;
    s.seed = g.seed.value_or(1);
    const auto ds = ingest::generate_synthetic(s);
    ingest::write_dataset(out, ds);
    std::cout << ojson{{"samples", ds.size()}, {"classes", a.classes}, {"out", out.string()}}.dump(2) << '\n';
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string model_kind = "cnn";
    std::vector<std::uint32_t> known;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
};

int run_train_initial(const Globals& g, const TrainArgs& a) {
    const auto out = require_out(g);
    auto c = base_config(g);
    if (a.model_kind != "cnn" && a.model_kind != "lstm") throw ConfigError("--model-kind must be cnn or lstm");
    const auto kind = a.model_kind == "cnn" ? harness::ModelKind::cnn : harness::ModelKind::lstm;
    if (kind != c.model) {
        c.model = kind;
        c.architecture.reset();
    }
    if (a.epochs) c.initial.epochs = *a.epochs;
    if (a.lr) c.initial.learning_rate = *a.lr;
    const auto arch = c.resolved_architecture();
    arch.validate();

    const auto data = ingest::read_dataset(a.data);
    std::vector<std::uint32_t> known = a.known;
    if (known.empty()) {
        for (const auto& [label, _] : data.catalog) {
            if (label != ingest::kBenignLabel && data.count_label(label)) known.push_back(label);
        }
    }
    // All flows of the chosen classes train the model; benign is matched to
    // the attack count.
    std::map<std::uint32_t, std::size_t> needs;
    const auto split = harness::split_classes(data, 0, needs, *c.seed);
    std::size_t attacks = 0;
    for (auto k : known) {
        if (!split.train.count(k)) throw InvalidInput("class " + std::to_string(k) + " has no flows in " + a.data);
        attacks += split.train.at(k).size();
    }
    if (!split.train.count(ingest::kBenignLabel)) throw InvalidInput("training data holds no benign flows");
    const std::size_t per_class = std::min(attacks, split.train.at(ingest::kBenignLabel).size());
    const auto init = harness::train_initial(arch, split, known, per_class, c.initial, *c.seed);

    nn::save_checkpoint(out, init.model, &init.fisher);
    sampling::save_pools(sidecar(out, ".pools"), init.pools);
    ingest::LabeledDataset used = split.train.at(ingest::kBenignLabel);
    for (auto k : known) used.append(split.train.at(k));
    ojson j{{"schema_version", harness::kMetricsSchemaVersion},
            {"command", "train-initial"},
            {"seed", *c.seed},
            {"architecture", ojson::parse(nn::architecture_to_json(arch))},
            {"known_classes", known},
            {"train_size", init.train_size},
            {"epoch_loss", init.report.epoch_loss},
            {"train_metrics", metrics_of(nn::evaluate(init.model, used))}};
    write_json(sidecar(out, ".metrics.json"), j.dump(2));
    std::cout << j.dump(2) << '\n';
    return 0;
}

struct UpdateArgs {
    std::string model;
    std::string new_data;
    std::string pools;
    std::optional<std::ptrdiff_t> k;
    bool no_compress = false;
};

int run_continual_update(const Globals& g, const UpdateArgs& a) {
    const auto out = require_out(g);
    auto c = base_config(g);
    if (a.k) c.continual.k = *a.k;
    c.continual.validate();
    const auto ckpt = nn::load_checkpoint(std::filesystem::path(a.model));
    if (!ckpt.fisher) throw InvalidInput("checkpoint " + a.model + " carries no Fisher diagonal");
    const auto pools_dir = a.pools.empty() ? sidecar(a.model, ".pools") : std::filesystem::path(a.pools);
    auto pools = sampling::load_pools(pools_dir);
    const auto flows = ingest::read_dataset(a.new_data);

    const auto upd = harness::continual_update(ckpt.model, *ckpt.fisher, flows, pools, c.continual, c.compress,
                                               c.federated.val_fraction, *c.seed);
    const auto& written = a.no_compress ? upd.continual.net.model : upd.compressed;
    const auto fisher = a.no_compress ? continual::FisherDiagonal{} : upd.fisher;
    nn::save_checkpoint(out, written, a.no_compress ? nullptr : &fisher);
    sampling::save_pools(sidecar(out, ".pools"), pools);

    const auto& r = upd.continual.report;
    ojson j{{"schema_version", harness::kMetricsSchemaVersion},
            {"command", "continual-update"},
            {"seed", *c.seed},
            {"k", c.continual.k},
            {"compressed", !a.no_compress},
            {"param_count", written.param_count()},
            {"train_size", upd.train_size},
            {"sampling", {{"t", upd.sampling.t}, {"s_a", upd.sampling.s_a}, {"s_b", upd.sampling.s_b}}},
            {"fallback", r.fallback},
            {"val_after_added", r.val_after_added},
            {"val_final", r.val_final},
            {"new_data_metrics", metrics_of(nn::evaluate(written, flows))}};
    write_json(sidecar(out, ".metrics.json"), j.dump(2));
    std::cout << j.dump(2) << '\n';
    return 0;
}

struct FederateArgs {
    std::string replay;
};

int run_federate(const Globals& g, const FederateArgs& a) {
    if (g.config.empty()) throw ConfigError("federate needs --config");
    auto c = base_config(g);
    if (c.kind != harness::ScenarioKind::federated) throw ConfigError("federate needs a federated scenario config");
    if (!g.out.empty()) c.output_dir = g.out;
    if (!a.replay.empty()) c.replay = a.replay;
    std::cout << harness::run_scenario(c) << '\n';
    return 0;
}

struct SeqlabelArgs {
    std::string model;
    std::string data;
    double theta = 0.9;
    std::size_t min_packets = 1;
    std::size_t workers = 1;
};

int run_seqlabel(const Globals& g, const SeqlabelArgs& a) {
    const auto out = require_out(g);
    const auto ckpt = nn::load_checkpoint(std::filesystem::path(a.model));
    const auto data = ingest::read_dataset(a.data);
    const auto curve = seqlabel::early_detection_curve(ckpt.model, data, g.deterministic ? 1 : a.workers);
    {
        std::ofstream csv(out, std::ios::binary);
        seqlabel::write_curve_csv(csv, curve);
        if (!csv) throw Error("cannot write " + out.string());
    }
    std::size_t decided = 0, correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data.samples[i];
        const auto d = seqlabel::decide(seqlabel::stream_probabilities(ckpt.model, *s.matrix, i, s.label), a.theta,
                                        a.min_packets);
        if (d.verdict == seqlabel::Verdict::undecided) continue;
        ++decided;
        correct += (d.verdict == seqlabel::Verdict::attack) == (s.label != ingest::kBenignLabel);
    }
    ojson j{{"flows", data.size()},
            {"curve_length", curve.size()},
            {"decided", decided},
            {"decided_correct", correct},
            {"accuracy_at_15", curve.size() >= 15 ? ojson(curve.mean_accuracy[14]) : ojson(nullptr)},
            {"out", out.string()}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

int run_report(const Globals& g) {
    if (g.config.empty()) throw ConfigError("report needs --config");
    auto c = base_config(g);
    if (!g.out.empty()) c.output_dir = g.out;
    std::cout << harness::run_scenario(c) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive flow-based intrusion detection: training, updates and scenarios", "adaptids"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Scenario or hyperparameter config (JSON)");
    app.add_option("--seed", g.seed, "Seed for every random choice");
    app.add_option("--out", g.out, "Output file or directory");
    app.add_flag("--deterministic", g.deterministic, "Serialize concurrent work for bit-reproducible output");

    IngestArgs ingest_args;
    auto* ingest_cmd = app.add_subcommand("ingest", "pcap captures -> labeled flow-matrix dataset");
    ingest_cmd->add_option("--pcap", ingest_args.pcaps, "Capture file (repeatable)")->required()->check(CLI::ExistingFile);
    ingest_cmd->add_option("--labels", ingest_args.labels, "Label rules CSV")->check(CLI::ExistingFile);
    ingest_cmd->add_flag("--drop-unmatched", ingest_args.drop_unmatched, "Drop flows no rule matches");
    ingest_cmd->add_flag("--keep-addresses", ingest_args.keep_addresses, "Do not zero addresses and checksums");
    ingest_cmd->add_option("--idle-timeout", ingest_args.idle_timeout, "Seconds of silence that end a flow");

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
    synth_cmd->add_option("--classes", synth_args.classes, "Classes including benign");
    synth_cmd->add_option("--flows", synth_args.flows, "Flows per class");
    synth_cmd->add_option("--min-packets", synth_args.min_packets);
    synth_cmd->add_option("--max-packets", synth_args.max_packets);
    synth_cmd->add_option("--signature-rate", synth_args.signature_rate);
    synth_cmd->add_option("--only", synth_args.only, "Emit only these labels (benign is 0)");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train-initial", "Train an initial model on benign plus known attacks");
    train_cmd->add_option("--data", train_args.data, "Dataset container")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--model-kind", train_args.model_kind, "cnn or lstm");
    train_cmd->add_option("--known", train_args.known, "Known attack labels (default: all in the data)");
    train_cmd->add_option("--epochs", train_args.epochs);
    train_cmd->add_option("--lr", train_args.lr);

    UpdateArgs update_args;
    auto* update_cmd = app.add_subcommand("continual-update", "Expand, train and compress on new attack flows");
    update_cmd->add_option("--model", update_args.model, "Checkpoint with Fisher diagonal")->required()->check(CLI::ExistingFile);
    update_cmd->add_option("--new", update_args.new_data, "New flows")->required()->check(CLI::ExistingFile);
    update_cmd->add_option("--pools", update_args.pools, "Sample pools directory (default: <model>.pools)");
    update_cmd->add_option("--k", update_args.k, "Units added per dense hidden layer");
    update_cmd->add_flag("--no-compress", update_args.no_compress, "Write the expanded model instead");

    FederateArgs fed_args;
    auto* fed_cmd = app.add_subcommand("federate", "Run a federated scenario");
    fed_cmd->add_option("--replay", fed_args.replay, "Replay a recorded transcript")->check(CLI::ExistingFile);

    SeqlabelArgs seq_args;
    auto* seq_cmd = app.add_subcommand("seqlabel", "Per-packet labeling and early-detection curve");
    seq_cmd->add_option("--model", seq_args.model, "LSTM checkpoint")->required()->check(CLI::ExistingFile);
    seq_cmd->add_option("--data", seq_args.data, "Dataset container")->required()->check(CLI::ExistingFile);
    seq_cmd->add_option("--theta", seq_args.theta, "Decision threshold in (0.5, 1]");
    seq_cmd->add_option("--min-packets", seq_args.min_packets);
    seq_cmd->add_option("--workers", seq_args.workers);

    auto* report_cmd = app.add_subcommand("report", "Run any scenario config and write its tables");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*ingest_cmd) return run_ingest(g, ingest_args);
        if (*synth_cmd) return run_synth(g, synth_args);
        if (*train_cmd) return run_train_initial(g, train_args);
        if (*update_cmd) return run_continual_update(g, update_args);
        if (*fed_cmd) return run_federate(g, fed_args);
        if (*seq_cmd) return run_seqlabel(g, seq_args);
        if (*report_cmd) return run_report(g);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const Error& e) {
        // Everything else the library raises concerns the input data.
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitConfig;
}
