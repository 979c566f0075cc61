#include "adaptids/harness.hpp"

#include "adaptids/error.hpp"

#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace adaptids::harness {

using nlohmann::json;

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::pairwise: return "pairwise";
        case ScenarioKind::sequential: return "sequential";
        case ScenarioKind::federated: return "federated";
        case ScenarioKind::early_detection: return "early-detection";
    }
    return "?";
}

std::string to_string(ModelKind kind) { return kind == ModelKind::cnn ? "cnn" : "lstm"; }

nn::Architecture desk_architecture(ModelKind kind) {
    // Top-left crops of the 100 x 200 flow matrix; the synthetic signatures
    // and the protocol headers fall inside the first 64 bytes.
    if (kind == ModelKind::cnn) return nn::cnn_architecture(10, 64, {8, 16}, {64, 32, 2});
    return nn::lstm_architecture(64, 40, 32, {32, 2});
}

nn::Architecture ScenarioConfig::resolved_architecture() const {
    return architecture ? *architecture : desk_architecture(model);
}

void ScenarioConfig::validate() const {
    if (!seed) throw ConfigError("config needs a seed");
    if (data.files.empty() == !data.synthetic) {
        throw ConfigError("data needs exactly one of \"files\" or \"synthetic\"");
    }
    for (const auto& f : data.files) {
        if (!std::filesystem::exists(f)) throw ConfigError("data file not found: " + f.string());
    }
    if (replay && !std::filesystem::exists(*replay)) throw ConfigError("replay transcript not found: " + replay->string());
    if (train_per_class == 0 || update_flows == 0 || eval_per_class == 0) {
        throw ConfigError("train_per_class, update_flows and eval_per_class must be positive");
    }
    if (permutations == 0) throw ConfigError("permutations must be positive");
    if (initial.epochs == 0 || initial.batch_size == 0 || !(initial.learning_rate > 0.0)) {
        throw ConfigError("initial training needs positive epochs, batch size and learning rate");
    }
    if (compress.batch_size == 0 || !(compress.learning_rate > 0.0) || !(compress.temperature > 0.0)) {
        throw ConfigError("compression needs positive batch size, learning rate and temperature");
    }
    if (!(decision_threshold > 0.5 && decision_threshold <= 1.0)) {
        throw ConfigError("decision_threshold must lie in (0.5, 1]");
    }
    try {
        continual.validate();
        resolved_architecture().validate();
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    federated.validate();
    const auto base = resolved_architecture().base;
    if ((model == ModelKind::cnn) != (base == nn::BaseKind::cnn)) {
        throw ConfigError("architecture base does not match model kind " + to_string(model));
    }
    if (kind == ScenarioKind::early_detection && model != ModelKind::lstm) {
        throw ConfigError("early-detection scenario needs model \"lstm\"");
    }
    if (replay && kind != ScenarioKind::federated) throw ConfigError("replay applies to the federated scenario only");
    if (replay && known_classes.size() != 1) throw ConfigError("replay needs exactly one known class");
}

namespace {

// Reads obj[key] into out when present; rejects keys outside `allowed`.
void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown key \"" + key + "\" in " + where);
    }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

ingest::SyntheticSpec parse_synthetic(const json& j) {
    check_keys(j, {"classes", "flows_per_class", "min_packets", "max_packets", "seed", "signature_rate"}, "synthetic");
    ingest::SyntheticSpec s;
    read(j, "classes", s.classes);
    read(j, "flows_per_class", s.flows_per_class);
    read(j, "min_packets", s.min_packets);
    read(j, "max_packets", s.max_packets);
    read(j, "seed", s.seed);
    read(j, "signature_rate", s.signature_rate);
    return s;
}

ScenarioKind kind_from(const std::string& s) {
    if (s == "pairwise") return ScenarioKind::pairwise;
    if (s == "sequential") return ScenarioKind::sequential;
    if (s == "federated") return ScenarioKind::federated;
    if (s == "early-detection") return ScenarioKind::early_detection;
    throw ConfigError("unknown scenario \"" + s + "\"");
}

}  // namespace

ScenarioConfig parse_config(const std::string& text) {
    ScenarioConfig c;
    try {
        const auto j = json::parse(text);
        check_keys(j,
                   {"scenario", "seed", "output_dir", "model", "architecture", "data", "initial", "continual",
                    "federated", "compress", "train_per_class", "update_flows", "eval_per_class", "permutations",
                    "known_classes", "deterministic", "replay", "decision_threshold", "min_packets", "workers"},
                   "config");
        if (!j.contains("scenario")) throw ConfigError("config needs a \"scenario\"");
        c.kind = kind_from(j.at("scenario").get<std::string>());
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("model")) {
            const auto m = j.at("model").get<std::string>();
            if (m != "cnn" && m != "lstm") throw ConfigError("model must be \"cnn\" or \"lstm\"");
            c.model = m == "cnn" ? ModelKind::cnn : ModelKind::lstm;
        }
        if (j.contains("architecture")) {
            try {
                c.architecture = nn::architecture_from_json(j.at("architecture").dump());
            } catch (const InvalidInput& e) {
                throw ConfigError(e.what());
            }
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            check_keys(d, {"files", "synthetic"}, "data");
            for (const auto& f : d.value("files", json::array())) c.data.files.emplace_back(f.get<std::string>());
            if (d.contains("synthetic")) {
                c.data.synthetic = parse_synthetic(d.at("synthetic"));
                if (!d.at("synthetic").contains("seed") && c.seed) c.data.synthetic->seed = *c.seed;
            }
        }
        if (j.contains("initial")) {
            const auto& o = j.at("initial");
            check_keys(o, {"epochs", "batch_size", "learning_rate"}, "initial");
            read(o, "epochs", c.initial.epochs);
            read(o, "batch_size", c.initial.batch_size);
            read(o, "learning_rate", c.initial.learning_rate);
        }
        if (j.contains("continual")) {
            const auto& o = j.at("continual");
            check_keys(o,
                       {"k", "tau", "lambda1", "lambda2", "lambda3", "epochs", "batch_size", "learning_rate",
                        "strict_paper_penalty", "strict_paper_fisher"},
                       "continual");
            read(o, "k", c.continual.k);
            read(o, "tau", c.continual.tau);
            read(o, "lambda1", c.continual.lambda1);
            read(o, "lambda2", c.continual.lambda2);
            read(o, "lambda3", c.continual.lambda3);
            read(o, "epochs", c.continual.epochs);
            read(o, "batch_size", c.continual.batch_size);
            read(o, "learning_rate", c.continual.learning_rate);
            read(o, "strict_paper_penalty", c.continual.strict_paper_penalty);
            read(o, "strict_paper_fisher", c.continual.strict_paper_fisher);
        }
        if (j.contains("federated")) {
            const auto& o = j.at("federated");
            check_keys(o,
                       {"lambda", "mu", "temperature", "epochs", "batch_size", "alpha_mode", "max_batch",
                        "val_fraction", "strict_paper_penalty", "retries", "backoff_ms"},
                       "federated");
            auto& f = c.federated;
            read(o, "lambda", f.lambda);
            read(o, "mu", f.mu);
            read(o, "temperature", f.temperature);
            read(o, "epochs", f.epochs);
            read(o, "batch_size", f.batch_size);
            read(o, "max_batch", f.max_batch);
            read(o, "val_fraction", f.val_fraction);
            read(o, "strict_paper_penalty", f.strict_paper_penalty);
            read(o, "retries", f.retries);
            read(o, "backoff_ms", f.backoff_ms);
            if (o.contains("alpha_mode")) {
                const auto m = o.at("alpha_mode").get<std::string>();
                if (m == "agent_fraction") f.alpha_mode = federated::AlphaMode::agent_fraction;
                else if (m == "raw_ratio") f.alpha_mode = federated::AlphaMode::raw_ratio;
                else throw ConfigError("alpha_mode must be \"agent_fraction\" or \"raw_ratio\"");
            }
        }
        if (j.contains("compress")) {
            const auto& o = j.at("compress");
            check_keys(o, {"epochs", "batch_size", "learning_rate", "temperature"}, "compress");
            read(o, "epochs", c.compress.epochs);
            read(o, "batch_size", c.compress.batch_size);
            read(o, "learning_rate", c.compress.learning_rate);
            read(o, "temperature", c.compress.temperature);
        }
        read(j, "train_per_class", c.train_per_class);
        read(j, "update_flows", c.update_flows);
        read(j, "eval_per_class", c.eval_per_class);
        read(j, "permutations", c.permutations);
        read(j, "known_classes", c.known_classes);
        read(j, "deterministic", c.deterministic);
        if (j.contains("replay")) c.replay = j.at("replay").get<std::string>();
        read(j, "decision_threshold", c.decision_threshold);
        read(j, "min_packets", c.min_packets);
        read(j, "workers", c.workers);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    auto c = parse_config(buf.str());
    // Relative data paths resolve against the config file's directory.
    const auto base = path.parent_path();
    for (auto& f : c.data.files) {
        if (f.is_relative()) f = base / f;
    }
    if (c.replay && c.replay->is_relative()) c.replay = base / *c.replay;
    return c;
}

std::string config_to_json(const ScenarioConfig& c) {
    nlohmann::ordered_json j;
    j["scenario"] = to_string(c.kind);
    if (c.seed) j["seed"] = *c.seed;
    j["output_dir"] = c.output_dir.string();
    j["model"] = to_string(c.model);
    j["architecture"] = nlohmann::ordered_json::parse(nn::architecture_to_json(c.resolved_architecture()));
    if (c.data.synthetic) {
        const auto& s = *c.data.synthetic;
        j["data"]["synthetic"] = {{"classes", s.classes},         {"flows_per_class", s.flows_per_class},
                                  {"min_packets", s.min_packets}, {"max_packets", s.max_packets},
                                  {"seed", s.seed},               {"signature_rate", s.signature_rate}};
    } else {
        auto files = nlohmann::ordered_json::array();
        for (const auto& f : c.data.files) files.push_back(f.string());
        j["data"]["files"] = files;
    }
    j["initial"] = {{"epochs", c.initial.epochs},
                    {"batch_size", c.initial.batch_size},
                    {"learning_rate", c.initial.learning_rate}};
    const auto& k = c.continual;
    j["continual"] = {{"k", k.k},
                      {"tau", k.tau},
                      {"lambda1", k.lambda1},
                      {"lambda2", k.lambda2},
                      {"lambda3", k.lambda3},
                      {"epochs", k.epochs},
                      {"batch_size", k.batch_size},
                      {"learning_rate", k.learning_rate},
                      {"strict_paper_penalty", k.strict_paper_penalty},
                      {"strict_paper_fisher", k.strict_paper_fisher}};
    const auto& f = c.federated;
    j["federated"] = {{"lambda", f.lambda},
                      {"mu", f.mu},
                      {"temperature", f.temperature},
                      {"epochs", f.epochs},
                      {"batch_size", f.batch_size},
                      {"alpha_mode", f.alpha_mode == federated::AlphaMode::agent_fraction ? "agent_fraction" : "raw_ratio"},
                      {"max_batch", f.max_batch},
                      {"val_fraction", f.val_fraction},
                      {"strict_paper_penalty", f.strict_paper_penalty},
                      {"retries", f.retries},
                      {"backoff_ms", f.backoff_ms}};
    j["compress"] = {{"epochs", c.compress.epochs},
                     {"batch_size", c.compress.batch_size},
                     {"learning_rate", c.compress.learning_rate},
                     {"temperature", c.compress.temperature}};
    j["train_per_class"] = c.train_per_class;
    j["update_flows"] = c.update_flows;
    j["eval_per_class"] = c.eval_per_class;
    j["permutations"] = c.permutations;
    j["known_classes"] = c.known_classes;
    j["deterministic"] = c.deterministic;
    if (c.replay) j["replay"] = c.replay->string();
    j["decision_threshold"] = c.decision_threshold;
    j["min_packets"] = c.min_packets;
    j["workers"] = c.workers;
    return j.dump(2);
}

}  // namespace adaptids::harness
