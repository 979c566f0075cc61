#include "adaptids/harness.hpp"

#include "adaptids/error.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace adaptids::harness {

using ojson = nlohmann::ordered_json;

namespace {

ojson envelope(const ScenarioConfig& config) {
    ojson j;
    j["schema_version"] = kMetricsSchemaVersion;
    j["scenario"] = to_string(config.kind);
    j["seed"] = config.seed.value_or(0);
    j["config"] = ojson::parse(config_to_json(config));
    return j;
}

ojson catalog_json(const std::map<std::uint32_t, std::string>& catalog) {
    ojson j = ojson::object();
    for (const auto& [label, name] : catalog) j[std::to_string(label)] = name;
    return j;
}

std::string name_of(const std::map<std::uint32_t, std::string>& catalog, std::uint32_t label) {
    const auto it = catalog.find(label);
    return it == catalog.end() ? std::to_string(label) : it->second;
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

ojson agent_json(const federated::AgentReport& a) {
    ojson j;
    j["id"] = a.id;
    j["completed"] = a.completed;
    if (!a.error.empty()) j["error"] = a.error;
    j["steps"] = a.steps;
    j["train_size"] = a.train_size;
    j["alpha"] = a.alpha;
    j["fallback"] = a.continual.fallback;
    j["val_after_added"] = a.continual.val_after_added;
    j["val_final"] = a.continual.val_final;
    j["sampling"] = {{"t", a.sampling.t}, {"s_a", a.sampling.s_a}, {"s_b", a.sampling.s_b}};
    return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

std::string metrics_json(const ScenarioConfig& config, const PairwiseResult& r) {
    auto j = envelope(config);
    auto& res = j["results"];
    res["catalog"] = catalog_json(r.catalog);
    for (const auto& [k, acc] : r.initial_accuracy) res["initial_accuracy"][std::to_string(k)] = acc;
    res["pairs"] = ojson::array();
    for (const auto& p : r.pairs) {
        res["pairs"].push_back({{"known", p.known},
                                {"zero_day", p.zero_day},
                                {kBeforeZeroDay, p.before_zero_day},
                                {kAfterZeroDay, p.after_zero_day},
                                {kAfterInitial, p.after_initial},
                                {"fallback", p.fallback}});
    }
    return j.dump(2);
}

std::string metrics_json(const ScenarioConfig& config, const SequentialResult& r) {
    auto j = envelope(config);
    auto& res = j["results"];
    res["catalog"] = catalog_json(r.catalog);
    res["orders"] = r.orders;
    res["steps"] = ojson::array();
    for (const auto& s : r.steps) {
        res["steps"].push_back({{"permutation", s.permutation},
                                {"step", s.step},
                                {"label", s.label},
                                {"known_classes", s.known_classes},
                                {"before_zero_day", s.before_zero_day},
                                {"after_zero_day", s.after_zero_day},
                                {"known", s.known},
                                {"fallback", s.fallback}});
    }
    res["mean_before_zero_day"] = r.mean_before_zero_day;
    res["mean_after_zero_day"] = r.mean_after_zero_day;
    res["mean_known"] = r.mean_known;
    return j.dump(2);
}

std::string metrics_json(const ScenarioConfig& config, const FederatedResult& r) {
    auto j = envelope(config);
    auto& res = j["results"];
    res["catalog"] = catalog_json(r.catalog);
    res["rows"] = ojson::array();
    for (const auto& row : r.rows) {
        ojson o;
        o["known"] = row.known;
        o["unknown"] = row.unknown;
        o["known_before"] = row.known_before;
        o[kUnknownsBefore] = row.unknowns_before;
        o[kUnknownsAfter] = row.unknowns_after;
        o[kKnownAfter] = row.known_after;
        o["main_version"] = row.simulation.final_state.version;
        o["transcript_events"] = row.simulation.transcript.size();
        o["agents"] = ojson::array();
        for (const auto& a : row.agents) o["agents"].push_back(agent_json(a));
        res["rows"].push_back(o);
    }
    return j.dump(2);
}

std::string metrics_json(const ScenarioConfig& config, const EarlyDetectionResult& r) {
    auto j = envelope(config);
    auto& res = j["results"];
    res["final_accuracy"] = r.final_accuracy;
    res["decided_fraction"] = r.decided_fraction;
    res["mean_decision_packet"] = r.mean_decision_packet;
    res["decision_accuracy"] = r.decision_accuracy;
    res["curve"] = {{"mean_true_label_prob", r.curve.mean_true_label_prob},
                    {"mean_attack_prob", r.curve.mean_attack_prob},
                    {"mean_accuracy", r.curve.mean_accuracy},
                    {"n_flows", r.curve.n_flows}};
    return j.dump(2);
}

std::string table_csv(const PairwiseResult& r) {
    std::vector<std::uint32_t> zero_days;
    for (const auto& p : r.pairs) {
        if (std::find(zero_days.begin(), zero_days.end(), p.zero_day) == zero_days.end()) zero_days.push_back(p.zero_day);
    }
    for (const auto& [k, _] : r.initial_accuracy) {
        if (std::find(zero_days.begin(), zero_days.end(), k) == zero_days.end()) zero_days.push_back(k);
    }
    std::sort(zero_days.begin(), zero_days.end());
    std::ostringstream out;
    out << "known,known_accuracy,state";
    for (auto z : zero_days) out << ',' << name_of(r.catalog, z);
    out << '\n';
    for (const auto& [k, acc] : r.initial_accuracy) {
        for (const char* state : {kBeforeZeroDay, kAfterZeroDay, kAfterInitial}) {
            out << name_of(r.catalog, k) << ',' << fixed(acc) << ',' << state;
            for (auto z : zero_days) {
                out << ',';
                const auto it = std::find_if(r.pairs.begin(), r.pairs.end(),
                                             [&](const PairRecord& p) { return p.known == k && p.zero_day == z; });
                if (it == r.pairs.end()) {
                    out << '-';
                    continue;
                }
                const std::string s = state;
                out << fixed(s == kBeforeZeroDay ? it->before_zero_day
                             : s == kAfterZeroDay ? it->after_zero_day
                                                  : it->after_initial);
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string table_csv(const SequentialResult& r) {
    std::ostringstream out;
    out << "step,known_classes,mean_before_zero_day,mean_after_zero_day,mean_known\n";
    for (std::size_t s = 0; s < r.mean_known.size(); ++s) {
        out << s << ',' << s + 1 << ',' << fixed(r.mean_before_zero_day[s]) << ','
            << fixed(r.mean_after_zero_day[s]) << ',' << fixed(r.mean_known[s]) << '\n';
    }
    return out.str();
}

std::string table_csv(const FederatedResult& r) {
    std::ostringstream out;
    out << "known,known_before," << kUnknownsBefore << ',' << kUnknownsAfter << ',' << kKnownAfter << '\n';
    for (const auto& row : r.rows) {
        out << name_of(r.catalog, row.known) << ',' << fixed(row.known_before) << ',' << fixed(row.unknowns_before)
            << ',' << fixed(row.unknowns_after) << ',' << fixed(row.known_after) << '\n';
    }
    return out.str();
}

std::string run_scenario(const ScenarioConfig& config) {
    config.validate();
    if (config.output_dir.empty()) throw ConfigError("config needs an output_dir");
    std::filesystem::create_directories(config.output_dir);
    const auto& dir = config.output_dir;
    std::string metrics;
    switch (config.kind) {
        case ScenarioKind::pairwise: {
            const auto r = scenario_pairwise(config);
            metrics = metrics_json(config, r);
            write_text(dir / "table.csv", table_csv(r));
            break;
        }
        case ScenarioKind::sequential: {
            const auto r = scenario_sequential(config);
            metrics = metrics_json(config, r);
            write_text(dir / "curves.csv", table_csv(r));
            break;
        }
        case ScenarioKind::federated: {
            const auto r = scenario_federated(config);
            metrics = metrics_json(config, r);
            write_text(dir / "table.csv", table_csv(r));
            for (const auto& row : r.rows) {
                const auto tag = std::to_string(row.known);
                const auto& st = row.simulation.final_state;
                nn::save_checkpoint(dir / ("main-" + tag + ".ckpt"), st.model, &st.fisher);
                std::ofstream t(dir / ("transcript-" + tag + ".jsonl"), std::ios::binary);
                federated::write_transcript(t, row.simulation.transcript);
            }
            break;
        }
        case ScenarioKind::early_detection: {
            const auto r = scenario_early_detection(config);
            metrics = metrics_json(config, r);
            std::ostringstream csv;
            seqlabel::write_curve_csv(csv, r.curve);
            write_text(dir / "curve.csv", csv.str());
            nn::save_checkpoint(dir / "lstm.ckpt", r.model);
            break;
        }
    }
    write_text(dir / "metrics.json", metrics + "\n");
    return metrics;
}

}  // namespace adaptids::harness
