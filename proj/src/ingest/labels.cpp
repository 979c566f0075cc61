#include "adaptids/error.hpp"
#include "adaptids/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

namespace adaptids::ingest {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool wildcard(const std::string& field) { return field.empty() || field == "*"; }

template <typename T>
std::optional<T> parse_number(const std::string& field, std::int64_t lo, std::int64_t hi,
                              const char* name, std::size_t line) {
    if (wildcard(field)) return std::nullopt;
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(field, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != field.size() || v < lo || v > hi) {
        throw InvalidInput("label rules line " + std::to_string(line) + ": bad " + name + " '" + field + "'");
    }
    return static_cast<T>(v);
}

}  // namespace

bool LabelRule::matches(const Flow& flow) const {
    if (protocol && *protocol != flow.key.protocol) return false;
    if (start_us && flow.last_seen < *start_us) return false;
    if (end_us && flow.first_seen > *end_us) return false;
    auto side = [&](const IpAddress& s_ip, std::uint16_t s_port, const IpAddress& d_ip, std::uint16_t d_port) {
        return (!src_ip || *src_ip == s_ip) && (!src_port || *src_port == s_port) &&
               (!dst_ip || *dst_ip == d_ip) && (!dst_port || *dst_port == d_port);
    };
    const auto& k = flow.key;
    return side(k.ip_lo, k.port_lo, k.ip_hi, k.port_hi) || side(k.ip_hi, k.port_hi, k.ip_lo, k.port_lo);
}

std::vector<LabelRule> parse_label_rules(std::istream& csv) {
    std::vector<LabelRule> rules;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(csv, raw)) {
        ++line;
        const auto text = trim(raw);
        if (text.empty() || text[0] == '#') continue;
        std::vector<std::string> f;
        std::stringstream ss(text);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(trim(cell));
        if (!text.empty() && text.back() == ',') f.emplace_back();
        if (f.size() != 8) {
            throw InvalidInput("label rules line " + std::to_string(line) + ": expected 8 columns, got " +
                               std::to_string(f.size()));
        }
        if (f[0] == "src_ip") continue;  // header

        LabelRule r;
        try {
            if (!wildcard(f[0])) r.src_ip = IpAddress::parse(f[0]);
            if (!wildcard(f[1])) r.dst_ip = IpAddress::parse(f[1]);
        } catch (const InvalidInput& e) {
            throw InvalidInput("label rules line " + std::to_string(line) + ": " + e.what());
        }
        r.src_port = parse_number<std::uint16_t>(f[2], 0, 65535, "src_port", line);
        r.dst_port = parse_number<std::uint16_t>(f[3], 0, 65535, "dst_port", line);
        r.protocol = parse_number<std::uint8_t>(f[4], 0, 255, "protocol", line);
        r.start_us = parse_number<std::int64_t>(f[5], std::numeric_limits<std::int64_t>::min(),
                                                std::numeric_limits<std::int64_t>::max(), "start_us", line);
        r.end_us = parse_number<std::int64_t>(f[6], std::numeric_limits<std::int64_t>::min(),
                                              std::numeric_limits<std::int64_t>::max(), "end_us", line);
        if (r.start_us && r.end_us && *r.start_us > *r.end_us) {
            throw InvalidInput("label rules line " + std::to_string(line) + ": start_us > end_us");
        }
        if (f[7].empty()) throw InvalidInput("label rules line " + std::to_string(line) + ": empty label");
        r.label = f[7];
        rules.push_back(std::move(r));
    }
    return rules;
}

std::vector<LabelRule> read_label_rules(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open label rules " + path.string());
    return parse_label_rules(in);
}

LabelResult label_flows(std::span<const Flow> flows, std::span<const LabelRule> rules,
                        const LabelOptions& options) {
    LabelResult result;
    auto& ds = result.dataset;
    ds.catalog[kBenignLabel] = options.benign_name;
    std::map<std::string, std::uint32_t> ids{{options.benign_name, kBenignLabel}};
    for (const auto& r : rules) {
        if (!ids.contains(r.label)) {
            const auto id = static_cast<std::uint32_t>(ids.size());
            ids[r.label] = id;
            ds.catalog[id] = r.label;
        }
    }
    ds.provenance.source = "capture";

    for (std::size_t i = 0; i < flows.size(); ++i) {
        const auto& flow = flows[i];
        std::optional<std::size_t> first;
        for (std::size_t j = 0; j < rules.size(); ++j) {
            if (!rules[j].matches(flow)) continue;
            if (!first) {
                first = j;
            } else if (rules[j].label != rules[*first].label) {
                result.warnings.push_back("flow " + flow.key.to_string() + " matches rule " +
                                          std::to_string(*first + 1) + " (" + rules[*first].label +
                                          ") and rule " + std::to_string(j + 1) + " (" + rules[j].label +
                                          "); using rule " + std::to_string(*first + 1));
            }
        }
        const std::uint32_t label = first ? ids.at(rules[*first].label) : kBenignLabel;
        result.flow_labels.push_back(label);
        if (!first && options.drop_unmatched) continue;
        ds.samples.push_back({std::make_shared<const FlowMatrix>(flow_to_matrix(flow, options.anonymize)), label});
    }
    return result;
}

}  // namespace adaptids::ingest
