#include "adaptids/error.hpp"
#include "adaptids/sampling.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>

namespace adaptids::sampling {

using ingest::LabeledDataset;

namespace {

// Explicit modulo draws keep sampling identical across standard libraries.
std::vector<std::size_t> draw(std::size_t pool, std::size_t count, bool replace, std::mt19937_64& rng) {
    std::vector<std::size_t> out;
    out.reserve(count);
    if (replace) {
        for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<std::size_t>(rng() % pool));
        return out;
    }
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + static_cast<std::size_t>(rng() % (pool - i));
        std::swap(idx[i], idx[j]);
        out.push_back(idx[i]);
    }
    return out;
}

void merge_catalog(LabeledDataset& into, const LabeledDataset& from) {
    for (const auto& [id, name] : from.catalog) into.catalog.emplace(id, name);
}

std::string pool_file_name(std::uint32_t label, const std::string& name) {
    std::string safe;
    for (char c : name) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return std::to_string(label) + "-" + safe + ".flwm";
}

}  // namespace

void append_to_pool(Pool& pool, const LabeledDataset& samples, std::size_t cap, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    merge_catalog(pool.data, samples);
    for (const auto& s : samples.samples) {
        ++pool.seen;
        if (cap == 0 || pool.data.size() < cap) {
            pool.data.samples.push_back(s);
            continue;
        }
        const auto j = static_cast<std::size_t>(rng() % pool.seen);
        if (j < cap) pool.data.samples[j] = s;
    }
}

TaskDataset build_task_dataset(const LabeledDataset& raw, const SamplePools& pools, std::uint64_t seed) {
    std::vector<std::size_t> attack_idx, benign_idx;
    std::vector<std::uint32_t> new_labels;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto label = raw.samples[i].label;
        if (label == ingest::kBenignLabel) {
            benign_idx.push_back(i);
        } else {
            attack_idx.push_back(i);
            if (std::find(new_labels.begin(), new_labels.end(), label) == new_labels.end()) new_labels.push_back(label);
        }
    }
    if (attack_idx.empty()) throw InvalidInput("new traffic holds no attack samples");

    std::mt19937_64 rng(seed);
    TaskDataset out;
    auto& r = out.report;
    r.s_a = attack_idx.size();
    r.new_benign = benign_idx.size();
    merge_catalog(out.data, raw);
    out.data.provenance = {"task dataset", seed};

    const auto a_t = raw.subset(attack_idx);
    out.data.append(a_t);

    for (const auto& [label, pool] : pools.attacks) {
        if (std::find(new_labels.begin(), new_labels.end(), label) != new_labels.end()) continue;
        ClassDraw d{label, pool.data.size(), r.s_a, pool.data.size() < r.s_a};
        if (pool.data.empty()) {
            throw InsufficientPool("previous-attack pool for label " + std::to_string(label) + " is empty");
        }
        out.data.append(pool.data.subset(draw(pool.data.size(), r.s_a, d.with_replacement, rng)));
        r.previous.push_back(d);
    }
    r.t = r.previous.size() + 1;

    const std::size_t attacks = r.t * r.s_a;
    std::vector<std::size_t> new_benign = benign_idx;
    if (new_benign.size() > attacks) {
        // More fresh benign than attacks: keep a seeded subset so D_t stays balanced.
        const auto keep = draw(new_benign.size(), attacks, false, rng);
        std::vector<std::size_t> kept;
        for (auto k : keep) kept.push_back(new_benign[k]);
        new_benign = std::move(kept);
    }
    r.new_benign_used = new_benign.size();
    out.data.append(raw.subset(new_benign));

    r.s_b = attacks - r.new_benign_used;
    if (r.s_b > 0) {
        if (pools.benign.data.empty()) {
            throw InsufficientPool("benign pool is empty but " + std::to_string(r.s_b) + " benign samples are needed");
        }
        r.benign_with_replacement = pools.benign.data.size() < r.s_b;
        out.data.append(pools.benign.data.subset(draw(pools.benign.data.size(), r.s_b, r.benign_with_replacement, rng)));
    }
    for (const auto& [label, pool] : pools.attacks) merge_catalog(out.data, pool.data);
    merge_catalog(out.data, pools.benign.data);

    out.pools = pools;
    for (auto label : new_labels) {
        append_to_pool(out.pools.attacks[label], raw.filter_labels({label}), pools.cap, seed ^ (0x9E37ull * label));
    }
    return out;
}

void save_pools(const std::filesystem::path& dir, const SamplePools& pools) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["version"] = 1;
    manifest["cap"] = pools.cap;
    auto entry = [&](const std::string& file, const Pool& p) {
        ingest::write_dataset(dir / file, p.data);
        return nlohmann::ordered_json{{"file", file}, {"count", p.data.size()}, {"seen", p.seen}};
    };
    manifest["benign"] = entry("benign.flwm", pools.benign);
    manifest["attacks"] = nlohmann::ordered_json::array();
    for (const auto& [label, pool] : pools.attacks) {
        const auto it = pool.data.catalog.find(label);
        const std::string name = it == pool.data.catalog.end() ? "class" : it->second;
        auto e = entry(pool_file_name(label, name), pool);
        e["label"] = label;
        e["name"] = name;
        manifest["attacks"].push_back(e);
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw Error("failed writing pool manifest in " + dir.string());
}

SamplePools load_pools(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw InvalidInput("no pool manifest in " + dir.string());
    try {
        const auto m = nlohmann::json::parse(in);
        SamplePools pools;
        pools.cap = m.at("cap").get<std::size_t>();
        auto load = [&](const nlohmann::json& e) {
            Pool p{ingest::read_dataset(dir / e.at("file").get<std::string>()), e.at("seen").get<std::uint64_t>()};
            if (p.data.size() != e.at("count").get<std::size_t>()) {
                throw InvalidInput("pool file " + e.at("file").get<std::string>() + " disagrees with the manifest count");
            }
            return p;
        };
        pools.benign = load(m.at("benign"));
        for (const auto& e : m.at("attacks")) pools.attacks[e.at("label").get<std::uint32_t>()] = load(e);
        return pools;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("bad pool manifest: ") + e.what());
    }
}

}  // namespace adaptids::sampling
