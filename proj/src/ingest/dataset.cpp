#include "adaptids/error.hpp"
#include "adaptids/ingest.hpp"

#include "binary_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>

namespace adaptids::ingest {
namespace {

constexpr char kMagic[4] = {'F', 'L', 'W', 'M'};

}  // namespace

void LabeledDataset::validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!samples[i].matrix) throw InvalidInput("sample " + std::to_string(i) + " has no matrix");
        if (!catalog.contains(samples[i].label)) {
            throw InvalidInput("sample " + std::to_string(i) + " has label " + std::to_string(samples[i].label) +
                               " missing from the class catalog");
        }
    }
}

std::size_t LabeledDataset::count_label(std::uint32_t label) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [&](const Sample& s) { return s.label == label; }));
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.catalog = catalog;
    out.provenance = provenance;
    out.samples.reserve(indices.size());
    for (auto i : indices) out.samples.push_back(samples.at(i));
    return out;
}

LabeledDataset LabeledDataset::filter_labels(const std::vector<std::uint32_t>& labels) const {
    LabeledDataset out;
    out.catalog = catalog;
    out.provenance = provenance;
    for (const auto& s : samples) {
        if (std::find(labels.begin(), labels.end(), s.label) != labels.end()) out.samples.push_back(s);
    }
    return out;
}

void LabeledDataset::append(const LabeledDataset& other) {
    for (const auto& [id, name] : other.catalog) catalog.emplace(id, name);
    samples.insert(samples.end(), other.samples.begin(), other.samples.end());
}

bool same_content(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.catalog != b.catalog || a.provenance != b.provenance || a.samples.size() != b.samples.size()) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        if (a.samples[i].label != b.samples[i].label) return false;
        if (*a.samples[i].matrix != *b.samples[i].matrix) return false;
    }
    return true;
}

void write_dataset(std::ostream& out, const LabeledDataset& dataset) {
    dataset.validate();
    out.write(kMagic, 4);
    detail::put<std::uint32_t>(out, kDatasetVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.samples.size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(kMatrixRows));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(kMatrixCols));
    for (const auto& s : dataset.samples) {
        detail::put<std::uint32_t>(out, s.label);
        detail::put<std::uint8_t>(out, s.matrix->n_real_packets);
        out.write(reinterpret_cast<const char*>(s.matrix->data.data()),
                  static_cast<std::streamsize>(kMatrixSize * sizeof(float)));
    }
    nlohmann::ordered_json meta;
    nlohmann::ordered_json labels = nlohmann::ordered_json::object();
    for (const auto& [id, name] : dataset.catalog) labels[std::to_string(id)] = name;
    meta["labels"] = labels;
    meta["provenance"] = {{"source", dataset.provenance.source}, {"seed", dataset.provenance.seed}};
    const std::string text = meta.dump();
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    detail::put_string(out, text);
    if (!out) throw Error("failed writing dataset container");
}

LabeledDataset read_dataset(std::istream& in) {
    char magic[4];
    if (!detail::get_raw(in, magic, 4)) {
        throw ContainerError(ContainerErrorKind::truncated, "dataset header truncated");
    }
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw ContainerError(ContainerErrorKind::bad_magic, "not a flow dataset (bad magic)");
    }
    std::uint32_t version = 0, count = 0, rows = 0, cols = 0;
    if (!detail::get(in, version) || !detail::get(in, count) || !detail::get(in, rows) || !detail::get(in, cols)) {
        throw ContainerError(ContainerErrorKind::truncated, "dataset header truncated");
    }
    if (version != kDatasetVersion) {
        throw ContainerError(ContainerErrorKind::version_mismatch,
                             "unsupported dataset version " + std::to_string(version));
    }
    if (rows != kMatrixRows || cols != kMatrixCols) {
        throw ContainerError(ContainerErrorKind::length_mismatch, "dataset matrices are " + std::to_string(rows) +
                                                                      "x" + std::to_string(cols) + ", expected 100x200");
    }

    LabeledDataset ds;
    ds.samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto m = std::make_shared<FlowMatrix>();
        std::uint32_t label = 0;
        if (!detail::get(in, label) || !detail::get(in, m->n_real_packets) ||
            !detail::get_raw(in, m->data.data(), kMatrixSize * sizeof(float))) {
            throw ContainerError(ContainerErrorKind::truncated,
                                 "dataset truncated in sample " + std::to_string(i), i);
        }
        if (m->n_real_packets > kMatrixRows) {
            throw ContainerError(ContainerErrorKind::length_mismatch,
                                 "sample " + std::to_string(i) + " claims more than 100 packets", i);
        }
        ds.samples.push_back({std::move(m), label});
    }

    std::uint32_t meta_len = 0;
    if (!detail::get(in, meta_len)) {
        throw ContainerError(ContainerErrorKind::truncated, "dataset metadata block missing");
    }
    std::string text(meta_len, '\0');
    if (!detail::get_raw(in, text.data(), meta_len)) {
        throw ContainerError(ContainerErrorKind::truncated, "dataset metadata block truncated");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw ContainerError(ContainerErrorKind::length_mismatch, "trailing bytes after dataset metadata");
    }
    try {
        const auto meta = nlohmann::json::parse(text);
        for (const auto& [id, name] : meta.at("labels").items()) {
            ds.catalog[static_cast<std::uint32_t>(std::stoul(id))] = name.get<std::string>();
        }
        if (meta.contains("provenance")) {
            ds.provenance.source = meta["provenance"].value("source", "");
            ds.provenance.seed = meta["provenance"].value("seed", std::uint64_t{0});
        }
    } catch (const std::exception& e) {
        throw ContainerError(ContainerErrorKind::bad_metadata, std::string("bad dataset metadata: ") + e.what());
    }
    try {
        ds.validate();
    } catch (const InvalidInput& e) {
        throw ContainerError(ContainerErrorKind::bad_metadata, e.what());
    }
    return ds;
}

void write_dataset(const std::filesystem::path& path, const LabeledDataset& dataset) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write dataset " + path.string());
    write_dataset(out, dataset);
}

LabeledDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open dataset " + path.string());
    return read_dataset(in);
}

}  // namespace adaptids::ingest
