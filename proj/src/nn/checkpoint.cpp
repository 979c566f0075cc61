#include "adaptids/error.hpp"
#include "adaptids/nn.hpp"

#include "binary_io.hpp"

#include "json.hpp"

#include <fstream>

namespace adaptids::nn {
namespace {

constexpr char kModelMagic[4] = {'N', 'N', 'M', 'D'};
constexpr char kFisherTag[4] = {'F', 'I', 'S', 'H'};
constexpr std::uint32_t kCheckpointVersion = 1;

BaseKind base_from_string(const std::string& s) {
    if (s == "none") return BaseKind::none;
    if (s == "cnn") return BaseKind::cnn;
    if (s == "lstm") return BaseKind::lstm;
    throw InvalidInput("unknown base kind '" + s + "'");
}

}  // namespace

std::string architecture_to_json(const Architecture& arch) {
    nlohmann::ordered_json j;
    j["base"] = to_string(arch.base);
    j["input_rows"] = arch.input_rows;
    j["input_cols"] = arch.input_cols;
    j["conv_channels"] = arch.conv_channels;
    j["kernel"] = arch.kernel;
    j["lstm_cells"] = arch.lstm_cells;
    j["dense_widths"] = arch.dense_widths;
    j["dropout"] = arch.dropout;
    return j.dump();
}

Architecture architecture_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        Architecture a;
        a.base = base_from_string(j.at("base").get<std::string>());
        a.input_rows = j.at("input_rows").get<std::size_t>();
        a.input_cols = j.at("input_cols").get<std::size_t>();
        a.conv_channels = j.value("conv_channels", std::vector<std::size_t>{});
        a.kernel = j.value("kernel", std::size_t{3});
        a.lstm_cells = j.value("lstm_cells", std::size_t{0});
        a.dense_widths = j.at("dense_widths").get<std::vector<std::size_t>>();
        a.dropout = j.value("dropout", 0.2);
        a.validate();
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("bad architecture block: ") + e.what());
    }
}

void save_checkpoint(std::ostream& out, const NetworkModel& model, const std::vector<double>* fisher) {
    if (fisher && fisher->size() != model.param_count()) {
        throw ShapeMismatch("Fisher diagonal length differs from parameter count");
    }
    const auto arch = architecture_to_json(model.architecture());
    out.write(kModelMagic, 4);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.size()));
    detail::put_string(out, arch);
    detail::put<std::uint64_t>(out, model.param_count());
    out.write(reinterpret_cast<const char*>(model.params().data()),
              static_cast<std::streamsize>(model.param_count() * sizeof(double)));
    if (fisher) {
        out.write(kFisherTag, 4);
        detail::put<std::uint64_t>(out, fisher->size());
        out.write(reinterpret_cast<const char*>(fisher->data()),
                  static_cast<std::streamsize>(fisher->size() * sizeof(double)));
    }
    if (!out) throw Error("failed writing model checkpoint");
}

Checkpoint load_checkpoint(std::istream& in) {
    using K = ContainerErrorKind;
    char magic[4];
    if (!detail::get_raw(in, magic, 4)) throw ContainerError(K::truncated, "checkpoint header truncated");
    if (std::memcmp(magic, kModelMagic, 4) != 0) throw ContainerError(K::bad_magic, "not a model checkpoint");
    std::uint32_t version = 0, arch_len = 0;
    if (!detail::get(in, version) || !detail::get(in, arch_len)) {
        throw ContainerError(K::truncated, "checkpoint header truncated");
    }
    if (version != kCheckpointVersion) {
        throw ContainerError(K::version_mismatch, "unsupported checkpoint version " + std::to_string(version));
    }
    std::string arch_text(arch_len, '\0');
    if (!detail::get_raw(in, arch_text.data(), arch_len)) {
        throw ContainerError(K::truncated, "checkpoint architecture block truncated");
    }
    Architecture arch;
    try {
        arch = architecture_from_json(arch_text);
    } catch (const InvalidInput& e) {
        throw ContainerError(K::bad_metadata, e.what());
    }
    Checkpoint ck{NetworkModel(arch), std::nullopt};
    std::uint64_t count = 0;
    if (!detail::get(in, count)) throw ContainerError(K::truncated, "checkpoint parameter count missing");
    if (count != ck.model.param_count()) {
        throw ContainerError(K::length_mismatch, "checkpoint holds " + std::to_string(count) +
                                                     " parameters, architecture needs " +
                                                     std::to_string(ck.model.param_count()));
    }
    if (!detail::get_raw(in, ck.model.params().data(), count * sizeof(double))) {
        throw ContainerError(K::truncated, "checkpoint parameters truncated");
    }
    char tag[4];
    in.read(tag, 4);
    if (in.gcount() == 0) return ck;
    if (in.gcount() != 4 || std::memcmp(tag, kFisherTag, 4) != 0) {
        throw ContainerError(K::bad_metadata, "unexpected block after checkpoint parameters");
    }
    std::uint64_t fcount = 0;
    if (!detail::get(in, fcount)) throw ContainerError(K::truncated, "Fisher block truncated");
    if (fcount != count) throw ContainerError(K::length_mismatch, "Fisher block length differs from parameter count");
    std::vector<double> f(fcount);
    if (!detail::get_raw(in, f.data(), fcount * sizeof(double))) {
        throw ContainerError(K::truncated, "Fisher block truncated");
    }
    ck.fisher = std::move(f);
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkModel& model, const std::vector<double>* fisher) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write checkpoint " + path.string());
    save_checkpoint(out, model, fisher);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open checkpoint " + path.string());
    return load_checkpoint(in);
}

}  // namespace adaptids::nn
