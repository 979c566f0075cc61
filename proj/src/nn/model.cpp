#include "adaptids/error.hpp"
#include "adaptids/nn.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace adaptids::nn {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    const auto n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    values_.assign(n, fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    const auto n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (n != values_.size()) {
        throw ShapeMismatch("tensor shape " + shape_string() + " needs " + std::to_string(n) + " values, got " +
                            std::to_string(values_.size()));
    }
}

std::string Tensor::shape_string() const {
    std::ostringstream s;
    s << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) s << (i ? "," : "") << shape_[i];
    s << ']';
    return s.str();
}

std::string to_string(BaseKind kind) {
    switch (kind) {
        case BaseKind::none: return "none";
        case BaseKind::cnn: return "cnn";
        case BaseKind::lstm: return "lstm";
    }
    return "?";
}

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::lstm_m2m: return "lstm_m2m";
        case LayerKind::relu: return "relu";
        case LayerKind::dropout: return "dropout";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

void Architecture::validate() const {
    if (input_rows == 0 || input_cols == 0) throw InvalidInput("architecture input window must be non-empty");
    if (input_rows > ingest::kMatrixRows || input_cols > ingest::kMatrixCols) {
        throw InvalidInput("architecture input window exceeds the 100x200 flow matrix");
    }
    if (dense_widths.empty() || dense_widths.back() != 2) {
        throw InvalidInput("dense part must end in a 2-unit layer");
    }
    for (auto w : dense_widths) {
        if (w == 0) throw InvalidInput("dense widths must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("dropout rate must lie in [0, 1)");
    switch (base) {
        case BaseKind::none:
            if (!conv_channels.empty() || lstm_cells != 0) throw InvalidInput("base-less model has base sizes");
            break;
        case BaseKind::cnn: {
            if (conv_channels.empty()) throw InvalidInput("cnn base needs at least one conv layer");
            if (kernel == 0) throw InvalidInput("kernel size must be positive");
            for (auto c : conv_channels) {
                if (c == 0) throw InvalidInput("conv channels must be positive");
            }
            const auto shrink = conv_channels.size() * (kernel - 1);
            if (input_rows <= shrink || input_cols <= shrink) {
                throw InvalidInput("input window too small for the conv stack");
            }
            break;
        }
        case BaseKind::lstm:
            if (lstm_cells == 0) throw InvalidInput("lstm base needs cells");
            break;
    }
}

std::size_t Architecture::feature_count() const {
    switch (base) {
        case BaseKind::none: return input_rows * input_cols;
        case BaseKind::cnn: {
            const auto shrink = conv_channels.size() * (kernel - 1);
            return (input_rows - shrink) * (input_cols - shrink) * conv_channels.back();
        }
        case BaseKind::lstm: return lstm_cells;
    }
    return 0;
}

std::vector<LayerSpec> Architecture::layers() const {
    std::vector<LayerSpec> out;
    auto act = [&] {
        out.push_back({LayerKind::relu});
        LayerSpec d{LayerKind::dropout};
        d.drop_rate = dropout;
        out.push_back(d);
    };
    if (base == BaseKind::cnn) {
        std::size_t in = 1;
        for (auto c : conv_channels) {
            out.push_back({LayerKind::conv2d, in, c, kernel, kernel, 1, 1, 0.0});
            act();
            in = c;
        }
    } else if (base == BaseKind::lstm) {
        out.push_back({LayerKind::lstm_m2m, input_cols, lstm_cells});
        LayerSpec d{LayerKind::dropout};
        d.drop_rate = dropout;
        out.push_back(d);
    }
    std::size_t in = feature_count();
    for (std::size_t i = 0; i < dense_widths.size(); ++i) {
        out.push_back({LayerKind::dense, in, dense_widths[i]});
        if (i + 1 < dense_widths.size()) act();
        in = dense_widths[i];
    }
    out.push_back({LayerKind::softmax, 2, 2});
    return out;
}

Architecture cnn_architecture(std::size_t rows, std::size_t cols, std::vector<std::size_t> conv_channels,
                              std::vector<std::size_t> dense_widths) {
    Architecture a;
    a.base = BaseKind::cnn;
    a.input_rows = rows;
    a.input_cols = cols;
    a.conv_channels = std::move(conv_channels);
    a.dense_widths = std::move(dense_widths);
    a.validate();
    return a;
}

Architecture lstm_architecture(std::size_t packet_dim, std::size_t max_steps, std::size_t cells,
                               std::vector<std::size_t> dense_widths) {
    Architecture a;
    a.base = BaseKind::lstm;
    a.input_rows = max_steps;
    a.input_cols = packet_dim;
    a.lstm_cells = cells;
    a.dense_widths = std::move(dense_widths);
    a.validate();
    return a;
}

Architecture dense_architecture(std::size_t rows, std::size_t cols, std::vector<std::size_t> dense_widths) {
    Architecture a;
    a.base = BaseKind::none;
    a.input_rows = rows;
    a.input_cols = cols;
    a.dense_widths = std::move(dense_widths);
    a.validate();
    return a;
}

std::vector<std::pair<std::size_t, std::size_t>> conv_output_dims(const Architecture& arch) {
    std::vector<std::pair<std::size_t, std::size_t>> dims;
    std::size_t h = arch.input_rows, w = arch.input_cols;
    for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
        h -= arch.kernel - 1;
        w -= arch.kernel - 1;
        dims.emplace_back(h, w);
    }
    return dims;
}

NetworkModel::NetworkModel(Architecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    std::size_t offset = 0;
    if (arch_.base == BaseKind::cnn) {
        std::size_t in_c = 1, h = arch_.input_rows, w = arch_.input_cols;
        for (auto out_c : arch_.conv_channels) {
            ConvLayer c;
            c.in_channels = in_c;
            c.out_channels = out_c;
            c.in_h = h;
            c.in_w = w;
            c.kernel = arch_.kernel;
            c.out_h = h - (arch_.kernel - 1);
            c.out_w = w - (arch_.kernel - 1);
            c.kernel_offset = offset;
            offset += arch_.kernel * arch_.kernel * in_c * out_c;
            c.bias_offset = offset;
            offset += out_c;
            conv_.push_back(c);
            in_c = out_c;
            h = c.out_h;
            w = c.out_w;
        }
    } else if (arch_.base == BaseKind::lstm) {
        LstmLayer l;
        l.input = arch_.input_cols;
        l.cells = arch_.lstm_cells;
        l.weight_offset = offset;
        offset += (l.input + l.cells) * 4 * l.cells;
        l.bias_offset = offset;
        offset += 4 * l.cells;
        lstm_ = l;
    }
    base_params_ = offset;
    std::size_t in = arch_.feature_count();
    for (auto width : arch_.dense_widths) {
        DenseLayer d;
        d.in = in;
        d.out = width;
        d.weight_offset = offset;
        offset += in * width;
        d.bias_offset = offset;
        offset += width;
        dense_.push_back(d);
        in = width;
    }
    params_.assign(offset, 0.0);
}

void initialize(NetworkModel& model, std::uint64_t seed) {
    Rng rng(seed);
    auto p = model.params();
    std::fill(p.begin(), p.end(), 0.0);
    auto fill_uniform = [&](std::size_t offset, std::size_t count, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (std::size_t i = 0; i < count; ++i) p[offset + i] = u(rng);
    };
    for (const auto& c : model.conv_layers()) {
        const double k2 = static_cast<double>(c.kernel * c.kernel);
        fill_uniform(c.kernel_offset, c.kernel * c.kernel * c.in_channels * c.out_channels,
                     k2 * static_cast<double>(c.in_channels), k2 * static_cast<double>(c.out_channels));
    }
    if (const auto& l = model.lstm_layer()) {
        fill_uniform(l->weight_offset, (l->input + l->cells) * 4 * l->cells, static_cast<double>(l->input + l->cells),
                     static_cast<double>(4 * l->cells));
        // Forget-gate bias starts at 1 so early training keeps cell memory.
        for (std::size_t j = 0; j < l->cells; ++j) p[l->bias_offset + l->cells + j] = 1.0;
    }
    for (const auto& d : model.dense_layers()) {
        fill_uniform(d.weight_offset, d.in * d.out, static_cast<double>(d.in), static_cast<double>(d.out));
    }
}

NetworkModel build_model(const Architecture& arch, std::uint64_t seed) {
    NetworkModel m(arch);
    initialize(m, seed);
    return m;
}

NetworkModel build_cnn_model(std::uint64_t seed, const Architecture& arch) {
    if (arch.base != BaseKind::cnn) throw InvalidInput("build_cnn_model needs a cnn architecture");
    return build_model(arch, seed);
}

NetworkModel build_lstm_model(std::uint64_t seed, const Architecture& arch) {
    if (arch.base != BaseKind::lstm) throw InvalidInput("build_lstm_model needs an lstm architecture");
    return build_model(arch, seed);
}

}  // namespace adaptids::nn
