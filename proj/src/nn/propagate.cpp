#include "adaptids/error.hpp"
#include "adaptids/nn.hpp"

#include <algorithm>
#include <cmath>

namespace adaptids::nn {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void apply_relu_dropout(const std::vector<double>& pre, std::vector<double>& out, std::vector<double>& drop,
                        double rate, Mode mode, Rng* rng) {
    out.resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
    drop.clear();
    if (mode == Mode::eval || rate == 0.0) return;
    if (!rng) throw InvalidInput("train-mode forward with dropout needs a random generator");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - rate);
    drop.resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
        drop[i] = u(*rng) >= rate ? keep_scale : 0.0;
        out[i] *= drop[i];
    }
}

void dense_forward(const NetworkModel& model, std::span<const double> features, Mode mode, Rng* rng,
                   DenseCache& cache, Logits& logits) {
    const auto p = model.params();
    const auto& layers = model.dense_layers();
    const std::size_t n = layers.size();
    cache.pre.resize(n);
    cache.out.resize(n - 1);
    cache.drop.resize(n - 1);
    std::span<const double> a = features;
    for (std::size_t l = 0; l < n; ++l) {
        const auto& d = layers[l];
        auto& z = cache.pre[l];
        z.assign(p.begin() + static_cast<std::ptrdiff_t>(d.bias_offset),
                 p.begin() + static_cast<std::ptrdiff_t>(d.bias_offset + d.out));
        const double* w = p.data() + d.weight_offset;
        for (std::size_t i = 0; i < d.in; ++i) {
            const double ai = a[i];
            if (ai == 0.0) continue;
            const double* row = w + i * d.out;
            for (std::size_t o = 0; o < d.out; ++o) z[o] += row[o] * ai;
        }
        if (l + 1 == n) {
            logits = {z[0], z[1]};
        } else {
            apply_relu_dropout(z, cache.out[l], cache.drop[l], model.architecture().dropout, mode, rng);
            a = cache.out[l];
        }
    }
}

// Returns d(loss)/d(features) when want_input is set.
std::vector<double> dense_backward(const NetworkModel& model, std::span<const double> features,
                                   const DenseCache& cache, const Logits& dlogits, std::span<double> grad,
                                   bool want_input) {
    const auto p = model.params();
    const auto& layers = model.dense_layers();
    std::vector<double> delta(dlogits.begin(), dlogits.end());
    std::vector<double> da;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& d = layers[l];
        std::span<const double> a = l == 0 ? features : std::span<const double>(cache.out[l - 1]);
        for (std::size_t o = 0; o < d.out; ++o) grad[d.bias_offset + o] += delta[o];
        double* gw = grad.data() + d.weight_offset;
        const double* w = p.data() + d.weight_offset;
        const bool need_da = l > 0 || want_input;
        if (need_da) da.assign(d.in, 0.0);
        for (std::size_t i = 0; i < d.in; ++i) {
            const double ai = a[i];
            double* grow = gw + i * d.out;
            const double* row = w + i * d.out;
            if (ai != 0.0) {
                for (std::size_t o = 0; o < d.out; ++o) grow[o] += ai * delta[o];
            }
            if (need_da) {
                double s = 0.0;
                for (std::size_t o = 0; o < d.out; ++o) s += row[o] * delta[o];
                da[i] = s;
            }
        }
        if (l == 0) break;
        const auto& pre = cache.pre[l - 1];
        const auto& drop = cache.drop[l - 1];
        delta.assign(d.in, 0.0);
        for (std::size_t i = 0; i < d.in; ++i) {
            if (pre[i] <= 0.0) continue;
            delta[i] = drop.empty() ? da[i] : da[i] * drop[i];
        }
    }
    if (!want_input) return {};
    return da;
}

void conv_forward_layer(const NetworkModel& model, const ConvLayer& c, std::span<const double> in,
                        std::vector<double>& pre) {
    const auto p = model.params();
    const std::size_t oc = c.out_channels, ic = c.in_channels, k = c.kernel;
    pre.assign(c.out_h * c.out_w * oc, 0.0);
    const double* bias = p.data() + c.bias_offset;
    for (std::size_t r = 0; r < c.out_h; ++r) {
        for (std::size_t col = 0; col < c.out_w; ++col) {
            double* dst = pre.data() + (r * c.out_w + col) * oc;
            for (std::size_t o = 0; o < oc; ++o) dst[o] = bias[o];
            for (std::size_t kr = 0; kr < k; ++kr) {
                for (std::size_t kc = 0; kc < k; ++kc) {
                    const double* src = in.data() + ((r + kr) * c.in_w + (col + kc)) * ic;
                    const double* wbase = p.data() + c.weight_index(kr, kc, 0, 0);
                    for (std::size_t i = 0; i < ic; ++i) {
                        const double v = src[i];
                        if (v == 0.0) continue;
                        const double* w = wbase + i * oc;
                        for (std::size_t o = 0; o < oc; ++o) dst[o] += w[o] * v;
                    }
                }
            }
        }
    }
}

void conv_backward_layer(const NetworkModel& model, const ConvLayer& c, std::span<const double> in,
                         const std::vector<double>& dpre, std::span<double> grad, std::vector<double>* din) {
    const auto p = model.params();
    const std::size_t oc = c.out_channels, ic = c.in_channels, k = c.kernel;
    if (din) din->assign(c.in_h * c.in_w * ic, 0.0);
    double* gbias = grad.data() + c.bias_offset;
    for (std::size_t r = 0; r < c.out_h; ++r) {
        for (std::size_t col = 0; col < c.out_w; ++col) {
            const double* dz = dpre.data() + (r * c.out_w + col) * oc;
            bool any = false;
            for (std::size_t o = 0; o < oc; ++o) {
                gbias[o] += dz[o];
                any = any || dz[o] != 0.0;
            }
            if (!any) continue;
            for (std::size_t kr = 0; kr < k; ++kr) {
                for (std::size_t kc = 0; kc < k; ++kc) {
                    const std::size_t pos = ((r + kr) * c.in_w + (col + kc)) * ic;
                    const double* src = in.data() + pos;
                    const std::size_t wi = c.weight_index(kr, kc, 0, 0);
                    for (std::size_t i = 0; i < ic; ++i) {
                        const double v = src[i];
                        double* gw = grad.data() + wi + i * oc;
                        if (v != 0.0) {
                            for (std::size_t o = 0; o < oc; ++o) gw[o] += v * dz[o];
                        }
                        if (din) {
                            const double* w = p.data() + wi + i * oc;
                            double s = 0.0;
                            for (std::size_t o = 0; o < oc; ++o) s += w[o] * dz[o];
                            (*din)[pos + i] += s;
                        }
                    }
                }
            }
        }
    }
}

// One LSTM step. gates receives activated i,f,g,o.
void lstm_step(const NetworkModel& model, std::span<const double> x, std::span<const double> h_prev,
               std::span<const double> c_prev, std::vector<double>& gates, std::vector<double>& c_out,
               std::vector<double>& h_out) {
    const auto& l = *model.lstm_layer();
    const auto p = model.params();
    const std::size_t H = l.cells, G = 4 * H;
    gates.assign(p.begin() + static_cast<std::ptrdiff_t>(l.bias_offset),
                 p.begin() + static_cast<std::ptrdiff_t>(l.bias_offset + G));
    for (std::size_t r = 0; r < l.input; ++r) {
        const double v = x[r];
        if (v == 0.0) continue;
        const double* row = p.data() + l.weight_index(r, 0);
        for (std::size_t j = 0; j < G; ++j) gates[j] += row[j] * v;
    }
    for (std::size_t r = 0; r < H; ++r) {
        const double v = h_prev[r];
        if (v == 0.0) continue;
        const double* row = p.data() + l.weight_index(l.input + r, 0);
        for (std::size_t j = 0; j < G; ++j) gates[j] += row[j] * v;
    }
    c_out.resize(H);
    h_out.resize(H);
    for (std::size_t j = 0; j < H; ++j) {
        const double ig = sigmoid(gates[j]);
        const double fg = sigmoid(gates[H + j]);
        const double gg = std::tanh(gates[2 * H + j]);
        const double og = sigmoid(gates[3 * H + j]);
        gates[j] = ig;
        gates[H + j] = fg;
        gates[2 * H + j] = gg;
        gates[3 * H + j] = og;
        c_out[j] = fg * c_prev[j] + ig * gg;
        h_out[j] = og * std::tanh(c_out[j]);
    }
}

}  // namespace

Logits softmax(const Logits& z, double temperature) {
    const double a = z[0] / temperature, b = z[1] / temperature;
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    const double s = ea + eb;
    return {ea / s, eb / s};
}

double log_softmax_at(const Logits& z, int index) {
    const double m = std::max(z[0], z[1]);
    const double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
    return z[static_cast<std::size_t>(index)] - lse;
}

void check_input(const Architecture& arch, const Tensor& input) {
    auto fail = [&](const std::string& expected) {
        throw ShapeMismatch("input shape mismatch: expected " + expected + ", got " + input.shape_string());
    };
    switch (arch.base) {
        case BaseKind::none:
            if (input.rank() != 1 || input.dim(0) != arch.input_rows * arch.input_cols) {
                fail("[" + std::to_string(arch.input_rows * arch.input_cols) + "]");
            }
            break;
        case BaseKind::cnn:
            if (input.rank() != 2 || input.dim(0) != arch.input_rows || input.dim(1) != arch.input_cols) {
                fail("[" + std::to_string(arch.input_rows) + "," + std::to_string(arch.input_cols) + "]");
            }
            break;
        case BaseKind::lstm:
            if (input.rank() == 2 && input.dim(0) == 0) throw InvalidInput("empty packet sequence");
            if (input.rank() != 2 || input.dim(1) != arch.input_cols || input.dim(0) > ingest::kMatrixRows) {
                fail("[1..100," + std::to_string(arch.input_cols) + "]");
            }
            break;
    }
}

Tensor model_input(const Architecture& arch, const ingest::FlowMatrix& matrix) {
    std::size_t rows = arch.input_rows;
    if (arch.base == BaseKind::lstm) {
        rows = std::clamp<std::size_t>(matrix.n_real_packets, 1, arch.input_rows);
    }
    std::vector<double> v;
    v.reserve(rows * arch.input_cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < arch.input_cols; ++c) v.push_back(static_cast<double>(matrix.at(r, c)));
    }
    if (arch.base == BaseKind::none) return Tensor({rows * arch.input_cols}, std::move(v));
    return Tensor({rows, arch.input_cols}, std::move(v));
}

ForwardResult forward(const NetworkModel& model, const Tensor& input, Mode mode, Rng* rng) {
    const auto& arch = model.architecture();
    check_input(arch, input);
    ForwardResult res;
    auto& cache = res.cache;
    const double rate = arch.dropout;

    if (arch.base == BaseKind::lstm) {
        const std::size_t T = input.dim(0), H = model.lstm_layer()->cells;
        cache.gates.resize(T);
        cache.cell.resize(T);
        cache.hidden.resize(T);
        cache.hidden_raw.resize(T);
        cache.hidden_drop.resize(T);
        cache.dense.resize(T);
        res.logits.resize(T);
        std::vector<double> zeros(H, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            std::span<const double> x(input.data() + t * arch.input_cols, arch.input_cols);
            std::span<const double> h_prev = t == 0 ? std::span<const double>(zeros) : cache.hidden_raw[t - 1];
            std::span<const double> c_prev = t == 0 ? std::span<const double>(zeros) : cache.cell[t - 1];
            lstm_step(model, x, h_prev, c_prev, cache.gates[t], cache.cell[t], cache.hidden_raw[t]);
            auto& h = cache.hidden[t];
            h = cache.hidden_raw[t];
            auto& drop = cache.hidden_drop[t];
            drop.clear();
            if (mode == Mode::train && rate > 0.0) {
                if (!rng) throw InvalidInput("train-mode forward with dropout needs a random generator");
                std::uniform_real_distribution<double> u(0.0, 1.0);
                drop.resize(H);
                for (std::size_t j = 0; j < H; ++j) {
                    drop[j] = u(*rng) >= rate ? 1.0 / (1.0 - rate) : 0.0;
                    h[j] *= drop[j];
                }
            }
            dense_forward(model, h, mode, rng, cache.dense[t], res.logits[t]);
        }
    } else {
        std::span<const double> features = input.values();
        if (arch.base == BaseKind::cnn) {
            const auto& convs = model.conv_layers();
            cache.conv_pre.resize(convs.size());
            cache.conv_out.resize(convs.size());
            cache.conv_drop.resize(convs.size());
            for (std::size_t i = 0; i < convs.size(); ++i) {
                conv_forward_layer(model, convs[i], features, cache.conv_pre[i]);
                apply_relu_dropout(cache.conv_pre[i], cache.conv_out[i], cache.conv_drop[i], rate, mode, rng);
                features = cache.conv_out[i];
            }
        }
        cache.dense.resize(1);
        res.logits.resize(1);
        dense_forward(model, features, mode, rng, cache.dense[0], res.logits[0]);
    }
    res.probs.reserve(res.logits.size());
    for (const auto& z : res.logits) res.probs.push_back(softmax(z));
    return res;
}

void backward(const NetworkModel& model, const Tensor& input, const ForwardCache& cache,
              std::span<const Logits> dlogits, std::span<double> grad) {
    const auto& arch = model.architecture();
    if (grad.size() != model.param_count()) {
        throw ShapeMismatch("gradient buffer has " + std::to_string(grad.size()) + " entries, model has " +
                            std::to_string(model.param_count()));
    }
    if (dlogits.size() != cache.dense.size()) {
        throw ShapeMismatch("expected " + std::to_string(cache.dense.size()) + " logit gradients, got " +
                            std::to_string(dlogits.size()));
    }
    const auto p = model.params();

    if (arch.base == BaseKind::none) {
        dense_backward(model, input.values(), cache.dense[0], dlogits[0], grad, false);
        return;
    }
    if (arch.base == BaseKind::cnn) {
        const auto& convs = model.conv_layers();
        auto dfeat = dense_backward(model, cache.conv_out.back(), cache.dense[0], dlogits[0], grad, true);
        std::vector<double> dpre, din;
        for (std::size_t li = convs.size(); li-- > 0;) {
            const auto& pre = cache.conv_pre[li];
            const auto& drop = cache.conv_drop[li];
            dpre.assign(pre.size(), 0.0);
            for (std::size_t i = 0; i < pre.size(); ++i) {
                if (pre[i] <= 0.0) continue;
                dpre[i] = drop.empty() ? dfeat[i] : dfeat[i] * drop[i];
            }
            std::span<const double> in = li == 0 ? input.values() : std::span<const double>(cache.conv_out[li - 1]);
            conv_backward_layer(model, convs[li], in, dpre, grad, li == 0 ? nullptr : &din);
            if (li > 0) dfeat.swap(din);
        }
        return;
    }

    // LSTM: backpropagation through time.
    const auto& l = *model.lstm_layer();
    const std::size_t T = cache.dense.size(), H = l.cells, G = 4 * H;
    std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), dz(G), zeros(H, 0.0);
    for (std::size_t t = T; t-- > 0;) {
        auto dhidden = dense_backward(model, cache.hidden[t], cache.dense[t], dlogits[t], grad, true);
        const auto& drop = cache.hidden_drop[t];
        const auto& gates = cache.gates[t];
        const auto& c_t = cache.cell[t];
        const auto& c_prev = t == 0 ? zeros : cache.cell[t - 1];
        const auto& h_prev = t == 0 ? zeros : cache.hidden_raw[t - 1];
        for (std::size_t j = 0; j < H; ++j) {
            const double dh = (drop.empty() ? dhidden[j] : dhidden[j] * drop[j]) + dh_next[j];
            const double ig = gates[j], fg = gates[H + j], gg = gates[2 * H + j], og = gates[3 * H + j];
            const double tc = std::tanh(c_t[j]);
            const double dc = dh * og * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * gg * ig * (1.0 - ig);
            dz[H + j] = dc * c_prev[j] * fg * (1.0 - fg);
            dz[2 * H + j] = dc * ig * (1.0 - gg * gg);
            dz[3 * H + j] = dh * tc * og * (1.0 - og);
            dc_next[j] = dc * fg;
        }
        for (std::size_t j = 0; j < G; ++j) grad[l.bias_offset + j] += dz[j];
        const double* x = input.data() + t * arch.input_cols;
        for (std::size_t r = 0; r < l.input; ++r) {
            const double v = x[r];
            if (v == 0.0) continue;
            double* gw = grad.data() + l.weight_index(r, 0);
            for (std::size_t j = 0; j < G; ++j) gw[j] += v * dz[j];
        }
        for (std::size_t r = 0; r < H; ++r) {
            const double v = h_prev[r];
            const std::size_t wi = l.weight_index(l.input + r, 0);
            if (v != 0.0) {
                double* gw = grad.data() + wi;
                for (std::size_t j = 0; j < G; ++j) gw[j] += v * dz[j];
            }
            const double* w = p.data() + wi;
            double s = 0.0;
            for (std::size_t j = 0; j < G; ++j) s += w[j] * dz[j];
            dh_next[r] = s;
        }
    }
}

LstmStream::LstmStream(const NetworkModel& model) : model_(&model) {
    if (model.base() != BaseKind::lstm) {
        throw UnsupportedModel("streaming evaluation needs an LSTM-based model, got " + to_string(model.base()));
    }
    h_.assign(model.lstm_layer()->cells, 0.0);
    c_.assign(model.lstm_layer()->cells, 0.0);
}

Logits LstmStream::push(std::span<const double> packet) {
    const auto& arch = model_->architecture();
    if (packet.size() != arch.input_cols) {
        throw ShapeMismatch("packet vector has " + std::to_string(packet.size()) + " values, model expects " +
                            std::to_string(arch.input_cols));
    }
    std::vector<double> gates, c, h;
    lstm_step(*model_, packet, h_, c_, gates, c, h);
    h_.swap(h);
    c_.swap(c);
    ++steps_;
    DenseCache cache;
    Logits z{};
    dense_forward(*model_, h_, Mode::eval, nullptr, cache, z);
    return softmax(z);
}

}  // namespace adaptids::nn
