// Python bindings: datasets, checkpoints, per-packet labeling and scenarios.

#include "adaptids/error.hpp"
#include "adaptids/harness.hpp"
#include "adaptids/seqlabel.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace adaptids;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FloatArray matrix_array(const ingest::FlowMatrix& m) {
    FloatArray out({ingest::kMatrixRows, ingest::kMatrixCols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

ingest::FlowMatrix matrix_from(const FloatArray& a, std::size_t n_real) {
    if (a.ndim() != 2 || a.shape(0) != static_cast<py::ssize_t>(ingest::kMatrixRows) ||
        a.shape(1) != static_cast<py::ssize_t>(ingest::kMatrixCols)) {
        throw InvalidInput("a flow matrix must have shape (100, 200)");
    }
    if (n_real > ingest::kMatrixRows) throw InvalidInput("n_real_packets must be at most 100");
    ingest::FlowMatrix m;
    std::copy(a.data(), a.data() + ingest::kMatrixSize, m.data.begin());
    m.n_real_packets = static_cast<std::uint8_t>(n_real);
    return m;
}

py::dict metrics_dict(const nn::Metrics& m) {
    py::dict d;
    d["detection_rate"] = m.detection_rate;
    d["recall_benign"] = m.recall_benign;
    d["recall_attack"] = m.recall_attack;
    d["confusion"] = m.confusion;
    d["total"] = m.total;
    return d;
}

struct Model {
    nn::NetworkModel net;
    std::optional<std::vector<double>> fisher;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Adaptive flow-based intrusion detection core";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidInput>(m, "InvalidInput", error.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<UnsupportedFormat>(m, "UnsupportedFormat", error.ptr());
    py::register_exception<TruncatedCapture>(m, "TruncatedCapture", error.ptr());
    py::register_exception<ContainerError>(m, "ContainerError", error.ptr());
    py::register_exception<InsufficientPool>(m, "InsufficientPool", error.ptr());
    py::register_exception<UnsupportedModel>(m, "UnsupportedModel", error.ptr());

    m.attr("MATRIX_ROWS") = ingest::kMatrixRows;
    m.attr("MATRIX_COLS") = ingest::kMatrixCols;
    m.attr("METRICS_SCHEMA_VERSION") = harness::kMetricsSchemaVersion;

    py::class_<ingest::LabeledDataset>(m, "Dataset")
        .def(py::init<>())
        .def("__len__", &ingest::LabeledDataset::size)
        .def_property_readonly("labels",
                               [](const ingest::LabeledDataset& d) {
                                   py::array_t<std::uint32_t> out(static_cast<py::ssize_t>(d.size()));
                                   for (std::size_t i = 0; i < d.size(); ++i) out.mutable_at(i) = d.samples[i].label;
                                   return out;
                               })
        .def_property_readonly("n_real_packets",
                               [](const ingest::LabeledDataset& d) {
                                   py::array_t<std::uint8_t> out(static_cast<py::ssize_t>(d.size()));
                                   for (std::size_t i = 0; i < d.size(); ++i) {
                                       out.mutable_at(i) = d.samples[i].matrix->n_real_packets;
                                   }
                                   return out;
                               })
        .def_readonly("catalog", &ingest::LabeledDataset::catalog)
        .def_property_readonly("source", [](const ingest::LabeledDataset& d) { return d.provenance.source; })
        .def_property_readonly("seed", [](const ingest::LabeledDataset& d) { return d.provenance.seed; })
        .def("matrix", [](const ingest::LabeledDataset& d, std::size_t i) {
            if (i >= d.size()) throw py::index_error("sample index out of range");
            return matrix_array(*d.samples[i].matrix);
        }, py::arg("index"), "One flow matrix as a (100, 200) float32 array.")
        .def("matrices", [](const ingest::LabeledDataset& d) {
            FloatArray out({d.size(), ingest::kMatrixRows, ingest::kMatrixCols});
            float* dst = out.mutable_data();
            for (const auto& s : d.samples) dst = std::copy(s.matrix->data.begin(), s.matrix->data.end(), dst);
            return out;
        }, "All flow matrices as an (n, 100, 200) float32 array.")
        .def("append", [](ingest::LabeledDataset& d, const FloatArray& matrix, std::uint32_t label, std::size_t n_real,
                          const std::string& name) {
            d.samples.push_back({std::make_shared<const ingest::FlowMatrix>(matrix_from(matrix, n_real)), label});
            if (!name.empty()) d.catalog[label] = name;
            else d.catalog.emplace(label, label == ingest::kBenignLabel ? "benign" : std::to_string(label));
        }, py::arg("matrix"), py::arg("label"), py::arg("n_real_packets"), py::arg("name") = "")
        .def("count", &ingest::LabeledDataset::count_label, py::arg("label"))
        .def("filter", &ingest::LabeledDataset::filter_labels, py::arg("labels"))
        .def("subset", [](const ingest::LabeledDataset& d, std::vector<std::size_t> idx) {
            for (auto i : idx) {
                if (i >= d.size()) throw py::index_error("sample index out of range");
            }
            return d.subset(idx);
        }, py::arg("indices"))
        .def("write", [](const ingest::LabeledDataset& d, const std::filesystem::path& p) { ingest::write_dataset(p, d); },
             py::arg("path"))
        .def_static("read", [](const std::filesystem::path& p) { return ingest::read_dataset(p); }, py::arg("path"))
        .def("same_content", [](const ingest::LabeledDataset& a, const ingest::LabeledDataset& b) {
            return ingest::same_content(a, b);
        })
        .def("__repr__", [](const ingest::LabeledDataset& d) {
            std::ostringstream s;
            s << "Dataset(samples=" << d.size() << ", classes=" << d.catalog.size() << ")";
            return s.str();
        });

    m.def("generate_synthetic",
          [](std::size_t classes, std::size_t flows_per_class, std::size_t min_packets, std::size_t max_packets,
             std::uint64_t seed, double signature_rate, std::vector<std::uint32_t> only_labels) {
              ingest::SyntheticSpec s;
              s.classes = classes;
              s.flows_per_class = flows_per_class;
              s.min_packets = min_packets;
              s.max_packets = max_packets;
              s.seed = seed;
              s.signature_rate = signature_rate;
              s.only_labels = std::move(only_labels);
              py::gil_scoped_release release;
              return ingest::generate_synthetic(s);
          },
          py::arg("classes") = 2, py::arg("flows_per_class") = 100, py::arg("min_packets") = 5,
          py::arg("max_packets") = 40, py::arg("seed") = 1, py::arg("signature_rate") = 0.6,
          py::arg("only_labels") = std::vector<std::uint32_t>{},
          "Synthetic IPv4/UDP conversations; attack classes carry a noisy payload signature.");

    m.def("ingest_pcaps",
          [](const std::vector<std::filesystem::path>& pcaps, const std::optional<std::filesystem::path>& labels,
             bool drop_unmatched, bool anonymize, double idle_timeout) {
              std::vector<ingest::RawPacket> packets;
              for (const auto& p : pcaps) {
                  auto more = ingest::parse_pcap_file(p);
                  packets.insert(packets.end(), std::make_move_iterator(more.begin()),
                                 std::make_move_iterator(more.end()));
              }
              const auto assembled = ingest::assemble_flows(packets, idle_timeout);
              std::vector<ingest::LabelRule> rules;
              if (labels) rules = ingest::read_label_rules(*labels);
              ingest::LabelOptions opts;
              opts.drop_unmatched = drop_unmatched;
              opts.anonymize = anonymize;
              auto labeled = ingest::label_flows(assembled.flows, rules, opts);
              py::dict summary;
              summary["packets"] = packets.size();
              summary["skipped_packets"] = assembled.skipped;
              summary["flows"] = assembled.flows.size();
              summary["warnings"] = labeled.warnings;
              return py::make_tuple(std::move(labeled.dataset), summary);
          },
          py::arg("pcaps"), py::arg("labels") = py::none(), py::arg("drop_unmatched") = false,
          py::arg("anonymize") = true, py::arg("idle_timeout") = ingest::kDefaultIdleTimeoutSeconds,
          "Parse captures, reassemble flows and label them. Returns (dataset, summary).");

    py::class_<Model>(m, "Model")
        .def_static("load", [](const std::filesystem::path& p) {
            auto c = nn::load_checkpoint(p);
            return Model{std::move(c.model), std::move(c.fisher)};
        }, py::arg("path"))
        .def("save", [](const Model& self, const std::filesystem::path& p) {
            nn::save_checkpoint(p, self.net, self.fisher ? &*self.fisher : nullptr);
        }, py::arg("path"))
        .def_property_readonly("param_count", [](const Model& self) { return self.net.param_count(); })
        .def_property_readonly("architecture", [](const Model& self) {
            return nn::architecture_to_json(self.net.architecture());
        })
        .def_property_readonly("has_fisher", [](const Model& self) { return self.fisher.has_value(); })
        .def("predict_proba", [](const Model& self, const FloatArray& matrix, std::size_t n_real) {
            const auto fm = matrix_from(matrix, n_real);
            const auto p = nn::predict_proba(self.net, nn::model_input(self.net.architecture(), fm));
            return std::vector<double>(p.begin(), p.end());
        }, py::arg("matrix"), py::arg("n_real_packets") = ingest::kMatrixRows,
           "Class probabilities [benign, attack] for one flow matrix.")
        .def("evaluate", [](const Model& self, const ingest::LabeledDataset& d) {
            nn::Metrics r;
            {
                py::gil_scoped_release release;
                r = nn::evaluate(self.net, d);
            }
            return metrics_dict(r);
        }, py::arg("dataset"))
        .def("packet_probabilities", [](const Model& self, const FloatArray& matrix, std::size_t n_real) {
            const auto fm = matrix_from(matrix, n_real);
            const auto t = seqlabel::stream_probabilities(self.net, fm, 0, ingest::kBenignLabel);
            return py::array_t<double>(static_cast<py::ssize_t>(t.size()), t.attack_prob.data());
        }, py::arg("matrix"), py::arg("n_real_packets"),
           "p(attack) after each real packet (LSTM models only).")
        .def("decide", [](const Model& self, const FloatArray& matrix, std::size_t n_real, double theta,
                          std::size_t min_packets) -> py::object {
            const auto fm = matrix_from(matrix, n_real);
            const auto d = seqlabel::decide(seqlabel::stream_probabilities(self.net, fm, 0, ingest::kBenignLabel),
                                            theta, min_packets);
            if (d.verdict == seqlabel::Verdict::undecided) return py::none();
            return py::make_tuple(d.verdict == seqlabel::Verdict::attack ? "attack" : "benign", d.packet);
        }, py::arg("matrix"), py::arg("n_real_packets"), py::arg("theta") = 0.9, py::arg("min_packets") = 1,
           "(verdict, packet) at the first confident packet, or None.")
        .def("early_detection_curve", [](const Model& self, const ingest::LabeledDataset& d, std::size_t workers) {
            seqlabel::EarlyDetectionCurve c;
            {
                py::gil_scoped_release release;
                c = seqlabel::early_detection_curve(self.net, d, workers);
            }
            py::dict out;
            out["mean_true_label_prob"] = c.mean_true_label_prob;
            out["mean_attack_prob"] = c.mean_attack_prob;
            out["mean_accuracy"] = c.mean_accuracy;
            out["n_flows"] = c.n_flows;
            return out;
        }, py::arg("dataset"), py::arg("workers") = 1);

    m.def("validate_config", [](const std::string& text) {
        const auto c = harness::parse_config(text);
        c.validate();
        return harness::config_to_json(c);
    }, py::arg("json_text"), "Parse and validate a scenario config; returns it with defaults filled in.");

    m.def("run_scenario", [](const std::string& text) {
        const auto c = harness::parse_config(text);
        py::gil_scoped_release release;
        return harness::run_scenario(c);
    }, py::arg("json_text"), "Run a scenario config and write its artifacts; returns the metrics JSON.");

    m.def("run_scenario_file", [](const std::filesystem::path& p) {
        const auto c = harness::load_config(p);
        py::gil_scoped_release release;
        return harness::run_scenario(c);
    }, py::arg("path"));
}
