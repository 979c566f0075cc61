#include "adaptids/error.hpp"
#include "adaptids/ingest.hpp"

#include <algorithm>
#include <random>

namespace adaptids::ingest {
namespace {

constexpr std::size_t kIpHeader = 20;
constexpr std::size_t kUdpHeader = 8;
constexpr std::size_t kSignatureLength = 8;
constexpr std::size_t kSignatureSpan = 24;   // signature offsets fall in payload[0, 24)
constexpr std::size_t kMinPayload = 32;
constexpr std::size_t kMaxPayload = kMatrixCols - kIpHeader - kUdpHeader;
constexpr int kSignatureJitter = 10;
constexpr double kSignatureByteKeep = 0.85;

struct Signature {
    std::size_t offset = 0;  // within the UDP payload
    std::array<std::uint8_t, kSignatureLength> bytes{};
};

// Signatures depend only on the label so datasets drawn with different seeds
// describe the same attack classes.
Signature signature_for(std::uint32_t label) {
    Signature s;
    s.offset = (static_cast<std::size_t>(label) * 5) % (kSignatureSpan - 1);
    std::mt19937_64 rng(0x5157A7u + 7919u * label);
    // Extreme byte values keep the signature visible against uniform payload.
    std::uniform_int_distribution<int> byte(0, 31);
    for (auto& b : s.bytes) b = static_cast<std::uint8_t>((rng() & 1) ? byte(rng) : 255 - byte(rng));
    return s;
}

std::vector<std::uint8_t> make_datagram(const IpAddress& src, std::uint16_t sport, const IpAddress& dst,
                                        std::uint16_t dport, std::size_t payload_len, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> byte(0, 255);
    std::vector<std::uint8_t> d(kIpHeader + kUdpHeader + payload_len);
    const auto total = static_cast<std::uint16_t>(d.size());
    d[0] = 0x45;
    d[1] = 0;
    d[2] = static_cast<std::uint8_t>(total >> 8);
    d[3] = static_cast<std::uint8_t>(total & 0xFF);
    d[4] = static_cast<std::uint8_t>(byte(rng));
    d[5] = static_cast<std::uint8_t>(byte(rng));
    d[6] = 0x40;  // DF
    d[7] = 0;
    d[8] = static_cast<std::uint8_t>((byte(rng) & 1) ? 64 - (byte(rng) % 8) : 128 - (byte(rng) % 8));
    d[9] = 17;
    std::copy_n(src.bytes.begin(), 4, d.begin() + 12);
    std::copy_n(dst.bytes.begin(), 4, d.begin() + 16);
    std::uint32_t sum = 0;
    for (std::size_t i = 0; i < kIpHeader; i += 2) sum += static_cast<std::uint32_t>((d[i] << 8) | d[i + 1]);
    while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
    const auto csum = static_cast<std::uint16_t>(~sum);
    d[10] = static_cast<std::uint8_t>(csum >> 8);
    d[11] = static_cast<std::uint8_t>(csum & 0xFF);
    auto* udp = d.data() + kIpHeader;
    const auto udp_len = static_cast<std::uint16_t>(kUdpHeader + payload_len);
    udp[0] = static_cast<std::uint8_t>(sport >> 8);
    udp[1] = static_cast<std::uint8_t>(sport & 0xFF);
    udp[2] = static_cast<std::uint8_t>(dport >> 8);
    udp[3] = static_cast<std::uint8_t>(dport & 0xFF);
    udp[4] = static_cast<std::uint8_t>(udp_len >> 8);
    udp[5] = static_cast<std::uint8_t>(udp_len & 0xFF);
    udp[6] = static_cast<std::uint8_t>(byte(rng));
    udp[7] = static_cast<std::uint8_t>(byte(rng));
    for (std::size_t i = 0; i < payload_len; ++i) udp[kUdpHeader + i] = static_cast<std::uint8_t>(byte(rng));
    return d;
}

}  // namespace

std::string synthetic_class_name(std::uint32_t label) {
    return label == kBenignLabel ? "benign" : "attack-" + std::to_string(label);
}

std::vector<SyntheticFlow> generate_synthetic_flows(const SyntheticSpec& spec) {
    if (spec.classes < 2) throw InvalidInput("synthetic traffic needs at least 2 classes");
    if (spec.flows_per_class == 0) throw InvalidInput("synthetic traffic needs at least 1 flow per class");
    if (spec.min_packets == 0 || spec.min_packets > spec.max_packets) {
        throw InvalidInput("synthetic packets-per-flow range must satisfy 1 <= min <= max");
    }
    if (spec.signature_rate <= 0.0 || spec.signature_rate > 1.0) {
        throw InvalidInput("signature_rate must lie in (0, 1]");
    }
    std::vector<std::uint32_t> labels = spec.only_labels;
    if (labels.empty()) {
        for (std::uint32_t c = 0; c < spec.classes; ++c) labels.push_back(c);
    }
    for (auto l : labels) {
        if (l >= spec.classes) throw InvalidInput("synthetic label " + std::to_string(l) + " outside class range");
    }

    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> octet(1, 254);
    std::uniform_int_distribution<int> ephemeral(1024, 65535);
    std::uniform_int_distribution<std::size_t> n_packets(spec.min_packets, spec.max_packets);
    std::uniform_int_distribution<std::size_t> payload(kMinPayload, kMaxPayload);
    std::uniform_int_distribution<std::int64_t> start(0, 3'600'000'000LL);
    std::uniform_int_distribution<std::int64_t> gap(200, 50'000);
    std::uniform_int_distribution<int> jitter(-kSignatureJitter, kSignatureJitter);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::uint16_t services[] = {53, 80, 123, 443, 1900, 5353, 8080, 9999};

    std::vector<SyntheticFlow> out;
    out.reserve(labels.size() * spec.flows_per_class);
    for (auto label : labels) {
        const auto sig = signature_for(label);
        for (std::size_t f = 0; f < spec.flows_per_class; ++f) {
            const auto client = IpAddress::v4(10, static_cast<std::uint8_t>(octet(rng)),
                                              static_cast<std::uint8_t>(octet(rng)),
                                              static_cast<std::uint8_t>(octet(rng)));
            const auto server = IpAddress::v4(172, 16, static_cast<std::uint8_t>(octet(rng)),
                                              static_cast<std::uint8_t>(octet(rng)));
            const auto cport = static_cast<std::uint16_t>(ephemeral(rng));
            const auto sport = services[rng() % std::size(services)];

            SyntheticFlow sf;
            sf.label = label;
            sf.flow.key = FlowKey::make(client, cport, server, sport, 17);
            std::int64_t ts = start(rng);
            sf.flow.first_seen = ts;
            const std::size_t n = n_packets(rng);
            for (std::size_t p = 0; p < n; ++p) {
                const bool outbound = unit(rng) < 0.6;
                auto bytes = outbound ? make_datagram(client, cport, server, sport, payload(rng), rng)
                                      : make_datagram(server, sport, client, cport, payload(rng), rng);
                if (label != kBenignLabel && unit(rng) < spec.signature_rate) {
                    auto* body = bytes.data() + kIpHeader + kUdpHeader + sig.offset;
                    for (std::size_t j = 0; j < kSignatureLength; ++j) {
                        if (unit(rng) < kSignatureByteKeep) {
                            body[j] = static_cast<std::uint8_t>(std::clamp(sig.bytes[j] + jitter(rng), 0, 255));
                        }
                    }
                }
                sf.flow.packets.push_back({ts, std::move(bytes)});
                sf.flow.last_seen = ts;
                ts += gap(rng);
            }
            out.push_back(std::move(sf));
        }
    }
    return out;
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
    LabeledDataset ds;
    for (const auto& sf : generate_synthetic_flows(spec)) {
        ds.samples.push_back({std::make_shared<const FlowMatrix>(flow_to_matrix(sf.flow, true)), sf.label});
        ds.catalog.emplace(sf.label, synthetic_class_name(sf.label));
    }
    ds.provenance.source = "synthetic classes=" + std::to_string(spec.classes) +
                           " flows_per_class=" + std::to_string(spec.flows_per_class) +
                           " packets=" + std::to_string(spec.min_packets) + ".." + std::to_string(spec.max_packets);
    ds.provenance.seed = spec.seed;
    return ds;
}

}  // namespace adaptids::ingest
