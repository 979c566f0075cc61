#pragma once

// Packet capture parsing, flow reassembly, flow-matrix encoding, labeling,
// synthetic traffic generation and the on-disk dataset container.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace adaptids::ingest {

inline constexpr std::size_t kMatrixRows = 100;  // packets per flow
inline constexpr std::size_t kMatrixCols = 200;  // bytes per packet
inline constexpr std::size_t kMatrixSize = kMatrixRows * kMatrixCols;

inline constexpr std::uint32_t kBenignLabel = 0;

// Link-layer types understood by the flow assembler.
inline constexpr std::uint32_t kLinkEthernet = 1;
inline constexpr std::uint32_t kLinkRaw = 101;
inline constexpr std::uint32_t kLinkIPv4 = 228;
inline constexpr std::uint32_t kLinkIPv6 = 229;

struct RawPacket {
    std::int64_t timestamp_us = 0;
    std::vector<std::uint8_t> link_bytes;
    std::uint32_t orig_len = 0;
    std::uint32_t link_type = kLinkEthernet;
};

struct IpAddress {
    std::uint8_t version = 4;
    std::array<std::uint8_t, 16> bytes{};  // IPv4 uses the first 4 bytes

    auto operator<=>(const IpAddress&) const = default;
    std::string to_string() const;
    static IpAddress parse(const std::string& text);
    static IpAddress v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d);
};

/// Canonical bidirectional 5-tuple: (ip_lo, port_lo) <= (ip_hi, port_hi).
struct FlowKey {
    IpAddress ip_lo;
    IpAddress ip_hi;
    std::uint16_t port_lo = 0;
    std::uint16_t port_hi = 0;
    std::uint8_t protocol = 0;

    auto operator<=>(const FlowKey&) const = default;

    static FlowKey make(const IpAddress& src, std::uint16_t sport, const IpAddress& dst,
                        std::uint16_t dport, std::uint8_t protocol);
    std::string to_string() const;
};

struct PacketRecord {
    std::int64_t timestamp_us = 0;
    std::vector<std::uint8_t> bytes;  // network-layer datagram (IP header first)
};

struct Flow {
    FlowKey key;
    std::vector<PacketRecord> packets;
    std::int64_t first_seen = 0;
    std::int64_t last_seen = 0;
};

/// One flow as a 100x200 grid of bytes scaled into [0,1]. Rows at or beyond
/// n_real_packets are zero.
struct FlowMatrix {
    std::vector<float> data = std::vector<float>(kMatrixSize, 0.0f);
    std::uint8_t n_real_packets = 0;

    float at(std::size_t row, std::size_t col) const { return data[row * kMatrixCols + col]; }
    float& at(std::size_t row, std::size_t col) { return data[row * kMatrixCols + col]; }
    std::span<const float> row(std::size_t r) const {
        return {data.data() + r * kMatrixCols, kMatrixCols};
    }
    bool operator==(const FlowMatrix&) const = default;
};

using FlowMatrixPtr = std::shared_ptr<const FlowMatrix>;

struct Sample {
    FlowMatrixPtr matrix;
    std::uint32_t label = kBenignLabel;
};

struct Provenance {
    std::string source;
    std::uint64_t seed = 0;
    bool operator==(const Provenance&) const = default;
};

/// Labeled flow matrices. Samples share immutable matrices, so copying or
/// subsetting a dataset is cheap.
struct LabeledDataset {
    std::vector<Sample> samples;
    std::map<std::uint32_t, std::string> catalog;
    Provenance provenance;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    /// Throws InvalidInput if a sample's label is missing from the catalog.
    void validate() const;
    std::size_t count_label(std::uint32_t label) const;
    LabeledDataset subset(std::span<const std::size_t> indices) const;
    LabeledDataset filter_labels(const std::vector<std::uint32_t>& labels) const;
    void append(const LabeledDataset& other);
};

bool same_content(const LabeledDataset& a, const LabeledDataset& b);

// ---- pcap -----------------------------------------------------------------

struct PcapHeader {
    bool swapped = false;
    std::uint16_t version_major = 2;
    std::uint16_t version_minor = 4;
    std::uint32_t snaplen = 65535;
    std::uint32_t link_type = kLinkEthernet;
};

/// Streams classic (microsecond) pcap records in file order.
class PcapReader {
public:
    explicit PcapReader(std::istream& in);
    const PcapHeader& header() const { return header_; }
    std::optional<RawPacket> next();

private:
    std::istream& in_;
    PcapHeader header_;
    std::uint64_t offset_ = 0;
};

std::vector<RawPacket> parse_pcap(std::istream& in);
std::vector<RawPacket> parse_pcap_file(const std::filesystem::path& path);

/// Serializes packets as a little-endian classic pcap stream.
std::vector<std::uint8_t> write_pcap(std::span<const RawPacket> packets,
                                     std::uint32_t link_type = kLinkEthernet,
                                     bool big_endian = false);

// ---- flows ----------------------------------------------------------------

struct ParsedPacket {
    FlowKey key;
    std::size_t l3_offset = 0;
};

/// Locates the network header and transport ports of a link-layer frame.
/// Returns nullopt for non-IP or non-TCP/UDP traffic.
std::optional<ParsedPacket> parse_packet(std::span<const std::uint8_t> link_bytes,
                                         std::uint32_t link_type);

struct AssembleResult {
    std::vector<Flow> flows;
    std::size_t skipped = 0;
};

inline constexpr double kDefaultIdleTimeoutSeconds = 120.0;

/// Groups packets into canonical bidirectional flows. A gap larger than
/// idle_timeout between consecutive packets of a key starts a new flow.
/// Output flows are ordered by (first_seen, key).
AssembleResult assemble_flows(std::span<const RawPacket> packets,
                              double idle_timeout_seconds = kDefaultIdleTimeoutSeconds);

/// Encodes up to 100 packets x 200 bytes, scaled by 1/255. With anonymize,
/// IP addresses and IP/TCP/UDP checksums are zeroed first.
FlowMatrix flow_to_matrix(const Flow& flow, bool anonymize = true);

/// Stable across runs and platforms; direction-free.
std::uint64_t flow_hash(const FlowKey& key);
std::size_t assign_flow(const FlowKey& key, std::size_t n_agents);

// ---- labels ---------------------------------------------------------------

struct LabelRule {
    std::optional<IpAddress> src_ip;
    std::optional<IpAddress> dst_ip;
    std::optional<std::uint16_t> src_port;
    std::optional<std::uint16_t> dst_port;
    std::optional<std::uint8_t> protocol;
    std::optional<std::int64_t> start_us;
    std::optional<std::int64_t> end_us;
    std::string label;

    /// Matches either direction of the conversation; the time window must
    /// overlap [first_seen, last_seen].
    bool matches(const Flow& flow) const;
};

/// CSV columns: src_ip,dst_ip,src_port,dst_port,protocol,start_us,end_us,label
std::vector<LabelRule> parse_label_rules(std::istream& csv);
std::vector<LabelRule> read_label_rules(const std::filesystem::path& path);

struct LabelOptions {
    bool drop_unmatched = false;
    std::string benign_name = "benign";
    bool anonymize = true;
};

struct LabelResult {
    LabeledDataset dataset;
    std::vector<std::string> warnings;
    std::vector<std::uint32_t> flow_labels;  // per input flow; benign for dropped
};

LabelResult label_flows(std::span<const Flow> flows, std::span<const LabelRule> rules,
                        const LabelOptions& options = {});

// ---- synthetic traffic ----------------------------------------------------

struct SyntheticSpec {
    std::size_t classes = 2;            // including benign (label 0)
    std::size_t flows_per_class = 100;
    std::size_t min_packets = 5;
    std::size_t max_packets = 40;
    std::uint64_t seed = 1;
    /// Probability that a given attack packet carries its class signature.
    double signature_rate = 0.6;
    /// When non-empty, only these labels are emitted (benign must be listed
    /// explicitly). Signatures depend on the label, not on this list.
    std::vector<std::uint32_t> only_labels;
};

struct SyntheticFlow {
    Flow flow;
    std::uint32_t label = kBenignLabel;
};

/// Synthetic conversations (IPv4/UDP) whose attack classes carry a noisy
/// multi-byte payload signature at a class-dependent offset.
std::vector<SyntheticFlow> generate_synthetic_flows(const SyntheticSpec& spec);
LabeledDataset generate_synthetic(const SyntheticSpec& spec);
std::string synthetic_class_name(std::uint32_t label);

// ---- container ------------------------------------------------------------

inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(std::ostream& out, const LabeledDataset& dataset);
LabeledDataset read_dataset(std::istream& in);
void write_dataset(const std::filesystem::path& path, const LabeledDataset& dataset);
LabeledDataset read_dataset(const std::filesystem::path& path);

}  // namespace adaptids::ingest
