#include "adaptids/error.hpp"
#include "adaptids/ingest.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace adaptids::ingest {
namespace {

constexpr std::uint32_t kMagicMicro = 0xA1B2C3D4;
constexpr std::uint32_t kMagicMicroSwapped = 0xD4C3B2A1;
constexpr std::uint32_t kMagicNano = 0xA1B23C4D;
constexpr std::uint32_t kMagicNanoSwapped = 0x4D3CB2A1;
constexpr std::uint32_t kMaxRecord = 1u << 26;

std::uint32_t swap32(std::uint32_t v) {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

std::uint16_t swap16(std::uint16_t v) { return static_cast<std::uint16_t>((v << 8) | (v >> 8)); }

}  // namespace

PcapReader::PcapReader(std::istream& in) : in_(in) {
    std::uint8_t raw[24];
    if (!detail::get_raw(in_, raw, sizeof(raw))) {
        throw TruncatedCapture(0, "pcap global header is shorter than 24 bytes");
    }
    offset_ = sizeof(raw);
    std::uint32_t magic;
    std::memcpy(&magic, raw, 4);
    if (magic == kMagicNano || magic == kMagicNanoSwapped) {
        throw UnsupportedFormat("nanosecond-resolution pcap is not supported; convert to microsecond pcap");
    }
    if (magic != kMagicMicro && magic != kMagicMicroSwapped) {
        std::ostringstream msg;
        msg << "not a classic pcap file (magic 0x" << std::hex << magic << ")";
        throw UnsupportedFormat(msg.str());
    }
    header_.swapped = magic == kMagicMicroSwapped;
    auto u16 = [&](std::size_t at) {
        std::uint16_t v;
        std::memcpy(&v, raw + at, 2);
        return header_.swapped ? swap16(v) : v;
    };
    auto u32 = [&](std::size_t at) {
        std::uint32_t v;
        std::memcpy(&v, raw + at, 4);
        return header_.swapped ? swap32(v) : v;
    };
    header_.version_major = u16(4);
    header_.version_minor = u16(6);
    header_.snaplen = u32(16);
    header_.link_type = u32(20);
}

std::optional<RawPacket> PcapReader::next() {
    std::uint8_t raw[16];
    in_.read(reinterpret_cast<char*>(raw), sizeof(raw));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got == 0) return std::nullopt;
    if (got < sizeof(raw)) throw TruncatedCapture(offset_, "truncated pcap record header");

    auto u32 = [&](std::size_t at) {
        std::uint32_t v;
        std::memcpy(&v, raw + at, 4);
        return header_.swapped ? swap32(v) : v;
    };
    const std::uint32_t ts_sec = u32(0);
    const std::uint32_t ts_usec = u32(4);
    const std::uint32_t incl_len = u32(8);
    const std::uint32_t orig_len = u32(12);
    if (incl_len > kMaxRecord || incl_len > orig_len) {
        throw UnsupportedFormat("corrupt pcap record at byte offset " + std::to_string(offset_) +
                                ": captured length " + std::to_string(incl_len) +
                                ", original length " + std::to_string(orig_len));
    }

    RawPacket packet;
    packet.timestamp_us = static_cast<std::int64_t>(ts_sec) * 1'000'000 + ts_usec;
    packet.orig_len = orig_len;
    packet.link_type = header_.link_type;
    packet.link_bytes.resize(incl_len);
    if (!detail::get_raw(in_, packet.link_bytes.data(), incl_len)) {
        throw TruncatedCapture(offset_, "truncated pcap record body");
    }
    offset_ += sizeof(raw) + incl_len;
    return packet;
}

std::vector<RawPacket> parse_pcap(std::istream& in) {
    PcapReader reader(in);
    std::vector<RawPacket> packets;
    while (auto p = reader.next()) packets.push_back(std::move(*p));
    return packets;
}

std::vector<RawPacket> parse_pcap_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open capture " + path.string());
    return parse_pcap(in);
}

std::vector<std::uint8_t> write_pcap(std::span<const RawPacket> packets, std::uint32_t link_type,
                                     bool big_endian) {
    std::vector<std::uint8_t> buf;
    auto put32 = [&](std::uint32_t v) { detail::append_le(buf, big_endian ? swap32(v) : v); };
    auto put16 = [&](std::uint16_t v) { detail::append_le(buf, big_endian ? swap16(v) : v); };
    put32(kMagicMicro);
    put16(2);
    put16(4);
    put32(0);  // thiszone
    put32(0);  // sigfigs
    put32(65535);
    put32(link_type);
    for (const auto& p : packets) {
        put32(static_cast<std::uint32_t>(p.timestamp_us / 1'000'000));
        put32(static_cast<std::uint32_t>(p.timestamp_us % 1'000'000));
        put32(static_cast<std::uint32_t>(p.link_bytes.size()));
        put32(std::max<std::uint32_t>(p.orig_len, static_cast<std::uint32_t>(p.link_bytes.size())));
        buf.insert(buf.end(), p.link_bytes.begin(), p.link_bytes.end());
    }
    return buf;
}

}  // namespace adaptids::ingest
