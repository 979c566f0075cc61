#pragma once

// Hand-built capture bytes and packet builders shared by the ingest unit
// tests and the acceptance checks.

#include "adaptids/ingest.hpp"

#include <algorithm>
#include <sstream>
#include <vector>

namespace adaptids::testing {

using Bytes = std::vector<std::uint8_t>;

// One Ethernet/IPv4/UDP frame, 60 bytes, written out byte by byte:
// 192.168.1.10:12345 -> 10.0.0.1:53, 18-byte payload 0x01..0x12.
inline const Bytes kUdpFrame = {
    // Ethernet: dst, src, ethertype IPv4
    0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99, 0xaa, 0xbb, 0x08, 0x00,
    // IPv4: v4 ihl5, tos, total 46, id 0x1234, DF, ttl 64, udp, csum 0xbeef
    0x45, 0x00, 0x00, 0x2e, 0x12, 0x34, 0x40, 0x00, 0x40, 0x11, 0xbe, 0xef,
    0xc0, 0xa8, 0x01, 0x0a,  // 192.168.1.10
    0x0a, 0x00, 0x00, 0x01,  // 10.0.0.1
    // UDP: sport 12345, dport 53, len 26, csum 0xabcd
    0x30, 0x39, 0x00, 0x35, 0x00, 0x1a, 0xab, 0xcd,
    0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, 0x0d, 0x0e, 0x0f, 0x10, 0x11, 0x12};

// Little-endian classic pcap: magic, v2.4, thiszone, sigfigs, snaplen 65535, Ethernet.
inline const Bytes kLeHeader = {0xd4, 0xc3, 0xb2, 0xa1, 0x02, 0x00, 0x04, 0x00, 0x00, 0x00, 0x00, 0x00,
                         0x00, 0x00, 0x00, 0x00, 0xff, 0xff, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00};
// The same header written on a big-endian host.
inline const Bytes kBeHeader = {0xa1, 0xb2, 0xc3, 0xd4, 0x00, 0x02, 0x00, 0x04, 0x00, 0x00, 0x00, 0x00,
                         0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xff, 0xff, 0x00, 0x00, 0x00, 0x01};

inline Bytes le32(std::uint32_t v) { return {Bytes::value_type(v), Bytes::value_type(v >> 8), Bytes::value_type(v >> 16), Bytes::value_type(v >> 24)}; }
inline Bytes be32(std::uint32_t v) { return {Bytes::value_type(v >> 24), Bytes::value_type(v >> 16), Bytes::value_type(v >> 8), Bytes::value_type(v)}; }

inline void append(Bytes& out, const Bytes& more) { out.insert(out.end(), more.begin(), more.end()); }

inline Bytes record(bool big, std::uint32_t sec, std::uint32_t usec, const Bytes& frame, std::uint32_t orig) {
    auto w = big ? be32 : le32;
    Bytes r;
    for (auto v : {sec, usec, static_cast<std::uint32_t>(frame.size()), orig}) append(r, w(v));
    append(r, frame);
    return r;
}

inline std::vector<ingest::RawPacket> parse_bytes(const Bytes& b) {
    std::istringstream in(std::string(b.begin(), b.end()));
    return ingest::parse_pcap(in);
}

// IPv4 datagram with TCP or UDP; ports and addresses as given.
inline Bytes ipv4(const ingest::IpAddress& src, std::uint16_t sport, const ingest::IpAddress& dst, std::uint16_t dport, std::uint8_t proto,
           std::size_t payload, std::uint8_t fill) {
    const std::size_t l4 = proto == 6 ? 20 : 8;
    Bytes d(20 + l4 + payload, fill);
    d[0] = 0x45;
    d[1] = 0;
    d[2] = static_cast<std::uint8_t>(d.size() >> 8);
    d[3] = static_cast<std::uint8_t>(d.size());
    d[6] = 0x40;
    d[7] = 0;
    d[9] = proto;
    d[10] = 0xaa;
    d[11] = 0xbb;
    std::copy_n(src.bytes.begin(), 4, d.begin() + 12);
    std::copy_n(dst.bytes.begin(), 4, d.begin() + 16);
    d[20] = static_cast<std::uint8_t>(sport >> 8);
    d[21] = static_cast<std::uint8_t>(sport);
    d[22] = static_cast<std::uint8_t>(dport >> 8);
    d[23] = static_cast<std::uint8_t>(dport);
    if (proto == 6) {
        d[32] = 0x50;  // data offset
        d[36] = 0xcc;  // checksum
        d[37] = 0xdd;
    } else {
        d[26] = 0xcc;
        d[27] = 0xdd;
    }
    return d;
}

inline Bytes ethernet(const Bytes& datagram, std::uint16_t ethertype = 0x0800) {
    Bytes f(14, 0x02);
    f[12] = static_cast<std::uint8_t>(ethertype >> 8);
    f[13] = static_cast<std::uint8_t>(ethertype);
    append(f, datagram);
    return f;
}

/// Entries in [0,1], padding rows zero, flat length 20000.
inline bool matrix_invariants_hold(const ingest::FlowMatrix& m, std::size_t packets) {
    if (m.data.size() != ingest::kMatrixSize) return false;
    if (m.n_real_packets != std::min(packets, ingest::kMatrixRows)) return false;
    for (std::size_t r = 0; r < ingest::kMatrixRows; ++r) {
        for (std::size_t c = 0; c < ingest::kMatrixCols; ++c) {
            const float v = m.at(r, c);
            if (!(v >= 0.0f && v <= 1.0f)) return false;
            if (r >= m.n_real_packets && v != 0.0f) return false;
        }
    }
    return true;
}

}  // namespace adaptids::testing
