#include "adaptids/error.hpp"
#include "adaptids/ingest.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

namespace adaptids::ingest {
namespace {

constexpr std::uint8_t kProtoTcp = 6;
constexpr std::uint8_t kProtoUdp = 17;

struct L3View {
    std::size_t offset = 0;  // start of IP header within link bytes
    std::uint8_t version = 0;
    std::size_t transport = 0;  // offset of transport header relative to IP header
    std::uint8_t protocol = 0;
    bool fragment = false;
};

std::optional<L3View> locate_ip(std::span<const std::uint8_t> bytes, std::uint32_t link_type) {
    std::size_t off = 0;
    switch (link_type) {
        case kLinkEthernet: {
            if (bytes.size() < 14) return std::nullopt;
            std::uint16_t ethertype = detail::load_be16(&bytes[12]);
            off = 14;
            if (ethertype == 0x8100 || ethertype == 0x88A8) {
                if (bytes.size() < 18) return std::nullopt;
                ethertype = detail::load_be16(&bytes[16]);
                off = 18;
            }
            if (ethertype != 0x0800 && ethertype != 0x86DD) return std::nullopt;
            break;
        }
        case kLinkRaw:
        case kLinkIPv4:
        case kLinkIPv6:
            break;
        default:
            return std::nullopt;
    }
    if (bytes.size() <= off) return std::nullopt;
    L3View v;
    v.offset = off;
    v.version = bytes[off] >> 4;
    const auto ip = bytes.subspan(off);
    if (v.version == 4) {
        const std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0F) * 4;
        if (ihl < 20 || ip.size() < ihl) return std::nullopt;
        v.protocol = ip[9];
        v.transport = ihl;
        v.fragment = (detail::load_be16(&ip[6]) & 0x1FFF) != 0;
    } else if (v.version == 6) {
        if (ip.size() < 40) return std::nullopt;
        v.protocol = ip[6];
        v.transport = 40;
    } else {
        return std::nullopt;
    }
    return v;
}

IpAddress address_at(std::span<const std::uint8_t> ip, std::uint8_t version, std::size_t at) {
    IpAddress a;
    a.version = version;
    const std::size_t n = version == 4 ? 4 : 16;
    std::copy_n(ip.begin() + static_cast<std::ptrdiff_t>(at), n, a.bytes.begin());
    return a;
}

// splitmix64 finalizer; spreads FNV output into the low bits used by modulo.
std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

}  // namespace

IpAddress IpAddress::v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    IpAddress ip;
    ip.version = 4;
    ip.bytes[0] = a;
    ip.bytes[1] = b;
    ip.bytes[2] = c;
    ip.bytes[3] = d;
    return ip;
}

std::string IpAddress::to_string() const {
    char buf[64];
    if (version == 4) {
        std::snprintf(buf, sizeof(buf), "%u.%u.%u.%u", bytes[0], bytes[1], bytes[2], bytes[3]);
        return buf;
    }
    std::ostringstream s;
    s << std::hex;
    for (std::size_t i = 0; i < 16; i += 2) {
        if (i) s << ':';
        s << ((bytes[i] << 8) | bytes[i + 1]);
    }
    return s.str();
}

IpAddress IpAddress::parse(const std::string& text) {
    IpAddress ip;
    if (text.find(':') == std::string::npos) {
        unsigned a, b, c, d;
        char tail;
        if (std::sscanf(text.c_str(), "%u.%u.%u.%u%c", &a, &b, &c, &d, &tail) != 4 || a > 255 ||
            b > 255 || c > 255 || d > 255) {
            throw InvalidInput("bad IPv4 address '" + text + "'");
        }
        return v4(static_cast<std::uint8_t>(a), static_cast<std::uint8_t>(b),
                  static_cast<std::uint8_t>(c), static_cast<std::uint8_t>(d));
    }
    // IPv6 with optional "::" compression.
    ip.version = 6;
    auto parse_groups = [&](const std::string& part) {
        std::vector<std::uint16_t> groups;
        if (part.empty()) return groups;
        std::stringstream ss(part);
        std::string g;
        while (std::getline(ss, g, ':')) {
            if (g.empty() || g.size() > 4 || g.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos) {
                throw InvalidInput("bad IPv6 address '" + text + "'");
            }
            groups.push_back(static_cast<std::uint16_t>(std::stoul(g, nullptr, 16)));
        }
        return groups;
    };
    std::vector<std::uint16_t> head, tail;
    const auto dc = text.find("::");
    if (dc == std::string::npos) {
        head = parse_groups(text);
        if (head.size() != 8) throw InvalidInput("bad IPv6 address '" + text + "'");
    } else {
        head = parse_groups(text.substr(0, dc));
        tail = parse_groups(text.substr(dc + 2));
        if (head.size() + tail.size() > 7) throw InvalidInput("bad IPv6 address '" + text + "'");
    }
    std::vector<std::uint16_t> all(8, 0);
    std::copy(head.begin(), head.end(), all.begin());
    std::copy(tail.begin(), tail.end(), all.end() - static_cast<std::ptrdiff_t>(tail.size()));
    for (std::size_t i = 0; i < 8; ++i) {
        ip.bytes[2 * i] = static_cast<std::uint8_t>(all[i] >> 8);
        ip.bytes[2 * i + 1] = static_cast<std::uint8_t>(all[i] & 0xFF);
    }
    return ip;
}

FlowKey FlowKey::make(const IpAddress& src, std::uint16_t sport, const IpAddress& dst,
                      std::uint16_t dport, std::uint8_t protocol) {
    FlowKey k;
    k.protocol = protocol;
    if (std::tie(src, sport) <= std::tie(dst, dport)) {
        k.ip_lo = src;
        k.port_lo = sport;
        k.ip_hi = dst;
        k.port_hi = dport;
    } else {
        k.ip_lo = dst;
        k.port_lo = dport;
        k.ip_hi = src;
        k.port_hi = sport;
    }
    return k;
}

std::string FlowKey::to_string() const {
    return ip_lo.to_string() + ":" + std::to_string(port_lo) + "<->" + ip_hi.to_string() + ":" +
           std::to_string(port_hi) + "/" + std::to_string(protocol);
}

std::optional<ParsedPacket> parse_packet(std::span<const std::uint8_t> link_bytes,
                                         std::uint32_t link_type) {
    const auto view = locate_ip(link_bytes, link_type);
    if (!view || view->fragment) return std::nullopt;
    if (view->protocol != kProtoTcp && view->protocol != kProtoUdp) return std::nullopt;
    const auto ip = link_bytes.subspan(view->offset);
    if (ip.size() < view->transport + 4) return std::nullopt;
    const std::size_t src_at = view->version == 4 ? 12 : 8;
    const std::size_t dst_at = view->version == 4 ? 16 : 24;
    const auto src = address_at(ip, view->version, src_at);
    const auto dst = address_at(ip, view->version, dst_at);
    const auto sport = detail::load_be16(&ip[view->transport]);
    const auto dport = detail::load_be16(&ip[view->transport + 2]);
    return ParsedPacket{FlowKey::make(src, sport, dst, dport, view->protocol), view->offset};
}

AssembleResult assemble_flows(std::span<const RawPacket> packets, double idle_timeout_seconds) {
    if (idle_timeout_seconds < 0) throw InvalidInput("idle timeout must be non-negative");
    const auto timeout_us = static_cast<std::int64_t>(idle_timeout_seconds * 1e6);

    struct Entry {
        std::int64_t ts;
        FlowKey key;
        std::vector<std::uint8_t> bytes;
    };
    AssembleResult result;
    std::vector<Entry> entries;
    entries.reserve(packets.size());
    for (const auto& p : packets) {
        auto parsed = parse_packet(p.link_bytes, p.link_type);
        if (!parsed) {
            ++result.skipped;
            continue;
        }
        entries.push_back({p.timestamp_us, parsed->key,
                           std::vector<std::uint8_t>(p.link_bytes.begin() + static_cast<std::ptrdiff_t>(parsed->l3_offset),
                                                     p.link_bytes.end())});
    }
    // A total order on (time, key, content) makes the result independent of
    // the capture order.
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return std::tie(a.ts, a.key, a.bytes) < std::tie(b.ts, b.key, b.bytes);
    });

    std::map<FlowKey, std::size_t> open;
    for (auto& e : entries) {
        auto it = open.find(e.key);
        if (it != open.end() && e.ts - result.flows[it->second].last_seen > timeout_us) {
            open.erase(it);
            it = open.end();
        }
        if (it == open.end()) {
            Flow f;
            f.key = e.key;
            f.first_seen = e.ts;
            f.last_seen = e.ts;
            result.flows.push_back(std::move(f));
            it = open.emplace(e.key, result.flows.size() - 1).first;
        }
        auto& flow = result.flows[it->second];
        flow.last_seen = e.ts;
        flow.packets.push_back({e.ts, std::move(e.bytes)});
    }
    // Flows are created in timestamp order, so they are already sorted by
    // first_seen; ties are broken by key.
    std::stable_sort(result.flows.begin(), result.flows.end(), [](const Flow& a, const Flow& b) {
        return std::tie(a.first_seen, a.key) < std::tie(b.first_seen, b.key);
    });
    return result;
}

namespace {

void anonymize_datagram(std::vector<std::uint8_t>& ip) {
    if (ip.empty()) return;
    auto zero = [&](std::size_t from, std::size_t n) {
        for (std::size_t i = from; i < from + n && i < ip.size(); ++i) ip[i] = 0;
    };
    const std::uint8_t version = ip[0] >> 4;
    std::size_t transport = 0;
    std::uint8_t protocol = 0;
    if (version == 4) {
        if (ip.size() < 20) return;
        transport = static_cast<std::size_t>(ip[0] & 0x0F) * 4;
        protocol = ip[9];
        zero(10, 2);   // header checksum
        zero(12, 8);   // source + destination
    } else if (version == 6) {
        if (ip.size() < 40) return;
        transport = 40;
        protocol = ip[6];
        zero(8, 32);
    } else {
        return;
    }
    if (protocol == kProtoTcp) zero(transport + 16, 2);
    if (protocol == kProtoUdp) zero(transport + 6, 2);
}

}  // namespace

FlowMatrix flow_to_matrix(const Flow& flow, bool anonymize) {
    if (flow.packets.empty()) throw InvalidInput("cannot encode an empty flow");
    FlowMatrix m;
    const std::size_t n = std::min(flow.packets.size(), kMatrixRows);
    m.n_real_packets = static_cast<std::uint8_t>(n);
    std::vector<std::uint8_t> scratch;
    for (std::size_t r = 0; r < n; ++r) {
        const auto& src = flow.packets[r].bytes;
        const std::size_t len = std::min(src.size(), kMatrixCols);
        scratch.assign(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(len));
        if (anonymize) anonymize_datagram(scratch);
        for (std::size_t c = 0; c < len; ++c) {
            m.at(r, c) = static_cast<float>(scratch[c]) / 255.0f;
        }
    }
    return m;
}

std::uint64_t flow_hash(const FlowKey& key) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    for (const auto* ip : {&key.ip_lo, &key.ip_hi}) {
        feed(ip->version);
        for (auto b : ip->bytes) feed(b);
    }
    for (auto port : {key.port_lo, key.port_hi}) {
        feed(static_cast<std::uint8_t>(port >> 8));
        feed(static_cast<std::uint8_t>(port & 0xFF));
    }
    feed(key.protocol);
    return mix64(h);
}

std::size_t assign_flow(const FlowKey& key, std::size_t n_agents) {
    if (n_agents == 0) throw InvalidInput("n_agents must be at least 1");
    return static_cast<std::size_t>(flow_hash(key) % n_agents);
}

}  // namespace adaptids::ingest
