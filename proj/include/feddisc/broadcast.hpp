#pragma once

#include <cstdint>
#include <vector>

#include "feddisc/featurizer.hpp"
#include "feddisc/io.hpp"

namespace feddisc {

inline constexpr std::uint16_t kWireSchemaVersion = 1;

// The single downlink message of the protocol: category prototypes plus the
// checksum that proves clients use the server's encoder.
struct ServerBroadcast {
    std::vector<Prototype> prototypes;
    const Featurizer* featurizer = nullptr;
    std::uint64_t featurizer_id = 0;
    std::size_t byte_size = 0;
};

// header {schema u16, M u16, d u16, featurizer_id u64},
// then per prototype {category u16, values d x f32}
inline std::vector<std::uint8_t> serialize_broadcast(const ServerBroadcast& b) {
    ByteWriter w;
    w.u16(kWireSchemaVersion);
    w.u16(static_cast<std::uint16_t>(b.prototypes.size()));
    std::size_t d = b.prototypes.empty() ? 0 : b.prototypes.front().values.size();
    w.u16(static_cast<std::uint16_t>(d));
    w.u64(b.featurizer_id);
    for (const Prototype& p : b.prototypes) {
        w.u16(static_cast<std::uint16_t>(p.category));
        w.f32_array(p.values);
    }
    return w.bytes();
}

inline ServerBroadcast make_broadcast(const Featurizer& featurizer,
                                      std::vector<Prototype> prototypes) {
    ServerBroadcast b;
    b.prototypes = std::move(prototypes);
    b.featurizer = &featurizer;
    b.featurizer_id = featurizer.checksum();
    b.byte_size = serialize_broadcast(b).size();
    return b;
}

}  // namespace feddisc
