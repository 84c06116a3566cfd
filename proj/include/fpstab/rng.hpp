#pragma once

#include <cmath>
#include <cstdint>

namespace fpstab {

/// Philox-4x32-10 counter-based generator. A draw is a pure function of
/// (seed, stream, trajectory, index), so ensembles are reproducible under
/// any execution order.
struct Philox {
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    struct Block {
        std::uint32_t v[4];
    };

    static Block round10(std::uint32_t c0, std::uint32_t c1, std::uint32_t c2,
                         std::uint32_t c3, std::uint32_t k0, std::uint32_t k1) {
        for (int r = 0; r < 10; ++r) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c0;
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c2;
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            const std::uint32_t n0 = hi1 ^ c1 ^ k0;
            const std::uint32_t n1 = lo1;
            const std::uint32_t n2 = hi0 ^ c3 ^ k1;
            const std::uint32_t n3 = lo0;
            c0 = n0;
            c1 = n1;
            c2 = n2;
            c3 = n3;
            k0 += kW0;
            k1 += kW1;
        }
        return Block{{c0, c1, c2, c3}};
    }
};

/// One logical random stream: (seed, stream id, trajectory id).
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t trajectory)
        : k0_(static_cast<std::uint32_t>(seed)),
          k1_(static_cast<std::uint32_t>(seed >> 32)),
          c2_(static_cast<std::uint32_t>(trajectory)),
          c3_(static_cast<std::uint32_t>((trajectory >> 32) ^ (stream << 8) ^ 0x5eedu)) {}

    /// Uniform double in (0,1), indexed draw.
    double uniform(std::uint64_t index) const {
        const auto b = block(index);
        const std::uint64_t bits =
            (static_cast<std::uint64_t>(b.v[index & 1 ? 2 : 0]) << 32) | b.v[index & 1 ? 3 : 1];
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal, indexed draw (Box-Muller on paired uniforms).
    double normal(std::uint64_t index) const {
        const auto b = block(index >> 1);
        const std::uint64_t hi =
            (static_cast<std::uint64_t>(b.v[0]) << 32) | b.v[1];
        const std::uint64_t lo =
            (static_cast<std::uint64_t>(b.v[2]) << 32) | b.v[3];
        const double u1 = (static_cast<double>(hi >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = (static_cast<double>(lo >> 11) + 0.5) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        return (index & 1) ? r * std::sin(a) : r * std::cos(a);
    }

private:
    Philox::Block block(std::uint64_t ctr) const {
        return Philox::round10(static_cast<std::uint32_t>(ctr),
                               static_cast<std::uint32_t>(ctr >> 32), c2_, c3_, k0_, k1_);
    }
    std::uint32_t k0_, k1_, c2_, c3_;
};

}  // namespace fpstab
