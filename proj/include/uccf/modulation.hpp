#pragma once

#include "uccf/core.hpp"

#include <array>
#include <bit>
#include <span>

namespace uccf {

enum class Constellation { Bpsk, Qpsk };

/// Unit-energy points. BPSK: {+1, -1}. QPSK (Gray): index bits (b1 b0) map to
/// ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2).
inline std::span<const cd> points(Constellation c)
{
    static const std::array<cd, 2> bpsk{cd(1.0, 0.0), cd(-1.0, 0.0)};
    static const double r = 1.0 / std::sqrt(2.0);
    static const std::array<cd, 4> qpsk{cd(r, r), cd(-r, r), cd(r, -r), cd(-r, -r)};
    if (c == Constellation::Bpsk) return bpsk;
    return qpsk;
}

inline int bits_per_symbol(Constellation c) { return c == Constellation::Bpsk ? 1 : 2; }

/// Nearest point; ties resolve to the lowest index.
inline int nearest_point(Constellation c, cd z)
{
    const auto pts = points(c);
    int best = 0;
    double dbest = std::norm(z - pts[0]);
    for (int q = 1; q < static_cast<int>(pts.size()); ++q) {
        const double d = std::norm(z - pts[q]);
        if (d < dbest) {
            dbest = d;
            best = q;
        }
    }
    return best;
}

inline int bit_errors(int a, int b) { return std::popcount(static_cast<unsigned>(a ^ b)); }

inline int random_symbol(Constellation c, Rng& rng)
{
    std::uniform_int_distribution<int> u(0, static_cast<int>(points(c).size()) - 1);
    return u(rng);
}

}  // namespace uccf
