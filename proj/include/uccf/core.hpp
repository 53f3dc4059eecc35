#pragma once

// Shared numeric types, error type, RNG streams and small linear-algebra helpers.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace uccf {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

/// Domain error raised by every module; the message is the stable diagnostic.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Counter-based stream split: the stream for (master, index) never depends on
/// how many other streams were drawn before it.
inline Rng stream_rng(std::uint64_t master_seed, std::uint64_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(mix64(master_seed) >> 32),
                      static_cast<std::uint32_t>(mix64(master_seed)),
                      static_cast<std::uint32_t>(mix64(master_seed ^ mix64(index)) >> 32),
                      static_cast<std::uint32_t>(mix64(index + 0x51ED27ULL))};
    return Rng(seq);
}

/// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
inline cd complex_normal(Rng& rng, double variance = 1.0)
{
    std::normal_distribution<double> nd(0.0, std::sqrt(variance / 2.0));
    const double re = nd(rng);
    const double im = nd(rng);
    return {re, im};
}

inline CVec complex_normal_vec(Rng& rng, Eigen::Index n, double variance = 1.0)
{
    CVec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = complex_normal(rng, variance);
    return v;
}

inline CMat complex_normal_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols, double variance = 1.0)
{
    CMat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = complex_normal(rng, variance);
    return m;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

/// Non-normalized DFT matrix, F F^H = N I.
inline CMat dft_matrix(int n)
{
    CMat f(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            f(r, c) = std::polar(1.0, -2.0 * std::numbers::pi * r * c / n);
    return f;
}

/// Relative diagonal loading applied when a Hermitian system is not numerically PD.
inline constexpr double kJitterScale = 1e-12;

/// Solves A X = B for Hermitian positive (semi)definite A. Falls back to a
/// diagonal jitter of kJitterScale * trace(A) / n, then to LDLT.
inline CMat solve_hermitian(const CMat& a, const CMat& b, const char* what = "ill-conditioned system")
{
    Eigen::LLT<CMat> llt(a);
    if (llt.info() == Eigen::Success) return llt.solve(b);

    const double jitter = kJitterScale * std::abs(a.trace().real()) / static_cast<double>(a.rows());
    if (!(jitter > 0.0)) throw Error(what);
    CMat loaded = a;
    loaded.diagonal().array() += jitter;
    llt.compute(loaded);
    if (llt.info() == Eigen::Success) return llt.solve(b);

    Eigen::LDLT<CMat> ldlt(loaded);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().cwiseAbs().minCoeff() <= jitter * 1e-6) throw Error(what);
    return ldlt.solve(b);
}

inline CVec solve_hermitian(const CMat& a, const CVec& b, const char* what = "ill-conditioned system")
{
    return solve_hermitian(a, CMat(b), what).col(0);
}

/// Relative residual ||A X - B||_F / ||B||_F.
inline double relative_residual(const CMat& a, const CMat& x, const CMat& b)
{
    const double nb = b.norm();
    return (a * x - b).norm() / (nb > 0.0 ? nb : 1.0);
}

}  // namespace uccf
