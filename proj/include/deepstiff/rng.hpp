#pragma once

#include <Eigen/Dense>
#include <sodium.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace deepstiff {

/// Counter-based normal generator: block (stream, counter) is a pure function of (seed, stream, counter).
/// ChaCha20 keystream with key = BLAKE2b(seed) and nonce = (stream, counter).
class CounterNormal {
public:
    explicit CounterNormal(std::uint64_t seed) : seed_(seed) {
        static const int init = sodium_init();
        if (init < 0) throw std::runtime_error("CounterNormal: libsodium initialisation failed");
        unsigned char in[8];
        for (int i = 0; i < 8; ++i) in[i] = static_cast<unsigned char>(seed >> (8 * i));
        crypto_generichash(key_.data(), key_.size(), in, sizeof in, nullptr, 0);
    }

    std::uint64_t seed() const { return seed_; }

    /// Fills out[0..k) with independent standard normals for (stream, counter).
    void fill(std::uint64_t stream, std::uint32_t counter, double* out, std::size_t k) const {
        const std::size_t pairs = (k + 1) / 2;
        thread_local std::vector<std::uint64_t> words;
        words.resize(2 * pairs);
        unsigned char nonce[crypto_stream_chacha20_ietf_NONCEBYTES] = {};
        for (int i = 0; i < 8; ++i) nonce[i] = static_cast<unsigned char>(stream >> (8 * i));
        for (int i = 0; i < 4; ++i) nonce[8 + i] = static_cast<unsigned char>(counter >> (8 * i));
        crypto_stream_chacha20_ietf(reinterpret_cast<unsigned char*>(words.data()), words.size() * 8, nonce,
                                    key_.data());
        for (std::size_t p = 0; p < pairs; ++p) {
            const double u1 = (static_cast<double>(words[2 * p] >> 11) + 0.5) * 0x1.0p-53;
            const double u2 = (static_cast<double>(words[2 * p + 1] >> 11) + 0.5) * 0x1.0p-53;
            const double r = std::sqrt(-2.0 * std::log(u1));
            const double a = 2.0 * std::numbers::pi * u2;
            out[2 * p] = r * std::cos(a);
            if (2 * p + 1 < k) out[2 * p + 1] = r * std::sin(a);
        }
    }

private:
    std::uint64_t seed_;
    std::array<unsigned char, crypto_stream_chacha20_ietf_KEYBYTES> key_{};
};

/// Brownian increments dB^m_{n+1} ~ N(0, h I_d) for M paths and N steps on [0, T].
class PathBundle {
public:
    PathBundle(std::uint64_t seed, std::size_t M, std::size_t N, Eigen::Index d, double T)
        : gen_(seed), M_(M), N_(N), d_(d), T_(T) {
        if (M == 0 || N == 0 || d < 1 || !(T >= 0.0)) throw std::invalid_argument("PathBundle: bad dimensions");
    }

    std::uint64_t seed() const { return gen_.seed(); }
    std::size_t paths() const { return M_; }
    std::size_t steps() const { return N_; }
    Eigen::Index dim() const { return d_; }
    double horizon() const { return T_; }
    double h() const { return T_ / static_cast<double>(N_); }

    /// Increment of path m over [t_n, t_{n+1}], 0-based n.
    Eigen::VectorXd increment(std::size_t m, std::size_t n) const {
        Eigen::VectorXd z(d_);
        gen_.fill(m, static_cast<std::uint32_t>(n), z.data(), static_cast<std::size_t>(d_));
        return std::sqrt(h()) * z;
    }

    /// Sum of `factor` consecutive fine increments starting at fine step n*factor.
    Eigen::VectorXd coarse_increment(std::size_t m, std::size_t n, std::size_t factor) const {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(d_);
        for (std::size_t j = 0; j < factor; ++j) s += increment(m, n * factor + j);
        return s;
    }

private:
    CounterNormal gen_;
    std::size_t M_, N_;
    Eigen::Index d_;
    double T_;
};

}  // namespace deepstiff
