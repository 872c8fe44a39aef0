#pragma once

#include <cstdint>
#include <cstring>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lcvn {

#define LCVN_CHECK(cond, msg)                                          \
    do {                                                               \
        if (!(cond)) throw std::runtime_error(std::string("lcvn: ") + (msg)); \
    } while (0)

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t fnv1a64(const std::vector<double>& v, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from a base seed and a tag/index pair.
inline uint64_t mix_seed(uint64_t base, std::string_view tag, uint64_t index = 0) {
    uint64_t s = base ^ fnv1a64(tag);
    splitmix64(s);
    s ^= 0x9e3779b97f4a7c15ull * (index + 1);
    splitmix64(s);
    return s;
}

// Deterministic RNG. Bit-identical across platforms and compilers; the std
// distributions are implementation-defined, so everything is hand-rolled.
struct Rng {
    uint64_t state = 0x853c49e6748fea9bull;
    bool has_spare = false;
    double spare = 0.0;

    Rng() = default;
    explicit Rng(uint64_t seed) : state(seed ^ 0x2545f4914f6cdd1dull) { splitmix64(state); }

    uint64_t next_u64() { return splitmix64(state); }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) {
        LCVN_CHECK(n > 0, "uniform_index: n must be positive");
        return next_u64() % n;
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        LCVN_CHECK(hi >= lo, "uniform_int: bad range");
        return lo + int(uniform_index(uint64_t(hi - lo + 1)));
    }

    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare = r * std::sin(a);
        has_spare = true;
        return r * std::cos(a);
    }

    std::vector<double> normal_vec(size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = normal();
        return v;
    }

    // Fisher-Yates permutation of [0, n)
    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        for (int i = n - 1; i > 0; --i) {
            int j = int(uniform_index(uint64_t(i + 1)));
            std::swap(p[i], p[j]);
        }
        return p;
    }
};

inline std::string hex_encode(const void* data, size_t n) {
    static const char* digits = "0123456789abcdef";
    const auto* p = static_cast<const unsigned char*>(data);
    std::string out(n * 2, '0');
    for (size_t i = 0; i < n; ++i) {
        out[2 * i] = digits[p[i] >> 4];
        out[2 * i + 1] = digits[p[i] & 0xf];
    }
    return out;
}

inline std::string hex_encode(const std::vector<double>& v) {
    return hex_encode(v.data(), v.size() * sizeof(double));
}

inline std::string hex_encode_u64(uint64_t v) { return hex_encode(&v, sizeof v); }

inline std::vector<unsigned char> hex_decode(std::string_view s) {
    LCVN_CHECK(s.size() % 2 == 0, "hex_decode: odd length");
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::runtime_error("lcvn: hex_decode: bad digit");
    };
    std::vector<unsigned char> out(s.size() / 2);
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<unsigned char>(nib(s[2 * i]) << 4 | nib(s[2 * i + 1]));
    return out;
}

inline std::vector<double> hex_decode_doubles(std::string_view s) {
    auto bytes = hex_decode(s);
    LCVN_CHECK(bytes.size() % sizeof(double) == 0, "hex_decode_doubles: bad length");
    std::vector<double> v(bytes.size() / sizeof(double));
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

}  // namespace lcvn
