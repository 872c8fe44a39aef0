#include <catch2/catch_amalgamated.hpp>

#include "lcvn/common.hpp"

using namespace lcvn;

TEST_CASE("rng is deterministic per seed") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        REQUIRE(a.next_u64() == b.next_u64());
    }
    bool all_equal = true;
    Rng a2(42);
    for (int i = 0; i < 10; ++i) all_equal = all_equal && (a2.next_u64() == c.next_u64());
    REQUIRE_FALSE(all_equal);
}

TEST_CASE("rng uniform in range and normal has sane moments") {
    Rng r(7);
    double sum = 0.0, sum_sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sum_sq += x * x;
    }
    double mean = sum / n, var = sum_sq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("mix_seed gives distinct streams per tag and index") {
    uint64_t base = 1234;
    REQUIRE(mix_seed(base, "a") != mix_seed(base, "b"));
    REQUIRE(mix_seed(base, "a", 0) != mix_seed(base, "a", 1));
    REQUIRE(mix_seed(base, "a", 3) == mix_seed(base, "a", 3));
}

TEST_CASE("hex round trip is bit exact") {
    Rng r(9);
    std::vector<double> v(257);
    for (auto& x : v) x = r.normal() * 1e3;
    v[0] = 0.0;
    v[1] = -0.0;
    v[2] = 1.0 / 3.0;
    auto s = hex_encode(v);
    auto back = hex_decode_doubles(s);
    REQUIRE(back.size() == v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        REQUIRE(std::memcmp(&back[i], &v[i], sizeof(double)) == 0);
    }
}

TEST_CASE("fnv1a64 distinguishes and is stable") {
    REQUIRE(fnv1a64("hello") == fnv1a64("hello"));
    REQUIRE(fnv1a64("hello") != fnv1a64("hellp"));
    // reference value for the empty string is the offset basis
    REQUIRE(fnv1a64(std::string_view{}) == 0xcbf29ce484222325ull);
}

TEST_CASE("permutation is a permutation") {
    Rng r(3);
    auto p = r.permutation(17);
    std::vector<bool> seen(17, false);
    for (int x : p) {
        REQUIRE(x >= 0);
        REQUIRE(x < 17);
        REQUIRE_FALSE(seen[size_t(x)]);
        seen[size_t(x)] = true;
    }
}
