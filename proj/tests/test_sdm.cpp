#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "simcvd/error.hpp"
#include "simcvd/sdm.hpp"

using namespace simcvd;

TEST_CASE("sdm: degenerate masks") {
    const Shape3 s{3, 4, 5};
    for (double v : signed_distance_map(MaskGrid(s, 0))) CHECK(v == 1.0);
    for (double v : signed_distance_map(MaskGrid(s, 1))) CHECK(v == -1.0);
}

TEST_CASE("sdm: single centre voxel in 3x3x3") {
    MaskGrid m(Shape3{3, 3, 3});
    m(1, 1, 1) = 1;
    const RealGrid d = signed_distance_map(m);
    CHECK(d(1, 1, 1) == -1.0);
    CHECK(d(0, 1, 1) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-15));
    CHECK(d(1, 2, 1) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-15));
    CHECK(d(0, 0, 1) == doctest::Approx(std::sqrt(2.0) / std::sqrt(3.0)).epsilon(1e-15));
    CHECK(d(2, 2, 2) == 1.0);
    CHECK(d(0, 0, 0) == 1.0);
}

TEST_CASE("sdm: matches brute force on random grids") {
    Rng rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        const Shape3 s = oracle::random_shape(rng, 1, 7);
        const MaskGrid m = oracle::random_mask(rng, s, uniform(rng, 0.05, 0.9));
        const Spacing sp{uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 2.0)};
        const RealGrid got = signed_distance_map(m, sp);
        const RealGrid want = oracle::sdm(m, sp);
        for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("sdm: sign, range and monotonicity properties") {
    Rng rng(12);
    for (int trial = 0; trial < 40; ++trial) {
        const Shape3 s = oracle::random_shape(rng, 2, 8);
        const MaskGrid m = oracle::random_mask(rng, s, 0.4);
        const RealGrid d = signed_distance_map(m);
        bool any_in = false, any_out = false;
        for (std::size_t i = 0; i < d.size(); ++i) {
            REQUIRE(d[i] >= -1.0);
            REQUIRE(d[i] <= 1.0);
            if (d[i] != 0.0) REQUIRE((d[i] > 0 ? 1 : -1) == 1 - 2 * m[i]);
            (m[i] ? any_in : any_out) = true;
        }
        double lo = 0.0, hi = 0.0;
        for (double v : d) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (any_in) CHECK(lo == -1.0);
        if (any_out) CHECK(hi == 1.0);
        // Ordering of |sdm| follows ordering of the raw distance to the opposite class within each class.
        MaskGrid inv(s);
        for (std::size_t i = 0; i < m.size(); ++i) inv[i] = m[i] ? 0 : 1;
        const RealGrid to_in = squared_distance_transform(m, {1, 1, 1});
        const RealGrid to_out = squared_distance_transform(inv, {1, 1, 1});
        for (std::size_t i = 0; i < d.size(); ++i) {
            for (std::size_t j = 0; j < d.size(); j += 7) {
                if (m[i] != m[j] || !any_in || !any_out) continue;
                const double ri = m[i] ? to_out[i] : to_in[i];
                const double rj = m[j] ? to_out[j] : to_in[j];
                if (ri < rj) REQUIRE(std::abs(d[i]) < std::abs(d[j]));
            }
        }
    }
}

TEST_CASE("sdm: uniform spacing scale cancels after normalisation") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const Shape3 s = oracle::random_shape(rng, 2, 8);
        const MaskGrid m = oracle::random_mask(rng, s, 0.5);
        const Spacing sp{uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 2.0)};
        const RealGrid a = signed_distance_map(m, sp);
        const RealGrid b = signed_distance_map(m, {2 * sp[0], 2 * sp[1], 2 * sp[2]});
        for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
}

TEST_CASE("sdm: input validation") {
    MaskGrid m(Shape3{2, 2, 2});
    m[0] = 2;
    CHECK_THROWS_AS(signed_distance_map(m), InvalidArgument);
    CHECK_THROWS_AS(signed_distance_map(MaskGrid(Shape3{2, 2, 2}), {1.0, 0.0, 1.0}), InvalidArgument);
}

TEST_CASE("boundary_aware_feature: additive identities and shape check") {
    Rng rng(14);
    const Shape3 s{3, 2, 4};
    const RealGrid x = oracle::random_grid(rng, s, -2, 2);
    const RealGrid q = oracle::random_grid(rng, s, -1, 1);
    CHECK(boundary_aware_feature(x, RealGrid(s)) == x);
    CHECK(boundary_aware_feature(RealGrid(s), q) == q);

    const RealGrid a(Shape3{2, 1, 1}, std::vector<double>{1.0, -1.0});
    const RealGrid b(Shape3{2, 1, 1}, std::vector<double>{-1.0, 1.0});
    for (double v : boundary_aware_feature(a, b)) CHECK(v == 0.0);

    const RealGrid sum = boundary_aware_feature(x, q);
    const RealGrid twice = boundary_aware_feature(boundary_aware_feature(x, x), boundary_aware_feature(q, q));
    for (std::size_t i = 0; i < sum.size(); ++i) CHECK(twice[i] == doctest::Approx(2 * sum[i]).epsilon(1e-15));

    try {
        boundary_aware_feature(x, RealGrid(Shape3{3, 2, 5}));
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(s.str()) != std::string::npos);
        CHECK(msg.find(Shape3{3, 2, 5}.str()) != std::string::npos);
    }
}
