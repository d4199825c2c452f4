#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "simcvd/error.hpp"
#include "simcvd/evalsuite.hpp"

using namespace simcvd;

namespace {

/// Brute-force tiling: every stride multiple that fits, plus the boundary-clamped last window.
Grid3<int> coverage_oracle(const Shape3& s, const Shape3& w, const Shape3& st) {
    auto origins = [](int size, int window, int stride) {
        std::set<int> o;
        for (int k = 0; k * stride + window <= size; ++k) o.insert(k * stride);
        o.insert(size - window);
        return o;
    };
    Grid3<int> c(s, 0);
    for (int x0 : origins(s.nx, w.nx, st.nx))
        for (int y0 : origins(s.ny, w.ny, st.ny))
            for (int z0 : origins(s.nz, w.nz, st.nz))
                for (int x = 0; x < w.nx; ++x)
                    for (int y = 0; y < w.ny; ++y)
                        for (int z = 0; z < w.nz; ++z) c(x0 + x, y0 + y, z0 + z) += 1;
    return c;
}

MaskGrid box(const Shape3& s, std::array<int, 3> lo, std::array<int, 3> hi) {
    MaskGrid m(s, 0);
    for (int x = lo[0]; x < hi[0]; ++x)
        for (int y = lo[1]; y < hi[1]; ++y)
            for (int z = lo[2]; z < hi[2]; ++z) m(x, y, z) = 1;
    return m;
}

}  // namespace

TEST_CASE("sliding_window_infer: degenerate and overlapping tilings") {
    const ParamSet p = init_params(fixtures::small_arch(), 3);
    Rng rng(4);
    const Volume v{oracle::random_grid(rng, Shape3{32, 32, 32}, -1, 1)};

    Grid3<int> cov;
    const RealGrid whole = sliding_window_infer(p, v, v.shape(), Shape3{5, 5, 5}, &cov);
    CHECK(whole == forward(p, v).out.prob);
    for (int c : cov) CHECK(c == 1);

    const RealGrid tiled = sliding_window_infer(p, v, Shape3{16, 16, 16}, Shape3{16, 16, 16}, &cov);
    for (int c : cov) REQUIRE(c == 1);
    const CropRecord corner{{16, 0, 16}, Shape3{16, 16, 16}, {false, false, false}};
    const RealGrid part = forward(p, apply_crop(v.voxels, corner)).out.prob;
    for (int x = 0; x < 16; ++x)
        for (int y = 0; y < 16; ++y)
            for (int z = 0; z < 16; ++z) REQUIRE(tiled(16 + x, y, 16 + z) == part(x, y, z));

    sliding_window_infer(p, v, Shape3{16, 16, 16}, Shape3{8, 8, 8}, &cov);
    CHECK(cov == coverage_oracle(v.shape(), Shape3{16, 16, 16}, Shape3{8, 8, 8}));

    CHECK_THROWS_AS(sliding_window_infer(p, v, Shape3{40, 16, 16}, Shape3{8, 8, 8}), InvalidArgument);
}

TEST_CASE("property: window origins cover every voxel like the brute-force tiler") {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const int size = uniform_int(rng, 1, 60);
        const int window = uniform_int(rng, 1, size);
        const int stride = uniform_int(rng, 1, 20);
        const auto o = window_origins(size, window, stride);
        std::set<int> want;
        for (int k = 0; k * stride + window <= size; ++k) want.insert(k * stride);
        want.insert(size - window);
        REQUIRE(std::set<int>(o.begin(), o.end()) == want);
        REQUIRE(std::is_sorted(o.begin(), o.end()));
    }
}

TEST_CASE("dice_jaccard: examples") {
    const Shape3 s{4, 4, 4};
    const MaskGrid a = box(s, {0, 0, 0}, {2, 2, 2});
    CHECK(dice_jaccard(a, a) == std::pair<double, double>{100.0, 100.0});
    CHECK(dice_jaccard(a, box(s, {2, 2, 2}, {4, 4, 4})) == std::pair<double, double>{0.0, 0.0});
    CHECK(dice_jaccard(MaskGrid(s), MaskGrid(s)) == std::pair<double, double>{100.0, 100.0});
    MaskGrid p(s), t(s);
    p(0, 0, 0) = p(0, 0, 1) = 1;
    t(0, 0, 1) = t(0, 0, 2) = 1;
    const auto [d, j] = dice_jaccard(p, t);
    CHECK(d == doctest::Approx(50.0));
    CHECK(j == doctest::Approx(100.0 / 3.0));
    CHECK_THROWS_AS(dice_jaccard(p, MaskGrid(Shape3{4, 4, 3})), ShapeError);
}

TEST_CASE("surface_distances: examples and errors") {
    const Shape3 s{8, 8, 8};
    const MaskGrid a = box(s, {2, 2, 2}, {6, 5, 7});
    const auto same = surface_distances(a, a);
    CHECK(same.asd == 0.0);
    CHECK(same.hd95 == 0.0);

    MaskGrid p(s), t(s);
    p(1, 4, 4) = 1;
    t(4, 4, 4) = 1;
    const auto d = surface_distances(p, t);
    CHECK(d.asd == doctest::Approx(3.0));
    CHECK(d.hd95 == doctest::Approx(3.0));

    try {
        surface_distances(p, MaskGrid(s));
        FAIL("expected an error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("truth") != std::string::npos);
    }
    try {
        surface_distances(MaskGrid(s), t);
        FAIL("expected an error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("pred") != std::string::npos);
    }
}

TEST_CASE("surface_distances and surface_voxels: brute-force oracle") {
    Rng rng(6);
    for (int trial = 0; trial < 60; ++trial) {
        const Shape3 s = oracle::random_shape(rng, 1, 6);
        MaskGrid p = oracle::random_mask(rng, s, uniform(rng, 0.1, 0.7));
        MaskGrid t = oracle::random_mask(rng, s, uniform(rng, 0.1, 0.7));
        p[0] = 1;
        t[t.size() - 1] = 1;
        const Spacing sp{uniform(rng, 0.5, 2), uniform(rng, 0.5, 2), uniform(rng, 0.5, 2)};
        const auto got = surface_distances(p, t, sp);
        const auto [asd, hd] = oracle::surface_metrics(p, t, sp);
        REQUIRE(std::abs(got.asd - asd) < 1e-9);
        REQUIRE(std::abs(got.hd95 - hd) < 1e-9);
        REQUIRE(surface_voxels(p).size() == oracle::surface(p).size());
    }
}

TEST_CASE("metric properties: identity, symmetry, translation") {
    Rng rng(7);
    const Shape3 s{10, 10, 10};
    for (int trial = 0; trial < 40; ++trial) {
        const MaskGrid p = oracle::random_mask(rng, s, 0.3);
        const MaskGrid t = oracle::random_mask(rng, s, 0.3);
        const CaseMetrics m = evaluate_case(p, t, {1, 1, 1});
        CHECK(std::abs(m.jaccard - 100.0 * (m.dice / 100.0) / (2.0 - m.dice / 100.0)) < 1e-9);
        CHECK(m.jaccard <= m.dice + 1e-12);
        CHECK(m.asd <= m.hd95 + 1e-12);
        const CaseMetrics r = evaluate_case(t, p, {1, 1, 1});
        CHECK(r.dice == m.dice);
        CHECK(std::abs(r.asd - m.asd) < 1e-12);
        CHECK(std::abs(r.hd95 - m.hd95) < 1e-12);
    }
    // Translating both masks inside a larger grid leaves metrics unchanged.
    const Shape3 big{14, 14, 14};
    for (int trial = 0; trial < 10; ++trial) {
        const MaskGrid p = oracle::random_mask(rng, Shape3{6, 6, 6}, 0.4);
        const MaskGrid t = oracle::random_mask(rng, Shape3{6, 6, 6}, 0.4);
        auto place = [&](const MaskGrid& m, int dx, int dy, int dz) {
            MaskGrid out(big, 0);
            for (int x = 0; x < 6; ++x)
                for (int y = 0; y < 6; ++y)
                    for (int z = 0; z < 6; ++z) out(x + dx, y + dy, z + dz) = m(x, y, z);
            return out;
        };
        const CaseMetrics a = evaluate_case(place(p, 2, 3, 4), place(t, 2, 3, 4), {1, 1, 1});
        const CaseMetrics b = evaluate_case(place(p, 5, 1, 6), place(t, 5, 1, 6), {1, 1, 1});
        CHECK(a.dice == b.dice);
        CHECK(a.jaccard == b.jaccard);
        CHECK(std::abs(a.asd - b.asd) < 1e-12);
        CHECK(std::abs(a.hd95 - b.hd95) < 1e-12);
    }
}

TEST_CASE("evaluate_case: empty-mask conventions") {
    const Shape3 s{4, 4, 4};
    const CaseMetrics both = evaluate_case(MaskGrid(s), MaskGrid(s), {1, 1, 1});
    CHECK(both.dice == 100.0);
    CHECK(both.asd == 0.0);
    MaskGrid one(s);
    one[5] = 1;
    const CaseMetrics half = evaluate_case(MaskGrid(s), one, {1, 1, 1});
    CHECK(half.dice == 0.0);
    CHECK(std::isnan(half.asd));
}

TEST_CASE("percentile: linear interpolation") {
    CHECK(percentile({1, 2, 3, 4, 5}, 95.0) == doctest::Approx(4.8));
    CHECK(percentile({7}, 95.0) == 7.0);
    CHECK(percentile({3, 1, 2}, 50.0) == 2.0);
    CHECK_THROWS_AS(percentile({}, 50.0), InvalidArgument);
}

TEST_CASE("paired_t_test: examples") {
    // Degenerate: identical samples and constant differences.
    CHECK_THROWS_AS(paired_t_test({1, 2, 3}, {1, 2, 3}), InvalidArgument);
    CHECK_THROWS_AS(paired_t_test({2, 4, 6}, {1, 3, 5}), InvalidArgument);
    CHECK_THROWS_AS(paired_t_test({1}, {0}), InvalidArgument);
    CHECK_THROWS_AS(paired_t_test({1, 2}, {0}), InvalidArgument);

    // d = (1, 1, 2): mean 4/3, sd 1/sqrt(3), t = 4; with 2 degrees of freedom the upper tail is
    // 1/2 - t / (2 sqrt(2 + t^2)).
    const double p = paired_t_test({2, 4, 7}, {1, 3, 5});
    CHECK(p == doctest::Approx(0.5 - 4.0 / (2.0 * std::sqrt(18.0))).epsilon(1e-12));

    // Uniformly positive differences give a small p-value.
    Rng rng(8);
    for (int n : {5, 8, 20}) {
        std::vector<double> a(n), b(n);
        for (int i = 0; i < n; ++i) {
            b[i] = uniform(rng, 50, 90);
            a[i] = b[i] + 0.01 * (1.0 + 0.1 * uniform01(rng));
        }
        CHECK(paired_t_test(a, b) < 0.05);
        CHECK(paired_t_test(b, a) > 0.95);
    }
}

TEST_CASE("reports: column headers and aggregates") {
    MetricsReport r;
    r.per_case = {{"a", 80, 80.0 / 1.2, 1.0, 2.0}, {"b", 60, 60.0 / 1.4, 3.0, 5.0}};
    r.dice = 70;
    r.jaccard = (r.per_case[0].jaccard + r.per_case[1].jaccard) / 2;
    r.asd = 2;
    r.hd95 = 3.5;
    const std::string csv = metrics_csv(r);
    CHECK(csv.rfind("case,Dice[%],Jaccard[%],ASD[voxel],95HD[voxel]\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    const auto j = metrics_json(r);
    for (const char* k : {"Dice[%]", "Jaccard[%]", "ASD[voxel]", "95HD[voxel]"}) CHECK(j.contains(k));
    CHECK(j.at("Dice[%]").get<double>() == 70.0);
}

TEST_CASE("evaluate: untrained model gives a well-formed report") {
    const ParamSet p = init_params(fixtures::small_arch(), 1);
    const DatasetSplit split = fixtures::small_split(1, 1, 3);
    const MetricsReport r = evaluate(p, split.test, Shape3{16, 16, 16}, Shape3{8, 8, 8});
    CHECK(r.per_case.size() == 3);
    CHECK(r.dice >= 0.0);
    CHECK(r.dice <= 100.0);
    CHECK(metrics_json(r).at("cases").get<int>() == 3);
}
