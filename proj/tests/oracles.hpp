#pragma once

// Independent reference implementations used by the tests. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "simcvd/grid.hpp"
#include "simcvd/rng.hpp"

namespace oracle {

using simcvd::MaskGrid;
using simcvd::RealGrid;
using simcvd::Shape3;
using simcvd::Spacing;

inline double dist(int ax, int ay, int az, int bx, int by, int bz, const Spacing& s) {
    const double dx = (ax - bx) * s[0];
    const double dy = (ay - by) * s[1];
    const double dz = (az - bz) * s[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// O(V^2) nearest-opposite-voxel scan, then per-sign normalisation.
inline RealGrid sdm(const MaskGrid& m, const Spacing& s = {1.0, 1.0, 1.0}) {
    const Shape3 sh = m.shape();
    RealGrid raw(sh);
    bool any_in = false;
    bool any_out = false;
    for (auto v : m) (v ? any_in : any_out) = true;
    if (!any_in || !any_out) {
        RealGrid out(sh);
        for (auto& v : out) v = any_in ? -1.0 : 1.0;
        return out;
    }
    double max_in = 0.0;
    double max_out = 0.0;
    for (int x = 0; x < sh.nx; ++x)
        for (int y = 0; y < sh.ny; ++y)
            for (int z = 0; z < sh.nz; ++z) {
                double best = std::numeric_limits<double>::infinity();
                for (int a = 0; a < sh.nx; ++a)
                    for (int b = 0; b < sh.ny; ++b)
                        for (int c = 0; c < sh.nz; ++c)
                            if (m(a, b, c) != m(x, y, z)) best = std::min(best, dist(x, y, z, a, b, c, s));
                raw(x, y, z) = best;
                if (m(x, y, z)) {
                    max_in = std::max(max_in, best);
                } else {
                    max_out = std::max(max_out, best);
                }
            }
    RealGrid out(sh);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] ? -raw[i] / max_in : raw[i] / max_out;
    return out;
}

struct Voxel {
    int x, y, z;
};

inline std::vector<Voxel> surface(const MaskGrid& m) {
    const Shape3 sh = m.shape();
    std::vector<Voxel> out;
    const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int x = 0; x < sh.nx; ++x)
        for (int y = 0; y < sh.ny; ++y)
            for (int z = 0; z < sh.nz; ++z) {
                if (!m(x, y, z)) continue;
                bool edge = false;
                for (const auto& o : off) {
                    const int a = x + o[0], b = y + o[1], c = z + o[2];
                    if (a < 0 || b < 0 || c < 0 || a >= sh.nx || b >= sh.ny || c >= sh.nz || !m(a, b, c)) edge = true;
                }
                if (edge) out.push_back({x, y, z});
            }
    return out;
}

/// numpy-style "linear" percentile.
inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q / 100.0;
    const double lo = std::floor(h);
    const auto i = static_cast<std::size_t>(lo);
    if (i + 1 >= v.size()) return v.back();
    return v[i] + (h - lo) * (v[i + 1] - v[i]);
}

/// O(S^2) pooled directed surface distances -> (ASD, HD95).
inline std::pair<double, double> surface_metrics(const MaskGrid& p, const MaskGrid& t, const Spacing& s = {1, 1, 1}) {
    const auto sp = surface(p);
    const auto st = surface(t);
    std::vector<double> d;
    auto directed = [&](const std::vector<Voxel>& from, const std::vector<Voxel>& to) {
        for (const auto& a : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& b : to) best = std::min(best, dist(a.x, a.y, a.z, b.x, b.y, b.z, s));
            d.push_back(best);
        }
    };
    directed(sp, st);
    directed(st, sp);
    double sum = 0.0;
    for (double v : d) sum += v;
    return {sum / static_cast<double>(d.size()), percentile(d, 95.0)};
}

/// Scalar-loop 0.5 * (soft Dice loss + BCE), probabilities clamped to [1e-7, 1 - 1e-7].
inline double seg_loss(const RealGrid& q, const MaskGrid& y) {
    double inter = 0.0, sq = 0.0, sy = 0.0, ce = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double p = std::clamp(q[i], 1e-7, 1.0 - 1e-7);
        inter += p * y[i];
        sq += p;
        sy += y[i];
        ce += y[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    const double dice = sy == 0.0 ? 1.0 : 1.0 - 2.0 * inter / (sq + sy);
    return 0.5 * (dice + ce / static_cast<double>(q.size()));
}

inline double mse(const RealGrid& a, const RealGrid& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

inline MaskGrid random_mask(simcvd::Rng& rng, const Shape3& s, double fill) {
    MaskGrid m(s);
    for (auto& v : m) v = simcvd::uniform01(rng) < fill ? 1 : 0;
    return m;
}

inline RealGrid random_grid(simcvd::Rng& rng, const Shape3& s, double lo, double hi) {
    RealGrid g(s);
    for (auto& v : g) v = simcvd::uniform(rng, lo, hi);
    return g;
}

inline Shape3 random_shape(simcvd::Rng& rng, int lo, int hi) {
    return Shape3{simcvd::uniform_int(rng, lo, hi), simcvd::uniform_int(rng, lo, hi), simcvd::uniform_int(rng, lo, hi)};
}

/// Relative error with an absolute floor so entries whose true gradient is ~0 compare on scale.
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f around x[i] with step h.
inline double central_diff(std::vector<double>& x, std::size_t i, double h, const std::function<double()>& f) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    return (up - down) / (2.0 * h);
}

}  // namespace oracle
