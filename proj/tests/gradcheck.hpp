#pragma once

// Central-difference gradient checks for every loss term. Each returns the worst relative error
// over `instances` random small problems.

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "simcvd/losses.hpp"

namespace gradcheck {

using namespace simcvd;

inline constexpr double kStep = 1e-5;

/// Worst relative error over every entry of `x` for a scalar function of `x`.
template <class F>
double check_entries(double* x, std::size_t n, const double* analytic, F&& f) {
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double keep = x[i];
        x[i] = keep + kStep;
        const double up = f();
        x[i] = keep - kStep;
        const double down = f();
        x[i] = keep;
        worst = std::max(worst, oracle::rel_err(analytic[i], (up - down) / (2.0 * kStep)));
    }
    return worst;
}

inline Shape3 small_shape(Rng& rng) { return oracle::random_shape(rng, 2, 4); }

inline double seg_loss_check(Rng& rng, int instances) {
    double worst = 0.0;
    for (int k = 0; k < instances; ++k) {
        const Shape3 s = small_shape(rng);
        RealGrid q = oracle::random_grid(rng, s, 0.05, 0.95);
        const MaskGrid y = oracle::random_mask(rng, s, k % 5 == 0 ? 0.0 : 0.5);
        RealGrid g;
        seg_loss(q, y, &g);
        worst = std::max(worst, check_entries(q.data(), q.size(), g.data(), [&] { return seg_loss(q, y); }));
    }
    return worst;
}

inline double supervised_loss_check(Rng& rng, int instances) {
    double worst = 0.0;
    for (int k = 0; k < instances; ++k) {
        const Shape3 s = small_shape(rng);
        const int n = uniform_int(rng, 1, 3);
        std::vector<DualOutput> out(n);
        std::vector<MaskGrid> masks;
        std::vector<RealGrid> sdms;
        for (int i = 0; i < n; ++i) {
            out[i].prob = oracle::random_grid(rng, s, 0.05, 0.95);
            out[i].sdm = oracle::random_grid(rng, s, -0.95, 0.95);
            masks.push_back(oracle::random_mask(rng, s, 0.4));
            sdms.push_back(oracle::random_grid(rng, s, -1.0, 1.0));
        }
        std::vector<SegTarget> targets;
        for (int i = 0; i < n; ++i) targets.push_back({&masks[i], &sdms[i]});
        const double alpha = uniform(rng, 0.05, 1.0);
        std::vector<DualOutput> grads;
        supervised_loss(out, targets, alpha, &grads);
        auto f = [&] { return supervised_loss(out, targets, alpha); };
        for (int i = 0; i < n; ++i) {
            worst = std::max(worst, check_entries(out[i].prob.data(), out[i].prob.size(), grads[i].prob.data(), f));
            worst = std::max(worst, check_entries(out[i].sdm.data(), out[i].sdm.size(), grads[i].sdm.data(), f));
        }
    }
    return worst;
}

inline Matrix random_matrix(Rng& rng, int rows, int cols) {
    Matrix m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = standard_normal(rng);
    return m;
}

inline double info_nce_check(Rng& rng, int instances) {
    double worst = 0.0;
    for (int k = 0; k < instances; ++k) {
        const int b = uniform_int(rng, 2, 8);
        const int d = uniform_int(rng, 2, 16);
        Vector anchor = random_matrix(rng, d, 1).col(0) * 0.5;
        Matrix pool = random_matrix(rng, b, d) * 0.5;
        const int pos = uniform_int(rng, 0, b - 1);
        const double tau = uniform(rng, 0.2, 2.0);
        Vector ga;
        Matrix gp;
        info_nce(anchor, pool, pos, tau, &ga, &gp);
        auto f = [&] { return info_nce(anchor, pool, pos, tau); };
        worst = std::max(worst, check_entries(anchor.data(), anchor.size(), ga.data(), f));
        worst = std::max(worst, check_entries(pool.data(), pool.size(), gp.data(), f));
    }
    return worst;
}

inline double boundary_contrast_check(Rng& rng, int instances) {
    double worst = 0.0;
    for (int k = 0; k < instances; ++k) {
        const int cases = uniform_int(rng, 1, 2);
        const int slices = uniform_int(rng, 1, 4);
        const int d = uniform_int(rng, 2, 16);
        const int total = cases * slices;
        if (total < 2) continue;
        const int b = uniform_int(rng, 2, total);
        std::vector<Matrix> ht, hs;
        for (int c = 0; c < cases; ++c) {
            ht.push_back(random_matrix(rng, slices, d));
            hs.push_back(random_matrix(rng, slices, d));
        }
        const double tau = uniform(rng, 0.3, 1.0);
        const std::uint64_t seed = rng();
        std::vector<Matrix> gt, gs;
        boundary_contrast_loss(ht, hs, tau, b, seed, &gt, &gs);
        auto f = [&] { return boundary_contrast_loss(ht, hs, tau, b, seed); };
        for (int c = 0; c < cases; ++c) {
            worst = std::max(worst, check_entries(ht[c].data(), ht[c].size(), gt[c].data(), f));
            worst = std::max(worst, check_entries(hs[c].data(), hs[c].size(), gs[c].data(), f));
        }
    }
    return worst;
}

inline double pairwise_distill_check(Rng& rng, int instances) {
    double worst = 0.0;
    for (int k = 0; k < instances; ++k) {
        const int cases = uniform_int(rng, 1, 3);
        const int rows = uniform_int(rng, 1, 8);
        const int d = uniform_int(rng, 2, 16);
        std::vector<Matrix> vs, vt;
        for (int c = 0; c < cases; ++c) {
            vs.push_back(random_matrix(rng, rows, d));
            vt.push_back(random_matrix(rng, rows, d));
        }
        std::vector<Matrix> gs, gt;
        pairwise_distill_loss(vs, vt, &gs, &gt);
        auto f = [&] { return pairwise_distill_loss(vs, vt); };
        for (int c = 0; c < cases; ++c) {
            worst = std::max(worst, check_entries(vs[c].data(), vs[c].size(), gs[c].data(), f));
            worst = std::max(worst, check_entries(vt[c].data(), vt[c].size(), gt[c].data(), f));
        }
    }
    return worst;
}

inline double consistency_check(Rng& rng, int instances) {
    double worst = 0.0;
    for (int k = 0; k < instances; ++k) {
        const Shape3 s = small_shape(rng);
        const int n = uniform_int(rng, 1, 3);
        std::vector<DualOutput> a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a[i].prob = oracle::random_grid(rng, s, 0.0, 1.0);
            a[i].sdm = oracle::random_grid(rng, s, -1.0, 1.0);
            b[i].prob = oracle::random_grid(rng, s, 0.0, 1.0);
            b[i].sdm = oracle::random_grid(rng, s, -1.0, 1.0);
        }
        std::vector<RealGrid> ga, gb;
        consistency_loss(a, b, &ga, &gb);
        auto f = [&] { return consistency_loss(a, b); };
        for (int i = 0; i < n; ++i) {
            worst = std::max(worst, check_entries(a[i].prob.data(), a[i].prob.size(), ga[i].data(), f));
            worst = std::max(worst, check_entries(b[i].prob.data(), b[i].prob.size(), gb[i].data(), f));
        }
    }
    return worst;
}

/// d total / d part equals the per-term weight of loss_weights.
inline double total_loss_check(Rng& rng, int instances) {
    double worst = 0.0;
    for (int k = 0; k < instances; ++k) {
        HyperParams hp;
        hp.lambda = uniform(rng, 0.0, 1.0);
        hp.beta = uniform(rng, 0.0, 1.0);
        hp.gamma = uniform(rng, 0.0, 1.0);
        const long tmax = uniform_int(rng, 1, 1000);
        const long t = uniform_int(rng, 0, static_cast<int>(tmax));
        double parts[4] = {uniform(rng, 0, 2), uniform(rng, 0, 5), uniform(rng, 0, 50), uniform(rng, 0, 1)};
        const LossWeights w = loss_weights(hp, t, tmax);
        const double analytic[4] = {w.sup, w.contrast, w.pd, w.con};
        worst = std::max(worst, check_entries(parts, 4, analytic, [&] {
                             return total_loss(parts[0], parts[1], parts[2], parts[3], hp, t, tmax).total;
                         }));
    }
    return worst;
}

}  // namespace gradcheck
