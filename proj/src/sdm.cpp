#include "simcvd/sdm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace simcvd {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas, one line of the separable transform.
// out[p] = min_q (w * (p - q)^2 + f[q]) where w = spacing^2.
void envelope_1d(const std::vector<double>& f, std::vector<double>& out, double w, std::vector<int>& v,
                 std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        const double fq = f[q] + w * q * q;
        while (k >= 0) {
            const int vk = v[k];
            const double s = (fq - (f[vk] + w * vk * vk)) / (2.0 * w * (q - vk));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -kInf : (fq - (f[v[k - 1]] + w * v[k - 1] * v[k - 1])) / (2.0 * w * (q - v[k - 1]));
        z[k + 1] = kInf;
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), kInf);
        return;
    }
    int j = 0;
    for (int p = 0; p < n; ++p) {
        while (z[j + 1] < p) ++j;
        const double d = p - v[j];
        out[p] = w * d * d + f[v[j]];
    }
}

void transform_axis(RealGrid& g, int axis, double spacing) {
    const Shape3& s = g.shape();
    const int n = s[axis];
    std::vector<double> line(n), out(n), z(n + 1);
    std::vector<int> v(n);
    const double w = spacing * spacing;
    int a_len = axis == 0 ? s.ny : s.nx;
    int b_len = axis == 2 ? s.ny : s.nz;
    for (int a = 0; a < a_len; ++a) {
        for (int b = 0; b < b_len; ++b) {
            auto at = [&](int i) -> double& {
                switch (axis) {
                    case 0: return g(i, a, b);
                    case 1: return g(a, i, b);
                    default: return g(a, b, i);
                }
            };
            for (int i = 0; i < n; ++i) line[i] = at(i);
            envelope_1d(line, out, w, v, z);
            for (int i = 0; i < n; ++i) at(i) = out[i];
        }
    }
}

void check_spacing(const Spacing& spacing) {
    for (double s : spacing) {
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("spacing entries must be positive and finite");
    }
}

}  // namespace

RealGrid squared_distance_transform(const MaskGrid& feature, const Spacing& spacing) {
    check_spacing(spacing);
    RealGrid g(feature.shape());
    for (std::size_t i = 0; i < feature.size(); ++i) g[i] = feature[i] != 0 ? 0.0 : kInf;
    for (int axis = 0; axis < 3; ++axis) transform_axis(g, axis, spacing[axis]);
    return g;
}

RealGrid signed_distance_map(const MaskGrid& mask, const Spacing& spacing) {
    check_spacing(spacing);
    const std::size_t n = mask.size();
    std::size_t inside = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] > 1) throw InvalidArgument("signed_distance_map: mask must be binary");
        inside += mask[i];
    }
    if (inside == 0) return RealGrid(mask.shape(), -kInsideSign);
    if (inside == n) return RealGrid(mask.shape(), kInsideSign);

    MaskGrid background(mask.shape());
    for (std::size_t i = 0; i < n; ++i) background[i] = mask[i] ? 0 : 1;
    const RealGrid to_background = squared_distance_transform(background, spacing);
    const RealGrid to_object = squared_distance_transform(mask, spacing);

    RealGrid out(mask.shape());
    double max_in = 0.0;
    double max_out = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = std::sqrt(mask[i] ? to_background[i] : to_object[i]);
        out[i] = d;
        (mask[i] ? max_in : max_out) = std::max(mask[i] ? max_in : max_out, d);
    }
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = mask[i] ? kInsideSign * out[i] / max_in : -kInsideSign * out[i] / max_out;
    }
    return out;
}

RealGrid boundary_aware_feature(const RealGrid& x, const RealGrid& q_sdm) {
    require_same_shape(x.shape(), q_sdm.shape(), "boundary_aware_feature");
    RealGrid out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + q_sdm[i];
    return out;
}

}  // namespace simcvd
