#include "simcvd/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "simcvd/sdm.hpp"

namespace simcvd {

std::vector<int> window_origins(int size, int window, int stride) {
    if (window > size) throw InvalidArgument("window larger than volume");
    if (stride < 1) throw InvalidArgument("stride must be >= 1");
    std::vector<int> out;
    for (int o = 0;; o += stride) {
        if (o + window >= size) {
            out.push_back(size - window);
            break;
        }
        out.push_back(o);
    }
    return out;
}

RealGrid sliding_window_infer(const ParamSet& params, const Volume& volume, const Shape3& window, const Shape3& stride,
                              Grid3<int>* coverage) {
    const Shape3 s = volume.shape();
    for (int a = 0; a < 3; ++a) {
        if (window[a] > s[a]) throw InvalidArgument("window " + window.str() + " larger than volume " + s.str());
        if (stride[a] < 1) throw InvalidArgument("stride must be >= 1 on every axis");
    }
    const auto ox = window_origins(s.nx, window.nx, stride.nx);
    const auto oy = window_origins(s.ny, window.ny, stride.ny);
    const auto oz = window_origins(s.nz, window.nz, stride.nz);
    RealGrid sum(s, 0.0);
    Grid3<int> count(s, 0);
    for (int x0 : ox)
        for (int y0 : oy)
            for (int z0 : oz) {
                const CropRecord rec{{x0, y0, z0}, window, {false, false, false}};
                const RealGrid prob = forward(params, apply_crop(volume.voxels, rec)).out.prob;
                for (int x = 0; x < window.nx; ++x)
                    for (int y = 0; y < window.ny; ++y)
                        for (int z = 0; z < window.nz; ++z) {
                            sum(x0 + x, y0 + y, z0 + z) += prob(x, y, z);
                            count(x0 + x, y0 + y, z0 + z) += 1;
                        }
            }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= count[i];
    if (coverage != nullptr) *coverage = std::move(count);
    return sum;
}

MaskGrid threshold(const RealGrid& prob, double level) {
    MaskGrid m(prob.shape());
    for (std::size_t i = 0; i < prob.size(); ++i) m[i] = prob[i] >= level ? 1 : 0;
    return m;
}

std::pair<double, double> dice_jaccard(const MaskGrid& pred, const MaskGrid& truth) {
    require_same_shape(pred.shape(), truth.shape(), "dice_jaccard");
    std::size_t inter = 0, np = 0, nt = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = truth[i] != 0;
        inter += p && t;
        np += p;
        nt += t;
    }
    if (np + nt == 0) return {100.0, 100.0};
    const double i = static_cast<double>(inter);
    return {200.0 * i / static_cast<double>(np + nt), 100.0 * i / static_cast<double>(np + nt - inter)};
}

std::vector<std::array<int, 3>> surface_voxels(const MaskGrid& mask) {
    const Shape3 s = mask.shape();
    static constexpr int kFace[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    std::vector<std::array<int, 3>> out;
    for (int x = 0; x < s.nx; ++x)
        for (int y = 0; y < s.ny; ++y)
            for (int z = 0; z < s.nz; ++z) {
                if (!mask(x, y, z)) continue;
                for (const auto& f : kFace) {
                    const int a = x + f[0], b = y + f[1], c = z + f[2];
                    if (!s.contains(a, b, c) || !mask(a, b, c)) {
                        out.push_back({x, y, z});
                        break;
                    }
                }
            }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InvalidArgument("percentile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SurfaceDistances surface_distances(const MaskGrid& pred, const MaskGrid& truth, const Spacing& spacing) {
    require_same_shape(pred.shape(), truth.shape(), "surface_distances");
    const auto sp = surface_voxels(pred);
    const auto st = surface_voxels(truth);
    if (sp.empty() && st.empty()) throw InvalidArgument("surface_distances: prediction and ground truth are both empty");
    if (sp.empty()) throw InvalidArgument("surface_distances: prediction mask is empty");
    if (st.empty()) throw InvalidArgument("surface_distances: ground-truth mask is empty");

    auto surface_grid = [&](const std::vector<std::array<int, 3>>& pts) {
        MaskGrid g(pred.shape(), 0);
        for (const auto& p : pts) g(p[0], p[1], p[2]) = 1;
        return g;
    };
    const RealGrid to_truth = squared_distance_transform(surface_grid(st), spacing);
    const RealGrid to_pred = squared_distance_transform(surface_grid(sp), spacing);
    std::vector<double> d;
    d.reserve(sp.size() + st.size());
    for (const auto& p : sp) d.push_back(std::sqrt(to_truth(p[0], p[1], p[2])));
    for (const auto& p : st) d.push_back(std::sqrt(to_pred(p[0], p[1], p[2])));
    const double asd = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    return {asd, percentile(std::move(d), 95.0)};
}

CaseMetrics evaluate_case(const MaskGrid& pred, const MaskGrid& truth, const Spacing& spacing, std::string id) {
    CaseMetrics m;
    m.id = std::move(id);
    std::tie(m.dice, m.jaccard) = dice_jaccard(pred, truth);
    const bool pred_empty = std::none_of(pred.begin(), pred.end(), [](auto v) { return v != 0; });
    const bool truth_empty = std::none_of(truth.begin(), truth.end(), [](auto v) { return v != 0; });
    if (pred_empty && truth_empty) {
        m.asd = m.hd95 = 0.0;
    } else if (pred_empty || truth_empty) {
        // Undefined surface distance; report NaN so aggregation can flag it.
        m.asd = m.hd95 = std::numeric_limits<double>::quiet_NaN();
    } else {
        const auto sd = surface_distances(pred, truth, spacing);
        m.asd = sd.asd;
        m.hd95 = sd.hd95;
    }
    return m;
}

MetricsReport evaluate(const ParamSet& params, const std::vector<AnnotatedCase>& cases, const Shape3& window,
                       const Shape3& stride) {
    if (cases.empty()) throw InvalidArgument("evaluate: no test cases");
    MetricsReport r;
    for (const auto& c : cases) {
        const RealGrid prob = sliding_window_infer(params, c.volume, window, stride);
        r.per_case.push_back(evaluate_case(threshold(prob), c.mask, c.volume.spacing, c.id));
    }
    const double n = static_cast<double>(r.per_case.size());
    for (const auto& m : r.per_case) {
        r.dice += m.dice / n;
        r.jaccard += m.jaccard / n;
        r.asd += m.asd / n;
        r.hd95 += m.hd95 / n;
    }
    return r;
}

double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InvalidArgument("paired_t_test: samples differ in length");
    if (a.size() < 2) throw InvalidArgument("paired_t_test: need at least two pairs");
    const auto n = static_cast<double>(a.size());
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0) || !std::isfinite(sd)) {
        throw InvalidArgument("paired_t_test: differences have zero variance; the t statistic is undefined");
    }
    const double t = mean / (sd / std::sqrt(n));
    const boost::math::students_t dist(n - 1.0);
    return boost::math::cdf(boost::math::complement(dist, t));
}

std::string metrics_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << kMetricsCsvHeader << '\n';
    char buf[256];
    for (const auto& m : r.per_case) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f", m.id.c_str(), m.dice, m.jaccard, m.asd, m.hd95);
        os << buf << '\n';
    }
    return os.str();
}

nlohmann::json metrics_json(const MetricsReport& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return nlohmann::json{{"Dice[%]", num(r.dice)},
                          {"Jaccard[%]", num(r.jaccard)},
                          {"ASD[voxel]", num(r.asd)},
                          {"95HD[voxel]", num(r.hd95)},
                          {"cases", r.per_case.size()}};
}

}  // namespace simcvd
