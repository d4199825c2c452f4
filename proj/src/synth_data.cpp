#include "simcvd/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "simcvd/rng.hpp"
#include "simcvd/sdm.hpp"

namespace simcvd {

void normalize(Volume& volume) {
    auto& v = volume.voxels.values();
    if (v.empty()) throw InvalidArgument("normalize: empty volume");
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0.0)) throw NumericalError("normalize: constant volume has zero variance");
    for (double& x : v) x = (x - mean) / sd;
}

AnnotatedCase generate_phantom(const Shape3& shape, std::uint64_t seed, const ObjectSpec& spec,
                               const Spacing& spacing) {
    static constexpr const char* kAxis[] = {"x", "y", "z"};
    if (spec.min_count < 1 || spec.max_count < spec.min_count) {
        throw InvalidArgument("generate_phantom: object count range must satisfy 1 <= min <= max");
    }
    if (!(spec.min_radius > 0.0) || spec.max_radius < spec.min_radius) {
        throw InvalidArgument("generate_phantom: radius range must satisfy 0 < min <= max");
    }
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 8) {
            throw InvalidArgument(std::string("generate_phantom: dimension ") + kAxis[a] + " = " +
                                  std::to_string(shape[a]) + " is below the minimum of 8");
        }
        // Room for a minimal ellipsoid plus one background voxel on each side.
        const double need = 2.0 * spec.min_radius + 3.0;
        if (shape[a] < need) {
            throw InvalidArgument(std::string("generate_phantom: dimension ") + kAxis[a] + " = " +
                                  std::to_string(shape[a]) + " cannot contain an ellipsoid of radius " +
                                  std::to_string(spec.min_radius) + " (needs >= " + std::to_string(need) + ")");
        }
    }

    Rng rng(seed);
    AnnotatedCase c;
    c.seed = seed;
    c.mask = MaskGrid(shape, 0);
    const int count = uniform_int(rng, spec.min_count, spec.max_count);
    for (int k = 0; k < count; ++k) {
        std::array<double, 3> r{};
        std::array<double, 3> ctr{};
        for (int a = 0; a < 3; ++a) {
            const double r_hi = std::min(spec.max_radius, (shape[a] - 3.0) / 2.0);
            r[a] = uniform(rng, spec.min_radius, r_hi);
            ctr[a] = uniform(rng, r[a] + 1.0, shape[a] - 2.0 - r[a]);
        }
        for (int x = 0; x < shape.nx; ++x)
            for (int y = 0; y < shape.ny; ++y)
                for (int z = 0; z < shape.nz; ++z) {
                    const double dx = (x - ctr[0]) / r[0];
                    const double dy = (y - ctr[1]) / r[1];
                    const double dz = (z - ctr[2]) / r[2];
                    if (dx * dx + dy * dy + dz * dz <= 1.0) c.mask(x, y, z) = 1;
                }
    }

    const double level = spec.object_level * (1.0 + uniform(rng, -spec.contrast_jitter, spec.contrast_jitter));
    std::array<double, 3> ramp{};
    for (double& g : ramp) g = uniform(rng, -1.0, 1.0);
    const double ramp_norm = std::abs(ramp[0]) + std::abs(ramp[1]) + std::abs(ramp[2]);

    c.volume.spacing = spacing;
    c.volume.voxels = RealGrid(shape);
    for (int x = 0; x < shape.nx; ++x)
        for (int y = 0; y < shape.ny; ++y)
            for (int z = 0; z < shape.nz; ++z) {
                const double u = ramp[0] * (x / (shape.nx - 1.0) - 0.5) + ramp[1] * (y / (shape.ny - 1.0) - 0.5) +
                                 ramp[2] * (z / (shape.nz - 1.0) - 0.5);
                const double bias = ramp_norm > 0.0 ? 2.0 * spec.bias_amplitude * u / ramp_norm : 0.0;
                c.volume.voxels(x, y, z) = spec.background_level + level * c.mask(x, y, z) + bias +
                                           spec.noise_sigma * standard_normal(rng);
            }
    normalize(c.volume);
    c.sdm = signed_distance_map(c.mask, spacing);
    return c;
}

std::vector<AnnotatedCase> generate_phantoms(int count, const Shape3& shape, std::uint64_t seed,
                                             const ObjectSpec& spec) {
    if (count < 0) throw InvalidArgument("generate_phantoms: negative count");
    std::vector<AnnotatedCase> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        auto c = generate_phantom(shape, derive_seed(seed, {static_cast<std::uint64_t>(i)}), spec);
        char id[32];
        std::snprintf(id, sizeof id, "case_%04d", i);
        c.id = id;
        out.push_back(std::move(c));
    }
    return out;
}

CropRecord random_crop(const Shape3& volume_shape, const Shape3& crop, std::uint64_t seed) {
    for (int a = 0; a < 3; ++a) {
        if (crop[a] < 1 || crop[a] > volume_shape[a]) {
            throw InvalidArgument("crop size " + crop.str() + " does not fit volume " + volume_shape.str());
        }
    }
    Rng rng(seed);
    CropRecord rec;
    rec.size = crop;
    for (int a = 0; a < 3; ++a) rec.origin[a] = uniform_int(rng, 0, volume_shape[a] - crop[a]);
    for (int a = 0; a < 3; ++a) rec.flip[a] = (rng() & 1U) != 0;
    return rec;
}

TwoViews two_view(const Volume& volume, std::uint64_t seed, double noise_scale, std::optional<Shape3> crop) {
    if (!(noise_scale >= 0.0)) throw InvalidArgument("two_view: noise_scale must be >= 0");
    TwoViews tv;
    tv.crop = random_crop(volume.shape(), crop.value_or(volume.shape()), derive_seed(seed, {0}));
    const RealGrid base = apply_crop(volume.voxels, tv.crop);
    tv.student = Volume{base, volume.spacing};
    tv.teacher = Volume{base, volume.spacing};
    if (noise_scale > 0.0) {
        Rng rs(derive_seed(seed, {1}));
        Rng rt(derive_seed(seed, {2}));
        for (double& v : tv.student.voxels) v += noise_scale * standard_normal(rs);
        for (double& v : tv.teacher.voxels) v += noise_scale * standard_normal(rt);
    }
    return tv;
}

DatasetSplit make_split(const std::vector<AnnotatedCase>& cases, int n_labeled, int n_unlabeled, int n_test,
                        std::uint64_t seed) {
    if (n_labeled < 1 || n_unlabeled < 0 || n_test < 0) {
        throw InvalidArgument("make_split: need n_labeled >= 1, n_unlabeled >= 0, n_test >= 0");
    }
    const std::size_t required = static_cast<std::size_t>(n_labeled) + n_unlabeled + n_test;
    if (required > cases.size()) {
        throw InvalidArgument("make_split: insufficient cases: required " + std::to_string(required) +
                              ", available " + std::to_string(cases.size()));
    }
    std::vector<std::size_t> order(cases.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    // Fisher-Yates with our own index draw so the permutation is library independent.
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng() % i]);
    }
    DatasetSplit split;
    split.seed = seed;
    std::size_t k = 0;
    for (int i = 0; i < n_labeled; ++i) split.labeled.push_back(cases[order[k++]]);
    for (int i = 0; i < n_unlabeled; ++i) {
        const auto& c = cases[order[k++]];
        split.unlabeled.push_back(UnlabeledCase{c.id, c.volume});
    }
    for (int i = 0; i < n_test; ++i) split.test.push_back(cases[order[k++]]);
    return split;
}

}  // namespace simcvd
