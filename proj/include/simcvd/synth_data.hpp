#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "simcvd/grid.hpp"

namespace simcvd {

struct Volume {
    RealGrid voxels;
    Spacing spacing{1.0, 1.0, 1.0};

    [[nodiscard]] const Shape3& shape() const { return voxels.shape(); }
    friend bool operator==(const Volume&, const Volume&) = default;
};

/// A volume with its binary object mask and ground-truth SDM.
struct AnnotatedCase {
    std::string id;
    std::uint64_t seed = 0;
    Volume volume;
    MaskGrid mask;
    RealGrid sdm;

    friend bool operator==(const AnnotatedCase&, const AnnotatedCase&) = default;
};

struct UnlabeledCase {
    std::string id;
    Volume volume;

    friend bool operator==(const UnlabeledCase&, const UnlabeledCase&) = default;
};

struct DatasetSplit {
    std::vector<AnnotatedCase> labeled;
    std::vector<UnlabeledCase> unlabeled;
    std::vector<AnnotatedCase> test;
    std::uint64_t seed = 0;
};

/// Ellipsoid union parameters for a phantom.
struct ObjectSpec {
    int min_count = 1;
    int max_count = 1;
    double min_radius = 6.0;
    double max_radius = 10.0;
    double object_level = 1.0;      // mean foreground contrast over background
    double contrast_jitter = 0.3;   // relative per-case jitter of object_level
    double background_level = 0.0;
    double bias_amplitude = 0.3;    // peak of a random linear intensity ramp
    double noise_sigma = 0.4;

    friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

/// Shared geometric transform applied to both views of a volume.
struct CropRecord {
    std::array<int, 3> origin{0, 0, 0};
    Shape3 size{};
    std::array<bool, 3> flip{false, false, false};

    friend bool operator==(const CropRecord&, const CropRecord&) = default;
};

struct TwoViews {
    Volume student;
    Volume teacher;
    CropRecord crop;
};

/// Rescales to zero mean and unit (population) variance. Constant volumes are rejected.
void normalize(Volume& volume);

AnnotatedCase generate_phantom(const Shape3& shape, std::uint64_t seed, const ObjectSpec& spec = {},
                               const Spacing& spacing = {1.0, 1.0, 1.0});

/// `count` phantoms; case i uses a seed derived from (seed, i).
std::vector<AnnotatedCase> generate_phantoms(int count, const Shape3& shape, std::uint64_t seed,
                                             const ObjectSpec& spec = {});

/// Draws a random crop of `crop` size with per-axis flips.
CropRecord random_crop(const Shape3& volume_shape, const Shape3& crop, std::uint64_t seed);

template <class T>
Grid3<T> apply_crop(const Grid3<T>& g, const CropRecord& rec) {
    Grid3<T> out(rec.size);
    for (int x = 0; x < rec.size.nx; ++x) {
        const int sx = rec.origin[0] + (rec.flip[0] ? rec.size.nx - 1 - x : x);
        for (int y = 0; y < rec.size.ny; ++y) {
            const int sy = rec.origin[1] + (rec.flip[1] ? rec.size.ny - 1 - y : y);
            for (int z = 0; z < rec.size.nz; ++z) {
                const int sz = rec.origin[2] + (rec.flip[2] ? rec.size.nz - 1 - z : z);
                out(x, y, z) = g(sx, sy, sz);
            }
        }
    }
    return out;
}

/// Two views of one volume that share a crop/flip and differ only by independent noise fields.
/// When `crop` is omitted the full volume is used.
TwoViews two_view(const Volume& volume, std::uint64_t seed, double noise_scale,
                  std::optional<Shape3> crop = std::nullopt);

/// Seed-deterministic disjoint partition. Unlabeled cases lose their mask and SDM.
DatasetSplit make_split(const std::vector<AnnotatedCase>& cases, int n_labeled, int n_unlabeled, int n_test,
                        std::uint64_t seed);

}  // namespace simcvd
