#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "simcvd/model.hpp"
#include "simcvd/synth_data.hpp"

namespace simcvd {

struct CaseMetrics {
    std::string id;
    double dice = 0.0;     // percent
    double jaccard = 0.0;  // percent
    double asd = 0.0;      // spacing units (voxels at unit spacing)
    double hd95 = 0.0;
};

struct MetricsReport {
    double dice = 0.0;
    double jaccard = 0.0;
    double asd = 0.0;
    double hd95 = 0.0;
    std::vector<CaseMetrics> per_case;
};

/// Window origins along one axis: 0, stride, 2*stride, ... with the last window clamped to the end.
std::vector<int> window_origins(int size, int window, int stride);

/// Averages probability maps of overlapping windows. The optional `coverage` receives per-voxel
/// window counts.
RealGrid sliding_window_infer(const ParamSet& params, const Volume& volume, const Shape3& window,
                              const Shape3& stride, Grid3<int>* coverage = nullptr);

MaskGrid threshold(const RealGrid& prob, double level = 0.5);

/// (Dice %, Jaccard %). Two empty masks score (100, 100).
std::pair<double, double> dice_jaccard(const MaskGrid& pred, const MaskGrid& truth);

/// Voxels of the mask with at least one face neighbour outside the object (or outside the grid).
std::vector<std::array<int, 3>> surface_voxels(const MaskGrid& mask);

struct SurfaceDistances {
    double asd = 0.0;
    double hd95 = 0.0;
};

/// ASD and 95th percentile (linear interpolation) of the pooled directed surface distances.
SurfaceDistances surface_distances(const MaskGrid& pred, const MaskGrid& truth,
                                   const Spacing& spacing = {1.0, 1.0, 1.0});

/// Linear-interpolation percentile (q in [0,100]) of unsorted values.
double percentile(std::vector<double> values, double q);

CaseMetrics evaluate_case(const MaskGrid& pred, const MaskGrid& truth, const Spacing& spacing, std::string id = {});

/// Inference plus metrics over every test case; aggregate values are per-case means.
MetricsReport evaluate(const ParamSet& params, const std::vector<AnnotatedCase>& cases, const Shape3& window,
                       const Shape3& stride);

/// One-sided paired t-test p-value for the alternative mean(a - b) > 0.
double paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

inline constexpr const char* kMetricsCsvHeader = "case,Dice[%],Jaccard[%],ASD[voxel],95HD[voxel]";
std::string metrics_csv(const MetricsReport& r);
nlohmann::json metrics_json(const MetricsReport& r);

}  // namespace simcvd
