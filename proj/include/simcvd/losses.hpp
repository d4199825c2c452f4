#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "simcvd/synth_data.hpp"
#include "simcvd/tensors.hpp"

namespace simcvd {

/// Scalar knobs of the objective. Defaults follow the published configuration except
/// batch_slices, which is sized for desk-scale mini-batches.
struct HyperParams {
    double alpha = 0.1;       // SDM regression weight
    double lambda = 0.5;      // boundary-aware contrast weight
    double beta = 0.1;        // pair-wise distillation weight
    double gamma = 0.1;       // consistency weight
    double tau = 0.5;         // InfoNCE temperature
    double ema_decay = 0.999;
    double dropout_p = 0.1;
    int batch_slices = 16;    // B: size of each InfoNCE pool
    int d_h = 128;

    void validate() const;
    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

struct LossReport {
    double sup = 0.0;
    double contrast = 0.0;
    double pd = 0.0;
    double con = 0.0;
    double total = 0.0;
    double rampup = 1.0;

    friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// Probability clamp used by the cross-entropy term.
inline constexpr double kProbEps = 1e-7;

/// 0.5 * (soft Dice loss + voxel-mean BCE). An empty target yields a Dice term of 1.
double seg_loss(const RealGrid& q, const MaskGrid& y, RealGrid* grad_q = nullptr);

/// Ground truth for one labeled crop.
struct SegTarget {
    const MaskGrid* mask = nullptr;
    const RealGrid* sdm = nullptr;
};

inline SegTarget target_of(const AnnotatedCase& c) { return {&c.mask, &c.sdm}; }

/// mean(seg_loss) + alpha * mean(voxel MSE between predicted and target SDM).
double supervised_loss(std::span<const DualOutput> outputs, std::span<const SegTarget> labels, double alpha,
                       std::vector<DualOutput>* grads = nullptr);
double supervised_loss(std::span<const DualOutput> outputs, std::span<const AnnotatedCase> labels, double alpha);

/// -log softmax of the positive among raw dot products anchor.pool_k / tau.
/// `pool` holds one candidate per row and must contain the positive at `positive_row`.
double info_nce(const Vector& anchor, const Matrix& pool, int positive_row, double tau, Vector* grad_anchor = nullptr,
                Matrix* grad_pool = nullptr);

/// Overload that locates `positive` in the pool; throws if it is absent.
double info_nce(const Vector& anchor, const Vector& positive, const Matrix& pool, double tau);

/// Row indices (into the flattened slice list) forming the InfoNCE pool of positive pair `pair`.
/// The positive comes first; the rest are distinct and drawn deterministically from `seed`.
std::vector<int> sample_pool(int pair, int total_slices, int pool_size, std::uint64_t seed);

/// Symmetric boundary-aware contrast over all (case, slice) positive pairs. Rows are L2-normalised
/// before the dot product. Teacher and student sets are interchangeable.
double boundary_contrast_loss(std::span<const SliceEmbeddingMatrix> h_teacher,
                              std::span<const SliceEmbeddingMatrix> h_student, double tau, int pool_size,
                              std::uint64_t seed, std::vector<Matrix>* grad_teacher = nullptr,
                              std::vector<Matrix>* grad_student = nullptr);

/// Pair-wise distillation: per case, summed over positions j of -log softmax_k cos(v_s_j, v_t_k) at k=j,
/// averaged over cases.
double pairwise_distill_loss(std::span<const HiddenPattern> v_student, std::span<const HiddenPattern> v_teacher,
                             std::vector<Matrix>* grad_student = nullptr, std::vector<Matrix>* grad_teacher = nullptr);

/// Mean over cases of the voxel-mean squared difference of probability maps.
double consistency_loss(std::span<const DualOutput> out_s, std::span<const DualOutput> out_t,
                        std::vector<RealGrid>* grad_s = nullptr, std::vector<RealGrid>* grad_t = nullptr);

/// Gaussian warm-up exp(-5 (1 - t/t_max)^2); t is clamped into [0, t_max].
double rampup(long t, long t_max);

/// Multipliers applied to each loss term at step t.
struct LossWeights {
    double sup = 1.0;
    double contrast = 0.0;
    double pd = 0.0;
    double con = 0.0;
    double rampup = 1.0;
};
LossWeights loss_weights(const HyperParams& hp, long t, long t_max);

/// Assembles sup + rampup * (lambda*contrast + beta*pd + gamma*con). Non-finite parts are rejected.
LossReport total_loss(double sup, double contrast, double pd, double con, const HyperParams& hp, long t, long t_max);

}  // namespace simcvd
