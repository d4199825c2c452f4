#include "simcvd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include <spdlog/spdlog.h>

#include "simcvd/rng.hpp"

namespace simcvd {
namespace {

// Numerically stable log-sum-exp; also returns the softmax in `probs`.
double log_sum_exp(const Vector& logits, Vector& probs) {
    const double m = logits.maxCoeff();
    probs = (logits.array() - m).exp();
    const double s = probs.sum();
    probs /= s;
    return m + std::log(s);
}

// Row-wise L2 normalisation with the inverse norms kept for the backward pass.
Matrix normalize_rows(const Matrix& h, Vector& inv_norm, const char* what) {
    inv_norm.resize(h.rows());
    Matrix u(h.rows(), h.cols());
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
        const double n = h.row(r).norm();
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw NumericalError(std::string(what) + ": row " + std::to_string(r) + " has zero or non-finite norm");
        }
        inv_norm[r] = 1.0 / n;
        u.row(r) = h.row(r) * inv_norm[r];
    }
    return u;
}

// d/dh of a loss given d/du where u = h / |h|.
Matrix normalize_rows_backward(const Matrix& u, const Vector& inv_norm, const Matrix& du) {
    Matrix dh(u.rows(), u.cols());
    for (Eigen::Index r = 0; r < u.rows(); ++r) {
        const double proj = u.row(r).dot(du.row(r));
        dh.row(r) = (du.row(r) - proj * u.row(r)) * inv_norm[r];
    }
    return dh;
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + what + " loss term");
}

}  // namespace

void HyperParams::validate() const {
    if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw InvalidArgument("ema_decay must lie in [0,1]");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidArgument("dropout_p must lie in [0,1)");
    if (alpha < 0.0 || lambda < 0.0 || beta < 0.0 || gamma < 0.0) {
        throw InvalidArgument("loss weights must be non-negative");
    }
    if (batch_slices < 2) throw InvalidArgument("batch_slices must be >= 2");
    if (d_h < 1) throw InvalidArgument("d_h must be positive");
}

double seg_loss(const RealGrid& q, const MaskGrid& y, RealGrid* grad_q) {
    require_same_shape(q.shape(), y.shape(), "seg_loss");
    const std::size_t n = q.size();
    if (n == 0) throw ShapeError("seg_loss: empty grid");
    double inter = 0.0, sum_q = 0.0, sum_y = 0.0, ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double qc = std::clamp(q[i], kProbEps, 1.0 - kProbEps);
        const double yi = y[i];
        inter += qc * yi;
        sum_q += qc;
        sum_y += yi;
        ce -= yi * std::log(qc) + (1.0 - yi) * std::log(1.0 - qc);
    }
    const double denom = sum_q + sum_y;
    const double dice = 1.0 - 2.0 * inter / denom;
    ce /= static_cast<double>(n);
    if (grad_q != nullptr) {
        *grad_q = RealGrid(q.shape());
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (q[i] < kProbEps || q[i] > 1.0 - kProbEps) continue;
            const double yi = y[i];
            const double d_dice = -2.0 * (yi * denom - inter) / (denom * denom);
            const double d_ce = -inv_n * (yi / q[i] - (1.0 - yi) / (1.0 - q[i]));
            (*grad_q)[i] = 0.5 * (d_dice + d_ce);
        }
    }
    return 0.5 * (dice + ce);
}

double supervised_loss(std::span<const DualOutput> outputs, std::span<const SegTarget> labels, double alpha,
                       std::vector<DualOutput>* grads) {
    if (outputs.empty()) throw InvalidArgument("supervised_loss: empty labeled batch");
    if (outputs.size() != labels.size()) throw ShapeError("supervised_loss: outputs/labels count mismatch");
    const double inv_b = 1.0 / static_cast<double>(outputs.size());
    if (grads != nullptr) grads->assign(outputs.size(), DualOutput{});
    double seg_sum = 0.0, mse_sum = 0.0;
    for (std::size_t b = 0; b < outputs.size(); ++b) {
        const auto& out = outputs[b];
        const auto& sdm = *labels[b].sdm;
        require_same_shape(out.sdm.shape(), sdm.shape(), "supervised_loss sdm");
        RealGrid* gq = grads != nullptr ? &(*grads)[b].prob : nullptr;
        seg_sum += seg_loss(out.prob, *labels[b].mask, gq);
        const double inv_n = 1.0 / static_cast<double>(sdm.size());
        double mse = 0.0;
        for (std::size_t i = 0; i < sdm.size(); ++i) {
            const double d = out.sdm[i] - sdm[i];
            mse += d * d;
        }
        mse_sum += mse * inv_n;
        if (grads != nullptr) {
            auto& g = (*grads)[b];
            for (double& v : g.prob) v *= inv_b;
            g.sdm = RealGrid(sdm.shape());
            for (std::size_t i = 0; i < sdm.size(); ++i) g.sdm[i] = alpha * inv_b * 2.0 * inv_n * (out.sdm[i] - sdm[i]);
        }
    }
    return inv_b * seg_sum + alpha * inv_b * mse_sum;
}

double supervised_loss(std::span<const DualOutput> outputs, std::span<const AnnotatedCase> labels, double alpha) {
    std::vector<SegTarget> targets;
    targets.reserve(labels.size());
    for (const auto& c : labels) targets.push_back(target_of(c));
    return supervised_loss(outputs, std::span<const SegTarget>(targets), alpha);
}

double info_nce(const Vector& anchor, const Matrix& pool, int positive_row, double tau, Vector* grad_anchor,
                Matrix* grad_pool) {
    if (!(tau > 0.0)) throw InvalidArgument("info_nce: tau must be > 0");
    if (pool.rows() < 2) throw InvalidArgument("info_nce: pool must hold at least 2 vectors");
    if (positive_row < 0 || positive_row >= pool.rows()) {
        throw InvalidArgument("info_nce: pool does not contain the positive");
    }
    if (pool.cols() != anchor.size()) throw ShapeError("info_nce: anchor/pool width mismatch");
    const Vector logits = pool * anchor / tau;
    Vector probs;
    const double loss = log_sum_exp(logits, probs) - logits[positive_row];
    if (grad_anchor != nullptr || grad_pool != nullptr) {
        Vector coeff = probs;
        coeff[positive_row] -= 1.0;
        coeff /= tau;
        if (grad_anchor != nullptr) *grad_anchor = pool.transpose() * coeff;
        if (grad_pool != nullptr) *grad_pool = coeff * anchor.transpose();
    }
    return loss;
}

double info_nce(const Vector& anchor, const Vector& positive, const Matrix& pool, double tau) {
    for (Eigen::Index r = 0; r < pool.rows(); ++r) {
        if (pool.row(r).transpose() == positive) return info_nce(anchor, pool, static_cast<int>(r), tau);
    }
    throw InvalidArgument("info_nce: pool does not contain the positive");
}

std::vector<int> sample_pool(int pair, int total_slices, int pool_size, std::uint64_t seed) {
    if (pool_size < 2 || pool_size > total_slices) {
        throw InvalidArgument("sample_pool: pool size " + std::to_string(pool_size) + " outside [2, " +
                              std::to_string(total_slices) + "]");
    }
    std::vector<int> others;
    others.reserve(static_cast<std::size_t>(total_slices - 1));
    for (int k = 0; k < total_slices; ++k)
        if (k != pair) others.push_back(k);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(pair)}));
    const auto need = static_cast<std::size_t>(pool_size - 1);
    if (need < others.size()) {
        for (std::size_t i = 0; i < need; ++i) {
            const std::size_t j = i + rng() % (others.size() - i);
            std::swap(others[i], others[j]);
        }
        others.resize(need);
    }
    std::vector<int> pool{pair};
    pool.insert(pool.end(), others.begin(), others.end());
    return pool;
}

double boundary_contrast_loss(std::span<const SliceEmbeddingMatrix> h_teacher,
                              std::span<const SliceEmbeddingMatrix> h_student, double tau, int pool_size,
                              std::uint64_t seed, std::vector<Matrix>* grad_teacher, std::vector<Matrix>* grad_student) {
    if (h_teacher.size() != h_student.size()) throw ShapeError("boundary_contrast_loss: case count mismatch");
    Eigen::Index total = 0, width = -1;
    for (std::size_t i = 0; i < h_teacher.size(); ++i) {
        if (h_teacher[i].rows() != h_student[i].rows() || h_teacher[i].cols() != h_student[i].cols()) {
            throw ShapeError("boundary_contrast_loss: case " + std::to_string(i) + " teacher/student shape mismatch");
        }
        if (width >= 0 && h_teacher[i].cols() != width) throw ShapeError("boundary_contrast_loss: width mismatch");
        width = h_teacher[i].cols();
        total += h_teacher[i].rows();
    }
    if (total == 0) throw InvalidArgument("boundary_contrast_loss: no positive pairs");

    Matrix ht(total, width), hs(total, width);
    for (Eigen::Index i = 0, r = 0; i < static_cast<Eigen::Index>(h_teacher.size()); ++i) {
        ht.middleRows(r, h_teacher[i].rows()) = h_teacher[i];
        hs.middleRows(r, h_student[i].rows()) = h_student[i];
        r += h_teacher[i].rows();
    }
    Vector inv_t, inv_s;
    const Matrix ut = normalize_rows(ht, inv_t, "boundary_contrast_loss teacher");
    const Matrix us = normalize_rows(hs, inv_s, "boundary_contrast_loss student");

    const bool want_grad = grad_teacher != nullptr || grad_student != nullptr;
    Matrix dut, dus;
    if (want_grad) {
        dut = Matrix::Zero(total, width);
        dus = Matrix::Zero(total, width);
    }
    const double inv_pairs = 1.0 / static_cast<double>(total);
    const int n_total = static_cast<int>(total);
    double sum = 0.0;
    Matrix pool_t(pool_size, width), pool_s(pool_size, width);
    Vector ga;
    Matrix gp;
    for (int g = 0; g < n_total; ++g) {
        const auto idx = sample_pool(g, n_total, pool_size, seed);
        for (int k = 0; k < pool_size; ++k) {
            pool_t.row(k) = ut.row(idx[k]);
            pool_s.row(k) = us.row(idx[k]);
        }
        // teacher anchor against student pool, then student anchor against teacher pool
        const Vector at = ut.row(g).transpose();
        const Vector as = us.row(g).transpose();
        const double from_teacher = info_nce(at, pool_s, 0, tau, want_grad ? &ga : nullptr, want_grad ? &gp : nullptr);
        if (want_grad) {
            dut.row(g) += inv_pairs * ga.transpose();
            for (int k = 0; k < pool_size; ++k) dus.row(idx[k]) += inv_pairs * gp.row(k);
        }
        const double from_student = info_nce(as, pool_t, 0, tau, want_grad ? &ga : nullptr, want_grad ? &gp : nullptr);
        if (want_grad) {
            dus.row(g) += inv_pairs * ga.transpose();
            for (int k = 0; k < pool_size; ++k) dut.row(idx[k]) += inv_pairs * gp.row(k);
        }
        sum += from_teacher + from_student;
    }
    if (want_grad) {
        const Matrix dht = normalize_rows_backward(ut, inv_t, dut);
        const Matrix dhs = normalize_rows_backward(us, inv_s, dus);
        auto split = [&](const Matrix& full, std::vector<Matrix>* out) {
            if (out == nullptr) return;
            out->clear();
            Eigen::Index r = 0;
            for (const auto& h : h_teacher) {
                out->push_back(full.middleRows(r, h.rows()));
                r += h.rows();
            }
        };
        split(dht, grad_teacher);
        split(dhs, grad_student);
    }
    return sum * inv_pairs;
}

double pairwise_distill_loss(std::span<const HiddenPattern> v_student, std::span<const HiddenPattern> v_teacher,
                             std::vector<Matrix>* grad_student, std::vector<Matrix>* grad_teacher) {
    if (v_student.size() != v_teacher.size()) throw ShapeError("pairwise_distill_loss: case count mismatch");
    if (v_student.empty()) throw InvalidArgument("pairwise_distill_loss: empty batch");
    const double inv_m = 1.0 / static_cast<double>(v_student.size());
    if (grad_student != nullptr) grad_student->clear();
    if (grad_teacher != nullptr) grad_teacher->clear();
    double total = 0.0;
    Vector probs;
    for (std::size_t i = 0; i < v_student.size(); ++i) {
        const auto& vs = v_student[i];
        const auto& vt = v_teacher[i];
        if (vs.rows() != vt.rows() || vs.cols() != vt.cols()) {
            throw ShapeError("pairwise_distill_loss: case " + std::to_string(i) + " student/teacher shape mismatch");
        }
        Vector inv_s, inv_t;
        const Matrix us = normalize_rows(vs, inv_s, "pairwise_distill_loss student");
        const Matrix ut = normalize_rows(vt, inv_t, "pairwise_distill_loss teacher");
        const Matrix cos = us * ut.transpose();
        Matrix dcos(cos.rows(), cos.cols());
        for (Eigen::Index j = 0; j < cos.rows(); ++j) {
            const Vector row = cos.row(j).transpose();
            total += inv_m * (log_sum_exp(row, probs) - row[j]);
            probs[j] -= 1.0;
            dcos.row(j) = inv_m * probs.transpose();
        }
        if (grad_student != nullptr) grad_student->push_back(normalize_rows_backward(us, inv_s, dcos * ut));
        if (grad_teacher != nullptr) {
            grad_teacher->push_back(normalize_rows_backward(ut, inv_t, dcos.transpose() * us));
        }
    }
    return total;
}

double consistency_loss(std::span<const DualOutput> out_s, std::span<const DualOutput> out_t,
                        std::vector<RealGrid>* grad_s, std::vector<RealGrid>* grad_t) {
    if (out_s.empty()) throw InvalidArgument("consistency_loss: empty batch");
    if (out_s.size() != out_t.size()) throw ShapeError("consistency_loss: case count mismatch");
    const double inv_m = 1.0 / static_cast<double>(out_s.size());
    if (grad_s != nullptr) grad_s->clear();
    if (grad_t != nullptr) grad_t->clear();
    double total = 0.0;
    for (std::size_t i = 0; i < out_s.size(); ++i) {
        const auto& ps = out_s[i].prob;
        const auto& pt = out_t[i].prob;
        require_same_shape(ps.shape(), pt.shape(), "consistency_loss");
        const double inv_n = 1.0 / static_cast<double>(ps.size());
        double mse = 0.0;
        RealGrid gs(ps.shape());
        for (std::size_t k = 0; k < ps.size(); ++k) {
            const double d = ps[k] - pt[k];
            mse += d * d;
            gs[k] = 2.0 * inv_m * inv_n * d;
        }
        total += inv_m * inv_n * mse;
        if (grad_t != nullptr) {
            RealGrid gt(ps.shape());
            for (std::size_t k = 0; k < ps.size(); ++k) gt[k] = -gs[k];
            grad_t->push_back(std::move(gt));
        }
        if (grad_s != nullptr) grad_s->push_back(std::move(gs));
    }
    return total;
}

double rampup(long t, long t_max) {
    if (t_max <= 0) throw InvalidArgument("rampup: t_max must be > 0");
    if (t < 0 || t > t_max) {
        static std::once_flag warned;
        std::call_once(warned, [&] { spdlog::warn("rampup: step {} outside [0, {}], clamping", t, t_max); });
        t = std::clamp(t, 0L, t_max);
    }
    const double phase = 1.0 - static_cast<double>(t) / static_cast<double>(t_max);
    return std::exp(-5.0 * phase * phase);
}

LossWeights loss_weights(const HyperParams& hp, long t, long t_max) {
    const double r = rampup(t, t_max);
    return LossWeights{1.0, r * hp.lambda, r * hp.beta, r * hp.gamma, r};
}

LossReport total_loss(double sup, double contrast, double pd, double con, const HyperParams& hp, long t, long t_max) {
    require_finite(sup, "sup");
    require_finite(contrast, "contrast");
    require_finite(pd, "pd");
    require_finite(con, "con");
    LossReport r;
    r.sup = sup;
    r.contrast = contrast;
    r.pd = pd;
    r.con = con;
    r.rampup = rampup(t, t_max);
    r.total = sup + r.rampup * (hp.lambda * contrast + hp.beta * pd + hp.gamma * con);
    return r;
}

}  // namespace simcvd
