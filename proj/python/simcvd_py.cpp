#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <vector>

#include "simcvd/evalsuite.hpp"
#include "simcvd/experiment.hpp"
#include "simcvd/losses.hpp"
#include "simcvd/sdm.hpp"

namespace py = pybind11;
using namespace py::literals;
using namespace simcvd;

namespace {

using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Shape3 shape_of(const py::buffer_info& b) {
    if (b.ndim != 3) throw ShapeError("expected a 3-D array, got " + std::to_string(b.ndim) + "-D");
    return Shape3{static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]), static_cast<int>(b.shape[2])};
}

RealGrid to_real(const RealArray& a) {
    const auto b = a.request();
    RealGrid g(shape_of(b));
    const auto* p = static_cast<const double*>(b.ptr);
    std::copy(p, p + g.size(), g.data());
    return g;
}

MaskGrid to_mask(const MaskArray& a) {
    const auto b = a.request();
    MaskGrid g(shape_of(b));
    const auto* p = static_cast<const std::uint8_t*>(b.ptr);
    std::copy(p, p + g.size(), g.data());
    return g;
}

template <class T>
py::array_t<T> to_numpy(const Grid3<T>& g) {
    const Shape3& s = g.shape();
    py::array_t<T> out({s.nx, s.ny, s.nz});
    std::copy(g.data(), g.data() + g.size(), out.mutable_data());
    return out;
}

Spacing spacing_of(const std::array<double, 3>& s) { return Spacing{s[0], s[1], s[2]}; }

std::vector<DualOutput> prob_outputs(const std::vector<RealArray>& probs) {
    std::vector<DualOutput> out;
    for (const auto& p : probs) {
        DualOutput d;
        d.prob = to_real(p);
        d.sdm = RealGrid(d.prob.shape());
        out.push_back(std::move(d));
    }
    return out;
}

py::dict loss_dict(const LossReport& r) {
    return py::dict("sup"_a = r.sup, "contrast"_a = r.contrast, "pd"_a = r.pd, "con"_a = r.con, "total"_a = r.total,
                    "rampup"_a = r.rampup);
}

}  // namespace

PYBIND11_MODULE(_simcvd, m) {
    m.doc() = "simcvd core operations";
    m.attr("__version__") = SIMCVD_VERSION;

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<StateError>(m, "StateError", base.ptr());

    m.def(
        "signed_distance_map",
        [](const MaskArray& mask, std::array<double, 3> spacing) {
            return to_numpy(signed_distance_map(to_mask(mask), spacing_of(spacing)));
        },
        "mask"_a, "spacing"_a = std::array<double, 3>{1.0, 1.0, 1.0},
        "Normalised signed distance map of a binary mask, negative inside.");

    m.def(
        "generate_phantom",
        [](std::array<int, 3> shape, std::uint64_t seed) {
            const AnnotatedCase c = generate_phantom(Shape3{shape[0], shape[1], shape[2]}, seed);
            return py::dict("id"_a = c.id, "volume"_a = to_numpy(c.volume.voxels), "mask"_a = to_numpy(c.mask),
                            "sdm"_a = to_numpy(c.sdm));
        },
        "shape"_a, "seed"_a, "Synthetic annotated phantom: dict with volume, mask and sdm arrays.");

    m.def(
        "seg_loss", [](const RealArray& q, const MaskArray& y) { return seg_loss(to_real(q), to_mask(y)); }, "q"_a,
        "y"_a, "0.5 * (soft Dice loss + mean binary cross-entropy).");

    m.def(
        "info_nce",
        [](const Vector& anchor, const Matrix& pool, int positive_row, double tau) {
            return info_nce(anchor, pool, positive_row, tau);
        },
        "anchor"_a, "pool"_a, "positive_row"_a, "tau"_a, "InfoNCE of the anchor against pool rows.");

    m.def(
        "pairwise_distill_loss",
        [](const std::vector<Matrix>& v_s, const std::vector<Matrix>& v_t) { return pairwise_distill_loss(v_s, v_t); },
        "v_student"_a, "v_teacher"_a, "Pair-wise distillation over per-case hidden patterns (rows = positions).");

    m.def(
        "consistency_loss",
        [](const std::vector<RealArray>& s, const std::vector<RealArray>& t) {
            const auto a = prob_outputs(s);
            const auto b = prob_outputs(t);
            return consistency_loss(a, b);
        },
        "prob_student"_a, "prob_teacher"_a, "Mean squared difference of probability maps.");

    m.def("rampup", &rampup, "t"_a, "t_max"_a, "exp(-5 (1 - t/t_max)^2) with t clamped into [0, t_max].");

    m.def(
        "total_loss",
        [](double sup, double contrast, double pd, double con, long t, long t_max) {
            return loss_dict(total_loss(sup, contrast, pd, con, HyperParams{}, t, t_max));
        },
        "sup"_a, "contrast"_a, "pd"_a, "con"_a, "t"_a, "t_max"_a, "Weighted objective with default weights.");

    m.def(
        "lr_schedule",
        [](long t, double initial, double factor, long interval) {
            return lr_schedule(t, LrSchedule{initial, factor, interval});
        },
        "t"_a, "initial"_a = 0.01, "factor"_a = 0.1, "interval"_a = 3000L, "Step-decay learning rate.");

    m.def(
        "dice_jaccard", [](const MaskArray& p, const MaskArray& t) { return dice_jaccard(to_mask(p), to_mask(t)); },
        "pred"_a, "truth"_a, "(Dice %, Jaccard %).");

    m.def(
        "surface_distances",
        [](const MaskArray& p, const MaskArray& t, std::array<double, 3> spacing) {
            const auto d = surface_distances(to_mask(p), to_mask(t), spacing_of(spacing));
            return py::make_tuple(d.asd, d.hd95);
        },
        "pred"_a, "truth"_a, "spacing"_a = std::array<double, 3>{1.0, 1.0, 1.0}, "(ASD, 95HD) of the two surfaces.");

    m.def("paired_t_test", &paired_t_test, "a"_a, "b"_a, "One-sided paired t-test p-value for mean(a - b) > 0.");

    m.def("_default_config", [] { return nlohmann::json(ExperimentConfig{}).dump(); });

    m.def("_generate", [](const std::string& cfg, const std::string& dir, bool force) {
        const auto c = nlohmann::json::parse(cfg).get<ExperimentConfig>();
        py::gil_scoped_release release;
        return cmd_generate(c, dir, force).dump();
    });

    m.def("_train", [](const std::string& cfg, const std::string& dataset, const std::string& run_dir) {
        const auto c = nlohmann::json::parse(cfg).get<ExperimentConfig>();
        TrainResult r;
        {
            py::gil_scoped_release release;
            r = cmd_train(c, dataset, run_dir);
        }
        py::list log;
        for (const auto& row : r.log) {
            py::dict d = loss_dict(row.loss);
            d["iteration"] = row.iteration;
            d["lr"] = row.lr;
            log.append(d);
        }
        return log;
    });

    m.def("_evaluate", [](const std::string& run_dir, const std::string& dataset) {
        py::gil_scoped_release release;
        return metrics_json(cmd_evaluate(run_dir, dataset)).dump();
    });
}
