#include "simcvd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <spdlog/spdlog.h>

#include "simcvd/rng.hpp"
#include "simcvd/sdm.hpp"

namespace simcvd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json hp_to_json(const HyperParams& h) {
    return json{{"alpha", h.alpha},         {"lambda", h.lambda},       {"beta", h.beta},
                {"gamma", h.gamma},         {"tau", h.tau},             {"ema_decay", h.ema_decay},
                {"dropout_p", h.dropout_p}, {"batch_slices", h.batch_slices}, {"d_h", h.d_h}};
}

HyperParams hp_from_json(const json& j) {
    HyperParams h;
    h.alpha = j.value("alpha", h.alpha);
    h.lambda = j.value("lambda", h.lambda);
    h.beta = j.value("beta", h.beta);
    h.gamma = j.value("gamma", h.gamma);
    h.tau = j.value("tau", h.tau);
    h.ema_decay = j.value("ema_decay", h.ema_decay);
    h.dropout_p = j.value("dropout_p", h.dropout_p);
    h.batch_slices = j.value("batch_slices", h.batch_slices);
    h.d_h = j.value("d_h", h.d_h);
    return h;
}

}  // namespace

void TrainConfig::validate() const {
    hp.validate();
    if (labeled_per_batch < 1 || unlabeled_per_batch < 1) {
        throw InvalidArgument("each batch needs at least one labeled and one unlabeled case");
    }
    if (t_max < 0) throw InvalidArgument("t_max must be >= 0");
    if (!(schedule.initial > 0.0) || !(schedule.factor > 0.0) || schedule.interval < 1) {
        throw InvalidArgument("learning-rate schedule needs initial > 0, factor > 0, interval >= 1");
    }
    if (momentum < 0.0 || weight_decay < 0.0 || noise_scale < 0.0) {
        throw InvalidArgument("momentum, weight_decay and noise_scale must be non-negative");
    }
    if (hp.d_h != arch.d_h) throw InvalidArgument("hp.d_h and arch.d_h disagree");
    for (int a = 0; a < 3; ++a) {
        if (crop[a] < arch.downsampling() || crop[a] % arch.downsampling() != 0) {
            throw InvalidArgument("crop " + crop.str() + " must be divisible by " + std::to_string(arch.downsampling()));
        }
    }
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"labeled_per_batch", c.labeled_per_batch},
             {"unlabeled_per_batch", c.unlabeled_per_batch},
             {"crop", {c.crop.nx, c.crop.ny, c.crop.nz}},
             {"hp", hp_to_json(c.hp)},
             {"arch", c.arch},
             {"schedule", {{"initial", c.schedule.initial}, {"factor", c.schedule.factor}, {"interval", c.schedule.interval}}},
             {"momentum", c.momentum},
             {"weight_decay", c.weight_decay},
             {"noise_scale", c.noise_scale},
             {"t_max", c.t_max},
             {"seed", c.seed},
             {"feature", c.feature == FeatureSource::kSdm ? "sdm" : "prob"},
             {"checkpoint_every", c.checkpoint_every},
             {"run_dir", c.run_dir.generic_string()}};
}

void from_json(const json& j, TrainConfig& c) {
    const TrainConfig d;
    c.labeled_per_batch = j.value("labeled_per_batch", d.labeled_per_batch);
    c.unlabeled_per_batch = j.value("unlabeled_per_batch", d.unlabeled_per_batch);
    if (j.contains("crop")) {
        const auto v = j.at("crop").get<std::vector<int>>();
        if (v.size() != 3) throw InvalidArgument("crop must have three entries");
        c.crop = Shape3{v[0], v[1], v[2]};
    } else {
        c.crop = d.crop;
    }
    c.hp = j.contains("hp") ? hp_from_json(j.at("hp")) : d.hp;
    c.arch = j.contains("arch") ? j.at("arch").get<ArchDescriptor>() : d.arch;
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        c.schedule = LrSchedule{s.value("initial", d.schedule.initial), s.value("factor", d.schedule.factor),
                                s.value("interval", d.schedule.interval)};
    } else {
        c.schedule = d.schedule;
    }
    c.momentum = j.value("momentum", d.momentum);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.noise_scale = j.value("noise_scale", d.noise_scale);
    c.t_max = j.value("t_max", d.t_max);
    c.seed = j.value("seed", d.seed);
    const std::string feature = j.value("feature", std::string("sdm"));
    if (feature != "sdm" && feature != "prob") throw InvalidArgument("feature must be 'sdm' or 'prob'");
    c.feature = feature == "sdm" ? FeatureSource::kSdm : FeatureSource::kProb;
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.run_dir = j.value("run_dir", std::string());
}

StreamSeeds StreamSeeds::from_root(std::uint64_t root) {
    return StreamSeeds{derive_seed(root, {1}), derive_seed(root, {2}), derive_seed(root, {3}), derive_seed(root, {4}),
                       derive_seed(root, {5})};
}

TrainState init_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.seeds = StreamSeeds::from_root(cfg.seed);
    s.t = 0;
    s.t_max = cfg.t_max;
    s.lr = lr_schedule(0, cfg.schedule);
    s.student = init_params(cfg.arch, s.seeds.init);
    s.teacher = s.student;
    s.momentum = s.student.zeros_like();
    return s;
}

double lr_schedule(long t, const LrSchedule& schedule) {
    if (t < 0) throw InvalidArgument("lr_schedule: t must be >= 0");
    return schedule.initial * std::pow(schedule.factor, static_cast<double>(t / schedule.interval));
}

void sgd_step(ParamSet& params, ParamSet& velocity, const ParamSet& grads, double lr, double momentum,
              double weight_decay) {
    require_compatible(params, grads, "sgd_step grads");
    require_compatible(params, velocity, "sgd_step velocity");
    for (std::size_t i = 0; i < params.tensors().size(); ++i) {
        auto& p = params.tensors()[i].values;
        auto& v = velocity.tensors()[i].values;
        const auto& g = grads.tensors()[i].values;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k] + weight_decay * p[k];
            v[k] = momentum * v[k] + gk;
            p[k] -= lr * v[k];
        }
    }
}

std::string format_log_row(const LogRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.iteration, r.loss.sup,
                  r.loss.contrast, r.loss.pd, r.loss.con, r.loss.rampup, r.loss.total, r.lr);
    return buf;
}

LossReport train_step(TrainState& state, std::span<const AnnotatedCase> labeled, std::span<const Volume> unlabeled,
                      const TrainConfig& cfg) {
    if (labeled.empty() || unlabeled.empty()) throw InvalidArgument("train_step: empty labeled or unlabeled batch");
    if (state.t_max <= 0) throw StateError("train_step: t_max must be positive");
    const long t = state.t;
    const auto ut = static_cast<std::uint64_t>(t);
    const HyperParams& hp = cfg.hp;

    // Student on labeled crops.
    std::vector<ForwardTape> lab_tapes(labeled.size());
    std::vector<ForwardResult> lab_res;
    std::vector<DualOutput> lab_out;
    std::vector<SegTarget> targets;
    for (std::size_t b = 0; b < labeled.size(); ++b) {
        lab_res.push_back(forward(state.student, labeled[b].volume, &lab_tapes[b]));
        lab_out.push_back(lab_res.back().out);
        targets.push_back(target_of(labeled[b]));
    }

    // Two aligned views per unlabeled volume; student and teacher each see their own view.
    const std::size_t m = unlabeled.size();
    std::vector<TwoViews> views;
    std::vector<ForwardTape> un_tapes(m);
    std::vector<ForwardResult> res_s, res_t;
    std::vector<ProjectionTape> proj_tapes(m);
    std::vector<SliceEmbeddingMatrix> h_s, h_t;
    std::vector<HiddenPattern> v_s, v_t;
    std::vector<DualOutput> out_s, out_t;
    for (std::size_t i = 0; i < m; ++i) {
        const auto ui = static_cast<std::uint64_t>(i);
        views.push_back(two_view(unlabeled[i], derive_seed(state.seeds.noise, {ut, ui}), cfg.noise_scale, cfg.crop));
        res_s.push_back(forward(state.student, views[i].student, &un_tapes[i]));
        res_t.push_back(forward(state.teacher, views[i].teacher));
        const RealGrid& fs = cfg.feature == FeatureSource::kSdm ? res_s[i].out.sdm : res_s[i].out.prob;
        const RealGrid& ft = cfg.feature == FeatureSource::kSdm ? res_t[i].out.sdm : res_t[i].out.prob;
        const DropoutMask zs{derive_seed(state.seeds.dropout_student, {ut, ui}), hp.dropout_p};
        const DropoutMask zt{derive_seed(state.seeds.dropout_teacher, {ut, ui}), hp.dropout_p};
        h_s.push_back(project(boundary_aware_feature(views[i].student.voxels, fs), zs, state.student, &proj_tapes[i]));
        h_t.push_back(project(boundary_aware_feature(views[i].teacher.voxels, ft), zt, state.teacher));
        v_s.push_back(res_s[i].hidden);
        v_t.push_back(res_t[i].hidden);
        out_s.push_back(res_s[i].out);
        out_t.push_back(res_t[i].out);
    }

    std::vector<DualOutput> g_sup;
    const double sup = supervised_loss(lab_out, targets, hp.alpha, &g_sup);
    int total_slices = 0;
    for (const auto& h : h_s) total_slices += static_cast<int>(h.rows());
    const int pool = std::min(hp.batch_slices, total_slices);
    std::vector<Matrix> g_contrast, g_pd;
    std::vector<RealGrid> g_con;
    const LossWeights w = loss_weights(hp, t, state.t_max);
    const double contrast = boundary_contrast_loss(h_t, h_s, hp.tau, pool, derive_seed(state.seeds.data, {ut, 7}),
                                                   nullptr, w.contrast != 0.0 ? &g_contrast : nullptr);
    const double pd = pairwise_distill_loss(v_s, v_t, w.pd != 0.0 ? &g_pd : nullptr);
    const double con = consistency_loss(out_s, out_t, w.con != 0.0 ? &g_con : nullptr);
    const LossReport report = total_loss(sup, contrast, pd, con, hp, t, state.t_max);

    ParamSet grads = state.student.zeros_like();
    for (std::size_t b = 0; b < labeled.size(); ++b) {
        backward(state.student, lab_tapes[b], lab_res[b], g_sup[b].prob, g_sup[b].sdm, Matrix(), grads);
    }
    for (std::size_t i = 0; i < m; ++i) {
        const Shape3 s = views[i].student.shape();
        RealGrid d_prob = w.con != 0.0 ? g_con[i] : RealGrid(s, 0.0);
        if (w.con != 0.0)
            for (double& v : d_prob) v *= w.con;
        RealGrid d_sdm(s, 0.0);
        if (w.contrast != 0.0) {
            const Matrix dh = w.contrast * g_contrast[i];
            const RealGrid dq = project_backward(state.student, proj_tapes[i], dh, grads);
            RealGrid& target = cfg.feature == FeatureSource::kSdm ? d_sdm : d_prob;
            for (std::size_t k = 0; k < dq.size(); ++k) target[k] += dq[k];
        }
        const Matrix d_hidden = w.pd != 0.0 ? Matrix(w.pd * g_pd[i]) : Matrix();
        backward(state.student, un_tapes[i], res_s[i], d_prob, d_sdm, d_hidden, grads);
    }
    if (!grads.all_finite()) throw NumericalError("train_step: non-finite gradient at iteration " + std::to_string(t));

    state.lr = lr_schedule(t, cfg.schedule);
    sgd_step(state.student, state.momentum, grads, state.lr, cfg.momentum, cfg.weight_decay);
    ema_update_inplace(state.teacher, state.student, hp.ema_decay);
    state.t = t + 1;
    return report;
}

Batch sample_batch(const DatasetSplit& split, const TrainConfig& cfg, std::uint64_t data_seed, long t) {
    if (split.labeled.empty() || split.unlabeled.empty()) {
        throw InvalidArgument("training needs at least one labeled and one unlabeled case");
    }
    const auto ut = static_cast<std::uint64_t>(t);
    Rng rng(derive_seed(data_seed, {ut, 0}));
    auto draw = [&](std::size_t n, int k) {
        // without replacement when possible, otherwise cycle through a permutation
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
        std::vector<std::size_t> out;
        for (int i = 0; i < k; ++i) out.push_back(perm[static_cast<std::size_t>(i) % n]);
        return out;
    };
    Batch b;
    const auto li = draw(split.labeled.size(), cfg.labeled_per_batch);
    for (std::size_t k = 0; k < li.size(); ++k) {
        const auto& c = split.labeled[li[k]];
        const CropRecord rec = random_crop(c.volume.shape(), cfg.crop, derive_seed(data_seed, {ut, 1, k}));
        AnnotatedCase crop;
        crop.id = c.id;
        crop.seed = c.seed;
        crop.volume = Volume{apply_crop(c.volume.voxels, rec), c.volume.spacing};
        crop.mask = apply_crop(c.mask, rec);
        crop.sdm = apply_crop(c.sdm, rec);
        b.labeled.push_back(std::move(crop));
    }
    for (std::size_t i : draw(split.unlabeled.size(), cfg.unlabeled_per_batch)) b.unlabeled.push_back(split.unlabeled[i].volume);
    return b;
}

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg) {
    Checkpoint ck{state.student, state.teacher, state.momentum, json::object()};
    TrainConfig recorded = cfg;
    recorded.run_dir.clear();
    ck.state = json{{"t", state.t},
                    {"t_max", state.t_max},
                    {"lr", state.lr},
                    {"seeds",
                     {{"init", state.seeds.init},
                      {"data", state.seeds.data},
                      {"dropout_student", state.seeds.dropout_student},
                      {"dropout_teacher", state.seeds.dropout_teacher},
                      {"noise", state.seeds.noise}}},
                    {"config", recorded}};
    return ck;
}

TrainState state_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg) {
    if (!(ckpt.student.arch() == cfg.arch)) throw StateError("checkpoint architecture does not match config");
    TrainState s;
    s.t = ckpt.state.at("t").get<long>();
    s.t_max = cfg.t_max;
    s.lr = ckpt.state.at("lr").get<double>();
    const auto& sd = ckpt.state.at("seeds");
    s.seeds = StreamSeeds{sd.at("init"), sd.at("data"), sd.at("dropout_student"), sd.at("dropout_teacher"),
                          sd.at("noise")};
    if (!(s.seeds == StreamSeeds::from_root(cfg.seed))) throw StateError("checkpoint seeds do not match config seed");
    if (s.t > s.t_max) throw StateError("checkpoint iteration exceeds t_max");
    s.student = ckpt.student;
    s.teacher = ckpt.teacher;
    s.momentum = ckpt.momentum;
    return s;
}

TrainResult run_training(const TrainConfig& cfg, const DatasetSplit& split, const std::optional<fs::path>& resume,
                         const std::function<void(const LogRow&)>& on_step) {
    cfg.validate();
    if (split.labeled.empty() || split.unlabeled.empty()) {
        throw InvalidArgument("run_training: split needs labeled and unlabeled cases");
    }
    TrainResult r;
    r.state = resume ? state_from_checkpoint(load_checkpoint(*resume, cfg.arch), cfg) : init_state(cfg);

    std::ofstream log_file;
    if (!cfg.run_dir.empty()) {
        fs::create_directories(cfg.run_dir);
        const fs::path log_path = cfg.run_dir / "train_log.csv";
        const bool append = resume.has_value() && fs::exists(log_path);
        log_file.open(log_path, append ? std::ios::app : std::ios::trunc);
        if (!log_file) throw IoError("cannot open " + log_path.string());
        if (!append) log_file << kLogHeader << '\n';
    }
    auto save = [&](const std::string& name) {
        if (cfg.run_dir.empty()) return;
        save_checkpoint(cfg.run_dir / name, make_checkpoint(r.state, cfg));
    };

    std::optional<LogRow> last;
    while (r.state.t < cfg.t_max) {
        const long t = r.state.t;
        const Batch batch = sample_batch(split, cfg, r.state.seeds.data, t);
        LossReport loss;
        try {
            loss = train_step(r.state, batch.labeled, batch.unlabeled, cfg);
        } catch (const NumericalError& e) {
            save("aborted.bin");
            throw TrainingAborted(std::string(e.what()) + " (iteration " + std::to_string(t) + ")", t, last);
        }
        LogRow row{t, loss, r.state.lr};
        r.log.push_back(row);
        last = row;
        if (log_file.is_open()) log_file << format_log_row(row) << '\n';
        if (on_step) on_step(row);
        spdlog::debug("iter {} total {:.6f} sup {:.6f}", t, loss.total, loss.sup);
        if (cfg.checkpoint_every > 0 && r.state.t % cfg.checkpoint_every == 0) {
            save("ckpt_" + std::to_string(r.state.t) + ".bin");
        }
    }
    save("last.bin");
    return r;
}

}  // namespace simcvd
