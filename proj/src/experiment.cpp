#include "simcvd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <boost/crc.hpp>
#include <spdlog/spdlog.h>

#include "simcvd/dataset_io.hpp"

namespace simcvd {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json shape_json(const Shape3& s) { return json::array({s.nx, s.ny, s.nz}); }

Shape3 shape_from(const json& j, const char* what) {
    const auto v = j.get<std::vector<int>>();
    if (v.size() != 3) throw InvalidArgument(std::string(what) + " must have three entries");
    return Shape3{v[0], v[1], v[2]};
}

json object_json(const ObjectSpec& o) {
    return json{{"min_count", o.min_count},           {"max_count", o.max_count},
                {"min_radius", o.min_radius},         {"max_radius", o.max_radius},
                {"object_level", o.object_level},     {"contrast_jitter", o.contrast_jitter},
                {"background_level", o.background_level}, {"bias_amplitude", o.bias_amplitude},
                {"noise_sigma", o.noise_sigma}};
}

ObjectSpec object_from(const json& j) {
    ObjectSpec o;
    o.min_count = j.value("min_count", o.min_count);
    o.max_count = j.value("max_count", o.max_count);
    o.min_radius = j.value("min_radius", o.min_radius);
    o.max_radius = j.value("max_radius", o.max_radius);
    o.object_level = j.value("object_level", o.object_level);
    o.contrast_jitter = j.value("contrast_jitter", o.contrast_jitter);
    o.background_level = j.value("background_level", o.background_level);
    o.bias_amplitude = j.value("bias_amplitude", o.bias_amplitude);
    o.noise_sigma = j.value("noise_sigma", o.noise_sigma);
    return o;
}

json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

std::string format_number(double v, const char* fmt = "%.4f") {
    if (!std::isfinite(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

std::vector<double> dice_scores(const MetricsReport& r) {
    std::vector<double> out;
    out.reserve(r.per_case.size());
    for (const auto& c : r.per_case) out.push_back(c.dice);
    return out;
}

double nan_mean(const std::vector<double>& v) {
    double s = 0.0;
    int n = 0;
    for (double x : v) {
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    }
    return n ? s / n : std::nan("");
}

}  // namespace

void DatasetConfig::validate() const {
    if (n_labeled < 1) throw InvalidArgument("n_labeled must be >= 1");
    if (n_unlabeled < 1) throw InvalidArgument("n_unlabeled must be >= 1");
    if (n_test < 0) throw InvalidArgument("n_test must be >= 0");
    if (shape.nx < 1 || shape.ny < 1 || shape.nz < 1) throw InvalidArgument("dataset shape must be positive");
    if (object.min_count < 1 || object.max_count < object.min_count) {
        throw InvalidArgument("object count range is empty");
    }
    if (!(object.min_radius > 0.0) || object.max_radius < object.min_radius) {
        throw InvalidArgument("object radius range is empty");
    }
}

Shape3 EvalConfig::effective_stride() const {
    if (stride) return *stride;
    return Shape3{std::max(1, window.nx / 2), std::max(1, window.ny / 2), std::max(1, window.nz / 2)};
}

void ExperimentConfig::validate() const {
    data.validate();
    effective_train_config(*this).validate();
    for (int a = 0; a < 3; ++a) {
        if (train.crop[a] > data.shape[a]) {
            throw InvalidArgument("crop " + train.crop.str() + " exceeds volume shape " + data.shape.str());
        }
        if (eval.window[a] > data.shape[a]) {
            throw InvalidArgument("evaluation window " + eval.window.str() + " exceeds volume shape " +
                                  data.shape.str());
        }
        if (eval.window[a] % train.arch.downsampling() != 0) {
            throw InvalidArgument("evaluation window " + eval.window.str() + " must be divisible by " +
                                  std::to_string(train.arch.downsampling()));
        }
        if (eval.effective_stride()[a] < 1) throw InvalidArgument("evaluation stride must be >= 1");
    }
}

void to_json(json& j, const DatasetConfig& c) {
    j = json{{"n_labeled", c.n_labeled}, {"n_unlabeled", c.n_unlabeled}, {"n_test", c.n_test},
             {"shape", shape_json(c.shape)}, {"object", object_json(c.object)}, {"seed", c.seed}};
}

void from_json(const json& j, DatasetConfig& c) {
    const DatasetConfig d;
    c.n_labeled = j.value("n_labeled", d.n_labeled);
    c.n_unlabeled = j.value("n_unlabeled", d.n_unlabeled);
    c.n_test = j.value("n_test", d.n_test);
    c.shape = j.contains("shape") ? shape_from(j.at("shape"), "shape") : d.shape;
    c.object = j.contains("object") ? object_from(j.at("object")) : d.object;
    c.seed = j.value("seed", d.seed);
}

void to_json(json& j, const AblationFlags& f) {
    j = json{{"disable_contrast", f.disable_contrast},
             {"disable_pd", f.disable_pd},
             {"disable_sdm_loss", f.disable_sdm_loss},
             {"disable_consistency", f.disable_consistency},
             {"disable_sdm_feature", f.disable_sdm_feature},
             {"dropout_p", f.dropout_p ? json(*f.dropout_p) : json(nullptr)},
             {"pool_size", f.pool_size ? json(*f.pool_size) : json(nullptr)}};
}

void from_json(const json& j, AblationFlags& f) {
    f = AblationFlags{};
    f.disable_contrast = j.value("disable_contrast", false);
    f.disable_pd = j.value("disable_pd", false);
    f.disable_sdm_loss = j.value("disable_sdm_loss", false);
    f.disable_consistency = j.value("disable_consistency", false);
    f.disable_sdm_feature = j.value("disable_sdm_feature", false);
    if (j.contains("dropout_p") && !j.at("dropout_p").is_null()) f.dropout_p = j.at("dropout_p").get<double>();
    if (j.contains("pool_size") && !j.at("pool_size").is_null()) f.pool_size = j.at("pool_size").get<int>();
}

void to_json(json& j, const EvalConfig& c) {
    j = json{{"window", shape_json(c.window)}, {"stride", c.stride ? shape_json(*c.stride) : json(nullptr)}};
}

void from_json(const json& j, EvalConfig& c) {
    c = EvalConfig{};
    if (j.contains("window")) c.window = shape_from(j.at("window"), "window");
    if (j.contains("stride") && !j.at("stride").is_null()) c.stride = shape_from(j.at("stride"), "stride");
}

void to_json(json& j, const ExperimentConfig& c) {
    j = json{{"train", c.train},
             {"data", c.data},
             {"ablation", c.ablation},
             {"eval", c.eval},
             {"output_dir", c.output_dir.generic_string()}};
}

void from_json(const json& j, ExperimentConfig& c) {
    c = ExperimentConfig{};
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("data")) c.data = j.at("data").get<DatasetConfig>();
    if (j.contains("ablation")) c.ablation = j.at("ablation").get<AblationFlags>();
    if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    const json j = read_json(path);
    try {
        return j.get<ExperimentConfig>();
    } catch (const json::exception& e) {
        throw InvalidArgument("invalid config " + path.string() + ": " + e.what());
    }
}

void save_experiment_config(const fs::path& path, const ExperimentConfig& cfg) {
    write_text(path, json(cfg).dump(2) + "\n");
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = json(cfg).dump();
    boost::crc_32_type crc;
    crc.process_bytes(text.data(), text.size());
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", crc.checksum());
    return buf;
}

TrainConfig effective_train_config(const ExperimentConfig& cfg) {
    TrainConfig t = cfg.train;
    const AblationFlags& f = cfg.ablation;
    if (f.disable_contrast) t.hp.lambda = 0.0;
    if (f.disable_pd) t.hp.beta = 0.0;
    if (f.disable_sdm_loss) t.hp.alpha = 0.0;
    if (f.disable_consistency) t.hp.gamma = 0.0;
    if (f.disable_sdm_feature) t.feature = FeatureSource::kProb;
    if (f.dropout_p) t.hp.dropout_p = *f.dropout_p;
    if (f.pool_size) t.arch.pool_size = *f.pool_size;
    return t;
}

json cmd_generate(const ExperimentConfig& cfg, const fs::path& dir, bool force) {
    cfg.data.validate();
    const json generator{{"data", cfg.data}};
    const fs::path manifest_path = dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        const json existing = read_json(manifest_path);
        const bool same = existing.value("generator", json()) == generator;
        if (same && verify_split(dir)) {
            spdlog::info("dataset in {} already matches; checksums verified", dir.string());
            return existing;
        }
        if (!force) {
            throw StateError(same ? "dataset in " + dir.string() + " fails checksum verification (use --force)"
                                  : "dataset in " + dir.string() + " was generated with a different configuration "
                                                                   "(use --force)");
        }
        spdlog::warn("regenerating dataset in {}", dir.string());
        for (const char* sub : {"labeled", "unlabeled", "test"}) fs::remove_all(dir / sub);
        fs::remove(manifest_path);
    } else if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
        throw StateError("refusing to write a dataset into non-empty directory " + dir.string());
    }

    const DatasetConfig& d = cfg.data;
    const int total = d.n_labeled + d.n_unlabeled + d.n_test;
    const auto cases = generate_phantoms(total, d.shape, d.seed, d.object);
    const DatasetSplit split = make_split(cases, d.n_labeled, d.n_unlabeled, d.n_test, d.seed);
    return save_split(dir, split, generator);
}

TrainResult cmd_train(const ExperimentConfig& cfg, const fs::path& dataset_dir, const fs::path& run_dir,
                      const std::optional<fs::path>& resume) {
    cfg.validate();
    TrainConfig tc = effective_train_config(cfg);
    tc.run_dir = run_dir;
    const DatasetSplit split = load_split(dataset_dir);
    fs::create_directories(run_dir);

    ExperimentConfig recorded = cfg;
    recorded.train.run_dir.clear();
    const StreamSeeds seeds = StreamSeeds::from_root(tc.seed);
    const json manifest{{"format", "simcvd-run"},
                        {"code_version", SIMCVD_VERSION},
                        {"config_hash", config_hash(recorded)},
                        {"config", recorded},
                        {"effective_train", tc},
                        {"dataset", {{"dir", fs::absolute(dataset_dir).generic_string()},
                                     {"manifest_crc32", file_crc32(dataset_dir / "manifest.json")}}},
                        {"seeds", {{"root", tc.seed},
                                   {"init", seeds.init},
                                   {"data", seeds.data},
                                   {"dropout_student", seeds.dropout_student},
                                   {"dropout_teacher", seeds.dropout_teacher},
                                   {"noise", seeds.noise}}}};
    write_text(run_dir / "run_manifest.json", manifest.dump(2) + "\n");
    spdlog::info("training {} iterations into {} (config {})", tc.t_max, run_dir.string(), config_hash(recorded));
    return run_training(tc, split, resume);
}

MetricsReport cmd_evaluate(const fs::path& run_dir, const fs::path& dataset_dir,
                           const std::optional<fs::path>& checkpoint) {
    const json manifest = read_json(run_dir / "run_manifest.json");
    const ExperimentConfig cfg = manifest.at("config").get<ExperimentConfig>();
    const TrainConfig tc = effective_train_config(cfg);
    const fs::path ckpt_path = checkpoint.value_or(run_dir / "last.bin");
    if (!fs::exists(ckpt_path)) throw IoError("missing checkpoint " + ckpt_path.string());
    const Checkpoint ckpt = load_checkpoint(ckpt_path, tc.arch);
    const fs::path data_dir =
        dataset_dir.empty() ? fs::path(manifest.at("dataset").at("dir").get<std::string>()) : dataset_dir;
    const DatasetSplit split = load_split(data_dir);
    if (split.test.empty()) throw InvalidArgument("dataset " + data_dir.string() + " has no test cases");

    const MetricsReport report = evaluate(ckpt.student, split.test, cfg.eval.window, cfg.eval.effective_stride());
    write_text(run_dir / "metrics.csv", metrics_csv(report));
    write_text(run_dir / "metrics.json", metrics_json(report).dump(2) + "\n");
    return report;
}

AblationVariant ablation_variant(const std::string& key) {
    AblationVariant v{key, "", {}};
    AblationFlags& f = v.flags;
    if (key == "full") {
        v.label = "SimCVD (full)";
    } else if (key == "baseline") {
        v.label = "Baseline (mean teacher)";
        f.disable_contrast = f.disable_pd = f.disable_sdm_loss = true;
    } else if (key == "labeled_only") {
        v.label = "Labeled only";
        f.disable_contrast = f.disable_pd = f.disable_consistency = true;
    } else if (key == "wo_sdm") {
        v.label = "SimCVD w/o SDM";
        f.disable_sdm_loss = f.disable_sdm_feature = true;
    } else if (key == "wo_contrast_pd") {
        v.label = "SimCVD w/o L_contrast + L_pd";
        f.disable_contrast = f.disable_pd = true;
    } else if (key == "wo_contrast") {
        v.label = "SimCVD w/o L_contrast";
        f.disable_contrast = true;
    } else if (key == "wo_pd") {
        v.label = "SimCVD w/o L_pd";
        f.disable_pd = true;
    } else if (key == "wo_sdm_loss") {
        v.label = "SimCVD w/o L_sdm";
        f.disable_sdm_loss = true;
    } else if (key.size() > 1 && key[0] == 'p') {
        double p = 0.0;
        try {
            std::size_t used = 0;
            p = std::stod(key.substr(1), &used);
            if (used != key.size() - 1) throw std::invalid_argument(key);
        } catch (const std::logic_error&) {
            throw InvalidArgument("unknown ablation variant '" + key + "'");
        }
        if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("dropout rate in '" + key + "' must lie in [0, 1)");
        v.label = "SimCVD dropout p=" + key.substr(1);
        f.dropout_p = p;
    } else {
        throw InvalidArgument("unknown ablation variant '" + key + "'");
    }
    return v;
}

std::vector<std::string> component_ablation_keys() {
    return {"baseline", "wo_sdm", "wo_contrast_pd", "wo_contrast", "wo_pd", "wo_sdm_loss", "full"};
}

std::vector<std::string> dropout_sweep_keys() {
    return {"p0.0", "p0.01", "p0.02", "p0.05", "p0.1", "p0.2", "p0.5"};
}

AblationTable cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::string>& variant_keys,
                         const std::vector<std::uint64_t>& seeds) {
    if (variant_keys.empty()) throw InvalidArgument("ablation needs at least one variant");
    if (seeds.empty()) throw InvalidArgument("ablation needs at least one seed");
    std::vector<AblationVariant> variants;
    for (const auto& k : variant_keys) variants.push_back(ablation_variant(k));
    cfg.validate();

    const fs::path root = cfg.output_dir;
    const fs::path dataset_dir = root / "dataset";
    cmd_generate(cfg, dataset_dir);

    AblationTable table;
    table.seeds = seeds;
    for (const auto& v : variants) {
        AblationRow row{v.key, v.label, false, "", {}, std::nullopt};
        try {
            std::vector<std::vector<double>> per_metric(4);
            for (std::uint64_t seed : seeds) {
                ExperimentConfig run = cfg;
                run.ablation = v.flags;
                run.train.seed = seed;
                const fs::path run_dir = root / "runs" / v.key / ("seed_" + std::to_string(seed));
                cmd_train(run, dataset_dir, run_dir);
                const MetricsReport r = cmd_evaluate(run_dir, dataset_dir);
                for (auto c : r.per_case) {
                    c.id = "seed" + std::to_string(seed) + "/" + c.id;
                    row.metrics.per_case.push_back(c);
                    per_metric[0].push_back(c.dice);
                    per_metric[1].push_back(c.jaccard);
                    per_metric[2].push_back(c.asd);
                    per_metric[3].push_back(c.hd95);
                }
            }
            row.metrics.dice = nan_mean(per_metric[0]);
            row.metrics.jaccard = nan_mean(per_metric[1]);
            row.metrics.asd = nan_mean(per_metric[2]);
            row.metrics.hd95 = nan_mean(per_metric[3]);
        } catch (const std::exception& e) {
            spdlog::error("variant {} failed: {}", v.key, e.what());
            row.failed = true;
            row.error = e.what();
        }
        table.rows.push_back(std::move(row));
    }

    const auto full = std::find_if(table.rows.begin(), table.rows.end(),
                                   [](const AblationRow& r) { return r.key == "full" && !r.failed; });
    if (full != table.rows.end()) {
        const auto full_dice = dice_scores(full->metrics);
        for (auto& row : table.rows) {
            if (row.key == "full" || row.failed) continue;
            try {
                row.p_value = paired_t_test(full_dice, dice_scores(row.metrics));
            } catch (const Error& e) {
                spdlog::warn("no p-value for {}: {}", row.key, e.what());
            }
        }
    }

    fs::create_directories(root);
    write_text(root / "ablation.csv", ablation_csv(table));
    write_text(root / "ablation.txt", ablation_text(table));
    return table;
}

std::string ablation_csv(const AblationTable& table) {
    std::ostringstream os;
    os << kAblationCsvHeader << '\n';
    for (const auto& r : table.rows) {
        os << r.key << ',' << '"' << r.label << '"' << ',' << (r.failed ? "failed" : "ok");
        if (r.failed) {
            os << ",,,,,";
        } else {
            os << ',' << format_number(r.metrics.dice, "%.17g") << ',' << format_number(r.metrics.jaccard, "%.17g")
               << ',' << format_number(r.metrics.asd, "%.17g") << ',' << format_number(r.metrics.hd95, "%.17g")
               << ',' << (r.p_value ? format_number(*r.p_value, "%.17g") : "");
        }
        os << '\n';
    }
    return os.str();
}

std::string ablation_text(const AblationTable& table) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-32s %9s %11s %11s %11s %9s\n", "Method", "Dice[%]", "Jaccard[%]",
                  "ASD[voxel]", "95HD[voxel]", "p");
    os << line << std::string(88, '-') << '\n';
    const AblationRow* full = nullptr;
    for (const auto& r : table.rows) {
        if (r.key == "full" && !r.failed) full = &r;
    }
    for (const auto& r : table.rows) {
        if (r.failed) {
            std::snprintf(line, sizeof line, "%-32s %s\n", r.label.c_str(), "FAILED");
            os << line;
            continue;
        }
        std::snprintf(line, sizeof line, "%-32s %9s %11s %11s %11s %9s\n", r.label.c_str(),
                      format_number(r.metrics.dice, "%.2f").c_str(), format_number(r.metrics.jaccard, "%.2f").c_str(),
                      format_number(r.metrics.asd, "%.2f").c_str(), format_number(r.metrics.hd95, "%.2f").c_str(),
                      r.p_value ? format_number(*r.p_value, "%.3g").c_str() : "-");
        os << line;
    }
    if (full) {
        int below = 0;
        int compared = 0;
        for (const auto& r : table.rows) {
            if (&r == full || r.failed) continue;
            ++compared;
            if (r.metrics.dice <= full->metrics.dice) ++below;
        }
        if (compared > 0) {
            os << '\n' << "full model Dice >= variant Dice in " << below << " of " << compared << " rows\n";
        }
    }
    os << "seeds:";
    for (auto s : table.seeds) os << ' ' << s;
    os << '\n';
    return os.str();
}

}  // namespace simcvd
