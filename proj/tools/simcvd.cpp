// simcvd command-line harness: generate, train, evaluate, ablate.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "simcvd/experiment.hpp"

namespace fs = std::filesystem;
using namespace simcvd;

namespace {

struct Overrides {
    std::string config_path;
    std::string output_dir;
    long t_max = -1;
    std::int64_t seed = -1;
    int n_labeled = -1;
    int n_unlabeled = -1;
    int n_test = -1;
    std::int64_t data_seed = -1;
    bool disable_contrast = false;
    bool disable_pd = false;
    bool disable_sdm_loss = false;
    bool disable_consistency = false;
    bool disable_sdm_feature = false;
    double dropout_p = -1.0;
    int pool_size = -1;
};

void add_config_options(CLI::App* app, Overrides& o) {
    app->add_option("-c,--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("-o,--output-dir", o.output_dir, "Output directory");
}

void add_dataset_options(CLI::App* app, Overrides& o) {
    app->add_option("--n_labeled", o.n_labeled, "Labeled training cases");
    app->add_option("--n_unlabeled", o.n_unlabeled, "Unlabeled training cases");
    app->add_option("--n_test", o.n_test, "Test cases");
    app->add_option("--data_seed", o.data_seed, "Dataset seed");
}

void add_train_options(CLI::App* app, Overrides& o) {
    app->add_option("--t_max", o.t_max, "Training iterations");
    app->add_option("--seed", o.seed, "Training seed");
    app->add_flag("--disable_contrast", o.disable_contrast, "Zero the contrastive loss weight");
    app->add_flag("--disable_pd", o.disable_pd, "Zero the pair-wise distillation weight");
    app->add_flag("--disable_sdm_loss", o.disable_sdm_loss, "Zero the SDM regression weight");
    app->add_flag("--disable_consistency", o.disable_consistency, "Zero the consistency weight");
    app->add_flag("--disable_sdm_feature", o.disable_sdm_feature,
                  "Build the boundary-aware feature from the probability map");
    app->add_option("--dropout_p", o.dropout_p, "Projection-head dropout rate")->check(CLI::Range(0.0, 0.999999));
    app->add_option("--pool_size", o.pool_size, "Projection-head pooling size")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Overrides& o) {
    ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_experiment_config(o.config_path);
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (o.t_max >= 0) cfg.train.t_max = o.t_max;
    if (o.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(o.seed);
    if (o.n_labeled >= 0) cfg.data.n_labeled = o.n_labeled;
    if (o.n_unlabeled >= 0) cfg.data.n_unlabeled = o.n_unlabeled;
    if (o.n_test >= 0) cfg.data.n_test = o.n_test;
    if (o.data_seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(o.data_seed);
    AblationFlags& f = cfg.ablation;
    f.disable_contrast = f.disable_contrast || o.disable_contrast;
    f.disable_pd = f.disable_pd || o.disable_pd;
    f.disable_sdm_loss = f.disable_sdm_loss || o.disable_sdm_loss;
    f.disable_consistency = f.disable_consistency || o.disable_consistency;
    f.disable_sdm_feature = f.disable_sdm_feature || o.disable_sdm_feature;
    if (o.dropout_p >= 0.0) f.dropout_p = o.dropout_p;
    if (o.pool_size > 0) f.pool_size = o.pool_size;
    return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::string> expand_variants(const std::string& spec) {
    std::vector<std::string> keys;
    for (const auto& item : split_list(spec)) {
        if (item == "table") {
            for (auto& k : component_ablation_keys()) keys.push_back(k);
        } else if (item == "dropout") {
            for (auto& k : dropout_sweep_keys()) keys.push_back(k);
        } else {
            keys.push_back(item);
        }
    }
    return keys;
}

void configure_logging(int verbosity) {
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("SIMCVD_LOG_LEVEL")) {
        spdlog::set_level(spdlog::level::from_str(env));
    }
    if (verbosity > 0) spdlog::set_level(verbosity > 1 ? spdlog::level::trace : spdlog::level::debug);
    spdlog::set_pattern("[%l] %v");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised volumetric segmentation with boundary-aware contrastive distillation"};
    app.set_version_flag("--version", SIMCVD_VERSION);
    app.require_subcommand(1);
    int verbosity = 0;
    app.add_flag("-v,--verbose", verbosity, "Increase log verbosity");

    Overrides o;
    std::string dataset_dir;
    std::string run_dir;
    std::string resume;
    std::string checkpoint;
    std::string variants = "table";
    std::string seeds = "1,2,3";
    bool force = false;

    auto* gen = app.add_subcommand("generate", "Generate the synthetic phantom dataset");
    add_config_options(gen, o);
    add_dataset_options(gen, o);
    gen->add_option("-d,--dataset", dataset_dir, "Dataset directory (default <output-dir>/dataset)");
    gen->add_flag("--force", force, "Overwrite a dataset generated with a different configuration");

    auto* train = app.add_subcommand("train", "Train student and teacher networks");
    add_config_options(train, o);
    add_train_options(train, o);
    train->add_option("-d,--dataset", dataset_dir, "Dataset directory (default <output-dir>/dataset)");
    train->add_option("-r,--run-dir", run_dir, "Run directory (default <output-dir>/run)");
    train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

    auto* eval = app.add_subcommand("evaluate", "Evaluate a trained student on the test split");
    eval->add_option("-r,--run-dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("-d,--dataset", dataset_dir, "Dataset directory (default: the one recorded by train)")
        ->check(CLI::ExistingDirectory);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <run-dir>/last.bin)");

    auto* ablate = app.add_subcommand("ablate", "Train and evaluate a matrix of ablation variants");
    add_config_options(ablate, o);
    add_dataset_options(ablate, o);
    add_train_options(ablate, o);
    ablate->add_option("--variants", variants,
                       "Comma-separated variant keys; 'table' and 'dropout' expand to the standard sets");
    ablate->add_option("--seeds", seeds, "Comma-separated training seeds");

    auto* show = app.add_subcommand("config", "Print the resolved configuration as JSON");
    add_config_options(show, o);
    add_dataset_options(show, o);
    add_train_options(show, o);

    CLI11_PARSE(app, argc, argv);
    configure_logging(verbosity);

    try {
        if (*gen) {
            const ExperimentConfig cfg = resolve(o);
            const fs::path dir = dataset_dir.empty() ? cfg.output_dir / "dataset" : fs::path(dataset_dir);
            const auto manifest = cmd_generate(cfg, dir, force);
            std::cout << dir.string() << ": " << manifest.at("cases").size() << " cases\n";
        } else if (*train) {
            const ExperimentConfig cfg = resolve(o);
            const fs::path data = dataset_dir.empty() ? cfg.output_dir / "dataset" : fs::path(dataset_dir);
            const fs::path run = run_dir.empty() ? cfg.output_dir / "run" : fs::path(run_dir);
            std::optional<fs::path> from;
            if (!resume.empty()) from = resume;
            const auto result = cmd_train(cfg, data, run, from);
            if (!result.log.empty()) {
                const auto& last = result.log.back();
                std::cout << "iteration " << last.iteration << " total " << last.loss.total << " sup "
                          << last.loss.sup << "\n";
            }
            std::cout << run.string() << "\n";
        } else if (*eval) {
            std::optional<fs::path> ck;
            if (!checkpoint.empty()) ck = checkpoint;
            const MetricsReport r = cmd_evaluate(run_dir, dataset_dir, ck);
            std::cout << metrics_json(r).dump(2) << "\n";
        } else if (*ablate) {
            const ExperimentConfig cfg = resolve(o);
            std::vector<std::uint64_t> seed_list;
            for (const auto& s : split_list(seeds)) {
                try {
                    seed_list.push_back(std::stoull(s));
                } catch (const std::logic_error&) {
                    throw InvalidArgument("invalid seed '" + s + "'");
                }
            }
            const AblationTable table = cmd_ablate(cfg, expand_variants(variants), seed_list);
            std::cout << ablation_text(table);
            for (const auto& r : table.rows) {
                if (r.failed) return static_cast<int>(ErrorCategory::kState);
            }
        } else if (*show) {
            std::cout << nlohmann::json(resolve(o)).dump(2) << "\n";
        }
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
