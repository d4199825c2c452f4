#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simcvd/evalsuite.hpp"
#include "simcvd/trainer.hpp"

namespace simcvd {

struct DatasetConfig {
    int n_labeled = 8;
    int n_unlabeled = 72;
    int n_test = 20;
    Shape3 shape{40, 40, 40};
    ObjectSpec object;
    std::uint64_t seed = 7;

    void validate() const;
    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

/// Switches that each zero one loss weight or replace one component.
struct AblationFlags {
    bool disable_contrast = false;     // lambda = 0
    bool disable_pd = false;           // beta = 0
    bool disable_sdm_loss = false;     // alpha = 0
    bool disable_consistency = false;  // gamma = 0
    bool disable_sdm_feature = false;  // boundary-aware feature built from the probability map
    std::optional<double> dropout_p;
    std::optional<int> pool_size;

    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct EvalConfig {
    Shape3 window{32, 32, 32};
    std::optional<Shape3> stride;  // half the window when unset

    [[nodiscard]] Shape3 effective_stride() const;
    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct ExperimentConfig {
    TrainConfig train;
    DatasetConfig data;
    AblationFlags ablation;
    EvalConfig eval;
    std::filesystem::path output_dir{"simcvd_out"};

    void validate() const;
    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);
void to_json(nlohmann::json& j, const AblationFlags& f);
void from_json(const nlohmann::json& j, AblationFlags& f);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// CRC-32 of the canonical JSON serialisation, as 8 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// TrainConfig with the ablation flags folded in.
TrainConfig effective_train_config(const ExperimentConfig& cfg);

/// Generates (or verifies) the phantom dataset in `dir`. A directory holding a manifest for a
/// different configuration is refused unless `force` is set.
nlohmann::json cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& dir, bool force = false);

/// Trains on the dataset in `dataset_dir`, writing log, checkpoints and run_manifest.json to `run_dir`.
TrainResult cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& dataset_dir,
                      const std::filesystem::path& run_dir,
                      const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Student-only evaluation of `run_dir`'s last.bin (or `checkpoint`) on the test split. An empty
/// `dataset_dir` selects the dataset recorded in run_manifest.json.
/// Writes metrics.csv and metrics.json into `run_dir`.
MetricsReport cmd_evaluate(const std::filesystem::path& run_dir, const std::filesystem::path& dataset_dir,
                           const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

struct AblationVariant {
    std::string key;
    std::string label;
    AblationFlags flags;
};

/// Named variants: full, baseline, labeled_only, wo_sdm, wo_contrast_pd, wo_contrast, wo_pd, wo_sdm_loss,
/// and p<value> for the projection-head dropout sweep (e.g. p0.05).
AblationVariant ablation_variant(const std::string& key);
std::vector<std::string> component_ablation_keys();
std::vector<std::string> dropout_sweep_keys();

struct AblationRow {
    std::string key;
    std::string label;
    bool failed = false;
    std::string error;
    MetricsReport metrics;            // per_case pooled over seeds
    std::optional<double> p_value;    // one-sided, full > variant on per-case Dice
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::vector<std::uint64_t> seeds;
};

/// Trains and evaluates every variant for every seed on one shared dataset under `cfg.output_dir`.
AblationTable cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::string>& variant_keys,
                         const std::vector<std::uint64_t>& seeds);

inline constexpr const char* kAblationCsvHeader = "variant,label,status,Dice[%],Jaccard[%],ASD[voxel],95HD[voxel],p_value";
std::string ablation_csv(const AblationTable& table);
std::string ablation_text(const AblationTable& table);

}  // namespace simcvd
