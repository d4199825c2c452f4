#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simcvd/losses.hpp"
#include "simcvd/model.hpp"
#include "simcvd/synth_data.hpp"

namespace simcvd {

struct LrSchedule {
    double initial = 0.01;
    double factor = 0.1;
    long interval = 3000;

    friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

/// What the boundary-aware feature adds to the input volume.
enum class FeatureSource { kSdm, kProb };

struct TrainConfig {
    int labeled_per_batch = 2;
    int unlabeled_per_batch = 2;
    Shape3 crop{32, 32, 32};
    HyperParams hp;
    ArchDescriptor arch;
    LrSchedule schedule{0.01, 0.1, 250};
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double noise_scale = 0.1;     // std of the per-view additive noise on unlabeled inputs
    long t_max = 500;
    std::uint64_t seed = 1;
    FeatureSource feature = FeatureSource::kSdm;
    long checkpoint_every = 0;    // 0 disables periodic checkpoints
    std::filesystem::path run_dir;  // empty: no files written

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Independent replayable random streams of a run.
struct StreamSeeds {
    std::uint64_t init = 0;
    std::uint64_t data = 0;
    std::uint64_t dropout_student = 0;
    std::uint64_t dropout_teacher = 0;
    std::uint64_t noise = 0;

    static StreamSeeds from_root(std::uint64_t root);
    friend bool operator==(const StreamSeeds&, const StreamSeeds&) = default;
};

struct TrainState {
    long t = 0;
    long t_max = 0;
    double lr = 0.0;
    ParamSet student;
    ParamSet teacher;
    ParamSet momentum;
    StreamSeeds seeds;
};

/// Fresh state: student initialised from the init stream, teacher a copy of the student.
TrainState init_state(const TrainConfig& cfg);

double lr_schedule(long t, const LrSchedule& schedule);

/// Plain SGD with momentum and L2 weight decay: g += wd*theta; v = mu*v + g; theta -= lr*v.
void sgd_step(ParamSet& params, ParamSet& velocity, const ParamSet& grads, double lr, double momentum,
              double weight_decay);

struct LogRow {
    long iteration = 0;
    LossReport loss;
    double lr = 0.0;

    friend bool operator==(const LogRow&, const LogRow&) = default;
};

inline constexpr const char* kLogHeader = "iteration,sup,contrast,pd,con,rampup,total,lr";
std::string format_log_row(const LogRow& row);

/// One optimisation step. `labeled` are crops of the configured size; `unlabeled` are full volumes
/// from which two aligned views are drawn. Advances state.t and returns the step's losses.
LossReport train_step(TrainState& state, std::span<const AnnotatedCase> labeled, std::span<const Volume> unlabeled,
                      const TrainConfig& cfg);

/// Mini-batch for step t, a pure function of (split, cfg, t).
struct Batch {
    std::vector<AnnotatedCase> labeled;
    std::vector<Volume> unlabeled;
};
Batch sample_batch(const DatasetSplit& split, const TrainConfig& cfg, std::uint64_t data_seed, long t);

/// Raised when a step produces a non-finite loss.
class TrainingAborted : public NumericalError {
public:
    TrainingAborted(const std::string& what, long iteration, std::optional<LogRow> last_finite)
        : NumericalError(what), iteration_(iteration), last_finite_(std::move(last_finite)) {}
    [[nodiscard]] long iteration() const { return iteration_; }
    [[nodiscard]] const std::optional<LogRow>& last_finite() const { return last_finite_; }

private:
    long iteration_;
    std::optional<LogRow> last_finite_;
};

struct TrainResult {
    TrainState state;
    std::vector<LogRow> log;
};

/// Runs train_step until t_max. When cfg.run_dir is set, writes train_log.csv and checkpoints
/// (ckpt_<t>.bin plus last.bin). `resume` continues from a saved checkpoint.
TrainResult run_training(const TrainConfig& cfg, const DatasetSplit& split,
                         const std::optional<std::filesystem::path>& resume = std::nullopt,
                         const std::function<void(const LogRow&)>& on_step = {});

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg);
TrainState state_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg);

}  // namespace simcvd
