#pragma once

#include <filesystem>
#include <string>

#include "simcvd/experiment.hpp"

namespace fixtures {

using namespace simcvd;

/// Small but complete network: downsampling 8, narrow projection head.
inline ArchDescriptor small_arch() {
    ArchDescriptor a;
    a.base_width = 4;
    a.pool_size = 8;
    a.mlp_hidden = {32, 16};
    a.d_h = 8;
    return a;
}

inline TrainConfig small_train_config() {
    TrainConfig c;
    c.crop = Shape3{16, 16, 16};
    c.arch = small_arch();
    c.hp.d_h = 8;
    c.hp.batch_slices = 8;
    c.t_max = 8;
    c.schedule.interval = 4;
    return c;
}

inline ObjectSpec small_objects() {
    ObjectSpec o;
    o.min_radius = 3.0;
    o.max_radius = 6.0;
    return o;
}

inline DatasetSplit small_split(int n_labeled = 2, int n_unlabeled = 3, int n_test = 2, std::uint64_t seed = 5) {
    const auto cases = generate_phantoms(n_labeled + n_unlabeled + n_test, Shape3{16, 16, 16}, seed, small_objects());
    return make_split(cases, n_labeled, n_unlabeled, n_test, seed);
}

inline ExperimentConfig small_experiment(const std::filesystem::path& out) {
    ExperimentConfig e;
    e.train = small_train_config();
    e.data.n_labeled = 2;
    e.data.n_unlabeled = 3;
    e.data.n_test = 2;
    e.data.shape = Shape3{16, 16, 16};
    e.data.object = small_objects();
    e.eval.window = Shape3{16, 16, 16};
    e.output_dir = out;
    return e;
}

inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "simcvd_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures
