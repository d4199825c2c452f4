#include <doctest.h>

#include <fstream>
#include <iterator>

#include "fixtures.hpp"
#include "simcvd/dataset_io.hpp"
#include "simcvd/error.hpp"
#include "simcvd/experiment.hpp"

using namespace simcvd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("ExperimentConfig: JSON round trip, hash and validation") {
    ExperimentConfig c = fixtures::small_experiment("out_x");
    c.ablation.disable_pd = true;
    c.ablation.dropout_p = 0.05;
    c.eval.stride = Shape3{4, 4, 4};
    const nlohmann::json j = c;
    CHECK(nlohmann::json::parse(j.dump()).get<ExperimentConfig>() == c);

    const fs::path dir = fixtures::scratch("cfg");
    save_experiment_config(dir / "c.json", c);
    CHECK(load_experiment_config(dir / "c.json") == c);
    CHECK_THROWS_AS(load_experiment_config(dir / "absent.json"), IoError);

    ExperimentConfig d = c;
    CHECK(config_hash(c) == config_hash(d));
    CHECK(config_hash(c).size() == 8);
    d.train.seed += 1;
    CHECK(config_hash(c) != config_hash(d));

    ExperimentConfig bad = c;
    bad.data.n_labeled = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.eval.window = Shape3{12, 16, 16};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.train.crop = Shape3{24, 24, 24};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    CHECK(EvalConfig{}.effective_stride() == Shape3{16, 16, 16});
}

TEST_CASE("effective_train_config: each flag touches only its own setting") {
    const ExperimentConfig base = fixtures::small_experiment("unused");
    const TrainConfig ref = effective_train_config(base);
    CHECK(ref == base.train);
    auto with = [&](auto mutate) {
        ExperimentConfig e = base;
        mutate(e.ablation);
        return effective_train_config(e);
    };
    TrainConfig expect = ref;
    expect.hp.lambda = 0;
    CHECK(with([](AblationFlags& f) { f.disable_contrast = true; }) == expect);
    expect = ref;
    expect.hp.beta = 0;
    CHECK(with([](AblationFlags& f) { f.disable_pd = true; }) == expect);
    expect = ref;
    expect.hp.alpha = 0;
    CHECK(with([](AblationFlags& f) { f.disable_sdm_loss = true; }) == expect);
    expect = ref;
    expect.hp.gamma = 0;
    CHECK(with([](AblationFlags& f) { f.disable_consistency = true; }) == expect);
    expect = ref;
    expect.feature = FeatureSource::kProb;
    CHECK(with([](AblationFlags& f) { f.disable_sdm_feature = true; }) == expect);
    expect = ref;
    expect.hp.dropout_p = 0.2;
    CHECK(with([](AblationFlags& f) { f.dropout_p = 0.2; }) == expect);
}

TEST_CASE("ablation flags: first-iteration terms are unchanged except the zeroed weight") {
    const DatasetSplit split = fixtures::small_split();
    const ExperimentConfig base = fixtures::small_experiment("unused");
    auto first_row = [&](const ExperimentConfig& e) {
        TrainConfig tc = effective_train_config(e);
        tc.t_max = 1;
        return run_training(tc, split).log.at(0).loss;
    };
    const LossReport full = first_row(base);
    for (int which = 0; which < 3; ++which) {
        ExperimentConfig e = base;
        if (which == 0) e.ablation.disable_contrast = true;
        if (which == 1) e.ablation.disable_pd = true;
        if (which == 2) e.ablation.disable_consistency = true;
        const LossReport r = first_row(e);
        CHECK(r.sup == full.sup);
        CHECK(r.contrast == full.contrast);
        CHECK(r.pd == full.pd);
        CHECK(r.con == full.con);
        CHECK(r.rampup == full.rampup);
        const HyperParams& hp = effective_train_config(e).hp;
        CHECK(r.total == doctest::Approx(r.sup + r.rampup * (hp.lambda * r.contrast + hp.beta * r.pd +
                                                             hp.gamma * r.con)).epsilon(1e-12));
    }
}

TEST_CASE("cmd_generate: idempotent, refuses conflicts, validates before writing") {
    const fs::path out = fixtures::scratch("gen");
    ExperimentConfig c = fixtures::small_experiment(out);
    const auto m1 = cmd_generate(c, out / "data");
    const std::string bytes = slurp(out / "data" / "manifest.json");
    const auto m2 = cmd_generate(c, out / "data");
    CHECK(m1 == m2);
    CHECK(slurp(out / "data" / "manifest.json") == bytes);
    CHECK(m1.at("counts").at("labeled").get<int>() == 2);

    ExperimentConfig other = c;
    other.data.seed = 99;
    CHECK_THROWS_AS(cmd_generate(other, out / "data"), StateError);
    const auto m3 = cmd_generate(other, out / "data", true);
    CHECK(m3 != m1);
    CHECK(verify_split(out / "data"));

    fs::create_directories(out / "busy");
    std::ofstream(out / "busy" / "keep.txt") << "x";
    CHECK_THROWS_AS(cmd_generate(c, out / "busy"), StateError);

    ExperimentConfig bad = c;
    bad.data.n_labeled = 0;
    CHECK_THROWS_AS(cmd_generate(bad, out / "never"), InvalidArgument);
    CHECK_FALSE(fs::exists(out / "never"));
}

TEST_CASE("cmd_train / cmd_evaluate: manifest, reproducible logs, metric files") {
    const fs::path out = fixtures::scratch("train_eval");
    const ExperimentConfig c = fixtures::small_experiment(out);
    cmd_generate(c, out / "data");
    const TrainResult a = cmd_train(c, out / "data", out / "run_a");
    const TrainResult b = cmd_train(c, out / "data", out / "run_b");
    CHECK(a.log.size() == static_cast<std::size_t>(c.train.t_max));
    CHECK(slurp(out / "run_a" / "train_log.csv") == slurp(out / "run_b" / "train_log.csv"));

    const auto man = read_json(out / "run_a" / "run_manifest.json");
    CHECK(man.at("format") == "simcvd-run");
    CHECK(man.at("config_hash").get<std::string>().size() == 8);
    CHECK(man.at("config").get<ExperimentConfig>().data == c.data);

    const MetricsReport r = cmd_evaluate(out / "run_a", out / "data");
    CHECK(r.per_case.size() == 2);
    const std::string csv = slurp(out / "run_a" / "metrics.csv");
    CHECK(csv.rfind(std::string(kMetricsCsvHeader) + "\n", 0) == 0);
    CHECK(count_lines(csv) == 3);
    const auto mj = read_json(out / "run_a" / "metrics.json");
    for (const char* k : {"Dice[%]", "Jaccard[%]", "ASD[voxel]", "95HD[voxel]"}) CHECK(mj.contains(k));

    const MetricsReport again = cmd_evaluate(out / "run_b", out / "data");
    CHECK(again.dice == r.dice);
    CHECK(cmd_evaluate(out / "run_a", out / "data", out / "run_a" / "last.bin").dice == r.dice);
    CHECK_THROWS_AS(cmd_evaluate(out / "run_a", out / "data", out / "run_a" / "nope.bin"), IoError);
    CHECK_THROWS_AS(cmd_evaluate(out / "no_run", out / "data"), IoError);
}

TEST_CASE("ablation variants") {
    CHECK(ablation_variant("full").flags == AblationFlags{});
    CHECK(ablation_variant("wo_pd").flags.disable_pd);
    CHECK(ablation_variant("p0.05").flags.dropout_p == 0.05);
    CHECK_THROWS_AS(ablation_variant("bogus"), InvalidArgument);
    CHECK(component_ablation_keys().size() == 7);
    CHECK(component_ablation_keys().back() == "full");
    CHECK(dropout_sweep_keys().size() == 7);
    for (const auto& k : component_ablation_keys()) CHECK_FALSE(ablation_variant(k).label.empty());
}

TEST_CASE("cmd_ablate: rows, p-values, failure marking and determinism") {
    const fs::path out = fixtures::scratch("ablate");
    ExperimentConfig c = fixtures::small_experiment(out);
    c.train.t_max = 4;

    const AblationTable one = cmd_ablate(c, {"full"}, {1});
    REQUIRE(one.rows.size() == 1);
    CHECK_FALSE(one.rows[0].failed);
    CHECK_FALSE(one.rows[0].p_value.has_value());

    // A plain file where a run directory belongs makes that variant fail.
    std::ofstream(out / "runs" / "wo_contrast") << "blocker";
    const std::vector<std::string> keys{"wo_pd", "wo_contrast", "wo_sdm", "full"};
    const AblationTable t = cmd_ablate(c, keys, {1, 2});
    REQUIRE(t.rows.size() == 4);
    CHECK(t.rows[1].failed);
    CHECK_FALSE(t.rows[1].error.empty());
    int p_values = 0;
    for (const auto& r : t.rows) {
        if (r.failed) continue;
        CHECK(r.metrics.per_case.size() == 4);
        CHECK(std::isfinite(r.metrics.dice));
        p_values += r.p_value.has_value() ? 1 : 0;
    }
    CHECK(p_values <= 2);
    const std::string csv = slurp(out / "ablation.csv");
    CHECK(csv.rfind(std::string(kAblationCsvHeader) + "\n", 0) == 0);
    CHECK(count_lines(csv) == 5);
    CHECK(csv.find("wo_contrast,") != std::string::npos);
    CHECK(csv.find(",failed,") != std::string::npos);
    CHECK(fs::exists(out / "ablation.txt"));

    fs::remove(out / "runs" / "wo_contrast");
    const AblationTable t2 = cmd_ablate(c, keys, {1, 2});
    const AblationTable t3 = cmd_ablate(c, keys, {1, 2});
    for (std::size_t i = 0; i < keys.size(); ++i) {
        CHECK_FALSE(t2.rows[i].failed);
        CHECK(t2.rows[i].metrics.dice == t3.rows[i].metrics.dice);
        CHECK(t2.rows[i].p_value == t3.rows[i].p_value);
    }
    CHECK(t2.rows[0].metrics.dice == t.rows[0].metrics.dice);
    CHECK_THROWS_AS(cmd_ablate(c, {}, {1}), InvalidArgument);
}
