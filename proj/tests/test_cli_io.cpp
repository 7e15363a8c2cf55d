#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dsw/dataset_io.hpp"
#include "dsw/harness.hpp"
#include "dsw/report.hpp"
#include "dsw/run_config.hpp"
#include "dsw/simulate.hpp"
#include "dsw/trainer.hpp"
#include "support.hpp"

using namespace dsw;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("dsw_cli_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs the CLI with stdout/stderr captured into `dir`; returns the exit status.
int run_cli(const TempDir& dir, const std::string& args) {
    const std::string cmd = std::string("\"") + DSW_CLI_PATH + "\" " + args + " >\"" + (dir / "stdout.txt") +
                            "\" 2>\"" + (dir / "stderr.txt") + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

SynthConfig mini_synth(std::size_t nt = 12, std::size_t nc = 28) {
    SynthConfig sc;
    sc.n_treated = nt;
    sc.n_control = nc;
    sc.T = 4;
    sc.d_x = 3;
    sc.d_c = 2;
    sc.p = 2;
    sc.seed = 9;
    return sc;
}

const std::string kMiniFlags = "--n-treated 12 --n-control 28 --T 4 --d-x 3 --d-c 2 --p 2";

std::vector<std::vector<std::string>> read_tsv(const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(path));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        for (auto f : split_fields(line, '\t')) row.emplace_back(f);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

// --- dataset files ---------------------------------------------------------

TEST(DatasetFile, RoundTripIsByteIdentical) {
    const Dataset ds = generate_dataset(mini_synth()).dataset;
    const std::string first = dataset_to_string(ds);
    const std::string second = dataset_to_string(dataset_from_string(first));
    EXPECT_EQ(first, second);

    TempDir dir;
    save_dataset(ds, dir / "a.tsv");
    save_dataset(load_dataset(dir / "a.tsv"), dir / "b.tsv");
    EXPECT_EQ(slurp(dir / "a.tsv"), slurp(dir / "b.tsv"));
}

TEST(DatasetFile, RoundTripPreservesValuesExactly) {
    Rng rng(4);
    ModelConfig c;
    c.T = 3;
    c.d_x = 2;
    c.d_c = 2;
    Dataset ds;
    ds.header = {2, 2, 3, 1, 0.25, 1.5, Provenance::semi, 0.3, 77};
    for (int i = 0; i < 20; ++i) {
        auto r = tsupport::random_record(c, rng, i % 3 == 0, "id" + std::to_string(i));
        r.X[0] = std::nextafter(1.0, 2.0) * (i + 1) / 3.0;
        ds.records.push_back(r);
    }
    const Dataset back = dataset_from_string(dataset_to_string(ds));
    ASSERT_EQ(back.records.size(), ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        EXPECT_EQ(back.records[i].X, ds.records[i].X);
        EXPECT_EQ(back.records[i].C, ds.records[i].C);
        EXPECT_EQ(back.records[i].A, ds.records[i].A);
        EXPECT_EQ(back.records[i].y_factual, ds.records[i].y_factual);
        EXPECT_EQ(back.records[i].y_counterfactual, ds.records[i].y_counterfactual);
        EXPECT_EQ(back.records[i].treated, ds.records[i].treated);
    }
    EXPECT_EQ(back.header.gamma_h, 0.3);
    EXPECT_EQ(back.header.seed, 77u);
    EXPECT_EQ(back.header.provenance, Provenance::semi);
}

TEST(DatasetFile, RejectsBadFiles) {
    const std::string good = dataset_to_string(generate_dataset(mini_synth(2, 2)).dataset);
    EXPECT_THROW(dataset_from_string(""), CorruptFileError);
    EXPECT_THROW(dataset_from_string("not json\n"), CorruptFileError);

    std::string wrong_version = good;
    wrong_version.replace(wrong_version.find("\"format_version\":1"), 18, "\"format_version\":9");
    EXPECT_THROW(dataset_from_string(wrong_version), VersionMismatchError);

    // drop the last record: count no longer matches the header
    std::string short_body = good.substr(0, good.rfind('\n', good.size() - 2) + 1);
    EXPECT_THROW(dataset_from_string(short_body), CorruptFileError);

    std::string bad_number = good;
    const auto tab = bad_number.find('\t', bad_number.find('\n'));
    bad_number.insert(tab + 1, "x");
    EXPECT_THROW(dataset_from_string(bad_number), CorruptFileError);
}

TEST(DatasetFile, CounterfactualMustMatchProvenance) {
    Dataset ds = generate_dataset(mini_synth(2, 2)).dataset;
    ds.header.provenance = Provenance::real;
    const std::string text = dataset_to_string(ds);
    try {
        dataset_from_string(text);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("y_counterfactual must be absent"), std::string::npos);
    }
    for (auto& r : ds.records) r.y_counterfactual.reset();
    EXPECT_NO_THROW(dataset_from_string(dataset_to_string(ds)));
}

TEST(DatasetFile, MissingFileIsIoError) {
    EXPECT_THROW(load_dataset("/nonexistent/dir/data.tsv"), IoError);
}

// --- run config --------------------------------------------------------------

TEST(RunConfig, UnknownKeyRejected) {
    RunConfig cfg = default_run_config();
    EXPECT_THROW(apply_config_json(cfg, nlohmann::json{{"learning_rate", 0.1}}), ValidationError);
    EXPECT_THROW(apply_config_json(cfg, nlohmann::json{{"format_version", 2}}), VersionMismatchError);
    EXPECT_THROW(apply_config_json(cfg, nlohmann::json::array()), ValidationError);
    EXPECT_THROW(apply_config_json(cfg, nlohmann::json{{"batch-size", -1}}), ValidationError);
    EXPECT_THROW(apply_config_json(cfg, nlohmann::json{{"methods", {"dsw", "cfr"}}}), ValidationError);
}

TEST(RunConfig, EchoRoundTrips) {
    RunConfig cfg = default_run_config();
    apply_config_json(cfg, nlohmann::json{{"learning-rate", 0.003},
                                          {"lambda", 0.01},
                                          {"gamma-h", "all"},
                                          {"seed", 41},
                                          {"outcome-hidden", {8, 4}},
                                          {"knn-metric", "mahalanobis"},
                                          {"treatment-head-input", "pooled"},
                                          {"split", {0.6, 0.2, 0.2}},
                                          {"methods", {"dsw", "lr"}}});
    EXPECT_EQ(cfg.gamma_hs, kAllGammaH);
    EXPECT_EQ(cfg.synth.seed, 41u);
    EXPECT_EQ(cfg.train.seed, 41u);
    const auto echo = run_config_to_json(cfg);
    RunConfig back = default_run_config();
    apply_config_json(back, nlohmann::json::parse(echo.dump()));
    EXPECT_EQ(run_config_to_json(back).dump(), echo.dump());
    EXPECT_EQ(back.model.outcome_hidden, (std::vector<std::size_t>{8, 4}));
    EXPECT_EQ(back.train.learning_rate, 0.003);
    for (const auto& k : config_keys()) EXPECT_TRUE(echo.contains(k.name)) << k.name;
}

TEST(RunConfig, FlagTextConversion) {
    EXPECT_EQ(flag_value_to_json("learning-rate", "0.5"), nlohmann::json(0.5));
    EXPECT_EQ(flag_value_to_json("standardize", "false"), nlohmann::json(false));
    EXPECT_EQ(flag_value_to_json("gamma-h", "all"), nlohmann::json("all"));
    EXPECT_EQ(flag_value_to_json("gamma-h", "0.1,0.5"), nlohmann::json({0.1, 0.5}));
    EXPECT_EQ(flag_value_to_json("methods", "lr"), nlohmann::json({"lr"}));
    EXPECT_EQ(flag_value_to_json("outcome-hidden", "[4,2]"), nlohmann::json({4, 2}));
    EXPECT_THROW(flag_value_to_json("split", "[0.5,"), ValidationError);
}

TEST(RunConfig, ValidationCatchesBadValues) {
    RunConfig cfg = default_run_config();
    EXPECT_NO_THROW(validate_run_config(cfg));
    cfg.realizations = 0;
    EXPECT_THROW(validate_run_config(cfg), ValidationError);
    cfg = default_run_config();
    cfg.gamma_hs = {1.5};
    EXPECT_THROW(validate_run_config(cfg), ValidationError);
    cfg = default_run_config();
    cfg.train.learning_rate = -1.0;
    EXPECT_THROW(validate_run_config(cfg), ValidationError);
}

// --- reports ----------------------------------------------------------------

namespace {

BenchmarkConfig mini_benchmark() {
    BenchmarkConfig bc;
    bc.synth = mini_synth(20, 40);
    bc.model.d_u = bc.model.d_q = bc.model.d_h = 4;
    bc.model.d_z = 3;
    bc.model.outcome_hidden = {4};
    bc.train.max_epochs = 3;
    bc.train.batch_size = 16;
    bc.realizations = 2;
    bc.gamma_hs = {0.1, 0.5};
    bc.threads = 2;
    return bc;
}

}  // namespace

TEST(Benchmark, AggregatesRecomposeFromCells) {
    const BenchmarkConfig bc = mini_benchmark();
    const BenchmarkResult res = run_benchmark(bc);
    ASSERT_EQ(res.cells.size(), 2u * 2u * 4u);
    for (double g : bc.gamma_hs) {
        for (const auto& m : bc.methods) {
            std::vector<double> vals;
            for (const auto& c : res.cells) {
                if (c.gamma_h == g && c.method == m && c.report) vals.push_back(*c.report->sqrt_pehe);
            }
            ASSERT_EQ(vals.size(), 2u) << m;
            const auto& agg = res.aggregates.at({g, m});
            EXPECT_DOUBLE_EQ(agg.sqrt_pehe->mean, (vals[0] + vals[1]) / 2.0);
            EXPECT_DOUBLE_EQ(agg.sqrt_pehe->std, std::fabs(vals[0] - vals[1]) / std::sqrt(2.0));
            EXPECT_EQ(agg.sqrt_pehe->values, vals);
        }
    }
}

TEST(Benchmark, ThreadCountDoesNotChangeResults) {
    BenchmarkConfig bc = mini_benchmark();
    bc.gamma_hs = {0.3};
    bc.threads = 1;
    const auto serial = aggregate_report_json(run_benchmark(bc), {{"x", 1}}).dump();
    bc.threads = 3;
    const auto parallel = aggregate_report_json(run_benchmark(bc), {{"x", 1}}).dump();
    EXPECT_EQ(serial, parallel);
}

TEST(Report, SchemaAcceptsGeneratedAndFlagsMutations) {
    BenchmarkConfig bc = mini_benchmark();
    bc.gamma_hs = {0.1};
    bc.methods = {"lr", "knn"};
    const nlohmann::json rep =
        nlohmann::json::parse(aggregate_report_json(run_benchmark(bc), run_config_to_json(default_run_config())).dump());
    EXPECT_TRUE(aggregate_report_problems(rep).empty());

    auto mutated = [&](auto f) {
        nlohmann::json j = rep;
        f(j);
        return aggregate_report_problems(j).size();
    };
    EXPECT_GT(mutated([](auto& j) { j.erase("config"); }), 0u);
    EXPECT_GT(mutated([](auto& j) { j["format_version"] = 7; }), 0u);
    EXPECT_GT(mutated([](auto& j) { j["kind"] = "evaluate"; }), 0u);
    EXPECT_GT(mutated([](auto& j) { j["aggregates"] = nlohmann::json::array(); }), 0u);
    EXPECT_GT(mutated([](auto& j) { j["aggregates"][0]["sqrt_pehe"].erase("mean"); }), 0u);
    EXPECT_GT(mutated([](auto& j) { j["aggregates"][0]["sqrt_pehe"]["std"] = "x"; }), 0u);
    EXPECT_GT(mutated([](auto& j) { j["aggregates"][1]["method"] = 3; }), 0u);
    EXPECT_GT(mutated([](auto& j) { j["cells"][0].erase("failed"); }), 0u);
    EXPECT_EQ(aggregate_report_problems(nlohmann::json(3)).size(), 1u);
}

TEST(Report, TableAndSeriesShapes) {
    BenchmarkConfig bc = mini_benchmark();
    bc.methods = {"lr", "psm"};
    const auto res = run_benchmark(bc);
    std::istringstream table(results_table(res));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(table, line)) ++rows;
    EXPECT_EQ(rows, 1 + res.cells.size());
    const std::string series = metric_series(res, bc.gamma_hs, bc.methods, "sqrt_pehe");
    EXPECT_EQ(series.substr(0, series.find('\n')), "gamma_h\tlr_mean\tlr_std\tpsm_mean\tpsm_std");
    EXPECT_EQ(std::count(series.begin(), series.end(), '\n'), 3);
}

// --- command line -----------------------------------------------------------

TEST(Cli, SimulateMiniatureAndDeterminism) {
    TempDir dir;
    ASSERT_EQ(run_cli(dir, "simulate --n-treated 2 --n-control 2 --T 3 --d-x 2 --out " + (dir / "m.tsv")), 0);
    const Dataset ds = load_dataset(dir / "m.tsv");
    EXPECT_EQ(ds.records.size(), 4u);
    EXPECT_EQ(ds.header.T, 3u);
    EXPECT_EQ(ds.header.d_x, 2u);
    EXPECT_TRUE(fs::exists(dir / "m.tsv.coef.json"));
    ASSERT_EQ(run_cli(dir, "simulate --n-treated 2 --n-control 2 --T 3 --d-x 2 --out " + (dir / "m2.tsv")), 0);
    EXPECT_EQ(slurp(dir / "m.tsv"), slurp(dir / "m2.tsv"));
}

TEST(Cli, SimulateAllGammaVariants) {
    TempDir dir;
    ASSERT_EQ(run_cli(dir, "simulate " + kMiniFlags + " --gamma-h all --out " + (dir / "d.tsv")), 0);
    std::vector<Dataset> variants;
    for (const char* tag : {"0.1", "0.3", "0.5", "0.7"}) {
        const std::string p = dir / (std::string("d_gh") + tag + ".tsv");
        ASSERT_TRUE(fs::exists(p)) << p;
        variants.push_back(load_dataset(p));
    }
    // shared seed: covariates and treatments agree across variants
    for (std::size_t i = 0; i < variants[0].records.size(); ++i) {
        EXPECT_EQ(variants[0].records[i].X, variants[3].records[i].X);
        EXPECT_EQ(variants[0].records[i].A, variants[3].records[i].A);
    }
    EXPECT_EQ(*variants[2].header.gamma_h, 0.5);
}

TEST(Cli, TrainWritesCheckpointAndLogDeterministically) {
    TempDir dir;
    ASSERT_EQ(run_cli(dir, "simulate " + kMiniFlags + " --out " + (dir / "d.tsv")), 0);
    const std::string common = "train --dataset " + (dir / "d.tsv") +
                               " --max-epochs 2 --patience 5 --batch-size 8 --d-u 4 --d-q 4 --d-h 4 --d-z 3 --seed 5";
    ASSERT_EQ(run_cli(dir, common + " --out " + (dir / "a.ckpt")), 0);
    ASSERT_EQ(run_cli(dir, common + " --out " + (dir / "b.ckpt")), 0);
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
    const auto log = read_tsv(dir / "a.ckpt.log.tsv");
    ASSERT_EQ(log.size(), 3u);
    EXPECT_EQ(log[0], (std::vector<std::string>{"epoch", "train_loss", "val_loss"}));
    EXPECT_EQ(load_checkpoint(dir / "a.ckpt").seed, 5u);
}

TEST(Cli, EvaluateReportKeysAndConfigEcho) {
    TempDir dir;
    ASSERT_EQ(run_cli(dir, "simulate " + kMiniFlags + " --out " + (dir / "d.tsv")), 0);
    ASSERT_EQ(run_cli(dir, "train --dataset " + (dir / "d.tsv") + " --max-epochs 2 --seed 3 --out " + (dir / "m.ckpt")),
              0);
    ASSERT_EQ(run_cli(dir, "evaluate --dataset " + (dir / "d.tsv") + " --checkpoint " + (dir / "m.ckpt") +
                               " --seed 3 --out " + (dir / "dsw.json")),
              0);
    ASSERT_EQ(run_cli(dir, "evaluate --dataset " + (dir / "d.tsv") + " --baseline lr --seed 3 --out " + (dir / "lr.json")),
              0);
    const auto dsw = nlohmann::json::parse(slurp(dir / "dsw.json"));
    const auto lr = nlohmann::json::parse(slurp(dir / "lr.json"));
    for (const char* k : {"sqrt_pehe", "ate_error", "rmse_factual", "n", "seed", "config"}) {
        EXPECT_TRUE(dsw.contains(k)) << k;
        EXPECT_TRUE(lr.contains(k)) << k;
    }
    EXPECT_TRUE(dsw["sqrt_pehe"].is_number());
    EXPECT_TRUE(dsw["rmse_factual"].is_number());
    EXPECT_TRUE(lr["rmse_factual"].is_null());
    EXPECT_TRUE(lr.contains("reason"));
    // the echo re-applies cleanly
    RunConfig cfg = default_run_config();
    EXPECT_NO_THROW(apply_config_json(cfg, dsw["config"]));
    EXPECT_EQ(cfg.train.seed, 3u);

    // DSW report matches an in-process evaluation of the same split
    const Dataset ds = load_dataset(dir / "d.tsv");
    const Checkpoint ck = load_checkpoint(dir / "m.ckpt");
    const auto rep = evaluate_checkpoint(ck, split_dataset(ds.records, cfg.train.split, ck.seed).test);
    EXPECT_EQ(dsw["sqrt_pehe"].get<double>(), *rep.sqrt_pehe);
    EXPECT_EQ(dsw["n"].get<std::size_t>(), rep.n);
}

TEST(Cli, RealProvenanceGivesRmseOnly) {
    TempDir dir;
    Dataset ds = generate_dataset(mini_synth()).dataset;
    ds.header.provenance = Provenance::real;
    ds.header.gamma_h.reset();
    for (auto& r : ds.records) r.y_counterfactual.reset();
    save_dataset(ds, dir / "real.tsv");
    ASSERT_EQ(run_cli(dir, "train --dataset " + (dir / "real.tsv") + " --max-epochs 1 --out " + (dir / "m.ckpt")), 0);
    ASSERT_EQ(run_cli(dir, "evaluate --dataset " + (dir / "real.tsv") + " --checkpoint " + (dir / "m.ckpt") + " --out " +
                               (dir / "r.json")),
              0);
    const auto rep = nlohmann::json::parse(slurp(dir / "r.json"));
    EXPECT_TRUE(rep["rmse_factual"].is_number());
    EXPECT_TRUE(rep["sqrt_pehe"].is_null());
    EXPECT_TRUE(rep["reason"].is_string());
    EXPECT_EQ(run_cli(dir, "evaluate --dataset " + (dir / "real.tsv") + " --checkpoint " + (dir / "m.ckpt") +
                               " --metrics pehe --out " + (dir / "p.json")),
              2);
    EXPECT_NE(slurp(dir / "stderr.txt").find("unsupported metric"), std::string::npos);
}

TEST(Cli, PredictColumnsAreConsistent) {
    TempDir dir;
    ASSERT_EQ(run_cli(dir, "simulate " + kMiniFlags + " --out " + (dir / "d.tsv")), 0);
    ASSERT_EQ(run_cli(dir, "train --dataset " + (dir / "d.tsv") + " --max-epochs 2 --out " + (dir / "m.ckpt")), 0);
    ASSERT_EQ(run_cli(dir, "predict --checkpoint " + (dir / "m.ckpt") + " --dataset " + (dir / "d.tsv") + " --out " +
                               (dir / "p.tsv")),
              0);
    const auto rows = read_tsv(dir / "p.tsv");
    ASSERT_EQ(rows.size(), 1u + 40u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"id", "y1", "y0", "ite", "a_hat", "w_a"}));
    const Dataset ds = load_dataset(dir / "d.tsv");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i][0], ds.records[i - 1].id);
        const double y1 = std::stod(rows[i][1]), y0 = std::stod(rows[i][2]), ite = std::stod(rows[i][3]);
        EXPECT_EQ(ite, y1 - y0);
        EXPECT_EQ(std::count(rows[i][4].begin(), rows[i][4].end(), ','), 3);
        EXPECT_GT(std::stod(rows[i][5]), 0.0);
    }
}

TEST(Cli, ArmInsensitiveCheckpointPredictsZeroEffects) {
    TempDir dir;
    const Dataset ds = generate_dataset(mini_synth()).dataset;
    save_dataset(ds, dir / "d.tsv");
    Checkpoint ck;
    ck.model = model_for(ModelConfig{}, 3, 2, 4);
    ck.model.d_u = ck.model.d_q = ck.model.d_h = 4;
    ck.model.d_z = 3;
    ck.model.outcome_hidden = {4};
    ck.params = init_parameters(ck.model, 8);
    // zero the arm column of the first outcome layer
    auto& w = ck.params.at(pname::W_y(0));
    for (std::size_t r = 0; r < w.shape.rows; ++r) w.values[r * w.shape.cols + w.shape.cols - 1] = 0.0;
    ck.prA = 0.3;
    save_checkpoint(ck, dir / "m.ckpt");
    ASSERT_EQ(run_cli(dir, "predict --checkpoint " + (dir / "m.ckpt") + " --dataset " + (dir / "d.tsv") + " --out " +
                               (dir / "p.tsv")),
              0);
    const auto rows = read_tsv(dir / "p.tsv");
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(std::stod(rows[i][3]), 0.0);
}

TEST(Cli, BenchmarkWritesArtifacts) {
    TempDir dir;
    ASSERT_EQ(run_cli(dir, "benchmark --n-treated 20 --n-control 40 --T 4 --d-x 3 --d-c 2 --p 2 --realizations 2"
                           " --gamma-h 0.1,0.5 --max-epochs 2 --d-u 4 --d-q 4 --d-h 4 --d-z 3 --threads 2"
                           " --output-dir " + dir.path.string()),
              0);
    const auto rep = nlohmann::json::parse(slurp(dir / "aggregate.json"));
    EXPECT_TRUE(aggregate_report_problems(rep).empty());
    EXPECT_EQ(rep["aggregates"].size(), 8u);
    for (const auto& a : rep["aggregates"]) {
        const auto& v = a["sqrt_pehe"]["values"];
        ASSERT_EQ(v.size(), 2u);
        EXPECT_DOUBLE_EQ(a["sqrt_pehe"]["mean"].get<double>(), (v[0].get<double>() + v[1].get<double>()) / 2.0);
    }
    for (const char* f : {"results.tsv", "series_sqrt_pehe.tsv", "series_ate_error.tsv", "series_rmse_factual.tsv"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    // the config echo reproduces the run
    RunConfig cfg = default_run_config();
    apply_config_json(cfg, rep["config"]);
    EXPECT_EQ(cfg.realizations, 2u);
    EXPECT_EQ(cfg.gamma_hs, (std::vector<double>{0.1, 0.5}));
}

TEST(Cli, ExitCodes) {
    TempDir dir;
    EXPECT_EQ(run_cli(dir, "simulate --no-such-flag 1"), 2);
    EXPECT_EQ(run_cli(dir, "simulate --gamma-h 3 --out " + (dir / "x.tsv")), 2);
    EXPECT_EQ(run_cli(dir, "simulate --batch-size -4"), 2);
    EXPECT_EQ(run_cli(dir, ""), 2);
    EXPECT_EQ(run_cli(dir, "train --dataset " + (dir / "missing.tsv")), 4);
    EXPECT_EQ(run_cli(dir, "predict --checkpoint " + (dir / "missing.ckpt") + " --dataset " + (dir / "missing.tsv")), 4);
    std::ofstream(dir / "bad.json") << "{\"learning_rate\": 1}";
    EXPECT_EQ(run_cli(dir, "simulate --config " + (dir / "bad.json")), 2);
    EXPECT_NE(slurp(dir / "stderr.txt").find("unknown key"), std::string::npos);
    std::ofstream(dir / "broken.tsv") << "{\"format_version\":1}\n";
    EXPECT_EQ(run_cli(dir, "train --dataset " + (dir / "broken.tsv")), 4);
}

TEST(Cli, SchemaMismatchIsRejected) {
    TempDir dir;
    ASSERT_EQ(run_cli(dir, "simulate " + kMiniFlags + " --out " + (dir / "d.tsv")), 0);
    EXPECT_EQ(run_cli(dir, "train --dataset " + (dir / "d.tsv") + " --d-x 7"), 2);
    ASSERT_EQ(run_cli(dir, "train --dataset " + (dir / "d.tsv") + " --max-epochs 1 --out " + (dir / "m.ckpt")), 0);
    ASSERT_EQ(run_cli(dir, "simulate --n-treated 3 --n-control 3 --T 4 --d-x 5 --d-c 2 --out " + (dir / "e.tsv")), 0);
    EXPECT_EQ(run_cli(dir, "predict --checkpoint " + (dir / "m.ckpt") + " --dataset " + (dir / "e.tsv")), 2);
}

TEST(Cli, OutputDirFromEnvironment) {
    TempDir dir;
    const std::string cmd = "DSW_OUTPUT_DIR=\"" + dir.path.string() + "\" \"" + DSW_CLI_PATH +
                            "\" simulate --n-treated 2 --n-control 2 --T 3 --d-x 2 >/dev/null 2>&1";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_TRUE(fs::exists(dir / "synthetic.tsv"));
}
