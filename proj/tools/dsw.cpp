// dsw: simulate, train, evaluate, benchmark and predict from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsw/dataset_io.hpp"
#include "dsw/errors.hpp"
#include "dsw/harness.hpp"
#include "dsw/report.hpp"
#include "dsw/run_config.hpp"
#include "dsw/serialize.hpp"
#include "dsw/simulate.hpp"
#include "dsw/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dsw;

namespace {

struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> raw;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON run config; flags override its keys");
    for (const auto& key : config_keys()) {
        cmd->add_option("--" + key.name, flags.raw[key.name], key.help);
    }
}

struct Resolved {
    RunConfig cfg;
    std::set<std::string> explicit_keys;
};

Resolved resolve(const CLI::App* cmd, const ConfigFlags& flags) {
    Resolved r{default_run_config(), {}};
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw IoError("cannot open config '" + flags.config_path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(ss.str());
        } catch (const nlohmann::json::exception& e) {
            throw CorruptFileError("config '" + flags.config_path + "': " + e.what());
        }
        apply_config_json(r.cfg, obj);
        for (const auto& [k, v] : obj.items()) r.explicit_keys.insert(k);
    }
    for (const auto& key : config_keys()) {
        if (cmd->count("--" + key.name) == 0) continue;
        key.set(r.cfg, flag_value_to_json(key.name, flags.raw.at(key.name)));
        r.explicit_keys.insert(key.name);
    }
    // The default AR order shrinks to fit short windows; an explicit --p is validated as given.
    if (!r.explicit_keys.count("p") && r.cfg.synth.p > r.cfg.synth.T) r.cfg.synth.p = r.cfg.synth.T;
    return r;
}

std::string in_output_dir(const RunConfig& cfg, const std::string& path, const std::string& fallback) {
    if (!path.empty()) return path;
    fs::create_directories(cfg.output_dir);
    return (fs::path(cfg.output_dir) / fallback).string();
}

void write_text(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

// dataset.tsv + 0.3 -> dataset_gh0.3.tsv
std::string variant_path(const std::string& path, double gamma_h) {
    fs::path p(path);
    char tag[32];
    std::snprintf(tag, sizeof(tag), "_gh%g", gamma_h);
    return (p.parent_path() / (p.stem().string() + tag + p.extension().string())).string();
}

void check_schema(const Resolved& r, const DatasetHeader& h) {
    auto clash = [&](const char* key, std::size_t want, std::size_t have) {
        if (r.explicit_keys.count(key) && want != have) {
            throw DimensionError(std::string("config ") + key + "=" + std::to_string(want) +
                                 " does not match dataset header (" + std::to_string(have) + ")");
        }
    };
    clash("d-x", r.cfg.synth.d_x, h.d_x);
    clash("d-c", r.cfg.synth.d_c, h.d_c);
    clash("T", r.cfg.synth.T, h.T);
}

void check_checkpoint_schema(const ModelConfig& m, const DatasetHeader& h) {
    if (m.d_x != h.d_x || m.d_c != h.d_c || m.T != h.T) {
        throw DimensionError("checkpoint expects T=" + std::to_string(m.T) + ", d_x=" + std::to_string(m.d_x) +
                             ", d_c=" + std::to_string(m.d_c) + " but dataset has T=" + std::to_string(h.T) +
                             ", d_x=" + std::to_string(h.d_x) + ", d_c=" + std::to_string(h.d_c));
    }
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Resolved& r, const std::string& out_arg, const std::string& covariates) {
    const RunConfig& cfg = r.cfg;
    const bool semi = !covariates.empty();
    std::optional<Dataset> table;
    if (semi) table = load_dataset(covariates);
    const std::string base = in_output_dir(cfg, out_arg, semi ? "semi.tsv" : "synthetic.tsv");
    for (double gamma_h : cfg.gamma_hs) {
        SynthConfig sc = cfg.synth;
        sc.gamma_h = gamma_h;
        const SimulationOutput sim = semi ? semi_synthetic_outcomes(*table, sc) : generate_dataset(sc);
        const std::string path = cfg.gamma_hs.size() > 1 ? variant_path(base, gamma_h) : base;
        save_dataset(sim.dataset, path);
        write_text(path + ".coef.json", coefficients_to_json(sim.coefficients, sc).dump(1) + "\n");
        std::cout << path << "\t" << sim.dataset.records.size() << " records\n";
    }
    return 0;
}

int cmd_train(const Resolved& r, const std::string& dataset_path, const std::string& out_arg,
              const std::string& log_arg) {
    const Dataset ds = load_dataset(dataset_path);
    check_schema(r, ds.header);
    const ModelConfig mc = model_for(r.cfg.model, ds.header.d_x, ds.header.d_c, ds.header.T);
    const std::string ck_path = in_output_dir(r.cfg, out_arg, "model.ckpt");
    const std::string log_path = log_arg.empty() ? ck_path + ".log.tsv" : log_arg;
    const TrainResult tr = train(ds.records, r.cfg.train, mc);
    save_checkpoint(tr.best, ck_path);
    std::string log = "epoch\ttrain_loss\tval_loss\n";
    for (const auto& e : tr.log) {
        log += std::to_string(e.epoch) + "\t" + format_double(e.train_loss) + "\t" + format_double(e.val_loss) + "\n";
    }
    write_text(log_path, log);
    std::cout << ck_path << "\tbest epoch " << tr.best.epoch << " of " << tr.log.size() << ", val mse "
              << format_double(tr.best.val_loss) << "\n";
    return 0;
}

int cmd_evaluate(const Resolved& r, const std::string& dataset_path, const std::string& checkpoint,
                 const std::string& baseline, const std::string& subset, const std::string& metrics,
                 const std::string& out_arg) {
    if (checkpoint.empty() == baseline.empty()) throw ValidationError("evaluate: give exactly one of --checkpoint or --baseline");
    if (subset != "test" && subset != "all") throw ValidationError("evaluate: --subset must be test or all");
    if (metrics != "auto" && metrics != "pehe" && metrics != "rmse") {
        throw ValidationError("evaluate: --metrics must be auto, pehe or rmse");
    }
    const Dataset ds = load_dataset(dataset_path);
    const bool factual_only = ds.header.provenance == Provenance::real;
    if (factual_only && metrics == "pehe") {
        throw UnsupportedMetricError("unsupported metric: sqrt_pehe/ate_error need counterfactual outcomes, but '" +
                                     dataset_path + "' has provenance real");
    }
    nlohmann::ordered_json report;
    report["format_version"] = kReportVersion;
    report["kind"] = "evaluate";
    report["dataset"] = dataset_path;
    report["subset"] = subset;

    EvalReport rep;
    std::string estimator;
    if (!checkpoint.empty()) {
        const Checkpoint ck = load_checkpoint(checkpoint);
        check_checkpoint_schema(ck.model, ds.header);
        estimator = "dsw";
        report["checkpoint"] = checkpoint;
        const auto& records =
            subset == "all" ? ds.records : split_dataset(ds.records, r.cfg.train.split, ck.seed).test;
        rep = evaluate_checkpoint(ck, records);
        report["seed"] = ck.seed;
    } else {
        if (factual_only) {
            throw UnsupportedMetricError("baseline '" + baseline +
                                         "' estimates effects only; real-provenance data has no counterfactuals to score");
        }
        estimator = baseline;
        if (subset == "all") {
            rep = evaluate_baseline(baseline, ds.records, ds.records, ds.records, ds.header.T, r.cfg.knn_k,
                                    r.cfg.knn_metric)
                      .report;
        } else {
            const auto parts = split_dataset(ds.records, r.cfg.train.split, r.cfg.train.seed);
            auto res = evaluate_baseline(baseline, parts.train, parts.val, parts.test, ds.header.T, r.cfg.knn_k,
                                         r.cfg.knn_metric);
            rep = res.report;
            if (!res.choice.empty()) report["selected"] = res.choice;
        }
        report["seed"] = r.cfg.train.seed;
    }
    if (metrics == "rmse") {
        rep.sqrt_pehe.reset();
        rep.ate_error.reset();
    }
    report["estimator"] = estimator;
    const auto metrics_json = eval_report_json(rep);
    for (const auto& [k, v] : metrics_json.items()) report[k] = v;
    if (factual_only) {
        report["reason"] = "dataset provenance is real: no counterfactual outcomes, so sqrt_pehe and ate_error are not defined";
    } else if (!rep.rmse_factual) {
        report["reason"] = "baseline estimators produce effect estimates only; rmse_factual is not defined";
    }
    report["config"] = run_config_to_json(r.cfg);
    const std::string path = in_output_dir(r.cfg, out_arg, "report.json");
    write_text(path, report.dump(2) + "\n");
    std::cout << path << "\n";
    return 0;
}

int cmd_benchmark(const Resolved& r) {
    validate_run_config(r.cfg);
    BenchmarkConfig bc;
    bc.synth = r.cfg.synth;
    bc.model = r.cfg.model;
    bc.train = r.cfg.train;
    bc.gamma_hs = r.cfg.gamma_hs;
    bc.realizations = r.cfg.realizations;
    bc.methods = r.cfg.methods;
    bc.knn_k = r.cfg.knn_k;
    bc.knn_metric = r.cfg.knn_metric;
    bc.threads = r.cfg.threads;
    const BenchmarkResult res = run_benchmark(bc, [](const BenchmarkCell& c) {
        std::cerr << "gamma_h=" << c.gamma_h << " r=" << c.realization << " " << c.method << ": "
                  << (c.failed ? "FAILED " : "")
                  << (c.report && c.report->sqrt_pehe ? "sqrt_pehe=" + format_double(*c.report->sqrt_pehe) : "")
                  << (c.note.empty() ? "" : " (" + c.note + ")") << "\n";
    });
    fs::create_directories(r.cfg.output_dir);
    const fs::path dir(r.cfg.output_dir);
    write_text((dir / "aggregate.json").string(), aggregate_report_json(res, run_config_to_json(r.cfg)).dump(2) + "\n");
    write_text((dir / "results.tsv").string(), results_table(res));
    for (const auto& m : kMetricNames) {
        write_text((dir / ("series_" + m + ".tsv")).string(), metric_series(res, r.cfg.gamma_hs, r.cfg.methods, m));
    }
    std::cout << "gamma_h\tmethod\tsqrt_pehe_mean\tsqrt_pehe_std\n";
    for (const auto& [key, agg] : res.aggregates) {
        std::cout << key.first << "\t" << key.second << "\t"
                  << (agg.sqrt_pehe ? format_double(agg.sqrt_pehe->mean) : "NA") << "\t"
                  << (agg.sqrt_pehe ? format_double(agg.sqrt_pehe->std) : "NA") << "\n";
    }
    std::size_t failed = 0;
    for (const auto& c : res.cells) failed += c.failed;
    if (failed) std::cerr << failed << " benchmark cell(s) failed; see results.tsv\n";
    return 0;
}

int cmd_predict(const Resolved& r, const std::string& checkpoint, const std::string& dataset_path,
                const std::string& out_arg) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Dataset ds = load_dataset(dataset_path);
    check_checkpoint_schema(ck.model, ds.header);
    std::string out = "id\ty1\ty0\tite\ta_hat\tw_a\n";
    for (const auto& rec : ds.records) {
        const Prediction p = predict(rec, ck.params, ck.model);
        out += rec.id + "\t" + format_double(p.y1) + "\t" + format_double(p.y0) + "\t" + format_double(p.ite()) + "\t";
        for (std::size_t t = 0; t < p.a_hat.size(); ++t) out += (t ? "," : "") + format_double(p.a_hat[t]);
        out += "\t" + format_double(iptw_weights(p.a_hat, ck.prA)) + "\n";
    }
    const std::string path = in_output_dir(r.cfg, out_arg, "predictions.tsv");
    write_text(path, out);
    std::cout << path << "\t" << ds.records.size() << " rows\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep sequential weighting toolkit: simulate data, train, evaluate and benchmark."};
    app.require_subcommand(1);

    ConfigFlags sim_flags, train_flags, eval_flags, bench_flags, pred_flags;
    std::string sim_out, covariates;
    auto* sim = app.add_subcommand("simulate", "Write a synthetic (or semi-synthetic) dataset and coefficient sidecar");
    add_config_flags(sim, sim_flags);
    sim->add_option("--out", sim_out, "dataset path (default <output-dir>/synthetic.tsv)");
    sim->add_option("--covariates", covariates, "observed covariate table; switches to semi-synthetic outcomes");

    std::string train_data, train_out, train_log;
    auto* trn = app.add_subcommand("train", "Fit a model and write a checkpoint and epoch log");
    add_config_flags(trn, train_flags);
    trn->add_option("--dataset", train_data, "dataset file")->required();
    trn->add_option("--out", train_out, "checkpoint path (default <output-dir>/model.ckpt)");
    trn->add_option("--log", train_log, "epoch log path (default <checkpoint>.log.tsv)");

    std::string eval_data, eval_ck, eval_base, eval_subset = "test", eval_metrics = "auto", eval_out;
    auto* evl = app.add_subcommand("evaluate", "Score a checkpoint or a baseline on a dataset");
    add_config_flags(evl, eval_flags);
    evl->add_option("--dataset", eval_data, "dataset file")->required();
    evl->add_option("--checkpoint", eval_ck, "model checkpoint");
    evl->add_option("--baseline", eval_base, "baseline name: lr, knn or psm");
    evl->add_option("--subset", eval_subset, "test (held-out split) or all (default test)");
    evl->add_option("--metrics", eval_metrics, "auto, pehe or rmse (default auto)");
    evl->add_option("--out", eval_out, "report path (default <output-dir>/report.json)");

    auto* bench = app.add_subcommand("benchmark", "Run realizations x gamma-h x methods and aggregate");
    add_config_flags(bench, bench_flags);

    std::string pred_ck, pred_data, pred_out;
    auto* pred = app.add_subcommand("predict", "Per-patient potential outcomes, effects and weights");
    add_config_flags(pred, pred_flags);
    pred->add_option("--checkpoint", pred_ck, "model checkpoint")->required();
    pred->add_option("--dataset", pred_data, "dataset file")->required();
    pred->add_option("--out", pred_out, "predictions path (default <output-dir>/predictions.tsv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*sim) return cmd_simulate(resolve(sim, sim_flags), sim_out, covariates);
        if (*trn) return cmd_train(resolve(trn, train_flags), train_data, train_out, train_log);
        if (*evl) {
            return cmd_evaluate(resolve(evl, eval_flags), eval_data, eval_ck, eval_base, eval_subset, eval_metrics,
                                eval_out);
        }
        if (*bench) return cmd_benchmark(resolve(bench, bench_flags));
        if (*pred) return cmd_predict(resolve(pred, pred_flags), pred_ck, pred_data, pred_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
