// tvsurv: simulate, weight, train, evaluate and run experiment grids.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "tvsurv/dgp.hpp"
#include "tvsurv/errors.hpp"
#include "tvsurv/experiment.hpp"
#include "tvsurv/metrics.hpp"
#include "tvsurv/model.hpp"
#include "tvsurv/training.hpp"
#include "tvsurv/weights.hpp"

namespace fs = std::filesystem;
using namespace tvsurv;

namespace {

struct ConfigArgs {
    std::string file;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "Flat key-value config file");
        cmd->add_option("--set", overrides, "Override a config key: key=value (repeatable)");
    }

    ExperimentConfig load() const {
        ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : load_experiment_config(file);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        cfg.validate();
        return cfg;
    }
};

FileFormat resolve_format(const std::string& flag, const fs::path& path) {
    return flag.empty() ? format_from_path(path) : parse_file_format(flag);
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
    fs::path out = p;
    out.replace_extension("");
    out += suffix;
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void print_summary(const std::vector<SummaryRow>& rows) {
    for (const auto& r : rows) {
        std::printf("%s%s%-13s %-9s %.4f ± %.4f  (n=%zu%s)\n", r.group.empty() ? "" : "beta=",
                    r.group.empty() ? "" : (r.group + "  ").c_str(), r.variant.c_str(), r.metric.c_str(), r.mean, r.sd,
                    r.n_ok, r.n_failed ? (", failed=" + std::to_string(r.n_failed)).c_str() : "");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual survival under time-varying treatments"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("--quiet", quiet, "Suppress warnings");

    // simulate
    DgpConfig dgp;
    std::string sim_out, sim_format, sim_grid = "quantile";
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort with ground-truth curves");
    sim->add_option("--n", dgp.n, "Cohort size")->capture_default_str();
    sim->add_option("--k", dgp.K, "Last time index K")->capture_default_str();
    sim->add_option("--d", dgp.d, "Covariate dimension")->capture_default_str();
    sim->add_option("--feedback", dgp.feedback, "Treatment-to-covariate feedback strength")->capture_default_str();
    sim->add_option("--confounding", dgp.confounding, "Covariate-to-treatment strength")->capture_default_str();
    sim->add_option("--nonlinear", dgp.nonlinear, "Nonlinear outcome map (true/false)")->capture_default_str();
    sim->add_option("--censor-rate", dgp.censor_rate, "Target censored fraction")->capture_default_str();
    sim->add_option("--seed", dgp.seed, "Random seed")->capture_default_str();
    sim->add_option("--m-truth", dgp.m_truth, "Intervals of the ground-truth grid")->capture_default_str();
    sim->add_option("--truth-grid", sim_grid, "quantile|uniform")->capture_default_str();
    sim->add_option("--out", sim_out, "Output cohort (.jsonl or .csv)")->required();
    sim->add_option("--format", sim_format, "csv|jsonl (default: from extension)");

    // fit-weights
    std::string fw_data, fw_format, fw_out, fw_trim = "0.01,0.99";
    PropensityOptions popts;
    auto* fw = app.add_subcommand("fit-weights", "Fit propensity models and compute stabilized weights");
    fw->add_option("--data", fw_data, "Cohort file")->required();
    fw->add_option("--format", fw_format, "csv|jsonl (default: from extension)");
    fw->add_flag("--pooled,!--per-step", popts.pooled, "Pooled model with step encoding (default) or per-step fits");
    fw->add_option("--l2", popts.l2, "L2 penalty on coefficients")->capture_default_str();
    fw->add_option("--trim", fw_trim, "Trimming quantiles lower,upper")->capture_default_str();
    fw->add_option("--out", fw_out, "Weights CSV")->required();

    // train
    ConfigArgs train_cfg;
    std::string tr_data, tr_format, tr_weights, tr_out, tr_log, tr_variant = "full";
    auto* tr = app.add_subcommand("train", "Train the model on a cohort");
    tr->add_option("--data", tr_data, "Cohort file")->required();
    tr->add_option("--format", tr_format, "csv|jsonl (default: from extension)");
    tr->add_option("--weights", tr_weights, "Weights CSV from fit-weights (needed unless train.weights_mode=unit)");
    tr->add_option("--variant", tr_variant, "full|no_balance|flattened|unit_weights|unstabilized|fixed_repr")
        ->capture_default_str();
    tr->add_option("--out", tr_out, "Checkpoint path (.json)")->required();
    tr->add_option("--log", tr_log, "Epoch log (JSON lines; default: <out>.epochs.jsonl)");
    train_cfg.attach(tr);

    // evaluate
    std::string ev_data, ev_format, ev_model, ev_out, ev_csv, ev_a, ev_b;
    auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a cohort");
    ev->add_option("--data", ev_data, "Cohort file")->required();
    ev->add_option("--format", ev_format, "csv|jsonl (default: from extension)");
    ev->add_option("--model", ev_model, "Checkpoint")->required();
    ev->add_option("--out", ev_out, "Evaluation report (.json)")->required();
    ev->add_option("--csv", ev_csv, "Also write variant,metric,value rows");
    ev->add_option("--contrast-a", ev_a, "Treatment sequence (default all-treat)");
    ev->add_option("--contrast-b", ev_b, "Treatment sequence (default never-treat)");

    // experiment / ablate / sweep-feedback
    ConfigArgs exp_cfg, abl_cfg, sw_cfg;
    std::string exp_out, abl_out, sw_out, sw_betas;
    auto* ex = app.add_subcommand("experiment", "Replicated full-model runs on simulated cohorts");
    exp_cfg.attach(ex);
    ex->add_option("--out", exp_out, "Output directory")->required();
    auto* ab = app.add_subcommand("ablate", "Ablation variants on identical cohorts and seeds");
    abl_cfg.attach(ab);
    ab->add_option("--out", abl_out, "Output directory")->required();
    auto* sw = app.add_subcommand("sweep-feedback", "Full model and alpha=0 across feedback strengths");
    sw_cfg.attach(sw);
    sw->add_option("--betas", sw_betas, "Comma-separated feedback strengths (default from config)");
    sw->add_option("--out", sw_out, "Output directory")->required();

    // predict
    std::string pr_model, pr_data, pr_format, pr_out, pr_id;
    std::vector<std::string> pr_seqs;
    auto* pr = app.add_subcommand("predict", "Counterfactual survival curves for given treatment sequences");
    pr->add_option("--model", pr_model, "Checkpoint")->required();
    pr->add_option("--data", pr_data, "Cohort file")->required();
    pr->add_option("--format", pr_format, "csv|jsonl (default: from extension)");
    pr->add_option("--sequence", pr_seqs, "Treatment sequence such as 111000000 (repeatable)")->required();
    pr->add_option("--id", pr_id, "Only this individual (default: all)");
    pr->add_option("--out", pr_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }
    set_warnings_enabled(!quiet);

    try {
        if (*sim) {
            dgp.truth_grid = parse_grid_strategy(sim_grid);
            const Cohort cohort = simulate(dgp);
            save_cohort(cohort, sim_out, resolve_format(sim_format, sim_out));
            std::size_t events = 0, treated = 0;
            for (const auto& t : cohort.trajectories) {
                events += t.event;
                for (int a : t.treatments) treated += a;
            }
            std::printf("wrote %zu trajectories to %s (events %.3f, treatment rate %.3f)\n", cohort.size(),
                        sim_out.c_str(), double(events) / double(cohort.size()),
                        double(treated) / double(cohort.size() * (cohort.K + 1)));
        } else if (*fw) {
            const Cohort cohort = load_cohort(fw_data, resolve_format(fw_format, fw_data));
            const auto q = CLI::detail::split(fw_trim, ',');
            if (q.size() != 2) throw ConfigError("--trim expects lower,upper");
            double lo = 0.0, hi = 1.0;
            try {
                lo = std::stod(q[0]);
                hi = std::stod(q[1]);
            } catch (const std::exception&) {
                throw ConfigError("--trim expects two numbers, got '" + fw_trim + "'");
            }
            const auto model = fit_propensity(cohort, popts);
            const WeightTable table = trim_weights(stabilized_weights(cohort, model), lo, hi);
            save_weights_csv(table, fw_out);
            const auto ds = weight_diagnostics(table, &WeightRow::raw);
            const auto dt = weight_diagnostics(table, &WeightRow::trimmed);
            const auto du = weight_diagnostics(table, &WeightRow::unstabilized);
            auto diag = [](const WeightDiagnostics& d) {
                return nlohmann::json{{"mean", d.mean}, {"variance", d.variance}, {"max", d.max},
                                      {"ess", d.ess},   {"n", d.n},               {"positivity_warnings", d.positivity_warnings}};
            };
            const nlohmann::json doc = {{"stabilized_raw", diag(ds)},
                                        {"stabilized_trimmed", diag(dt)},
                                        {"unstabilized_raw", diag(du)},
                                        {"trim", {lo, hi}},
                                        {"pooled", popts.pooled},
                                        {"l2", popts.l2}};
            const fs::path diag_path = sibling(fw_out, ".diagnostics.json");
            write_text(diag_path, doc.dump(2) + "\n");
            std::printf("wrote %s and %s (mean %.4f, ESS %.1f, positivity warnings %zu)\n", fw_out.c_str(),
                        diag_path.c_str(), ds.mean, dt.ess, ds.positivity_warnings);
        } else if (*tr) {
            const ExperimentConfig cfg = train_cfg.load();
            const Cohort cohort = load_cohort(tr_data, resolve_format(tr_format, tr_data));
            const TimeGrid grid = build_grid(cohort, cfg.grid_m, cfg.grid_strategy);
            ModelConfig mc = cfg.model;
            mc.d = cohort.d;
            mc.K = cohort.K;
            mc.m = cfg.grid_m;
            mc.seed = cfg.seed;
            TrainConfig tc = cfg.train;
            tc.seed = cfg.seed;
            const VariantSetup setup = variant_setup(tr_variant, mc, tc);
            std::optional<WeightTable> table;
            if (!tr_weights.empty()) table = load_weights_csv(tr_weights);
            if (!table && setup.train.weights_mode != WeightsMode::Unit) {
                throw ConfigError("--weights is required unless train.weights_mode=unit");
            }
            const fs::path log_path = tr_log.empty() ? sibling(tr_out, ".epochs.jsonl") : fs::path(tr_log);
            std::ofstream log(log_path);
            if (!log) throw DataError("cannot write " + log_path.string());
            auto on_epoch = [&](const EpochReport& e) {
                log << e.to_json() << '\n';
                log.flush();
                std::fprintf(stderr, "epoch %zu  L_surv %.4f  L_bal %.5f  total %.4f  mmd %.5f\n", e.epoch, e.l_surv,
                             e.l_bal, e.total, e.mmd_total);
            };
            const WeightTable* tp = table ? &*table : nullptr;
            TrainResult result = setup.fixed_representation
                                     ? train_fixed_representation(cohort, grid, setup.model, setup.train, tp, on_epoch)
                                     : train(cohort, grid, setup.model, setup.train, tp, on_epoch);
            result.model.save(tr_out);
            std::printf("wrote %s (config_hash=%s)\n", tr_out.c_str(), cfg.hash().c_str());
        } else if (*ev) {
            const Cohort cohort = load_cohort(ev_data, resolve_format(ev_format, ev_data));
            const Model model = Model::load(ev_model);
            const auto K = model.config().K;
            const TreatmentSequence a = ev_a.empty() ? constant_sequence(K + 1, 1) : parse_sequence(ev_a);
            const TreatmentSequence b = ev_b.empty() ? constant_sequence(K + 1, 0) : parse_sequence(ev_b);
            TruthFn truth;
            if (cohort.has_truth()) {
                truth = stored_truth(cohort, model.grid());
            } else {
                warn("cohort has no ground truth; tv_pehe and irmse are omitted");
            }
            const EvalReport report = evaluate(model, cohort, truth, a, b);
            write_text(ev_out, report.to_json() + "\n");
            if (!ev_csv.empty()) write_text(ev_csv, "variant,metric,value\n" + eval_csv_rows("model", report));
            std::printf("c_index %.4f  ibs %.4f", report.c_index, report.ibs);
            if (report.tv_pehe) std::printf("  tv_pehe %.4f  irmse %.4f", *report.tv_pehe, *report.irmse);
            std::printf("\n");
        } else if (*ex) {
            const auto out = run_experiment(exp_cfg.load(), exp_out);
            print_summary(out.summary);
        } else if (*ab) {
            const auto out = run_ablation(abl_cfg.load(), abl_out);
            print_summary(out.summary);
        } else if (*sw) {
            ExperimentConfig cfg = sw_cfg.load();
            if (!sw_betas.empty()) cfg.set("experiment.betas", sw_betas);
            const auto out = run_feedback_sweep(cfg, cfg.betas, sw_out);
            print_summary(out.summary);
        } else if (*pr) {
            const Model model = Model::load(pr_model);
            const Cohort cohort = load_cohort(pr_data, resolve_format(pr_format, pr_data));
            std::vector<Trajectory> rows;
            for (const auto& t : cohort.trajectories)
                if (pr_id.empty() || t.id == pr_id) rows.push_back(t);
            if (rows.empty()) throw DataError("no individual with id '" + pr_id + "'");
            fs::create_directories(pr_out);
            const auto& tau = model.grid().boundaries;
            for (const auto& key : pr_seqs) {
                const TreatmentSequence seq = parse_sequence(key);
                if (seq.size() != model.config().K + 1) {
                    throw ConfigError("sequence '" + key + "' must have K+1 = " +
                                      std::to_string(model.config().K + 1) + " entries");
                }
                const auto curves = model.predict(rows, seq);
                std::ofstream out(fs::path(pr_out) / ("curves_" + key + ".csv"));
                if (!out) throw DataError("cannot write curves for " + key);
                out << "id,tau,survival\n";
                for (std::size_t i = 0; i < rows.size(); ++i) {
                    const auto s = curves[i].on_boundaries();
                    for (std::size_t j = 0; j < s.size(); ++j) out << rows[i].id << ',' << fmt(tau[j]) << ',' << fmt(s[j]) << '\n';
                }
            }
            std::printf("wrote %zu curve file(s) to %s\n", pr_seqs.size(), pr_out.c_str());
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitOk;
}
