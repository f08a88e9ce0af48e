#pragma once

// Experiment harness: replicated simulate -> weights -> train -> evaluate runs,
// ablation variants, feedback sweeps, and report files.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvsurv/dgp.hpp"
#include "tvsurv/metrics.hpp"
#include "tvsurv/model.hpp"
#include "tvsurv/training.hpp"
#include "tvsurv/weights.hpp"

namespace tvsurv {

struct ExperimentConfig {
    DgpConfig dgp;
    ModelConfig model;
    TrainConfig train;
    PropensityOptions propensity;
    double trim_lower = 0.01;
    double trim_upper = 0.99;
    std::size_t grid_m = 20;
    GridStrategy grid_strategy = GridStrategy::Quantile;
    TreatmentSequence contrast_a;  // empty: all-treat
    TreatmentSequence contrast_b;  // empty: never-treat
    std::size_t replications = 10;
    std::size_t n_test = 1000;
    std::uint64_t seed = 1;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::vector<double> betas{0.1, 0.25, 0.5, 0.75, 1.0};
    std::vector<std::string> variants{"full", "no_balance", "flattened", "unit_weights", "unstabilized", "fixed_repr"};

    /// Sets one dotted key (e.g. "train.alpha"); throws ConfigError on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    void validate() const;
    TreatmentSequence sequence_a() const;
    TreatmentSequence sequence_b() const;
    /// Canonical "key=value" listing of every effective setting.
    std::string canonical() const;
    /// FNV-1a 64 of canonical(), hex.
    std::string hash() const;
};

/// Flat key-value file: `key = value` per line, '#' comments, blank lines ignored.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& origin = "<config>");

/// Names of the ablation variants, in report order.
const std::vector<std::string>& ablation_variants();

/// Training settings of one ablation variant derived from the base config.
struct VariantSetup {
    ModelConfig model;
    TrainConfig train;
    bool fixed_representation = false;
};
VariantSetup variant_setup(const std::string& variant, const ModelConfig& model, const TrainConfig& train);

using TruthFn = std::function<SurvivalCurve(const Trajectory&, const TreatmentSequence&)>;

/// Metrics of a trained model on an evaluation cohort. Truth-based metrics are
/// computed only when `truth` is provided.
EvalReport evaluate(const Model& model, const Cohort& cohort, const TruthFn& truth, const TreatmentSequence& a,
                    const TreatmentSequence& b);

/// Truth function backed by a cohort's stored ground truth; requires the stored grid
/// to equal `grid`.
TruthFn stored_truth(const Cohort& cohort, const TimeGrid& grid);

struct VariantResult {
    std::string variant;
    EvalReport report;
    std::vector<EpochReport> epochs;
    // Mean predicted and true survival over the evaluation cohort on the boundaries.
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> mean_curves;
};

struct ReplicateResult {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    WeightDiagnostics weights;
    WeightDiagnostics unstabilized;
    std::vector<WeightRow> weight_rows;
    std::vector<VariantResult> variants;

    const VariantResult* find(const std::string& variant) const;
};

/// One replicate: simulate training and test cohorts, fit weights, train and
/// evaluate every listed variant. Failures are captured in the result.
ReplicateResult run_replicate(const ExperimentConfig& config, std::size_t index,
                              const std::vector<std::string>& variants);

/// Runs replicates 0..replications-1 over a worker pool (width from config and TVSURV_THREADS).
std::vector<ReplicateResult> run_replicates(const ExperimentConfig& config, const std::vector<std::string>& variants);

struct SummaryRow {
    std::string group;  // e.g. beta value for sweeps, empty otherwise
    std::string variant;
    std::string metric;
    double mean = 0.0;
    double sd = 0.0;
    std::size_t n_ok = 0;
    std::size_t n_failed = 0;
};

std::vector<SummaryRow> summarize(const std::vector<ReplicateResult>& results, const std::vector<std::string>& variants,
                                  const std::string& group = "");

/// Pool width: config.threads (or hardware concurrency), capped by TVSURV_THREADS.
std::size_t worker_count(std::size_t requested, std::size_t tasks);

struct ExperimentOutput {
    std::vector<SummaryRow> summary;
    std::vector<ReplicateResult> replicates;
};

/// Full model only.
ExperimentOutput run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir);
/// All configured ablation variants on identical cohorts and seeds.
ExperimentOutput run_ablation(const ExperimentConfig& config, const std::filesystem::path& out_dir);
/// Full model and the alpha = 0 variant for each feedback strength.
ExperimentOutput run_feedback_sweep(const ExperimentConfig& config, const std::vector<double>& betas,
                                    const std::filesystem::path& out_dir);

void write_summary_csv(const std::filesystem::path& path, const ExperimentConfig& config,
                       const std::vector<SummaryRow>& rows, bool with_group);

}  // namespace tvsurv
