#pragma once

// Weighted survival likelihood, MMD balancing, and the Adam training loop.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvsurv/autodiff.hpp"
#include "tvsurv/data.hpp"
#include "tvsurv/model.hpp"
#include "tvsurv/weights.hpp"

namespace tvsurv {

enum class PairStrategy { FinalTreatment, LastStepFlip };
enum class WeightsMode { Stabilized, Unstabilized, Unit };

PairStrategy parse_pair_strategy(const std::string& s);
WeightsMode parse_weights_mode(const std::string& s);
std::string to_string(PairStrategy s);
std::string to_string(WeightsMode m);

struct TrainConfig {
    double alpha = 0.3;
    double beta_reg = 1e-4;
    std::optional<double> kernel_sigma;  // empty: median heuristic per batch
    PairStrategy pair_strategy = PairStrategy::FinalTreatment;
    bool unbiased_mmd = false;
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    WeightsMode weights_mode = WeightsMode::Stabilized;
    // Encoder and representation parameters receive no updates when set.
    bool freeze_representation = false;
    // Per-group cap on the representations used for the epoch-end MMD diagnostic.
    std::size_t diagnostic_cap = 500;

    void validate() const;
};

/// Biased V-statistic (or unbiased U-statistic) estimate of MMD^2 with an RBF kernel.
ad::Var mmd2(const ad::Var& a, const ad::Var& b, double sigma, bool unbiased = false);
double mmd2(const ad::Tensor& a, const ad::Tensor& b, double sigma, bool unbiased = false);

/// Median pairwise Euclidean distance between rows; 1.0 when that is (near) zero.
double median_bandwidth(const ad::Tensor& z);

/// Grouping key of a trajectory under a pair strategy.
std::string group_key(const Trajectory& t, PairStrategy strategy);

struct PairMmd {
    std::string group_a;
    std::string group_b;
    double mmd = 0.0;
};

struct BalanceInfo {
    std::vector<PairMmd> pairs;
    std::size_t skipped_groups = 0;
    double sigma = 0.0;
};

/// Sum of MMD^2 over the strategy's compared group pairs within a batch. Groups
/// with fewer than two members are skipped; with no valid pair the result is 0.
ad::Var balance_loss(const ad::Var& z, std::span<const Trajectory* const> rows, PairStrategy strategy,
                     std::optional<double> sigma, bool unbiased = false, BalanceInfo* info = nullptr,
                     bool quiet = false);

/// -(1/B) sum_i w_i [delta_i log f(tau_{j_i}) + (1 - delta_i) log S(tau_{j_i})] under factual sequences.
ad::Var survival_nll(const Model& model, const ad::Var& z, std::span<const Trajectory* const> rows,
                     std::span<const double> weights);
ad::Var survival_nll(const Model& model, std::span<const Trajectory* const> rows, std::span<const double> weights);

/// Sum of squared regularized parameters (biases and the start embedding excluded).
ad::Var l2_penalty(const Model& model);

/// Combined objective L_surv + alpha L_bal + beta_reg L_reg on one batch.
ad::Var combined_loss(const Model& model, std::span<const Trajectory* const> rows, std::span<const double> weights,
                      const TrainConfig& config);

/// Per-individual training weights aligned with the cohort, rescaled to mean 1.
std::vector<double> training_weights(const Cohort& cohort, const WeightTable* table, WeightsMode mode);

struct EpochReport {
    std::size_t epoch = 0;
    int phase = 1;
    double l_surv = 0.0;
    double l_bal = 0.0;
    double l_reg = 0.0;
    double total = 0.0;
    double weight_mean = 0.0;
    double weight_max = 0.0;
    std::vector<PairMmd> pair_mmd;
    double mmd_total = 0.0;
    std::size_t skipped_groups = 0;

    std::string to_json() const;
};

/// Representation discrepancy over the whole cohort (capped per group), median bandwidth.
std::vector<PairMmd> representation_mmd(const Model& model, const Cohort& cohort, PairStrategy strategy,
                                        std::size_t cap);

class Adam {
public:
    Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2, double eps);
    void step();

private:
    std::vector<ad::Var> params_;
    std::vector<ad::Tensor> m_, v_;
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
};

/// Minibatch order for one epoch: indices stratified by group key so each
/// sizable group reaches every batch with at least two members.
std::vector<std::vector<std::size_t>> make_batches(const Cohort& cohort, PairStrategy strategy,
                                                   std::size_t batch_size, std::uint64_t seed, std::size_t epoch);

struct TrainResult {
    Model model;
    std::vector<EpochReport> epochs;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Trains `model` in place. `weights` is aligned with cohort.trajectories.
std::vector<EpochReport> train(Model& model, const Cohort& cohort, const TrainConfig& config,
                               std::span<const double> weights, const EpochCallback& on_epoch = {}, int phase = 1);

TrainResult train(const Cohort& cohort, const TimeGrid& grid, const ModelConfig& model_config,
                  const TrainConfig& config, const WeightTable* table, const EpochCallback& on_epoch = {});

/// Two-phase variant: encoder and representation trained on the unweighted,
/// unbalanced likelihood, then frozen while a freshly initialized head is trained
/// with the configured weights and balancing.
TrainResult train_fixed_representation(const Cohort& cohort, const TimeGrid& grid, const ModelConfig& model_config,
                                       const TrainConfig& config, const WeightTable* table,
                                       const EpochCallback& on_epoch = {});

}  // namespace tvsurv
