#pragma once

// Synthetic longitudinal cohort generator with closed-form potential survival.
//
// Process, per individual:
//   X(0) ~ N(0, I_d)
//   T(k) ~ Bernoulli(sigmoid(confounding * <w_T, X(k)> + 0.5 T(k-1) - offset)),  T(-1) = 0
//   X(k+1) = 0.7 X(k) + feedback * T(k) * 1 + eps,  eps ~ N(0, 0.3^2 I)
//   hazard on [k, k+1): h0 * exp(<w_Y, g(X(k))> - 0.8 T(k)); step K's hazard continues past K+1
//   C ~ Exp(censor hazard), independent
// g is the identity in linear mode and x + 0.5 sin(2x) + 0.3 x^2 elementwise otherwise.
// offset, h0 and the censoring hazard are calibrated on a fixed pilot sample so that
// the marginal treatment rate is about 0.5, about 70% of uncensored events occur
// before K+1, and the censored fraction matches censor_rate.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tvsurv/data.hpp"

namespace tvsurv {

struct DgpConfig {
    std::size_t n = 5000;
    std::size_t K = 8;
    std::size_t d = 10;
    double feedback = 0.5;     // treatment -> next covariate strength
    double confounding = 1.0;  // covariate -> treatment strength
    bool nonlinear = true;
    double censor_rate = 0.3;
    std::uint64_t seed = 1;
    std::size_t m_truth = 20;
    GridStrategy truth_grid = GridStrategy::Quantile;
    // Overrides for calibrated quantities (tests and what-if runs).
    std::optional<double> baseline_hazard;
    std::optional<double> treatment_offset;

    void validate() const;
};

struct DgpCalibration {
    double treatment_offset = 0.0;
    double baseline_hazard = 0.0;
    double censor_hazard = 0.0;  // 0 means no censoring
};

class Dgp {
public:
    static constexpr double kAutoregression = 0.7;
    static constexpr double kNoiseSd = 0.3;
    static constexpr double kTreatmentPersistence = 0.5;
    static constexpr double kTreatmentLogHazard = -0.8;
    static constexpr double kOutcomeStrength = 0.5;
    static constexpr double kEventFractionBeforeHorizon = 0.7;

    explicit Dgp(DgpConfig config);

    const DgpConfig& config() const { return config_; }
    const DgpCalibration& calibration() const { return calibration_; }
    const std::vector<double>& treatment_direction() const { return w_treat_; }
    const std::vector<double>& outcome_weights() const { return w_outcome_; }

    /// n trajectories with truth for all-treat and never-treat on the truth grid.
    Cohort simulate() const;
    /// Same process with a different seed/size; truth curves are not attached.
    Cohort simulate_raw(std::size_t n, std::uint64_t seed) const;

    /// Hazard rate on [k, k+1) for covariates x under treatment a.
    double step_hazard(std::span<const double> x, int a) const;
    /// Per-step hazards h_0..h_K for a covariate history under a sequence.
    std::vector<double> step_hazards(const std::vector<std::vector<double>>& history, std::span<const int> sequence) const;
    /// Exact S(tau_j | history, sequence) on the grid.
    SurvivalCurve true_survival(const std::vector<std::vector<double>>& history, std::span<const int> sequence,
                                const TimeGrid& grid) const;
    double true_survival_at(const std::vector<std::vector<double>>& history, std::span<const int> sequence,
                            double tau) const;

    /// Covariate path the individual would have had under `sequence`, sharing the
    /// same noise draws as the observed path.
    std::vector<std::vector<double>> regime_covariates(const Trajectory& t, std::span<const int> sequence) const;
    /// Cohort average of S(tau | regime covariates, sequence): P(Y(sequence) > tau).
    double marginal_survival(const Cohort& cohort, std::span<const int> sequence, double tau) const;

    /// Adds truth curves for the given sequences on `grid` (replaces existing truth).
    void attach_truth(Cohort& cohort, const TimeGrid& grid, std::span<const TreatmentSequence> sequences) const;

private:
    DgpConfig config_;
    DgpCalibration calibration_;
    std::vector<double> w_treat_;
    std::vector<double> w_outcome_;
};

/// Cumulative hazard of the piecewise-constant step hazards at time tau.
double cumulative_hazard(std::span<const double> step_hazards, double tau);
/// Event time whose cumulative hazard equals `exp1` (an Exp(1) draw).
double invert_cumulative_hazard(std::span<const double> step_hazards, double exp1);

Cohort simulate(const DgpConfig& config);
SurvivalCurve true_survival(const DgpConfig& config, const std::vector<std::vector<double>>& history,
                            std::span<const int> sequence, const TimeGrid& grid);

}  // namespace tvsurv
