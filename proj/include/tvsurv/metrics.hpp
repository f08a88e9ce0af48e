#pragma once

// Effect-estimation and survival-prediction metrics.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvsurv/data.hpp"

namespace tvsurv {

using EffectCurve = std::vector<double>;  // value on every grid boundary tau_0..tau_m
using WeightFn = std::function<double(double tau)>;

/// Mean over individuals of the trapezoidal integral of w(tau) (predicted - true)^2
/// over [0, tau_m]; square-rooted when `root` (the reported form).
double tv_pehe(std::span<const EffectCurve> predicted, std::span<const EffectCurve> truth, const TimeGrid& grid,
               bool root = true, const WeightFn& weight = {});
/// Same, with an explicit truth grid that must equal the prediction grid.
double tv_pehe(std::span<const EffectCurve> predicted, const TimeGrid& predicted_grid,
               std::span<const EffectCurve> truth, const TimeGrid& truth_grid, bool root = true);

/// Harrell's concordance. Pair (i, j) is comparable when t_i < t_j and delta_i = 1;
/// it is concordant when risk_i > risk_j, and risk ties count 0.5.
double c_index(std::span<const double> risk, std::span<const double> times, std::span<const int> events);

/// Kaplan-Meier estimate of the censoring survival G(t) = P(C > t).
class CensoringKm {
public:
    CensoringKm(std::span<const double> times, std::span<const int> events);
    explicit CensoringKm(const Cohort& cohort);
    /// G(t), right-continuous.
    double at(double t) const;
    /// G(t-), the value just before t.
    double before(double t) const;

private:
    std::vector<double> times_;  // distinct censoring times
    std::vector<double> surv_;   // G at those times
};

struct BrierResult {
    double value = 0.0;
    std::size_t excluded = 0;  // individuals dropped for a zero censoring weight
};

/// IPCW (Graf) Brier score at tau for predicted S(tau | x_i).
BrierResult brier(std::span<const double> predicted_at_tau, std::span<const double> times,
                  std::span<const int> events, double tau, const CensoringKm& km);
BrierResult brier(std::span<const double> predicted_at_tau, const Cohort& cohort, double tau, const CensoringKm& km);

struct IbsResult {
    double ibs = 0.0;
    std::vector<double> brier;  // per boundary tau_0..tau_m
    std::size_t excluded = 0;   // max over boundaries
};

/// Trapezoidal average of the Brier score over the grid boundaries, divided by tau_m.
IbsResult integrated_brier(std::span<const SurvivalCurve> predicted, const Cohort& cohort, const TimeGrid& grid,
                           const CensoringKm& km);

/// sqrt(mean_i (1/tau_m) * integral (S_hat - S*)^2), trapezoidal over the boundaries.
double irmse(std::span<const SurvivalCurve> predicted, std::span<const SurvivalCurve> truth, const TimeGrid& grid);

struct EvalReport {
    std::optional<double> tv_pehe;  // needs ground truth
    double c_index = 0.0;
    double ibs = 0.0;
    std::optional<double> irmse;
    std::vector<double> brier;  // per boundary
    std::size_t brier_excluded = 0;
    TimeGrid grid;
    std::string contrast_a;
    std::string contrast_b;

    std::string to_json() const;
};

/// One CSV row per metric: variant,metric,value.
std::string eval_csv_rows(const std::string& variant, const EvalReport& report);

}  // namespace tvsurv
