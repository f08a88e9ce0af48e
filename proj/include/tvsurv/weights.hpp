#pragma once

// Time-varying propensity models and stabilized sequential weights.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tvsurv/data.hpp"

namespace tvsurv {

struct LogisticFit {
    std::vector<double> coef;
    double intercept = 0.0;
    std::size_t iterations = 0;
    bool converged = false;

    double logit(std::span<const double> features) const;
};

/// Denominator models e_k(t | X(k), T(k-1)) and numerator models p_k(t | T(k-1)).
/// Pooled fits share one model across k with a one-hot step encoding (k = 0 is the
/// reference level); per-step fits hold K+1 models.
struct PropensityModel {
    bool pooled = true;
    std::size_t d = 0;
    std::size_t K = 0;
    std::vector<LogisticFit> denominator;
    std::vector<LogisticFit> numerator;

    /// P(T(k) = 1 | X(k), T(k-1)).
    double denominator_prob(const Trajectory& t, std::size_t k) const;
    /// P(T(k) = 1 | T(k-1)).
    double numerator_prob(const Trajectory& t, std::size_t k) const;

    std::vector<double> denominator_features(const Trajectory& t, std::size_t k) const;
    std::vector<double> numerator_features(const Trajectory& t, std::size_t k) const;
};

struct PropensityOptions {
    bool pooled = true;
    double l2 = 0.0;
    double tolerance = 1e-6;
    std::size_t max_iterations = 5000;
};

PropensityModel fit_propensity(const Cohort& cohort, const PropensityOptions& options = {});

/// Maximum-likelihood logistic regression of y on rows of x, penalized by l2 * |coef|^2.
/// Throws DataError on separation (|parameter| > 30 with l2 = 0).
LogisticFit fit_logistic(const std::vector<std::vector<double>>& x, std::span<const int> y, double l2,
                         double tolerance = 1e-6, std::size_t max_iterations = 5000);

struct WeightRow {
    std::string id;
    double raw = 1.0;           // stabilized
    double trimmed = 1.0;       // stabilized, clipped
    double unstabilized = 1.0;  // 1 / prod e_k
    double unstabilized_trimmed = 1.0;
    std::vector<double> factors;  // p_k / e_k of the observed treatment
    int positivity_warnings = 0;  // steps with e_k outside (1e-6, 1 - 1e-6)
};

struct WeightTable {
    std::vector<WeightRow> rows;
    double lower_q = 0.0;
    double upper_q = 1.0;

    std::size_t size() const { return rows.size(); }
    std::vector<double> column(double WeightRow::*field) const;
};

WeightTable stabilized_weights(const Cohort& cohort, const PropensityModel& model);

/// Clips the trimmed columns to the [lower_q, upper_q] empirical quantiles of the
/// corresponding raw columns.
WeightTable trim_weights(const WeightTable& table, double lower_q, double upper_q);

/// Inverse-ECDF quantile (an order statistic, so trimming twice changes nothing).
double empirical_quantile(std::vector<double> values, double q);

struct WeightDiagnostics {
    double mean = 0.0;
    double variance = 0.0;
    double max = 0.0;
    double ess = 0.0;
    std::size_t positivity_warnings = 0;
    std::size_t n = 0;
};

WeightDiagnostics weight_diagnostics(std::span<const double> weights);
WeightDiagnostics weight_diagnostics(const WeightTable& table, double WeightRow::*field = &WeightRow::trimmed);

/// CSV with columns id,w_raw,w_trimmed,w_unstabilized,w_unstabilized_trimmed,positivity_warnings.
void save_weights_csv(const WeightTable& table, const std::filesystem::path& path);
/// Reads the CSV written by save_weights_csv; only id, w_raw and w_trimmed are required.
WeightTable load_weights_csv(const std::filesystem::path& path);

/// Hajek-normalized IPTW estimate of P(Y(sequence) > tau) among followers of the
/// sequence. Followers censored before tau make the estimate undefined (DataError).
double hajek_survival(const Cohort& cohort, std::span<const double> weights, std::span<const int> sequence,
                      double tau);

}  // namespace tvsurv
