#pragma once

// Longitudinal cohort data model, file formats, and time discretization.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tvsurv {

using TreatmentSequence = std::vector<int>;

/// "0110" style key for a treatment sequence.
std::string sequence_key(std::span<const int> seq);
/// Inverse of sequence_key; throws DataError on characters other than 0/1.
TreatmentSequence parse_sequence(const std::string& key);
TreatmentSequence constant_sequence(std::size_t length, int value);

/// One individual: X(0..K), T(0..K), Y^c = min(Y, C), delta.
struct Trajectory {
    std::string id;
    std::vector<std::vector<double>> covariates;
    TreatmentSequence treatments;
    double observed_time = 0.0;
    int event = 0;

    std::size_t steps() const { return treatments.size(); }
    /// T(k-1), with -1 standing for "no previous treatment" at k = 0.
    int previous_treatment(std::size_t k) const { return k == 0 ? -1 : treatments[k - 1]; }
};

/// Discrete hazards and survival at the right end of each interval.
struct SurvivalCurve {
    std::vector<double> hazards;
    std::vector<double> survival;

    static SurvivalCurve from_hazards(std::vector<double> hazards);
    static SurvivalCurve from_survival(std::vector<double> survival);

    std::size_t intervals() const { return survival.size(); }
    /// PMF of interval j (0-based): hazard_j * survival_{j-1}.
    double pmf(std::size_t j) const;
    /// Survival on every grid boundary including tau_0 (value 1).
    std::vector<double> on_boundaries() const;
    void validate() const;
};

/// Boundaries 0 = tau_0 < tau_1 < ... < tau_m.
struct TimeGrid {
    std::vector<double> boundaries;

    std::size_t m() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
    double horizon() const { return boundaries.back(); }
    void validate() const;
    bool operator==(const TimeGrid& o) const = default;
};

enum class GridStrategy { Quantile, Uniform };
GridStrategy parse_grid_strategy(const std::string& s);
std::string to_string(GridStrategy s);

struct Cohort {
    std::vector<Trajectory> trajectories;
    std::size_t d = 0;
    std::size_t K = 0;
    // id -> sequence key -> true potential survival on truth_grid
    std::map<std::string, std::map<std::string, SurvivalCurve>> ground_truth;
    std::optional<TimeGrid> truth_grid;

    std::size_t size() const { return trajectories.size(); }
    bool has_truth() const { return !ground_truth.empty(); }
    double max_time() const;
    /// Throws DataError describing the first violated invariant.
    void validate() const;
};

enum class FileFormat { Csv, Jsonl };
FileFormat parse_file_format(const std::string& s);
/// Guesses from the extension (.jsonl / .csv).
FileFormat format_from_path(const std::filesystem::path& p);

/// Sibling outcomes file of a long-format CSV: cohort.csv -> cohort.outcomes.csv.
std::filesystem::path outcomes_path_for(const std::filesystem::path& covariates_csv);

Cohort load_cohort(const std::filesystem::path& path, FileFormat format);
Cohort load_cohort_csv(const std::filesystem::path& covariates, const std::filesystem::path& outcomes);
void save_cohort(const Cohort& cohort, const std::filesystem::path& path, FileFormat format);

TimeGrid build_grid(const Cohort& cohort, std::size_t m, GridStrategy strategy);
TimeGrid build_grid(std::span<const double> times, std::size_t m, GridStrategy strategy);

/// 1-based j with tau_{j-1} <= t < tau_j; t == tau_m maps to m.
std::size_t interval_index(const TimeGrid& grid, double t);

}  // namespace tvsurv
