#include "tvsurv/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tvsurv/errors.hpp"

namespace tvsurv {

namespace {

// Trapezoidal integral of f sampled on the boundaries.
double trapezoid(std::span<const double> f, const TimeGrid& grid) {
    double area = 0.0;
    for (std::size_t j = 1; j < f.size(); ++j) {
        area += 0.5 * (f[j - 1] + f[j]) * (grid.boundaries[j] - grid.boundaries[j - 1]);
    }
    return area;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

double tv_pehe(std::span<const EffectCurve> predicted, std::span<const EffectCurve> truth, const TimeGrid& grid,
               bool root, const WeightFn& weight) {
    if (predicted.size() != truth.size()) throw DataError("tv_pehe: predicted and true effects differ in count");
    if (predicted.empty()) throw DataError("tv_pehe: no individuals");
    const std::size_t nb = grid.boundaries.size();
    std::vector<double> w(nb, 1.0);
    if (weight)
        for (std::size_t j = 0; j < nb; ++j) w[j] = weight(grid.boundaries[j]);
    double total = 0.0;
    std::vector<double> sq(nb);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i].size() != nb || truth[i].size() != nb) {
            throw DataError("tv_pehe: effect curve " + std::to_string(i) + " is not aligned with the " +
                            std::to_string(grid.m()) + "-interval grid");
        }
        for (std::size_t j = 0; j < nb; ++j) {
            const double e = predicted[i][j] - truth[i][j];
            sq[j] = w[j] * e * e;
        }
        total += trapezoid(sq, grid);
    }
    const double mean = total / double(predicted.size());
    return root ? std::sqrt(mean) : mean;
}

double tv_pehe(std::span<const EffectCurve> predicted, const TimeGrid& predicted_grid,
               std::span<const EffectCurve> truth, const TimeGrid& truth_grid, bool root) {
    if (!(predicted_grid == truth_grid)) throw DataError("tv_pehe: prediction grid and truth grid differ");
    return tv_pehe(predicted, truth, predicted_grid, root);
}

double c_index(std::span<const double> risk, std::span<const double> times, std::span<const int> events) {
    const std::size_t n = risk.size();
    if (times.size() != n || events.size() != n) throw DataError("c_index: input lengths differ");
    if (n < 2) throw DataError("c_index: need at least two individuals");
    double concordant = 0.0;
    std::size_t comparable = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!events[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (!(times[i] < times[j])) continue;
            ++comparable;
            if (risk[i] > risk[j]) {
                concordant += 1.0;
            } else if (risk[i] == risk[j]) {
                concordant += 0.5;
            }
        }
    }
    if (comparable == 0) throw DataError("c_index: no comparable pairs");
    return concordant / double(comparable);
}

// ---------------------------------------------------------------------------

CensoringKm::CensoringKm(std::span<const double> times, std::span<const int> events) {
    if (times.size() != events.size()) throw DataError("censoring KM: input lengths differ");
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    double g = 1.0;
    std::size_t at_risk = times.size();
    for (std::size_t i = 0; i < order.size();) {
        const double t = times[order[i]];
        std::size_t censored = 0, tied = 0;
        while (i + tied < order.size() && times[order[i + tied]] == t) {
            censored += events[order[i + tied]] ? 0 : 1;
            ++tied;
        }
        if (censored > 0) {
            g *= 1.0 - double(censored) / double(at_risk);
            times_.push_back(t);
            surv_.push_back(g);
        }
        at_risk -= tied;
        i += tied;
    }
}

CensoringKm::CensoringKm(const Cohort& cohort) {
    std::vector<double> t;
    std::vector<int> e;
    for (const auto& tr : cohort.trajectories) {
        t.push_back(tr.observed_time);
        e.push_back(tr.event);
    }
    *this = CensoringKm(t, e);
}

double CensoringKm::at(double t) const {
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    return it == times_.begin() ? 1.0 : surv_[std::size_t(it - times_.begin()) - 1];
}

double CensoringKm::before(double t) const {
    const auto it = std::lower_bound(times_.begin(), times_.end(), t);
    return it == times_.begin() ? 1.0 : surv_[std::size_t(it - times_.begin()) - 1];
}

BrierResult brier(std::span<const double> predicted_at_tau, std::span<const double> times,
                  std::span<const int> events, double tau, const CensoringKm& km) {
    const std::size_t n = predicted_at_tau.size();
    if (times.size() != n || events.size() != n) throw DataError("brier: input lengths differ");
    if (n == 0) throw DataError("brier: no individuals");
    BrierResult out;
    double total = 0.0;
    std::size_t used = 0;
    const double g_tau = km.at(tau);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = predicted_at_tau[i];
        if (times[i] <= tau && events[i]) {
            const double g = km.before(times[i]);
            if (g <= 0.0) {
                ++out.excluded;
                continue;
            }
            total += s * s / g;
        } else if (times[i] > tau) {
            if (g_tau <= 0.0) {
                ++out.excluded;
                continue;
            }
            total += (1.0 - s) * (1.0 - s) / g_tau;
        }
        ++used;  // censored before tau: contributes zero but stays in the denominator
    }
    if (used == 0) throw DataError("brier: every individual has zero censoring weight at tau");
    out.value = total / double(used);
    return out;
}

BrierResult brier(std::span<const double> predicted_at_tau, const Cohort& cohort, double tau, const CensoringKm& km) {
    std::vector<double> t;
    std::vector<int> e;
    for (const auto& tr : cohort.trajectories) {
        t.push_back(tr.observed_time);
        e.push_back(tr.event);
    }
    return brier(predicted_at_tau, t, e, tau, km);
}

IbsResult integrated_brier(std::span<const SurvivalCurve> predicted, const Cohort& cohort, const TimeGrid& grid,
                           const CensoringKm& km) {
    if (predicted.size() != cohort.size()) throw DataError("integrated_brier: predictions not aligned with cohort");
    IbsResult out;
    std::vector<double> s(predicted.size());
    for (std::size_t j = 0; j < grid.boundaries.size(); ++j) {
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            if (predicted[i].intervals() != grid.m()) throw DataError("integrated_brier: curve/grid mismatch");
            s[i] = j == 0 ? 1.0 : predicted[i].survival[j - 1];
        }
        const auto b = brier(s, cohort, grid.boundaries[j], km);
        out.brier.push_back(b.value);
        out.excluded = std::max(out.excluded, b.excluded);
    }
    if (out.excluded > 0) {
        warn("integrated_brier: excluded up to " + std::to_string(out.excluded) +
             " individual(s) with zero censoring weight");
    }
    out.ibs = trapezoid(out.brier, grid) / grid.horizon();
    return out;
}

double irmse(std::span<const SurvivalCurve> predicted, std::span<const SurvivalCurve> truth, const TimeGrid& grid) {
    if (truth.empty()) {
        throw DataError("irmse: no true survival curves; IRMSE needs a simulated cohort with ground truth");
    }
    if (predicted.size() != truth.size()) throw DataError("irmse: predicted and true curves differ in count");
    double total = 0.0;
    std::vector<double> sq(grid.boundaries.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i].intervals() != grid.m() || truth[i].intervals() != grid.m()) {
            throw DataError("irmse: curve " + std::to_string(i) + " is not aligned with the grid");
        }
        const auto a = predicted[i].on_boundaries(), b = truth[i].on_boundaries();
        for (std::size_t j = 0; j < sq.size(); ++j) sq[j] = (a[j] - b[j]) * (a[j] - b[j]);
        total += trapezoid(sq, grid) / grid.horizon();
    }
    return std::sqrt(total / double(predicted.size()));
}

// ---------------------------------------------------------------------------

std::string EvalReport::to_json() const {
    nlohmann::json j = {{"tv_pehe_form", "root"},
                        {"c_index", c_index},
                        {"ibs", ibs},
                        {"brier", brier},
                        {"brier_excluded", brier_excluded},
                        {"grid", grid.boundaries},
                        {"contrast", {contrast_a, contrast_b}}};
    j["tv_pehe"] = tv_pehe ? nlohmann::json(*tv_pehe) : nlohmann::json(nullptr);
    j["irmse"] = irmse ? nlohmann::json(*irmse) : nlohmann::json(nullptr);
    return j.dump();
}

std::string eval_csv_rows(const std::string& variant, const EvalReport& r) {
    std::string out;
    if (r.tv_pehe) out += variant + ",tv_pehe," + fmt(*r.tv_pehe) + "\n";
    out += variant + ",c_index," + fmt(r.c_index) + "\n";
    out += variant + ",ibs," + fmt(r.ibs) + "\n";
    if (r.irmse) out += variant + ",irmse," + fmt(*r.irmse) + "\n";
    return out;
}

}  // namespace tvsurv
