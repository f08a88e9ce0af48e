#include "tvsurv/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "tvsurv/errors.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

namespace {

constexpr std::uint64_t kPilotSeed = 0x7d1f5c3a9b2e4681ULL;
constexpr std::size_t kPilotSize = 4000;
constexpr int kBisectIters = 80;

// Noise for one individual, drawn in a fixed order so that paths under different
// calibration constants share random numbers.
struct PathNoise {
    std::vector<double> x0;
    std::vector<double> treat_uniform;            // K+1
    std::vector<std::vector<double>> transition;  // K entries of d
    double exp_event = 0.0;
    double exp_censor = 0.0;
};

PathNoise draw_noise(std::uint64_t seed, std::size_t index, std::size_t K, std::size_t d) {
    std::mt19937_64 gen(stream_seed(seed, index));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    PathNoise z;
    z.x0.resize(d);
    for (auto& v : z.x0) v = normal(gen);
    z.treat_uniform.resize(K + 1);
    z.transition.assign(K, std::vector<double>(d));
    for (std::size_t k = 0; k <= K; ++k) {
        z.treat_uniform[k] = unif(gen);
        if (k < K) {
            for (auto& v : z.transition[k]) v = Dgp::kNoiseSd * normal(gen);
        }
    }
    z.exp_event = -std::log1p(-unif(gen));
    z.exp_censor = -std::log1p(-unif(gen));
    return z;
}

double logistic(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void build_path(const PathNoise& z, const DgpConfig& cfg, std::span<const double> w_treat, double offset,
                std::vector<std::vector<double>>& x, TreatmentSequence& t) {
    const std::size_t K = cfg.K, d = cfg.d;
    x.assign(K + 1, std::vector<double>(d));
    t.assign(K + 1, 0);
    x[0] = z.x0;
    int prev = 0;
    for (std::size_t k = 0; k <= K; ++k) {
        const double logit =
            cfg.confounding * dot(w_treat, x[k]) + Dgp::kTreatmentPersistence * prev - offset;
        t[k] = z.treat_uniform[k] < logistic(logit) ? 1 : 0;
        if (k < K) {
            for (std::size_t j = 0; j < d; ++j) {
                x[k + 1][j] = Dgp::kAutoregression * x[k][j] + cfg.feedback * t[k] + z.transition[k][j];
            }
        }
        prev = t[k];
    }
}

template <class F>
double bisect(F f, double lo, double hi, double target, bool increasing) {
    for (int it = 0; it < kBisectIters; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double v = f(mid);
        if ((v < target) == increasing) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

// P(C < Y) for exponential censoring at rate c and piecewise-constant event hazards.
double prob_censored_first(std::span<const double> h, double c) {
    double surv = 1.0;  // P(Y > a) * P(C > a) at the piece start a
    double p = 0.0;
    const std::size_t pieces = h.size();
    for (std::size_t k = 0; k <= pieces; ++k) {
        const double hk = h[std::min(k, pieces - 1)];
        const double rate = c + hk;
        if (rate <= 0.0) continue;
        const bool last = k == pieces;
        const double mass = last ? 1.0 : -std::expm1(-rate);
        p += surv * (c / rate) * mass;
        if (!last) surv *= std::exp(-rate);
    }
    return p;
}

}  // namespace

void DgpConfig::validate() const {
    if (n < 1) throw ConfigError("dgp.n must be >= 1");
    if (K < 1) throw ConfigError("dgp.k must be >= 1");
    if (d < 1) throw ConfigError("dgp.d must be >= 1");
    if (!(feedback >= 0.0)) throw ConfigError("dgp.feedback must be >= 0");
    if (!(confounding >= 0.0)) throw ConfigError("dgp.confounding must be >= 0");
    if (!(censor_rate >= 0.0 && censor_rate < 1.0)) throw ConfigError("dgp.censor_rate must be in [0,1)");
    if (m_truth < 2) throw ConfigError("dgp.m_truth must be >= 2");
    if (baseline_hazard && !(*baseline_hazard >= 0.0)) throw ConfigError("baseline hazard override must be >= 0");
}

double cumulative_hazard(std::span<const double> h, double tau) {
    const std::size_t pieces = h.size();
    double H = 0.0;
    for (std::size_t k = 0; k < pieces; ++k) {
        const double a = static_cast<double>(k);
        if (tau <= a) return H;
        H += h[k] * (std::min(tau, a + 1.0) - a);
    }
    const double end = static_cast<double>(pieces);
    if (tau > end) H += h[pieces - 1] * (tau - end);
    return H;
}

double invert_cumulative_hazard(std::span<const double> h, double exp1) {
    double remaining = exp1;
    const std::size_t pieces = h.size();
    for (std::size_t k = 0; k < pieces; ++k) {
        if (h[k] >= remaining) return static_cast<double>(k) + remaining / h[k];
        remaining -= h[k];
    }
    const double tail = h[pieces - 1];
    if (tail <= 0.0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(pieces) + remaining / tail;
}

Dgp::Dgp(DgpConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.d;
    w_treat_.assign(d, 1.0 / std::sqrt(static_cast<double>(d)));
    w_outcome_.resize(d);
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        w_outcome_[j] = static_cast<double>(d - j);
        norm += w_outcome_[j] * w_outcome_[j];
    }
    for (auto& w : w_outcome_) w *= kOutcomeStrength / std::sqrt(norm);

    std::vector<PathNoise> pilot;
    pilot.reserve(kPilotSize);
    for (std::size_t i = 0; i < kPilotSize; ++i) pilot.push_back(draw_noise(kPilotSeed, i, config_.K, d));

    std::vector<std::vector<double>> x;
    TreatmentSequence t;
    if (config_.treatment_offset) {
        calibration_.treatment_offset = *config_.treatment_offset;
    } else {
        auto rate = [&](double offset) {
            double treated = 0.0;
            for (const auto& z : pilot) {
                build_path(z, config_, w_treat_, offset, x, t);
                treated += std::count(t.begin(), t.end(), 1);
            }
            return treated / static_cast<double>(kPilotSize * (config_.K + 1));
        };
        calibration_.treatment_offset = bisect(rate, -40.0, 40.0, 0.5, /*increasing=*/false);
    }

    std::vector<std::vector<double>> pilot_hazards;  // with h0 = 1
    pilot_hazards.reserve(kPilotSize);
    calibration_.baseline_hazard = 1.0;
    for (const auto& z : pilot) {
        build_path(z, config_, w_treat_, calibration_.treatment_offset, x, t);
        pilot_hazards.push_back(step_hazards(x, t));
    }
    if (config_.baseline_hazard) {
        calibration_.baseline_hazard = *config_.baseline_hazard;
    } else {
        std::vector<double> unit_mass;
        for (const auto& h : pilot_hazards) {
            double s = 0.0;
            for (double v : h) s += v;
            unit_mass.push_back(s);
        }
        auto frac_before = [&](double log_h0) {
            const double h0 = std::exp(log_h0);
            double f = 0.0;
            for (double s : unit_mass) f += -std::expm1(-h0 * s);
            return f / static_cast<double>(unit_mass.size());
        };
        calibration_.baseline_hazard =
            std::exp(bisect(frac_before, -60.0, 30.0, kEventFractionBeforeHorizon, /*increasing=*/true));
    }

    if (config_.censor_rate > 0.0) {
        const double h0 = calibration_.baseline_hazard;
        auto censored = [&](double log_c) {
            const double c = std::exp(log_c);
            double p = 0.0;
            std::vector<double> scaled;
            for (const auto& h : pilot_hazards) {
                scaled.resize(h.size());
                for (std::size_t k = 0; k < h.size(); ++k) scaled[k] = h0 * h[k];
                p += prob_censored_first(scaled, c);
            }
            return p / static_cast<double>(pilot_hazards.size());
        };
        calibration_.censor_hazard = std::exp(bisect(censored, -60.0, 30.0, config_.censor_rate, /*increasing=*/true));
    }
}

double Dgp::step_hazard(std::span<const double> x, int a) const {
    double eta = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double v = x[j];
        const double g = config_.nonlinear ? v + 0.5 * std::sin(2.0 * v) + 0.3 * v * v : v;
        eta += w_outcome_[j] * g;
    }
    return calibration_.baseline_hazard * std::exp(eta + kTreatmentLogHazard * a);
}

std::vector<double> Dgp::step_hazards(const std::vector<std::vector<double>>& history,
                                      std::span<const int> sequence) const {
    if (history.size() != sequence.size()) throw DataError("step_hazards: history and sequence lengths differ");
    std::vector<double> h(history.size());
    for (std::size_t k = 0; k < history.size(); ++k) h[k] = step_hazard(history[k], sequence[k]);
    return h;
}

double Dgp::true_survival_at(const std::vector<std::vector<double>>& history, std::span<const int> sequence,
                             double tau) const {
    const auto h = step_hazards(history, sequence);
    return std::exp(-cumulative_hazard(h, tau));
}

SurvivalCurve Dgp::true_survival(const std::vector<std::vector<double>>& history, std::span<const int> sequence,
                                 const TimeGrid& grid) const {
    if (sequence.size() != config_.K + 1) {
        throw DataError("true_survival: sequence length " + std::to_string(sequence.size()) + ", expected " +
                        std::to_string(config_.K + 1));
    }
    const auto h = step_hazards(history, sequence);
    std::vector<double> s(grid.m());
    for (std::size_t j = 1; j <= grid.m(); ++j) s[j - 1] = std::exp(-cumulative_hazard(h, grid.boundaries[j]));
    return SurvivalCurve::from_survival(std::move(s));
}

std::vector<std::vector<double>> Dgp::regime_covariates(const Trajectory& t, std::span<const int> sequence) const {
    auto x = t.covariates;
    // X^a(k) = X(k) + feedback * sum_{l<k} 0.7^{k-1-l} (a_l - T_l)
    std::vector<double> shift(config_.d, 0.0);
    for (std::size_t k = 1; k < x.size(); ++k) {
        const double delta = config_.feedback * (sequence[k - 1] - t.treatments[k - 1]);
        for (std::size_t j = 0; j < config_.d; ++j) {
            shift[j] = kAutoregression * shift[j] + delta;
            x[k][j] += shift[j];
        }
    }
    return x;
}

double Dgp::marginal_survival(const Cohort& cohort, std::span<const int> sequence, double tau) const {
    double s = 0.0;
    for (const auto& t : cohort.trajectories) s += true_survival_at(regime_covariates(t, sequence), sequence, tau);
    return s / static_cast<double>(cohort.size());
}

Cohort Dgp::simulate_raw(std::size_t n, std::uint64_t seed) const {
    Cohort cohort;
    cohort.d = config_.d;
    cohort.K = config_.K;
    cohort.trajectories.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const PathNoise z = draw_noise(seed, i, config_.K, config_.d);
        Trajectory t;
        t.id = "s" + std::to_string(i);
        build_path(z, config_, w_treat_, calibration_.treatment_offset, t.covariates, t.treatments);
        const auto h = step_hazards(t.covariates, t.treatments);
        const double y = invert_cumulative_hazard(h, z.exp_event);
        const double c = calibration_.censor_hazard > 0.0 ? z.exp_censor / calibration_.censor_hazard
                                                          : std::numeric_limits<double>::infinity();
        t.event = y <= c ? 1 : 0;
        t.observed_time = std::min(y, c);
        if (!std::isfinite(t.observed_time)) {
            throw NumericalError("simulate: individual " + t.id + " has an infinite event time (zero hazard, no censoring)");
        }
        cohort.trajectories.push_back(std::move(t));
    }
    return cohort;
}

void Dgp::attach_truth(Cohort& cohort, const TimeGrid& grid, std::span<const TreatmentSequence> sequences) const {
    cohort.ground_truth.clear();
    cohort.truth_grid = grid;
    for (const auto& t : cohort.trajectories) {
        auto& slot = cohort.ground_truth[t.id];
        for (const auto& seq : sequences) slot[sequence_key(seq)] = true_survival(t.covariates, seq, grid);
    }
}

Cohort Dgp::simulate() const {
    Cohort cohort = simulate_raw(config_.n, config_.seed);
    const TimeGrid grid = build_grid(cohort, config_.m_truth, config_.truth_grid);
    const std::vector<TreatmentSequence> contrast{constant_sequence(config_.K + 1, 1),
                                                  constant_sequence(config_.K + 1, 0)};
    attach_truth(cohort, grid, contrast);
    return cohort;
}

Cohort simulate(const DgpConfig& config) { return Dgp(config).simulate(); }

SurvivalCurve true_survival(const DgpConfig& config, const std::vector<std::vector<double>>& history,
                            std::span<const int> sequence, const TimeGrid& grid) {
    return Dgp(config).true_survival(history, sequence, grid);
}

}  // namespace tvsurv
