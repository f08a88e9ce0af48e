#include "tvsurv/weights.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "tvsurv/autodiff.hpp"
#include "tvsurv/errors.hpp"

namespace tvsurv {

namespace {

constexpr double kProbClamp = 1e-6;
constexpr double kSeparationBound = 30.0;

double logistic(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

}  // namespace

double LogisticFit::logit(std::span<const double> features) const {
    double s = intercept;
    for (std::size_t i = 0; i < coef.size(); ++i) s += coef[i] * features[i];
    return s;
}

LogisticFit fit_logistic(const std::vector<std::vector<double>>& x, std::span<const int> y, double l2,
                         double tolerance, std::size_t max_iterations) {
    if (x.empty()) throw DataError("fit_logistic: no rows");
    if (x.size() != y.size()) throw DataError("fit_logistic: feature/label row counts differ");
    if (l2 < 0.0) throw ConfigError("fit_logistic: l2 must be >= 0");
    const std::size_t n = x.size(), p = x[0].size();

    ad::Tensor design(n, p);
    ad::Tensor label(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) design(i, j) = x[i][j];
        label(i, 0) = y[i];
    }
    const ad::Var X = ad::constant(design);
    const ad::Var Y = ad::constant(label);
    const ad::Var notY = ad::constant([&] {
        ad::Tensor t(n, 1);
        for (std::size_t i = 0; i < n; ++i) t(i, 0) = 1.0 - label(i, 0);
        return t;
    }());

    std::vector<ad::Var> params{ad::parameter(ad::Tensor(p, 1)), ad::parameter(ad::Tensor(1, 1))};
    // negative penalized mean log-likelihood
    auto objective = [&]() {
        const ad::Var logits = ad::matmul(X, params[0]) + params[1];
        const ad::Var ll = Y * ad::log(ad::sigmoid(logits)) + notY * ad::log(ad::sigmoid(ad::scale(logits, -1.0)));
        ad::Var obj = ad::scale(ad::mean(ll), -1.0);
        if (l2 > 0.0) obj = obj + ad::scale(ad::sum(ad::square(params[0])), l2);
        return obj;
    };

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Xm(design.data().data(),
                                                                                                 Eigen::Index(n), Eigen::Index(p));
    LogisticFit fit;
    fit.coef.assign(p, 0.0);
    double current = 0.0;
    {
        ad::NoGradGuard guard;
        current = objective().item();
    }
    for (std::size_t it = 0; it < max_iterations; ++it) {
        ad::zero_grads(params);
        ad::backward(objective());
        Eigen::VectorXd grad(p + 1);
        for (std::size_t j = 0; j < p; ++j) grad(Eigen::Index(j)) = params[0].grad()[j];
        grad(Eigen::Index(p)) = params[1].grad()[0];

        // Hessian of the negative mean log-likelihood (intercept last).
        Eigen::VectorXd wts(n);
        for (std::size_t i = 0; i < n; ++i) {
            double l = params[1].value()[0];
            for (std::size_t j = 0; j < p; ++j) l += design(i, j) * params[0].value()[j];
            const double pr = logistic(l);
            wts(Eigen::Index(i)) = pr * (1.0 - pr) / static_cast<double>(n);
        }
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(Eigen::Index(p + 1), Eigen::Index(p + 1));
        H.topLeftCorner(Eigen::Index(p), Eigen::Index(p)) = Xm.transpose() * wts.asDiagonal() * Xm;
        const Eigen::VectorXd xw = Xm.transpose() * wts;
        H.block(0, Eigen::Index(p), Eigen::Index(p), 1) = xw;
        H.block(Eigen::Index(p), 0, 1, Eigen::Index(p)) = xw.transpose();
        H(Eigen::Index(p), Eigen::Index(p)) = wts.sum();
        for (std::size_t j = 0; j < p; ++j) H(Eigen::Index(j), Eigen::Index(j)) += 2.0 * l2;
        H.diagonal().array() += 1e-10;
        const Eigen::VectorXd step = H.ldlt().solve(grad);

        // Backtracking keeps the objective monotone.
        std::vector<double> base_coef(params[0].value().vec());
        const double base_b = params[1].value()[0];
        double t = 1.0, next = current;
        for (int bt = 0; bt < 40; ++bt) {
            for (std::size_t j = 0; j < p; ++j) params[0].mutable_value()[j] = base_coef[j] - t * step(Eigen::Index(j));
            params[1].mutable_value()[0] = base_b - t * step(Eigen::Index(p));
            ad::NoGradGuard guard;
            next = objective().item();
            if (next <= current + 1e-12) break;
            t *= 0.5;
        }
        current = next;
        fit.iterations = it + 1;

        const double gmax = grad.cwiseAbs().maxCoeff();
        const double smax = t * step.cwiseAbs().maxCoeff();
        const double pmax = std::max(params[0].value().max_abs(), std::abs(params[1].value()[0]));
        if (l2 == 0.0 && pmax > kSeparationBound) {
            throw DataError("fit_logistic: perfect separation detected (|parameter| > 30); refit with l2 > 0");
        }
        if (!std::isfinite(current)) throw NumericalError("fit_logistic: non-finite likelihood");
        if (gmax < tolerance && smax < tolerance) {
            fit.converged = true;
            break;
        }
    }
    fit.coef = params[0].value().vec();
    fit.intercept = params[1].value()[0];
    if (!fit.converged) warn("fit_logistic: no convergence after " + std::to_string(max_iterations) + " iterations");
    return fit;
}

// ---------------------------------------------------------------------------

std::vector<double> PropensityModel::denominator_features(const Trajectory& t, std::size_t k) const {
    std::vector<double> f(t.covariates[k].begin(), t.covariates[k].end());
    f.push_back(k == 0 ? 0.0 : t.treatments[k - 1]);
    if (pooled) {
        for (std::size_t s = 1; s <= K; ++s) f.push_back(s == k ? 1.0 : 0.0);
    }
    return f;
}

std::vector<double> PropensityModel::numerator_features(const Trajectory& t, std::size_t k) const {
    std::vector<double> f{k == 0 ? 0.0 : static_cast<double>(t.treatments[k - 1])};
    if (pooled) {
        for (std::size_t s = 1; s <= K; ++s) f.push_back(s == k ? 1.0 : 0.0);
    }
    return f;
}

double PropensityModel::denominator_prob(const Trajectory& t, std::size_t k) const {
    const auto& m = denominator[pooled ? 0 : k];
    return logistic(m.logit(denominator_features(t, k)));
}

double PropensityModel::numerator_prob(const Trajectory& t, std::size_t k) const {
    const auto& m = numerator[pooled ? 0 : k];
    return logistic(m.logit(numerator_features(t, k)));
}

PropensityModel fit_propensity(const Cohort& cohort, const PropensityOptions& options) {
    if (cohort.size() == 0) throw DataError("fit_propensity: empty cohort");
    if (options.l2 < 0.0) throw ConfigError("fit_propensity: l2 must be >= 0");
    PropensityModel model;
    model.pooled = options.pooled;
    model.d = cohort.d;
    model.K = cohort.K;

    const std::size_t groups = options.pooled ? 1 : cohort.K + 1;
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<std::vector<double>> xd, xn;
        std::vector<int> y;
        for (std::size_t k = 0; k <= cohort.K; ++k) {
            if (!options.pooled && k != g) continue;
            for (const auto& t : cohort.trajectories) {
                xd.push_back(model.denominator_features(t, k));
                xn.push_back(model.numerator_features(t, k));
                y.push_back(t.treatments[k]);
            }
        }
        model.denominator.push_back(fit_logistic(xd, y, options.l2, options.tolerance, options.max_iterations));
        model.numerator.push_back(fit_logistic(xn, y, options.l2, options.tolerance, options.max_iterations));
    }
    return model;
}

// ---------------------------------------------------------------------------

std::vector<double> WeightTable::column(double WeightRow::*field) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.*field);
    return out;
}

WeightTable stabilized_weights(const Cohort& cohort, const PropensityModel& model) {
    if (model.d != cohort.d || model.K != cohort.K) {
        throw DataError("stabilized_weights: propensity model was fitted on a cohort with different d or K");
    }
    WeightTable table;
    table.rows.reserve(cohort.size());
    for (const auto& t : cohort.trajectories) {
        WeightRow row;
        row.id = t.id;
        double w = 1.0, wu = 1.0;
        for (std::size_t k = 0; k <= cohort.K; ++k) {
            const double e1 = model.denominator_prob(t, k);
            const double p1 = model.numerator_prob(t, k);
            const int a = t.treatments[k];
            double e = a ? e1 : 1.0 - e1;
            double p = a ? p1 : 1.0 - p1;
            if (!(e1 > kProbClamp && e1 < 1.0 - kProbClamp)) ++row.positivity_warnings;
            e = std::clamp(e, kProbClamp, 1.0 - kProbClamp);
            p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
            row.factors.push_back(p / e);
            w *= p / e;
            wu /= e;
        }
        row.raw = row.trimmed = w;
        row.unstabilized = row.unstabilized_trimmed = wu;
        table.rows.push_back(std::move(row));
    }
    return table;
}

double empirical_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("empirical_quantile: empty input");
    std::sort(values.begin(), values.end());
    // inverse ECDF: smallest order statistic with at least q*n values at or below it
    const double rank = std::ceil(q * static_cast<double>(values.size()) - 1e-9);
    const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size())));
    return values[idx - 1];
}

WeightTable trim_weights(const WeightTable& table, double lower_q, double upper_q) {
    if (!(lower_q >= 0.0 && lower_q < upper_q && upper_q <= 1.0)) {
        throw ConfigError("trim_weights: need 0 <= lower_q < upper_q <= 1");
    }
    WeightTable out = table;
    out.lower_q = lower_q;
    out.upper_q = upper_q;
    if (table.rows.empty()) return out;
    const auto raw = table.column(&WeightRow::raw);
    const auto unstab = table.column(&WeightRow::unstabilized);
    const double lo = empirical_quantile(raw, lower_q), hi = empirical_quantile(raw, upper_q);
    const double ulo = empirical_quantile(unstab, lower_q), uhi = empirical_quantile(unstab, upper_q);
    for (auto& r : out.rows) {
        r.trimmed = std::clamp(r.raw, lo, hi);
        r.unstabilized_trimmed = std::clamp(r.unstabilized, ulo, uhi);
    }
    return out;
}

WeightDiagnostics weight_diagnostics(std::span<const double> weights) {
    if (weights.empty()) throw DataError("weight_diagnostics: empty table");
    WeightDiagnostics d;
    d.n = weights.size();
    double s = 0.0, s2 = 0.0;
    d.max = weights[0];
    for (double w : weights) {
        s += w;
        s2 += w * w;
        d.max = std::max(d.max, w);
    }
    d.mean = s / static_cast<double>(d.n);
    double ss = 0.0;
    for (double w : weights) ss += (w - d.mean) * (w - d.mean);
    d.variance = d.n > 1 ? ss / static_cast<double>(d.n - 1) : 0.0;
    d.ess = s2 > 0.0 ? s * s / s2 : 0.0;
    return d;
}

WeightDiagnostics weight_diagnostics(const WeightTable& table, double WeightRow::*field) {
    const auto col = table.column(field);
    WeightDiagnostics d = weight_diagnostics(col);
    for (const auto& r : table.rows) d.positivity_warnings += static_cast<std::size_t>(r.positivity_warnings);
    return d;
}

void save_weights_csv(const WeightTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    auto f = [](double v) {
        char buf[32];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, ptr);
    };
    out << "id,w_raw,w_trimmed,w_unstabilized,w_unstabilized_trimmed,positivity_warnings\n";
    for (const auto& r : table.rows) {
        out << r.id << ',' << f(r.raw) << ',' << f(r.trimmed) << ',' << f(r.unstabilized) << ','
            << f(r.unstabilized_trimmed) << ',' << r.positivity_warnings << '\n';
    }
}

WeightTable load_weights_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream is(line);
        while (std::getline(is, cell, ',')) cells.push_back(cell);
        return cells;
    };
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> col;
    WeightTable table;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto cells = split(line);
        if (col.empty()) {
            for (std::size_t i = 0; i < cells.size(); ++i) col[cells[i]] = i;
            for (const char* need : {"id", "w_raw", "w_trimmed"}) {
                if (!col.count(need)) throw DataError(path.string() + ": missing column '" + need + "'");
            }
            continue;
        }
        const std::string where = path.string() + " row " + std::to_string(lineno);
        auto number = [&](const char* name, double fallback) {
            const auto it = col.find(name);
            if (it == col.end()) return fallback;
            if (it->second >= cells.size()) throw DataError(where + ": missing field '" + name + "'");
            const std::string& s = cells[it->second];
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
                throw DataError(where + ": field '" + name + "' value '" + s + "' is not a number");
            }
            if (!(v > 0.0) || !std::isfinite(v)) throw DataError(where + ": field '" + name + "' must be positive");
            return v;
        };
        WeightRow r;
        r.id = cells[col["id"]];
        r.raw = number("w_raw", 1.0);
        r.trimmed = number("w_trimmed", r.raw);
        r.unstabilized = number("w_unstabilized", r.raw);
        r.unstabilized_trimmed = number("w_unstabilized_trimmed", r.unstabilized);
        if (const auto it = col.find("positivity_warnings"); it != col.end() && it->second < cells.size()) {
            const std::string& s = cells[it->second];
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), r.positivity_warnings);
            if (ec != std::errc() || ptr != s.data() + s.size()) {
                throw DataError(where + ": field 'positivity_warnings' value '" + s + "' is not an integer");
            }
        }
        table.rows.push_back(std::move(r));
    }
    if (table.rows.empty()) throw DataError(path.string() + ": no weight rows");
    return table;
}

double hajek_survival(const Cohort& cohort, std::span<const double> weights, std::span<const int> sequence,
                      double tau) {
    if (weights.size() != cohort.size()) throw DataError("hajek_survival: weights not aligned with cohort");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& t = cohort.trajectories[i];
        if (!std::equal(t.treatments.begin(), t.treatments.end(), sequence.begin(), sequence.end())) continue;
        if (!t.event && t.observed_time <= tau) {
            throw DataError("hajek_survival: individual '" + t.id + "' is censored before tau");
        }
        den += weights[i];
        if (t.observed_time > tau) num += weights[i];
    }
    if (den <= 0.0) throw DataError("hajek_survival: no individual follows sequence " + sequence_key(sequence));
    return num / den;
}

}  // namespace tvsurv
