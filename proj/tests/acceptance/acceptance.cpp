// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// nonzero when any selected criterion fails.
//
//   tvsurv_acceptance                 all criteria
//   tvsurv_acceptance 2 5 9           a subset
//   tvsurv_acceptance --xfail 7,8     failures of 7 and 8 are still printed as FAIL
//                                     but do not change the exit code

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tvsurv/dgp.hpp"
#include "tvsurv/experiment.hpp"
#include "tvsurv/metrics.hpp"
#include "tvsurv/model.hpp"
#include "tvsurv/training.hpp"
#include "tvsurv/weights.hpp"

using namespace tvsurv;
using ad::Tensor;
using ad::Var;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void progress(const std::string& msg) { std::fprintf(stderr, "  .. %s\n", msg.c_str()); }

TimeGrid uniform_grid(std::size_t m, double horizon) {
    TimeGrid g;
    for (std::size_t j = 0; j <= m; ++j) g.boundaries.push_back(horizon * double(j) / double(m));
    return g;
}

std::vector<const Trajectory*> pointers(const Cohort& c) {
    std::vector<const Trajectory*> out;
    for (const auto& t : c.trajectories) out.push_back(&t);
    return out;
}

Tensor random_points(std::size_t n, std::size_t p, std::mt19937_64& rng) {
    std::normal_distribution<double> z;
    Tensor t(n, p);
    for (auto& v : t.data()) v = z(rng);
    return t;
}

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Encoder: return "encoder";
        case ParamGroup::Representation: return "representation";
        case ParamGroup::Head: return "head";
    }
    return "?";
}

// 1. Gradient of the combined loss against central differences, per parameter group.
Outcome gradient_check() {
    DgpConfig dc;
    dc.n = 4;
    dc.K = 3;
    dc.d = 2;
    const Cohort cohort = Dgp(dc).simulate_raw(4, 11);
    double horizon = 0.0;
    for (const auto& t : cohort.trajectories) horizon = std::max(horizon, t.observed_time);
    const TimeGrid grid = uniform_grid(5, horizon * 1.01);
    const auto rows = pointers(cohort);
    const std::vector<double> w{0.6, 1.4, 0.8, 1.2};

    TrainConfig tc;
    tc.alpha = 0.5;
    tc.beta_reg = 0.01;
    tc.kernel_sigma = 1.1;  // the median bandwidth is held constant under differentiation

    bool pass = true;
    std::string detail;
    for (EncoderKind enc : {EncoderKind::Gru, EncoderKind::Flat}) {
        for (PairStrategy ps : {PairStrategy::FinalTreatment, PairStrategy::LastStepFlip}) {
            ModelConfig mc;
            mc.d = 2;
            mc.K = 3;
            mc.m = 5;
            mc.hidden = 5;
            mc.repr_dim = 4;
            mc.head_hidden = 6;
            mc.treat_embed_dim = 3;
            mc.seed = 5;
            mc.encoder = enc;
            Model model(mc, grid);
            tc.pair_strategy = ps;
            for (ParamGroup g : {ParamGroup::Encoder, ParamGroup::Representation, ParamGroup::Head}) {
                auto vars = model.group_vars(g);
                const auto rep =
                    ad::grad_check([&] { return combined_loss(model, rows, w, tc); }, vars, 1e-6, 1e-4);
                pass = pass && rep.passed;
                if (enc == EncoderKind::Gru && ps == PairStrategy::FinalTreatment)
                    detail += fmt("%s %.1e ", group_name(g), rep.max_rel_deviation);
                if (!rep.passed)
                    detail += fmt("[FAILED %s/%s/%s %.3e] ", to_string(enc).c_str(), to_string(ps).c_str(),
                                  group_name(g), rep.max_rel_deviation);
            }
        }
    }
    return {pass, "max rel deviation " + detail + "(also flattened encoder, last_step_flip pairs)"};
}

// 2. MMD against a brute-force double loop.
double mmd_oracle(const Tensor& a, const Tensor& b, double sigma) {
    auto k = [&](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) d2 += (x(i, c) - y(j, c)) * (x(i, c) - y(j, c));
        return std::exp(-d2 / (2.0 * sigma * sigma));
    };
    double aa = 0, bb = 0, ab = 0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.rows(); ++j) aa += k(a, i, a, j);
    for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) bb += k(b, i, b, j);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) ab += k(a, i, b, j);
    const double n = double(a.rows()), m = double(b.rows());
    return aa / (n * n) + bb / (m * m) - 2.0 * ab / (n * m);
}

Outcome mmd_oracle_check() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> size(1, 30);
    std::uniform_real_distribution<double> sig(0.3, 3.0);
    double worst = 0.0, worst_ident = 0.0, worst_single = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t p = 1 + trial % 5;
        const Tensor a = random_points(size(rng), p, rng);
        const Tensor b = random_points(size(rng), p, rng);
        const double s = sig(rng);
        worst = std::max(worst, std::abs(mmd2(a, b, s) - mmd_oracle(a, b, s)));
        // the autodiff path must agree with the plain one
        worst = std::max(worst, std::abs(mmd2(ad::constant(a), ad::constant(b), s).value().item() - mmd_oracle(a, b, s)));

        Tensor perm(a.rows(), p);
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t c = 0; c < p; ++c) perm(i, c) = a(a.rows() - 1 - i, c);
        worst_ident = std::max(worst_ident, std::abs(mmd2(a, perm, s)));
    }
    std::uniform_real_distribution<double> cdist(-4.0, 4.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double c = cdist(rng), s = sig(rng);
        const double expect = 2.0 * (1.0 - std::exp(-c * c / (2.0 * s * s)));
        worst_single = std::max(worst_single, std::abs(mmd2(Tensor::scalar(0.0), Tensor::scalar(c), s) - expect));
    }
    const bool pass = worst <= 1e-12 && worst_ident <= 1e-12 && worst_single <= 1e-12;
    return {pass, fmt("max |mmd2 - oracle| %.2e over 50 pairs, identical multisets %.2e, singleton closed form %.2e",
                      worst, worst_ident, worst_single)};
}

// 3. Stabilized weights.
Outcome weight_check() {
    DgpConfig dc;
    dc.n = 5000;
    dc.confounding = 1.0;
    const Dgp dgp(dc);
    const Cohort cohort = dgp.simulate_raw(dc.n, 303);
    const PropensityModel fitted = fit_propensity(cohort);

    // Numerator copied into the denominator: every factor is exactly 1.
    PropensityModel same = fitted;
    LogisticFit& den = same.denominator[0];
    const LogisticFit& num = same.numerator[0];
    den.intercept = num.intercept;
    std::fill(den.coef.begin(), den.coef.end(), 0.0);
    for (std::size_t j = 0; j < num.coef.size(); ++j) den.coef[cohort.d + j] = num.coef[j];
    std::size_t not_one = 0;
    for (const auto& r : stabilized_weights(cohort, same).rows) not_one += r.raw != 1.0;

    const auto table = stabilized_weights(cohort, fitted);
    const auto s = weight_diagnostics(table, &WeightRow::raw);
    const auto u = weight_diagnostics(table, &WeightRow::unstabilized);
    const bool pass = not_one == 0 && s.mean >= 0.95 && s.mean <= 1.05 && s.variance < u.variance;
    return {pass, fmt("equal models: %zu weights != 1; n=5000 gamma=1 K=%zu: mean %.4f, var stabilized %.3f < "
                      "unstabilized %.3g",
                      not_one, dc.K, s.mean, s.variance, u.variance)};
}

// 4. Hajek IPTW vs closed-form truth, closed-form truth vs Monte Carlo.
Outcome truth_recovery() {
    DgpConfig dc;
    dc.n = 5000;
    dc.K = 4;
    dc.d = 4;
    dc.censor_rate = 0.0;  // the Hajek estimator needs the event indicator at tau
    dc.m_truth = 10;
    const Dgp dgp(dc);
    const Cohort cohort = dgp.simulate();
    const TimeGrid grid = *cohort.truth_grid;
    const double tau = grid.boundaries[grid.m() / 2];
    const TreatmentSequence all_treat = constant_sequence(dc.K + 1, 1);

    // Closed-form marginal truth on a large independent cohort.
    const std::size_t big = 1000000;
    progress("simulating 1e6 trajectories for the marginal truth");
    const Cohort population = dgp.simulate_raw(big, 9090);
    const double truth = dgp.marginal_survival(population, all_treat, tau);

    // Monte Carlo: one event time per individual under the all-treat regime path.
    std::mt19937_64 rng(4242);
    std::exponential_distribution<double> e1(1.0);
    std::size_t alive = 0;
    for (const auto& t : population.trajectories) {
        const auto h = dgp.step_hazards(dgp.regime_covariates(t, all_treat), all_treat);
        alive += invert_cumulative_hazard(h, e1(rng)) > tau;
    }
    const double mc = double(alive) / double(big);

    const auto table = stabilized_weights(cohort, fit_propensity(cohort));
    const auto w = table.column(&WeightRow::raw);
    const double hajek = hajek_survival(cohort, w, all_treat, tau);
    std::size_t followers = 0;
    for (const auto& t : cohort.trajectories) followers += sequence_key(t.treatments) == sequence_key(all_treat);
    const double naive = hajek_survival(cohort, std::vector<double>(cohort.size(), 1.0), all_treat, tau);

    const bool pass = std::abs(hajek - truth) <= 0.03 && std::abs(truth - mc) <= 0.005;
    return {pass, fmt("tau=%.3f: truth %.4f, Hajek %.4f (|diff| %.4f, %zu followers, unweighted %.4f), "
                      "MC 1e6 %.4f (|diff| %.4f)",
                      tau, truth, hajek, std::abs(hajek - truth), followers, naive, mc, std::abs(truth - mc))};
}

// 5. Curve validity over random parameters, trajectories and sequences.
Outcome curve_validity() {
    std::mt19937_64 rng(55);
    std::normal_distribution<double> z;
    std::size_t bad = 0;
    double worst_sum = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t d = 1 + trial % 4, K = 1 + trial % 5, m = 2 + trial % 9;
        ModelConfig mc;
        mc.d = d;
        mc.K = K;
        mc.m = m;
        mc.hidden = 4;
        mc.repr_dim = 3;
        mc.head_hidden = 5;
        mc.treat_embed_dim = 2;
        mc.seed = std::uint64_t(trial) * 7 + 1;
        mc.encoder = trial % 3 == 0 ? EncoderKind::Flat : EncoderKind::Gru;
        mc.link = trial % 4 == 0 ? HazardLink::Softmax : HazardLink::Sigmoid;
        Model model(mc, uniform_grid(m, double(m)));
        // widen the initial parameters so saturated heads are exercised too
        const double spread = 1.0 + double(trial % 4);
        for (auto& p : model.params())
            for (auto& x : p.var.mutable_value().data()) x *= spread;

        Trajectory t;
        t.id = "t";
        for (std::size_t k = 0; k <= K; ++k) {
            std::vector<double> x(d);
            for (auto& v : x) v = 2.0 * z(rng);
            t.covariates.push_back(x);
            t.treatments.push_back(int(rng() & 1));
        }
        TreatmentSequence seq(K + 1);
        for (auto& a : seq) a = int(rng() & 1);
        const auto c = model.predict(t, seq);

        double total = c.survival.back();
        double prev = 1.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double s = c.survival[j];
            if (!(s > 0.0 && s <= 1.0 && s <= prev)) ++bad;
            prev = s;
            total += c.pmf(j);
        }
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
    return {bad == 0 && worst_sum <= 1e-10,
            fmt("1000 curves: %zu violations of monotone/(0,1], max |sum f + S(tau_m) - 1| %.2e", bad, worst_sum)};
}

// 6 and 7 share one ablation run on the default configuration.
struct AblationRun {
    std::vector<ReplicateResult> reps;
    double seconds = 0.0;
};

const AblationRun& ablation_run() {
    static std::optional<AblationRun> cache;
    if (!cache) {
        ExperimentConfig c;  // defaults: n=5000, K=8, d=10, feedback 0.5, nonlinear, confounded
        c.replications = 10;
        progress(fmt("ablation: %zu replicates x {full, no_balance, unit_weights}, n=%zu K=%zu feedback=%.2f alpha=%.3g",
                     c.replications, c.dgp.n, c.dgp.K, c.dgp.feedback, c.train.alpha));
        const auto t0 = std::chrono::steady_clock::now();
        AblationRun run;
        run.reps = run_replicates(c, {"full", "no_balance", "unit_weights"});
        run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        cache = std::move(run);
    }
    return *cache;
}

Outcome balancing_efficacy() {
    const auto& run = ablation_run();
    double full = 0.0, base = 0.0;
    std::size_t n = 0, per_seed = 0;
    std::string log;
    for (const auto& r : run.reps) {
        if (!r.ok) continue;
        const double a = r.find("full")->epochs.back().mmd_total, b = r.find("no_balance")->epochs.back().mmd_total;
        full += a;
        base += b;
        per_seed += a <= 0.5 * b;
        ++n;
        log += fmt(" %.3f/%.3f", a, b);
    }
    if (n == 0) return {false, "no successful replicates"};
    full /= double(n);
    base /= double(n);
    return {full <= 0.5 * base, fmt("final-epoch MMD full %.4f vs alpha=0 %.4f (ratio %.3f; %zu/%zu seeds <= 0.5x); "
                                    "per seed full/alpha0:%s",
                                    full, base, base > 0 ? full / base : 0.0, per_seed, n, log.c_str())};
}

Outcome ablation_direction() {
    const auto& run = ablation_run();
    std::size_t n = 0, beat_nb = 0, beat_unit = 0;
    double full = 0, nb = 0, unit = 0;
    for (const auto& r : run.reps) {
        if (!r.ok) continue;
        const double f = *r.find("full")->report.tv_pehe, b = *r.find("no_balance")->report.tv_pehe,
                     u = *r.find("unit_weights")->report.tv_pehe;
        full += f;
        nb += b;
        unit += u;
        beat_nb += f < b;
        beat_unit += f < u;
        ++n;
    }
    if (n == 0) return {false, "no successful replicates"};
    full /= double(n);
    nb /= double(n);
    unit /= double(n);
    const bool pass = n == 10 && full < nb && full < unit && beat_nb >= 8 && beat_unit >= 8;
    return {pass, fmt("mean tv_pehe full %.4f, alpha=0 %.4f, unit_weights %.4f; full wins %zu/%zu vs alpha=0, "
                      "%zu/%zu vs unit_weights; %.0fs",
                      full, nb, unit, beat_nb, n, beat_unit, n, run.seconds)};
}

// 8. Feedback sweep.
Outcome feedback_direction() {
    ExperimentConfig c;
    c.replications = 10;
    const std::vector<double> betas{0.1, 0.5, 1.0};
    progress("feedback sweep over beta in {0.1, 0.5, 1.0}, 10 replicates, full and no_balance");
    const auto out = run_feedback_sweep(c, betas, {});
    std::map<std::string, std::vector<double>> pehe;  // variant -> per beta
    for (double b : betas)
        for (const auto& row : out.summary)
            if (row.metric == "tv_pehe" && row.group == fmt("%g", b)) pehe[row.variant].push_back(row.mean);
    std::string detail;
    bool pass = true;
    for (const std::string v : {"full", "no_balance"}) {
        const auto& p = pehe[v];
        if (p.size() != 3) return {false, "sweep summary is missing rows for " + v};
        const bool monotone = p[0] <= p[1] && p[1] <= p[2];
        pass = pass && monotone;
        detail += fmt("%s %.4f/%.4f/%.4f%s ratio %.3f; ", v.c_str(), p[0], p[1], p[2], monotone ? "" : " (not monotone)",
                      p[2] / p[0]);
    }
    const double rf = pehe["full"][2] / pehe["full"][0], rn = pehe["no_balance"][2] / pehe["no_balance"][0];
    pass = pass && rf < rn;
    return {pass, detail + fmt("degradation full %.3f vs alpha=0 %.3f", rf, rn)};
}

// 9. Metric oracles.
double dense_integral(const std::vector<double>& f, const TimeGrid& g, std::size_t per_interval = 4000) {
    double total = 0.0;
    for (std::size_t j = 1; j < g.boundaries.size(); ++j) {
        const double a = g.boundaries[j - 1], b = g.boundaries[j], h = (b - a) / double(per_interval);
        for (std::size_t q = 0; q < per_interval; ++q) {
            const double w = (double(q) + 0.5) / double(per_interval);
            total += ((1 - w) * f[j - 1] + w * f[j]) * h;
        }
    }
    return total;
}

Outcome metric_oracles() {
    std::mt19937_64 rng(909);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> step(0.1, 2.0), haz(0.01, 0.4);
    double worst_pehe = 0.0, worst_irmse = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 2 + trial % 9, n = 6;
        TimeGrid g{{0.0}};
        for (std::size_t j = 0; j < m; ++j) g.boundaries.push_back(g.boundaries.back() + step(rng));
        std::vector<EffectCurve> est(n, EffectCurve(m + 1)), eff(n, EffectCurve(m + 1));
        std::vector<SurvivalCurve> pred, real;
        double pehe = 0.0, ir = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> sq(m + 1);
            for (std::size_t j = 0; j <= m; ++j) {
                est[i][j] = z(rng);
                eff[i][j] = z(rng);
                sq[j] = (est[i][j] - eff[i][j]) * (est[i][j] - eff[i][j]);
            }
            pehe += dense_integral(sq, g);
            for (auto* v : {&pred, &real}) {
                std::vector<double> h(m);
                for (auto& x : h) x = haz(rng);
                v->push_back(SurvivalCurve::from_hazards(h));
            }
            const auto a = pred.back().on_boundaries(), b = real.back().on_boundaries();
            std::vector<double> d2(m + 1);
            for (std::size_t j = 0; j <= m; ++j) d2[j] = (a[j] - b[j]) * (a[j] - b[j]);
            ir += dense_integral(d2, g) / g.horizon();
        }
        worst_pehe = std::max(worst_pehe, std::abs(tv_pehe(est, eff, g) - std::sqrt(pehe / double(n))));
        worst_irmse = std::max(worst_irmse, std::abs(irmse(pred, real, g) - std::sqrt(ir / double(n))));
    }

    std::vector<double> times(200), risk(200);
    for (std::size_t i = 0; i < 200; ++i) {
        times[i] = double(i + 1);
        risk[i] = -double(i);
    }
    const double c_perfect = c_index(risk, times, std::vector<int>(200, 1));

    std::exponential_distribution<double> e(1.0);
    std::vector<double> s(2000), t(2000);
    std::vector<int> d(2000);
    for (std::size_t i = 0; i < 2000; ++i) {
        s[i] = z(rng);
        t[i] = e(rng);
        d[i] = int(rng() % 4 != 0);
    }
    const double c_random = c_index(s, t, d);

    // Four individuals, G jumps to 2/3 at t=2:
    //   A t=1 event   (0.2 - 0)^2 / G(1-) = 0.04
    //   B t=2 censored, contributes 0
    //   C t=3 > tau   (0.7 - 1)^2 / G(2.5) = 0.135
    //   D t=4 > tau   (0.9 - 1)^2 / G(2.5) = 0.015
    const std::vector<double> bt{1, 2, 3, 4};
    const std::vector<int> bd{1, 0, 1, 0};
    const double bs = brier(std::vector<double>{0.2, 0.6, 0.7, 0.9}, bt, bd, 2.5, CensoringKm(bt, bd)).value;
    const double hand = (0.04 + 0.0 + 0.09 * 1.5 + 0.01 * 1.5) / 4.0;

    const bool pass = worst_pehe <= 1e-10 && worst_irmse <= 1e-10 && c_perfect == 1.0 &&
                      std::abs(c_random - 0.5) <= 0.03 && std::abs(bs - hand) <= 1e-15;
    return {pass, fmt("tv_pehe %.1e, irmse %.1e vs quadrature; c_index ordered %.4f, random %.4f; brier %.17g "
                      "(hand %.17g)",
                      worst_pehe, worst_irmse, c_perfect, c_random, bs, hand)};
}

// 10. Byte-identical experiment summaries.
std::string summary_without_timestamp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line))
        if (line.rfind("# generated_at=", 0) != 0) out << line << '\n';
    return out.str();
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "tvsurv_acceptance_determinism";
    fs::remove_all(root);
    auto run = [&](const std::string& name, std::size_t threads) {
        ExperimentConfig c = parse_experiment_config(
            "dgp.n = 600\ndgp.k = 3\ndgp.d = 4\ntrain.epochs = 3\ngrid.m = 8\n"
            "experiment.replications = 3\nexperiment.n_test = 200\nexperiment.seed = 17\n",
            "determinism.cfg");
        c.threads = threads;
        run_experiment(c, root / name);
        return root / name / "summary.csv";
    };
    const auto a = run("a", 1), b = run("b", 3);
    const std::string sa = summary_without_timestamp(a), sb = summary_without_timestamp(b);
    const bool pass = !sa.empty() && sa == sb;
    std::size_t lines = std::count(sa.begin(), sa.end(), '\n');
    fs::remove_all(root);
    return {pass, fmt("two experiment runs (1 and 3 workers): summaries %s apart from generated_at (%zu lines)",
                      pass ? "identical" : "DIFFER", lines)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, gradient_check},  {2, mmd_oracle_check},   {3, weight_check},       {4, truth_recovery},
        {5, curve_validity},  {6, balancing_efficacy}, {7, ablation_direction}, {8, feedback_direction},
        {9, metric_oracles},  {10, determinism},
    };
    std::set<int> selected, xfail;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--xfail" && i + 1 < argc) {
            std::stringstream list(argv[++i]);
            for (std::string item; std::getline(list, item, ',');) xfail.insert(std::stoi(item));
        } else {
            selected.insert(std::stoi(arg));
        }
    }

    int failed = 0, expected = 0, unexpected_pass = 0;
    for (const auto& [id, fn] : criteria) {
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool known = xfail.count(id) > 0;
        std::printf("criterion %2d: %s  %s [%.1fs]\n", id, o.pass ? (known ? "PASS (XPASS)" : "PASS") : (known ? "FAIL (expected)" : "FAIL"),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) (known ? expected : failed)++;
        if (o.pass && known) ++unexpected_pass;
    }
    std::printf("%d criteria failed (%d listed as expected failures), %d expected failures passed\n", failed + expected,
                expected, unexpected_pass);
    return failed == 0 ? 0 : 1;
}
