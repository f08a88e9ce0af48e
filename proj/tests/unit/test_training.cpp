#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "tvsurv/dgp.hpp"
#include "tvsurv/errors.hpp"
#include "tvsurv/training.hpp"

using namespace tvsurv;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_points(std::size_t n, std::size_t p, std::mt19937_64& rng) {
    std::normal_distribution<double> z;
    Tensor t(n, p);
    for (auto& v : t.data()) v = z(rng);
    return t;
}

double k_rbf(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j, double sigma) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) d2 += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
    return std::exp(-d2 / (2.0 * sigma * sigma));
}

// Brute-force three-term formula.
double mmd_oracle(const Tensor& a, const Tensor& b, double sigma, bool unbiased) {
    const double n = double(a.rows()), m = double(b.rows());
    double aa = 0, bb = 0, ab = 0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.rows(); ++j)
            if (!unbiased || i != j) aa += k_rbf(a, i, a, j, sigma);
    for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j)
            if (!unbiased || i != j) bb += k_rbf(b, i, b, j, sigma);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) ab += k_rbf(a, i, b, j, sigma);
    if (unbiased) return aa / (n * (n - 1)) + bb / (m * (m - 1)) - 2 * ab / (n * m);
    return aa / (n * n) + bb / (m * m) - 2 * ab / (n * m);
}

TimeGrid uniform_grid(std::size_t m, double horizon) {
    TimeGrid g;
    for (std::size_t j = 0; j <= m; ++j) g.boundaries.push_back(horizon * double(j) / double(m));
    return g;
}

Cohort toy_cohort(std::size_t n, std::size_t K, std::size_t d, std::uint64_t seed) {
    DgpConfig c;
    c.n = n;
    c.K = K;
    c.d = d;
    return Dgp(c).simulate_raw(n, seed);
}

ModelConfig small_model(const Cohort& c, std::size_t m) {
    ModelConfig mc;
    mc.d = c.d;
    mc.K = c.K;
    mc.m = m;
    mc.hidden = 6;
    mc.repr_dim = 4;
    mc.head_hidden = 8;
    mc.treat_embed_dim = 3;
    mc.seed = 21;
    return mc;
}

std::vector<const Trajectory*> pointers(const Cohort& c) {
    std::vector<const Trajectory*> out;
    for (const auto& t : c.trajectories) out.push_back(&t);
    return out;
}

Trajectory manual(const std::string& id, double time, int event, std::size_t K, std::size_t d) {
    Trajectory t;
    t.id = id;
    t.covariates.assign(K + 1, std::vector<double>(d, 0.1));
    t.treatments.assign(K + 1, 0);
    t.observed_time = time;
    t.event = event;
    return t;
}

void zero_head(Model& m, double bias) {
    for (auto& p : m.params())
        if (p.group == ParamGroup::Head)
            for (auto& x : p.var.mutable_value().data()) x = 0.0;
    for (auto& x : m.param("head_b2").mutable_value().data()) x = bias;
}

double max_abs_param(const Model& m) {
    double mx = 0.0;
    for (const auto& p : m.params())
        if (p.regularized) mx = std::max(mx, p.var.value().max_abs());
    return mx;
}

}  // namespace

TEST_CASE("mmd2 closed forms") {
    const Tensor zero = Tensor::scalar(0.0);
    for (double c : {0.3, 1.0, 2.7}) {
        const double got = mmd2(zero, Tensor::scalar(c), 1.0);
        CHECK(std::abs(got - 2.0 * (1.0 - std::exp(-c * c / 2.0))) < 1e-12);
    }
    CHECK(mmd2(zero, Tensor::scalar(1.0), 1.0) == doctest::Approx(0.786938680574733).epsilon(1e-12));

    std::mt19937_64 rng(3);
    const Tensor a = random_points(9, 3, rng);
    Tensor shuffled(9, 3);
    const std::size_t perm[] = {4, 2, 8, 0, 1, 7, 3, 6, 5};
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t c = 0; c < 3; ++c) shuffled(i, c) = a(perm[i], c);
    CHECK(std::abs(mmd2(a, shuffled, 0.8)) < 1e-12);
}

TEST_CASE("mmd2 matches the brute-force oracle") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> size(2, 30);
    std::uniform_real_distribution<double> sig(0.3, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t p = 1 + trial % 4;
        const Tensor a = random_points(size(rng), p, rng);
        const Tensor b = random_points(size(rng), p, rng);
        const double s = sig(rng);
        CHECK(std::abs(mmd2(a, b, s) - mmd_oracle(a, b, s, false)) < 1e-12);
        CHECK(std::abs(mmd2(a, b, s, true) - mmd_oracle(a, b, s, true)) < 1e-12);
        CHECK(mmd2(a, b, s) >= 0.0);
        CHECK(std::abs(mmd2(a, b, s) - mmd2(b, a, s)) < 1e-14);
    }
    CHECK_THROWS(mmd2(Tensor(0, 2), Tensor(3, 2), 1.0));
}

TEST_CASE("mmd2 gradient matches finite differences") {
    std::mt19937_64 rng(5);
    Var a = ad::parameter(random_points(5, 2, rng));
    Var b = ad::parameter(random_points(4, 2, rng));
    std::vector<Var> ps{a, b};
    CHECK(ad::grad_check([&] { return mmd2(a, b, 1.1); }, ps, 1e-6, 1e-4).passed);
}

TEST_CASE("median bandwidth") {
    CHECK(median_bandwidth(Tensor::column({0.0, 1.0, 3.0})) == doctest::Approx(2.0));
    CHECK(median_bandwidth(Tensor::column({2.0, 2.0, 2.0})) == 1.0);
}

TEST_CASE("survival nll hand values") {
    const std::size_t K = 1, d = 1;
    ModelConfig mc;
    mc.d = d;
    mc.K = K;
    mc.m = 3;
    Model model(mc, uniform_grid(3, 3.0));

    const Trajectory censored = manual("c", 2.5, 0, K, d);
    const std::vector<const Trajectory*> rc{&censored};
    zero_head(model, -1000.0);  // lambda == 0
    CHECK(survival_nll(model, rc, std::vector<double>{1.0}).item() == 0.0);

    zero_head(model, 0.0);  // lambda == 0.5
    const Trajectory event = manual("e", 0.5, 1, K, d);
    const std::vector<const Trajectory*> re{&event};
    CHECK(survival_nll(model, re, std::vector<double>{1.0}).item() == doctest::Approx(0.693147180559945).epsilon(1e-13));
    // Event in interval 3 after surviving two: -log(0.5^3).
    const Trajectory late = manual("l", 2.2, 1, K, d);
    const std::vector<const Trajectory*> rl{&late};
    CHECK(survival_nll(model, rl, std::vector<double>{1.0}).item() == doctest::Approx(3 * 0.693147180559945));

    const Model fresh(mc, uniform_grid(3, 3.0));
    const std::vector<const Trajectory*> both{&event, &late};
    const double one = survival_nll(fresh, both, std::vector<double>{0.7, 1.3}).item();
    const double two = survival_nll(fresh, both, std::vector<double>{1.4, 2.6}).item();
    CHECK(two == doctest::Approx(2.0 * one).epsilon(1e-14));
}

TEST_CASE("balance loss degenerate cases") {
    const std::size_t K = 1, d = 1;
    std::vector<Trajectory> rows;
    for (int i = 0; i < 4; ++i) rows.push_back(manual(std::to_string(i), 1.0, 1, K, d));
    std::vector<const Trajectory*> ptr;
    for (const auto& r : rows) ptr.push_back(&r);
    std::mt19937_64 rng(6);
    const Var z = ad::constant(random_points(4, 3, rng));

    // everyone shares T(K) = 0
    BalanceInfo info;
    CHECK(balance_loss(z, ptr, PairStrategy::FinalTreatment, 1.0, false, &info, true).item() == 0.0);
    CHECK(info.pairs.empty());

    // two groups holding the same multiset of representations
    rows[2].treatments.back() = rows[3].treatments.back() = 1;
    Tensor same(4, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        same(0, c) = same(3, c) = 0.1 * double(c);
        same(1, c) = same(2, c) = -0.4 + double(c);
    }
    CHECK(std::abs(balance_loss(ad::constant(same), ptr, PairStrategy::FinalTreatment, 1.0, false, nullptr, true)
                       .item()) < 1e-12);

    // a singleton group is skipped
    rows[2].treatments.back() = 0;
    BalanceInfo skipped;
    CHECK(balance_loss(z, ptr, PairStrategy::FinalTreatment, std::nullopt, false, &skipped, true).item() == 0.0);
    CHECK(skipped.skipped_groups == 1);
}

TEST_CASE("last-step-flip pairs share the prefix") {
    const std::size_t K = 2, d = 1;
    std::vector<Trajectory> rows;
    const TreatmentSequence seqs[] = {{0, 1, 0}, {0, 1, 0}, {0, 1, 1}, {0, 1, 1}, {1, 1, 1}, {1, 1, 1}};
    for (int i = 0; i < 6; ++i) {
        rows.push_back(manual(std::to_string(i), 1.0, 1, K, d));
        rows.back().treatments = seqs[i];
    }
    std::vector<const Trajectory*> ptr;
    for (const auto& r : rows) ptr.push_back(&r);
    std::mt19937_64 rng(7);
    const Var z = ad::constant(random_points(6, 2, rng));
    BalanceInfo info;
    const double v = balance_loss(z, ptr, PairStrategy::LastStepFlip, 0.9, false, &info, true).item();
    REQUIRE(info.pairs.size() == 1);
    CHECK(info.pairs[0].group_a == "010");
    CHECK(info.pairs[0].group_b == "011");
    Tensor a(2, 2), b(2, 2);
    for (std::size_t c = 0; c < 2; ++c) {
        a(0, c) = z.value()(0, c), a(1, c) = z.value()(1, c);
        b(0, c) = z.value()(2, c), b(1, c) = z.value()(3, c);
    }
    CHECK(v == doctest::Approx(mmd_oracle(a, b, 0.9, false)).epsilon(1e-12));
}

TEST_CASE("combined loss gradient is correct for every parameter group") {
    const Cohort c = toy_cohort(4, 3, 2, 8);
    const TimeGrid grid = build_grid(c, 3, GridStrategy::Uniform);
    ModelConfig mc = small_model(c, 3);
    Model model(mc, grid);
    TrainConfig tc;
    tc.alpha = 0.7;
    tc.beta_reg = 0.01;
    tc.kernel_sigma = 1.3;
    const auto rows = pointers(c);
    const std::vector<double> w{0.5, 1.5, 1.0, 2.0};
    auto vars = model.param_vars();
    const auto rep = ad::grad_check([&] { return combined_loss(model, rows, w, tc); }, vars, 1e-6, 1e-4);
    INFO("worst " << model.params()[rep.worst_param].name << " " << rep.analytic << " vs " << rep.numeric);
    CHECK(rep.passed);

    // Linearity: the joint gradient is the sum of the component gradients.
    auto grads_of = [&](const std::function<Var()>& f) {
        ad::zero_grads(vars);
        ad::backward(f());
        std::vector<double> g;
        for (const auto& v : vars) g.insert(g.end(), v.grad().data().begin(), v.grad().data().end());
        return g;
    };
    const auto joint = grads_of([&] { return combined_loss(model, rows, w, tc); });
    const auto surv = grads_of([&] { return survival_nll(model, rows, w); });
    const auto bal = grads_of([&] {
        const Var z = model.represent(model.encode(Batch::from(rows, c.d, c.K)));
        return ad::scale(balance_loss(z, rows, tc.pair_strategy, tc.kernel_sigma, false, nullptr, true), tc.alpha);
    });
    const auto reg = grads_of([&] { return ad::scale(l2_penalty(model), tc.beta_reg); });
    for (std::size_t i = 0; i < joint.size(); ++i)
        CHECK(joint[i] == doctest::Approx(surv[i] + bal[i] + reg[i]).epsilon(1e-10));
}

TEST_CASE("l2 penalty skips biases and the start embedding") {
    const Cohort c = toy_cohort(4, 2, 2, 9);
    Model model(small_model(c, 3), build_grid(c, 3, GridStrategy::Uniform));
    double expect = 0.0;
    for (const auto& p : model.params())
        if (p.regularized)
            for (double v : p.var.value().data()) expect += v * v;
    CHECK(l2_penalty(model).item() == doctest::Approx(expect).epsilon(1e-14));
    for (const auto& p : model.params()) {
        const bool is_bias = p.name.size() > 2 && (p.name.ends_with("_b") || p.name.ends_with("_b1") ||
                                                   p.name.ends_with("_b2") || p.name.ends_with("_bx") ||
                                                   p.name.ends_with("_bh"));
        if (is_bias || p.name == "emb_start") CHECK_MESSAGE(!p.regularized, p.name);
        else CHECK_MESSAGE(p.regularized, p.name);
    }
}

TEST_CASE("training weights are rescaled to mean one") {
    const Cohort c = toy_cohort(3, 1, 1, 10);
    WeightTable t;
    for (const auto& tr : c.trajectories) {
        WeightRow r;
        r.id = tr.id;
        r.raw = r.trimmed = 2.0;
        r.unstabilized = r.unstabilized_trimmed = 4.0 + double(t.rows.size());
        t.rows.push_back(r);
    }
    for (double w : training_weights(c, &t, WeightsMode::Stabilized)) CHECK(w == doctest::Approx(1.0));
    const auto u = training_weights(c, &t, WeightsMode::Unstabilized);
    CHECK(u[0] == doctest::Approx(4.0 / 5.0));
    for (double w : training_weights(c, nullptr, WeightsMode::Unit)) CHECK(w == 1.0);
    CHECK_THROWS(training_weights(c, nullptr, WeightsMode::Stabilized));
}

TEST_CASE("batches partition the cohort and keep groups in every batch") {
    const Cohort c = toy_cohort(300, 2, 2, 11);
    const auto b1 = make_batches(c, PairStrategy::FinalTreatment, 64, 5, 0);
    const auto b2 = make_batches(c, PairStrategy::FinalTreatment, 64, 5, 0);
    CHECK(b1 == b2);
    CHECK(make_batches(c, PairStrategy::FinalTreatment, 64, 5, 1) != b1);
    std::multiset<std::size_t> seen;
    for (const auto& b : b1) {
        seen.insert(b.begin(), b.end());
        int treated = 0;
        for (std::size_t i : b) treated += c.trajectories[i].treatments.back();
        CHECK(treated >= 2);
        CHECK(int(b.size()) - treated >= 2);
    }
    CHECK(seen.size() == 300);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 300);
}

TEST_CASE("short training runs behave as expected") {
    const Cohort c = toy_cohort(16, 2, 2, 12);
    const TimeGrid grid = build_grid(c, 4, GridStrategy::Quantile);
    const ModelConfig mc = small_model(c, 4);

    SUBCASE("unweighted, unbalanced likelihood decreases") {
        TrainConfig tc;
        tc.alpha = 0.0;
        tc.beta_reg = 0.0;
        tc.epochs = 200;
        tc.batch_size = 16;
        tc.weights_mode = WeightsMode::Unit;
        const auto r = train(c, grid, mc, tc, nullptr);
        CHECK(r.epochs.back().l_surv < r.epochs.front().l_surv);
        for (const auto& e : r.epochs) CHECK(e.l_bal == 0.0);
    }
    SUBCASE("strong balancing shrinks the representation discrepancy") {
        const Cohort big = toy_cohort(200, 2, 2, 13);
        const TimeGrid g = build_grid(big, 4, GridStrategy::Quantile);
        TrainConfig tc;
        tc.epochs = 15;
        tc.batch_size = 50;
        tc.weights_mode = WeightsMode::Unit;
        tc.alpha = 0.0;
        const auto plain = train(big, g, small_model(big, 4), tc, nullptr);
        tc.alpha = 100.0;
        const auto balanced = train(big, g, small_model(big, 4), tc, nullptr);
        CHECK(balanced.epochs.back().mmd_total < plain.epochs.back().mmd_total);
    }
    SUBCASE("heavy ridge shrinks the parameters") {
        TrainConfig tc;
        tc.alpha = 0.0;
        tc.beta_reg = 1e3;
        tc.epochs = 100;
        tc.learning_rate = 1e-2;
        tc.weights_mode = WeightsMode::Unit;
        const Model init(mc, grid);
        const auto r = train(c, grid, mc, tc, nullptr);
        CHECK(max_abs_param(r.model) < max_abs_param(init));
    }
    SUBCASE("runs are reproducible") {
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 8;
        tc.weights_mode = WeightsMode::Unit;
        const auto a = train(c, grid, mc, tc, nullptr);
        const auto b = train(c, grid, mc, tc, nullptr);
        CHECK(a.epochs.back().to_json() == b.epochs.back().to_json());
    }
    SUBCASE("fixed representation keeps encoder and phi frozen in phase two") {
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 8;
        tc.weights_mode = WeightsMode::Unit;
        std::size_t calls = 0;
        TrainResult r = train_fixed_representation(c, grid, mc, tc, nullptr, [&](const EpochReport& e) { calls += e.phase; });
        CHECK(r.epochs.size() == 6);
        CHECK(calls == 3 * 1 + 3 * 2);
        TrainResult p1 = train(c, grid, mc, [&] { auto t = tc; t.alpha = 0.0; return t; }(), nullptr);
        for (const auto& p : r.model.params()) {
            if (p.group == ParamGroup::Head) continue;
            CHECK(p.var.value().vec() == p1.model.param(p.name).value().vec());
        }
    }
}

TEST_CASE("non-finite losses name the batch") {
    Cohort c = toy_cohort(8, 1, 2, 14);
    const TimeGrid grid = build_grid(c, 3, GridStrategy::Uniform);
    c.trajectories[3].covariates[0][0] = std::nan("");
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 8;
    tc.weights_mode = WeightsMode::Unit;
    CHECK_THROWS_WITH_AS(train(c, grid, small_model(c, 3), tc, nullptr), doctest::Contains(c.trajectories[3].id.c_str()),
                         NumericalError);
}
