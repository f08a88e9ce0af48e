#include "tvsurv/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

#include "tvsurv/errors.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

using ad::Tensor;
using ad::Var;

PairStrategy parse_pair_strategy(const std::string& s) {
    if (s == "final_treatment") return PairStrategy::FinalTreatment;
    if (s == "last_step_flip") return PairStrategy::LastStepFlip;
    throw ConfigError("unknown pair strategy '" + s + "' (expected final_treatment|last_step_flip)");
}

WeightsMode parse_weights_mode(const std::string& s) {
    if (s == "stabilized") return WeightsMode::Stabilized;
    if (s == "unstabilized") return WeightsMode::Unstabilized;
    if (s == "unit") return WeightsMode::Unit;
    throw ConfigError("unknown weights mode '" + s + "' (expected stabilized|unstabilized|unit)");
}

std::string to_string(PairStrategy s) { return s == PairStrategy::FinalTreatment ? "final_treatment" : "last_step_flip"; }

std::string to_string(WeightsMode m) {
    switch (m) {
        case WeightsMode::Stabilized: return "stabilized";
        case WeightsMode::Unstabilized: return "unstabilized";
        case WeightsMode::Unit: return "unit";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (alpha < 0.0) throw ConfigError("train.alpha must be >= 0");
    if (beta_reg < 0.0) throw ConfigError("train.beta_reg must be >= 0");
    if (kernel_sigma && !(*kernel_sigma > 0.0)) throw ConfigError("train.kernel_sigma must be > 0 or 'median'");
    if (epochs == 0) throw ConfigError("train.epochs must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("train: adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
}

// ---------------------------------------------------------------------------
// MMD

Var mmd2(const Var& a, const Var& b, double sigma, bool unbiased) {
    const std::size_t na = a.rows(), nb = b.rows();
    if (na == 0 || nb == 0) throw DataError("mmd2: both sets must be nonempty");
    if (!(sigma > 0.0)) throw ConfigError("mmd2: bandwidth must be positive");
    if (a.cols() != b.cols()) throw ShapeError("mmd2: representation widths differ");
    const Var kab = ad::sum(ad::rbf_gram(a, b, sigma));
    const Var kaa = ad::sum(ad::rbf_gram(a, a, sigma));
    const Var kbb = ad::sum(ad::rbf_gram(b, b, sigma));
    const double fa = double(na), fb = double(nb);
    if (!unbiased) {
        return ad::scale(kaa, 1.0 / (fa * fa)) + ad::scale(kbb, 1.0 / (fb * fb)) - ad::scale(kab, 2.0 / (fa * fb));
    }
    if (na < 2 || nb < 2) throw DataError("mmd2: unbiased estimate needs at least two members per set");
    // Diagonal kernel values are exp(0) = 1.
    const Var ta = ad::scale(ad::add_scalar(kaa, -fa), 1.0 / (fa * (fa - 1.0)));
    const Var tb = ad::scale(ad::add_scalar(kbb, -fb), 1.0 / (fb * (fb - 1.0)));
    return ta + tb - ad::scale(kab, 2.0 / (fa * fb));
}

double mmd2(const Tensor& a, const Tensor& b, double sigma, bool unbiased) {
    ad::NoGradGuard guard;
    return mmd2(ad::constant(a), ad::constant(b), sigma, unbiased).item();
}

double median_bandwidth(const Tensor& z) {
    const std::size_t n = z.rows();
    std::vector<double> dist;
    dist.reserve(n * (n - (n > 0)) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < z.cols(); ++c) {
                const double diff = z(i, c) - z(j, c);
                d2 += diff * diff;
            }
            dist.push_back(std::sqrt(d2));
        }
    }
    if (dist.empty()) return 1.0;
    const std::size_t mid = dist.size() / 2;
    std::nth_element(dist.begin(), dist.begin() + mid, dist.end());
    double med = dist[mid];
    if (dist.size() % 2 == 0) {
        med = 0.5 * (med + *std::max_element(dist.begin(), dist.begin() + mid));
    }
    return med > 1e-12 ? med : 1.0;
}

std::string group_key(const Trajectory& t, PairStrategy strategy) {
    if (strategy == PairStrategy::FinalTreatment) return std::to_string(t.treatments.back());
    return sequence_key(t.treatments);
}

namespace {

// Compared pairs among the present groups: (key_a, key_b) with a < b.
std::vector<std::pair<std::string, std::string>> compared_pairs(const std::map<std::string, std::vector<std::size_t>>& groups,
                                                                PairStrategy strategy) {
    std::vector<std::pair<std::string, std::string>> out;
    if (strategy == PairStrategy::FinalTreatment) {
        if (groups.count("0") && groups.count("1")) out.emplace_back("0", "1");
        return out;
    }
    for (const auto& [key, members] : groups) {
        if (key.back() != '0') continue;
        std::string flip = key;
        flip.back() = '1';
        if (groups.count(flip)) out.emplace_back(key, flip);
    }
    return out;
}

template <class RowAccess>
std::map<std::string, std::vector<std::size_t>> group_rows(std::size_t n, RowAccess row, PairStrategy strategy) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[group_key(row(i), strategy)].push_back(i);
    return groups;
}

}  // namespace

Var balance_loss(const Var& z, std::span<const Trajectory* const> rows, PairStrategy strategy,
                 std::optional<double> sigma, bool unbiased, BalanceInfo* info, bool quiet) {
    if (z.rows() != rows.size()) throw ShapeError("balance_loss: z rows do not match the batch");
    auto groups = group_rows(rows.size(), [&](std::size_t i) -> const Trajectory& { return *rows[i]; }, strategy);
    std::size_t skipped = 0;
    for (auto it = groups.begin(); it != groups.end();) {
        if (it->second.size() < 2) {
            ++skipped;
            it = groups.erase(it);
        } else {
            ++it;
        }
    }
    const auto pairs = compared_pairs(groups, strategy);
    const double bw = sigma ? *sigma : median_bandwidth(z.value());
    if (info) {
        info->skipped_groups += skipped;
        info->sigma = bw;
    }
    if (skipped > 0 && !quiet) warn("balance_loss: skipped " + std::to_string(skipped) + " group(s) with < 2 members");
    if (pairs.empty()) {
        if (!quiet) warn("balance_loss: no comparable group pair in batch; balancing term is 0");
        return ad::constant(Tensor::scalar(0.0));
    }
    Var total;
    for (const auto& [ka, kb] : pairs) {
        const Var term = mmd2(ad::gather_rows(z, groups[ka]), ad::gather_rows(z, groups[kb]), bw, unbiased);
        if (info) info->pairs.push_back({ka, kb, term.item()});
        total = total.defined() ? total + term : term;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Likelihood

Var survival_nll(const Model& model, const Var& z, std::span<const Trajectory* const> rows,
                 std::span<const double> weights) {
    const std::size_t B = rows.size(), m = model.config().m;
    if (B == 0) throw DataError("survival_nll: empty batch");
    if (weights.size() != B) throw ShapeError("survival_nll: weights not aligned with batch");
    std::vector<const TreatmentSequence*> seqs;
    Tensor event_mask(B, m), any_mask(B, m);
    for (std::size_t i = 0; i < B; ++i) {
        seqs.push_back(&rows[i]->treatments);
        const std::size_t j = interval_index(model.grid(), rows[i]->observed_time) - 1;
        if (rows[i]->event) event_mask(i, j) = weights[i];
        any_mask(i, j) = weights[i];
    }
    Tensor upper(m, m);
    for (std::size_t l = 0; l < m; ++l)
        for (std::size_t j = l; j < m; ++j) upper(l, j) = 1.0;

    const Var emb = model.embed_sequence(sequence_bits(seqs, model.config().K));
    const auto [log_lam, log_surv] = model.log_hazards(z, emb);
    // log S(tau_j) = sum_{l <= j} log(1 - lambda_l);
    // log f(tau_j) = log lambda_j + log S(tau_j) - log(1 - lambda_j).
    const Var cum = ad::matmul(log_surv, ad::constant(upper));
    const Var ll = ad::sum(ad::constant(event_mask) * (log_lam - log_surv)) + ad::sum(ad::constant(any_mask) * cum);
    return ad::scale(ll, -1.0 / double(B));
}

Var survival_nll(const Model& model, std::span<const Trajectory* const> rows, std::span<const double> weights) {
    const Var z = model.represent(model.encode(Batch::from(rows, model.config().d, model.config().K)));
    return survival_nll(model, z, rows, weights);
}

Var l2_penalty(const Model& model) {
    Var total;
    for (const auto& p : model.params()) {
        if (!p.regularized) continue;
        const Var s = ad::sum(ad::square(p.var));
        total = total.defined() ? total + s : s;
    }
    return total.defined() ? total : ad::constant(Tensor::scalar(0.0));
}

Var combined_loss(const Model& model, std::span<const Trajectory* const> rows, std::span<const double> weights,
                  const TrainConfig& config) {
    const Var z = model.represent(model.encode(Batch::from(rows, model.config().d, model.config().K)));
    Var loss = survival_nll(model, z, rows, weights);
    if (config.alpha > 0.0) {
        loss = loss + ad::scale(balance_loss(z, rows, config.pair_strategy, config.kernel_sigma, config.unbiased_mmd,
                                             nullptr, true),
                                config.alpha);
    }
    if (config.beta_reg > 0.0) loss = loss + ad::scale(l2_penalty(model), config.beta_reg);
    return loss;
}

std::vector<double> training_weights(const Cohort& cohort, const WeightTable* table, WeightsMode mode) {
    std::vector<double> w(cohort.size(), 1.0);
    if (mode == WeightsMode::Unit) return w;
    if (!table) throw ConfigError("weights mode '" + to_string(mode) + "' needs a weight table");
    if (table->size() != cohort.size()) {
        throw DataError("weight table has " + std::to_string(table->size()) + " rows, cohort has " +
                        std::to_string(cohort.size()));
    }
    std::unordered_map<std::string, const WeightRow*> by_id;
    for (const auto& r : table->rows) by_id[r.id] = &r;
    double s = 0.0;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto it = by_id.find(cohort.trajectories[i].id);
        if (it == by_id.end()) throw DataError("weight table has no row for id '" + cohort.trajectories[i].id + "'");
        w[i] = mode == WeightsMode::Stabilized ? it->second->trimmed : it->second->unstabilized_trimmed;
        if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
            throw DataError("weight for id '" + cohort.trajectories[i].id + "' is not positive and finite");
        }
        s += w[i];
    }
    const double scale = double(cohort.size()) / s;
    for (auto& v : w) v *= scale;
    return w;
}

// ---------------------------------------------------------------------------

std::string EpochReport::to_json() const {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : pair_mmd) pairs.push_back({{"a", p.group_a}, {"b", p.group_b}, {"mmd", p.mmd}});
    const nlohmann::json j = {{"epoch", epoch},         {"phase", phase},           {"l_surv", l_surv},
                              {"l_bal", l_bal},         {"l_reg", l_reg},           {"total", total},
                              {"weight_mean", weight_mean}, {"weight_max", weight_max}, {"mmd", pairs},
                              {"mmd_total", mmd_total}, {"skipped_groups", skipped_groups}};
    return j.dump();
}

std::vector<PairMmd> representation_mmd(const Model& model, const Cohort& cohort, PairStrategy strategy,
                                        std::size_t cap) {
    auto groups = group_rows(
        cohort.size(), [&](std::size_t i) -> const Trajectory& { return cohort.trajectories[i]; }, strategy);
    for (auto it = groups.begin(); it != groups.end();) {
        if (it->second.size() < 2) {
            it = groups.erase(it);
            continue;
        }
        if (cap > 0 && it->second.size() > cap) it->second.resize(cap);
        ++it;
    }
    const auto pairs = compared_pairs(groups, strategy);
    if (pairs.empty()) return {};
    std::vector<Trajectory> used;
    std::map<std::string, std::vector<std::size_t>> local;
    for (const auto& [key, members] : groups) {
        for (std::size_t i : members) {
            local[key].push_back(used.size());
            used.push_back(cohort.trajectories[i]);
        }
    }
    const Tensor z = model.representations(used);
    const double bw = median_bandwidth(z);
    ad::NoGradGuard guard;
    const Var zv = ad::constant(z);
    std::vector<PairMmd> out;
    for (const auto& [ka, kb] : pairs) {
        out.push_back({ka, kb, mmd2(ad::gather_rows(zv, local[ka]), ad::gather_rows(zv, local[kb]), bw).item()});
    }
    return out;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.rows(), p.cols());
        v_.emplace_back(p.rows(), p.cols());
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& w = params_[i].mutable_value();
        const Tensor& g = params_[i].grad();
        for (std::size_t c = 0; c < w.size(); ++c) {
            m_[i][c] = b1_ * m_[i][c] + (1.0 - b1_) * g[c];
            v_[i][c] = b2_ * v_[i][c] + (1.0 - b2_) * g[c] * g[c];
            w[c] -= lr_ * (m_[i][c] / c1) / (std::sqrt(v_[i][c] / c2) + eps_);
        }
    }
}

std::vector<std::vector<std::size_t>> make_batches(const Cohort& cohort, PairStrategy strategy,
                                                   std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
    const std::size_t n = cohort.size();
    const std::size_t nb = std::max<std::size_t>(1, (n + batch_size - 1) / batch_size);
    std::mt19937_64 rng(stream_seed(seed, 0x5eed0000ULL + epoch));
    auto groups = group_rows(
        n, [&](std::size_t i) -> const Trajectory& { return cohort.trajectories[i]; }, strategy);
    std::vector<std::vector<std::size_t>> batches(nb);
    // Deal each group's shuffled members two at a time, round-robin over batches.
    std::size_t cursor = 0;
    for (auto& [key, members] : groups) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i = 0; i < members.size(); i += 2) {
            auto& b = batches[cursor++ % nb];
            b.push_back(members[i]);
            if (i + 1 < members.size()) b.push_back(members[i + 1]);
        }
    }
    for (auto& b : batches) std::shuffle(b.begin(), b.end(), rng);
    std::shuffle(batches.begin(), batches.end(), rng);
    batches.erase(std::remove_if(batches.begin(), batches.end(), [](const auto& b) { return b.empty(); }),
                  batches.end());
    return batches;
}

std::vector<EpochReport> train(Model& model, const Cohort& cohort, const TrainConfig& config,
                               std::span<const double> weights, const EpochCallback& on_epoch, int phase) {
    config.validate();
    if (cohort.size() == 0) throw DataError("train: empty cohort");
    if (weights.size() != cohort.size()) throw DataError("train: weights not aligned with cohort");
    if (cohort.d != model.config().d || cohort.K != model.config().K) {
        throw DataError("train: cohort (d, K) does not match the model configuration");
    }
    for (const auto& t : cohort.trajectories) {
        if (t.observed_time > model.grid().horizon()) {
            throw DataError("train: observed time of '" + t.id + "' lies beyond the grid horizon");
        }
    }

    std::vector<Var> trainable;
    for (const auto& p : model.params()) {
        if (config.freeze_representation && p.group != ParamGroup::Head) continue;
        trainable.push_back(p.var);
    }
    Adam adam(trainable, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
    std::vector<Var> all = model.param_vars();

    const double w_mean = std::accumulate(weights.begin(), weights.end(), 0.0) / double(weights.size());
    const double w_max = *std::max_element(weights.begin(), weights.end());

    std::vector<EpochReport> reports;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        EpochReport rep;
        rep.epoch = epoch + 1;
        rep.phase = phase;
        rep.weight_mean = w_mean;
        rep.weight_max = w_max;
        const auto batches = make_batches(cohort, config.pair_strategy, config.batch_size, config.seed, epoch);
        for (const auto& idx : batches) {
            std::vector<const Trajectory*> rows;
            std::vector<double> w;
            for (std::size_t i : idx) {
                rows.push_back(&cohort.trajectories[i]);
                w.push_back(weights[i]);
            }
            ad::zero_grads(all);
            const Var z = model.represent(model.encode(Batch::from(rows, model.config().d, model.config().K)));
            const Var l_surv = survival_nll(model, z, rows, w);
            Var total = l_surv;
            double l_bal = 0.0;
            if (config.alpha > 0.0) {
                BalanceInfo info;
                const Var bal = balance_loss(z, rows, config.pair_strategy, config.kernel_sigma, config.unbiased_mmd,
                                             &info, true);
                rep.skipped_groups += info.skipped_groups;
                l_bal = bal.item();
                total = total + ad::scale(bal, config.alpha);
            }
            const Var reg = l2_penalty(model);
            if (config.beta_reg > 0.0) total = total + ad::scale(reg, config.beta_reg);
            if (!std::isfinite(total.item())) {
                std::string ids;
                for (const auto* t : rows) ids += (ids.empty() ? "" : ",") + t->id;
                throw NumericalError("train: non-finite loss in epoch " + std::to_string(epoch + 1) +
                                     " on batch ids [" + ids + "]");
            }
            ad::backward(total);
            adam.step();
            rep.l_surv += l_surv.item();
            rep.l_bal += l_bal;
            rep.l_reg += reg.item();
            rep.total += total.item();
        }
        const double nbat = double(batches.size());
        rep.l_surv /= nbat;
        rep.l_bal /= nbat;
        rep.l_reg /= nbat;
        rep.total /= nbat;
        rep.pair_mmd = representation_mmd(model, cohort, config.pair_strategy, config.diagnostic_cap);
        for (const auto& p : rep.pair_mmd) rep.mmd_total += p.mmd;
        if (rep.skipped_groups > 0 && config.alpha > 0.0) {
            warn("train: epoch " + std::to_string(epoch + 1) + " skipped " + std::to_string(rep.skipped_groups) +
                 " undersized group(s) in the balancing term");
        }
        if (on_epoch) on_epoch(rep);
        reports.push_back(std::move(rep));
    }
    return reports;
}

TrainResult train(const Cohort& cohort, const TimeGrid& grid, const ModelConfig& model_config,
                  const TrainConfig& config, const WeightTable* table, const EpochCallback& on_epoch) {
    TrainResult result{Model(model_config, grid), {}};
    const auto w = training_weights(cohort, table, config.weights_mode);
    result.epochs = train(result.model, cohort, config, w, on_epoch, 1);
    return result;
}

TrainResult train_fixed_representation(const Cohort& cohort, const TimeGrid& grid, const ModelConfig& model_config,
                                       const TrainConfig& config, const WeightTable* table,
                                       const EpochCallback& on_epoch) {
    TrainResult result{Model(model_config, grid), {}};
    TrainConfig pre = config;
    pre.alpha = 0.0;
    pre.weights_mode = WeightsMode::Unit;
    pre.freeze_representation = false;
    const std::vector<double> unit(cohort.size(), 1.0);
    result.epochs = train(result.model, cohort, pre, unit, on_epoch, 1);

    result.model.reinitialize(ParamGroup::Head, stream_seed(model_config.seed, 0x4ead));
    TrainConfig post = config;
    post.freeze_representation = true;
    post.seed = stream_seed(config.seed, 2);
    const auto w = training_weights(cohort, table, config.weights_mode);
    auto second = train(result.model, cohort, post, w, on_epoch, 2);
    result.epochs.insert(result.epochs.end(), second.begin(), second.end());
    return result;
}

}  // namespace tvsurv
