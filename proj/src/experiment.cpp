#include "tvsurv/experiment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "tvsurv/errors.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
    throw ConfigError("config key '" + key + "': invalid value '" + value + "' (expected " + expected + ")");
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size() || !std::isfinite(d)) bad_value(key, v, "a finite number");
        return d;
    } catch (const std::logic_error&) {
        bad_value(key, v, "a number");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        bad_value(key, v, "a nonnegative integer");
    }
    try {
        return std::stoull(v);
    } catch (const std::logic_error&) {
        bad_value(key, v, "a nonnegative integer");
    }
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "true|false");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

std::string format_beta(double b) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", b);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "dgp.n") dgp.n = to_size(key, v);
    else if (key == "dgp.k") dgp.K = to_size(key, v);
    else if (key == "dgp.d") dgp.d = to_size(key, v);
    else if (key == "dgp.feedback") dgp.feedback = to_double(key, v);
    else if (key == "dgp.confounding") dgp.confounding = to_double(key, v);
    else if (key == "dgp.nonlinear") dgp.nonlinear = to_bool(key, v);
    else if (key == "dgp.censor_rate") dgp.censor_rate = to_double(key, v);
    else if (key == "model.hidden") model.hidden = to_size(key, v);
    else if (key == "model.repr_dim") model.repr_dim = to_size(key, v);
    else if (key == "model.head_hidden") model.head_hidden = to_size(key, v);
    else if (key == "model.treat_embed_dim") model.treat_embed_dim = to_size(key, v);
    else if (key == "model.encoder") model.encoder = parse_encoder_kind(v);
    else if (key == "model.link") model.link = parse_hazard_link(v);
    else if (key == "train.alpha") train.alpha = to_double(key, v);
    else if (key == "train.beta_reg") train.beta_reg = to_double(key, v);
    else if (key == "train.kernel_sigma") {
        if (v == "median") train.kernel_sigma.reset();
        else train.kernel_sigma = to_double(key, v);
    } else if (key == "train.pair_strategy") train.pair_strategy = parse_pair_strategy(v);
    else if (key == "train.unbiased_mmd") train.unbiased_mmd = to_bool(key, v);
    else if (key == "train.epochs") train.epochs = to_size(key, v);
    else if (key == "train.batch_size") train.batch_size = to_size(key, v);
    else if (key == "train.learning_rate") train.learning_rate = to_double(key, v);
    else if (key == "train.adam_beta1") train.adam_beta1 = to_double(key, v);
    else if (key == "train.adam_beta2") train.adam_beta2 = to_double(key, v);
    else if (key == "train.adam_eps") train.adam_eps = to_double(key, v);
    else if (key == "train.weights_mode") train.weights_mode = parse_weights_mode(v);
    else if (key == "train.diagnostic_cap") train.diagnostic_cap = to_size(key, v);
    else if (key == "weights.pooled") propensity.pooled = to_bool(key, v);
    else if (key == "weights.l2") propensity.l2 = to_double(key, v);
    else if (key == "weights.trim") {
        const auto parts = split(v, ',');
        if (parts.size() != 2) bad_value(key, v, "lower,upper");
        trim_lower = to_double(key, parts[0]);
        trim_upper = to_double(key, parts[1]);
    } else if (key == "grid.m") grid_m = to_size(key, v);
    else if (key == "grid.strategy") grid_strategy = parse_grid_strategy(v);
    else if (key == "contrast.a") contrast_a = parse_sequence(v);
    else if (key == "contrast.b") contrast_b = parse_sequence(v);
    else if (key == "experiment.replications") replications = to_size(key, v);
    else if (key == "experiment.n_test") n_test = to_size(key, v);
    else if (key == "experiment.seed") seed = to_u64(key, v);
    else if (key == "experiment.threads") threads = to_size(key, v);
    else if (key == "experiment.betas") {
        betas.clear();
        for (const auto& p : split(v, ',')) betas.push_back(to_double(key, p));
    } else if (key == "experiment.variants") {
        variants = split(v, ',');
        for (const auto& name : variants) variant_setup(name, model, train);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void ExperimentConfig::validate() const {
    DgpConfig d = dgp;
    d.validate();
    ModelConfig m = model;
    m.d = dgp.d;
    m.K = dgp.K;
    m.m = grid_m;
    m.validate();
    train.validate();
    if (!(trim_lower >= 0.0 && trim_lower < trim_upper && trim_upper <= 1.0)) {
        throw ConfigError("weights.trim: need 0 <= lower < upper <= 1");
    }
    if (propensity.l2 < 0.0) throw ConfigError("weights.l2 must be >= 0");
    if (grid_m < 2) throw ConfigError("grid.m must be >= 2");
    if (replications < 1) throw ConfigError("experiment.replications must be >= 1");
    if (n_test < 2) throw ConfigError("experiment.n_test must be >= 2");
    if (!contrast_a.empty() && contrast_a.size() != dgp.K + 1) throw ConfigError("contrast.a must have K+1 entries");
    if (!contrast_b.empty() && contrast_b.size() != dgp.K + 1) throw ConfigError("contrast.b must have K+1 entries");
    if (betas.empty()) throw ConfigError("experiment.betas must not be empty");
    for (double b : betas)
        if (b < 0.0) throw ConfigError("experiment.betas must be >= 0");
    if (variants.empty()) throw ConfigError("experiment.variants must not be empty");
}

TreatmentSequence ExperimentConfig::sequence_a() const {
    return contrast_a.empty() ? constant_sequence(dgp.K + 1, 1) : contrast_a;
}

TreatmentSequence ExperimentConfig::sequence_b() const {
    return contrast_b.empty() ? constant_sequence(dgp.K + 1, 0) : contrast_b;
}

std::string ExperimentConfig::canonical() const {
    std::map<std::string, std::string> kv{
        {"dgp.n", std::to_string(dgp.n)},
        {"dgp.k", std::to_string(dgp.K)},
        {"dgp.d", std::to_string(dgp.d)},
        {"dgp.feedback", num(dgp.feedback)},
        {"dgp.confounding", num(dgp.confounding)},
        {"dgp.nonlinear", bool_str(dgp.nonlinear)},
        {"dgp.censor_rate", num(dgp.censor_rate)},
        {"model.hidden", std::to_string(model.hidden)},
        {"model.repr_dim", std::to_string(model.repr_dim)},
        {"model.head_hidden", std::to_string(model.head_hidden)},
        {"model.treat_embed_dim", std::to_string(model.treat_embed_dim)},
        {"model.encoder", to_string(model.encoder)},
        {"model.link", to_string(model.link)},
        {"train.alpha", num(train.alpha)},
        {"train.beta_reg", num(train.beta_reg)},
        {"train.kernel_sigma", train.kernel_sigma ? num(*train.kernel_sigma) : "median"},
        {"train.pair_strategy", to_string(train.pair_strategy)},
        {"train.unbiased_mmd", bool_str(train.unbiased_mmd)},
        {"train.epochs", std::to_string(train.epochs)},
        {"train.batch_size", std::to_string(train.batch_size)},
        {"train.learning_rate", num(train.learning_rate)},
        {"train.adam_beta1", num(train.adam_beta1)},
        {"train.adam_beta2", num(train.adam_beta2)},
        {"train.adam_eps", num(train.adam_eps)},
        {"train.weights_mode", to_string(train.weights_mode)},
        {"train.diagnostic_cap", std::to_string(train.diagnostic_cap)},
        {"weights.pooled", bool_str(propensity.pooled)},
        {"weights.l2", num(propensity.l2)},
        {"weights.trim", num(trim_lower) + "," + num(trim_upper)},
        {"grid.m", std::to_string(grid_m)},
        {"grid.strategy", to_string(grid_strategy)},
        {"contrast.a", sequence_key(sequence_a())},
        {"contrast.b", sequence_key(sequence_b())},
        {"experiment.replications", std::to_string(replications)},
        {"experiment.n_test", std::to_string(n_test)},
        {"experiment.seed", std::to_string(seed)},
    };
    std::vector<std::string> b;
    for (double x : betas) b.push_back(num(x));
    kv["experiment.betas"] = join(b, ",");
    kv["experiment.variants"] = join(variants, ",");
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

std::string ExperimentConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        try {
            cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const Error& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str(), path.string());
}

// ---------------------------------------------------------------------------
// Variants and evaluation

const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> names{"full",         "no_balance",   "flattened",
                                                "unit_weights", "unstabilized", "fixed_repr"};
    return names;
}

VariantSetup variant_setup(const std::string& variant, const ModelConfig& model, const TrainConfig& train) {
    VariantSetup s{model, train, false};
    if (variant == "full") {
    } else if (variant == "no_balance") {
        s.train.alpha = 0.0;
    } else if (variant == "flattened") {
        s.model.encoder = EncoderKind::Flat;
    } else if (variant == "unit_weights") {
        s.train.weights_mode = WeightsMode::Unit;
    } else if (variant == "unstabilized") {
        s.train.weights_mode = WeightsMode::Unstabilized;
    } else if (variant == "fixed_repr") {
        s.fixed_representation = true;
    } else {
        throw ConfigError("unknown variant '" + variant + "' (expected one of " + join(ablation_variants(), ", ") + ")");
    }
    return s;
}

EvalReport evaluate(const Model& model, const Cohort& cohort, const TruthFn& truth, const TreatmentSequence& a,
                    const TreatmentSequence& b) {
    if (cohort.size() < 2) throw DataError("evaluate: need at least two individuals");
    const TimeGrid& grid = model.grid();
    EvalReport r;
    r.grid = grid;
    r.contrast_a = sequence_key(a);
    r.contrast_b = sequence_key(b);

    if (truth) {
        const auto pa = model.predict(cohort.trajectories, a);
        const auto pb = model.predict(cohort.trajectories, b);
        std::vector<SurvivalCurve> pred, real;
        std::vector<EffectCurve> est, eff;
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            const auto& t = cohort.trajectories[i];
            SurvivalCurve ta = truth(t, a), tb = truth(t, b);
            est.push_back(tv_cate(pa[i], pb[i], grid).effect);
            eff.push_back(tv_cate(ta, tb, grid).effect);
            pred.push_back(pa[i]);
            pred.push_back(pb[i]);
            real.push_back(std::move(ta));
            real.push_back(std::move(tb));
        }
        r.tv_pehe = tv_pehe(est, eff, grid);
        r.irmse = irmse(pred, real, grid);
    }

    const auto factual = model.predict_factual(cohort.trajectories);
    const std::size_t mid = (grid.m() + 1) / 2;  // ceil(m / 2)
    std::vector<double> risk, times;
    std::vector<int> events;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        risk.push_back(1.0 - factual[i].survival[mid - 1]);
        times.push_back(cohort.trajectories[i].observed_time);
        events.push_back(cohort.trajectories[i].event);
    }
    r.c_index = c_index(risk, times, events);
    const CensoringKm km(cohort);
    const auto ibs = integrated_brier(factual, cohort, grid, km);
    r.ibs = ibs.ibs;
    r.brier = ibs.brier;
    r.brier_excluded = ibs.excluded;
    return r;
}

TruthFn stored_truth(const Cohort& cohort, const TimeGrid& grid) {
    if (!cohort.has_truth()) {
        throw DataError("cohort has no ground-truth curves; truth-based metrics need a simulated cohort");
    }
    if (!cohort.truth_grid || !(*cohort.truth_grid == grid)) {
        throw DataError("stored ground truth is on a different time grid than the model");
    }
    return [&cohort](const Trajectory& t, const TreatmentSequence& seq) {
        const auto it = cohort.ground_truth.find(t.id);
        if (it == cohort.ground_truth.end()) throw DataError("no ground truth for id '" + t.id + "'");
        const auto jt = it->second.find(sequence_key(seq));
        if (jt == it->second.end()) {
            throw DataError("no ground truth for id '" + t.id + "' under sequence " + sequence_key(seq));
        }
        return jt->second;
    };
}

const VariantResult* ReplicateResult::find(const std::string& variant) const {
    for (const auto& v : variants)
        if (v.variant == variant) return &v;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Replicates

ReplicateResult run_replicate(const ExperimentConfig& config, std::size_t index,
                              const std::vector<std::string>& variants) {
    ReplicateResult res;
    res.index = index;
    res.seed = config.seed + index;
    try {
        DgpConfig dc = config.dgp;
        dc.seed = res.seed;
        const Dgp dgp(dc);
        const Cohort train_cohort = dgp.simulate_raw(dc.n, dc.seed);
        const Cohort test_cohort = dgp.simulate_raw(config.n_test, stream_seed(res.seed, 0x7e57));
        const TimeGrid grid = build_grid(train_cohort, config.grid_m, config.grid_strategy);

        const auto model_fit = fit_propensity(train_cohort, config.propensity);
        const WeightTable table =
            trim_weights(stabilized_weights(train_cohort, model_fit), config.trim_lower, config.trim_upper);
        res.weights = weight_diagnostics(table, &WeightRow::trimmed);
        res.unstabilized = weight_diagnostics(table, &WeightRow::unstabilized_trimmed);
        res.weight_rows = table.rows;

        ModelConfig mc = config.model;
        mc.d = dc.d;
        mc.K = dc.K;
        mc.m = config.grid_m;
        mc.seed = stream_seed(res.seed, 1);
        TrainConfig tc = config.train;
        tc.seed = stream_seed(res.seed, 2);

        const TreatmentSequence a = config.sequence_a(), b = config.sequence_b();
        const TruthFn truth = [&](const Trajectory& t, const TreatmentSequence& seq) {
            return dgp.true_survival(t.covariates, seq, grid);
        };
        for (const auto& name : variants) {
            const VariantSetup setup = variant_setup(name, mc, tc);
            TrainResult trained = setup.fixed_representation
                                      ? train_fixed_representation(train_cohort, grid, setup.model, setup.train, &table)
                                      : train(train_cohort, grid, setup.model, setup.train, &table);
            VariantResult vr;
            vr.variant = name;
            vr.report = evaluate(trained.model, test_cohort, truth, a, b);
            vr.epochs = std::move(trained.epochs);
            for (const auto& seq : {a, b}) {
                const auto pred = trained.model.predict(test_cohort.trajectories, seq);
                std::vector<double> mp(grid.boundaries.size()), mt(grid.boundaries.size());
                for (std::size_t i = 0; i < test_cohort.size(); ++i) {
                    const auto p = pred[i].on_boundaries();
                    const auto t = truth(test_cohort.trajectories[i], seq).on_boundaries();
                    for (std::size_t j = 0; j < mp.size(); ++j) {
                        mp[j] += p[j] / double(test_cohort.size());
                        mt[j] += t[j] / double(test_cohort.size());
                    }
                }
                vr.mean_curves[sequence_key(seq)] = {std::move(mp), std::move(mt)};
            }
            res.variants.push_back(std::move(vr));
        }
        res.ok = true;
    } catch (const std::exception& e) {
        res.ok = false;
        res.error = e.what();
        warn("replicate " + std::to_string(index) + " failed: " + res.error);
    }
    return res;
}

std::size_t worker_count(std::size_t requested, std::size_t tasks) {
    std::size_t n = requested > 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TVSURV_THREADS")) {
        char* end = nullptr;
        const unsigned long cap = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && cap > 0) n = std::min<std::size_t>(n, cap);
    }
    return std::max<std::size_t>(1, std::min(n, tasks));
}

std::vector<ReplicateResult> run_replicates(const ExperimentConfig& config, const std::vector<std::string>& variants) {
    config.validate();
    for (const auto& v : variants) variant_setup(v, config.model, config.train);
    std::vector<ReplicateResult> results(config.replications);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < results.size();) results[i] = run_replicate(config, i, variants);
    };
    const std::size_t width = worker_count(config.threads, results.size());
    if (width == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return results;
}

std::vector<SummaryRow> summarize(const std::vector<ReplicateResult>& results, const std::vector<std::string>& variants,
                                  const std::string& group) {
    static const std::vector<std::string> metrics{"tv_pehe", "irmse", "c_index", "ibs", "mmd_final"};
    std::vector<SummaryRow> rows;
    for (const auto& variant : variants) {
        for (const auto& metric : metrics) {
            SummaryRow row;
            row.group = group;
            row.variant = variant;
            row.metric = metric;
            std::vector<double> vals;
            for (const auto& r : results) {
                const VariantResult* v = r.ok ? r.find(variant) : nullptr;
                if (!v) {
                    ++row.n_failed;
                    continue;
                }
                double x = 0.0;
                if (metric == "tv_pehe") x = v->report.tv_pehe.value_or(NAN);
                else if (metric == "irmse") x = v->report.irmse.value_or(NAN);
                else if (metric == "c_index") x = v->report.c_index;
                else if (metric == "ibs") x = v->report.ibs;
                else x = v->epochs.empty() ? NAN : v->epochs.back().mmd_total;
                vals.push_back(x);
            }
            row.n_ok = vals.size();
            if (!vals.empty()) {
                for (double x : vals) row.mean += x;
                row.mean /= double(vals.size());
                if (vals.size() > 1) {
                    double ss = 0.0;
                    for (double x : vals) ss += (x - row.mean) * (x - row.mean);
                    row.sd = std::sqrt(ss / double(vals.size() - 1));
                }
            }
            rows.push_back(row);
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Report files

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json diagnostics_json(const WeightDiagnostics& d) {
    return {{"mean", d.mean},
            {"variance", d.variance},
            {"max", d.max},
            {"ess", d.ess},
            {"n", d.n},
            {"positivity_warnings", d.positivity_warnings}};
}

void write_replicate_files(const fs::path& dir, const ExperimentConfig& config, const ReplicateResult& r) {
    json doc = {{"config_hash", config.hash()},
                {"master_seed", config.seed},
                {"replicate", r.index},
                {"seed", r.seed},
                {"status", r.ok ? "ok" : "failed"}};
    if (!r.ok) doc["error"] = r.error;
    if (r.ok) {
        doc["weights"] = {{"stabilized", diagnostics_json(r.weights)},
                          {"unstabilized", diagnostics_json(r.unstabilized)}};
    }
    json variants = json::object();
    for (const auto& v : r.variants) {
        json entry = json::parse(v.report.to_json());
        if (!v.epochs.empty()) entry["mmd_final"] = v.epochs.back().mmd_total;
        variants[v.variant] = entry;
    }
    doc["variants"] = variants;
    auto out = open_out(dir / ("replicate_" + std::to_string(r.index) + ".json"));
    out << doc.dump(2) << '\n';

    auto ep = open_out(dir / ("epochs_" + std::to_string(r.index) + ".jsonl"));
    for (const auto& v : r.variants) {
        for (const auto& e : v.epochs) {
            json line = json::parse(e.to_json());
            line["variant"] = v.variant;
            line["config_hash"] = config.hash();
            ep << line.dump() << '\n';
        }
    }
}

void write_run_files(const fs::path& dir, const ExperimentConfig& config, const std::vector<ReplicateResult>& results) {
    fs::create_directories(dir);
    for (const auto& r : results) write_replicate_files(dir, config, r);

    auto w = open_out(dir / "weights.csv");
    w << "# config_hash=" << config.hash() << " master_seed=" << config.seed << '\n';
    w << "replicate,id,w_raw,w_trimmed,w_unstabilized,w_unstabilized_trimmed,positivity_warnings\n";
    for (const auto& r : results) {
        for (const auto& row : r.weight_rows) {
            w << r.index << ',' << row.id << ',' << num(row.raw) << ',' << num(row.trimmed) << ','
              << num(row.unstabilized) << ',' << num(row.unstabilized_trimmed) << ',' << row.positivity_warnings
              << '\n';
        }
    }

    std::map<std::string, std::ofstream> curves;
    for (const auto& r : results) {
        for (const auto& v : r.variants) {
            for (const auto& [key, mc] : v.mean_curves) {
                auto it = curves.find(key);
                if (it == curves.end()) {
                    it = curves.emplace(key, open_out(dir / ("curves_" + key + ".csv"))).first;
                    it->second << "# config_hash=" << config.hash() << " master_seed=" << config.seed << '\n';
                    it->second << "replicate,variant,tau,predicted,truth\n";
                }
                const auto& grid = v.report.grid.boundaries;
                for (std::size_t j = 0; j < grid.size(); ++j) {
                    it->second << r.index << ',' << v.variant << ',' << num(grid[j]) << ',' << num(mc.first[j]) << ','
                               << num(mc.second[j]) << '\n';
                }
            }
        }
    }
}

}  // namespace

void write_summary_csv(const fs::path& path, const ExperimentConfig& config, const std::vector<SummaryRow>& rows,
                       bool with_group) {
    auto out = open_out(path);
    out << "# config_hash=" << config.hash() << " master_seed=" << config.seed << '\n';
    out << "# generated_at=" << utc_timestamp() << '\n';
    out << (with_group ? "beta," : "") << "variant,metric,mean,sd,n_ok,n_failed,formatted\n";
    for (const auto& r : rows) {
        char formatted[64];
        std::snprintf(formatted, sizeof formatted, "%.3f ± %.3f", r.mean, r.sd);
        if (with_group) out << r.group << ',';
        out << r.variant << ',' << r.metric << ',' << num(r.mean) << ',' << num(r.sd) << ',' << r.n_ok << ','
            << r.n_failed << ',' << formatted << '\n';
    }
}

ExperimentOutput run_experiment(const ExperimentConfig& config, const fs::path& out_dir) {
    ExperimentOutput out;
    const std::vector<std::string> variants{"full"};
    out.replicates = run_replicates(config, variants);
    out.summary = summarize(out.replicates, variants);
    if (!out_dir.empty()) {
        write_run_files(out_dir, config, out.replicates);
        write_summary_csv(out_dir / "summary.csv", config, out.summary, false);
    }
    return out;
}

ExperimentOutput run_ablation(const ExperimentConfig& config, const fs::path& out_dir) {
    ExperimentOutput out;
    out.replicates = run_replicates(config, config.variants);
    out.summary = summarize(out.replicates, config.variants);
    if (!out_dir.empty()) {
        write_run_files(out_dir, config, out.replicates);
        write_summary_csv(out_dir / "summary.csv", config, out.summary, false);
    }
    return out;
}

ExperimentOutput run_feedback_sweep(const ExperimentConfig& config, const std::vector<double>& betas,
                                    const fs::path& out_dir) {
    if (betas.empty()) throw ConfigError("feedback sweep needs at least one beta");
    ExperimentOutput out;
    const std::vector<std::string> variants{"full", "no_balance"};
    for (double beta : betas) {
        ExperimentConfig c = config;
        c.dgp.feedback = beta;
        auto reps = run_replicates(c, variants);
        const auto rows = summarize(reps, variants, format_beta(beta));
        out.summary.insert(out.summary.end(), rows.begin(), rows.end());
        if (!out_dir.empty()) write_run_files(out_dir / ("beta_" + format_beta(beta)), c, reps);
        for (auto& r : reps) out.replicates.push_back(std::move(r));
    }
    if (!out_dir.empty()) write_summary_csv(out_dir / "summary.csv", config, out.summary, true);
    return out;
}

}  // namespace tvsurv
