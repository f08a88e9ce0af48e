#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "tvsurv/dgp.hpp"
#include "tvsurv/errors.hpp"
#include "tvsurv/experiment.hpp"
#include "tvsurv/metrics.hpp"
#include "tvsurv/model.hpp"
#include "tvsurv/training.hpp"
#include "tvsurv/weights.hpp"

namespace py = pybind11;
using namespace tvsurv;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array curves_to_array(const std::vector<SurvivalCurve>& curves) {
    const std::size_t m = curves.empty() ? 0 : curves[0].intervals() + 1;
    Array out({curves.size(), m});
    auto v = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto s = curves[i].on_boundaries();
        for (std::size_t j = 0; j < m; ++j) v(i, j) = s[j];
    }
    return out;
}

ad::Tensor to_tensor(const Array& a) {
    if (a.ndim() == 1) {
        ad::Tensor t(a.shape(0), 1);
        for (py::ssize_t i = 0; i < a.shape(0); ++i) t(i, 0) = a.at(i);
        return t;
    }
    if (a.ndim() != 2) throw ShapeError("expected a 1-D or 2-D array");
    ad::Tensor t(a.shape(0), a.shape(1));
    auto v = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (py::ssize_t j = 0; j < a.shape(1); ++j) t(i, j) = v(i, j);
    return t;
}

ExperimentConfig make_config(const std::map<std::string, std::string>& overrides) {
    ExperimentConfig c;
    for (const auto& [k, v] : overrides) c.set(k, v);
    c.validate();
    return c;
}

py::dict diagnostics_dict(const WeightDiagnostics& d) {
    py::dict out;
    out["mean"] = d.mean;
    out["variance"] = d.variance;
    out["max"] = d.max;
    out["ess"] = d.ess;
    out["n"] = d.n;
    out["positivity_warnings"] = d.positivity_warnings;
    return out;
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

std::vector<py::dict> summary_dicts(const std::vector<SummaryRow>& rows) {
    std::vector<py::dict> out;
    for (const auto& r : rows) {
        py::dict d;
        d["group"] = r.group;
        d["variant"] = r.variant;
        d["metric"] = r.metric;
        d["mean"] = r.mean;
        d["sd"] = r.sd;
        d["n_ok"] = r.n_ok;
        d["n_failed"] = r.n_failed;
        out.push_back(d);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_tvsurv, m) {
    m.doc() = "Time-varying counterfactual survival estimation (C++ core)";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<DataError>(m, "DataError", base);
    py::register_exception<NumericalError>(m, "NumericalError", base);
    py::register_exception<ShapeError>(m, "ShapeError", base);

    py::class_<TimeGrid>(m, "TimeGrid")
        .def(py::init([](std::vector<double> b) {
                 TimeGrid g{std::move(b)};
                 g.validate();
                 return g;
             }),
             py::arg("boundaries"))
        .def_readonly("boundaries", &TimeGrid::boundaries)
        .def_property_readonly("m", &TimeGrid::m)
        .def("__repr__", [](const TimeGrid& g) { return "TimeGrid(m=" + std::to_string(g.m()) + ")"; });

    py::class_<Cohort>(m, "Cohort")
        .def_property_readonly("n", &Cohort::size)
        .def("__len__", &Cohort::size)
        .def_readonly("d", &Cohort::d)
        .def_readonly("K", &Cohort::K)
        .def_readonly("truth_grid", &Cohort::truth_grid)
        .def_property_readonly("ids",
                               [](const Cohort& c) {
                                   std::vector<std::string> ids;
                                   for (const auto& t : c.trajectories) ids.push_back(t.id);
                                   return ids;
                               })
        .def_property_readonly("covariates",
                               [](const Cohort& c) {
                                   Array out({c.size(), c.K + 1, c.d});
                                   auto v = out.mutable_unchecked<3>();
                                   for (std::size_t i = 0; i < c.size(); ++i)
                                       for (std::size_t k = 0; k <= c.K; ++k)
                                           for (std::size_t j = 0; j < c.d; ++j)
                                               v(i, k, j) = c.trajectories[i].covariates[k][j];
                                   return out;
                               })
        .def_property_readonly("treatments",
                               [](const Cohort& c) {
                                   py::array_t<int> out({c.size(), c.K + 1});
                                   auto v = out.mutable_unchecked<2>();
                                   for (std::size_t i = 0; i < c.size(); ++i)
                                       for (std::size_t k = 0; k <= c.K; ++k) v(i, k) = c.trajectories[i].treatments[k];
                                   return out;
                               })
        .def_property_readonly("times",
                               [](const Cohort& c) {
                                   std::vector<double> t;
                                   for (const auto& r : c.trajectories) t.push_back(r.observed_time);
                                   return Array(py::cast(t));
                               })
        .def_property_readonly("events",
                               [](const Cohort& c) {
                                   std::vector<int> e;
                                   for (const auto& r : c.trajectories) e.push_back(r.event);
                                   return py::array_t<int>(py::cast(e));
                               })
        .def("truth",
             [](const Cohort& c, const std::string& sequence) {
                 std::vector<SurvivalCurve> curves;
                 for (const auto& t : c.trajectories) {
                     const auto it = c.ground_truth.find(t.id);
                     if (it == c.ground_truth.end() || !it->second.count(sequence))
                         throw DataError("no stored truth for sequence " + sequence + " of '" + t.id + "'");
                     curves.push_back(it->second.at(sequence));
                 }
                 return curves_to_array(curves);
             },
             py::arg("sequence"), "True survival on the truth grid boundaries, shape (n, m+1).")
        .def("save",
             [](const Cohort& c, const std::filesystem::path& p, const std::string& format) {
                 save_cohort(c, p, format.empty() ? format_from_path(p) : parse_file_format(format));
             },
             py::arg("path"), py::arg("format") = "");

    m.def(
        "simulate",
        [](std::size_t n, std::size_t K, std::size_t d, double feedback, double confounding, bool nonlinear,
           double censor_rate, std::uint64_t seed, std::size_t m_truth) {
            DgpConfig c;
            c.n = n;
            c.K = K;
            c.d = d;
            c.feedback = feedback;
            c.confounding = confounding;
            c.nonlinear = nonlinear;
            c.censor_rate = censor_rate;
            c.seed = seed;
            c.m_truth = m_truth;
            return simulate(c);
        },
        py::arg("n") = 5000, py::arg("K") = 8, py::arg("d") = 10, py::arg("feedback") = 0.5,
        py::arg("confounding") = 1.0, py::arg("nonlinear") = true, py::arg("censor_rate") = 0.3, py::arg("seed") = 1,
        py::arg("m_truth") = 20);

    m.def(
        "load_cohort",
        [](const std::filesystem::path& p, const std::string& format) {
            return load_cohort(p, format.empty() ? format_from_path(p) : parse_file_format(format));
        },
        py::arg("path"), py::arg("format") = "");

    m.def(
        "build_grid",
        [](const Cohort& c, std::size_t m, const std::string& strategy) {
            return build_grid(c, m, parse_grid_strategy(strategy));
        },
        py::arg("cohort"), py::arg("m") = 20, py::arg("strategy") = "quantile");

    m.def(
        "fit_weights",
        [](const Cohort& c, bool pooled, double l2, double lower, double upper) {
            PropensityOptions o;
            o.pooled = pooled;
            o.l2 = l2;
            const WeightTable t = trim_weights(stabilized_weights(c, fit_propensity(c, o)), lower, upper);
            py::dict out;
            out["ids"] = [&] {
                std::vector<std::string> ids;
                for (const auto& r : t.rows) ids.push_back(r.id);
                return ids;
            }();
            out["raw"] = Array(py::cast(t.column(&WeightRow::raw)));
            out["trimmed"] = Array(py::cast(t.column(&WeightRow::trimmed)));
            out["unstabilized"] = Array(py::cast(t.column(&WeightRow::unstabilized)));
            out["diagnostics"] = diagnostics_dict(weight_diagnostics(t, &WeightRow::raw));
            return out;
        },
        py::arg("cohort"), py::arg("pooled") = true, py::arg("l2") = 0.0, py::arg("lower") = 0.01,
        py::arg("upper") = 0.99, "Stabilized weights (raw and trimmed) plus diagnostics of the raw column.");

    py::class_<Model>(m, "Model")
        .def_static("load", &Model::load, py::arg("path"))
        .def("save", &Model::save, py::arg("path"))
        .def_property_readonly("grid", &Model::grid)
        .def_property_readonly("K", [](const Model& md) { return md.config().K; })
        .def_property_readonly("d", [](const Model& md) { return md.config().d; })
        .def(
            "predict",
            [](const Model& md, const Cohort& c, const std::string& sequence) {
                return curves_to_array(md.predict(c.trajectories, parse_sequence(sequence)));
            },
            py::arg("cohort"), py::arg("sequence"), "Survival on the grid boundaries, shape (n, m+1).")
        .def(
            "representations",
            [](const Model& md, const Cohort& c) {
                const ad::Tensor z = md.representations(c.trajectories);
                Array out({z.rows(), z.cols()});
                auto v = out.mutable_unchecked<2>();
                for (std::size_t i = 0; i < z.rows(); ++i)
                    for (std::size_t j = 0; j < z.cols(); ++j) v(i, j) = z(i, j);
                return out;
            },
            py::arg("cohort"))
        .def(
            "tv_cate",
            [](const Model& md, const Cohort& c, const std::string& a, const std::string& b) {
                const auto sa = parse_sequence(a), sb = parse_sequence(b);
                std::vector<SurvivalCurve> ea, eb;
                std::vector<double> rm;
                const auto ca = md.predict(c.trajectories, sa), cb = md.predict(c.trajectories, sb);
                for (std::size_t i = 0; i < ca.size(); ++i) rm.push_back(tv_cate(ca[i], cb[i], md.grid()).delta_rmst);
                Array effect = curves_to_array(ca);
                const Array other = curves_to_array(cb);
                auto v = effect.mutable_unchecked<2>();
                auto w = other.unchecked<2>();
                for (py::ssize_t i = 0; i < v.shape(0); ++i)
                    for (py::ssize_t j = 0; j < v.shape(1); ++j) v(i, j) -= w(i, j);
                return py::make_tuple(effect, Array(py::cast(rm)));
            },
            py::arg("cohort"), py::arg("a"), py::arg("b"),
            "(S_a - S_b on the boundaries, delta RMST per individual).");

    m.def(
        "train",
        [](const Cohort& c, py::object weights, const std::string& variant,
           const std::map<std::string, std::string>& overrides) {
            const ExperimentConfig cfg = make_config(overrides);
            const TimeGrid grid = build_grid(c, cfg.grid_m, cfg.grid_strategy);
            ModelConfig mc = cfg.model;
            mc.d = c.d;
            mc.K = c.K;
            mc.m = cfg.grid_m;
            mc.seed = cfg.seed;
            TrainConfig tc = cfg.train;
            tc.seed = cfg.seed;
            const VariantSetup setup = variant_setup(variant, mc, tc);
            std::optional<WeightTable> table;
            if (!weights.is_none()) {
                const auto w = weights.cast<std::vector<double>>();
                if (w.size() != c.size()) throw DataError("weights must have one entry per individual");
                table.emplace();
                for (std::size_t i = 0; i < w.size(); ++i) {
                    WeightRow r;
                    r.id = c.trajectories[i].id;
                    r.raw = r.trimmed = r.unstabilized = r.unstabilized_trimmed = w[i];
                    table->rows.push_back(r);
                }
            } else if (setup.train.weights_mode != WeightsMode::Unit) {
                table = trim_weights(stabilized_weights(c, fit_propensity(c, cfg.propensity)), cfg.trim_lower,
                                     cfg.trim_upper);
            }
            std::vector<py::object> log;
            TrainResult result = [&] {
                py::gil_scoped_release release;
                const WeightTable* tp = table ? &*table : nullptr;
                return setup.fixed_representation ? train_fixed_representation(c, grid, setup.model, setup.train, tp)
                                                  : train(c, grid, setup.model, setup.train, tp);
            }();
            for (const auto& e : result.epochs) log.push_back(parse_json(e.to_json()));
            return py::make_tuple(std::move(result.model), log);
        },
        py::arg("cohort"), py::arg("weights") = py::none(), py::arg("variant") = "full",
        py::arg("overrides") = std::map<std::string, std::string>{},
        "Trains a model; returns (model, epoch log). Weights default to fitted, trimmed stabilized weights.");

    m.def(
        "evaluate",
        [](const Model& md, const Cohort& c, const std::string& a, const std::string& b) {
            const auto K = md.config().K;
            TruthFn truth;
            if (c.has_truth()) truth = stored_truth(c, md.grid());
            const auto report = evaluate(md, c, truth, a.empty() ? constant_sequence(K + 1, 1) : parse_sequence(a),
                                         b.empty() ? constant_sequence(K + 1, 0) : parse_sequence(b));
            return parse_json(report.to_json());
        },
        py::arg("model"), py::arg("cohort"), py::arg("a") = "", py::arg("b") = "");

    m.def(
        "mmd2",
        [](const Array& a, const Array& b, double sigma, bool unbiased) {
            return mmd2(to_tensor(a), to_tensor(b), sigma, unbiased);
        },
        py::arg("a"), py::arg("b"), py::arg("sigma"), py::arg("unbiased") = false);

    m.def(
        "tv_pehe",
        [](const Array& predicted, const Array& truth, const TimeGrid& grid, bool root) {
            auto rows = [](const Array& a) {
                if (a.ndim() != 2) throw ShapeError("effect curves must be 2-D (n, m+1)");
                std::vector<EffectCurve> out(a.shape(0));
                auto v = a.unchecked<2>();
                for (py::ssize_t i = 0; i < a.shape(0); ++i)
                    for (py::ssize_t j = 0; j < a.shape(1); ++j) out[i].push_back(v(i, j));
                return out;
            };
            return tv_pehe(rows(predicted), rows(truth), grid, root);
        },
        py::arg("predicted"), py::arg("truth"), py::arg("grid"), py::arg("root") = true);

    m.def(
        "c_index",
        [](std::vector<double> risk, std::vector<double> times, std::vector<int> events) {
            return c_index(risk, times, events);
        },
        py::arg("risk"), py::arg("times"), py::arg("events"));

    m.def(
        "run_experiment",
        [](const std::map<std::string, std::string>& overrides, const std::string& kind,
           const std::filesystem::path& out_dir) {
            const ExperimentConfig cfg = make_config(overrides);
            ExperimentOutput out;
            {
                py::gil_scoped_release release;
                if (kind == "experiment") out = run_experiment(cfg, out_dir);
                else if (kind == "ablation") out = run_ablation(cfg, out_dir);
                else if (kind == "sweep") out = run_feedback_sweep(cfg, cfg.betas, out_dir);
                else throw ConfigError("kind must be experiment, ablation or sweep, got '" + kind + "'");
            }
            return summary_dicts(out.summary);
        },
        py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("kind") = "experiment",
        py::arg("out_dir") = std::filesystem::path{});
}
