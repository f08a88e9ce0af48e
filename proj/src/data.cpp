#include "tvsurv/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "tvsurv/errors.hpp"

namespace tvsurv {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kTieNudge = 1e-9;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        std::size_t start = 0;
        while (start < cell.size() && cell[start] == ' ') ++start;
        out.push_back(cell.substr(start));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (!s.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || s.empty()) throw DataError(where + ": '" + s + "' is not a number");
    return v;
}

long parse_int(const std::string& s, const std::string& where) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw DataError(where + ": '" + s + "' is not an integer");
    }
    return v;
}

int parse_binary(const std::string& s, const std::string& where) {
    const long v = parse_int(s, where);
    if (v != 0 && v != 1) throw DataError(where + ": value " + s + " is not binary (0/1)");
    return static_cast<int>(v);
}

std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string sequence_key(std::span<const int> seq) {
    std::string s;
    s.reserve(seq.size());
    for (int t : seq) s.push_back(t ? '1' : '0');
    return s;
}

TreatmentSequence parse_sequence(const std::string& key) {
    TreatmentSequence seq;
    seq.reserve(key.size());
    for (char c : key) {
        if (c != '0' && c != '1') throw DataError("treatment sequence '" + key + "' must contain only 0/1");
        seq.push_back(c - '0');
    }
    if (seq.empty()) throw DataError("empty treatment sequence");
    return seq;
}

TreatmentSequence constant_sequence(std::size_t length, int value) { return TreatmentSequence(length, value); }

// ---------------------------------------------------------------------------

SurvivalCurve SurvivalCurve::from_hazards(std::vector<double> hazards) {
    SurvivalCurve c;
    c.survival.resize(hazards.size());
    double s = 1.0;
    for (std::size_t j = 0; j < hazards.size(); ++j) {
        s *= 1.0 - hazards[j];
        c.survival[j] = s;
    }
    c.hazards = std::move(hazards);
    return c;
}

SurvivalCurve SurvivalCurve::from_survival(std::vector<double> survival) {
    SurvivalCurve c;
    c.hazards.resize(survival.size());
    double prev = 1.0;
    for (std::size_t j = 0; j < survival.size(); ++j) {
        c.hazards[j] = prev > 0.0 ? 1.0 - survival[j] / prev : 1.0;
        prev = survival[j];
    }
    c.survival = std::move(survival);
    return c;
}

double SurvivalCurve::pmf(std::size_t j) const { return hazards[j] * (j == 0 ? 1.0 : survival[j - 1]); }

std::vector<double> SurvivalCurve::on_boundaries() const {
    std::vector<double> out;
    out.reserve(survival.size() + 1);
    out.push_back(1.0);
    out.insert(out.end(), survival.begin(), survival.end());
    return out;
}

void SurvivalCurve::validate() const {
    if (hazards.size() != survival.size()) throw DataError("survival curve: hazards/survival length mismatch");
    double prev = 1.0;
    for (std::size_t j = 0; j < survival.size(); ++j) {
        const double s = survival[j];
        if (!std::isfinite(s) || s < 0.0 || s > 1.0 + 1e-12 || s > prev + 1e-12) {
            throw DataError("survival curve: value " + fmt_double(s) + " at interval " + std::to_string(j + 1) +
                            " breaks monotonicity or [0,1] bounds");
        }
        prev = s;
    }
}

void TimeGrid::validate() const {
    if (boundaries.size() < 3) throw DataError("time grid needs m >= 2 intervals");
    if (boundaries.front() != 0.0) throw DataError("time grid must start at 0");
    for (std::size_t j = 1; j < boundaries.size(); ++j) {
        if (!(boundaries[j] > boundaries[j - 1])) throw DataError("time grid boundaries must be strictly increasing");
    }
}

GridStrategy parse_grid_strategy(const std::string& s) {
    if (s == "quantile") return GridStrategy::Quantile;
    if (s == "uniform") return GridStrategy::Uniform;
    throw ConfigError("unknown grid strategy '" + s + "' (expected quantile|uniform)");
}

std::string to_string(GridStrategy s) { return s == GridStrategy::Quantile ? "quantile" : "uniform"; }

double Cohort::max_time() const {
    double mx = 0.0;
    for (const auto& t : trajectories) mx = std::max(mx, t.observed_time);
    return mx;
}

void Cohort::validate() const {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& t = trajectories[i];
        const std::string who = "individual '" + t.id + "'";
        if (!ids.insert(t.id).second) throw DataError(who + ": duplicate id");
        if (t.covariates.size() != K + 1) throw DataError(who + ": expected " + std::to_string(K + 1) + " covariate vectors");
        if (t.treatments.size() != K + 1) throw DataError(who + ": expected " + std::to_string(K + 1) + " treatments");
        for (std::size_t k = 0; k <= K; ++k) {
            if (t.covariates[k].size() != d) {
                throw DataError(who + ": covariate vector at k=" + std::to_string(k) + " has dimension " +
                                std::to_string(t.covariates[k].size()) + ", expected " + std::to_string(d));
            }
            for (double x : t.covariates[k]) {
                if (!std::isfinite(x)) throw DataError(who + ": non-finite covariate at k=" + std::to_string(k));
            }
            if (t.treatments[k] != 0 && t.treatments[k] != 1) {
                throw DataError(who + ": treatment at k=" + std::to_string(k) + " is not binary");
            }
        }
        if (!(t.observed_time >= 0.0) || !std::isfinite(t.observed_time)) throw DataError(who + ": negative or non-finite time");
        if (t.event != 0 && t.event != 1) throw DataError(who + ": event indicator is not binary");
    }
    for (const auto& [id, curves] : ground_truth) {
        for (const auto& [seq, curve] : curves) {
            if (seq.size() != K + 1) throw DataError("truth for '" + id + "': sequence " + seq + " has wrong length");
            curve.validate();
            if (truth_grid && curve.intervals() != truth_grid->m()) {
                throw DataError("truth for '" + id + "': curve length does not match truth grid");
            }
        }
    }
    if (truth_grid) truth_grid->validate();
}

// ---------------------------------------------------------------------------
// I/O

FileFormat parse_file_format(const std::string& s) {
    if (s == "csv") return FileFormat::Csv;
    if (s == "jsonl") return FileFormat::Jsonl;
    throw ConfigError("unknown format '" + s + "' (expected csv|jsonl)");
}

FileFormat format_from_path(const fs::path& p) {
    return p.extension() == ".csv" ? FileFormat::Csv : FileFormat::Jsonl;
}

fs::path outcomes_path_for(const fs::path& covariates_csv) {
    fs::path out = covariates_csv;
    out.replace_extension(".outcomes.csv");
    return out;
}

Cohort load_cohort_csv(const fs::path& covariates, const fs::path& outcomes) {
    const auto lines = read_lines(covariates);
    if (lines.empty()) throw DataError(covariates.string() + ": empty file");
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 4 || header[0] != "id" || header[1] != "k" || header.back() != "t") {
        throw DataError(covariates.string() + ": header must be 'id,k,x_0..x_{d-1},t'");
    }
    const std::size_t d = header.size() - 3;
    for (std::size_t j = 0; j < d; ++j) {
        if (header[2 + j] != "x_" + std::to_string(j)) {
            throw DataError(covariates.string() + ": missing column x_" + std::to_string(j));
        }
    }

    struct Row {
        long k;
        std::vector<double> x;
        int t;
    };
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<Row>> rows;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const auto cells = split_csv_line(lines[li]);
        const std::string where = covariates.string() + " row " + std::to_string(li + 1);
        if (cells.size() != header.size()) {
            throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(cells.size()));
        }
        Row r;
        r.k = parse_int(cells[1], where + " field k");
        if (r.k < 0) throw DataError(where + " field k: negative time index");
        r.x.resize(d);
        for (std::size_t j = 0; j < d; ++j) r.x[j] = parse_double(cells[2 + j], where + " field x_" + std::to_string(j));
        r.t = parse_binary(cells.back(), where + " field t");
        if (!rows.count(cells[0])) order.push_back(cells[0]);
        rows[cells[0]].push_back(std::move(r));
    }

    Cohort cohort;
    cohort.d = d;
    bool first = true;
    for (const auto& id : order) {
        auto& rs = rows[id];
        std::sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.k < b.k; });
        for (std::size_t k = 0; k < rs.size(); ++k) {
            if (rs[k].k != static_cast<long>(k)) {
                throw DataError(covariates.string() + ": individual '" + id + "' has missing or duplicate k=" +
                                std::to_string(k));
            }
        }
        if (first) {
            cohort.K = rs.size() - 1;
            first = false;
        } else if (rs.size() != cohort.K + 1) {
            throw DataError(covariates.string() + ": individual '" + id + "' has " + std::to_string(rs.size()) +
                            " rows, expected " + std::to_string(cohort.K + 1));
        }
        Trajectory t;
        t.id = id;
        for (auto& r : rs) {
            t.covariates.push_back(std::move(r.x));
            t.treatments.push_back(r.t);
        }
        cohort.trajectories.push_back(std::move(t));
    }

    const auto out_lines = read_lines(outcomes);
    if (out_lines.empty()) throw DataError(outcomes.string() + ": empty file");
    const auto oh = split_csv_line(out_lines[0]);
    if (oh.size() != 3 || oh[0] != "id" || oh[1] != "time" || oh[2] != "event") {
        throw DataError(outcomes.string() + ": header must be 'id,time,event'");
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < cohort.trajectories.size(); ++i) index[cohort.trajectories[i].id] = i;
    std::vector<bool> seen(cohort.trajectories.size(), false);
    for (std::size_t li = 1; li < out_lines.size(); ++li) {
        if (out_lines[li].empty()) continue;
        const auto cells = split_csv_line(out_lines[li]);
        const std::string where = outcomes.string() + " row " + std::to_string(li + 1);
        if (cells.size() != 3) throw DataError(where + ": expected 3 fields");
        auto it = index.find(cells[0]);
        if (it == index.end()) throw DataError(where + " field id: unknown id '" + cells[0] + "'");
        auto& t = cohort.trajectories[it->second];
        t.observed_time = parse_double(cells[1], where + " field time");
        if (t.observed_time < 0.0) throw DataError(where + " field time: negative time");
        t.event = parse_binary(cells[2], where + " field event");
        seen[it->second] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) throw DataError(outcomes.string() + ": no outcome row for id '" + cohort.trajectories[i].id + "'");
    }
    cohort.validate();
    return cohort;
}

namespace {

Cohort load_jsonl(const fs::path& path) {
    const auto lines = read_lines(path);
    Cohort cohort;
    bool first = true;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const std::string where = path.string() + " row " + std::to_string(li + 1);
        json obj;
        try {
            obj = json::parse(lines[li]);
        } catch (const json::exception& e) {
            throw DataError(where + ": invalid JSON (" + e.what() + ")");
        }
        for (const char* field : {"id", "x", "t", "time", "event"}) {
            if (!obj.contains(field)) throw DataError(where + ": missing field '" + field + "'");
        }
        Trajectory t;
        try {
            t.id = obj["id"].is_string() ? obj["id"].get<std::string>() : obj["id"].dump();
            t.covariates = obj["x"].get<std::vector<std::vector<double>>>();
            for (const auto& v : obj["t"]) {
                const double tv = v.get<double>();
                if (tv != 0.0 && tv != 1.0) throw DataError(where + " field t: value " + v.dump() + " is not binary");
                t.treatments.push_back(static_cast<int>(tv));
            }
            t.observed_time = obj["time"].get<double>();
            const double ev = obj["event"].get<double>();
            if (ev != 0.0 && ev != 1.0) throw DataError(where + " field event: value is not binary");
            t.event = static_cast<int>(ev);
        } catch (const json::exception& e) {
            throw DataError(where + ": malformed field (" + e.what() + ")");
        }
        if (t.observed_time < 0.0) throw DataError(where + " field time: negative time");
        if (t.covariates.empty()) throw DataError(where + " field x: empty covariate history");
        if (t.covariates.size() != t.treatments.size()) throw DataError(where + " field t: length differs from x");
        for (std::size_t k = 0; k < t.covariates.size(); ++k) {
            if (t.covariates[k].size() != t.covariates[0].size()) {
                throw DataError(where + " field x: ragged covariate dimension at k=" + std::to_string(k));
            }
        }
        if (first) {
            cohort.K = t.covariates.size() - 1;
            cohort.d = t.covariates[0].size();
            first = false;
        } else {
            if (t.covariates.size() != cohort.K + 1) throw DataError(where + " field x: sequence length differs from cohort K");
            if (t.covariates[0].size() != cohort.d) throw DataError(where + " field x: ragged covariate dimension");
        }
        if (obj.contains("truth_grid")) {
            TimeGrid g{obj["truth_grid"].get<std::vector<double>>()};
            if (!cohort.truth_grid) cohort.truth_grid = g;
            else if (!(*cohort.truth_grid == g)) throw DataError(where + " field truth_grid: differs between rows");
        }
        if (obj.contains("truth")) {
            for (const auto& [seq, arr] : obj["truth"].items()) {
                parse_sequence(seq);
                cohort.ground_truth[t.id][seq] = SurvivalCurve::from_survival(arr.get<std::vector<double>>());
            }
        }
        cohort.trajectories.push_back(std::move(t));
    }
    cohort.validate();
    return cohort;
}

void save_jsonl(const Cohort& cohort, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& t : cohort.trajectories) {
        json obj;
        obj["id"] = t.id;
        obj["x"] = t.covariates;
        obj["t"] = t.treatments;
        obj["time"] = t.observed_time;
        obj["event"] = t.event;
        auto it = cohort.ground_truth.find(t.id);
        if (it != cohort.ground_truth.end()) {
            json truth = json::object();
            for (const auto& [seq, curve] : it->second) truth[seq] = curve.survival;
            obj["truth"] = truth;
            if (cohort.truth_grid) obj["truth_grid"] = cohort.truth_grid->boundaries;
        }
        out << obj.dump() << '\n';
    }
}

void save_csv(const Cohort& cohort, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "id,k";
    for (std::size_t j = 0; j < cohort.d; ++j) out << ",x_" << j;
    out << ",t\n";
    for (const auto& t : cohort.trajectories) {
        for (std::size_t k = 0; k <= cohort.K; ++k) {
            out << t.id << ',' << k;
            for (double x : t.covariates[k]) out << ',' << fmt_double(x);
            out << ',' << t.treatments[k] << '\n';
        }
    }
    std::ofstream oo(outcomes_path_for(path));
    if (!oo) throw DataError("cannot write " + outcomes_path_for(path).string());
    oo << "id,time,event\n";
    for (const auto& t : cohort.trajectories) oo << t.id << ',' << fmt_double(t.observed_time) << ',' << t.event << '\n';
}

}  // namespace

Cohort load_cohort(const fs::path& path, FileFormat format) {
    if (format == FileFormat::Csv) return load_cohort_csv(path, outcomes_path_for(path));
    return load_jsonl(path);
}

void save_cohort(const Cohort& cohort, const fs::path& path, FileFormat format) {
    if (format == FileFormat::Csv) {
        if (cohort.has_truth()) warn("CSV format drops ground-truth curves; use jsonl to keep them");
        save_csv(cohort, path);
    } else {
        save_jsonl(cohort, path);
    }
}

// ---------------------------------------------------------------------------
// Grid

TimeGrid build_grid(std::span<const double> times, std::size_t m, GridStrategy strategy) {
    if (m < 2) throw ConfigError("build_grid: m must be >= 2");
    if (times.empty()) throw DataError("build_grid: empty cohort");
    std::vector<double> sorted(times.begin(), times.end());
    std::sort(sorted.begin(), sorted.end());
    const double tmax = sorted.back();
    if (!(tmax > 0.0)) throw DataError("build_grid: all observed times are zero");

    TimeGrid grid;
    grid.boundaries.resize(m + 1);
    grid.boundaries[0] = 0.0;
    if (strategy == GridStrategy::Uniform) {
        for (std::size_t j = 1; j < m; ++j) grid.boundaries[j] = tmax * static_cast<double>(j) / static_cast<double>(m);
        grid.boundaries[m] = tmax;
        return grid;
    }

    std::size_t distinct = 1;
    for (std::size_t i = 1; i < sorted.size(); ++i) distinct += sorted[i] != sorted[i - 1];
    if (m > distinct) {
        throw DataError("build_grid: m=" + std::to_string(m) + " exceeds the " + std::to_string(distinct) +
                        " distinct observed times; use the uniform strategy");
    }
    const std::size_t n = sorted.size();
    for (std::size_t j = 1; j < m; ++j) {
        // inverse empirical CDF at j/m
        const std::size_t rank = (j * n + m - 1) / m;  // ceil(j n / m)
        double q = sorted[std::max<std::size_t>(rank, 1) - 1];
        if (q <= grid.boundaries[j - 1]) q = grid.boundaries[j - 1] + kTieNudge;
        grid.boundaries[j] = q;
    }
    grid.boundaries[m] = tmax;
    if (!(grid.boundaries[m] > grid.boundaries[m - 1])) {
        throw DataError("build_grid: quantile boundaries collapse at the maximum time; use the uniform strategy");
    }
    return grid;
}

TimeGrid build_grid(const Cohort& cohort, std::size_t m, GridStrategy strategy) {
    std::vector<double> times;
    times.reserve(cohort.size());
    for (const auto& t : cohort.trajectories) times.push_back(t.observed_time);
    return build_grid(times, m, strategy);
}

std::size_t interval_index(const TimeGrid& grid, double t) {
    if (!(t >= 0.0)) throw DataError("interval_index: negative time");
    if (t > grid.horizon()) {
        throw DataError("interval_index: time " + fmt_double(t) + " exceeds grid horizon " + fmt_double(grid.horizon()));
    }
    const auto it = std::upper_bound(grid.boundaries.begin(), grid.boundaries.end(), t);
    const std::size_t j = static_cast<std::size_t>(it - grid.boundaries.begin());
    return std::min(j, grid.m());
}

}  // namespace tvsurv
