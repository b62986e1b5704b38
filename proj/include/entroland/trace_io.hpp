#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "entroland/grid.hpp"
#include "entroland/solvers.hpp"

namespace entroland {

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::optional<double> parse_optional_double(const std::string& cell) {
    if (cell.empty()) return std::nullopt;
    return std::stod(cell);
}

// JSON has no non-finite numbers; store those as strings.
inline nlohmann::json json_number(double v) {
    if (std::isfinite(v)) return v;
    return format_double(v);
}

inline double parse_json_number(const nlohmann::json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) return std::stod(v.get<std::string>());
    return fallback;
}

} // namespace detail

inline const char* kTraceHeader = "k,residual,kl_to_truth,D_to_truth,l1_error,mass,ln_ck,clamp_events";

/// Trace CSV: one header row, one row per recorded iterate. Doubles are
/// written with round-trip precision; truth-relative columns are empty when
/// the run had no reference solution.
inline void write_trace_csv(std::ostream& os, const std::vector<IterationRecord>& trace) {
    os << kTraceHeader << '\n';
    for (const auto& r : trace) {
        os << r.k << ',' << detail::format_double(r.residual) << ',';
        if (r.kl_to_truth) os << detail::format_double(*r.kl_to_truth);
        os << ',';
        if (r.D_to_truth) os << detail::format_double(*r.D_to_truth);
        os << ',';
        if (r.l1_error) os << detail::format_double(*r.l1_error);
        os << ',' << detail::format_double(r.mass) << ',' << detail::format_double(r.ln_ck)
           << ',' << r.clamp_events << '\n';
    }
}

inline void write_trace_csv(const std::string& path, const std::vector<IterationRecord>& trace) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write trace '" + path + "'");
    write_trace_csv(os, trace);
}

class TraceFormatError : public std::runtime_error {
public:
    explicit TraceFormatError(const std::string& what) : std::runtime_error(what) {}
};

inline std::vector<IterationRecord> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line))
        throw TraceFormatError("empty trace file");
    if (line != kTraceHeader)
        throw TraceFormatError("unexpected trace header: " + line);
    std::vector<IterationRecord> trace;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        while (cells.size() < 8) cells.emplace_back();
        if (cells.size() != 8)
            throw TraceFormatError("trace row with " + std::to_string(cells.size()) + " columns");
        IterationRecord r;
        r.k = std::stoi(cells[0]);
        r.residual = std::stod(cells[1]);
        r.kl_to_truth = detail::parse_optional_double(cells[2]);
        r.D_to_truth = detail::parse_optional_double(cells[3]);
        r.l1_error = detail::parse_optional_double(cells[4]);
        r.mass = std::stod(cells[5]);
        r.ln_ck = std::stod(cells[6]);
        r.clamp_events = std::stoi(cells[7]);
        trace.push_back(r);
    }
    return trace;
}

inline std::vector<IterationRecord> read_trace_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw TraceFormatError("cannot open trace '" + path + "'");
    return read_trace_csv(is);
}

/// Run metadata written next to each trace CSV.
struct TraceSidecar {
    std::string problem;
    std::string method;
    int mode = 0;
    double lambda = 0.0;
    double c = 0.0;
    double tau_disc = 0.0;
    double delta = 0.0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t rng_seed = 0;
    std::size_t blocks = 1;
    std::string operator_id;
    double grid_lower = 0.0;
    double grid_upper = 0.0;
    std::size_t grid_n = 0;
    std::string stop_reason;
    int k_star = 0;
    std::size_t rows = 0;
    double u0_value = 0.0;
    long clamp_total = 0;

    nlohmann::json to_json() const {
        return {
            {"problem", problem},
            {"method", method},
            {"m", mode},
            {"lambda", detail::json_number(lambda)},
            {"c", detail::json_number(c)},
            {"tau_disc", detail::json_number(tau_disc)},
            {"delta", detail::json_number(delta)},
            {"sigma", detail::json_number(sigma)},
            {"seed", seed},
            {"rng_seed", rng_seed},
            {"blocks", blocks},
            {"operator", operator_id},
            {"grid", {{"lower", grid_lower}, {"upper", grid_upper}, {"n", grid_n}}},
            {"stop_reason", stop_reason},
            {"k_star", k_star},
            {"rows", rows},
            {"u0", u0_value},
            {"clamp_total", clamp_total},
        };
    }

    static TraceSidecar from_json(const nlohmann::json& j) {
        TraceSidecar s;
        s.problem = j.at("problem").get<std::string>();
        s.method = j.at("method").get<std::string>();
        s.mode = j.value("m", 0);
        s.lambda = detail::parse_json_number(j, "lambda", 0.0);
        s.c = detail::parse_json_number(j, "c", 0.0);
        s.tau_disc = detail::parse_json_number(j, "tau_disc", 0.0);
        s.delta = detail::parse_json_number(j, "delta", 0.0);
        s.sigma = detail::parse_json_number(j, "sigma", 0.0);
        s.seed = j.value("seed", std::uint64_t{0});
        s.rng_seed = j.value("rng_seed", std::uint64_t{0});
        s.blocks = j.value("blocks", std::size_t{1});
        s.operator_id = j.value("operator", std::string{});
        if (j.contains("grid")) {
            s.grid_lower = j["grid"].value("lower", 0.0);
            s.grid_upper = j["grid"].value("upper", 0.0);
            s.grid_n = j["grid"].value("n", std::size_t{0});
        }
        s.stop_reason = j.value("stop_reason", std::string{});
        s.k_star = j.value("k_star", 0);
        s.rows = j.value("rows", std::size_t{0});
        s.u0_value = j.value("u0", 0.0);
        s.clamp_total = j.value("clamp_total", 0L);
        return s;
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot write sidecar '" + path + "'");
        os << to_json().dump(2) << '\n';
    }

    static TraceSidecar load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open sidecar '" + path + "'");
        nlohmann::json j;
        is >> j;
        return from_json(j);
    }
};

/// Grid-function CSV: header and (node, value) pairs.
inline void write_grid_function_csv(std::ostream& os, const GridFunction& f) {
    os << "node,value\n";
    for (std::size_t i = 0; i < f.size(); ++i)
        os << detail::format_double(f.grid().node(i)) << ',' << detail::format_double(f[i]) << '\n';
}

/// Rebuild a grid function from (node, value) pairs; the grid is recovered
/// from the first and last node and the row count.
inline GridFunction read_grid_function_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "node,value")
        throw TraceFormatError("expected 'node,value' header");
    std::vector<double> nodes, values;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw TraceFormatError("malformed grid-function row");
        nodes.push_back(std::stod(line.substr(0, comma)));
        values.push_back(std::stod(line.substr(comma + 1)));
    }
    if (nodes.size() < 2) throw TraceFormatError("grid function needs at least 2 rows");
    auto grid = make_grid(nodes.front(), nodes.back(), nodes.size());
    return GridFunction(std::move(grid), std::move(values));
}

} // namespace entroland
