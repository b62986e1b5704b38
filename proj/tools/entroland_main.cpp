// Experiment driver: runs the iteration schemes on a JSON-configured
// problem, writes one trace CSV + JSON sidecar per method, merges traces,
// and re-checks recorded traces against the solver's guarantees.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration error,
// 3 solver abort (partial trace still written).

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "entroland/experiments.hpp"
#include "entroland/solvers.hpp"
#include "entroland/trace_io.hpp"

namespace {

using namespace entroland;

struct MethodChoice {
    Method method = Method::Entropic;
    std::optional<Mode> mode_override;
};

std::optional<MethodChoice> parse_method(const std::string& name) {
    if (name == "entropic") return MethodChoice{Method::Entropic, Mode::Unconstrained};
    if (name == "entropic-prob") return MethodChoice{Method::Entropic, Mode::Probability};
    if (name == "entropic-stochastic") return MethodChoice{Method::EntropicStochastic, std::nullopt};
    if (name == "em") return MethodChoice{Method::Em, std::nullopt};
    if (name == "proj-landweber") return MethodChoice{Method::ProjectedLandweber, std::nullopt};
    if (name == "general-fidelity") return MethodChoice{Method::GeneralFidelity, std::nullopt};
    return std::nullopt;
}

std::size_t thread_cap(std::size_t jobs) {
    std::size_t cap = std::thread::hardware_concurrency();
    if (cap == 0) cap = 1;
    if (const char* env = std::getenv("ENTROLAND_THREADS")) {
        const long parsed = std::atol(env);
        if (parsed >= 1) cap = static_cast<std::size_t>(parsed);
    }
    return std::min(cap, std::max<std::size_t>(jobs, 1));
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct RunOutcome {
    bool ok = false;
    bool aborted = false;
    std::string summary;
    std::string error;
};

int cmd_run(const std::string& config_path, const std::vector<std::string>& method_names,
            const std::string& stop_name, std::optional<int> max_iter,
            std::optional<double> lambda, std::optional<double> tau_disc,
            std::optional<double> sigma, std::optional<std::uint64_t> seed,
            std::optional<std::size_t> blocks, std::optional<double> delta_override,
            const std::string& out_dir) {
    ProblemSpec spec;
    try {
        spec = ProblemSpec::load(config_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    if (sigma) spec.sigma = *sigma;
    if (seed) spec.seed = *seed;
    if (lambda) spec.defaults.lambda = *lambda;
    if (tau_disc) spec.defaults.tau_disc = *tau_disc;
    if (max_iter) spec.defaults.max_iter = *max_iter;

    std::vector<MethodChoice> choices;
    for (const auto& name : method_names) {
        const auto parsed = parse_method(name);
        if (!parsed) {
            std::cerr << "config error: unknown method '" << name << "'\n";
            return 2;
        }
        choices.push_back(*parsed);
    }

    std::optional<AssembledProblem> assembled;
    try {
        assembled = assemble(spec);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    AssembledProblem& problem = *assembled;

    const double delta = delta_override ? *delta_override : problem.delta;
    StoppingRule stop = MaxIterRule{};
    std::string effective_stop = stop_name;
    if (effective_stop.empty()) effective_stop = spec.sigma > 0.0 ? "discrepancy" : "maxiter";
    if (effective_stop == "discrepancy") {
        if (!(delta > 0.0)) {
            std::cerr << "config error: discrepancy stop needs a positive noise level\n";
            return 2;
        }
        stop = DiscrepancyRule{problem.config.tau, delta};
    } else if (effective_stop == "apriori") {
        if (!(delta > 0.0)) {
            std::cerr << "config error: apriori stop needs a positive noise level\n";
            return 2;
        }
        stop = APrioriRule{problem.config.apriori_constant, delta};
    } else if (effective_stop != "maxiter") {
        std::cerr << "config error: unknown stop rule '" << effective_stop << "'\n";
        return 2;
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        std::cerr << "config error: cannot create output directory '" << out_dir << "'\n";
        return 2;
    }

    // Shared, read-only across the per-method workers; norm cached up front.
    problem.op->norm_estimate();

    std::vector<RunOutcome> outcomes(choices.size());
    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= choices.size()) return;
            const MethodChoice& choice = choices[i];
            const std::string& name = method_names[i];
            RunOutcome& out = outcomes[i];
            try {
                RunSpec rs{problem.op, problem.y_noisy, problem.initial, problem.config,
                           choice.method, stop, problem.truth};
                if (choice.mode_override) rs.config.mode = *choice.mode_override;
                rs.rng_seed = spec.seed;
                rs.blocks = blocks ? *blocks
                                   : (choice.method == Method::EntropicStochastic
                                          ? problem.op->output_dimension()
                                          : 1);
                if (choice.method == Method::GeneralFidelity)
                    rs.fidelity = std::make_shared<QuadraticFidelity>();
                const RunResult result = run(rs);

                const auto base = std::filesystem::path(out_dir) / (spec.name + "_" + name);
                write_trace_csv(base.string() + ".csv", result.trace);
                TraceSidecar side;
                side.problem = spec.name;
                side.method = name;
                side.mode = rs.config.mode == Mode::Probability ? 1 : 0;
                side.lambda = rs.config.lambda;
                side.c = rs.config.c;
                side.tau_disc = rs.config.tau;
                side.delta = delta;
                side.sigma = spec.sigma;
                side.seed = spec.seed;
                side.rng_seed = rs.rng_seed;
                side.blocks = rs.blocks;
                side.operator_id = problem.op->id();
                side.grid_lower = problem.initial.grid().lower();
                side.grid_upper = problem.initial.grid().upper();
                side.grid_n = problem.initial.grid().size();
                side.stop_reason = to_string(result.reason);
                side.k_star = result.k_star;
                side.rows = result.trace.size();
                side.u0_value = spec.defaults.u0_value;
                side.clamp_total = result.clamp_total;
                side.save(base.string() + ".json");

                const IterationRecord& last = result.trace.back();
                std::string line = name + ": k*=" + std::to_string(result.k_star) +
                                   " stop=" + to_string(result.reason) +
                                   " residual=" + fmt(last.residual);
                if (last.l1_error) line += " l1_error=" + fmt(*last.l1_error);
                if (result.reason == StopReason::Aborted) {
                    line += " (" + result.abort_message + ")";
                    out.aborted = true;
                }
                out.summary = line;
                out.ok = true;
            } catch (const std::exception& e) {
                out.error = std::string(name) + ": " + e.what();
            }
        }
    };

    const std::size_t n_threads = thread_cap(choices.size());
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    int code = 0;
    for (const auto& out : outcomes) {
        if (!out.ok) {
            std::cerr << "error: " << out.error << '\n';
            code = std::max(code, 2);
        } else {
            std::cout << out.summary << '\n';
            if (out.aborted) code = std::max(code, 3);
        }
    }
    return code;
}

int cmd_compare(const std::vector<std::string>& trace_paths, const std::string& out_path) {
    std::vector<std::vector<IterationRecord>> traces;
    std::vector<std::string> labels;
    std::string problem;
    for (const auto& path : trace_paths) {
        try {
            traces.push_back(read_trace_csv(path));
            auto side = TraceSidecar::load(
                std::filesystem::path(path).replace_extension(".json").string());
            if (problem.empty()) problem = side.problem;
            if (side.problem != problem) {
                std::cerr << "config error: trace '" << path << "' is for problem '"
                          << side.problem << "', expected '" << problem << "'\n";
                return 2;
            }
            std::string label = side.method;
            for (const auto& existing : labels)
                if (existing == label) label += "_" + std::to_string(labels.size());
            labels.push_back(label);
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return 2;
        }
    }

    std::ofstream os(out_path);
    if (!os) {
        std::cerr << "config error: cannot write '" << out_path << "'\n";
        return 2;
    }
    os << "k";
    for (const auto& label : labels) os << ",l1_error_" << label;
    os << '\n';
    std::size_t max_rows = 0;
    for (const auto& t : traces) max_rows = std::max(max_rows, t.size());
    for (std::size_t i = 0; i < max_rows; ++i) {
        os << i;
        for (const auto& t : traces) {
            os << ',';
            if (i < t.size() && t[i].l1_error) os << detail::format_double(*t[i].l1_error);
        }
        os << '\n';
    }
    std::cout << "wrote " << out_path << " (" << max_rows << " rows, " << labels.size()
              << " methods)\n";
    return 0;
}

int cmd_verify(const std::string& trace_path, std::string sidecar_path) {
    if (sidecar_path.empty())
        sidecar_path = std::filesystem::path(trace_path).replace_extension(".json").string();
    std::vector<IterationRecord> trace;
    TraceSidecar side;
    try {
        trace = read_trace_csv(trace_path);
        side = TraceSidecar::load(sidecar_path);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }
    for (const auto& r : trace) {
        if (!r.D_to_truth) {
            std::cerr << "config error: trace lacks the D_to_truth column\n";
            return 2;
        }
    }
    const MonotonicityReport report = check_monotonicity(trace, side.delta);
    if (!report.passed) {
        std::cout << "violation at row " << report.violation_index << ": " << report.message
                  << '\n';
        return 1;
    }
    std::cout << "ok: " << trace.size() << " rows, delta=" << fmt(side.delta) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"entropic Landweber experiment driver"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> methods{"entropic"};
    std::string stop_name;
    std::optional<int> max_iter;
    std::optional<double> lambda, tau_disc, sigma, delta_override;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> blocks;
    std::string out_dir = ".";

    auto* run_cmd = app.add_subcommand("run", "run one or more methods on a problem config");
    run_cmd->add_option("--config", config_path, "problem config JSON")->required();
    run_cmd->add_option("--method", methods, "method name (repeatable)")
        ->check(CLI::IsMember({"entropic", "entropic-prob", "entropic-stochastic", "em",
                               "proj-landweber", "general-fidelity"}));
    run_cmd->add_option("--stop", stop_name, "stopping rule")
        ->check(CLI::IsMember({"discrepancy", "apriori", "maxiter"}));
    run_cmd->add_option("--max-iter", max_iter, "iterate budget (rows recorded)");
    run_cmd->add_option("--lambda", lambda, "step size override");
    run_cmd->add_option("--tau-disc", tau_disc, "discrepancy parameter override");
    run_cmd->add_option("--sigma", sigma, "noise level override");
    run_cmd->add_option("--seed", seed, "seed override (noise and block selection)");
    run_cmd->add_option("--blocks", blocks, "block count for the stochastic variant");
    run_cmd->add_option("--delta", delta_override, "noise-norm override for stopping rules");
    run_cmd->add_option("--out", out_dir, "output directory");

    std::vector<std::string> trace_paths;
    std::string merged_path = "compare.csv";
    auto* compare_cmd = app.add_subcommand("compare", "merge trace CSVs into a wide table");
    compare_cmd->add_option("traces", trace_paths, "trace CSV paths")->required();
    compare_cmd->add_option("--out", merged_path, "merged CSV path");

    std::string verify_trace, verify_sidecar;
    auto* verify_cmd = app.add_subcommand("verify", "check a trace against the solver guarantees");
    verify_cmd->add_option("trace", verify_trace, "trace CSV path")->required();
    verify_cmd->add_option("sidecar", verify_sidecar, "sidecar JSON path (default: trace with .json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (run_cmd->parsed())
        return cmd_run(config_path, methods, stop_name, max_iter, lambda, tau_disc, sigma, seed,
                       blocks, delta_override, out_dir);
    if (compare_cmd->parsed()) return cmd_compare(trace_paths, merged_path);
    return cmd_verify(verify_trace, verify_sidecar);
}
