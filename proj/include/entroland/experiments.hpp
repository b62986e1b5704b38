#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "entroland/grid.hpp"
#include "entroland/operators.hpp"
#include "entroland/rng.hpp"
#include "entroland/solvers.hpp"

namespace entroland {

/// Width parameter of the kernel-problem test solutions: σ² = 0.01.
inline constexpr double kKernelTruthSigmaSq = 0.01;

/// Exact solutions for the integral-kernel problems on (0,1).
///   z1(x) = e^{-x²/(2σ²)},  z3 = z1,
///   z2(x) = 1 − Σ a_l e^{-(x−m_l)²/(2σ²)}  (five dips).
inline Density truth_kernel(int which, std::shared_ptr<const Grid> grid) {
    const double two_sigma_sq = 2.0 * kKernelTruthSigmaSq;
    std::vector<double> v(grid->size());
    if (which == 1 || which == 3) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double x = grid->node(i);
            v[i] = std::exp(-x * x / two_sigma_sq);
        }
    } else if (which == 2) {
        constexpr std::array<double, 5> amp{0.9, 0.3, 0.5, 0.2, 0.7};
        constexpr std::array<double, 5> mid{0.1, 0.3, 0.5, 0.7, 0.9};
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double x = grid->node(i);
            double s = 1.0;
            for (std::size_t l = 0; l < amp.size(); ++l)
                s -= amp[l] * std::exp(-(x - mid[l]) * (x - mid[l]) / two_sigma_sq);
            v[i] = s;
        }
    } else {
        throw std::invalid_argument("truth_kernel: which must be 1, 2 or 3");
    }
    return Density(std::move(grid), std::move(v));
}

/// Three-component Gaussian mixture Σ c_l g(x, μ_l, σ_l) with normalized
/// Gaussians g. Coefficient sum is recorded, not forced to one (truncation
/// to the grid interval changes the realized mass).
struct GaussianMixtureParams {
    std::array<double, 3> means{0.0, -1.0, 0.5};
    std::array<double, 3> sigmas{1.0, 0.1, 0.25};
    std::array<double, 3> coefficients{0.1, 0.6, 0.3};

    static GaussianMixtureParams sampling_z1() { return {}; }
    static GaussianMixtureParams sampling_z2() {
        GaussianMixtureParams p;
        p.coefficients = {0.1, 0.4, 0.5};
        return p;
    }

    double coefficient_sum() const { return coefficients[0] + coefficients[1] + coefficients[2]; }

    double evaluate(double x) const {
        double s = 0.0;
        for (std::size_t l = 0; l < 3; ++l) {
            const double sg = sigmas[l];
            const double d = x - means[l];
            s += coefficients[l] *
                 std::exp(-d * d / (2.0 * sg * sg)) / std::sqrt(2.0 * std::numbers::pi * sg * sg);
        }
        return s;
    }

    Density tabulate(std::shared_ptr<const Grid> grid) const {
        std::vector<double> v(grid->size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = evaluate(grid->node(i));
        return Density(std::move(grid), std::move(v));
    }
};

enum class FourierTruth { Z1, Z2 };

/// Band-limited log profile used for z1: the filtered mixture
///   g(x) = Re((1/√2) Σ_j m_j e^{i x ξ_j}),  m_j = ∫ z̃(t) e^{-i t ξ_j} dt,
/// with the moments taken by the grid's quadrature.
inline GridFunction fourier_filtered_profile(const Density& mixture,
                                             std::span<const double> freqs) {
    const auto& grid = mixture.grid();
    const auto w = grid.weights();
    std::vector<std::complex<double>> moments(freqs.size());
    for (std::size_t j = 0; j < freqs.size(); ++j) {
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < mixture.size(); ++i) {
            const double a = grid.node(i) * freqs[j];
            const double c = w[i] * mixture[i];
            re += c * std::cos(a);
            im -= c * std::sin(a);
        }
        moments[j] = {re, im};
    }
    const double scale = 1.0 / std::sqrt(2.0);
    std::vector<double> g(mixture.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = grid.node(i);
        double s = 0.0;
        for (std::size_t j = 0; j < freqs.size(); ++j) {
            const double a = x * freqs[j];
            s += moments[j].real() * std::cos(a) - moments[j].imag() * std::sin(a);
        }
        g[i] = scale * s;
    }
    return GridFunction(mixture.grid_ptr(), std::move(g));
}

/// Ground truths for the Fourier-sampling experiments on [-a, a].
/// z1 = c·exp(filtered z̃), normalized to unit mass: strictly positive and
/// satisfying the source condition exactly (1 + ln z1 lies in the range of
/// the adjoint: the filtered profile is a combination of the sampled modes
/// and the normalizing constant sits in the ξ = 0 slot). z2 is the raw
/// mixture, which violates the source condition.
inline Density truth_fourier(FourierTruth which, std::shared_ptr<const Grid> grid,
                             std::span<const double> freqs) {
    if (which == FourierTruth::Z2) {
        Density z = GaussianMixtureParams::sampling_z2().tabulate(grid);
        if (!z.is_strictly_positive())
            throw std::runtime_error("truth_fourier: mixture must stay positive on the grid");
        return z;
    }
    const Density mixture = GaussianMixtureParams::sampling_z1().tabulate(grid);
    const GridFunction profile = fourier_filtered_profile(mixture, freqs);
    std::vector<double> v(profile.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(profile[i]);
    Density raw(grid, std::move(v));
    const double mass = integrate(raw);
    std::vector<double> scaled(raw.values().begin(), raw.values().end());
    for (double& s : scaled) s /= mass;
    Density z(std::move(grid), std::move(scaled));
    if (!z.is_strictly_positive())
        throw std::runtime_error("truth_fourier: z1 construction lost positivity");
    return z;
}

struct SynthesizedData {
    Measurement y_exact;
    Measurement y_noisy;
    double delta = 0.0;  // realized noise norm ‖y_noisy − y_exact‖
};

/// y_exact = A z plus seeded Gaussian noise. Real measurements get N(0,σ²)
/// per sample; complex measurements get independent N(0,σ²) on the real and
/// imaginary part of each sample. σ = 0 returns exact data with δ = 0.
inline SynthesizedData synthesize_data(const ForwardOperator& op, const Density& z, double sigma,
                                       std::uint64_t seed) {
    if (sigma < 0.0)
        throw std::invalid_argument("synthesize_data: sigma must be >= 0");
    Measurement y_exact = op.apply(z);
    if (sigma == 0.0) return {y_exact, y_exact, 0.0};

    SplitMix64 rng(seed);
    Measurement y_noisy = y_exact;
    if (y_exact.is_complex()) {
        const auto v = y_exact.complex_values();
        std::vector<std::complex<double>> noisy(v.begin(), v.end());
        for (auto& c : noisy)
            c += std::complex<double>(sigma * rng.next_gaussian(), sigma * rng.next_gaussian());
        y_noisy = Measurement::complex_vector(std::move(noisy));
    } else {
        const auto v = y_exact.real_values();
        const auto w = y_exact.weights();
        std::vector<double> noisy(v.begin(), v.end());
        for (double& c : noisy) c += sigma * rng.next_gaussian();
        y_noisy = Measurement::weighted_real(std::move(noisy), std::vector<double>(w.begin(), w.end()));
    }
    Measurement diff = y_noisy;
    diff -= y_exact;
    return {std::move(y_exact), std::move(y_noisy), diff.norm()};
}

// ---------------------------------------------------------------------------
// Problem configuration
// ---------------------------------------------------------------------------

struct KernelProblemParams {
    int which = 1;
    std::size_t n_in = 512;
    std::size_t n_out = 512;
};

struct FourierProblemParams {
    double half_width = 10.0;   // domain [-a, a]
    std::size_t n_freq = 16;
    std::size_t n_grid = 1024;
};

struct MethodDefaults {
    Mode mode = Mode::Unconstrained;
    std::optional<double> lambda;   // absent: 1/‖A‖²
    double tau_disc = 2.0;
    int max_iter = 200;
    double u0_value = 1.0;
    std::optional<double> landweber_step;  // absent: 1/‖A‖²
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// One experiment: operator, ground truth, noise level, seed, defaults.
/// Serialized as a JSON config file.
struct ProblemSpec {
    std::string name;
    std::variant<KernelProblemParams, FourierProblemParams> operator_params;
    std::string truth_id;  // z1_kernel | z2_kernel | z3_kernel | z1_fourier | z2_fourier
    double sigma = 0.0;
    std::uint64_t seed = 0;
    MethodDefaults defaults;

    static ProblemSpec from_json(const nlohmann::json& j);
    static ProblemSpec load(const std::string& path);
    nlohmann::json to_json() const;
};

inline ProblemSpec ProblemSpec::from_json(const nlohmann::json& j) {
    try {
        ProblemSpec spec;
        spec.name = j.at("name").get<std::string>();
        const auto& op = j.at("operator");
        const std::string type = op.at("type").get<std::string>();
        if (type == "kernel") {
            KernelProblemParams p;
            p.which = op.at("which").get<int>();
            p.n_in = op.value("n_in", std::size_t{512});
            p.n_out = op.value("n_out", std::size_t{512});
            spec.operator_params = p;
        } else if (type == "fourier") {
            FourierProblemParams p;
            p.half_width = op.value("a", 10.0);
            p.n_freq = op.value("n_freq", std::size_t{16});
            p.n_grid = op.value("n_grid", std::size_t{1024});
            spec.operator_params = p;
        } else {
            throw ConfigError("unknown operator type '" + type + "'");
        }
        spec.truth_id = j.at("truth").get<std::string>();
        spec.sigma = j.value("sigma", 0.0);
        if (spec.sigma < 0.0) throw ConfigError("sigma must be >= 0");
        spec.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("defaults")) {
            const auto& d = j.at("defaults");
            spec.defaults.mode = d.value("m", 0) == 1 ? Mode::Probability : Mode::Unconstrained;
            if (d.contains("lambda") && !d.at("lambda").is_null())
                spec.defaults.lambda = d.at("lambda").get<double>();
            spec.defaults.tau_disc = d.value("tau_disc", 2.0);
            spec.defaults.max_iter = d.value("max_iter", 200);
            spec.defaults.u0_value = d.value("u0", 1.0);
            if (d.contains("pl_tau") && !d.at("pl_tau").is_null())
                spec.defaults.landweber_step = d.at("pl_tau").get<double>();
        }
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed problem config: ") + e.what());
    }
}

inline ProblemSpec ProblemSpec::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse config '" + path + "': " + e.what());
    }
    return from_json(j);
}

inline nlohmann::json ProblemSpec::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    if (const auto* k = std::get_if<KernelProblemParams>(&operator_params)) {
        j["operator"] = {{"type", "kernel"}, {"which", k->which}, {"n_in", k->n_in}, {"n_out", k->n_out}};
    } else {
        const auto& f = std::get<FourierProblemParams>(operator_params);
        j["operator"] = {{"type", "fourier"}, {"a", f.half_width}, {"n_freq", f.n_freq}, {"n_grid", f.n_grid}};
    }
    j["truth"] = truth_id;
    j["sigma"] = sigma;
    j["seed"] = seed;
    nlohmann::json d;
    d["m"] = defaults.mode == Mode::Probability ? 1 : 0;
    if (defaults.lambda) d["lambda"] = *defaults.lambda;
    d["tau_disc"] = defaults.tau_disc;
    d["max_iter"] = defaults.max_iter;
    d["u0"] = defaults.u0_value;
    if (defaults.landweber_step) d["pl_tau"] = *defaults.landweber_step;
    j["defaults"] = d;
    return j;
}

/// A ProblemSpec realized on grids: operator, truth, synthesized data,
/// starting element, and a ready solver configuration.
struct AssembledProblem {
    std::shared_ptr<const ForwardOperator> op;
    Density truth;
    Measurement y_exact;
    Measurement y_noisy;
    double delta = 0.0;
    Density initial;
    SolverConfig config;
};

inline AssembledProblem assemble(const ProblemSpec& spec) {
    std::shared_ptr<const ForwardOperator> op;
    std::shared_ptr<const Grid> grid;
    if (const auto* k = std::get_if<KernelProblemParams>(&spec.operator_params)) {
        auto kernel = std::make_shared<IntegralKernelOperator>(
            make_kernel_operator(k->which, k->n_in, k->n_out));
        grid = kernel->input_grid();
        op = kernel;
    } else {
        const auto& f = std::get<FourierProblemParams>(spec.operator_params);
        grid = make_grid(-f.half_width, f.half_width, f.n_grid);
        op = std::make_shared<FourierSamplingOperator>(
            grid, FourierSamplingOperator::uniform_frequencies(f.n_freq));
    }

    std::optional<Density> truth;
    if (spec.truth_id == "z1_kernel") truth = truth_kernel(1, grid);
    else if (spec.truth_id == "z2_kernel") truth = truth_kernel(2, grid);
    else if (spec.truth_id == "z3_kernel") truth = truth_kernel(3, grid);
    else if (spec.truth_id == "z1_fourier" || spec.truth_id == "z2_fourier") {
        const auto* fop = dynamic_cast<const FourierSamplingOperator*>(op.get());
        if (!fop) throw ConfigError("fourier truths need a fourier operator");
        truth = truth_fourier(spec.truth_id == "z1_fourier" ? FourierTruth::Z1 : FourierTruth::Z2,
                              grid, fop->frequencies());
    } else {
        throw ConfigError("unknown truth '" + spec.truth_id + "'");
    }

    SynthesizedData data = synthesize_data(*op, *truth, spec.sigma, spec.seed);

    SolverConfig cfg = spec.defaults.lambda
                           ? SolverConfig::with_lambda(*spec.defaults.lambda, spec.defaults.mode)
                           : SolverConfig::for_operator(*op, spec.defaults.mode);
    cfg.max_iter = spec.defaults.max_iter;
    cfg.tau = spec.defaults.tau_disc;
    cfg.validate();

    Density initial = Density::constant(grid, spec.defaults.u0_value);
    return AssembledProblem{op, std::move(*truth), std::move(data.y_exact),
                            std::move(data.y_noisy), data.delta, std::move(initial), cfg};
}

} // namespace entroland
