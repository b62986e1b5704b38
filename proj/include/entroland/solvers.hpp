#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "entroland/entropy.hpp"
#include "entroland/grid.hpp"
#include "entroland/operators.hpp"
#include "entroland/rng.hpp"

namespace entroland {

/// m = 0: unconstrained nonnegative unknown; m = 1: probability density
/// (unit-mass constraint, enforced by per-step renormalization).
enum class Mode : int { Unconstrained = 0, Probability = 1 };

struct SolverConfig {
    Mode mode = Mode::Unconstrained;
    double lambda = 1.0;          // step size, = 1/c
    double c = 1.0;               // proximal weight, = 1/lambda
    int max_iter = 200;           // budget on recorded iterates
    double exponent_clamp = 500.0;
    double tau = 2.0;             // discrepancy parameter, > 1
    double apriori_constant = 1.0;

    static SolverConfig with_lambda(double lambda, Mode mode = Mode::Unconstrained) {
        SolverConfig cfg;
        cfg.mode = mode;
        cfg.lambda = lambda;
        cfg.c = 1.0 / lambda;
        cfg.validate();
        return cfg;
    }

    /// Default step λ = 1/‖A‖², i.e. c = ‖A‖² = γ²/2 with γ = √2‖A‖.
    static SolverConfig for_operator(const ForwardOperator& op, Mode mode = Mode::Unconstrained) {
        const double n = op.norm_estimate();
        if (!(n > 0.0))
            throw std::invalid_argument("SolverConfig: operator norm estimate is zero");
        return with_lambda(1.0 / (n * n), mode);
    }

    void validate() const {
        if (!(lambda > 0.0) || !std::isfinite(lambda))
            throw std::invalid_argument("SolverConfig: lambda must be positive");
        if (!(c > 0.0) || std::abs(lambda * c - 1.0) > 1e-12)
            throw std::invalid_argument("SolverConfig: c must equal 1/lambda");
        if (!(tau > 1.0))
            throw std::invalid_argument("SolverConfig: tau must exceed 1");
        if (!(exponent_clamp > 0.0))
            throw std::invalid_argument("SolverConfig: exponent clamp must be positive");
        if (max_iter < 1)
            throw std::invalid_argument("SolverConfig: max_iter must be at least 1");
        if (!(apriori_constant > 0.0))
            throw std::invalid_argument("SolverConfig: apriori constant must be positive");
    }
};

/// Thrown when a step cannot continue (non-finite exponent, mass underflow,
/// EM division by a vanished forward value). run() converts it into an
/// aborted result carrying the partial trace.
class SolverAbort : public std::runtime_error {
public:
    explicit SolverAbort(const std::string& what) : std::runtime_error(what) {}
};

/// State of the multiplicative iteration. log_u is primary (the update adds
/// exponents there, so positivity can never be lost to underflow); u is the
/// exponentiated copy kept alongside. v_accum maintains the dual accumulator
/// w0 + Σ_{j<k} (y − A u_j).
struct SolverState {
    int k = 0;
    std::shared_ptr<const Grid> grid;
    std::vector<double> log_u;
    std::vector<double> u;
    Measurement v_accum;
    Measurement w0;
    double log_normalizer_sum = 0.0;
    double last_residual = 0.0;
    double last_ln_ck = 0.0;
    int last_clamp_events = 0;
    long total_clamp_events = 0;
    SplitMix64 rng{0};

    SolverState(const Density& u0, const ForwardOperator& op, std::uint64_t rng_seed = 0,
                std::optional<Measurement> w0_init = std::nullopt)
        : grid(u0.grid_ptr()),
          u(u0.values().begin(), u0.values().end()),
          v_accum(w0_init ? *w0_init : op.zero_measurement()),
          w0(v_accum),
          rng(rng_seed) {
        if (!u0.is_strictly_positive())
            throw std::invalid_argument("SolverState: initial iterate must be strictly positive");
        log_u.resize(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) log_u[i] = std::log(u[i]);
    }

    Density density() const { return Density(grid, u); }
    GridFunction function() const { return GridFunction(grid, u); }
};

/// Convex Fréchet-differentiable data fidelity F(w; y) ≥ 0 with F(y; y) = 0.
/// gradient returns the Riesz representer of F' in the Y inner product.
class Fidelity {
public:
    virtual ~Fidelity() = default;
    virtual double value(const Measurement& w, const Measurement& y) const = 0;
    virtual Measurement gradient(const Measurement& w, const Measurement& y) const = 0;
};

/// F(w) = ½‖w − y‖²; gradient w − y. Recovers the plain entropic step.
class QuadraticFidelity final : public Fidelity {
public:
    double value(const Measurement& w, const Measurement& y) const override {
        Measurement d = w;
        d -= y;
        return 0.5 * d.norm_squared();
    }
    Measurement gradient(const Measurement& w, const Measurement& y) const override {
        Measurement d = w;
        d -= y;
        return d;
    }
};

/// F(w) = ½⟨ω∘(w−y), w−y⟩ with componentwise weights ω ≥ 0;
/// gradient ω∘(w−y). ω ≡ 1 reduces to the plain quadratic.
class WeightedQuadraticFidelity final : public Fidelity {
public:
    explicit WeightedQuadraticFidelity(std::vector<double> omega) : omega_(std::move(omega)) {
        for (double o : omega_)
            if (!(o >= 0.0))
                throw std::invalid_argument("WeightedQuadraticFidelity: weights must be >= 0");
    }
    double value(const Measurement& w, const Measurement& y) const override {
        Measurement d = w;
        d -= y;
        Measurement s = d;
        s.scale_componentwise(omega_);
        return 0.5 * inner(s, d);
    }
    Measurement gradient(const Measurement& w, const Measurement& y) const override {
        Measurement d = w;
        d -= y;
        d.scale_componentwise(omega_);
        return d;
    }

private:
    std::vector<double> omega_;
};

namespace detail {

/// Shared multiplicative core: adds the clamped exponent step_scale·adj to
/// log_u, renormalizes to unit mass for m = 1, and refreshes u = exp(log_u).
inline void multiplicative_update(SolverState& state, std::span<const double> adj,
                                  double step_scale, const SolverConfig& cfg) {
    const double bound = cfg.exponent_clamp;
    int clamps = 0;
    for (std::size_t i = 0; i < state.log_u.size(); ++i) {
        double e = step_scale * adj[i];
        if (std::isnan(e))
            throw SolverAbort("non-finite exponent at node " + std::to_string(i) +
                              ", iteration " + std::to_string(state.k));
        if (e > bound) {
            e = bound;
            ++clamps;
        } else if (e < -bound) {
            e = -bound;
            ++clamps;
        }
        state.log_u[i] += e;
    }
    double ln_ck = 0.0;
    if (cfg.mode == Mode::Probability) {
        const auto w = state.grid->weights();
        double mass = 0.0;
        for (std::size_t i = 0; i < state.log_u.size(); ++i)
            mass += w[i] * std::exp(state.log_u[i]);
        if (!std::isfinite(mass) || mass < 1e-300)
            throw SolverAbort("mass " + std::to_string(mass) + " out of range at iteration " +
                              std::to_string(state.k));
        ln_ck = -std::log(mass);
        for (double& l : state.log_u) l += ln_ck;
    }
    for (std::size_t i = 0; i < state.u.size(); ++i) {
        state.u[i] = std::exp(state.log_u[i]);
        if (!std::isfinite(state.u[i]))
            throw SolverAbort("iterate overflow at node " + std::to_string(i) + ", iteration " +
                              std::to_string(state.k));
    }
    state.log_normalizer_sum += ln_ck;
    state.last_ln_ck = ln_ck;
    state.last_clamp_events = clamps;
    state.total_clamp_events += clamps;
}

} // namespace detail

/// One step of the entropic Landweber iteration
///   u_{k+1} = u_k c_k e^{λ A*(y − A u_k)},
/// with c_k = 1 for m = 0 and the unit-mass normalizer for m = 1.
inline SolverState entropic_step(SolverState state, const Measurement& y,
                                 const ForwardOperator& op, const SolverConfig& cfg) {
    Measurement residual = y;
    residual -= op.apply(state.function());
    const GridFunction adj = op.adjoint(residual);
    detail::multiplicative_update(state, adj.values(), cfg.lambda, cfg);
    state.last_residual = residual.norm();
    state.v_accum += residual;
    ++state.k;
    return state;
}

/// Randomized block step: draw J uniform on the M blocks from the state's
/// stream and apply the block update with gradient factor M.
inline SolverState stochastic_entropic_step(SolverState state,
                                            const std::vector<Measurement>& y_blocks,
                                            const std::vector<OperatorBlock>& blocks,
                                            const SolverConfig& cfg) {
    if (blocks.empty() || y_blocks.size() != blocks.size())
        throw std::invalid_argument("stochastic_entropic_step: block partition mismatch");
    const std::size_t M = blocks.size();
    const std::size_t J = state.rng.next_below(M);
    Measurement residual = y_blocks[J];
    residual -= blocks[J].op->apply(state.function());
    const GridFunction adj = blocks[J].op->adjoint(residual);
    detail::multiplicative_update(state, adj.values(), cfg.lambda * static_cast<double>(M), cfg);
    state.last_residual = residual.norm();
    Measurement padded = state.v_accum.zero_like();
    padded.set_slice(blocks[J].offset, residual);
    padded *= static_cast<double>(M);
    state.v_accum += padded;
    ++state.k;
    return state;
}

/// Generalized-fidelity step u_{k+1} = u_k c_k e^{−λ A* F'(A u_k)}.
/// With the quadratic fidelity this reproduces entropic_step bitwise.
inline SolverState general_fidelity_step(SolverState state, const Measurement& y,
                                         const ForwardOperator& op, const Fidelity& fidelity,
                                         const SolverConfig& cfg) {
    Measurement neg_grad = fidelity.gradient(op.apply(state.function()), y);
    neg_grad *= -1.0;
    const GridFunction adj = op.adjoint(neg_grad);
    detail::multiplicative_update(state, adj.values(), cfg.lambda, cfg);
    state.last_residual = neg_grad.norm();
    state.v_accum += neg_grad;
    ++state.k;
    return state;
}

/// EM / Richardson-Lucy step u_{k+1} = (u_k / A*1) · A*(y / A u_k).
/// Defined only for nonnegativity-preserving operators and y ≥ 0; nodes
/// where both y_j and (A u_k)_j vanish contribute ratio 0.
inline Density em_step(const Density& u, const Measurement& y, const ForwardOperator& op) {
    if (!op.preserves_nonnegativity())
        throw std::invalid_argument("em_step: operator must preserve nonnegativity");
    if (y.is_complex())
        throw std::invalid_argument("em_step: real measurements required");
    const auto yv = y.real_values();
    for (double v : yv)
        if (v < 0.0)
            throw std::invalid_argument("em_step: data must be nonnegative");

    const Measurement au = op.apply(u);
    const auto av = au.real_values();
    std::vector<double> ratio(yv.size());
    for (std::size_t j = 0; j < yv.size(); ++j) {
        if (av[j] == 0.0) {
            if (yv[j] == 0.0) {
                ratio[j] = 0.0;
            } else {
                throw SolverAbort("em_step: forward value vanished at sample " +
                                  std::to_string(j) + " with positive data");
            }
        } else {
            ratio[j] = yv[j] / av[j];
        }
    }
    const auto wts = y.weights();
    const GridFunction numerator =
        op.adjoint(Measurement::weighted_real(std::move(ratio),
                                              std::vector<double>(wts.begin(), wts.end())));
    const GridFunction normalizer =
        op.adjoint(Measurement::weighted_real(std::vector<double>(yv.size(), 1.0),
                                              std::vector<double>(wts.begin(), wts.end())));
    std::vector<double> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!(normalizer[i] > 0.0))
            throw std::invalid_argument("em_step: A*1 must be positive");
        out[i] = u[i] * numerator[i] / normalizer[i];
    }
    return Density(u.grid_ptr(), std::move(out));
}

/// Projected Landweber step u_{k+1} = (u_k − τ A*(A u_k − y))₊.
inline Density projected_landweber_step(const Density& u, const Measurement& y,
                                        const ForwardOperator& op, double step) {
    if (!(step > 0.0))
        throw std::invalid_argument("projected_landweber_step: step must be positive");
    Measurement diff = op.apply(u);
    diff -= y;
    const GridFunction grad = op.adjoint(diff);
    std::vector<double> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        out[i] = std::max(0.0, u[i] - step * grad[i]);
    return Density(u.grid_ptr(), std::move(out));
}

/// One row of a solver trace: quantities of the k-th iterate, plus the
/// normalizer and clamp count of the step that produced it (zero at k = 0).
/// Truth-relative columns are present only when the run was given z.
struct IterationRecord {
    int k = 0;
    double residual = 0.0;
    std::optional<double> kl_to_truth;  // d(z, u_k); may be +inf
    std::optional<double> D_to_truth;   // D(z, u_k) at the run's c
    std::optional<double> l1_error;
    double mass = 0.0;
    double ln_ck = 0.0;
    int clamp_events = 0;
};

struct DiscrepancyRule {
    double tau = 2.0;
    double delta = 0.0;
};
struct APrioriRule {
    double constant = 1.0;
    double delta = 0.0;
};
struct MaxIterRule {
    int max_records = 0;  // 0: use the config budget
};
struct ModifiedDiscrepancyRule {
    double delta = 0.0;
};
using StoppingRule = std::variant<MaxIterRule, DiscrepancyRule, APrioriRule, ModifiedDiscrepancyRule>;

enum class Method { Entropic, EntropicStochastic, GeneralFidelity, Em, ProjectedLandweber };

enum class StopReason { MaxIter, Discrepancy, APriori, ModifiedDiscrepancy, Aborted };

inline const char* to_string(StopReason r) {
    switch (r) {
    case StopReason::MaxIter: return "max_iter";
    case StopReason::Discrepancy: return "discrepancy";
    case StopReason::APriori: return "apriori";
    case StopReason::ModifiedDiscrepancy: return "modified_discrepancy";
    case StopReason::Aborted: return "aborted";
    }
    return "unknown";
}

struct RunSpec {
    std::shared_ptr<const ForwardOperator> op;
    Measurement data;
    Density initial;
    SolverConfig config;
    Method method = Method::Entropic;
    StoppingRule stop = MaxIterRule{};
    std::optional<Density> truth;
    std::size_t blocks = 1;                     // stochastic variant
    std::uint64_t rng_seed = 0;                 // stochastic variant
    std::shared_ptr<const Fidelity> fidelity;   // general-fidelity variant
    double landweber_step = 0.0;                // 0: default 1/‖A‖²
};

struct RunResult {
    Density final_iterate;
    std::vector<IterationRecord> trace;
    StopReason reason = StopReason::MaxIter;
    int k_star = 0;
    long clamp_total = 0;
    std::string abort_message;
};

namespace detail {

inline IterationRecord make_record(int k, const Density& uk, const Measurement& au,
                                   const RunSpec& spec, const std::optional<Measurement>& y_true,
                                   double ln_ck, int clamps) {
    IterationRecord rec;
    rec.k = k;
    Measurement r = spec.data;
    r -= au;
    rec.residual = r.norm();
    rec.mass = integrate(uk);
    rec.ln_ck = ln_ck;
    rec.clamp_events = clamps;
    if (spec.truth) {
        const double d = kl_divergence(*spec.truth, uk).value_or_infinity();
        rec.kl_to_truth = d;
        Measurement dt = *y_true;
        dt -= au;
        rec.D_to_truth = std::isinf(d) ? d : spec.config.c * d - 0.5 * dt.norm_squared();
        rec.l1_error = l1_distance(uk, *spec.truth);
    }
    return rec;
}

} // namespace detail

/// Drive a method until its stopping rule fires or the iterate budget is
/// exhausted, recording one IterationRecord per recorded iterate
/// (u_0, u_1, ...). k_star is the index of the last recorded iterate, so a
/// trace always has k_star + 1 rows; a pure budget stop records exactly
/// max_iter iterates. Step-level aborts are caught and returned with the
/// partial trace attached.
inline RunResult run(const RunSpec& spec) {
    if (!spec.op)
        throw std::invalid_argument("run: null operator");
    spec.config.validate();

    int budget = spec.config.max_iter;
    if (const auto* mi = std::get_if<MaxIterRule>(&spec.stop); mi && mi->max_records > 0)
        budget = mi->max_records;

    int apriori_index = -1;
    if (const auto* d = std::get_if<DiscrepancyRule>(&spec.stop)) {
        if (!(d->delta > 0.0) || !(d->tau > 1.0))
            throw std::invalid_argument("run: discrepancy rule needs delta > 0 and tau > 1");
    } else if (const auto* a = std::get_if<APrioriRule>(&spec.stop)) {
        if (!(a->delta > 0.0) || !(a->constant > 0.0))
            throw std::invalid_argument("run: a-priori rule needs delta > 0 and constant > 0");
        apriori_index = static_cast<int>(std::ceil(a->constant / a->delta));
    } else if (std::get_if<ModifiedDiscrepancyRule>(&spec.stop)) {
        if (spec.method != Method::GeneralFidelity || !spec.fidelity)
            throw std::invalid_argument("run: modified discrepancy rule needs a fidelity");
    }
    if (spec.method == Method::GeneralFidelity && !spec.fidelity)
        throw std::invalid_argument("run: general-fidelity method needs a fidelity");

    const ForwardOperator& op = *spec.op;
    std::optional<Measurement> y_true;
    if (spec.truth) y_true = op.apply(*spec.truth);

    const bool multiplicative = spec.method == Method::Entropic ||
                                spec.method == Method::EntropicStochastic ||
                                spec.method == Method::GeneralFidelity;

    std::optional<SolverState> state;
    if (multiplicative) state.emplace(spec.initial, op, spec.rng_seed);
    Density baseline = spec.initial;

    std::vector<OperatorBlock> blocks;
    std::vector<Measurement> y_blocks;
    if (spec.method == Method::EntropicStochastic) {
        blocks = partition_blocks(spec.op, spec.blocks);
        y_blocks.reserve(blocks.size());
        for (const auto& b : blocks) y_blocks.push_back(b.slice_data(spec.data));
    }
    double pl_step = spec.landweber_step;
    if (spec.method == Method::ProjectedLandweber && pl_step <= 0.0) {
        const double n = op.norm_estimate();
        pl_step = 1.0 / (n * n);
    }

    std::vector<IterationRecord> trace;
    StopReason reason = StopReason::MaxIter;
    std::string abort_message;
    double ln_ck = 0.0;
    int clamps = 0;
    int k = 0;

    try {
        for (;;) {
            const Density uk = multiplicative ? state->density() : baseline;
            const Measurement au = op.apply(uk);
            trace.push_back(detail::make_record(k, uk, au, spec, y_true, ln_ck, clamps));
            const IterationRecord& rec = trace.back();

            bool fired = false;
            if (const auto* d = std::get_if<DiscrepancyRule>(&spec.stop)) {
                if (rec.residual < std::sqrt(d->tau) * d->delta) {
                    reason = StopReason::Discrepancy;
                    fired = true;
                }
            } else if (std::get_if<APrioriRule>(&spec.stop)) {
                if (k >= apriori_index) {
                    reason = StopReason::APriori;
                    fired = true;
                }
            } else if (const auto* md = std::get_if<ModifiedDiscrepancyRule>(&spec.stop)) {
                if (spec.fidelity->value(au, spec.data) < md->delta) {
                    reason = StopReason::ModifiedDiscrepancy;
                    fired = true;
                }
            }
            if (fired) break;
            if (k + 1 >= budget) {
                reason = StopReason::MaxIter;
                break;
            }

            switch (spec.method) {
            case Method::Entropic:
                *state = entropic_step(*state, spec.data, op, spec.config);
                break;
            case Method::EntropicStochastic:
                *state = stochastic_entropic_step(*state, y_blocks, blocks, spec.config);
                break;
            case Method::GeneralFidelity:
                *state = general_fidelity_step(*state, spec.data, op, *spec.fidelity, spec.config);
                break;
            case Method::Em:
                baseline = em_step(baseline, spec.data, op);
                break;
            case Method::ProjectedLandweber:
                baseline = projected_landweber_step(baseline, spec.data, op, pl_step);
                break;
            }
            if (multiplicative) {
                ln_ck = state->last_ln_ck;
                clamps = state->last_clamp_events;
            }
            ++k;
        }
    } catch (const SolverAbort& e) {
        reason = StopReason::Aborted;
        abort_message = e.what();
    }

    Density final_iterate = multiplicative ? state->density() : baseline;
    const int k_star = trace.empty() ? 0 : trace.back().k;
    const long clamp_total = multiplicative ? state->total_clamp_events : 0;
    return RunResult{std::move(final_iterate), std::move(trace), reason, k_star, clamp_total,
                     std::move(abort_message)};
}

struct MonotonicityReport {
    bool passed = true;
    int violation_index = -1;
    std::string message;
};

/// Verify the trace against the iteration's guarantees:
///   - the residual is non-increasing;
///   - D(z,u_k) is non-increasing while ‖y^δ − A u_{k+1}‖² > δ²;
///   - ‖y^δ − A u_k‖² ≤ δ² + 2 D(z,u_0)/k for k ≥ 1.
/// Tolerances are 1e-9·(1 + magnitude). Requires truth columns.
inline MonotonicityReport check_monotonicity(const std::vector<IterationRecord>& trace,
                                             double delta) {
    if (trace.empty())
        throw std::invalid_argument("check_monotonicity: empty trace");
    for (const auto& r : trace)
        if (!r.D_to_truth)
            throw std::invalid_argument("check_monotonicity: trace lacks D values");

    const double d2 = delta * delta;
    for (std::size_t i = 0; i + 1 < trace.size(); ++i) {
        const double r0 = trace[i].residual, r1 = trace[i + 1].residual;
        if (r1 > r0 + 1e-9 * (1.0 + r0))
            return {false, static_cast<int>(i + 1),
                    "residual increased at k=" + std::to_string(trace[i + 1].k)};
        const double D0 = *trace[i].D_to_truth, D1 = *trace[i + 1].D_to_truth;
        if (r1 * r1 > d2 && D1 > D0 + 1e-9 * (1.0 + std::abs(D0)))
            return {false, static_cast<int>(i + 1),
                    "D(z,u_k) increased at k=" + std::to_string(trace[i + 1].k)};
    }
    const double Dinit = *trace.front().D_to_truth;
    for (std::size_t i = 1; i < trace.size(); ++i) {
        const double kk = static_cast<double>(trace[i].k);
        if (kk < 1.0) continue;
        const double rhs = d2 + 2.0 * Dinit / kk;
        const double lhs = trace[i].residual * trace[i].residual;
        if (lhs > rhs + 1e-9 * (1.0 + rhs))
            return {false, static_cast<int>(i),
                    "residual bound violated at k=" + std::to_string(trace[i].k)};
    }
    return {};
}

/// Least-squares slope of ln d(z,u_k) against ln k over k in [k_min, k_max].
/// Needs at least five usable points with finite positive divergence.
inline double fit_rate(const std::vector<IterationRecord>& trace, int k_min, int k_max) {
    std::vector<double> lx, ly;
    for (const auto& r : trace) {
        if (r.k < std::max(k_min, 1) || r.k > k_max) continue;
        if (!r.kl_to_truth) continue;
        const double d = *r.kl_to_truth;
        if (!std::isfinite(d) || !(d > 0.0))
            throw std::invalid_argument("fit_rate: divergence must be finite and positive");
        lx.push_back(std::log(static_cast<double>(r.k)));
        ly.push_back(std::log(d));
    }
    if (lx.size() < 5)
        throw std::invalid_argument("fit_rate: fewer than 5 points in window");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(ly.size());
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    return sxy / sxx;
}

} // namespace entroland
