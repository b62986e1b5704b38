#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <memory>

#include "entroland/experiments.hpp"
#include "entroland/solvers.hpp"
#include "test_oracles.hpp"

using namespace entroland;

namespace {
const double kE = std::exp(1.0);

std::shared_ptr<const DenseMatrixOperator> identity_op(const std::shared_ptr<const Grid>& g) {
    return std::make_shared<DenseMatrixOperator>(DenseMatrixOperator::identity(g));
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}
} // namespace

TEST_CASE("solver config") {
    CHECK_THROWS_AS(SolverConfig::with_lambda(0.0), std::invalid_argument);
    CHECK_THROWS_AS(SolverConfig::with_lambda(-1.0), std::invalid_argument);
    SolverConfig cfg = SolverConfig::with_lambda(0.25);
    CHECK(cfg.c == Catch::Approx(4.0).epsilon(1e-15));
    cfg.tau = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.tau = 2.0;
    cfg.exponent_clamp = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("entropic step") {
    auto g = make_grid(0.0, 1.0, 2);
    auto op = identity_op(g);

    SECTION("zero residual is a fixed point") {
        SolverState s(Density(g, {1.0, 1.0}), *op);
        const Measurement y = op->apply(s.function());
        SolverState next = entropic_step(s, y, *op, SolverConfig::with_lambda(1.0));
        CHECK(next.u[0] == 1.0);
        CHECK(next.u[1] == 1.0);
        CHECK(next.k == 1);
        CHECK(next.last_residual == 0.0);
    }
    SECTION("constant closed form, m = 0") {
        SolverState s(Density(g, {1.0, 1.0}), *op);
        const Measurement y = Measurement::weighted_real({2.0, 2.0}, {0.5, 0.5});
        SolverState next = entropic_step(s, y, *op, SolverConfig::with_lambda(1.0));
        CHECK(next.u[0] == Catch::Approx(kE).epsilon(1e-15));
        CHECK(next.u[1] == Catch::Approx(kE).epsilon(1e-15));
        CHECK(next.last_ln_ck == 0.0);
    }
    SECTION("two-node probability step") {
        SolverState s(Density(g, {1.0, 1.0}), *op);
        const Measurement y = Measurement::weighted_real({2.0, 0.0}, {0.5, 0.5});
        SolverState next =
            entropic_step(s, y, *op, SolverConfig::with_lambda(1.0, Mode::Probability));
        const double cosh1 = std::cosh(1.0);
        CHECK(next.u[0] == Catch::Approx(kE / cosh1).epsilon(1e-12));          // 1.7615941...
        CHECK(next.u[1] == Catch::Approx(1.0 / (kE * cosh1)).epsilon(1e-12));  // 0.2384058...
        CHECK(next.last_ln_ck == Catch::Approx(-std::log(cosh1)).epsilon(1e-12));
        CHECK(integrate(next.density()) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("dual accumulator collects the residual") {
        SolverState s(Density(g, {1.0, 1.0}), *op);
        const Measurement y = Measurement::weighted_real({2.0, 0.0}, {0.5, 0.5});
        SolverState next = entropic_step(s, y, *op, SolverConfig::with_lambda(1.0));
        const auto v = next.v_accum.real_values();
        CHECK(v[0] == 1.0);
        CHECK(v[1] == -1.0);
    }
    SECTION("clamping is counted") {
        SolverState s(Density(g, {1.0, 1.0}), *op);
        const Measurement y = Measurement::weighted_real({100.0, 100.0}, {0.5, 0.5});
        SolverConfig cfg = SolverConfig::with_lambda(1.0);
        cfg.exponent_clamp = 10.0;
        SolverState next = entropic_step(s, y, *op, cfg);
        CHECK(next.last_clamp_events == 2);
        CHECK(next.u[0] == Catch::Approx(std::exp(10.0)).epsilon(1e-13));
    }
    SECTION("initial iterate must be strictly positive") {
        CHECK_THROWS_AS(SolverState(Density(g, {0.0, 1.0}), *op), std::invalid_argument);
    }
}

TEST_CASE("entropic step against a long-double reference") {
    auto g = make_grid(0.0, 1.0, 3);
    auto op = std::make_shared<IntegralKernelOperator>(make_kernel_operator(1, 3, 3));
    const std::vector<double> u0{0.8, 1.3, 0.6};
    const Measurement y = Measurement::real_grid(*op->output_grid(), {0.9, 1.1, 1.4});
    const double lambda = 0.7;

    for (Mode mode : {Mode::Unconstrained, Mode::Probability}) {
        SolverState s(Density(op->input_grid(), u0), *op);
        SolverState next = entropic_step(s, y, *op, SolverConfig::with_lambda(lambda, mode));

        // independent evaluation of the same closed form in extended precision
        const auto w = op->input_grid()->weights();
        const auto wt = op->output_grid()->weights();
        long double r[3], unext[3];
        for (int j = 0; j < 3; ++j) {
            long double sum = 0.0L;
            for (int i = 0; i < 3; ++i)
                sum += (long double)w[i] * (long double)op->kernel_at(j, i) * (long double)u0[i];
            r[j] = (long double)y.real_values()[j] - sum;
        }
        for (int i = 0; i < 3; ++i) {
            long double sum = 0.0L;
            for (int j = 0; j < 3; ++j)
                sum += (long double)wt[j] * (long double)op->kernel_at(j, i) * r[j];
            unext[i] = (long double)u0[i] * std::exp((long double)lambda * sum);
        }
        if (mode == Mode::Probability) {
            long double mass = 0.0L;
            for (int i = 0; i < 3; ++i) mass += (long double)w[i] * unext[i];
            for (int i = 0; i < 3; ++i) unext[i] /= mass;
        }
        for (int i = 0; i < 3; ++i)
            CHECK(next.u[i] == Catch::Approx((double)unext[i]).epsilon(1e-12));
    }
}

TEST_CASE("stochastic entropic step") {
    auto op = std::make_shared<IntegralKernelOperator>(make_kernel_operator(3, 40, 40));
    const auto& g = op->input_grid();
    const Density z = truth_kernel(3, g);
    const Measurement y = op->apply(z);
    const Density u0 = Density::constant(g, 1.0);
    const SolverConfig cfg = SolverConfig::for_operator(*op);

    SECTION("single block equals the full step bitwise") {
        auto blocks = partition_blocks(op, 1);
        std::vector<Measurement> yb{blocks[0].slice_data(y)};
        SolverState full = entropic_step(SolverState(u0, *op), y, *op, cfg);
        SolverState stoch =
            stochastic_entropic_step(SolverState(u0, *op, 99), yb, blocks, cfg);
        CHECK(bitwise_equal(full.u, stoch.u));
    }
    SECTION("fixed seed reproduces the trajectory bitwise") {
        auto blocks = partition_blocks(op, 4);
        std::vector<Measurement> yb;
        for (const auto& b : blocks) yb.push_back(b.slice_data(y));
        SolverState a(u0, *op, 1234), b(u0, *op, 1234);
        for (int k = 0; k < 10; ++k) {
            a = stochastic_entropic_step(a, yb, blocks, cfg);
            b = stochastic_entropic_step(b, yb, blocks, cfg);
        }
        CHECK(bitwise_equal(a.u, b.u));
        CHECK(a.total_clamp_events == b.total_clamp_events);
    }
    SECTION("row blocks decrease the residual but differ from the full path") {
        auto blocks = partition_blocks(op, op->output_dimension());
        std::vector<Measurement> yb;
        for (const auto& b : blocks) yb.push_back(b.slice_data(y));
        SolverState stoch(u0, *op, 7);
        SolverState full(u0, *op);
        const double res0 = (y - op->apply(stoch.function())).norm();
        const std::size_t n_steps = op->output_dimension();
        for (std::size_t k = 0; k < n_steps; ++k)
            stoch = stochastic_entropic_step(stoch, yb, blocks, cfg);
        for (std::size_t k = 0; k < n_steps; ++k) full = entropic_step(full, y, *op, cfg);
        const double res_stoch = (y - op->apply(stoch.function())).norm();
        CHECK(res_stoch < res0);
        CHECK_FALSE(bitwise_equal(stoch.u, full.u));
    }
}

TEST_CASE("general fidelity step") {
    auto op = std::make_shared<IntegralKernelOperator>(make_kernel_operator(1, 40, 40));
    const auto& g = op->input_grid();
    const Density z = truth_kernel(1, g);
    const Measurement y = op->apply(z);
    const Density u0 = Density::constant(g, 1.0);
    const SolverConfig cfg = SolverConfig::for_operator(*op);

    SECTION("quadratic fidelity reproduces the entropic step bitwise") {
        QuadraticFidelity quad;
        SolverState a(u0, *op), b(u0, *op);
        for (int k = 0; k < 10; ++k) {
            a = entropic_step(a, y, *op, cfg);
            b = general_fidelity_step(b, y, *op, quad, cfg);
            REQUIRE(bitwise_equal(a.u, b.u));
            REQUIRE(bitwise_equal(a.log_u, b.log_u));
        }
    }
    SECTION("unit component weights reproduce the entropic step bitwise") {
        WeightedQuadraticFidelity fid(std::vector<double>(op->output_dimension(), 1.0));
        SolverState a(u0, *op), b(u0, *op);
        for (int k = 0; k < 5; ++k) {
            a = entropic_step(a, y, *op, cfg);
            b = general_fidelity_step(b, y, *op, fid, cfg);
            REQUIRE(bitwise_equal(a.u, b.u));
        }
    }
    SECTION("nonuniform component weights match the hand-built exponent") {
        auto g2 = make_grid(0.0, 1.0, 2);
        auto id = identity_op(g2);
        std::vector<double> omega{2.0, 1.0};
        WeightedQuadraticFidelity fid(omega);
        const Density u(g2, {1.0, 1.5});
        const Measurement yd = Measurement::weighted_real({2.0, 1.0}, {0.5, 0.5});
        const double lambda = 0.4;
        SolverState s(u, *id);
        SolverState next = general_fidelity_step(s, yd, *id, fid, SolverConfig::with_lambda(lambda));
        // exponent = -λ A* diag(ω)(Au − y); identity adjoint
        for (std::size_t i = 0; i < 2; ++i) {
            const double grad = omega[i] * (u[i] - yd.real_values()[i]);
            CHECK(next.u[i] == Catch::Approx(u[i] * std::exp(-lambda * grad)).epsilon(1e-14));
        }
    }
    SECTION("fidelity contract") {
        QuadraticFidelity quad;
        CHECK(quad.value(y, y) == 0.0);
        CHECK_THROWS_AS(WeightedQuadraticFidelity({1.0, -1.0}), std::invalid_argument);
    }
}

TEST_CASE("dual accumulator with a nonzero starting element") {
    auto op = std::make_shared<IntegralKernelOperator>(make_kernel_operator(1, 24, 24));
    const Density z = truth_kernel(1, op->input_grid());
    const Measurement y = op->apply(z);
    const Density u0 = Density::constant(op->input_grid(), 0.5);
    const SolverConfig cfg = SolverConfig::for_operator(*op);

    Measurement w0 = op->zero_measurement();
    {
        std::vector<double> vals(op->output_dimension(), 0.25);
        const auto wts = w0.weights();
        w0 = Measurement::weighted_real(std::move(vals),
                                        std::vector<double>(wts.begin(), wts.end()));
    }
    SolverState state(u0, *op, 0, w0);
    const std::vector<double> log_u0 = state.log_u;
    for (int k = 0; k < 20; ++k) state = entropic_step(state, y, *op, cfg);

    // ln u_k = ln u_0 + sum of normalizers + lambda A*(v_k - w_0)
    Measurement v = state.v_accum;
    v -= state.w0;
    const GridFunction adj = op->adjoint(v);
    for (std::size_t i = 0; i < adj.size(); ++i) {
        const double expected = log_u0[i] + state.log_normalizer_sum + cfg.lambda * adj[i];
        REQUIRE(std::abs(state.log_u[i] - expected) <= 1e-10);
    }
}

TEST_CASE("fidelity descent chain") {
    // along a generalized-fidelity run, each step pays for its divergence:
    // c d(u_k, u_{k+1}) <= F(A u_k) - F(A u_{k+1})
    auto op = std::make_shared<IntegralKernelOperator>(make_kernel_operator(1, 64, 64));
    const Density z = truth_kernel(1, op->input_grid());
    const Measurement y = op->apply(z);
    const SolverConfig cfg = SolverConfig::for_operator(*op);

    std::vector<double> omega(op->output_dimension());
    SplitMix64 rng(61);
    for (double& o : omega) o = 0.5 + 0.5 * rng.next_unit();

    const QuadraticFidelity quad;
    const WeightedQuadraticFidelity weighted{omega};
    for (const Fidelity* fid : {static_cast<const Fidelity*>(&quad),
                                static_cast<const Fidelity*>(&weighted)}) {
        SolverState state(Density::constant(op->input_grid(), 1.0), *op);
        for (int k = 0; k < 50; ++k) {
            const Density uk = state.density();
            const SolverState next = general_fidelity_step(state, y, *op, *fid, cfg);
            const Density un = next.density();
            const double lhs = cfg.c * kl_divergence(uk, un).value();
            const double rhs = fid->value(op->apply(uk), y) - fid->value(op->apply(un), y);
            REQUIRE(lhs <= rhs + 1e-9 * (1.0 + std::abs(rhs)));
            state = next;
        }
    }
}

TEST_CASE("em step") {
    auto g = make_grid(0.0, 1.0, 2);
    auto op = identity_op(g);

    SECTION("fixed point at the data") {
        const Density u(g, {0.4, 0.9});
        const Measurement y = op->apply(u);
        const Density next = em_step(u, y, *op);
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(next[i] == Catch::Approx(u[i]).epsilon(1e-14));
    }
    SECTION("identity data fit in one step") {
        const Density u = Density::constant(g, 0.5);
        const Measurement y = Measurement::weighted_real({3.0, 3.0}, {0.5, 0.5});
        const Density next = em_step(u, y, *op);
        CHECK(next[0] == Catch::Approx(3.0).epsilon(1e-14));
        CHECK(next[1] == Catch::Approx(3.0).epsilon(1e-14));
    }
    SECTION("residual is non-increasing on the first kernel problem") {
        auto kop = std::make_shared<IntegralKernelOperator>(make_kernel_operator(1, 60, 60));
        const Density z = truth_kernel(1, kop->input_grid());
        const Measurement y = kop->apply(z);
        Density u = Density::constant(kop->input_grid(), 1.0);
        double prev = (y - kop->apply(u)).norm();
        for (int k = 0; k < 50; ++k) {
            u = em_step(u, y, *kop);
            const double res = (y - kop->apply(u)).norm();
            CHECK(res <= prev + 1e-9 * (1.0 + prev));
            prev = res;
        }
    }
    SECTION("refuses operators with negative entries") {
        std::vector<double> m{1.0, -0.5, 0.0, 1.0};
        DenseMatrixOperator neg(g, 2, std::move(m), {0.5, 0.5}, "signed");
        CHECK_THROWS_AS(em_step(Density::constant(g, 1.0),
                                Measurement::weighted_real({1.0, 1.0}, {0.5, 0.5}), neg),
                        std::invalid_argument);
    }
    SECTION("refuses complex data spaces") {
        auto grid = make_grid(-1.0, 1.0, 8);
        FourierSamplingOperator fop(grid, FourierSamplingOperator::uniform_frequencies(4));
        CHECK_THROWS_AS(em_step(Density::constant(grid, 1.0), fop.zero_measurement(), fop),
                        std::invalid_argument);
    }
    SECTION("aborts when the forward value vanishes under positive data") {
        std::vector<double> m{1.0, 1.0, 0.0, 0.0};  // second row annihilates everything
        DenseMatrixOperator zop(g, 2, std::move(m), {0.5, 0.5}, "rank1");
        CHECK_THROWS_AS(em_step(Density::constant(g, 1.0),
                                Measurement::weighted_real({1.0, 1.0}, {0.5, 0.5}), zop),
                        SolverAbort);
    }
    SECTION("negative data is rejected") {
        CHECK_THROWS_AS(em_step(Density::constant(g, 1.0),
                                Measurement::weighted_real({1.0, -1.0}, {0.5, 0.5}), *op),
                        std::invalid_argument);
    }
}

TEST_CASE("projected landweber step") {
    auto g = make_grid(0.0, 1.0, 2);
    auto op = identity_op(g);
    SECTION("zero residual leaves the iterate unchanged") {
        const Density u(g, {0.3, 0.8});
        const Density next = projected_landweber_step(u, op->apply(u), *op, 1.0);
        for (std::size_t i = 0; i < 2; ++i) CHECK(next[i] == u[i]);
    }
    SECTION("projection clips at zero") {
        const Density u = Density::constant(g, 1.0);
        const Measurement y = Measurement::weighted_real({0.0, 0.0}, {0.5, 0.5});
        const Density next = projected_landweber_step(u, y, *op, 2.0);
        CHECK(next[0] == 0.0);
        CHECK(next[1] == 0.0);
    }
    SECTION("plain gradient step") {
        const Density u = Density::constant(g, 1.0);
        const Measurement y = Measurement::weighted_real({2.0, 2.0}, {0.5, 0.5});
        const Density next = projected_landweber_step(u, y, *op, 0.5);
        CHECK(next[0] == Catch::Approx(1.5).epsilon(1e-15));
    }
    SECTION("step must be positive") {
        CHECK_THROWS_AS(projected_landweber_step(Density::constant(g, 1.0),
                                                 op->zero_measurement(), *op, 0.0),
                        std::invalid_argument);
    }
}

TEST_CASE("run driver") {
    auto op = std::make_shared<IntegralKernelOperator>(make_kernel_operator(3, 64, 64));
    const auto& g = op->input_grid();
    const Density z = truth_kernel(3, g);
    const Measurement y = op->apply(z);
    const Density u0 = Density::constant(g, 1.0);
    SolverConfig cfg = SolverConfig::for_operator(*op);

    SECTION("an already-satisfied discrepancy stops at k = 0") {
        RunSpec spec{op, y, u0, cfg};
        spec.stop = DiscrepancyRule{2.0, 1e6};
        const RunResult r = run(spec);
        CHECK(r.k_star == 0);
        CHECK(r.trace.size() == 1);
        CHECK(r.reason == StopReason::Discrepancy);
    }
    SECTION("budget stop records exactly max_iter iterates") {
        cfg.max_iter = 25;
        RunSpec spec{op, y, u0, cfg};
        spec.truth = z;
        const RunResult r = run(spec);
        CHECK(r.trace.size() == 25);
        CHECK(r.k_star == 24);
        CHECK(r.reason == StopReason::MaxIter);
        for (std::size_t i = 0; i < r.trace.size(); ++i)
            CHECK(r.trace[i].k == static_cast<int>(i));
        // exact data: residual never increases
        for (std::size_t i = 0; i + 1 < r.trace.size(); ++i)
            CHECK(r.trace[i + 1].residual <=
                  r.trace[i].residual + 1e-9 * (1.0 + r.trace[i].residual));
    }
    SECTION("a-priori rule fires at ceil(C/delta)") {
        cfg.max_iter = 100;
        RunSpec spec{op, y, u0, cfg};
        spec.stop = APrioriRule{1.0, 0.2};  // index 5
        const RunResult r = run(spec);
        CHECK(r.k_star == 5);
        CHECK(r.reason == StopReason::APriori);
        CHECK(r.trace.size() == 6);
    }
    SECTION("aborted steps return the partial trace") {
        // data so large that every exponent clamps at +500 until exp overflows
        const Measurement huge = Measurement::real_grid(
            *op->output_grid(), std::vector<double>(op->output_dimension(), 1e300));
        RunSpec spec{op, huge, u0, cfg};
        const RunResult r = run(spec);
        CHECK(r.reason == StopReason::Aborted);
        CHECK_FALSE(r.abort_message.empty());
        CHECK(r.trace.size() >= 2);
    }
    SECTION("modified discrepancy needs a fidelity") {
        RunSpec spec{op, y, u0, cfg};
        spec.stop = ModifiedDiscrepancyRule{1e-3};
        CHECK_THROWS_AS(run(spec), std::invalid_argument);
        spec.method = Method::GeneralFidelity;
        spec.fidelity = std::make_shared<QuadraticFidelity>();
        const RunResult r = run(spec);
        CHECK(r.reason == StopReason::ModifiedDiscrepancy);
        CHECK(0.5 * r.trace.back().residual * r.trace.back().residual < 1e-3);
    }
    SECTION("discrepancy rule validates its parameters") {
        RunSpec spec{op, y, u0, cfg};
        spec.stop = DiscrepancyRule{2.0, 0.0};
        CHECK_THROWS_AS(run(spec), std::invalid_argument);
        spec.stop = DiscrepancyRule{1.0, 0.1};
        CHECK_THROWS_AS(run(spec), std::invalid_argument);
    }
}

TEST_CASE("monotonicity checker") {
    auto op = std::make_shared<IntegralKernelOperator>(make_kernel_operator(1, 48, 48));
    const Density z = truth_kernel(1, op->input_grid());
    const Measurement y = op->apply(z);
    SolverConfig cfg = SolverConfig::for_operator(*op);
    cfg.max_iter = 40;
    RunSpec spec{op, y, Density::constant(op->input_grid(), 1.0), cfg};
    spec.truth = z;
    const RunResult r = run(spec);

    SECTION("healthy exact-data trace passes") {
        const MonotonicityReport report = check_monotonicity(r.trace, 0.0);
        CHECK(report.passed);
    }
    SECTION("a bumped residual is localized") {
        auto corrupted = r.trace;
        corrupted[20].residual = corrupted[19].residual * 2.0;
        const MonotonicityReport report = check_monotonicity(corrupted, 0.0);
        CHECK_FALSE(report.passed);
        CHECK(report.violation_index == 20);
    }
    SECTION("traces without D are rejected") {
        auto stripped = r.trace;
        for (auto& rec : stripped) rec.D_to_truth.reset();
        CHECK_THROWS_AS(check_monotonicity(stripped, 0.0), std::invalid_argument);
    }
}

TEST_CASE("rate fitting") {
    SECTION("exact power law") {
        std::vector<IterationRecord> trace;
        for (int k = 1; k <= 100; ++k) {
            IterationRecord rec;
            rec.k = k;
            rec.kl_to_truth = 1.0 / static_cast<double>(k);
            trace.push_back(rec);
        }
        CHECK(fit_rate(trace, 1, 100) == Catch::Approx(-1.0).margin(1e-12));
    }
    SECTION("constant sequence") {
        std::vector<IterationRecord> trace;
        for (int k = 1; k <= 50; ++k) {
            IterationRecord rec;
            rec.k = k;
            rec.kl_to_truth = 0.125;
            trace.push_back(rec);
        }
        CHECK(fit_rate(trace, 5, 40) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("too few points") {
        std::vector<IterationRecord> trace;
        for (int k = 1; k <= 4; ++k) {
            IterationRecord rec;
            rec.k = k;
            rec.kl_to_truth = 1.0 / k;
            trace.push_back(rec);
        }
        CHECK_THROWS_AS(fit_rate(trace, 1, 4), std::invalid_argument);
    }
}
