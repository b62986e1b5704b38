#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "entroland/grid.hpp"
#include "entroland/operators.hpp"

namespace entroland {

/// Real number or an explicit +infinity state. Never NaN.
class ExtendedReal {
public:
    ExtendedReal(double v) : value_(v) {  // NOLINT(google-explicit-constructor)
        if (std::isnan(v))
            throw std::invalid_argument("ExtendedReal: NaN");
        if (std::isinf(v)) {
            finite_ = false;
            value_ = 0.0;
        }
    }

    static ExtendedReal infinity() noexcept {
        ExtendedReal r;
        r.finite_ = false;
        return r;
    }

    bool is_finite() const noexcept { return finite_; }

    /// Finite value; throws on the infinite state.
    double value() const {
        if (!finite_)
            throw std::domain_error("ExtendedReal: value() on +infinity");
        return value_;
    }

    /// Finite value, or +inf as a double.
    double value_or_infinity() const noexcept {
        return finite_ ? value_ : std::numeric_limits<double>::infinity();
    }

    friend bool operator==(const ExtendedReal& a, const ExtendedReal& b) noexcept {
        return a.finite_ == b.finite_ && (!a.finite_ || a.value_ == b.value_);
    }
    friend bool operator<(const ExtendedReal& a, const ExtendedReal& b) noexcept {
        if (!a.finite_) return false;
        if (!b.finite_) return true;
        return a.value_ < b.value_;
    }

private:
    ExtendedReal() = default;
    double value_ = 0.0;
    bool finite_ = true;
};

/// Negative Boltzmann-Shannon entropy f(u) = ∫ u ln u, with 0 ln 0 = 0.
/// Finite for every nonnegative grid function; the +infinity branch of the
/// continuum definition is guarded by the Density type (negative values are
/// rejected at construction).
inline ExtendedReal entropy(const Density& u) {
    const auto w = u.grid().weights();
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double v = u[i];
        if (v > 0.0) s += w[i] * v * std::log(v);
    }
    return ExtendedReal(s);
}

/// Kullback-Leibler divergence d(v,u) = ∫ [v ln(v/u) − v + u].
/// Node conventions: v_i = 0 contributes u_i; u_i = 0 with v_i > 0 gives
/// the explicit +infinity state. Nonnegative, zero iff v == u nodewise.
inline ExtendedReal kl_divergence(const Density& v, const Density& u) {
    detail::require_same_grid(v, u, "kl_divergence");
    const auto w = v.grid().weights();
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double vi = v[i], ui = u[i];
        if (vi == 0.0) {
            s += w[i] * ui;
        } else if (ui == 0.0) {
            return ExtendedReal::infinity();
        } else {
            s += w[i] * (vi * std::log(vi / ui) - vi + ui);
        }
    }
    // rounding can leave a tiny negative total when v ≈ u
    return ExtendedReal(std::max(s, 0.0));
}

/// Slack of the bound ‖u−v‖₁² ≤ (2/3 ‖v‖₁ + 4/3 ‖u‖₁) d(v,u):
/// right-hand side minus left-hand side, nonnegative by the inequality.
/// Propagates +inf when d(v,u) is infinite.
inline double l1_kl_bound_slack(const Density& v, const Density& u) {
    const ExtendedReal d = kl_divergence(v, u);
    if (!d.is_finite()) return std::numeric_limits<double>::infinity();
    const double lhs = std::pow(l1_distance(u, v), 2);
    const double rhs = (2.0 / 3.0 * l1_norm(v) + 4.0 / 3.0 * l1_norm(u)) * d.value();
    return rhs - lhs;
}

/// The surrogate functional D(u,v) = c d(u,v) − ½‖Au − Av‖²; nonnegative
/// whenever c ≥ γ²/2 with γ the continuity constant of the operator.
/// Returns +inf as a double when the divergence is infinite.
inline double surrogate_D(const Density& u, const Density& v, const ForwardOperator& op,
                          double c) {
    if (c <= 0.0)
        throw std::invalid_argument("surrogate_D: c must be positive");
    const ExtendedReal d = kl_divergence(u, v);
    if (!d.is_finite()) return std::numeric_limits<double>::infinity();
    const Measurement diff = op.apply(u) - op.apply(v);
    return c * d.value() - 0.5 * diff.norm_squared();
}

/// γ = √2 ‖A‖, the constant in ‖Au − Av‖ ≤ γ √d(u,v) on unit-mass pairs.
inline double continuity_constant(const ForwardOperator& op) {
    return std::sqrt(2.0) * op.norm_estimate();
}

} // namespace entroland
