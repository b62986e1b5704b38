#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace entroland {

/// Uniform partition of a compact interval with trapezoidal quadrature
/// weights. Immutable after construction; shared between grid functions
/// via shared_ptr.
class Grid {
public:
    Grid(double lower, double upper, std::size_t n)
        : lower_(lower), upper_(upper) {
        if (!(std::isfinite(lower) && std::isfinite(upper)) || !(upper > lower))
            throw std::invalid_argument("Grid: interval must be finite with upper > lower");
        if (n < 2)
            throw std::invalid_argument("Grid: need at least 2 nodes");
        spacing_ = (upper - lower) / static_cast<double>(n - 1);
        weights_.assign(n, spacing_);
        weights_.front() = spacing_ / 2.0;
        weights_.back() = spacing_ / 2.0;
    }

    double lower() const noexcept { return lower_; }
    double upper() const noexcept { return upper_; }
    double length() const noexcept { return upper_ - lower_; }
    double spacing() const noexcept { return spacing_; }
    std::size_t size() const noexcept { return weights_.size(); }

    /// i-th node; endpoints are exact.
    double node(std::size_t i) const {
        const std::size_t m = weights_.size() - 1;
        if (i == 0) return lower_;
        if (i == m) return upper_;
        return lower_ + (upper_ - lower_) * (static_cast<double>(i) / static_cast<double>(m));
    }

    std::span<const double> weights() const noexcept { return weights_; }
    double weight(std::size_t i) const { return weights_[i]; }

    friend bool operator==(const Grid& a, const Grid& b) noexcept {
        return a.lower_ == b.lower_ && a.upper_ == b.upper_ && a.size() == b.size();
    }

private:
    double lower_;
    double upper_;
    double spacing_;
    std::vector<double> weights_;
};

inline std::shared_ptr<const Grid> make_grid(double lower, double upper, std::size_t n) {
    return std::make_shared<const Grid>(lower, upper, n);
}

/// Real-valued function sampled at the grid nodes. Values must be finite;
/// mass and norms are always quadrature-weighted.
class GridFunction {
public:
    GridFunction(std::shared_ptr<const Grid> grid, std::vector<double> values)
        : grid_(std::move(grid)), values_(std::move(values)) {
        if (!grid_)
            throw std::invalid_argument("GridFunction: null grid");
        if (values_.size() != grid_->size())
            throw std::invalid_argument("GridFunction: value count does not match grid");
        for (double v : values_)
            if (!std::isfinite(v))
                throw std::invalid_argument("GridFunction: non-finite value");
    }

    static GridFunction constant(std::shared_ptr<const Grid> grid, double value) {
        const std::size_t n = grid->size();
        return GridFunction(std::move(grid), std::vector<double>(n, value));
    }

    const Grid& grid() const noexcept { return *grid_; }
    const std::shared_ptr<const Grid>& grid_ptr() const noexcept { return grid_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

protected:
    std::shared_ptr<const Grid> grid_;
    std::vector<double> values_;
};

/// Nonnegative grid function (an element of dom f). Strict positivity,
/// needed for dom ∂f, is queryable.
class Density : public GridFunction {
public:
    Density(std::shared_ptr<const Grid> grid, std::vector<double> values)
        : GridFunction(std::move(grid), std::move(values)) {
        for (double v : values_)
            if (v < 0.0)
                throw std::invalid_argument("Density: negative value");
    }

    explicit Density(GridFunction f) : Density(f.grid_ptr(), std::vector<double>(f.values().begin(), f.values().end())) {}

    static Density constant(std::shared_ptr<const Grid> grid, double value) {
        if (value < 0.0)
            throw std::invalid_argument("Density: negative constant");
        const std::size_t n = grid->size();
        return Density(std::move(grid), std::vector<double>(n, value));
    }

    double min_value() const noexcept {
        double m = values_.front();
        for (double v : values_) m = std::min(m, v);
        return m;
    }

    bool is_strictly_positive() const noexcept { return min_value() > 0.0; }
};

namespace detail {
inline void require_same_grid(const GridFunction& a, const GridFunction& b, const char* what) {
    if (!(a.grid() == b.grid()))
        throw std::invalid_argument(std::string(what) + ": grid mismatch");
}
} // namespace detail

/// ∫_Ω u dt by the grid's trapezoidal rule.
inline double integrate(const GridFunction& u) {
    const auto w = u.grid().weights();
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += w[i] * u[i];
    return s;
}

/// Weighted L² pairing ⟨u,v⟩ = ∫_Ω u v dt.
inline double inner(const GridFunction& u, const GridFunction& v) {
    detail::require_same_grid(u, v, "inner");
    const auto w = u.grid().weights();
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += w[i] * u[i] * v[i];
    return s;
}

inline double l1_norm(const GridFunction& u) {
    const auto w = u.grid().weights();
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += w[i] * std::abs(u[i]);
    return s;
}

inline double l2_norm(const GridFunction& u) { return std::sqrt(inner(u, u)); }

inline GridFunction operator-(const GridFunction& a, const GridFunction& b) {
    detail::require_same_grid(a, b, "operator-");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] - b[i];
    return GridFunction(a.grid_ptr(), std::move(v));
}

inline GridFunction operator+(const GridFunction& a, const GridFunction& b) {
    detail::require_same_grid(a, b, "operator+");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i] + b[i];
    return GridFunction(a.grid_ptr(), std::move(v));
}

inline GridFunction operator*(double s, const GridFunction& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[i] = s * a[i];
    return GridFunction(a.grid_ptr(), std::move(v));
}

/// ‖u − v‖₁ without building the intermediate difference.
inline double l1_distance(const GridFunction& a, const GridFunction& b) {
    detail::require_same_grid(a, b, "l1_distance");
    const auto w = a.grid().weights();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * std::abs(a[i] - b[i]);
    return s;
}

} // namespace entroland
