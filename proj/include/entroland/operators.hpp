#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <istream>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "entroland/grid.hpp"

namespace entroland {

/// Element of the data space Y. Two variants:
///   - weighted real vector (discretized L² on an output interval),
///     inner product Σ w̃_j a_j b_j;
///   - complex n-vector with the real-part pairing Re Σ a_j conj(b_j).
/// Block slices keep the parent's weights, so restricted inner products
/// stay consistent with the full space.
class Measurement {
public:
    struct RealData {
        std::vector<double> values;
        std::vector<double> weights;
    };
    struct ComplexData {
        std::vector<std::complex<double>> values;
    };

    static Measurement weighted_real(std::vector<double> values, std::vector<double> weights) {
        if (values.size() != weights.size())
            throw std::invalid_argument("Measurement: value/weight size mismatch");
        return Measurement(RealData{std::move(values), std::move(weights)});
    }

    static Measurement real_grid(const Grid& grid, std::vector<double> values) {
        if (values.size() != grid.size())
            throw std::invalid_argument("Measurement: value count does not match grid");
        return Measurement(RealData{std::move(values),
                                    std::vector<double>(grid.weights().begin(), grid.weights().end())});
    }

    static Measurement complex_vector(std::vector<std::complex<double>> values) {
        return Measurement(ComplexData{std::move(values)});
    }

    bool is_complex() const noexcept { return std::holds_alternative<ComplexData>(data_); }

    std::size_t size() const noexcept {
        if (auto* r = std::get_if<RealData>(&data_)) return r->values.size();
        return std::get<ComplexData>(data_).values.size();
    }

    std::span<const double> real_values() const { return real_data().values; }
    std::span<const double> weights() const { return real_data().weights; }
    std::span<const std::complex<double>> complex_values() const {
        if (auto* c = std::get_if<ComplexData>(&data_)) return c->values;
        throw std::invalid_argument("Measurement: not a complex vector");
    }

    Measurement zero_like() const {
        Measurement m = *this;
        if (auto* r = std::get_if<RealData>(&m.data_))
            std::fill(r->values.begin(), r->values.end(), 0.0);
        else
            std::fill(std::get<ComplexData>(m.data_).values.begin(),
                      std::get<ComplexData>(m.data_).values.end(), std::complex<double>(0.0));
        return m;
    }

    Measurement& operator+=(const Measurement& o) {
        check_same_space(o);
        if (auto* r = std::get_if<RealData>(&data_)) {
            const auto& ov = std::get<RealData>(o.data_).values;
            for (std::size_t i = 0; i < r->values.size(); ++i) r->values[i] += ov[i];
        } else {
            auto& v = std::get<ComplexData>(data_).values;
            const auto& ov = std::get<ComplexData>(o.data_).values;
            for (std::size_t i = 0; i < v.size(); ++i) v[i] += ov[i];
        }
        return *this;
    }

    Measurement& operator-=(const Measurement& o) {
        check_same_space(o);
        if (auto* r = std::get_if<RealData>(&data_)) {
            const auto& ov = std::get<RealData>(o.data_).values;
            for (std::size_t i = 0; i < r->values.size(); ++i) r->values[i] -= ov[i];
        } else {
            auto& v = std::get<ComplexData>(data_).values;
            const auto& ov = std::get<ComplexData>(o.data_).values;
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= ov[i];
        }
        return *this;
    }

    Measurement& operator*=(double s) {
        if (auto* r = std::get_if<RealData>(&data_)) {
            for (double& v : r->values) v *= s;
        } else {
            for (auto& v : std::get<ComplexData>(data_).values) v *= s;
        }
        return *this;
    }

    /// Componentwise scaling by a real weight vector (used by weighted
    /// data fidelities).
    Measurement& scale_componentwise(std::span<const double> omega) {
        if (omega.size() != size())
            throw std::invalid_argument("Measurement: component weight size mismatch");
        if (auto* r = std::get_if<RealData>(&data_)) {
            for (std::size_t i = 0; i < r->values.size(); ++i) r->values[i] *= omega[i];
        } else {
            auto& v = std::get<ComplexData>(data_).values;
            for (std::size_t i = 0; i < v.size(); ++i) v[i] *= omega[i];
        }
        return *this;
    }

    friend Measurement operator-(Measurement a, const Measurement& b) { return a -= b; }
    friend Measurement operator+(Measurement a, const Measurement& b) { return a += b; }
    friend Measurement operator*(double s, Measurement a) { return a *= s; }

    friend double inner(const Measurement& a, const Measurement& b) {
        a.check_same_space(b);
        if (auto* r = std::get_if<RealData>(&a.data_)) {
            const auto& bv = std::get<RealData>(b.data_).values;
            double s = 0.0;
            for (std::size_t i = 0; i < r->values.size(); ++i)
                s += r->weights[i] * r->values[i] * bv[i];
            return s;
        }
        const auto& av = std::get<ComplexData>(a.data_).values;
        const auto& bv = std::get<ComplexData>(b.data_).values;
        double s = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i)
            s += av[i].real() * bv[i].real() + av[i].imag() * bv[i].imag();
        return s;
    }

    double norm_squared() const { return inner(*this, *this); }
    double norm() const { return std::sqrt(norm_squared()); }

    /// Contiguous sub-measurement [offset, offset+count); real slices keep
    /// the parent's weights.
    Measurement slice(std::size_t offset, std::size_t count) const {
        if (offset + count > size())
            throw std::invalid_argument("Measurement: slice out of range");
        if (auto* r = std::get_if<RealData>(&data_)) {
            return Measurement(RealData{
                std::vector<double>(r->values.begin() + offset, r->values.begin() + offset + count),
                std::vector<double>(r->weights.begin() + offset, r->weights.begin() + offset + count)});
        }
        const auto& v = std::get<ComplexData>(data_).values;
        return Measurement(ComplexData{
            std::vector<std::complex<double>>(v.begin() + offset, v.begin() + offset + count)});
    }

    /// Overwrite values [offset, offset+src.size()) with src's values.
    void set_slice(std::size_t offset, const Measurement& src) {
        if (offset + src.size() > size())
            throw std::invalid_argument("Measurement: set_slice out of range");
        if (is_complex() != src.is_complex())
            throw std::invalid_argument("Measurement: set_slice space mismatch");
        if (auto* r = std::get_if<RealData>(&data_)) {
            const auto sv = src.real_values();
            std::copy(sv.begin(), sv.end(), r->values.begin() + offset);
        } else {
            auto& v = std::get<ComplexData>(data_).values;
            const auto sv = src.complex_values();
            std::copy(sv.begin(), sv.end(), v.begin() + offset);
        }
    }

private:
    explicit Measurement(RealData d) : data_(std::move(d)) {}
    explicit Measurement(ComplexData d) : data_(std::move(d)) {}

    const RealData& real_data() const {
        if (auto* r = std::get_if<RealData>(&data_)) return *r;
        throw std::invalid_argument("Measurement: not a real vector");
    }

    void check_same_space(const Measurement& o) const {
        if (is_complex() != o.is_complex() || size() != o.size())
            throw std::invalid_argument("Measurement: space mismatch");
    }

    std::variant<RealData, ComplexData> data_;
};

/// Linear bounded operator A from densities on the input grid into Y,
/// with the adjoint taken against the weighted inner product on Ω and
/// the Y pairing of the concrete measurement type. Immutable; apply and
/// adjoint are pure.
class ForwardOperator {
public:
    ForwardOperator() = default;
    // the norm cache travels with the value; the guarding mutex does not
    ForwardOperator(const ForwardOperator& other) { norm_cache_ = other.cached_norm(); }
    ForwardOperator(ForwardOperator&& other) noexcept { norm_cache_ = other.cached_norm(); }
    ForwardOperator& operator=(const ForwardOperator& other) {
        if (this != &other) {
            std::lock_guard<std::mutex> lock(norm_mutex_);
            norm_cache_ = other.cached_norm();
        }
        return *this;
    }
    ForwardOperator& operator=(ForwardOperator&& other) noexcept {
        if (this != &other) {
            std::lock_guard<std::mutex> lock(norm_mutex_);
            norm_cache_ = other.cached_norm();
        }
        return *this;
    }
    virtual ~ForwardOperator() = default;

    virtual Measurement apply(const GridFunction& u) const = 0;
    virtual GridFunction adjoint(const Measurement& w) const = 0;
    virtual std::size_t output_dimension() const = 0;
    virtual const std::shared_ptr<const Grid>& input_grid() const = 0;
    virtual Measurement zero_measurement() const = 0;
    virtual std::string id() const = 0;

    /// True when both A and A* map nonnegative inputs to nonnegative
    /// outputs (required by the EM iteration).
    virtual bool preserves_nonnegativity() const { return false; }

    /// Largest singular value, estimated once by power iteration on A*A
    /// and cached. Thread-safe.
    double norm_estimate() const {
        std::lock_guard<std::mutex> lock(norm_mutex_);
        if (!norm_cache_) norm_cache_ = power_iteration_norm(*this);
        return *norm_cache_;
    }

    /// Power iteration on A*A in the weighted inner product; fixed
    /// all-ones start, at most max_iters steps, relative tolerance on the
    /// Rayleigh quotient.
    static double power_iteration_norm(const ForwardOperator& op, int max_iters = 200,
                                       double rel_tol = 1e-10) {
        const auto& grid = op.input_grid();
        GridFunction x = GridFunction::constant(grid, 1.0);
        double estimate = 0.0;
        for (int it = 0; it < max_iters; ++it) {
            const Measurement y = op.apply(x);
            const GridFunction z = op.adjoint(y);
            const double xx = inner(x, x);
            const double next = y.norm_squared() / xx;
            const double zz = inner(z, z);
            if (zz <= 0.0) return 0.0;
            x = (1.0 / std::sqrt(zz)) * z;
            if (it > 0 && std::abs(next - estimate) <= rel_tol * std::abs(next)) {
                estimate = next;
                break;
            }
            estimate = next;
        }
        return std::sqrt(estimate);
    }

private:
    std::optional<double> cached_norm() const {
        std::lock_guard<std::mutex> lock(norm_mutex_);
        return norm_cache_;
    }

    mutable std::mutex norm_mutex_;
    mutable std::optional<double> norm_cache_;
};

/// Dense integral operator (Au)(x_j) = Σ_i w_i k(x_j, y_i) u_i on a pair of
/// grids, with adjoint (A*v)(y_i) = Σ_j w̃_j k(x_j, y_i) v_j. The kernel is
/// tabulated row-major, output × input.
class IntegralKernelOperator : public ForwardOperator {
public:
    IntegralKernelOperator(std::shared_ptr<const Grid> input, std::shared_ptr<const Grid> output,
                           std::vector<double> kernel, std::string id)
        : input_(std::move(input)), output_(std::move(output)), kernel_(std::move(kernel)),
          id_(std::move(id)) {
        if (kernel_.size() != input_->size() * output_->size())
            throw std::invalid_argument("IntegralKernelOperator: kernel size mismatch");
        nonnegative_ = std::all_of(kernel_.begin(), kernel_.end(), [](double k) { return k >= 0.0; });
    }

    static IntegralKernelOperator tabulate(std::shared_ptr<const Grid> input,
                                           std::shared_ptr<const Grid> output,
                                           const std::function<double(double, double)>& k,
                                           std::string id) {
        std::vector<double> values(input->size() * output->size());
        for (std::size_t j = 0; j < output->size(); ++j)
            for (std::size_t i = 0; i < input->size(); ++i)
                values[j * input->size() + i] = k(output->node(j), input->node(i));
        return IntegralKernelOperator(std::move(input), std::move(output), std::move(values),
                                      std::move(id));
    }

    Measurement apply(const GridFunction& u) const override {
        if (!(u.grid() == *input_))
            throw std::invalid_argument("IntegralKernelOperator: input grid mismatch");
        const auto w = input_->weights();
        const std::size_t ni = input_->size(), no = output_->size();
        std::vector<double> out(no, 0.0);
        for (std::size_t j = 0; j < no; ++j) {
            const double* row = kernel_.data() + j * ni;
            double s = 0.0;
            for (std::size_t i = 0; i < ni; ++i) s += w[i] * row[i] * u[i];
            out[j] = s;
        }
        return Measurement::real_grid(*output_, std::move(out));
    }

    GridFunction adjoint(const Measurement& v) const override {
        if (v.is_complex() || v.size() != output_->size())
            throw std::invalid_argument("IntegralKernelOperator: measurement space mismatch");
        const auto wt = output_->weights();
        const auto vv = v.real_values();
        const std::size_t ni = input_->size(), no = output_->size();
        std::vector<double> out(ni, 0.0);
        for (std::size_t j = 0; j < no; ++j) {
            const double* row = kernel_.data() + j * ni;
            const double c = wt[j] * vv[j];
            for (std::size_t i = 0; i < ni; ++i) out[i] += c * row[i];
        }
        return GridFunction(input_, std::move(out));
    }

    std::size_t output_dimension() const override { return output_->size(); }
    const std::shared_ptr<const Grid>& input_grid() const override { return input_; }
    const std::shared_ptr<const Grid>& output_grid() const { return output_; }
    Measurement zero_measurement() const override {
        return Measurement::real_grid(*output_, std::vector<double>(output_->size(), 0.0));
    }
    std::string id() const override { return id_; }
    bool preserves_nonnegativity() const override { return nonnegative_; }

    std::span<const double> kernel() const noexcept { return kernel_; }
    double kernel_at(std::size_t j, std::size_t i) const { return kernel_[j * input_->size() + i]; }

    /// Row-major CSV dump (one output row per line), %.17g round-trip.
    void dump_kernel_csv(std::ostream& os) const {
        const std::size_t ni = input_->size();
        char buf[64];
        for (std::size_t j = 0; j < output_->size(); ++j) {
            for (std::size_t i = 0; i < ni; ++i) {
                std::snprintf(buf, sizeof(buf), "%.17g", kernel_[j * ni + i]);
                os << buf << (i + 1 == ni ? "" : ",");
            }
            os << '\n';
        }
    }

    static IntegralKernelOperator load_kernel_csv(std::istream& is,
                                                  std::shared_ptr<const Grid> input,
                                                  std::shared_ptr<const Grid> output,
                                                  std::string id) {
        std::vector<double> values;
        values.reserve(input->size() * output->size());
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
        }
        return IntegralKernelOperator(std::move(input), std::move(output), std::move(values),
                                      std::move(id));
    }

private:
    std::shared_ptr<const Grid> input_;
    std::shared_ptr<const Grid> output_;
    std::vector<double> kernel_;
    std::string id_;
    bool nonnegative_ = false;
};

/// The paper's test kernels on Ω = Ω̃ = (0,1):
///   k1(x,y) = e^{xy}
///   k2(x,y) = 3 e^{-(x-y)²/0.04}
///   k3(x,y) = 1 if x ≥ y, else 0   (ties included)
inline IntegralKernelOperator make_kernel_operator(int which, std::size_t n_in, std::size_t n_out) {
    if (n_in < 2 || n_out < 2)
        throw std::invalid_argument("make_kernel_operator: grids need at least 2 nodes");
    auto input = make_grid(0.0, 1.0, n_in);
    auto output = make_grid(0.0, 1.0, n_out);
    switch (which) {
    case 1:
        return IntegralKernelOperator::tabulate(input, output,
            [](double x, double y) { return std::exp(x * y); }, "k1");
    case 2:
        return IntegralKernelOperator::tabulate(input, output,
            [](double x, double y) { return 3.0 * std::exp(-(x - y) * (x - y) / 0.04); }, "k2");
    case 3:
        return IntegralKernelOperator::tabulate(input, output,
            [](double x, double y) { return x >= y ? 1.0 : 0.0; }, "k3");
    default:
        throw std::invalid_argument("make_kernel_operator: which must be 1, 2 or 3");
    }
}

/// Sampled Fourier integral on a compact interval:
///   (Au)_j = (2π)^{-1/2} Σ_i w_i u_i e^{-i x_i ξ_j},
///   (A*v)(x_i) = Re((2π)^{-1/2} Σ_j v_j e^{+i x_i ξ_j}).
/// Direct summation; n is small enough that no FFT is warranted.
class FourierSamplingOperator : public ForwardOperator {
public:
    FourierSamplingOperator(std::shared_ptr<const Grid> grid, std::vector<double> frequencies)
        : grid_(std::move(grid)), freqs_(std::move(frequencies)) {
        if (freqs_.empty())
            throw std::invalid_argument("FourierSamplingOperator: no frequencies");
        const std::size_t n = grid_->size();
        phase_.resize(freqs_.size() * n);
        for (std::size_t j = 0; j < freqs_.size(); ++j)
            for (std::size_t i = 0; i < n; ++i) {
                const double a = grid_->node(i) * freqs_[j];
                phase_[j * n + i] = {std::cos(a), std::sin(a)};
            }
    }

    /// Evenly spread sample frequencies ξ_j = 2π(j-1)/n_freq.
    static std::vector<double> uniform_frequencies(std::size_t n_freq) {
        std::vector<double> xi(n_freq);
        for (std::size_t j = 0; j < n_freq; ++j)
            xi[j] = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_freq);
        return xi;
    }

    Measurement apply(const GridFunction& u) const override {
        if (!(u.grid() == *grid_))
            throw std::invalid_argument("FourierSamplingOperator: input grid mismatch");
        const auto w = grid_->weights();
        const std::size_t n = grid_->size();
        std::vector<std::complex<double>> out(freqs_.size());
        for (std::size_t j = 0; j < freqs_.size(); ++j) {
            const std::complex<double>* row = phase_.data() + j * n;
            double re = 0.0, im = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double c = w[i] * u[i];
                re += c * row[i].real();
                im -= c * row[i].imag();  // e^{-i x ξ}
            }
            out[j] = scale_ * std::complex<double>(re, im);
        }
        return Measurement::complex_vector(std::move(out));
    }

    GridFunction adjoint(const Measurement& v) const override {
        if (!v.is_complex() || v.size() != freqs_.size())
            throw std::invalid_argument("FourierSamplingOperator: measurement space mismatch");
        const auto vv = v.complex_values();
        const std::size_t n = grid_->size();
        std::vector<double> out(n, 0.0);
        for (std::size_t j = 0; j < freqs_.size(); ++j) {
            const std::complex<double>* row = phase_.data() + j * n;
            for (std::size_t i = 0; i < n; ++i)
                out[i] += vv[j].real() * row[i].real() - vv[j].imag() * row[i].imag();
        }
        for (double& o : out) o *= scale_;
        return GridFunction(grid_, std::move(out));
    }

    std::size_t output_dimension() const override { return freqs_.size(); }
    const std::shared_ptr<const Grid>& input_grid() const override { return grid_; }
    Measurement zero_measurement() const override {
        return Measurement::complex_vector(std::vector<std::complex<double>>(freqs_.size()));
    }
    std::string id() const override { return "fourier"; }
    std::span<const double> frequencies() const noexcept { return freqs_; }

private:
    std::shared_ptr<const Grid> grid_;
    std::vector<double> freqs_;
    std::vector<std::complex<double>> phase_;  // e^{+i x_i ξ_j}, row per frequency
    double scale_ = 1.0 / std::sqrt(2.0 * std::numbers::pi);
};

/// Raw matrix acting on node values, (Au)_j = Σ_i M_ji u_i, into a weighted
/// real data space. The adjoint carries the 1/w_i factor required by the
/// weighted pairing on Ω.
class DenseMatrixOperator : public ForwardOperator {
public:
    DenseMatrixOperator(std::shared_ptr<const Grid> input, std::size_t rows,
                        std::vector<double> matrix, std::vector<double> y_weights, std::string id)
        : input_(std::move(input)), rows_(rows), matrix_(std::move(matrix)),
          y_weights_(std::move(y_weights)), id_(std::move(id)) {
        if (matrix_.size() != rows_ * input_->size())
            throw std::invalid_argument("DenseMatrixOperator: matrix size mismatch");
        if (y_weights_.size() != rows_)
            throw std::invalid_argument("DenseMatrixOperator: weight size mismatch");
        nonnegative_ = std::all_of(matrix_.begin(), matrix_.end(), [](double m) { return m >= 0.0; });
    }

    /// Identity (optionally scaled) on a grid, with matching data weights:
    /// apply and adjoint are both the identity map.
    static DenseMatrixOperator identity(std::shared_ptr<const Grid> grid, double scale = 1.0) {
        const std::size_t n = grid->size();
        std::vector<double> m(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i) m[i * n + i] = scale;
        std::vector<double> yw(grid->weights().begin(), grid->weights().end());
        return DenseMatrixOperator(std::move(grid), n, std::move(m), std::move(yw), "identity");
    }

    Measurement apply(const GridFunction& u) const override {
        if (!(u.grid() == *input_))
            throw std::invalid_argument("DenseMatrixOperator: input grid mismatch");
        const std::size_t n = input_->size();
        std::vector<double> out(rows_, 0.0);
        for (std::size_t j = 0; j < rows_; ++j) {
            const double* row = matrix_.data() + j * n;
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += row[i] * u[i];
            out[j] = s;
        }
        return Measurement::weighted_real(std::move(out), y_weights_);
    }

    GridFunction adjoint(const Measurement& v) const override {
        if (v.is_complex() || v.size() != rows_)
            throw std::invalid_argument("DenseMatrixOperator: measurement space mismatch");
        const auto vv = v.real_values();
        const auto w = input_->weights();
        const std::size_t n = input_->size();
        std::vector<double> out(n, 0.0);
        for (std::size_t j = 0; j < rows_; ++j) {
            const double* row = matrix_.data() + j * n;
            const double c = y_weights_[j] * vv[j];
            for (std::size_t i = 0; i < n; ++i) out[i] += c * row[i];
        }
        for (std::size_t i = 0; i < n; ++i) out[i] /= w[i];
        return GridFunction(input_, std::move(out));
    }

    std::size_t output_dimension() const override { return rows_; }
    const std::shared_ptr<const Grid>& input_grid() const override { return input_; }
    Measurement zero_measurement() const override {
        return Measurement::weighted_real(std::vector<double>(rows_, 0.0), y_weights_);
    }
    std::string id() const override { return id_; }
    bool preserves_nonnegativity() const override { return nonnegative_; }

private:
    std::shared_ptr<const Grid> input_;
    std::size_t rows_;
    std::vector<double> matrix_;     // rows_ x n, row-major
    std::vector<double> y_weights_;
    std::string id_;
    bool nonnegative_ = false;
};

/// Contiguous row-block of a parent operator. apply slices the parent's
/// output; adjoint zero-pads into the parent's data space, so block
/// adjoints recompose exactly to the full adjoint.
class BlockOperator : public ForwardOperator {
public:
    BlockOperator(std::shared_ptr<const ForwardOperator> parent, std::size_t offset,
                  std::size_t count)
        : parent_(std::move(parent)), offset_(offset), count_(count) {
        if (offset_ + count_ > parent_->output_dimension())
            throw std::invalid_argument("BlockOperator: block out of range");
    }

    Measurement apply(const GridFunction& u) const override {
        return parent_->apply(u).slice(offset_, count_);
    }

    GridFunction adjoint(const Measurement& v) const override {
        Measurement padded = parent_->zero_measurement();
        padded.set_slice(offset_, v);
        return parent_->adjoint(padded);
    }

    std::size_t output_dimension() const override { return count_; }
    const std::shared_ptr<const Grid>& input_grid() const override { return parent_->input_grid(); }
    Measurement zero_measurement() const override {
        return parent_->zero_measurement().slice(offset_, count_);
    }
    std::string id() const override {
        return parent_->id() + "[" + std::to_string(offset_) + ":" +
               std::to_string(offset_ + count_) + "]";
    }
    bool preserves_nonnegativity() const override { return parent_->preserves_nonnegativity(); }

    std::size_t offset() const noexcept { return offset_; }
    std::size_t count() const noexcept { return count_; }

private:
    std::shared_ptr<const ForwardOperator> parent_;
    std::size_t offset_;
    std::size_t count_;
};

struct OperatorBlock {
    std::shared_ptr<const BlockOperator> op;
    std::size_t offset = 0;
    std::size_t count = 0;

    Measurement slice_data(const Measurement& y) const { return y.slice(offset, count); }
};

/// Split an operator into M contiguous row-blocks with matching data
/// slices. Sizes differ by at most one when M does not divide the output
/// dimension.
inline std::vector<OperatorBlock> partition_blocks(std::shared_ptr<const ForwardOperator> op,
                                                   std::size_t M) {
    const std::size_t dim = op->output_dimension();
    if (M < 1 || M > dim)
        throw std::invalid_argument("partition_blocks: M must be in [1, output dimension]");
    std::vector<OperatorBlock> blocks;
    blocks.reserve(M);
    const std::size_t base = dim / M, rem = dim % M;
    std::size_t offset = 0;
    for (std::size_t b = 0; b < M; ++b) {
        const std::size_t count = base + (b < rem ? 1 : 0);
        blocks.push_back({std::make_shared<BlockOperator>(op, offset, count), offset, count});
        offset += count;
    }
    return blocks;
}

/// Running sum ỹ_k = Σ_{l<k} A u_l for the Fourier sampler, with the
/// closed-form reconstruction of the k-th entropic iterate
/// u_k = c̄ u_0 exp(λ A*(k y − ỹ_k)). For m=1 the product of the
/// per-step normalizers is recovered from the unit-mass constraint.
class FourierAccumulator {
public:
    explicit FourierAccumulator(std::shared_ptr<const FourierSamplingOperator> op)
        : op_(std::move(op)),
          ytilde_(op_->output_dimension(), std::complex<double>(0.0)) {}

    void accumulate(const Density& u) {
        const Measurement au = op_->apply(u);
        const auto av = au.complex_values();
        for (std::size_t j = 0; j < ytilde_.size(); ++j) ytilde_[j] += av[j];
        ++steps_;
    }

    std::size_t steps() const noexcept { return steps_; }
    std::span<const std::complex<double>> ytilde() const noexcept { return ytilde_; }

    Density reconstruct(const Density& u0, const Measurement& y, double lambda, int mode) const {
        const auto yv = y.complex_values();
        std::vector<std::complex<double>> combined(ytilde_.size());
        const double k = static_cast<double>(steps_);
        for (std::size_t j = 0; j < ytilde_.size(); ++j)
            combined[j] = k * yv[j] - ytilde_[j];
        const GridFunction g = op_->adjoint(Measurement::complex_vector(std::move(combined)));
        std::vector<double> values(u0.size());
        for (std::size_t i = 0; i < u0.size(); ++i)
            values[i] = u0[i] * std::exp(lambda * g[i]);
        Density u(u0.grid_ptr(), std::move(values));
        if (mode == 1) {
            const double mass = integrate(u);
            std::vector<double> scaled(u.values().begin(), u.values().end());
            for (double& v : scaled) v /= mass;
            return Density(u0.grid_ptr(), std::move(scaled));
        }
        return u;
    }

private:
    std::shared_ptr<const FourierSamplingOperator> op_;
    std::vector<std::complex<double>> ytilde_;
    std::size_t steps_ = 0;
};

} // namespace entroland
