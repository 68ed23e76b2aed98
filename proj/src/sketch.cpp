#include "netsketch/sketch.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace netsketch {

namespace {

// Gram matrix of the basis (pairwise integer inner products) and the
// projections of w onto each basis tensor. Both are exact up to the
// rounding of the real-valued dot products.
Eigen::MatrixXd gram_matrix(std::span<const BinaryTensor> basis) {
    const Eigen::Index n = Eigen::Index(basis.size());
    Eigen::MatrixXd gram(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        gram(i, i) = double(basis[i].size());
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double r = double(binary_inner_product(basis[i], basis[j]));
            gram(i, j) = r;
            gram(j, i) = r;
        }
    }
    return gram;
}

// Minimum-norm solution of gram * x = rhs via a rank-revealing
// decomposition; tolerates singular Gram matrices (repeated or linearly
// dependent basis tensors).
Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& gram,
                                       const Eigen::VectorXd& rhs) {
    return gram.completeOrthogonalDecomposition().solve(rhs);
}

RealTensor residual_of(const RealTensor& w, std::span<const BinaryTensor> basis,
                       std::span<const double> scales) {
    RealTensor res = w;
    auto vals = res.values();
    for (std::size_t j = 0; j < basis.size(); ++j) {
        const double a = scales[j];
        const BinaryTensor& b = basis[j];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            vals[i] -= b.bit(i) ? a : -a;
        }
    }
    return res;
}

}  // namespace

Sketch direct_sketch(const RealTensor& w, std::size_t max_terms) {
    if (max_terms < 1) throw std::invalid_argument("max_terms must be >= 1");

    Sketch s;
    s.shape = w.shape();
    s.method = SketchMethod::direct;

    const double t = double(w.size());
    RealTensor residual = w;
    s.residual_norms_sq.push_back(frobenius_norm_sq(residual));

    for (std::size_t j = 0; j < max_terms; ++j) {
        if (s.residual_norms_sq.back() == 0.0) {
            s.stop = StopReason::zero_residual;
            return s;
        }
        BinaryTensor b = sign_tensor(residual);
        const double a = inner_product(residual, b) / t;
        auto vals = residual.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            vals[i] -= b.bit(i) ? a : -a;
        }
        s.basis.push_back(std::move(b));
        s.scales.push_back(a);
        s.residual_norms_sq.push_back(frobenius_norm_sq(residual));
    }
    return s;
}

Sketch refined_sketch(const RealTensor& w, std::size_t max_terms) {
    if (max_terms < 1) throw std::invalid_argument("max_terms must be >= 1");

    Sketch s;
    s.shape = w.shape();
    s.method = SketchMethod::refined;

    const double t = double(w.size());
    RealTensor residual = w;
    s.residual_norms_sq.push_back(frobenius_norm_sq(residual));

    for (std::size_t j = 0; j < max_terms; ++j) {
        if (s.residual_norms_sq.back() == 0.0) {
            s.stop = StopReason::zero_residual;
            return s;
        }
        BinaryTensor b = sign_tensor(residual);
        if (j > 0) {
            // A pick inside the span of the current basis cannot reduce
            // the least-squares residual; stop before degenerating.
            const double proj = projection_norm_sq(s.basis, b);
            if (proj >= t * (1.0 - 1e-12)) {
                s.stop = StopReason::dependent_basis;
                return s;
            }
        }
        s.basis.push_back(std::move(b));
        s.scales = refine_scales(s.basis, w);
        residual = residual_of(w, s.basis, s.scales);
        s.residual_norms_sq.push_back(frobenius_norm_sq(residual));
    }
    return s;
}

RefinementState refinement_state(std::span<const BinaryTensor> basis,
                                 const RealTensor& w) {
    if (basis.empty()) throw std::invalid_argument("basis must be nonempty");
    for (const BinaryTensor& b : basis) {
        if (!(b.shape() == w.shape())) {
            throw std::invalid_argument("basis shape does not match tensor");
        }
    }
    RefinementState state;
    state.size = basis.size();
    const Eigen::MatrixXd gram = gram_matrix(basis);
    // column-major copy; the matrix is symmetric so row-major reads agree
    state.gram.assign(gram.data(), gram.data() + gram.size());
    state.basis_projections.reserve(state.size);
    for (const BinaryTensor& b : basis) {
        state.basis_projections.push_back(inner_product(w, b));
    }
    return state;
}

std::vector<double> refine_scales(std::span<const BinaryTensor> basis,
                                  const RealTensor& w) {
    const RefinementState state = refinement_state(basis, w);
    const Eigen::Index n = Eigen::Index(state.size);
    const Eigen::Map<const Eigen::MatrixXd> gram(state.gram.data(), n, n);
    const Eigen::Map<const Eigen::VectorXd> rhs(state.basis_projections.data(), n);
    const Eigen::VectorXd a = solve_normal_equations(gram, rhs);
    return std::vector<double>(a.data(), a.data() + a.size());
}

double projection_norm_sq(std::span<const BinaryTensor> prefix,
                          const BinaryTensor& next) {
    if (prefix.empty()) throw std::invalid_argument("prefix must be nonempty");
    const Eigen::Index n = Eigen::Index(prefix.size());
    Eigen::VectorXd psi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(prefix[i].shape() == next.shape())) {
            throw std::invalid_argument("prefix shape does not match tensor");
        }
        psi(i) = double(binary_inner_product(prefix[i], next));
    }
    const Eigen::VectorXd y = solve_normal_equations(gram_matrix(prefix), psi);
    const double value = psi.dot(y);
    const double t = double(next.size());
    return std::clamp(value, 0.0, t);
}

double direct_error_bound(double norm_sq, std::size_t t, std::size_t steps) {
    if (norm_sq < 0.0 || t < 1) throw std::invalid_argument("bad bound arguments");
    return norm_sq * std::pow(1.0 - 1.0 / double(t), double(steps));
}

double refined_error_bound(double norm_sq, std::size_t t,
                           std::span<const double> projections) {
    if (norm_sq < 0.0 || t < 1) throw std::invalid_argument("bad bound arguments");
    double bound = norm_sq;
    for (double p : projections) {
        if (!(p < double(t))) {
            throw std::domain_error(
                "projection norm >= t: next tensor lies in the basis span");
        }
        bound *= 1.0 - 1.0 / (double(t) - p);
    }
    return bound;
}

BoundReport bound_report(const RealTensor& w, const Sketch& s) {
    BoundReport report;
    const std::size_t t = w.size();
    const double norm_sq = s.residual_norms_sq.front();

    if (s.method == SketchMethod::direct) {
        for (std::size_t j = 0; j < s.terms(); ++j) {
            report.per_step_bound.push_back(direct_error_bound(norm_sq, t, j + 1));
            report.per_step_actual.push_back(s.residual_norms_sq[j + 1]);
        }
        return report;
    }

    double bound = norm_sq;
    for (std::size_t j = 0; j < s.terms(); ++j) {
        const double proj =
            j == 0 ? 0.0
                   : projection_norm_sq(std::span(s.basis).first(j), s.basis[j]);
        if (!(proj < double(t))) {
            throw std::domain_error(
                "projection norm >= t: basis step lies in the earlier span");
        }
        report.projection_norms_sq.push_back(proj);
        bound *= 1.0 - 1.0 / (double(t) - proj);
        report.per_step_bound.push_back(bound);
        report.per_step_actual.push_back(s.residual_norms_sq[j + 1]);
    }
    return report;
}

std::vector<double> energy_curve(const RealTensor& w, const Sketch& s) {
    const double norm_sq = frobenius_norm_sq(w);
    const double recorded = s.residual_norms_sq.front();
    if (std::abs(recorded - norm_sq) > 1e-12 * std::max(1.0, norm_sq)) {
        throw std::invalid_argument("sketch was not produced from this tensor");
    }
    if (norm_sq == 0.0) {
        return std::vector<double>(s.terms() + 1, 1.0);
    }
    std::vector<double> curve;
    curve.reserve(s.terms() + 1);
    for (double r : s.residual_norms_sq) {
        curve.push_back(1.0 - r / norm_sq);
    }
    return curve;
}

AccountingReport storage_and_flops(Shape shape, std::uint64_t n, std::uint64_t m,
                                   std::uint64_t spatial) {
    if (n < 1 || m < 1 || spatial < 1 || shape.volume() < 1) {
        throw std::invalid_argument("accounting inputs must be positive");
    }
    const std::uint64_t t = shape.volume();
    AccountingReport r;
    r.full_precision_bits = 32 * t * n;
    r.sketched_bits = (32 * m + t * m) * n;
    r.compression_factor = double(32 * t) / double(32 * m + t * m);
    r.full_precision_fmuls = spatial * t * n;
    r.sketched_fmuls = spatial * m * n;
    r.fmul_factor = double(t) / double(m);
    return r;
}

}  // namespace netsketch
