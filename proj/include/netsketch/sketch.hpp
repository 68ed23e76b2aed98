#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "netsketch/tensor.hpp"

namespace netsketch {

/// Normal-equation ingredients for one basis: the symmetric Gram matrix
/// of pairwise binary inner products (diagonal t, off-diagonal entries
/// integers with the parity of t) and each basis tensor's inner product
/// with the target.
struct RefinementState {
    std::size_t size = 0;
    std::vector<double> gram;               // row-major size x size
    std::vector<double> basis_projections;  // size entries

    [[nodiscard]] double gram_at(std::size_t i, std::size_t j) const {
        return gram[i * size + j];
    }
};

/// Per-step error bounds next to the measured residuals of one sketch.
///
/// per_step_bound[j] is the guaranteed ceiling on the squared residual
/// after j+1 terms, accumulated from step factors; per_step_actual[j] is
/// the measured value. For refined sketches, projection_norms_sq[j] is the
/// squared norm of the projection of basis[j] onto the span of the earlier
/// basis tensors (zero for the first step).
struct BoundReport {
    std::vector<double> per_step_bound;
    std::vector<double> per_step_actual;
    std::vector<double> projection_norms_sq;  // refined sketches only
};

/// Storage and multiply counts for one layer, full precision vs sketched.
struct AccountingReport {
    std::uint64_t full_precision_bits = 0;  // 32 * t * n
    std::uint64_t sketched_bits = 0;        // (32m + tm) * n
    double compression_factor = 0.0;        // 32t / (32m + tm)
    std::uint64_t full_precision_fmuls = 0; // s * t * n
    std::uint64_t sketched_fmuls = 0;       // s * m * n
    double fmul_factor = 0.0;               // t / m
};

/// Greedy expansion: each step takes the sign of the residual as the next
/// basis tensor, scales it by <B, residual> / t, and subtracts.
///
/// Stops early (with a recorded reason) if the residual reaches exactly
/// zero, so the result may carry fewer than max_terms terms.
[[nodiscard]] Sketch direct_sketch(const RealTensor& w, std::size_t max_terms);

/// Greedy expansion with joint scale refitting: each step picks the sign
/// of the current residual, then re-solves all scales by least squares
/// over the accumulated basis before recomputing the residual.
[[nodiscard]] Sketch refined_sketch(const RealTensor& w, std::size_t max_terms);

/// Gram matrix and target projections for a basis against w.
[[nodiscard]] RefinementState refinement_state(std::span<const BinaryTensor> basis,
                                               const RealTensor& w);

/// Least-squares-optimal scales for a fixed basis. The returned scales
/// make the residual orthogonal to every basis tensor. When the basis is
/// linearly dependent the minimum-norm solution is returned.
[[nodiscard]] std::vector<double> refine_scales(std::span<const BinaryTensor> basis,
                                                const RealTensor& w);

/// Squared norm of the orthogonal projection of `next` onto the span of
/// the prefix tensors. Always in [0, t]; equals 0 iff `next` is orthogonal
/// to every prefix tensor and t iff `next` lies in their span.
[[nodiscard]] double projection_norm_sq(std::span<const BinaryTensor> prefix,
                                        const BinaryTensor& next);

/// norm_sq * (1 - 1/t)^steps, the ceiling on the squared residual of the
/// direct method after `steps` terms.
[[nodiscard]] double direct_error_bound(double norm_sq, std::size_t t,
                                        std::size_t steps);

/// norm_sq * prod_j (1 - 1/(t - p_j)), the refined-method ceiling, where
/// p_j are per-step projection norms. Throws std::domain_error when any
/// p_j >= t (the next tensor lies in the span; expansion must stop).
[[nodiscard]] double refined_error_bound(double norm_sq, std::size_t t,
                                         std::span<const double> projections);

/// Bounds and measured residuals for every step of `s`, which must have
/// been produced from `w`.
[[nodiscard]] BoundReport bound_report(const RealTensor& w, const Sketch& s);

/// Captured-energy curve 1 - |residual_j|^2 / |w|^2 for j = 0..terms.
/// Nondecreasing, starts at 0. A zero tensor yields an all-ones curve.
[[nodiscard]] std::vector<double> energy_curve(const RealTensor& w, const Sketch& s);

/// Storage bits and FMUL counts for n filters of the given shape sketched
/// with m terms, evaluated at `spatial` output positions.
[[nodiscard]] AccountingReport storage_and_flops(Shape shape, std::uint64_t n,
                                                 std::uint64_t m, std::uint64_t spatial);

}  // namespace netsketch
