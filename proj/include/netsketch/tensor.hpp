#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace netsketch {

/// Dimensions of one filter tensor: c channels, each h rows by w columns.
struct Shape {
    std::uint32_t c = 0;
    std::uint32_t w = 0;
    std::uint32_t h = 0;

    /// Number of scalar entries per filter.
    [[nodiscard]] std::size_t volume() const { return std::size_t(c) * w * h; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense real-valued 3-D tensor.
///
/// Entries are linearized channel-major: flat index of (ch, row, col) is
/// (ch * h + row) * w + col. Every module and file format uses this order.
class RealTensor {
public:
    RealTensor() = default;
    explicit RealTensor(Shape shape) : shape_(shape), data_(shape.volume(), 0.0) {}
    RealTensor(Shape shape, std::vector<double> values);

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] std::span<const double> values() const { return data_; }
    [[nodiscard]] std::span<double> values() { return data_; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    /// True when no entry is NaN or infinite.
    [[nodiscard]] bool is_finite() const;

    friend bool operator==(const RealTensor&, const RealTensor&) = default;

private:
    Shape shape_{};
    std::vector<double> data_;
};

/// Sign tensor with entries in {+1, -1}, packed 64 entries per word.
///
/// Bit = 1 encodes +1, bit = 0 encodes -1. Bits beyond volume() are kept
/// zero so whole-word equality and popcount tricks stay valid.
class BinaryTensor {
public:
    BinaryTensor() = default;
    explicit BinaryTensor(Shape shape);

    static BinaryTensor from_signs(Shape shape, std::span<const int> signs);

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return shape_.volume(); }
    [[nodiscard]] std::span<const std::uint64_t> words() const { return words_; }

    /// Sign at flat index i, +1 or -1.
    [[nodiscard]] int sign_at(std::size_t i) const {
        return (words_[i >> 6] >> (i & 63)) & 1 ? +1 : -1;
    }
    [[nodiscard]] bool bit(std::size_t i) const {
        return (words_[i >> 6] >> (i & 63)) & 1;
    }
    void set_sign(std::size_t i, int sign);

    /// Elementwise negation (+1 <-> -1); padding stays canonical.
    [[nodiscard]] BinaryTensor negated() const;

    friend bool operator==(const BinaryTensor&, const BinaryTensor&) = default;

private:
    Shape shape_{};
    std::vector<std::uint64_t> words_;
};

enum class SketchMethod : std::uint8_t { direct = 0, refined = 1 };

/// Why a sketch holds fewer terms than were requested.
enum class StopReason : std::uint8_t {
    reached_limit = 0,
    zero_residual = 1,
    dependent_basis = 2,
};

/// A scaled binary expansion of one real tensor: ordered basis {B_j},
/// scale vector a, and the squared residual norm after each step.
struct Sketch {
    Shape shape;
    std::vector<BinaryTensor> basis;
    std::vector<double> scales;
    std::vector<double> residual_norms_sq;  // terms() + 1 entries, non-increasing
    SketchMethod method = SketchMethod::direct;
    StopReason stop = StopReason::reached_limit;

    [[nodiscard]] std::size_t terms() const { return basis.size(); }
};

/// Elementwise sign with sgn(0) := +1.
[[nodiscard]] BinaryTensor sign_tensor(const RealTensor& w);

/// sum_l A_l * sign(B_l). Throws std::invalid_argument on shape mismatch.
[[nodiscard]] double inner_product(const RealTensor& a, const BinaryTensor& b);

/// Integer inner product of two sign tensors: volume - 2 * Hamming distance.
/// Word-parallel XOR + popcount. Result is in [-t, t] with the parity of t.
[[nodiscard]] std::int64_t binary_inner_product(const BinaryTensor& b0,
                                                const BinaryTensor& b1);

/// Squared Frobenius norm, sum of squared entries.
[[nodiscard]] double frobenius_norm_sq(const RealTensor& w);

/// Dense tensor equal to sum_j scales[j] * basis[j].
[[nodiscard]] RealTensor reconstruct(const Sketch& s);

/// Unpack a sign tensor into a dense +/-1.0 tensor.
[[nodiscard]] RealTensor to_real(const BinaryTensor& b);

}  // namespace netsketch
