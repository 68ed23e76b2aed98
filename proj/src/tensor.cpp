#include "netsketch/tensor.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace netsketch {

namespace {

void require_same_shape(const Shape& a, const Shape& b) {
    if (!(a == b)) {
        throw std::invalid_argument("tensor shape mismatch");
    }
}

std::size_t word_count(std::size_t t) { return (t + 63) / 64; }

}  // namespace

RealTensor::RealTensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.volume()) {
        throw std::invalid_argument("value count does not match shape volume");
    }
}

bool RealTensor::is_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

BinaryTensor::BinaryTensor(Shape shape)
    : shape_(shape), words_(word_count(shape.volume()), 0) {}

BinaryTensor BinaryTensor::from_signs(Shape shape, std::span<const int> signs) {
    if (signs.size() != shape.volume()) {
        throw std::invalid_argument("sign count does not match shape volume");
    }
    BinaryTensor b(shape);
    for (std::size_t i = 0; i < signs.size(); ++i) {
        b.set_sign(i, signs[i]);
    }
    return b;
}

void BinaryTensor::set_sign(std::size_t i, int sign) {
    const std::uint64_t mask = std::uint64_t(1) << (i & 63);
    if (sign >= 0) {
        words_[i >> 6] |= mask;
    } else {
        words_[i >> 6] &= ~mask;
    }
}

BinaryTensor BinaryTensor::negated() const {
    BinaryTensor out(shape_);
    for (std::size_t k = 0; k < words_.size(); ++k) {
        out.words_[k] = ~words_[k];
    }
    const std::size_t t = shape_.volume();
    if (t & 63) {
        out.words_.back() &= (std::uint64_t(1) << (t & 63)) - 1;
    }
    return out;
}

BinaryTensor sign_tensor(const RealTensor& w) {
    BinaryTensor b(w.shape());
    const auto vals = w.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (vals[i] >= 0.0) b.set_sign(i, +1);
    }
    return b;
}

double inner_product(const RealTensor& a, const BinaryTensor& b) {
    require_same_shape(a.shape(), b.shape());
    const auto vals = a.values();
    double sum = 0.0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
        sum += b.bit(i) ? vals[i] : -vals[i];
    }
    return sum;
}

std::int64_t binary_inner_product(const BinaryTensor& b0, const BinaryTensor& b1) {
    require_same_shape(b0.shape(), b1.shape());
    const auto w0 = b0.words();
    const auto w1 = b1.words();
    std::int64_t hamming = 0;
    for (std::size_t k = 0; k < w0.size(); ++k) {
        hamming += std::popcount(w0[k] ^ w1[k]);
    }
    return std::int64_t(b0.size()) - 2 * hamming;
}

double frobenius_norm_sq(const RealTensor& w) {
    double sum = 0.0;
    for (double v : w.values()) sum += v * v;
    return sum;
}

RealTensor reconstruct(const Sketch& s) {
    RealTensor out(s.shape);
    auto vals = out.values();
    for (std::size_t j = 0; j < s.basis.size(); ++j) {
        const double a = s.scales[j];
        const BinaryTensor& b = s.basis[j];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            vals[i] += b.bit(i) ? a : -a;
        }
    }
    return out;
}

RealTensor to_real(const BinaryTensor& b) {
    RealTensor out(b.shape());
    auto vals = out.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        vals[i] = b.bit(i) ? 1.0 : -1.0;
    }
    return out;
}

}  // namespace netsketch
