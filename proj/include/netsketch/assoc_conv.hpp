#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "netsketch/tensor.hpp"

namespace netsketch {

/// Sparse ternary tensor: only the +/-1 entries are listed, by strictly
/// increasing flat index. Produced by combining two sign tensors; the
/// listed positions are the ones a derived convolution has to touch.
struct TernaryTensor {
    struct Entry {
        std::uint32_t index;
        std::int8_t sign;  // +1 or -1
    };

    Shape shape;
    std::vector<Entry> entries;

    [[nodiscard]] std::size_t nnz() const { return entries.size(); }
};

/// How a node's convolution is derived from its parent's result s.
///   from_diff:  y = s + 2 * (conv over disagreement positions)
///   from_agree: y = 2 * (conv over agreement positions) - s
/// from_diff is chosen when the parent/child inner product r >= 0, which
/// makes the touched-position count (t - |r|) / 2 in both cases.
enum class DeriveRule : std::uint8_t { from_diff = 0, from_agree = 1 };

/// Rooted spanning tree over a set of sign tensors with per-edge
/// precomputed ternary differences. Node k describes how tensor k is
/// derived from its parent.
struct DependencyTree {
    struct Node {
        std::uint32_t key = 0;
        std::optional<std::uint32_t> parent;
        TernaryTensor edge;          // empty for the root
        DeriveRule rule = DeriveRule::from_diff;
        std::int64_t edge_r = 0;     // inner product with the parent
    };

    std::uint32_t root = 0;
    std::vector<Node> nodes;                          // indexed by key
    std::vector<std::vector<std::uint32_t>> children; // ascending key order

    /// Sum of edge distances (t - |r|) / 2 over all edges.
    [[nodiscard]] std::uint64_t total_weight() const;
};

/// Exact operation tallies for one execution. Counts follow a fixed
/// convention so different schedules stay comparable: a direct binary
/// convolution costs t FADDs, a derived one costs one FADD per listed
/// ternary entry plus one for folding in the parent's result, every
/// ternary evaluation scans t positions, and each x2 is a doubling.
struct OpCounter {
    std::uint64_t fadds = 0;
    std::uint64_t fmuls = 0;
    std::uint64_t ternary_selects = 0;
    std::uint64_t doublings = 0;

    OpCounter& operator+=(const OpCounter& other);
};

/// Dense real volume the kernels slide over: c channels of height x width.
/// Same channel-major linearization as RealTensor.
struct FeatureMap {
    std::uint32_t channels = 0;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(std::uint32_t c, std::uint32_t w, std::uint32_t h)
        : channels(c), width(w), height(h),
          data(std::size_t(c) * w * h, 0.0) {}

    [[nodiscard]] double at(std::uint32_t ch, std::uint32_t row,
                            std::uint32_t col) const {
        return data[(std::size_t(ch) * height + row) * width + col];
    }
    [[nodiscard]] double& at(std::uint32_t ch, std::uint32_t row,
                             std::uint32_t col) {
        return data[(std::size_t(ch) * height + row) * width + col];
    }
};

enum class TreeMode : std::uint8_t { mst = 0, random = 1, none = 2 };

/// Elementwise combine, (b1 - b0) / 2 per entry: -1 where (b0,b1) = (+1,-1),
/// +1 where (-1,+1), absent where equal. nnz = (t - r) / 2.
[[nodiscard]] TernaryTensor ternary_combine(const BinaryTensor& b0,
                                            const BinaryTensor& b1);

/// Sum of sign * x[index] over the listed entries. Adds t ternary selects
/// and nnz FADDs to the counter.
[[nodiscard]] double ternary_conv(const RealTensor& x, const TernaryTensor& t,
                                  OpCounter& counter);

/// Derive x * B_node from the parent's result s using the node's
/// precomputed edge. Adds (t - |r|) / 2 + 1 FADDs and 1 doubling.
[[nodiscard]] double associative_step(double s, const RealTensor& x,
                                      const DependencyTree::Node& node,
                                      OpCounter& counter);

/// min((t + r) / 2, (t - r) / 2) = min(Hamming, t - Hamming). A
/// pseudometric: antipodal tensors are at distance zero.
[[nodiscard]] std::int64_t distance(const BinaryTensor& b0, const BinaryTensor& b1);

/// Minimum spanning tree of the complete graph under distance(), rooted at
/// index 0, built by Prim's algorithm. Ties break toward the lowest
/// (parent, child) index pair, so the tree is reproducible.
[[nodiscard]] DependencyTree build_mst(std::span<const BinaryTensor> tensors);

/// Uniformly random spanning tree (over all labeled trees), rooted at
/// index 0, deterministic per seed.
[[nodiscard]] DependencyTree build_random_tree(std::span<const BinaryTensor> tensors,
                                               std::uint64_t seed);

/// All convolutions x * B_k, the root directly and every other node
/// derived from its parent's result in depth-first order (children by
/// ascending index). Output is indexed by tensor index.
[[nodiscard]] std::vector<double> associative_convolve_all(
    const RealTensor& x, std::span<const BinaryTensor> tensors,
    const DependencyTree& tree, OpCounter& counter);

/// Every convolution computed independently by dense signed accumulation;
/// t FADDs per tensor and no FMULs.
[[nodiscard]] std::vector<double> direct_convolve_all(
    const RealTensor& x, std::span<const BinaryTensor> tensors, OpCounter& counter);

/// Copy the kernel-shaped window whose top-left corner is (row0, col0).
[[nodiscard]] RealTensor extract_window(const FeatureMap& fm, Shape kernel,
                                        std::uint32_t row0, std::uint32_t col0);

/// Valid convolution of a whole sketched layer over a feature map.
///
/// At every output position the window is convolved with all binary
/// tensors of the layer (through one shared dependency tree unless
/// tree_mode is none), then each filter's output is composed as
/// sum_j scales[j] * y_j, costing m FMULs and m-1 FADDs per value.
/// Returns one single-channel map per filter.
[[nodiscard]] std::vector<FeatureMap> sketch_layer_convolve(
    const FeatureMap& fm, std::span<const Sketch> layer_sketches,
    TreeMode tree_mode, std::uint32_t stride, OpCounter& counter,
    std::uint64_t tree_seed = 0);

}  // namespace netsketch
