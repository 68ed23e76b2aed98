#include "netsketch/assoc_conv.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <queue>
#include <stdexcept>

#include "netsketch/rng.hpp"

namespace netsketch {

namespace {

void require_same_shape(const Shape& a, const Shape& b) {
    if (!(a == b)) {
        throw std::invalid_argument("tensor shape mismatch");
    }
}

// Orient an undirected edge list away from root 0 and precompute the
// per-edge ternary difference and derivation rule.
DependencyTree make_tree(std::span<const BinaryTensor> tensors,
                         const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges) {
    const std::uint32_t n = std::uint32_t(tensors.size());
    std::vector<std::vector<std::uint32_t>> adjacency(n);
    for (auto [u, v] : edges) {
        adjacency[u].push_back(v);
        adjacency[v].push_back(u);
    }

    DependencyTree tree;
    tree.root = 0;
    tree.nodes.resize(n);
    tree.children.resize(n);

    std::vector<bool> seen(n, false);
    std::vector<std::uint32_t> order;
    order.push_back(0);
    seen[0] = true;
    tree.nodes[0].key = 0;
    for (std::size_t head = 0; head < order.size(); ++head) {
        const std::uint32_t u = order[head];
        for (std::uint32_t v : adjacency[u]) {
            if (seen[v]) continue;
            seen[v] = true;
            DependencyTree::Node& node = tree.nodes[v];
            node.key = v;
            node.parent = u;
            node.edge_r = binary_inner_product(tensors[u], tensors[v]);
            if (node.edge_r >= 0) {
                node.rule = DeriveRule::from_diff;
                node.edge = ternary_combine(tensors[u], tensors[v]);
            } else {
                node.rule = DeriveRule::from_agree;
                node.edge = ternary_combine(tensors[u].negated(), tensors[v]);
            }
            tree.children[u].push_back(v);
            order.push_back(v);
        }
    }
    if (order.size() != n) {
        throw std::invalid_argument("edge list does not span all tensors");
    }
    for (auto& kids : tree.children) {
        std::sort(kids.begin(), kids.end());
    }
    return tree;
}

// Depth-first visit order from the root, children ascending. Bails out
// early on cyclic children lists; callers compare sizes afterwards.
std::vector<std::uint32_t> traversal_order(const DependencyTree& tree) {
    std::vector<std::uint32_t> order;
    order.reserve(tree.nodes.size());
    std::vector<std::uint32_t> stack{tree.root};
    while (!stack.empty() && order.size() < tree.nodes.size()) {
        const std::uint32_t u = stack.back();
        stack.pop_back();
        order.push_back(u);
        const auto& kids = tree.children[u];
        for (auto it = kids.rbegin(); it != kids.rend(); ++it) {
            stack.push_back(*it);
        }
    }
    if (!stack.empty()) order.clear();  // overran: not a tree
    return order;
}

double direct_binary_conv(const RealTensor& x, const BinaryTensor& b,
                          OpCounter& counter) {
    require_same_shape(x.shape(), b.shape());
    counter.fadds += x.size();
    double sum = 0.0;
    const auto vals = x.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        sum += b.bit(i) ? vals[i] : -vals[i];
    }
    return sum;
}

}  // namespace

std::uint64_t DependencyTree::total_weight() const {
    std::uint64_t weight = 0;
    for (const Node& node : nodes) {
        if (!node.parent) continue;
        const std::int64_t t = std::int64_t(node.edge.shape.volume());
        weight += std::uint64_t((t - std::abs(node.edge_r)) / 2);
    }
    return weight;
}

OpCounter& OpCounter::operator+=(const OpCounter& other) {
    fadds += other.fadds;
    fmuls += other.fmuls;
    ternary_selects += other.ternary_selects;
    doublings += other.doublings;
    return *this;
}

TernaryTensor ternary_combine(const BinaryTensor& b0, const BinaryTensor& b1) {
    require_same_shape(b0.shape(), b1.shape());
    TernaryTensor out;
    out.shape = b0.shape();
    const auto w0 = b0.words();
    const auto w1 = b1.words();
    for (std::size_t k = 0; k < w0.size(); ++k) {
        std::uint64_t diff = w0[k] ^ w1[k];
        while (diff) {
            const int bit = std::countr_zero(diff);
            diff &= diff - 1;
            const std::uint32_t index = std::uint32_t(k * 64 + bit);
            const std::int8_t sign = (w1[k] >> bit) & 1 ? +1 : -1;
            out.entries.push_back({index, sign});
        }
    }
    return out;
}

double ternary_conv(const RealTensor& x, const TernaryTensor& t, OpCounter& counter) {
    require_same_shape(x.shape(), t.shape);
    counter.ternary_selects += x.size();
    counter.fadds += t.nnz();
    double sum = 0.0;
    for (const TernaryTensor::Entry& e : t.entries) {
        sum += e.sign > 0 ? x[e.index] : -x[e.index];
    }
    return sum;
}

double associative_step(double s, const RealTensor& x,
                        const DependencyTree::Node& node, OpCounter& counter) {
    if (!node.parent) {
        throw std::invalid_argument("root node has no parent to derive from");
    }
    const double partial = ternary_conv(x, node.edge, counter);
    counter.doublings += 1;
    counter.fadds += 1;
    return node.rule == DeriveRule::from_diff ? s + 2.0 * partial
                                              : 2.0 * partial - s;
}

std::int64_t distance(const BinaryTensor& b0, const BinaryTensor& b1) {
    const std::int64_t r = binary_inner_product(b0, b1);
    const std::int64_t t = std::int64_t(b0.size());
    return std::min((t + r) / 2, (t - r) / 2);
}

DependencyTree build_mst(std::span<const BinaryTensor> tensors) {
    if (tensors.empty()) throw std::invalid_argument("tensor list must be nonempty");
    const std::uint32_t n = std::uint32_t(tensors.size());
    for (const BinaryTensor& b : tensors) {
        require_same_shape(b.shape(), tensors[0].shape());
    }

    constexpr std::int64_t kInfinity = std::numeric_limits<std::int64_t>::max();
    std::vector<bool> in_tree(n, false);
    std::vector<std::int64_t> best_weight(n, kInfinity);
    std::vector<std::uint32_t> best_parent(n, 0);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    edges.reserve(n - 1);

    in_tree[0] = true;
    for (std::uint32_t v = 1; v < n; ++v) {
        best_weight[v] = distance(tensors[0], tensors[v]);
    }

    constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
    for (std::uint32_t added = 1; added < n; ++added) {
        std::uint32_t next = kNone;
        for (std::uint32_t v = 1; v < n; ++v) {
            if (in_tree[v]) continue;
            // Candidate order: weight, then parent index, then child
            // index; the ascending scan settles the child tie.
            if (next == kNone || best_weight[v] < best_weight[next] ||
                (best_weight[v] == best_weight[next] &&
                 best_parent[v] < best_parent[next])) {
                next = v;
            }
        }
        in_tree[next] = true;
        edges.emplace_back(best_parent[next], next);
        for (std::uint32_t v = 1; v < n; ++v) {
            if (in_tree[v]) continue;
            const std::int64_t d = distance(tensors[next], tensors[v]);
            if (d < best_weight[v] ||
                (d == best_weight[v] && next < best_parent[v])) {
                best_weight[v] = d;
                best_parent[v] = next;
            }
        }
    }
    return make_tree(tensors, edges);
}

DependencyTree build_random_tree(std::span<const BinaryTensor> tensors,
                                 std::uint64_t seed) {
    if (tensors.empty()) throw std::invalid_argument("tensor list must be nonempty");
    const std::uint32_t n = std::uint32_t(tensors.size());

    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    if (n >= 2) {
        // Sample a uniform Pruefer sequence and decode it; every labeled
        // tree corresponds to exactly one sequence.
        std::mt19937_64 gen(seed);
        std::vector<std::uint32_t> seq(n >= 3 ? n - 2 : 0);
        for (auto& x : seq) x = std::uint32_t(uniform_below(gen, n));

        std::vector<std::uint32_t> degree(n, 1);
        for (std::uint32_t x : seq) ++degree[x];

        std::priority_queue<std::uint32_t, std::vector<std::uint32_t>,
                            std::greater<>> leaves;
        for (std::uint32_t v = 0; v < n; ++v) {
            if (degree[v] == 1) leaves.push(v);
        }
        for (std::uint32_t x : seq) {
            const std::uint32_t leaf = leaves.top();
            leaves.pop();
            edges.emplace_back(leaf, x);
            if (--degree[x] == 1) leaves.push(x);
        }
        const std::uint32_t u = leaves.top();
        leaves.pop();
        const std::uint32_t v = leaves.top();
        edges.emplace_back(u, v);
    }
    return make_tree(tensors, edges);
}

std::vector<double> associative_convolve_all(const RealTensor& x,
                                             std::span<const BinaryTensor> tensors,
                                             const DependencyTree& tree,
                                             OpCounter& counter) {
    if (tree.nodes.size() != tensors.size()) {
        throw std::invalid_argument("tree does not span the tensor list");
    }
    const std::vector<std::uint32_t> order = traversal_order(tree);
    if (order.size() != tensors.size()) {
        throw std::invalid_argument("tree traversal does not reach every tensor");
    }
    std::vector<double> results(tensors.size(), 0.0);
    for (std::uint32_t key : order) {
        const DependencyTree::Node& node = tree.nodes[key];
        if (!node.parent) {
            results[key] = direct_binary_conv(x, tensors[key], counter);
        } else {
            results[key] = associative_step(results[*node.parent], x, node, counter);
        }
    }
    return results;
}

std::vector<double> direct_convolve_all(const RealTensor& x,
                                        std::span<const BinaryTensor> tensors,
                                        OpCounter& counter) {
    std::vector<double> results;
    results.reserve(tensors.size());
    for (const BinaryTensor& b : tensors) {
        results.push_back(direct_binary_conv(x, b, counter));
    }
    return results;
}

RealTensor extract_window(const FeatureMap& fm, Shape kernel, std::uint32_t row0,
                          std::uint32_t col0) {
    if (kernel.c != fm.channels || row0 + kernel.h > fm.height ||
        col0 + kernel.w > fm.width) {
        throw std::invalid_argument("window does not fit the feature map");
    }
    RealTensor x(kernel);
    std::size_t i = 0;
    for (std::uint32_t ch = 0; ch < kernel.c; ++ch) {
        for (std::uint32_t row = 0; row < kernel.h; ++row) {
            for (std::uint32_t col = 0; col < kernel.w; ++col) {
                x[i++] = fm.at(ch, row0 + row, col0 + col);
            }
        }
    }
    return x;
}

std::vector<FeatureMap> sketch_layer_convolve(const FeatureMap& fm,
                                              std::span<const Sketch> layer_sketches,
                                              TreeMode tree_mode, std::uint32_t stride,
                                              OpCounter& counter,
                                              std::uint64_t tree_seed) {
    if (layer_sketches.empty()) throw std::invalid_argument("layer has no sketches");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    const Shape kernel = layer_sketches[0].shape;
    if (kernel.c != fm.channels || kernel.h > fm.height || kernel.w > fm.width) {
        throw std::invalid_argument("kernel does not fit the feature map");
    }

    // Pool every term of every filter into one tensor list; the tree is
    // shared across the whole layer.
    std::vector<BinaryTensor> tensors;
    std::vector<std::size_t> offsets;
    for (const Sketch& s : layer_sketches) {
        if (!(s.shape == kernel)) {
            throw std::invalid_argument("sketches in a layer must share a shape");
        }
        offsets.push_back(tensors.size());
        tensors.insert(tensors.end(), s.basis.begin(), s.basis.end());
    }

    DependencyTree tree;
    if (!tensors.empty() && tree_mode != TreeMode::none) {
        tree = tree_mode == TreeMode::mst ? build_mst(tensors)
                                          : build_random_tree(tensors, tree_seed);
    }

    const std::uint32_t out_h = (fm.height - kernel.h) / stride + 1;
    const std::uint32_t out_w = (fm.width - kernel.w) / stride + 1;
    std::vector<FeatureMap> outputs(layer_sketches.size(),
                                    FeatureMap(1, out_w, out_h));

    for (std::uint32_t out_row = 0; out_row < out_h; ++out_row) {
        for (std::uint32_t out_col = 0; out_col < out_w; ++out_col) {
            const RealTensor x =
                extract_window(fm, kernel, out_row * stride, out_col * stride);
            std::vector<double> y;
            if (!tensors.empty()) {
                y = tree_mode == TreeMode::none
                        ? direct_convolve_all(x, tensors, counter)
                        : associative_convolve_all(x, tensors, tree, counter);
            }
            for (std::size_t i = 0; i < layer_sketches.size(); ++i) {
                const Sketch& s = layer_sketches[i];
                double acc = 0.0;
                for (std::size_t j = 0; j < s.terms(); ++j) {
                    acc += s.scales[j] * y[offsets[i] + j];
                }
                counter.fmuls += s.terms();
                counter.fadds += s.terms() > 0 ? s.terms() - 1 : 0;
                outputs[i].at(0, out_row, out_col) = acc;
            }
        }
    }
    return outputs;
}

}  // namespace netsketch
