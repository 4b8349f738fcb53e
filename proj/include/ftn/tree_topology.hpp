#pragma once

#include "ftn/error.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace ftn {

/// Internal node of a balanced binary tree over the leaves [first, last).
///
/// Children of level-1 nodes are leaves (`left`/`right` are leaf indices);
/// otherwise they are indices of internal nodes.
struct TreeNode {
    std::size_t first = 0;
    std::size_t last = 0;
    std::size_t left = 0;
    std::size_t right = 0;
    bool leaf_children = false;
    long parent = -1;
    std::size_t level = 0;
    std::size_t rank = 0;

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Balanced binary tree with bond dimensions.
///
/// Internal nodes are numbered bottom-up, level by level, left to right, so
/// every child precedes its parent and the root is the last node. The output
/// mode of size n_0 sits at the root.
class TreeTopology {
public:
    TreeTopology() = default;

    /// Builds the tree shape without checking rank bounds. `bond_dims` holds
    /// one rank per internal non-root node in node order.
    static TreeTopology skeleton(std::vector<std::size_t> leaf_dims, std::size_t output_dim,
                                 const std::vector<std::size_t>& bond_dims) {
        const std::size_t d = leaf_dims.size();
        if (d < 2 || (d & (d - 1)) != 0)
            throw TopologyError("leaf count must be a power of two >= 2, got " + std::to_string(d));
        for (auto n : leaf_dims)
            if (n == 0) throw TopologyError("leaf dimension must be positive");
        if (output_dim == 0) throw TopologyError("output dimension must be positive");
        if (bond_dims.size() != d - 2)
            throw TopologyError("expected " + std::to_string(d - 2) + " bond dimensions, got " +
                                std::to_string(bond_dims.size()));

        for (auto v : bond_dims)
            if (v == 0) throw TopologyError("bond dimension must be positive");

        TreeTopology t;
        t.leaf_dims_ = std::move(leaf_dims);
        t.output_dim_ = output_dim;
        std::size_t width = 2;
        std::size_t level = 1;
        std::size_t level_begin = 0;
        while (width <= d) {
            const std::size_t count = d / width;
            for (std::size_t i = 0; i < count; ++i) {
                TreeNode node;
                node.first = i * width;
                node.last = (i + 1) * width;
                node.level = level;
                if (level == 1) {
                    node.leaf_children = true;
                    node.left = node.first;
                    node.right = node.first + 1;
                } else {
                    node.left = level_begin + 2 * i;
                    node.right = level_begin + 2 * i + 1;
                }
                t.nodes_.push_back(node);
            }
            if (level > 1) level_begin += 2 * count;
            width *= 2;
            ++level;
        }
        for (std::size_t k = 0; k < t.nodes_.size(); ++k) {
            auto& node = t.nodes_[k];
            if (!node.leaf_children) {
                t.nodes_[node.left].parent = static_cast<long>(k);
                t.nodes_[node.right].parent = static_cast<long>(k);
            }
            node.rank = (k + 1 == t.nodes_.size()) ? output_dim : bond_dims[k];
        }
        return t;
    }

    std::size_t leaf_count() const noexcept { return leaf_dims_.size(); }
    const std::vector<std::size_t>& leaf_dims() const noexcept { return leaf_dims_; }
    std::size_t output_dim() const noexcept { return output_dim_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t root() const noexcept { return nodes_.size() - 1; }
    bool is_root(std::size_t k) const noexcept { return k + 1 == nodes_.size(); }
    const TreeNode& node(std::size_t k) const { return nodes_.at(k); }
    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }

    std::size_t left_rank(std::size_t k) const {
        const auto& n = nodes_.at(k);
        return n.leaf_children ? leaf_dims_[n.left] : nodes_[n.left].rank;
    }
    std::size_t right_rank(std::size_t k) const {
        const auto& n = nodes_.at(k);
        return n.leaf_children ? leaf_dims_[n.right] : nodes_[n.right].rank;
    }
    std::size_t rank(std::size_t k) const { return nodes_.at(k).rank; }

    /// Shape r_L x r_R x r_t of the core at node k.
    std::vector<std::size_t> core_shape(std::size_t k) const {
        return {left_rank(k), right_rank(k), rank(k)};
    }

    /// Bond dimensions of the internal non-root nodes, in node order.
    std::vector<std::size_t> bond_dims() const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k + 1 < nodes_.size(); ++k) out.push_back(nodes_[k].rank);
        return out;
    }

    /// Product of the leaf dimensions below node k, saturating at SIZE_MAX.
    std::size_t leaf_product(std::size_t k) const {
        const auto& n = nodes_.at(k);
        std::size_t p = 1;
        for (std::size_t v = n.first; v < n.last; ++v) {
            if (p > std::numeric_limits<std::size_t>::max() / leaf_dims_[v]) return std::numeric_limits<std::size_t>::max();
            p *= leaf_dims_[v];
        }
        return p;
    }

    /// One-based label such as "{1,2}" or "{1,...,8}".
    std::string label(std::size_t k) const {
        const auto& n = nodes_.at(k);
        if (n.last - n.first == 2)
            return "{" + std::to_string(n.first + 1) + "," + std::to_string(n.last) + "}";
        return "{" + std::to_string(n.first + 1) + ",...," + std::to_string(n.last) + "}";
    }

    /// Throws TopologyError unless r_t <= r_L r_R for every non-root node.
    void validate() const {
        for (std::size_t k = 0; k + 1 < nodes_.size(); ++k) {
            const std::size_t bound = left_rank(k) * right_rank(k);
            if (nodes_[k].rank > bound)
                throw TopologyError("bond dimension " + std::to_string(nodes_[k].rank) + " at node " +
                                    label(k) + " exceeds child rank product " + std::to_string(bound));
        }
    }

    friend bool operator==(const TreeTopology&, const TreeTopology&) = default;

private:
    std::vector<std::size_t> leaf_dims_;
    std::size_t output_dim_ = 0;
    std::vector<TreeNode> nodes_;
};

inline TreeTopology build_balanced(std::vector<std::size_t> leaf_dims, std::size_t output_dim,
                                   const std::vector<std::size_t>& bond_dims) {
    auto t = TreeTopology::skeleton(std::move(leaf_dims), output_dim, bond_dims);
    t.validate();
    return t;
}

/// Reduces every non-root rank to min(r_t, r_L r_R, leaf product) bottom-up.
inline TreeTopology clamp_bond_dims(const TreeTopology& topology) {
    auto bonds = topology.bond_dims();
    for (std::size_t k = 0; k < bonds.size(); ++k) {
        const auto& n = topology.node(k);
        const std::size_t rl = n.leaf_children ? topology.leaf_dims()[n.left] : bonds[n.left];
        const std::size_t rr = n.leaf_children ? topology.leaf_dims()[n.right] : bonds[n.right];
        bonds[k] = std::min({bonds[k], rl * rr, topology.leaf_product(k)});
    }
    return build_balanced(topology.leaf_dims(), topology.output_dim(), bonds);
}

/// Same requested rank at every internal non-root node, clamped to feasibility.
inline TreeTopology uniform_topology(std::size_t d, std::size_t leaf_dim, std::size_t output_dim,
                                     std::size_t max_rank) {
    auto t = TreeTopology::skeleton(std::vector<std::size_t>(d, leaf_dim), output_dim,
                                    std::vector<std::size_t>(d >= 2 ? d - 2 : 0, max_rank));
    return clamp_bond_dims(t);
}

}  // namespace ftn
