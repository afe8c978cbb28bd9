#pragma once

#include <string>
#include <vector>

#include "enggraph/diffcore.hpp"

namespace enggraph {

/// Typed nodes and edges with attribute matrices. Edges are directed; a
/// message flows from src to dst.
struct EngineeringGraph {
    std::vector<std::string> node_type;
    std::vector<Index> src, dst;
    std::vector<int> edge_type;
    Tensor x;  // nodes x node features
    Tensor r;  // edges x edge features

    std::size_t node_count() const noexcept { return x.rows(); }
    std::size_t edge_count() const noexcept { return src.size(); }
};

}  // namespace enggraph
