#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace snowfuse {

struct ParamCount {
    std::size_t conv_weights = 0;
    std::size_t biases = 0;
    std::size_t bn = 0;
    std::size_t prelu = 0;

    std::size_t total() const { return conv_weights + biases + bn + prelu; }
    ParamCount& operator+=(const ParamCount& o) {
        conv_weights += o.conv_weights;
        biases += o.biases;
        bn += o.bn;
        prelu += o.prelu;
        return *this;
    }
    friend ParamCount operator+(ParamCount a, const ParamCount& b) { return a += b; }
    friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

enum class NodeKind { Entry, Exit, Conv, Fusion };

const char* to_string(NodeKind kind);

struct NeckNode {
    std::string name;
    NodeKind kind = NodeKind::Conv;
    ParamCount params;
};

/// Structural view of a neck: modules as nodes, tensor flow as edges.
class NeckGraph {
public:
    std::size_t add_node(std::string name, NodeKind kind, ParamCount params = {});
    void add_edge(std::size_t from, std::size_t to);
    std::size_t add_entry(std::string name);
    std::size_t add_exit(std::string name);

    const std::vector<NeckNode>& nodes() const { return nodes_; }
    const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
    const std::vector<std::size_t>& successors(std::size_t node) const { return adjacency_.at(node); }
    /// Entry node per input stage and exit node per output stage, in order.
    const std::vector<std::size_t>& entries() const { return entries_; }
    const std::vector<std::size_t>& exits() const { return exits_; }

    std::size_t count(NodeKind kind) const;
    ParamCount total_params() const;
    bool is_acyclic() const;
    /// Acyclic and every exit reachable from at least one entry.
    bool is_well_formed() const;

private:
    std::vector<NeckNode> nodes_;
    std::vector<std::pair<std::size_t, std::size_t>> edges_;
    std::vector<std::vector<std::size_t>> adjacency_;
    std::vector<std::size_t> entries_;
    std::vector<std::size_t> exits_;
};

/// Fewest Fusion nodes on any path from entry `from_stage` to exit
/// `to_stage` (0-1 BFS). Throws std::runtime_error when unreachable.
std::size_t path_length(const NeckGraph& graph, std::size_t from_stage, std::size_t to_stage);

/// [from][to] for every entry/exit pair.
std::vector<std::vector<std::size_t>> path_length_matrix(const NeckGraph& graph);
std::size_t max_path_length(const NeckGraph& graph);

}  // namespace snowfuse
