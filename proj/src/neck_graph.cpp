#include "snowfuse/neck_graph.hpp"

#include <deque>
#include <limits>
#include <stdexcept>

namespace snowfuse {

const char* to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::Entry: return "entry";
        case NodeKind::Exit: return "exit";
        case NodeKind::Conv: return "conv";
        case NodeKind::Fusion: return "fusion";
    }
    return "unknown";
}

std::size_t NeckGraph::add_node(std::string name, NodeKind kind, ParamCount params) {
    nodes_.push_back({std::move(name), kind, params});
    adjacency_.emplace_back();
    return nodes_.size() - 1;
}

void NeckGraph::add_edge(std::size_t from, std::size_t to) {
    if (from >= nodes_.size() || to >= nodes_.size()) throw std::out_of_range("NeckGraph: edge endpoint out of range");
    edges_.emplace_back(from, to);
    adjacency_[from].push_back(to);
}

std::size_t NeckGraph::add_entry(std::string name) {
    const std::size_t id = add_node(std::move(name), NodeKind::Entry);
    entries_.push_back(id);
    return id;
}

std::size_t NeckGraph::add_exit(std::string name) {
    const std::size_t id = add_node(std::move(name), NodeKind::Exit);
    exits_.push_back(id);
    return id;
}

std::size_t NeckGraph::count(NodeKind kind) const {
    std::size_t n = 0;
    for (const auto& node : nodes_) n += node.kind == kind;
    return n;
}

ParamCount NeckGraph::total_params() const {
    ParamCount total;
    for (const auto& node : nodes_) total += node.params;
    return total;
}

bool NeckGraph::is_acyclic() const {
    std::vector<std::size_t> indegree(nodes_.size(), 0);
    for (const auto& [from, to] : edges_) ++indegree[to];
    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (indegree[i] == 0) ready.push_back(i);
    std::size_t visited = 0;
    while (!ready.empty()) {
        const std::size_t node = ready.back();
        ready.pop_back();
        ++visited;
        for (std::size_t next : adjacency_[node])
            if (--indegree[next] == 0) ready.push_back(next);
    }
    return visited == nodes_.size();
}

bool NeckGraph::is_well_formed() const {
    if (!is_acyclic() || entries_.empty() || exits_.empty()) return false;
    std::vector<bool> seen(nodes_.size(), false);
    std::vector<std::size_t> stack(entries_.begin(), entries_.end());
    for (std::size_t e : entries_) seen[e] = true;
    while (!stack.empty()) {
        const std::size_t node = stack.back();
        stack.pop_back();
        for (std::size_t next : adjacency_[node]) {
            if (!seen[next]) {
                seen[next] = true;
                stack.push_back(next);
            }
        }
    }
    for (std::size_t x : exits_)
        if (!seen[x]) return false;
    return true;
}

namespace {

constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();

// Node weight is 1 for fusion modules, 0 otherwise; cost of a path is the sum
// over its nodes, so 0-1 BFS on entering a node gives the minimum.
std::vector<std::size_t> fusion_distances(const NeckGraph& graph, std::size_t source) {
    const auto& nodes = graph.nodes();
    std::vector<std::size_t> dist(nodes.size(), kUnreached);
    std::deque<std::size_t> queue;
    dist[source] = nodes[source].kind == NodeKind::Fusion ? 1 : 0;
    queue.push_back(source);
    while (!queue.empty()) {
        const std::size_t node = queue.front();
        queue.pop_front();
        for (std::size_t next : graph.successors(node)) {
            const std::size_t w = nodes[next].kind == NodeKind::Fusion ? 1 : 0;
            if (dist[node] + w < dist[next]) {
                dist[next] = dist[node] + w;
                if (w == 0)
                    queue.push_front(next);
                else
                    queue.push_back(next);
            }
        }
    }
    return dist;
}

}  // namespace

std::size_t path_length(const NeckGraph& graph, std::size_t from_stage, std::size_t to_stage) {
    if (from_stage >= graph.entries().size())
        throw std::out_of_range("path_length: no input stage " + std::to_string(from_stage));
    if (to_stage >= graph.exits().size())
        throw std::out_of_range("path_length: no output stage " + std::to_string(to_stage));
    const auto dist = fusion_distances(graph, graph.entries()[from_stage]);
    const std::size_t d = dist[graph.exits()[to_stage]];
    if (d == kUnreached)
        throw std::runtime_error("path_length: output stage " + std::to_string(to_stage) +
                                 " is unreachable from input stage " + std::to_string(from_stage));
    return d;
}

std::vector<std::vector<std::size_t>> path_length_matrix(const NeckGraph& graph) {
    std::vector<std::vector<std::size_t>> out(graph.entries().size());
    for (std::size_t s = 0; s < out.size(); ++s)
        for (std::size_t t = 0; t < graph.exits().size(); ++t) out[s].push_back(path_length(graph, s, t));
    return out;
}

std::size_t max_path_length(const NeckGraph& graph) {
    std::size_t best = 0;
    for (const auto& row : path_length_matrix(graph))
        for (std::size_t v : row) best = std::max(best, v);
    return best;
}

}  // namespace snowfuse
