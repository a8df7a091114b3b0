#pragma once

/// @file query_graph.hpp
/// @brief Attack query graphs: load/validate, merge analogous nodes, step order.

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "provhunt/core.hpp"

namespace provhunt {

struct QueryNode {
    std::string qid;
    EntityTag tag = EntityTag::P;
    std::optional<std::string> name_pattern;
    std::shared_ptr<const std::regex> compiled;  // set iff name_pattern
    std::vector<std::string> merged_from;        // original qids, never empty
};

struct QueryEdge {
    std::uint32_t src = 0;
    std::uint32_t dst = 0;
    EventType op = EventType::write;
    int step = 0;
    std::uint32_t input_index = 0;
};

/// Validated attack pattern. Immutable after load/merge; the edge sequence
/// (edges ordered by step) drives hunting.
class QueryGraph {
  public:
    std::string id;
    std::vector<QueryNode> nodes;
    std::vector<QueryEdge> edges;

    static QueryGraph from_json(const nlohmann::json& doc) {
        QueryGraph g;
        try {
            g.id = doc.at("id").get<std::string>();
            for (const auto& jn : doc.at("nodes")) {
                QueryNode n;
                n.qid = jn.at("qid").get<std::string>();
                auto tag = tag_from_string(jn.at("tag").get<std::string>());
                if (!tag) throw ValidationError("node " + n.qid + ": unknown tag");
                n.tag = *tag;
                if (jn.contains("name_pattern") && !jn.at("name_pattern").is_null())
                    n.name_pattern = jn.at("name_pattern").get<std::string>();
                if (jn.contains("merged_from"))
                    n.merged_from = jn.at("merged_from").get<std::vector<std::string>>();
                if (n.merged_from.empty()) n.merged_from = {n.qid};
                g.nodes.push_back(std::move(n));
            }
            std::uint32_t idx = 0;
            for (const auto& je : doc.at("edges")) {
                QueryEdge e;
                e.src = g.node_index(je.at("src").get<std::string>());
                e.dst = g.node_index(je.at("dst").get<std::string>());
                auto op = op_from_string(je.at("op").get<std::string>());
                if (!op) throw ValidationError("edge " + std::to_string(idx) + ": unknown op");
                e.op = *op;
                e.step = je.at("step").get<int>();
                e.input_index = idx++;
                g.edges.push_back(e);
            }
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(std::string("query graph document: ") + ex.what());
        }
        g.compile_patterns();
        g.validate();
        g.build_sequence();
        return g;
    }

    static QueryGraph load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open query graph: " + path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(path + ": " + ex.what());
        }
        return from_json(doc);
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json doc;
        doc["id"] = id;
        doc["nodes"] = nlohmann::ordered_json::array();
        for (const QueryNode& n : nodes) {
            nlohmann::ordered_json jn;
            jn["qid"] = n.qid;
            jn["tag"] = to_string(n.tag);
            if (n.name_pattern) jn["name_pattern"] = *n.name_pattern;
            if (n.merged_from.size() > 1 || n.merged_from[0] != n.qid)
                jn["merged_from"] = n.merged_from;
            doc["nodes"].push_back(std::move(jn));
        }
        doc["edges"] = nlohmann::ordered_json::array();
        for (std::uint32_t ei : sequence_) {
            const QueryEdge& e = edges[ei];
            nlohmann::ordered_json je;
            je["src"] = nodes[e.src].qid;
            je["dst"] = nodes[e.dst].qid;
            je["op"] = to_string(e.op);
            je["step"] = e.step;
            doc["edges"].push_back(std::move(je));
        }
        return doc;
    }

    std::uint32_t node_index(const std::string& qid) const {
        for (std::uint32_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].qid == qid) return i;
        throw ValidationError("edge references unknown node '" + qid + "'");
    }

    /// Edge indices in attack order (ascending step).
    const std::vector<std::uint32_t>& sequence() const { return sequence_; }

    /// Sequence position at which a node first gets bound, or SIZE_MAX.
    std::size_t first_bound_at(std::uint32_t node) const { return first_bound_[node]; }

    void validate() const {
        if (nodes.empty() || edges.empty())
            throw ValidationError(id + ": query graph needs nodes and edges");
        std::vector<bool> used(nodes.size(), false);
        std::set<int> steps;
        for (const QueryEdge& e : edges) {
            const QueryNode& s = nodes[e.src];
            const QueryNode& d = nodes[e.dst];
            if (kind_of_tag(s.tag) != subject_kind(e.op) ||
                kind_of_tag(d.tag) != object_kind(e.op))
                throw ValidationError(id + ": edge " + s.qid + "->" + d.qid + " op '" +
                                      to_string(e.op) + "' inconsistent with node tags");
            if (!steps.insert(e.step).second)
                throw ValidationError(id + ": duplicate step " + std::to_string(e.step));
            used[e.src] = used[e.dst] = true;
        }
        for (std::uint32_t i = 0; i < nodes.size(); ++i)
            if (!used[i])
                throw ValidationError(id + ": node " + nodes[i].qid + " appears in no edge");
        if (!weakly_connected())
            throw ValidationError(id + ": query graph is not weakly connected");
    }

    bool weakly_connected() const {
        if (nodes.empty()) return true;
        std::vector<std::uint32_t> parent(nodes.size());
        std::iota(parent.begin(), parent.end(), 0u);
        auto find = [&](std::uint32_t x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        for (const QueryEdge& e : edges) parent[find(e.src)] = find(e.dst);
        std::uint32_t root = find(0);
        for (std::uint32_t i = 1; i < nodes.size(); ++i)
            if (find(i) != root) return false;
        return true;
    }

    void compile_patterns() {
        for (QueryNode& n : nodes) {
            if (!n.name_pattern) continue;
            try {
                n.compiled = std::make_shared<const std::regex>(*n.name_pattern);
            } catch (const std::regex_error& ex) {
                throw ValidationError(id + ": node " + n.qid + ": bad pattern '" +
                                      *n.name_pattern + "': " + ex.what());
            }
        }
    }

    void build_sequence() {
        sequence_.resize(edges.size());
        std::iota(sequence_.begin(), sequence_.end(), 0u);
        std::sort(sequence_.begin(), sequence_.end(), [this](std::uint32_t a, std::uint32_t b) {
            if (edges[a].step != edges[b].step) return edges[a].step < edges[b].step;
            return edges[a].input_index < edges[b].input_index;
        });
        first_bound_.assign(nodes.size(), SIZE_MAX);
        for (std::size_t pos = 0; pos < sequence_.size(); ++pos) {
            const QueryEdge& e = edges[sequence_[pos]];
            first_bound_[e.src] = std::min(first_bound_[e.src], pos);
            first_bound_[e.dst] = std::min(first_bound_[e.dst], pos);
        }
    }

  private:
    std::vector<std::uint32_t> sequence_;
    std::vector<std::size_t> first_bound_;
};

/// Edge order for attack reconstruction; a thin alias over the graph's own
/// step ordering so callers can ask for it explicitly.
inline std::vector<std::uint32_t> extract_sequence(const QueryGraph& g) { return g.sequence(); }

namespace detail {

struct NodeSignature {
    EntityTag tag;
    // (op, outgoing, counterpart tag) multiset as a sorted vector
    std::vector<std::tuple<std::uint8_t, bool, std::uint8_t>> incident;
    friend bool operator<(const NodeSignature& a, const NodeSignature& b) {
        if (a.tag != b.tag) return a.tag < b.tag;
        return a.incident < b.incident;
    }
};

inline NodeSignature signature_of(const QueryGraph& g, std::uint32_t node) {
    NodeSignature sig;
    sig.tag = g.nodes[node].tag;
    for (const QueryEdge& e : g.edges) {
        if (e.src == node)
            sig.incident.emplace_back(static_cast<std::uint8_t>(e.op), true,
                                      static_cast<std::uint8_t>(g.nodes[e.dst].tag));
        if (e.dst == node)
            sig.incident.emplace_back(static_cast<std::uint8_t>(e.op), false,
                                      static_cast<std::uint8_t>(g.nodes[e.src].tag));
    }
    std::sort(sig.incident.begin(), sig.incident.end());
    return sig;
}

}  // namespace detail

/// Merges nodes of equal tag whose incident-edge signatures coincide, then
/// collapses parallel (src, dst, op) edges keeping the minimum step. Runs to
/// a fixpoint, so the operation is idempotent and never grows the graph.
inline QueryGraph merge_analogous(QueryGraph g) {
    for (;;) {
        std::map<detail::NodeSignature, std::vector<std::uint32_t>> groups;
        for (std::uint32_t i = 0; i < g.nodes.size(); ++i)
            groups[detail::signature_of(g, i)].push_back(i);
        bool any = false;
        for (auto& [sig, members] : groups)
            if (members.size() > 1) any = true;
        if (!any) break;

        // old node -> representative old node
        std::vector<std::uint32_t> rep(g.nodes.size());
        std::iota(rep.begin(), rep.end(), 0u);
        for (auto& [sig, members] : groups) {
            if (members.size() < 2) continue;
            std::uint32_t best = members[0];
            for (std::uint32_t m : members)
                if (g.nodes[m].qid < g.nodes[best].qid) best = m;
            for (std::uint32_t m : members) rep[m] = best;
        }

        QueryGraph merged;
        merged.id = g.id;
        std::vector<std::uint32_t> new_index(g.nodes.size(), 0);
        for (std::uint32_t i = 0; i < g.nodes.size(); ++i) {
            if (rep[i] != i) continue;
            QueryNode n = g.nodes[i];
            std::set<std::string> origins(n.merged_from.begin(), n.merged_from.end());
            bool same_pattern = true;
            for (std::uint32_t j = 0; j < g.nodes.size(); ++j) {
                if (rep[j] != i || j == i) continue;
                origins.insert(g.nodes[j].merged_from.begin(), g.nodes[j].merged_from.end());
                if (g.nodes[j].name_pattern != n.name_pattern) same_pattern = false;
            }
            if (!same_pattern) {
                n.name_pattern.reset();  // generalized node matches on tag alone
                n.compiled.reset();
            }
            n.merged_from.assign(origins.begin(), origins.end());
            new_index[i] = static_cast<std::uint32_t>(merged.nodes.size());
            merged.nodes.push_back(std::move(n));
        }

        // remap edges, collapsing parallels to the earliest step
        std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint8_t>, QueryEdge> collapsed;
        for (const QueryEdge& e : g.edges) {
            QueryEdge m = e;
            m.src = new_index[rep[e.src]];
            m.dst = new_index[rep[e.dst]];
            auto key = std::make_tuple(m.src, m.dst, static_cast<std::uint8_t>(m.op));
            auto it = collapsed.find(key);
            if (it == collapsed.end()) {
                collapsed.emplace(key, m);
            } else if (m.step < it->second.step) {
                it->second = m;
            }
        }
        std::vector<QueryEdge> kept;
        kept.reserve(collapsed.size());
        for (auto& [key, e] : collapsed) kept.push_back(e);
        std::sort(kept.begin(), kept.end(),
                  [](const QueryEdge& a, const QueryEdge& b) { return a.step < b.step; });
        std::uint32_t idx = 0;
        for (QueryEdge& e : kept) e.input_index = idx++;
        merged.edges = std::move(kept);
        g = std::move(merged);
    }
    g.compile_patterns();
    g.build_sequence();
    return g;
}

}  // namespace provhunt
