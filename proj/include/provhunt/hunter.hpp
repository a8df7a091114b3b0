#pragma once

/// @file hunter.hpp
/// @brief Query-graph alignment over the provenance graph.
///
/// One Hunter per query graph. Roots are seeded from direct matches of the
/// first sequence step; every further step extends a leaf with an evidence
/// event whose subject is the bound entity for the edge's source (or any
/// entity the suspicious label reaches from it) and whose counterpart is the
/// bound entity or a candidate of the edge's target. Evidence timestamps
/// never decrease along a branch, which is the causal filter. A branch that
/// realizes every step becomes an alert; alerts are keyed by their node
/// mapping and scored by the sum of per-step path scores.

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "provhunt/branch_store.hpp"
#include "provhunt/core.hpp"
#include "provhunt/est.hpp"
#include "provhunt/provenance.hpp"
#include "provhunt/query_graph.hpp"

namespace provhunt {

struct HunterConfig {
    std::optional<int> est_budget;              // bounded-depth baseline when set
    EstPolicySet policies = EstPolicySet::all();
    double alert_fraction = 1.0;                // completion fraction that alerts
};

/// Reciprocal of the realized path length: a direct edge scores 1, each
/// label-transfer hop in front of the evidence event lengthens the path.
inline Rational path_score(const EstChain& chain) {
    return Rational(1, static_cast<std::int64_t>(chain.events.size()) + 1);
}

/// Per-query-node candidate sets, kept current entity-by-entity.
class CandidateIndex {
  public:
    void reset(const QueryGraph& gq) {
        gq_ = &gq;
        sets_.assign(gq.nodes.size(), {});
    }

    void add_entity(const ProvenanceGraph& gp, EntityId id) {
        const Entity& e = gp.entity(id);
        for (std::size_t i = 0; i < sets_.size(); ++i) {
            sets_[i].erase(id);  // re-declared entities may have changed
            if (!e.alive || e.tag != gq_->nodes[i].tag) continue;
            if (gq_->nodes[i].compiled && !std::regex_search(e.name, *gq_->nodes[i].compiled))
                continue;
            sets_[i].insert(id);
        }
    }

    void rebuild(const ProvenanceGraph& gp) {
        for (auto& s : sets_) s.clear();
        for (EntityId id = 0; id < gp.entity_slots(); ++id)
            if (gp.entity(id).alive) add_entity(gp, id);
    }

    bool contains(std::size_t node, EntityId id) const { return sets_[node].count(id) != 0; }
    const std::set<EntityId>& of(std::size_t node) const { return sets_[node]; }
    std::size_t node_count() const { return sets_.size(); }

  private:
    const QueryGraph* gq_ = nullptr;
    std::vector<std::set<EntityId>> sets_;
};

/// Snapshot form of the candidate sets (the FC map).
struct CandidateSets {
    std::vector<std::vector<EntityId>> per_node;
};

inline CandidateSets find_candidates(const QueryGraph& gq, const ProvenanceGraph& gp) {
    CandidateIndex idx;
    idx.reset(gq);
    idx.rebuild(gp);
    CandidateSets fc;
    fc.per_node.reserve(gq.nodes.size());
    for (std::size_t i = 0; i < gq.nodes.size(); ++i)
        fc.per_node.emplace_back(idx.of(i).begin(), idx.of(i).end());
    return fc;
}

struct TreeNode {
    std::uint32_t idx = 0;
    std::int32_t parent = -1;
    std::vector<std::uint32_t> children;
    std::int32_t step_pos = -1;        // sequence position this node satisfied
    std::vector<EntityId> binding;     // per query node, kNoEntity = unbound
    Event evidence;
    EstChain chain;                    // label path in front of the evidence
    Rational step_score{1, 1};
    Rational cum_score{0, 1};
    Timestamp last_update = 0;
    std::uint64_t identity = 0;
    enum class State : std::uint8_t { active, complete } state = State::active;
    bool pinned = false;  // on a completed branch; never evicted
    bool dead = false;    // evicted or detached
    std::vector<EntityId> reach;  // bindings + label frontier, drives re-advance

    int seq_num() const { return step_pos + 1; }
};

struct AlertEntry {
    Rational score;
    std::string rendered;  // canonical JSON line
};

inline std::uint64_t node_identity(std::uint64_t parent_identity, std::int32_t step_pos,
                                   Timestamp t, SeqNum seq) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    mix(parent_identity);
    mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(step_pos)) + 1);
    mix(static_cast<std::uint64_t>(t));
    mix(seq);
    return h;
}

class Hunter {
  public:
    Hunter(QueryGraph merged, HunterConfig cfg) : gq_(std::move(merged)), cfg_(cfg) {
        candidates_.reset(gq_);
        const std::size_t n = gq_.sequence().size();
        threshold_steps_ = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(cfg_.alert_fraction * static_cast<double>(n))));
        threshold_steps_ = std::min(threshold_steps_, n);
        free_seed_.assign(n, false);
        for (std::size_t pos = 0; pos < n; ++pos) {
            const QueryEdge& e = gq_.edges[gq_.sequence()[pos]];
            free_seed_[pos] = gq_.first_bound_at(e.src) >= pos && gq_.first_bound_at(e.dst) >= pos &&
                              pos > 0;
        }
    }

    const QueryGraph& query() const { return gq_; }
    const HunterConfig& config() const { return cfg_; }
    const CandidateIndex& candidates() const { return candidates_; }

    void register_entities(const ProvenanceGraph& gp, std::span<const EntityId> ids) {
        for (EntityId id : ids) candidates_.add_entity(gp, id);
    }
    void rebuild_candidates(const ProvenanceGraph& gp) { candidates_.rebuild(gp); }

    // -- seeding and advancing -----------------------------------------------

    /// Scans committed events for direct realizations of the first step and
    /// creates roots. Returns new node ids for the advance worklist.
    std::vector<std::uint32_t> seed_roots(const ProvenanceGraph& gp,
                                          std::span<const Event> committed, Timestamp now) {
        std::vector<std::uint32_t> fresh;
        if (gq_.sequence().empty()) return fresh;
        const QueryEdge& e0 = gq_.edges[gq_.sequence()[0]];
        std::vector<Event> hits;
        for (const Event& ev : committed) {
            if (ev.op != e0.op) continue;
            if (!candidates_.contains(e0.src, ev.subject)) continue;
            if (!candidates_.contains(e0.dst, ev.object)) continue;
            hits.push_back(ev);
        }
        std::sort(hits.begin(), hits.end(), EventOrder{});
        for (const Event& ev : hits) {
            auto key = std::make_pair(ev.subject, ev.object);
            bool dominated = false;
            for (std::uint32_t r : roots_by_pair_[key]) {
                const TreeNode& root = nodes_[r];
                if (!root.dead && root.evidence.t <= ev.t) {
                    dominated = true;  // same bindings, same score, earlier or equal
                    break;
                }
            }
            if (dominated) continue;
            std::uint32_t idx = make_node_(-1, 0, ev, EstChain{}, Rational(1, 1), now,
                                           ev.subject, ev.object);
            if (idx != kDuplicate) {
                roots_.push_back(idx);
                roots_by_pair_[key].push_back(idx);
                fresh.push_back(idx);
            }
        }
        return fresh;
    }

    /// Live, extendable nodes whose continuation could involve the newly
    /// committed events.
    std::vector<std::uint32_t> affected_by(std::span<const Event> committed) const {
        std::unordered_set<EntityId> touched;
        std::set<std::uint8_t> ops;
        for (const Event& ev : committed) {
            touched.insert(ev.subject);
            touched.insert(ev.object);
            ops.insert(static_cast<std::uint8_t>(ev.op));
        }
        std::vector<std::uint32_t> out;
        const std::size_t n = gq_.sequence().size();
        for (const TreeNode& node : nodes_) {
            if (node.dead || node.state == TreeNode::State::complete) continue;
            std::size_t next = static_cast<std::size_t>(node.step_pos) + 1;
            if (next >= n) continue;
            if (free_seed_[next]) {
                const QueryEdge& e = gq_.edges[gq_.sequence()[next]];
                if (ops.count(static_cast<std::uint8_t>(e.op))) {
                    out.push_back(node.idx);
                    continue;
                }
            }
            for (EntityId id : node.reach) {
                if (touched.count(id)) {
                    out.push_back(node.idx);
                    break;
                }
            }
        }
        return out;
    }

    /// Expands the worklist nodes and, transitively, every child they spawn.
    /// Re-expansion is idempotent: existing children suppress re-derivations.
    void advance(const ProvenanceGraph& gp, std::vector<std::uint32_t> worklist, Timestamp now) {
        std::deque<std::uint32_t> queue(worklist.begin(), worklist.end());
        while (!queue.empty()) {
            std::uint32_t cur = queue.front();
            queue.pop_front();
            if (cur >= nodes_.size()) continue;
            TreeNode& node = nodes_[cur];
            if (node.dead || node.state == TreeNode::State::complete) continue;
            for (std::uint32_t child : expand_(gp, cur, now)) queue.push_back(child);
        }
    }

    void advance_all(const ProvenanceGraph& gp, Timestamp now) {
        std::vector<std::uint32_t> all;
        for (const TreeNode& n : nodes_)
            if (!n.dead && n.state != TreeNode::State::complete) all.push_back(n.idx);
        advance(gp, std::move(all), now);
    }

    // -- results --------------------------------------------------------------

    const std::map<std::vector<EntityId>, AlertEntry>& alerts() const { return alerts_; }
    std::size_t alert_count() const { return alerts_.size(); }

    std::size_t live_node_count() const { return live_nodes_; }
    std::size_t node_slots() const { return nodes_.size(); }
    const TreeNode& node(std::uint32_t idx) const { return nodes_.at(idx); }
    const std::vector<std::uint32_t>& roots() const { return roots_; }

    // -- eviction and reinstatement -------------------------------------------

    /// Serializes every maximal all-stale subtree through `sink` and detaches
    /// it. Returns the number of branch records written.
    std::size_t evict_stale(const ProvenanceGraph& gp, Timestamp now, Timestamp t_forget,
                            const std::function<void(BranchRecord&&)>& sink) {
        std::size_t records = 0;
        std::vector<std::uint32_t> stack(roots_.rbegin(), roots_.rend());
        std::vector<std::uint32_t> stale_roots;
        while (!stack.empty()) {
            std::uint32_t cur = stack.back();
            stack.pop_back();
            TreeNode& node = nodes_[cur];
            if (node.dead) continue;
            if (!node.pinned && node.last_update < now - t_forget) {
                stale_roots.push_back(cur);
                continue;
            }
            for (std::uint32_t c : node.children) stack.push_back(c);
        }
        for (std::uint32_t cur : stale_roots) {
            BranchRecord rec = build_record_(gp, cur, now);
            sink(std::move(rec));  // store failure propagates before detach
            detach_subtree_(cur);
            ++records;
        }
        return records;
    }

    /// Rebuilds the record's path and subtree, reusing any node that already
    /// exists (matched by content identity). Returns ids needing advance.
    std::vector<std::uint32_t> reinstate(const ProvenanceGraph& gp, const BranchRecord& rec,
                                         Timestamp now) {
        std::vector<std::uint32_t> worklist;
        std::int32_t parent = -1;
        std::uint64_t parent_identity = 0;
        for (const StoredNode& sn : rec.path)
            parent = restore_node_(gp, sn, parent, parent_identity, now, worklist);
        std::size_t cursor = 0;
        restore_subtree_(gp, rec.subtree, cursor, parent, parent_identity, now, worklist);
        return worklist;
    }

  private:
    static constexpr std::uint32_t kDuplicate = 0xffffffffu;

    struct Realization {
        Event ev;
        EstChain chain;
        Rational score;
    };

    // expansion of one node against the committed graph
    std::vector<std::uint32_t> expand_(const ProvenanceGraph& gp, std::uint32_t cur,
                                       Timestamp now) {
        std::vector<std::uint32_t> created;
        TreeNode& node = nodes_[cur];
        const auto& seq = gq_.sequence();
        std::size_t next = static_cast<std::size_t>(node.step_pos) + 1;
        if (next >= seq.size()) return created;
        const QueryEdge& edge = gq_.edges[seq[next]];
        const EntityId bs = node.binding[edge.src];
        const EntityId bd = node.binding[edge.dst];
        const Timestamp t_min = node.evidence.t;

        std::map<std::pair<EntityId, EntityId>, std::vector<Realization>> groups;
        auto group_key = [&](const Event& ev) {
            return std::make_pair(bs == kNoEntity ? ev.subject : kNoEntity,
                                  bd == kNoEntity ? ev.object : kNoEntity);
        };

        std::vector<EntityId> reach;
        for (EntityId b : node.binding)
            if (b != kNoEntity) reach.push_back(b);

        if (bs != kNoEntity) {
            EstFrontier fr = est_frontier(gp, bs, t_min, cfg_.est_budget, cfg_.policies);
            for (const auto& [carrier, states] : fr.states()) {
                reach.push_back(carrier);
                Timestamp first = *fr.min_arrival(carrier);
                const auto& outs = gp.out_events(carrier);
                for (std::size_t i = ProvenanceGraph::lower_bound_t(outs, std::max(t_min, first));
                     i < outs.size(); ++i) {
                    const Event& ev = outs[i];
                    if (ev.op != edge.op) continue;
                    if (bd != kNoEntity) {
                        if (ev.object != bd) continue;
                    } else if (!candidates_.contains(edge.dst, ev.object)) {
                        continue;
                    }
                    auto chain = fr.chain_at(carrier, ev.t);
                    if (!chain) continue;
                    groups[group_key(ev)].push_back(
                        Realization{ev, std::move(*chain), path_score(*chain)});
                }
            }
        } else if (bd != kNoEntity) {
            const auto& ins = gp.in_events(bd);
            for (std::size_t i = ProvenanceGraph::lower_bound_t(ins, t_min); i < ins.size(); ++i) {
                const Event& ev = ins[i];
                if (ev.op != edge.op) continue;
                if (!candidates_.contains(edge.src, ev.subject)) continue;
                groups[group_key(ev)].push_back(Realization{ev, EstChain{}, Rational(1, 1)});
            }
        } else {
            // disconnected query component: direct candidate-pair match
            for (EntityId s : candidates_.of(edge.src)) {
                const auto& outs = gp.out_events(s);
                for (std::size_t i = ProvenanceGraph::lower_bound_t(outs, t_min); i < outs.size();
                     ++i) {
                    const Event& ev = outs[i];
                    if (ev.op != edge.op) continue;
                    if (!candidates_.contains(edge.dst, ev.object)) continue;
                    groups[group_key(ev)].push_back(Realization{ev, EstChain{}, Rational(1, 1)});
                }
            }
        }

        std::sort(reach.begin(), reach.end());
        reach.erase(std::unique(reach.begin(), reach.end()), reach.end());
        node.reach = std::move(reach);

        for (auto& [key, cands] : groups) {
            std::sort(cands.begin(), cands.end(), [](const Realization& a, const Realization& b) {
                if (a.ev.t != b.ev.t) return a.ev.t < b.ev.t;
                if (!(a.score == b.score)) return b.score < a.score;
                return a.ev.seq < b.ev.seq;
            });
            for (Realization& cand : cands) {
                bool dominated = false;
                for (std::uint32_t ci : nodes_[cur].children) {
                    const TreeNode& child = nodes_[ci];
                    if (child.dead) continue;
                    EntityId cs = bs == kNoEntity ? child.binding[edge.src] : kNoEntity;
                    EntityId cd = bd == kNoEntity ? child.binding[edge.dst] : kNoEntity;
                    if (cs != key.first || cd != key.second) continue;
                    if (child.step_score >= cand.score && child.evidence.t <= cand.ev.t) {
                        dominated = true;
                        break;
                    }
                }
                if (dominated) continue;
                std::uint32_t idx =
                    make_node_(static_cast<std::int32_t>(cur), static_cast<std::int32_t>(next),
                               cand.ev, std::move(cand.chain), cand.score, now,
                               key.first == kNoEntity ? kNoEntity : key.first,
                               key.second == kNoEntity ? kNoEntity : key.second);
                if (idx != kDuplicate) created.push_back(idx);
            }
        }
        return created;
    }

    // node construction shared by seeding and expansion; new_src/new_dst are
    // the entities this step binds (kNoEntity when the side was already bound)
    std::uint32_t make_node_(std::int32_t parent, std::int32_t step_pos, const Event& ev,
                             EstChain chain, Rational score, Timestamp now, EntityId new_src,
                             EntityId new_dst) {
        std::uint64_t parent_identity = parent < 0 ? 0 : nodes_[parent].identity;
        std::uint64_t ident = node_identity(parent_identity, step_pos, ev.t, ev.seq);
        if (identity_map_.count(ident)) return kDuplicate;

        const QueryEdge& edge = gq_.edges[gq_.sequence()[step_pos]];
        TreeNode node;
        node.idx = static_cast<std::uint32_t>(nodes_.size());
        node.parent = parent;
        node.step_pos = step_pos;
        node.binding = parent < 0 ? std::vector<EntityId>(gq_.nodes.size(), kNoEntity)
                                  : nodes_[parent].binding;
        if (new_src != kNoEntity) node.binding[edge.src] = new_src;
        if (new_dst != kNoEntity) node.binding[edge.dst] = new_dst;
        node.evidence = ev;
        node.chain = std::move(chain);
        node.step_score = score;
        node.cum_score = parent < 0 ? score : nodes_[parent].cum_score + score;
        node.last_update = now;
        node.identity = ident;
        node.reach = {};
        for (EntityId b : node.binding)
            if (b != kNoEntity) node.reach.push_back(b);
        std::sort(node.reach.begin(), node.reach.end());

        const std::size_t total = gq_.sequence().size();
        bool complete = static_cast<std::size_t>(node.seq_num()) == total;
        if (complete) node.state = TreeNode::State::complete;

        nodes_.push_back(std::move(node));
        ++live_nodes_;
        identity_map_.emplace(ident, nodes_.back().idx);
        if (parent >= 0) nodes_[parent].children.push_back(nodes_.back().idx);
        touch_(nodes_.back().idx, now);

        if (static_cast<std::size_t>(nodes_.back().seq_num()) == threshold_steps_ ||
            complete) {
            emit_alert_(nodes_.back().idx, !complete);
            if (complete) pin_path_(nodes_.back().idx);
        }
        return nodes_.back().idx;
    }

    void touch_(std::uint32_t idx, Timestamp now) {
        for (std::int32_t cur = static_cast<std::int32_t>(idx); cur >= 0;
             cur = nodes_[cur].parent)
            nodes_[cur].last_update = std::max(nodes_[cur].last_update, now);
    }

    void pin_path_(std::uint32_t idx) {
        for (std::int32_t cur = static_cast<std::int32_t>(idx); cur >= 0;
             cur = nodes_[cur].parent)
            nodes_[cur].pinned = true;
    }

    void emit_alert_(std::uint32_t idx, bool partial) {
        const TreeNode& node = nodes_[idx];
        AlertEntry cand{node.cum_score, render_alert_(idx, partial)};
        auto it = alerts_.find(node.binding);
        if (it == alerts_.end()) {
            alerts_.emplace(node.binding, std::move(cand));
            ++alerts_emitted_;
        } else if (cand.score > it->second.score ||
                   (cand.score == it->second.score && cand.rendered < it->second.rendered)) {
            it->second = std::move(cand);
        }
    }

    std::string render_alert_(std::uint32_t idx, bool partial) {
        const ProvenanceGraph* gp = render_graph_;
        std::vector<std::uint32_t> path;
        for (std::int32_t cur = static_cast<std::int32_t>(idx); cur >= 0;
             cur = nodes_[cur].parent)
            path.push_back(static_cast<std::uint32_t>(cur));
        std::reverse(path.begin(), path.end());

        nlohmann::ordered_json j;
        j["query"] = gq_.id;
        j["score"] = nodes_[idx].cum_score.to_decimal();
        if (partial) j["partial"] = true;
        std::map<std::string, std::string> mapping;
        for (std::size_t q = 0; q < gq_.nodes.size(); ++q)
            if (nodes_[idx].binding[q] != kNoEntity)
                mapping[gq_.nodes[q].qid] = gp->entity(nodes_[idx].binding[q]).uid;
        j["mapping"] = nlohmann::ordered_json::object();
        for (const auto& [qid, uid] : mapping) j["mapping"][qid] = uid;
        j["steps"] = nlohmann::ordered_json::array();
        for (std::uint32_t ni : path) {
            const TreeNode& n = nodes_[ni];
            const QueryEdge& e = gq_.edges[gq_.sequence()[n.step_pos]];
            nlohmann::ordered_json js;
            js["step"] = e.step;
            js["op"] = to_string(n.evidence.op);
            js["subject"] = gp->entity(n.evidence.subject).uid;
            js["object"] = gp->entity(n.evidence.object).uid;
            js["t"] = n.evidence.t;
            js["seq"] = n.evidence.seq;
            js["est_path"] = nlohmann::ordered_json::array();
            for (std::size_t k = 1; k < n.chain.nodes.size(); ++k)
                js["est_path"].push_back(gp->entity(n.chain.nodes[k]).uid);
            j["steps"].push_back(std::move(js));
        }
        return j.dump();
    }

  public:
    /// Rendering needs entity uids; callers set the graph once up front.
    void bind_graph(const ProvenanceGraph& gp) { render_graph_ = &gp; }

  private:
    BranchRecord build_record_(const ProvenanceGraph& gp, std::uint32_t subtree_root,
                               Timestamp now) {
        BranchRecord rec;
        rec.query_id = gq_.id;
        rec.evicted_at = now;
        std::vector<std::uint32_t> path;
        for (std::int32_t cur = nodes_[subtree_root].parent; cur >= 0; cur = nodes_[cur].parent)
            path.push_back(static_cast<std::uint32_t>(cur));
        std::reverse(path.begin(), path.end());
        for (std::uint32_t ni : path) rec.path.push_back(store_node_(gp, ni, 0));

        std::set<std::string> keys;
        std::set<std::uint8_t> free_ops;
        std::vector<std::uint32_t> order;  // preorder
        std::vector<std::uint32_t> stack{subtree_root};
        while (!stack.empty()) {
            std::uint32_t cur = stack.back();
            stack.pop_back();
            if (nodes_[cur].dead) continue;
            order.push_back(cur);
            const TreeNode& n = nodes_[cur];
            for (EntityId id : n.reach) keys.insert(gp.entity(id).uid);
            std::size_t next = static_cast<std::size_t>(n.step_pos) + 1;
            if (n.state != TreeNode::State::complete && next < gq_.sequence().size() &&
                free_seed_[next])
                free_ops.insert(static_cast<std::uint8_t>(gq_.edges[gq_.sequence()[next]].op));
            for (auto it = n.children.rbegin(); it != n.children.rend(); ++it)
                if (!nodes_[*it].dead) stack.push_back(*it);
        }
        for (std::uint32_t ni : order) {
            std::uint32_t live_children = 0;
            for (std::uint32_t c : nodes_[ni].children)
                if (!nodes_[c].dead) ++live_children;
            rec.subtree.push_back(store_node_(gp, ni, live_children));
        }
        rec.keys.assign(keys.begin(), keys.end());
        rec.free_ops.assign(free_ops.begin(), free_ops.end());
        return rec;
    }

    StoredNode store_node_(const ProvenanceGraph& gp, std::uint32_t ni,
                           std::uint32_t child_count) const {
        const TreeNode& n = nodes_[ni];
        StoredNode sn;
        sn.step_pos = n.step_pos;
        sn.binding.reserve(n.binding.size());
        for (EntityId b : n.binding)
            sn.binding.push_back(b == kNoEntity ? std::string() : gp.entity(b).uid);
        sn.subj_uid = gp.entity(n.evidence.subject).uid;
        sn.obj_uid = gp.entity(n.evidence.object).uid;
        sn.op = static_cast<std::uint8_t>(n.evidence.op);
        sn.t = n.evidence.t;
        sn.seq = n.evidence.seq;
        for (EntityId id : n.chain.nodes) sn.chain_nodes.push_back(gp.entity(id).uid);
        for (const Event& ev : n.chain.events)
            sn.chain_events.push_back(StoredNode::ChainEvent{
                gp.entity(ev.subject).uid, gp.entity(ev.object).uid,
                static_cast<std::uint8_t>(ev.op), ev.t, ev.seq});
        sn.score_num = n.step_score.num;
        sn.score_den = n.step_score.den;
        sn.last_update = n.last_update;
        sn.child_count = child_count;
        return sn;
    }

    void detach_subtree_(std::uint32_t root) {
        TreeNode& r = nodes_[root];
        if (r.parent >= 0) {
            auto& siblings = nodes_[r.parent].children;
            siblings.erase(std::remove(siblings.begin(), siblings.end(), root), siblings.end());
        } else {
            roots_.erase(std::remove(roots_.begin(), roots_.end(), root), roots_.end());
        }
        std::vector<std::uint32_t> stack{root};
        while (!stack.empty()) {
            std::uint32_t cur = stack.back();
            stack.pop_back();
            TreeNode& n = nodes_[cur];
            if (n.dead) continue;
            n.dead = true;
            --live_nodes_;
            identity_map_.erase(n.identity);
            for (std::uint32_t c : n.children) stack.push_back(c);
            n.children.clear();
            n.reach.clear();
        }
    }

    std::int32_t restore_node_(const ProvenanceGraph& gp, const StoredNode& sn,
                               std::int32_t parent, std::uint64_t& parent_identity,
                               Timestamp now, std::vector<std::uint32_t>& worklist) {
        std::uint64_t ident = node_identity(parent_identity, sn.step_pos, sn.t, sn.seq);
        parent_identity = ident;
        auto it = identity_map_.find(ident);
        if (it != identity_map_.end()) {
            touch_(it->second, now);
            worklist.push_back(it->second);
            return static_cast<std::int32_t>(it->second);
        }
        auto resolve = [&gp](const std::string& uid) {
            if (uid.empty()) return kNoEntity;
            EntityId id = gp.find_uid(uid);
            if (id == kNoEntity) throw StoreError("stored entity vanished: " + uid);
            return id;
        };
        TreeNode node;
        node.idx = static_cast<std::uint32_t>(nodes_.size());
        node.parent = parent;
        node.step_pos = sn.step_pos;
        node.binding.reserve(sn.binding.size());
        for (const std::string& uid : sn.binding) node.binding.push_back(resolve(uid));
        if (node.binding.size() != gq_.nodes.size())
            throw StoreError("stored branch does not match the query graph");
        node.evidence = Event{resolve(sn.subj_uid), resolve(sn.obj_uid),
                              static_cast<EventType>(sn.op), sn.t, sn.seq};
        for (const std::string& uid : sn.chain_nodes) node.chain.nodes.push_back(resolve(uid));
        for (const auto& ce : sn.chain_events)
            node.chain.events.push_back(Event{resolve(ce.subj), resolve(ce.obj),
                                              static_cast<EventType>(ce.op), ce.t, ce.seq});
        node.chain.t_last = node.chain.events.empty() ? 0 : node.chain.events.back().t;
        node.step_score = Rational(sn.score_num, sn.score_den);
        node.cum_score = parent < 0 ? node.step_score : nodes_[parent].cum_score + node.step_score;
        node.last_update = now;
        node.identity = ident;
        for (EntityId b : node.binding)
            if (b != kNoEntity) node.reach.push_back(b);
        std::sort(node.reach.begin(), node.reach.end());
        if (static_cast<std::size_t>(node.seq_num()) == gq_.sequence().size())
            node.state = TreeNode::State::complete;

        nodes_.push_back(std::move(node));
        ++live_nodes_;
        identity_map_.emplace(ident, nodes_.back().idx);
        std::uint32_t idx = nodes_.back().idx;
        if (parent >= 0) {
            nodes_[parent].children.push_back(idx);
        } else {
            roots_.push_back(idx);
            if (nodes_[idx].step_pos == 0) {
                const QueryEdge& e0 = gq_.edges[gq_.sequence()[0]];
                roots_by_pair_[{nodes_[idx].binding[e0.src], nodes_[idx].binding[e0.dst]}]
                    .push_back(idx);
            }
        }
        touch_(idx, now);
        worklist.push_back(idx);
        return static_cast<std::int32_t>(idx);
    }

    void restore_subtree_(const ProvenanceGraph& gp, const std::vector<StoredNode>& list,
                          std::size_t& cursor, std::int32_t parent, std::uint64_t parent_identity,
                          Timestamp now, std::vector<std::uint32_t>& worklist) {
        if (cursor >= list.size()) return;
        const StoredNode& sn = list[cursor++];
        std::uint64_t ident_io = parent_identity;
        std::int32_t idx = restore_node_(gp, sn, parent, ident_io, now, worklist);
        for (std::uint32_t c = 0; c < sn.child_count; ++c)
            restore_subtree_(gp, list, cursor, idx, ident_io, now, worklist);
    }

    QueryGraph gq_;
    HunterConfig cfg_;
    CandidateIndex candidates_;
    std::deque<TreeNode> nodes_;
    std::vector<std::uint32_t> roots_;
    std::map<std::pair<EntityId, EntityId>, std::vector<std::uint32_t>> roots_by_pair_;
    std::unordered_map<std::uint64_t, std::uint32_t> identity_map_;
    std::map<std::vector<EntityId>, AlertEntry> alerts_;
    std::size_t alerts_emitted_ = 0;
    std::size_t live_nodes_ = 0;
    std::size_t threshold_steps_ = 1;
    std::vector<bool> free_seed_;
    const ProvenanceGraph* render_graph_ = nullptr;
};

}  // namespace provhunt
