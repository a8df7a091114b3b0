#pragma once

/// @file est.hpp
/// @brief Equivalent-semantic label propagation and temporal frontier search.
///
/// Six transfer policies, process side and file side:
///   1a fork, 1b clone      P -> P'   (spawned process inherits the label)
///   2  inject              P -> P'
///   3  write               P -> F
///   4  execute | load      F -> P    only for library/executable files
///   5  read                F -> P
/// A label never crosses sockets or registry keys, and exit/unlink/connect/
/// send/accept/receive transfer nothing.

#include <deque>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "provhunt/core.hpp"
#include "provhunt/provenance.hpp"

namespace provhunt {

enum class EstPolicy : std::uint8_t {
    fork_spawn = 0,
    clone_spawn,
    inject,
    write_taint,
    execute_load,
    read_taint,
};

inline constexpr std::size_t kEstPolicyCount = 6;

inline const char* to_string(EstPolicy p) {
    switch (p) {
        case EstPolicy::fork_spawn: return "fork";
        case EstPolicy::clone_spawn: return "clone";
        case EstPolicy::inject: return "inject";
        case EstPolicy::write_taint: return "write";
        case EstPolicy::execute_load: return "execute_load";
        case EstPolicy::read_taint: return "read";
    }
    return "?";
}

inline std::optional<EstPolicy> est_policy_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kEstPolicyCount; ++i) {
        EstPolicy p = static_cast<EstPolicy>(i);
        if (s == to_string(p)) return p;
    }
    return std::nullopt;
}

/// Which policy rows are enabled. Individual rows can be switched off from
/// an override file for ablation runs.
struct EstPolicySet {
    std::array<bool, kEstPolicyCount> enabled{};

    static EstPolicySet all() {
        EstPolicySet s;
        s.enabled.fill(true);
        return s;
    }
    static EstPolicySet none() { return EstPolicySet{}; }

    bool on(EstPolicy p) const { return enabled[static_cast<std::size_t>(p)]; }
    void disable(EstPolicy p) { enabled[static_cast<std::size_t>(p)] = false; }

    /// File format: one `disable <fork|clone|inject|write|execute_load|read>`
    /// per line; '#' comments allowed.
    static EstPolicySet load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open EST policy override: " + path);
        EstPolicySet s = all();
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::istringstream fields(line);
            std::string verb, name;
            fields >> verb >> name;
            if (verb.empty() || verb[0] == '#') continue;
            auto p = est_policy_from_string(name);
            if (verb != "disable" || !p)
                throw ConfigError(path + ":" + std::to_string(line_no) +
                                  ": expected 'disable <policy>', got '" + line + "'");
            s.disable(*p);
        }
        return s;
    }
};

/// Policy row an event falls under, if any.
inline std::optional<EstPolicy> policy_of(const Event& ev) {
    switch (ev.op) {
        case EventType::fork: return EstPolicy::fork_spawn;
        case EventType::clone: return EstPolicy::clone_spawn;
        case EventType::inject: return EstPolicy::inject;
        case EventType::write: return EstPolicy::write_taint;
        case EventType::execute:
        case EventType::load: return EstPolicy::execute_load;
        case EventType::read: return EstPolicy::read_taint;
        default: return std::nullopt;
    }
}

/// True iff `ev` matches a policy row and the row's label-carrying side
/// (the subject for fork/clone/inject/write, the object file for
/// execute/load/read) holds the label; execute/load additionally require
/// the file to be a library or executable.
inline bool policy_applies(const Event& ev, bool source_has_label, EntityTag object_tag,
                           const EstPolicySet& policies = EstPolicySet::all()) {
    auto p = policy_of(ev);
    if (!p || !policies.on(*p) || !source_has_label) return false;
    if (*p == EstPolicy::execute_load)
        return object_tag == EntityTag::Fd || object_tag == EntityTag::Fe;
    return true;
}

/// One label-transfer path: nodes[0] is the labelled origin, each event is a
/// policy hop, timestamps non-decreasing and all >= the search floor.
struct EstChain {
    std::vector<EntityId> nodes;  // origin .. final carrier, events.size()+1 entries
    std::vector<Event> events;
    Timestamp t_last = 0;  // arrival of the label at the final carrier
};

/// Result of a frontier search: for every reachable entity, the Pareto set
/// of (hop count, label arrival time) states. Fewer hops can cost a later
/// arrival; both extremes matter to callers.
class EstFrontier {
  public:
    struct State {
        int hops;
        Timestamp arrival;
        std::int32_t arena;
    };

    EntityId start() const { return start_; }
    Timestamp floor() const { return t_min_; }

    const std::map<EntityId, std::vector<State>>& states() const { return states_; }

    bool contains(EntityId id) const { return states_.count(id) != 0; }

    std::vector<EntityId> entities() const {
        std::vector<EntityId> out;
        out.reserve(states_.size());
        for (const auto& [id, st] : states_) out.push_back(id);
        return out;
    }

    /// Earliest possible label arrival at `id`, over any hop count.
    std::optional<Timestamp> min_arrival(EntityId id) const {
        auto it = states_.find(id);
        if (it == states_.end()) return std::nullopt;
        Timestamp best = it->second.front().arrival;
        for (const State& s : it->second) best = std::min(best, s.arrival);
        return best;
    }

    /// Minimal-hop chain (ties: earliest arrival).
    std::optional<EstChain> best_chain(EntityId id) const {
        auto it = states_.find(id);
        if (it == states_.end()) return std::nullopt;
        return reconstruct(it->second.front());
    }

    /// Minimal-hop chain whose label arrives no later than `deadline`.
    std::optional<EstChain> chain_at(EntityId id, Timestamp deadline) const {
        auto it = states_.find(id);
        if (it == states_.end()) return std::nullopt;
        for (const State& s : it->second)  // sorted by hops asc
            if (s.arrival <= deadline) return reconstruct(s);
        return std::nullopt;
    }

  private:
    friend EstFrontier est_frontier(const ProvenanceGraph&, EntityId, Timestamp,
                                    std::optional<int>, const EstPolicySet&);

    struct ArenaNode {
        EntityId ent;
        int hops;
        Timestamp arrival;
        std::int32_t parent;  // -1 for the start state
        Event via;
        bool retired = false;
    };

    EstChain reconstruct(const State& s) const {
        EstChain chain;
        std::int32_t cur = s.arena;
        while (cur >= 0 && arena_[cur].parent >= 0) {
            chain.events.push_back(arena_[cur].via);
            chain.nodes.push_back(arena_[cur].ent);
            cur = arena_[cur].parent;
        }
        chain.nodes.push_back(start_);
        std::reverse(chain.nodes.begin(), chain.nodes.end());
        std::reverse(chain.events.begin(), chain.events.end());
        chain.t_last = chain.events.empty() ? t_min_ : chain.events.back().t;
        return chain;
    }

    EntityId start_ = kNoEntity;
    Timestamp t_min_ = 0;
    std::vector<ArenaNode> arena_;
    std::map<EntityId, std::vector<State>> states_;  // per entity, hops ascending
};

/// Breadth-first label propagation from `start`. Every returned chain has
/// policy-valid hops with non-decreasing timestamps all >= t_min; `budget`
/// caps the hop count (the bounded-depth baseline mode); without it the
/// (entity, arrival) Pareto bookkeeping guarantees termination on cycles.
inline EstFrontier est_frontier(const ProvenanceGraph& gp, EntityId start, Timestamp t_min,
                                std::optional<int> budget = std::nullopt,
                                const EstPolicySet& policies = EstPolicySet::all()) {
    if (start >= gp.entity_slots() || !gp.entity(start).alive)
        throw NotFoundError("est_frontier: unknown entity id " + std::to_string(start));

    EstFrontier fr;
    fr.start_ = start;
    fr.t_min_ = t_min;

    auto try_add = [&fr](EntityId ent, int hops, Timestamp arrival, std::int32_t parent,
                         const Event& via) -> std::int32_t {
        auto& list = fr.states_[ent];
        for (const auto& s : list)
            if (s.hops <= hops && s.arrival <= arrival) return -1;  // dominated
        std::int32_t idx = static_cast<std::int32_t>(fr.arena_.size());
        fr.arena_.push_back(EstFrontier::ArenaNode{ent, hops, arrival, parent, via});
        // drop states the new one dominates
        for (auto it = list.begin(); it != list.end();) {
            if (it->hops >= hops && it->arrival >= arrival) {
                fr.arena_[it->arena].retired = true;
                it = list.erase(it);
            } else {
                ++it;
            }
        }
        EstFrontier::State st{hops, arrival, idx};
        auto pos = std::lower_bound(list.begin(), list.end(), st,
                                    [](const auto& a, const auto& b) { return a.hops < b.hops; });
        list.insert(pos, st);
        return idx;
    };

    std::deque<std::int32_t> queue;
    queue.push_back(try_add(start, 0, t_min, -1, Event{}));

    while (!queue.empty()) {
        std::int32_t cur = queue.front();
        queue.pop_front();
        if (cur < 0 || fr.arena_[cur].retired) continue;
        const auto node = fr.arena_[cur];  // copy: arena may reallocate
        if (budget && node.hops >= *budget) continue;

        const Entity& ent = gp.entity(node.ent);
        if (ent.kind == EntityKind::process) {
            const auto& outs = gp.out_events(node.ent);
            for (std::size_t i = ProvenanceGraph::lower_bound_t(outs, node.arrival);
                 i < outs.size(); ++i) {
                const Event& ev = outs[i];
                auto p = policy_of(ev);
                if (!p || *p == EstPolicy::execute_load || *p == EstPolicy::read_taint) continue;
                if (!policies.on(*p)) continue;
                std::int32_t added = try_add(ev.object, node.hops + 1, ev.t, cur, ev);
                if (added >= 0) queue.push_back(added);
            }
        } else if (ent.kind == EntityKind::file) {
            const auto& ins = gp.in_events(node.ent);
            for (std::size_t i = ProvenanceGraph::lower_bound_t(ins, node.arrival);
                 i < ins.size(); ++i) {
                const Event& ev = ins[i];
                auto p = policy_of(ev);
                if (!p) continue;
                if (*p == EstPolicy::execute_load) {
                    if (!policies.on(*p)) continue;
                    if (ent.tag != EntityTag::Fd && ent.tag != EntityTag::Fe) continue;
                } else if (*p == EstPolicy::read_taint) {
                    if (!policies.on(*p)) continue;
                } else {
                    continue;  // write into the file does not move its label
                }
                std::int32_t added = try_add(ev.subject, node.hops + 1, ev.t, cur, ev);
                if (added >= 0) queue.push_back(added);
            }
        }
        // sockets and registry keys never forward the label
    }
    return fr;
}

}  // namespace provhunt
