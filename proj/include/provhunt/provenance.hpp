#pragma once

/// @file provenance.hpp
/// @brief Deduplicated, pruned provenance graph over a streaming event input.
///
/// Events are buffered in a pending window and commit once the watermark has
/// advanced two reorder windows past them. Runs of consecutive same-op events
/// between one (subject, object) pair collapse to a single edge carrying the
/// run's latest timestamp; a run closes when a different op intervenes or the
/// intra-run gap reaches the reorder window. Committed edges never change,
/// which makes the final graph independent of how the stream was batched.

#include <map>
#include <regex>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "provhunt/core.hpp"
#include "provhunt/event_codec.hpp"
#include "provhunt/tag_rules.hpp"

namespace provhunt {

struct IngestStats {
    std::size_t accepted = 0;      // edges committed
    std::size_t deduplicated = 0;  // events folded into a run
    std::size_t skipped = 0;       // late or replayed events
    std::size_t pending = 0;       // still buffered after the call

    IngestStats& operator+=(const IngestStats& o) {
        accepted += o.accepted;
        deduplicated += o.deduplicated;
        skipped += o.skipped;
        pending = o.pending;
        return *this;
    }
};

struct GraphStats {
    std::size_t entities = 0;
    std::size_t edges = 0;
    std::size_t accepted = 0;
    std::size_t deduplicated = 0;
    std::size_t skipped = 0;
    std::size_t pruned = 0;
    std::size_t pending = 0;
    Timestamp watermark = -1;
};

enum class EdgeDir : std::uint8_t { out, in };

class ProvenanceGraph {
  public:
    explicit ProvenanceGraph(TagRules rules = TagRules::defaults(),
                             Timestamp reorder_window = kDefaultReorderWindow)
        : rules_(std::move(rules)), window_(reorder_window) {}

    // -- entities -----------------------------------------------------------

    /// First sight of a uid declares and classifies it; later sights are
    /// no-ops unless the entity was pruned, in which case it is re-declared.
    EntityId declare(const Declaration& d) {
        auto it = uid_index_.find(d.uid);
        if (it != uid_index_.end()) {
            Entity& e = entities_[it->second];
            if (!e.alive) {
                e.kind = d.kind;
                e.name = d.name;
                e.tag = rules_.classify(d.kind, d.name);
                e.alive = true;
                index_entity(it->second);
                declared_delta_.push_back(it->second);
            }
            return it->second;
        }
        EntityId id = static_cast<EntityId>(entities_.size());
        Entity e;
        e.uid = d.uid;
        e.kind = d.kind;
        e.name = d.name;
        e.tag = rules_.classify(d.kind, d.name);
        entities_.push_back(std::move(e));
        out_.emplace_back();
        in_.emplace_back();
        pending_refs_.push_back(0);
        uid_index_.emplace(d.uid, id);
        index_entity(id);
        declared_delta_.push_back(id);
        return id;
    }

    EntityId find_uid(const std::string& uid) const {
        auto it = uid_index_.find(uid);
        return it == uid_index_.end() ? kNoEntity : it->second;
    }

    const Entity& entity(EntityId id) const { return entities_.at(id); }
    std::size_t entity_slots() const { return entities_.size(); }

    std::size_t entity_count() const {
        std::size_t n = 0;
        for (const Entity& e : entities_)
            if (e.alive) ++n;
        return n;
    }

    // -- ingestion ----------------------------------------------------------

    IngestStats ingest(std::span<const ParsedEvent> batch) {
        IngestStats before = snapshot_();
        for (const ParsedEvent& pe : batch) {
            if (pe.seq <= max_seq_ || pe.t < watermark_ - window_) {
                ++skipped_;
                continue;
            }
            EntityId s = declare(pe.subject);
            EntityId o = declare(pe.object);
            Pending p{s, o, pe.op};
            Key key{pe.t, pe.seq};
            pending_.emplace(key, p);
            pair_pending_[pair_key(s, o)].insert(key);
            ++pending_refs_[s];
            ++pending_refs_[o];
            max_seq_ = pe.seq;
            if (pe.t > watermark_) watermark_ = pe.t;
        }
        commit_ready_(watermark_ - 2 * window_);
        return delta_(before);
    }

    /// End-of-stream: commits everything still pending.
    IngestStats flush() {
        IngestStats before = snapshot_();
        commit_ready_(std::numeric_limits<Timestamp>::max());
        return delta_(before);
    }

    /// Removes every declared entity with no committed edge and no pending
    /// event. Returns how many were removed.
    std::size_t prune_isolated() {
        std::size_t removed = 0;
        for (EntityId id = 0; id < entities_.size(); ++id) {
            Entity& e = entities_[id];
            if (!e.alive) continue;
            if (out_[id].empty() && in_[id].empty() && pending_refs_[id] == 0) {
                e.alive = false;
                unindex_entity(id);
                ++removed;
            }
        }
        pruned_ += removed;
        return removed;
    }

    // -- queries ------------------------------------------------------------

    /// All alive entities with the tag whose name matches the pattern
    /// (unanchored search); no pattern means tag filter only. Sorted by id.
    std::vector<EntityId> candidates(EntityTag tag, const std::regex* pattern = nullptr) const {
        std::vector<EntityId> out;
        auto it = tag_index_.find(tag);
        if (it == tag_index_.end()) return out;
        for (EntityId id : it->second) {
            const Entity& e = entities_[id];
            if (!e.alive) continue;
            if (pattern && !std::regex_search(e.name, *pattern)) continue;
            out.push_back(id);
        }
        return out;
    }

    /// Committed events incident on `node` in the given direction with
    /// t >= t_min, time-ordered. Unknown or pruned nodes are an error.
    std::vector<Event> events_between(EntityId node, EdgeDir dir, Timestamp t_min) const {
        if (node >= entities_.size() || !entities_[node].alive)
            throw NotFoundError("unknown entity id " + std::to_string(node));
        const std::vector<Event>& list = dir == EdgeDir::out ? out_[node] : in_[node];
        auto first = std::lower_bound(list.begin(), list.end(), t_min,
                                      [](const Event& e, Timestamp t) { return e.t < t; });
        return std::vector<Event>(first, list.end());
    }

    const std::vector<Event>& out_events(EntityId id) const { return out_.at(id); }
    const std::vector<Event>& in_events(EntityId id) const { return in_.at(id); }

    /// First index into out/in events with t >= t_min.
    static std::size_t lower_bound_t(const std::vector<Event>& list, Timestamp t_min) {
        auto it = std::lower_bound(list.begin(), list.end(), t_min,
                                   [](const Event& e, Timestamp t) { return e.t < t; });
        return static_cast<std::size_t>(it - list.begin());
    }

    Timestamp watermark() const { return watermark_; }
    Timestamp reorder_window() const { return window_; }
    SeqNum max_seq() const { return max_seq_; }
    std::size_t edge_count() const { return edges_; }
    const TagRules& tag_rules() const { return rules_; }

    GraphStats stats() const {
        GraphStats s;
        s.entities = entity_count();
        s.edges = edges_;
        s.accepted = accepted_;
        s.deduplicated = dedup_;
        s.skipped = skipped_;
        s.pruned = pruned_;
        s.pending = pending_.size();
        s.watermark = watermark_;
        return s;
    }

    /// Edges committed since the last call; consumed by the incremental layer.
    std::vector<Event> take_committed_delta() { return std::exchange(committed_delta_, {}); }
    /// Entities declared or revived since the last call.
    std::vector<EntityId> take_declared_delta() { return std::exchange(declared_delta_, {}); }

  private:
    struct Pending {
        EntityId subject, object;
        EventType op;
    };
    using Key = std::pair<Timestamp, SeqNum>;

    static std::uint64_t pair_key(EntityId s, EntityId o) {
        return (static_cast<std::uint64_t>(s) << 32) | o;
    }

    void index_entity(EntityId id) { tag_index_[entities_[id].tag].insert(id); }
    void unindex_entity(EntityId id) { tag_index_[entities_[id].tag].erase(id); }

    IngestStats snapshot_() const {
        return IngestStats{accepted_, dedup_, skipped_, pending_.size()};
    }
    IngestStats delta_(const IngestStats& before) const {
        IngestStats d;
        d.accepted = accepted_ - before.accepted;
        d.deduplicated = dedup_ - before.deduplicated;
        d.skipped = skipped_ - before.skipped;
        d.pending = pending_.size();
        return d;
    }

    void commit_ready_(Timestamp threshold) {
        while (!pending_.empty()) {
            auto first = pending_.begin();
            if (first->first.first > threshold) break;
            Key key = first->first;
            Pending p = first->second;
            pending_.erase(first);
            auto pair_it = pair_pending_.find(pair_key(p.subject, p.object));
            pair_it->second.erase(key);
            --pending_refs_[p.subject];
            --pending_refs_[p.object];

            // fold into the run successor while it is the same op within the
            // window; the successor carries the run's latest timestamp forward
            bool folded = false;
            if (!pair_it->second.empty()) {
                auto succ = pair_it->second.upper_bound(key);
                if (succ != pair_it->second.end()) {
                    const Pending& next = pending_.at(*succ);
                    if (next.op == p.op && succ->first - key.first < window_) folded = true;
                }
            }
            if (pair_it->second.empty()) pair_pending_.erase(pair_it);
            if (folded) {
                ++dedup_;
                continue;
            }
            Event ev{p.subject, p.object, p.op, key.first, key.second};
            out_[p.subject].push_back(ev);
            in_[p.object].push_back(ev);
            committed_delta_.push_back(ev);
            ++edges_;
            ++accepted_;
        }
    }

    TagRules rules_;
    Timestamp window_;

    std::vector<Entity> entities_;
    std::unordered_map<std::string, EntityId> uid_index_;
    std::map<EntityTag, std::set<EntityId>> tag_index_;
    std::vector<std::vector<Event>> out_, in_;
    std::vector<std::uint32_t> pending_refs_;

    std::map<Key, Pending> pending_;
    std::unordered_map<std::uint64_t, std::set<Key>> pair_pending_;
    std::vector<Event> committed_delta_;
    std::vector<EntityId> declared_delta_;

    Timestamp watermark_ = -1;
    SeqNum max_seq_ = 0;
    std::size_t edges_ = 0;
    std::size_t accepted_ = 0, dedup_ = 0, skipped_ = 0, pruned_ = 0;
};

}  // namespace provhunt
