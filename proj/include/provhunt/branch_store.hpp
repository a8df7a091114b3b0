#pragma once

/// @file branch_store.hpp
/// @brief Append-friendly single-file store for evicted suspicious branches.
///
/// Layout: 4-byte magic, then length-prefixed records:
///   u32 payload_len | u8 type (1 branch, 2 tombstone) | payload | u32 crc32
/// Branch payloads carry the root path plus the evicted subtree with all
/// entities keyed by uid string, an index key set, and free-step op triggers.
/// An in-memory directory (rebuilt by scanning on open) maps entity uids and
/// (query, op) signatures to live record ids; `compact` rewrites the file
/// dropping tombstoned and quarantined records.

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "provhunt/core.hpp"

namespace provhunt {

// -- binary codec helpers ----------------------------------------------------

namespace bin {

inline void put_u8(std::string& b, std::uint8_t v) { b.push_back(static_cast<char>(v)); }
inline void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_i64(std::string& b, std::int64_t v) { put_u64(b, static_cast<std::uint64_t>(v)); }
inline void put_str(std::string& b, const std::string& s) {
    put_u32(b, static_cast<std::uint32_t>(s.size()));
    b.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    bool fail = false;
    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const char* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    std::string str() {
        std::uint32_t n = u32();
        if (fail || pos + n > buf.size()) {
            fail = true;
            return {};
        }
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }

  private:
    static const char zeros_[8];
    const char* take(std::size_t n) {
        if (fail || pos + n > buf.size()) {
            fail = true;
            return zeros_;
        }
        const char* p = buf.data() + pos;
        pos += n;
        return p;
    }
};
inline const char Reader::zeros_[8] = {0, 0, 0, 0, 0, 0, 0, 0};

inline std::uint32_t crc32(const std::string& data) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xffffffffu;
    for (unsigned char ch : data) c = table[(c ^ ch) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

}  // namespace bin

// -- record model -------------------------------------------------------------

/// One tree node in transportable form; entities are uid strings so records
/// survive graph re-interning.
struct StoredNode {
    std::int32_t step_pos = -1;
    std::vector<std::string> binding;  // empty string = unbound
    std::string subj_uid, obj_uid;
    std::uint8_t op = 0;
    Timestamp t = 0;
    SeqNum seq = 0;
    std::vector<std::string> chain_nodes;
    struct ChainEvent {
        std::string subj, obj;
        std::uint8_t op;
        Timestamp t;
        SeqNum seq;
    };
    std::vector<ChainEvent> chain_events;
    std::int64_t score_num = 1, score_den = 1;
    Timestamp last_update = 0;
    std::uint32_t child_count = 0;  // used inside the preorder subtree list
};

struct BranchRecord {
    std::uint64_t id = 0;
    std::string query_id;
    Timestamp evicted_at = 0;
    std::vector<std::string> keys;          // uids that should trigger a reload
    std::vector<std::uint8_t> free_ops;     // ops that trigger regardless of keys
    std::vector<StoredNode> path;           // root .. parent of the subtree
    std::vector<StoredNode> subtree;        // preorder, child_count per node
};

namespace bin {

inline void put_node(std::string& b, const StoredNode& n) {
    put_u32(b, static_cast<std::uint32_t>(n.step_pos));
    put_u32(b, static_cast<std::uint32_t>(n.binding.size()));
    for (const auto& s : n.binding) put_str(b, s);
    put_str(b, n.subj_uid);
    put_str(b, n.obj_uid);
    put_u8(b, n.op);
    put_i64(b, n.t);
    put_u64(b, n.seq);
    put_u32(b, static_cast<std::uint32_t>(n.chain_nodes.size()));
    for (const auto& s : n.chain_nodes) put_str(b, s);
    put_u32(b, static_cast<std::uint32_t>(n.chain_events.size()));
    for (const auto& e : n.chain_events) {
        put_str(b, e.subj);
        put_str(b, e.obj);
        put_u8(b, e.op);
        put_i64(b, e.t);
        put_u64(b, e.seq);
    }
    put_i64(b, n.score_num);
    put_i64(b, n.score_den);
    put_i64(b, n.last_update);
    put_u32(b, n.child_count);
}

inline StoredNode get_node(Reader& r) {
    StoredNode n;
    n.step_pos = static_cast<std::int32_t>(r.u32());
    n.binding.resize(r.u32());
    if (n.binding.size() > 4096) {
        r.fail = true;
        return n;
    }
    for (auto& s : n.binding) s = r.str();
    n.subj_uid = r.str();
    n.obj_uid = r.str();
    n.op = r.u8();
    n.t = r.i64();
    n.seq = r.u64();
    std::uint32_t cn = r.u32();
    if (cn > 1u << 20) r.fail = true;
    for (std::uint32_t i = 0; !r.fail && i < cn; ++i) n.chain_nodes.push_back(r.str());
    std::uint32_t ce = r.u32();
    if (ce > 1u << 20) r.fail = true;
    for (std::uint32_t i = 0; !r.fail && i < ce; ++i) {
        StoredNode::ChainEvent e;
        e.subj = r.str();
        e.obj = r.str();
        e.op = r.u8();
        e.t = r.i64();
        e.seq = r.u64();
        n.chain_events.push_back(std::move(e));
    }
    n.score_num = r.i64();
    n.score_den = r.i64();
    n.last_update = r.i64();
    n.child_count = r.u32();
    return n;
}

}  // namespace bin

// -- the store ----------------------------------------------------------------

class BranchStore {
  public:
    static constexpr char kMagic[4] = {'P', 'H', 'B', '1'};

    explicit BranchStore(std::string path) : path_(std::move(path)) {
        if (!std::filesystem::exists(path_)) {
            std::ofstream out(path_, std::ios::binary);
            if (!out) throw StoreError("cannot create branch store: " + path_);
            out.write(kMagic, 4);
        }
        scan_();
    }

    std::uint64_t append(BranchRecord rec) {
        rec.id = next_id_++;
        std::string payload;
        encode_(rec, payload);
        write_record_(1, payload);
        offsets_[rec.id] = last_offset_;
        live_.insert(rec.id);
        index_(rec);
        return rec.id;
    }

    /// Reads a live record back. Corrupt payloads are quarantined (dropped
    /// from the directory) and reported via StoreError.
    BranchRecord load(std::uint64_t id) {
        auto it = offsets_.find(id);
        if (it == offsets_.end() || !live_.count(id))
            throw StoreError("branch record " + std::to_string(id) + " is not live");
        std::ifstream in(path_, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(it->second));
        std::uint32_t len = read_u32_(in);
        char type = 0;
        in.get(type);
        std::string payload(len, '\0');
        in.read(payload.data(), len);
        std::uint32_t crc = read_u32_(in);
        if (!in || type != 1 || bin::crc32(payload) != crc) {
            quarantine_(id);
            throw StoreError("branch record " + std::to_string(id) + " is corrupt; quarantined");
        }
        bin::Reader r{payload};
        BranchRecord rec = decode_(r);
        if (r.fail) {
            quarantine_(id);
            throw StoreError("branch record " + std::to_string(id) + " is corrupt; quarantined");
        }
        return rec;
    }

    void tombstone(std::uint64_t id) {
        if (!live_.count(id)) return;
        std::string payload;
        bin::put_u64(payload, id);
        write_record_(2, payload);
        drop_from_index_(id);
    }

    /// Record ids whose key set contains the uid.
    std::vector<std::uint64_t> records_by_key(const std::string& uid) const {
        std::vector<std::uint64_t> out;
        auto it = key_index_.find(uid);
        if (it == key_index_.end()) return out;
        for (std::uint64_t id : it->second)
            if (live_.count(id)) out.push_back(id);
        return out;
    }

    /// Record ids waiting on a free-seed step with this op.
    std::vector<std::uint64_t> records_by_free_op(std::uint8_t op) const {
        std::vector<std::uint64_t> out;
        auto it = free_op_index_.find(op);
        if (it == free_op_index_.end()) return out;
        for (std::uint64_t id : it->second)
            if (live_.count(id)) out.push_back(id);
        return out;
    }

    std::size_t live_count() const { return live_.size(); }
    std::size_t quarantined_count() const { return quarantined_; }

    /// Rewrites the file keeping only live records.
    void compact() {
        std::string tmp = path_ + ".compact";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw StoreError("cannot create " + tmp);
            out.write(kMagic, 4);
            for (std::uint64_t id : std::set<std::uint64_t>(live_.begin(), live_.end())) {
                BranchRecord rec = load(id);
                std::string payload;
                encode_(rec, payload);
                std::string framed;
                bin::put_u32(framed, static_cast<std::uint32_t>(payload.size()));
                bin::put_u8(framed, 1);
                framed += payload;
                bin::put_u32(framed, bin::crc32(payload));
                out.write(framed.data(), static_cast<std::streamsize>(framed.size()));
            }
        }
        std::filesystem::rename(tmp, path_);
        offsets_.clear();
        live_.clear();
        key_index_.clear();
        free_op_index_.clear();
        scan_();
    }

  private:
    void encode_(const BranchRecord& rec, std::string& b) const {
        bin::put_u64(b, rec.id);
        bin::put_str(b, rec.query_id);
        bin::put_i64(b, rec.evicted_at);
        bin::put_u32(b, static_cast<std::uint32_t>(rec.keys.size()));
        for (const auto& k : rec.keys) bin::put_str(b, k);
        bin::put_u32(b, static_cast<std::uint32_t>(rec.free_ops.size()));
        for (std::uint8_t op : rec.free_ops) bin::put_u8(b, op);
        bin::put_u32(b, static_cast<std::uint32_t>(rec.path.size()));
        for (const auto& n : rec.path) bin::put_node(b, n);
        bin::put_u32(b, static_cast<std::uint32_t>(rec.subtree.size()));
        for (const auto& n : rec.subtree) bin::put_node(b, n);
    }

    BranchRecord decode_(bin::Reader& r) const {
        BranchRecord rec;
        rec.id = r.u64();
        rec.query_id = r.str();
        rec.evicted_at = r.i64();
        std::uint32_t nk = r.u32();
        if (nk > 1u << 22) r.fail = true;
        for (std::uint32_t i = 0; !r.fail && i < nk; ++i) rec.keys.push_back(r.str());
        std::uint32_t nf = r.u32();
        if (nf > 64) r.fail = true;
        for (std::uint32_t i = 0; !r.fail && i < nf; ++i) rec.free_ops.push_back(r.u8());
        std::uint32_t np = r.u32();
        if (np > 1u << 20) r.fail = true;
        for (std::uint32_t i = 0; !r.fail && i < np; ++i) rec.path.push_back(bin::get_node(r));
        std::uint32_t ns = r.u32();
        if (ns > 1u << 20) r.fail = true;
        for (std::uint32_t i = 0; !r.fail && i < ns; ++i) rec.subtree.push_back(bin::get_node(r));
        return rec;
    }

    void write_record_(std::uint8_t type, const std::string& payload) {
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        if (!out) throw StoreError("cannot append to branch store: " + path_);
        out.seekp(0, std::ios::end);
        last_offset_ = static_cast<std::uint64_t>(out.tellp());
        std::string framed;
        bin::put_u32(framed, static_cast<std::uint32_t>(payload.size()));
        bin::put_u8(framed, type);
        framed += payload;
        bin::put_u32(framed, bin::crc32(payload));
        out.write(framed.data(), static_cast<std::streamsize>(framed.size()));
        if (!out) throw StoreError("write failure on branch store: " + path_);
    }

    void scan_() {
        std::ifstream in(path_, std::ios::binary);
        if (!in) throw StoreError("cannot open branch store: " + path_);
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, kMagic, 4) != 0)
            throw StoreError("bad branch store magic: " + path_);
        std::uint64_t file_size = std::filesystem::file_size(path_);
        std::uint64_t pos = 4;
        while (pos + 9 <= file_size) {
            in.seekg(static_cast<std::streamoff>(pos));
            std::uint32_t len = read_u32_(in);
            char type = 0;
            in.get(type);
            if (!in || pos + 9 + len > file_size) {
                ++quarantined_;  // truncated tail
                break;
            }
            std::string payload(len, '\0');
            in.read(payload.data(), len);
            std::uint32_t crc = read_u32_(in);
            if (!in) {
                ++quarantined_;
                break;
            }
            if (bin::crc32(payload) == crc) {
                if (type == 1) {
                    bin::Reader r{payload};
                    BranchRecord rec = decode_(r);
                    if (!r.fail) {
                        offsets_[rec.id] = pos;
                        live_.insert(rec.id);
                        index_(rec);
                        next_id_ = std::max(next_id_, rec.id + 1);
                    } else {
                        ++quarantined_;
                    }
                } else if (type == 2) {
                    bin::Reader r{payload};
                    drop_from_index_(r.u64());
                }
            } else {
                ++quarantined_;
            }
            pos += 9 + len;
        }
    }

    void index_(const BranchRecord& rec) {
        for (const auto& k : rec.keys) key_index_[k].push_back(rec.id);
        for (std::uint8_t op : rec.free_ops) free_op_index_[op].push_back(rec.id);
    }

    void drop_from_index_(std::uint64_t id) { live_.erase(id); }

    void quarantine_(std::uint64_t id) {
        live_.erase(id);
        ++quarantined_;
    }

    static std::uint32_t read_u32_(std::istream& in) {
        char b[4] = {0, 0, 0, 0};
        in.read(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }

    std::string path_;
    std::uint64_t next_id_ = 1;
    std::uint64_t last_offset_ = 0;
    std::unordered_map<std::uint64_t, std::uint64_t> offsets_;
    std::set<std::uint64_t> live_;
    std::unordered_map<std::string, std::vector<std::uint64_t>> key_index_;
    std::unordered_map<std::uint8_t, std::vector<std::uint64_t>> free_op_index_;
    std::size_t quarantined_ = 0;
};

}  // namespace provhunt
