#pragma once

/// @file core.hpp
/// @brief Base vocabulary: entity tags, event taxonomy, events, entities, exact scores.

#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace provhunt {

using Timestamp = std::int64_t;  // microseconds since epoch
using SeqNum = std::uint64_t;    // strictly increasing per ingested record
using EntityId = std::uint32_t;  // interned graph index

inline constexpr EntityId kNoEntity = 0xffffffffu;
inline constexpr Timestamp kMicrosPerSecond = 1000000;
inline constexpr Timestamp kDefaultReorderWindow = 5 * kMicrosPerSecond;

// ---------------------------------------------------------------------------
// Errors

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Entities

enum class EntityKind : std::uint8_t { process, file, registry, socket };

/// Semantic label of a provenance node. Processes, registry keys and sockets
/// map 1:1; files fall into Fa..Fg by an ordered heuristic rule list with Fg
/// as the catch-all.
enum class EntityTag : std::uint8_t { P, Fa, Fb, Fc, Fd, Fe, Ff, Fg, R, S };

inline constexpr std::size_t kEntityTagCount = 10;

inline bool is_file_tag(EntityTag t) {
    return t >= EntityTag::Fa && t <= EntityTag::Fg;
}

inline const char* to_string(EntityKind k) {
    switch (k) {
        case EntityKind::process: return "process";
        case EntityKind::file: return "file";
        case EntityKind::registry: return "registry";
        case EntityKind::socket: return "socket";
    }
    return "?";
}

inline std::optional<EntityKind> kind_from_string(std::string_view s) {
    if (s == "process") return EntityKind::process;
    if (s == "file") return EntityKind::file;
    if (s == "registry") return EntityKind::registry;
    if (s == "socket") return EntityKind::socket;
    return std::nullopt;
}

inline const char* to_string(EntityTag t) {
    switch (t) {
        case EntityTag::P: return "P";
        case EntityTag::Fa: return "Fa";
        case EntityTag::Fb: return "Fb";
        case EntityTag::Fc: return "Fc";
        case EntityTag::Fd: return "Fd";
        case EntityTag::Fe: return "Fe";
        case EntityTag::Ff: return "Ff";
        case EntityTag::Fg: return "Fg";
        case EntityTag::R: return "R";
        case EntityTag::S: return "S";
    }
    return "?";
}

inline std::optional<EntityTag> tag_from_string(std::string_view s) {
    static constexpr std::array<EntityTag, kEntityTagCount> all = {
        EntityTag::P,  EntityTag::Fa, EntityTag::Fb, EntityTag::Fc, EntityTag::Fd,
        EntityTag::Fe, EntityTag::Ff, EntityTag::Fg, EntityTag::R,  EntityTag::S};
    for (EntityTag t : all)
        if (s == to_string(t)) return t;
    return std::nullopt;
}

/// Kind an entity must have to legally carry a tag.
inline EntityKind kind_of_tag(EntityTag t) {
    if (t == EntityTag::P) return EntityKind::process;
    if (t == EntityTag::R) return EntityKind::registry;
    if (t == EntityTag::S) return EntityKind::socket;
    return EntityKind::file;
}

/// A provenance-graph node. Identity is the uid; the name carries the
/// path / image / address and drives tag classification and pattern matching.
struct Entity {
    std::string uid;
    EntityKind kind = EntityKind::file;
    std::string name;
    EntityTag tag = EntityTag::Fg;
    std::map<std::string, std::string> attrs;  // open key/value side channel
    bool alive = true;
};

// ---------------------------------------------------------------------------
// Events

/// Audit event taxonomy. The first twelve rows form the fixed classification
/// table (subject kind, object kind, information-flow direction); `read` is
/// the additional P→F backward row used by label propagation.
enum class EventType : std::uint8_t {
    accept,
    inject,
    clone,
    connect,
    execute,
    fork,
    load,
    write,
    receive,
    send,
    exit,
    unlink,
    read,
};

inline constexpr std::size_t kEventTypeCount = 13;
inline constexpr std::size_t kEventTableRows = 12;  // rows of the fixed table

enum class FlowDirection : std::uint8_t { forward, backward };

struct EventTypeInfo {
    EventType op;
    EntityKind subject;
    EntityKind object;
    FlowDirection direction;
    const char* name;
};

inline constexpr std::array<EventTypeInfo, kEventTypeCount> kEventTable = {{
    {EventType::accept, EntityKind::process, EntityKind::socket, FlowDirection::backward, "accept"},
    {EventType::inject, EntityKind::process, EntityKind::process, FlowDirection::forward, "inject"},
    {EventType::clone, EntityKind::process, EntityKind::process, FlowDirection::forward, "clone"},
    {EventType::connect, EntityKind::process, EntityKind::socket, FlowDirection::forward, "connect"},
    {EventType::execute, EntityKind::process, EntityKind::file, FlowDirection::forward, "execute"},
    {EventType::fork, EntityKind::process, EntityKind::process, FlowDirection::forward, "fork"},
    {EventType::load, EntityKind::process, EntityKind::file, FlowDirection::backward, "load"},
    {EventType::write, EntityKind::process, EntityKind::file, FlowDirection::forward, "write"},
    {EventType::receive, EntityKind::process, EntityKind::socket, FlowDirection::backward, "receive"},
    {EventType::send, EntityKind::process, EntityKind::socket, FlowDirection::forward, "send"},
    {EventType::exit, EntityKind::process, EntityKind::process, FlowDirection::forward, "exit"},
    {EventType::unlink, EntityKind::process, EntityKind::file, FlowDirection::forward, "unlink"},
    {EventType::read, EntityKind::process, EntityKind::file, FlowDirection::backward, "read"},
}};

inline const EventTypeInfo& event_info(EventType op) {
    return kEventTable[static_cast<std::size_t>(op)];
}

inline const char* to_string(EventType op) { return event_info(op).name; }

inline std::optional<EventType> op_from_string(std::string_view s) {
    for (const auto& row : kEventTable)
        if (s == row.name) return row.op;
    return std::nullopt;
}

inline FlowDirection event_direction(EventType op) { return event_info(op).direction; }
inline EntityKind subject_kind(EventType op) { return event_info(op).subject; }
inline EntityKind object_kind(EventType op) { return event_info(op).object; }

/// One committed provenance edge: subject acts on object at time t.
/// seq breaks ties between equal timestamps and is unique per record.
struct Event {
    EntityId subject = kNoEntity;
    EntityId object = kNoEntity;
    EventType op = EventType::write;
    Timestamp t = 0;
    SeqNum seq = 0;

    friend bool operator==(const Event& a, const Event& b) {
        return a.subject == b.subject && a.object == b.object && a.op == b.op &&
               a.t == b.t && a.seq == b.seq;
    }
};

struct EventOrder {
    bool operator()(const Event& a, const Event& b) const {
        if (a.t != b.t) return a.t < b.t;
        return a.seq < b.seq;
    }
};

// ---------------------------------------------------------------------------
// Exact scores

/// Small exact rational. Alignment scores are sums of reciprocals of short
/// path lengths; keeping them exact makes alert ordering and cross-checks
/// against the reference enumerator deterministic.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    Rational() = default;
    Rational(std::int64_t n, std::int64_t d) : num(n), den(d) { reduce(); }
    static Rational reciprocal(std::int64_t d) { return Rational(1, d); }

    void reduce() {
        if (den < 0) {
            num = -num;
            den = -den;
        }
        std::int64_t g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
        if (num == 0) den = 1;
    }

    Rational& operator+=(const Rational& o) {
        using I = __int128;
        I n = static_cast<I>(num) * o.den + static_cast<I>(o.num) * den;
        I d = static_cast<I>(den) * o.den;
        // chains and sequences are short; reduced values stay far below 2^63
        Rational r;
        I g = gcd128(n < 0 ? -n : n, d);
        if (g > 1) {
            n /= g;
            d /= g;
        }
        r.num = static_cast<std::int64_t>(n);
        r.den = static_cast<std::int64_t>(d);
        *this = r;
        return *this;
    }
    friend Rational operator+(Rational a, const Rational& b) { return a += b; }

    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num == b.num && a.den == b.den;
    }
    friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }
    friend bool operator<(const Rational& a, const Rational& b) {
        using I = __int128;
        return static_cast<I>(a.num) * b.den < static_cast<I>(b.num) * a.den;
    }
    friend bool operator>(const Rational& a, const Rational& b) { return b < a; }
    friend bool operator<=(const Rational& a, const Rational& b) { return !(b < a); }
    friend bool operator>=(const Rational& a, const Rational& b) { return !(a < b); }

    /// Fixed six-decimal rendering, round half away from zero.
    std::string to_decimal() const {
        std::int64_t n = num < 0 ? -num : num;
        std::int64_t whole = n / den;
        std::int64_t rem = n % den;
        std::int64_t frac = 0;
        for (int i = 0; i < 6; ++i) {
            rem *= 10;
            frac = frac * 10 + rem / den;
            rem %= den;
        }
        if (2 * rem >= den) {
            ++frac;
            if (frac == 1000000) {
                frac = 0;
                ++whole;
            }
        }
        std::string out = num < 0 && (whole || frac) ? "-" : "";
        out += std::to_string(whole);
        std::string f = std::to_string(frac);
        out += '.';
        out += std::string(6 - f.size(), '0');
        out += f;
        return out;
    }

  private:
    static __int128 gcd128(__int128 a, __int128 b) {
        while (b) {
            __int128 t = a % b;
            a = b;
            b = t;
        }
        return a;
    }
};

}  // namespace provhunt
