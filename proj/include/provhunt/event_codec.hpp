#pragma once

/// @file event_codec.hpp
/// @brief Line-oriented audit record codec.
///
/// One record per line, tab-separated, fixed field order:
///   t  s  s_kind  s_name  o  o_kind  o_name  op
/// Tabs, newlines and backslashes inside fields are backslash-escaped.
/// Entity declarations are implicit: the first sight of a uid declares it.

#include <charconv>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "provhunt/core.hpp"

namespace provhunt {

struct Declaration {
    std::string uid;
    EntityKind kind;
    std::string name;
};

/// A semantically validated record, prior to graph interning.
struct ParsedEvent {
    Declaration subject;
    Declaration object;
    EventType op;
    Timestamp t = 0;
    SeqNum seq = 0;
};

struct ParseIssue {
    enum class Kind { malformed, unsupported };
    Kind kind;
    std::size_t line = 0;
    std::string field;
    std::string message;
};

/// Per-line outcome. Unsupported records (unknown op, kind mismatch,
/// illegal self-event) still declare their entities; malformed records
/// declare nothing.
struct ParseResult {
    std::optional<ParsedEvent> event;
    std::vector<Declaration> declarations;
    std::optional<ParseIssue> issue;
};

struct ParseStats {
    std::size_t records = 0;
    std::size_t malformed = 0;
    std::size_t unsupported = 0;
};

inline std::string escape_field(std::string_view v) {
    std::string out;
    out.reserve(v.size());
    for (char c : v) {
        switch (c) {
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\\': out += "\\\\"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string unescape_field(std::string_view v) {
    std::string out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == '\\' && i + 1 < v.size()) {
            char c = v[++i];
            out += c == 't' ? '\t' : c == 'n' ? '\n' : c;
        } else {
            out += v[i];
        }
    }
    return out;
}

inline std::string serialize_record(const ParsedEvent& ev) {
    std::string out;
    out += std::to_string(ev.t);
    out += '\t';
    out += escape_field(ev.subject.uid);
    out += '\t';
    out += to_string(ev.subject.kind);
    out += '\t';
    out += escape_field(ev.subject.name);
    out += '\t';
    out += escape_field(ev.object.uid);
    out += '\t';
    out += to_string(ev.object.kind);
    out += '\t';
    out += escape_field(ev.object.name);
    out += '\t';
    out += to_string(ev.op);
    return out;
}

/// Stateful reader: assigns strictly increasing sequence numbers across
/// batches and files so replayed input is detectable downstream.
class EventReader {
  public:
    ParseResult parse_line(std::string_view line, std::size_t line_no) {
        ParseResult res;
        std::array<std::string, 8> fields;
        std::size_t n = 0;
        std::string cur;
        for (std::size_t i = 0; i < line.size(); ++i) {
            char c = line[i];
            if (c == '\\' && i + 1 < line.size()) {
                cur += c;
                cur += line[++i];
            } else if (c == '\t') {
                if (n < fields.size()) fields[n] = cur;
                ++n;
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (n < fields.size()) fields[n] = cur;
        ++n;
        if (n != 8) {
            res.issue = ParseIssue{ParseIssue::Kind::malformed, line_no, "record",
                                   "expected 8 tab-separated fields, got " + std::to_string(n)};
            return res;
        }

        Timestamp t = 0;
        {
            const std::string& f = fields[0];
            auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), t);
            if (ec != std::errc() || p != f.data() + f.size() || t < 0) {
                res.issue = ParseIssue{ParseIssue::Kind::malformed, line_no, "t",
                                       "bad timestamp '" + f + "'"};
                return res;
            }
        }
        Declaration subj{unescape_field(fields[1]), EntityKind::process, unescape_field(fields[3])};
        Declaration obj{unescape_field(fields[4]), EntityKind::file, unescape_field(fields[6])};
        auto s_kind = kind_from_string(fields[2]);
        auto o_kind = kind_from_string(fields[5]);
        if (subj.uid.empty() || obj.uid.empty() || !s_kind || !o_kind || subj.name.empty() ||
            obj.name.empty()) {
            const char* field = subj.uid.empty()   ? "s"
                                : !s_kind          ? "s_kind"
                                : subj.name.empty() ? "s_name"
                                : obj.uid.empty()  ? "o"
                                : !o_kind          ? "o_kind"
                                                   : "o_name";
            res.issue = ParseIssue{ParseIssue::Kind::malformed, line_no, field, "empty or invalid"};
            return res;
        }
        subj.kind = *s_kind;
        obj.kind = *o_kind;

        auto op = op_from_string(fields[7]);
        if (!op) {
            res.declarations = {subj, obj};
            res.issue = ParseIssue{ParseIssue::Kind::unsupported, line_no, "op",
                                   "unknown op '" + fields[7] + "'"};
            return res;
        }
        if (subject_kind(*op) != subj.kind ||
            (object_kind(*op) == EntityKind::file ? obj.kind != EntityKind::file
                                                  : object_kind(*op) != obj.kind)) {
            res.declarations = {subj, obj};
            res.issue = ParseIssue{ParseIssue::Kind::unsupported, line_no, "op",
                                   std::string("op '") + to_string(*op) +
                                       "' incompatible with entity kinds"};
            return res;
        }
        if (subj.uid == obj.uid && *op != EventType::exit) {
            res.declarations = {subj, obj};
            res.issue = ParseIssue{ParseIssue::Kind::unsupported, line_no, "o",
                                   "self-directed event only permitted for exit"};
            return res;
        }

        ParsedEvent ev;
        ev.subject = subj;
        ev.object = obj;
        ev.op = *op;
        ev.t = t;
        ev.seq = ++seq_;
        res.event = ev;
        res.declarations = {subj, obj};
        return res;
    }

    /// Parses a whole stream; blank lines and '#' comments are skipped.
    std::vector<ParseResult> parse_stream(std::istream& in, ParseStats& stats) {
        std::vector<ParseResult> out;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            ++stats.records;
            ParseResult r = parse_line(line, line_no);
            if (r.issue) {
                if (r.issue->kind == ParseIssue::Kind::malformed)
                    ++stats.malformed;
                else
                    ++stats.unsupported;
            }
            out.push_back(std::move(r));
        }
        return out;
    }

    std::vector<ParseResult> parse_file(const std::string& path, ParseStats& stats) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open event file: " + path);
        return parse_stream(in, stats);
    }

    SeqNum last_seq() const { return seq_; }

  private:
    SeqNum seq_ = 0;
};

}  // namespace provhunt
