#pragma once

/// @file tag_rules.hpp
/// @brief Ordered heuristic rules classifying file entities into Fa..Fg.

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "provhunt/core.hpp"

namespace provhunt {

enum class MatchKind : std::uint8_t { glob, extension, prefix };

inline std::optional<MatchKind> match_kind_from_string(std::string_view s) {
    if (s == "glob") return MatchKind::glob;
    if (s == "extension") return MatchKind::extension;
    if (s == "prefix") return MatchKind::prefix;
    return std::nullopt;
}

struct TagRule {
    EntityTag tag;
    MatchKind kind;
    std::string pattern;
};

/// `*` matches any run (including separators), `?` any single char.
inline bool glob_match(std::string_view pattern, std::string_view text) {
    std::size_t p = 0, t = 0;
    std::size_t star = std::string_view::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

/// Classification rules for file names. Rules are grouped per tag and the
/// tags are always tried in priority order Fa, Fb, Fc, Fd, Fe, Ff; the first
/// matching rule wins and Fg is the fallback. Processes, registry keys and
/// sockets classify by kind alone.
class TagRules {
  public:
    static TagRules defaults() {
        TagRules r;
        auto add = [&r](EntityTag t, MatchKind k, std::string p) {
            r.rules_.push_back(TagRule{t, k, std::move(p)});
        };
        // user/system credential and account material
        add(EntityTag::Fa, MatchKind::prefix, "/etc/passwd");
        add(EntityTag::Fa, MatchKind::prefix, "/etc/shadow");
        add(EntityTag::Fa, MatchKind::prefix, "/etc/sudoers");
        add(EntityTag::Fa, MatchKind::glob, "*boot.ini");
        add(EntityTag::Fa, MatchKind::glob, "*\\SAM");
        add(EntityTag::Fa, MatchKind::glob, "*/.ssh/*");
        // application configuration
        add(EntityTag::Fb, MatchKind::glob, "/etc/*.cnf");
        add(EntityTag::Fb, MatchKind::glob, "/etc/*.conf");
        add(EntityTag::Fb, MatchKind::glob, "/etc/*/*.cnf");
        add(EntityTag::Fb, MatchKind::glob, "/etc/*/*.conf");
        add(EntityTag::Fb, MatchKind::glob, "*/my.cnf");
        // logs
        add(EntityTag::Fc, MatchKind::prefix, "/var/log/");
        add(EntityTag::Fc, MatchKind::glob, "*/httpd/logs*");
        add(EntityTag::Fc, MatchKind::extension, ".log");
        // libraries
        add(EntityTag::Fd, MatchKind::extension, ".lib");
        add(EntityTag::Fd, MatchKind::extension, ".a");
        add(EntityTag::Fd, MatchKind::extension, ".dll");
        add(EntityTag::Fd, MatchKind::extension, ".so");
        add(EntityTag::Fd, MatchKind::glob, "*.so.*");
        // executables
        add(EntityTag::Fe, MatchKind::extension, ".exe");
        add(EntityTag::Fe, MatchKind::extension, ".vbs");
        add(EntityTag::Fe, MatchKind::extension, ".ps1");
        add(EntityTag::Fe, MatchKind::extension, ".bin");
        add(EntityTag::Fe, MatchKind::extension, ".com");
        add(EntityTag::Fe, MatchKind::extension, ".msi");
        add(EntityTag::Fe, MatchKind::extension, ".jar");
        // temporaries
        add(EntityTag::Ff, MatchKind::prefix, "/tmp/");
        add(EntityTag::Ff, MatchKind::prefix, "/var/tmp/");
        add(EntityTag::Ff, MatchKind::glob, "*\\Temp\\*");
        add(EntityTag::Ff, MatchKind::glob, "*%temp%*");
        return r;
    }

    /// File format: one `<tag> <glob|extension|prefix> <pattern>` per line,
    /// `#` comments and blank lines ignored. Only file tags accept rules.
    static TagRules load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open tag rule file: " + path);
        return parse(in, path);
    }

    static TagRules parse(std::istream& in, const std::string& origin = "<rules>") {
        TagRules r;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string_view v = trim(line);
            if (v.empty() || v.front() == '#') continue;
            std::istringstream fields{std::string(v)};
            std::string tag_s, kind_s, pattern;
            fields >> tag_s >> kind_s;
            std::getline(fields, pattern);
            pattern = std::string(trim(pattern));
            auto tag = tag_from_string(tag_s);
            auto kind = match_kind_from_string(kind_s);
            if (!tag || !is_file_tag(*tag) || !kind || pattern.empty())
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": bad tag rule '" + std::string(v) + "'");
            if (*kind == MatchKind::extension && pattern.front() != '.')
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": extension pattern must start with '.'");
            r.rules_.push_back(TagRule{*tag, *kind, pattern});
        }
        return r;
    }

    /// Deterministic total classification; never fails.
    EntityTag classify(EntityKind kind, std::string_view name) const {
        switch (kind) {
            case EntityKind::process: return EntityTag::P;
            case EntityKind::registry: return EntityTag::R;
            case EntityKind::socket: return EntityTag::S;
            case EntityKind::file: break;
        }
        static constexpr std::array<EntityTag, 6> priority = {
            EntityTag::Fa, EntityTag::Fb, EntityTag::Fc,
            EntityTag::Fd, EntityTag::Fe, EntityTag::Ff};
        for (EntityTag tag : priority) {
            for (const TagRule& rule : rules_) {
                if (rule.tag != tag) continue;
                if (matches(rule, name)) return tag;
            }
        }
        return EntityTag::Fg;
    }

    const std::vector<TagRule>& rules() const { return rules_; }

  private:
    static bool matches(const TagRule& rule, std::string_view name) {
        switch (rule.kind) {
            case MatchKind::glob:
                return glob_match(rule.pattern, name);
            case MatchKind::prefix:
                return name.substr(0, rule.pattern.size()) == rule.pattern;
            case MatchKind::extension: {
                if (name.size() < rule.pattern.size()) return false;
                std::string_view tail = name.substr(name.size() - rule.pattern.size());
                return std::equal(tail.begin(), tail.end(), rule.pattern.begin(),
                                  [](char a, char b) {
                                      return std::tolower(static_cast<unsigned char>(a)) ==
                                             std::tolower(static_cast<unsigned char>(b));
                                  });
            }
        }
        return false;
    }

    static std::string_view trim(std::string_view v) {
        while (!v.empty() && std::isspace(static_cast<unsigned char>(v.front()))) v.remove_prefix(1);
        while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
        return v;
    }

    std::vector<TagRule> rules_;
};

}  // namespace provhunt
