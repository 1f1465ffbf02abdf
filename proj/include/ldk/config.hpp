#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "ldk/rng.hpp"

namespace ldk {

// Sectioned key=value config. Values are typed (int, real, bool, string);
// serialization is canonical (sorted sections/keys, shortest round-trip
// number formatting) so parse -> serialize -> parse is a fixed point and the
// digest is stable. Consumers read keys through the typed getters; any key
// never consumed is rejected by require_all_consumed, which is how unknown
// keys are caught without a central schema.
class Config {
public:
    struct Value {
        enum class Type { integer, real, boolean, string };
        Type type = Type::string;
        int64_t i = 0;
        double d = 0.0;
        bool b = false;
        std::string s;
    };

    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            // drop inline comments, but leave # alone inside quoted strings
            bool in_quotes = false;
            for (size_t i = 0; i < line.size(); ++i) {
                char c = line[i];
                if (c == '\\' && in_quotes) {
                    ++i;
                } else if (c == '"') {
                    in_quotes = !in_quotes;
                } else if (c == '#' && !in_quotes) {
                    line.resize(i);
                    break;
                }
            }
            std::string t = strip(line);
            if (t.empty()) continue;
            if (t.front() == '[') {
                LDK_CHECK(t.back() == ']' && t.size() > 2, ErrKind::config, "config",
                          "bad section header at line " + std::to_string(lineno));
                section = strip(t.substr(1, t.size() - 2));
                LDK_CHECK(!section.empty(), ErrKind::config, "config",
                          "empty section name at line " + std::to_string(lineno));
                cfg.sections_[section];  // sections may be empty
                continue;
            }
            auto eq = t.find('=');
            LDK_CHECK(eq != std::string::npos, ErrKind::config, "config",
                      "expected key = value at line " + std::to_string(lineno));
            std::string key = strip(t.substr(0, eq));
            std::string val = strip(t.substr(eq + 1));
            LDK_CHECK(!key.empty() && !val.empty(), ErrKind::config, "config",
                      "empty key or value at line " + std::to_string(lineno));
            LDK_CHECK(!section.empty(), ErrKind::config, "config",
                      "key outside any [section] at line " + std::to_string(lineno));
            LDK_CHECK(!cfg.sections_[section].count(key), ErrKind::config, "config",
                      "duplicate key " + section + "." + key);
            cfg.sections_[section][key] = parse_value(val, lineno);
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        LDK_CHECK(f.good(), ErrKind::io, "config", "cannot open " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    std::string serialize() const {
        std::ostringstream out;
        bool first = true;
        for (const auto& [sec, kv] : sections_) {
            if (!first) out << "\n";
            first = false;
            out << "[" << sec << "]\n";
            for (const auto& [key, v] : kv) out << key << " = " << format_value(v) << "\n";
        }
        return out.str();
    }

    uint64_t digest() const { return detail::fnv1a64(serialize()); }

    std::string digest_hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest()));
        return buf;
    }

    bool has(const std::string& sec, const std::string& key) const {
        auto it = sections_.find(sec);
        return it != sections_.end() && it->second.count(key);
    }

    int64_t get_int(const std::string& sec, const std::string& key, int64_t dflt) const {
        const Value* v = find(sec, key);
        if (!v) return dflt;
        LDK_CHECK(v->type == Value::Type::integer, ErrKind::config, "config",
                  sec + "." + key + " must be an integer");
        return v->i;
    }

    double get_real(const std::string& sec, const std::string& key, double dflt) const {
        const Value* v = find(sec, key);
        if (!v) return dflt;
        if (v->type == Value::Type::integer) return static_cast<double>(v->i);
        LDK_CHECK(v->type == Value::Type::real, ErrKind::config, "config",
                  sec + "." + key + " must be a number");
        return v->d;
    }

    bool get_bool(const std::string& sec, const std::string& key, bool dflt) const {
        const Value* v = find(sec, key);
        if (!v) return dflt;
        LDK_CHECK(v->type == Value::Type::boolean, ErrKind::config, "config",
                  sec + "." + key + " must be true or false");
        return v->b;
    }

    std::string get_str(const std::string& sec, const std::string& key,
                        const std::string& dflt) const {
        const Value* v = find(sec, key);
        if (!v) return dflt;
        LDK_CHECK(v->type == Value::Type::string, ErrKind::config, "config",
                  sec + "." + key + " must be a quoted string");
        return v->s;
    }

    // Sets (or overrides) a key from "section.key=value" text, the CLI
    // --set syntax. Value type is inferred like file parsing, except that an
    // unquoted non-numeric value becomes a string — shell users should not
    // have to escape quotes for --set train.task=sr.
    void set_override(const std::string& spec) {
        auto eq = spec.find('=');
        LDK_CHECK(eq != std::string::npos, ErrKind::config, "config",
                  "--set expects section.key=value, got '" + spec + "'");
        std::string path = strip(spec.substr(0, eq));
        std::string val = strip(spec.substr(eq + 1));
        auto dot = path.find('.');
        LDK_CHECK(dot != std::string::npos && dot > 0 && dot + 1 < path.size(), ErrKind::config,
                  "config", "--set expects section.key=value, got '" + spec + "'");
        Value v;
        try {
            v = parse_value(val, 0);
        } catch (const Error&) {
            v.type = Value::Type::string;
            v.s = val;
        }
        sections_[path.substr(0, dot)][path.substr(dot + 1)] = v;
    }

    void set_int(const std::string& sec, const std::string& key, int64_t v) {
        Value val;
        val.type = Value::Type::integer;
        val.i = v;
        sections_[sec][key] = val;
    }
    void set_real(const std::string& sec, const std::string& key, double v) {
        Value val;
        val.type = Value::Type::real;
        val.d = v;
        sections_[sec][key] = val;
    }
    void set_bool(const std::string& sec, const std::string& key, bool v) {
        Value val;
        val.type = Value::Type::boolean;
        val.b = v;
        sections_[sec][key] = val;
    }
    void set_str(const std::string& sec, const std::string& key, const std::string& v) {
        Value val;
        val.type = Value::Type::string;
        val.s = v;
        sections_[sec][key] = val;
    }

    // Rejects keys that no consumer read. Call once after all config-driven
    // construction is done.
    void require_all_consumed() const {
        std::string leftover;
        for (const auto& [sec, kv] : sections_)
            for (const auto& [key, v] : kv)
                if (!consumed_.count(sec + "." + key)) leftover += " " + sec + "." + key;
        LDK_CHECK(leftover.empty(), ErrKind::config, "config", "unknown keys:" + leftover);
    }

private:
    const Value* find(const std::string& sec, const std::string& key) const {
        auto it = sections_.find(sec);
        if (it == sections_.end()) return nullptr;
        auto jt = it->second.find(key);
        if (jt == it->second.end()) return nullptr;
        consumed_.insert(sec + "." + key);
        return &jt->second;
    }

    static std::string strip(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    static Value parse_value(const std::string& v, int lineno) {
        Value out;
        if (v == "true" || v == "false") {
            out.type = Value::Type::boolean;
            out.b = (v == "true");
            return out;
        }
        if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
            out.type = Value::Type::string;
            out.s = unescape(v.substr(1, v.size() - 2), lineno);
            return out;
        }
        {
            int64_t i = 0;
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
            if (ec == std::errc() && p == v.data() + v.size()) {
                out.type = Value::Type::integer;
                out.i = i;
                return out;
            }
        }
        {
            double d = 0.0;
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
            if (ec == std::errc() && p == v.data() + v.size()) {
                out.type = Value::Type::real;
                out.d = d;
                return out;
            }
        }
        fail(ErrKind::config, "config",
             "unparseable value '" + v + "' at line " + std::to_string(lineno) +
                 " (strings must be quoted)");
    }

    static std::string unescape(const std::string& s, int lineno) {
        std::string out;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '\\') {
                LDK_CHECK(i + 1 < s.size(), ErrKind::config, "config",
                          "dangling escape at line " + std::to_string(lineno));
                char c = s[++i];
                LDK_CHECK(c == '"' || c == '\\', ErrKind::config, "config",
                          "unsupported escape at line " + std::to_string(lineno));
                out += c;
            } else {
                out += s[i];
            }
        }
        return out;
    }

    static std::string escape(const std::string& s) {
        std::string out;
        for (char c : s) {
            if (c == '"' || c == '\\') out += '\\';
            out += c;
        }
        return out;
    }

    static std::string format_value(const Value& v) {
        switch (v.type) {
            case Value::Type::integer:
                return std::to_string(v.i);
            case Value::Type::boolean:
                return v.b ? "true" : "false";
            case Value::Type::string:
                return "\"" + escape(v.s) + "\"";
            case Value::Type::real: {
                char buf[64];
                auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v.d);
                std::string s(buf, p);
                // keep reals distinguishable from integers after round-trip
                if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
                    s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
                    s += ".0";
                return s;
            }
        }
        return "";
    }

    std::map<std::string, std::map<std::string, Value>> sections_;
    mutable std::set<std::string> consumed_;
};

}  // namespace ldk
