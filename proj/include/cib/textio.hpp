#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cib/error.hpp"

// Line-oriented "key value..." documents used for kernels, triggers, plans,
// manifests and checkpoints. Reals are printed with max_digits10 so that
// parsing restores the exact bit pattern.

namespace cib::textio {

template <class T>
std::string format_real(T value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", std::numeric_limits<T>::max_digits10,
                  static_cast<double>(value));
    return buf;
}

template <class T>
T parse_real(std::string_view token) {
    T value{};
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size())
        throw DataError("cannot parse real number '" + std::string(token) + "'");
    return value;
}

template <class T>
T parse_integer(std::string_view token) {
    T value{};
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size())
        throw DataError("cannot parse integer '" + std::string(token) + "'");
    return value;
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Ordered key -> whitespace-separated tokens. Keys may repeat (e.g. one "trace"
/// line per learning round), so lookups return the first occurrence.
class Document {
public:
    void add(std::string key, std::string value) { lines_.emplace_back(std::move(key), std::move(value)); }
    template <class T>
    void add_real(std::string key, T value) { add(std::move(key), format_real(value)); }
    template <class It>
    void add_reals(std::string key, It first, It last) {
        std::string v;
        for (auto it = first; it != last; ++it) {
            if (!v.empty()) v += ' ';
            v += format_real(*it);
        }
        add(std::move(key), std::move(v));
    }

    bool has(std::string_view key) const {
        for (const auto& [k, v] : lines_)
            if (k == key) return true;
        return false;
    }
    const std::string& get(std::string_view key) const {
        for (const auto& [k, v] : lines_)
            if (k == key) return v;
        throw DataError("missing key '" + std::string(key) + "'");
    }
    std::vector<std::string> get_all(std::string_view key) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : lines_)
            if (k == key) out.push_back(v);
        return out;
    }
    template <class T>
    T get_real(std::string_view key) const { return parse_real<T>(get(key)); }
    template <class T>
    T get_integer(std::string_view key) const { return parse_integer<T>(get(key)); }
    template <class T>
    std::vector<T> get_reals(std::string_view key) const { return split_reals<T>(get(key)); }

    template <class T>
    static std::vector<T> split_reals(const std::string& s) {
        std::vector<T> out;
        std::istringstream in(s);
        std::string tok;
        while (in >> tok) out.push_back(parse_real<T>(tok));
        return out;
    }

    const std::vector<std::pair<std::string, std::string>>& lines() const { return lines_; }

    std::string str() const {
        std::string out;
        for (const auto& [k, v] : lines_) {
            out += k;
            if (!v.empty()) {
                out += ' ';
                out += v;
            }
            out += '\n';
        }
        return out;
    }

    static Document parse(std::string_view text) {
        Document doc;
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t end = text.find('\n', pos);
            if (end == std::string_view::npos) end = text.size();
            std::string_view line = text.substr(pos, end - pos);
            pos = end + 1;
            if (line.empty() || line.front() == '#') continue;
            const std::size_t sp = line.find(' ');
            if (sp == std::string_view::npos)
                doc.add(std::string(line), "");
            else
                doc.add(std::string(line.substr(0, sp)), std::string(line.substr(sp + 1)));
        }
        return doc;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot open '" + path + "' for writing");
        out << str();
        if (!out) throw DataError("failed writing '" + path + "'");
    }

    static Document load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

private:
    std::vector<std::pair<std::string, std::string>> lines_;
};

}  // namespace cib::textio
