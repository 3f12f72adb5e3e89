#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "ssp/errors.hpp"

namespace ssp {

// --- number formatting ------------------------------------------------------

/// Shortest representation that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    if (b != e && *b == '+') ++b;
    auto r = std::from_chars(b, e, out);
    return r.ec == std::errc{} && r.ptr == e && b != e;
}

inline bool parse_int64(const std::string& s, std::int64_t& out) {
    auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size() && !s.empty();
}

inline bool parse_uint64(const std::string& s, std::uint64_t& out) {
    auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size() && !s.empty();
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

// --- INI documents ------------------------------------------------------------

struct IniEntry {
    std::string key;
    std::string value;
    int line = 0;
};

struct IniSection {
    std::string name;
    std::vector<IniEntry> entries;
    int line = 0;

    const IniEntry* find(const std::string& key) const {
        for (const auto& e : entries)
            if (e.key == key) return &e;
        return nullptr;
    }
    void set(const std::string& key, std::string value) {
        for (auto& e : entries)
            if (e.key == key) {
                e.value = std::move(value);
                return;
            }
        entries.push_back({key, std::move(value), 0});
    }
};

/// Ordered INI document. Sections and keys keep their file order; duplicates
/// are rejected at parse time.
struct IniDoc {
    std::vector<IniSection> sections;

    const IniSection* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
    IniSection& section(const std::string& name) {
        for (auto& s : sections)
            if (s.name == name) return s;
        sections.push_back({name, {}, 0});
        return sections.back();
    }
};

inline IniDoc parse_ini(const std::string& text, const std::string& source = "<ini>") {
    IniDoc doc;
    IniSection* cur = nullptr;
    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(is, raw)) {
        ++lineno;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("malformed section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) fail("empty section name");
            if (doc.find(name)) fail("duplicate section [" + name + "]");
            doc.sections.push_back({name, {}, lineno});
            cur = &doc.sections.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail("empty key");
        if (!cur) fail("key '" + key + "' outside of any section");
        if (cur->find(key)) fail("duplicate key '" + key + "' in [" + cur->name + "]");
        cur->entries.push_back({key, value, lineno});
    }
    return doc;
}

inline std::string write_ini(const IniDoc& doc) {
    std::ostringstream os;
    bool first = true;
    for (const auto& s : doc.sections) {
        if (!first) os << "\n";
        first = false;
        os << "[" << s.name << "]\n";
        for (const auto& e : s.entries) os << e.key << " = " << e.value << "\n";
    }
    return os.str();
}

/// Typed, consumption-tracking access to one INI section. finish() rejects
/// any key that no getter asked for.
class SectionReader {
public:
    SectionReader(const IniSection* sec, std::string section_name, std::string source)
        : sec_(sec), name_(std::move(section_name)), src_(std::move(source)) {}

    bool has(const std::string& key) const { return sec_ && sec_->find(key); }

    std::string str(const std::string& key, const std::string& def) { return raw(key) ? *last_ : def; }
    std::string str(const std::string& key) {
        if (!raw(key)) missing(key);
        return *last_;
    }

    double num(const std::string& key, double def) { return raw(key) ? to_double(key) : def; }
    double num(const std::string& key) {
        if (!raw(key)) missing(key);
        return to_double(key);
    }

    std::int64_t integer(const std::string& key, std::int64_t def) { return raw(key) ? to_int(key) : def; }
    std::int64_t integer(const std::string& key) {
        if (!raw(key)) missing(key);
        return to_int(key);
    }

    std::uint64_t u64(const std::string& key, std::uint64_t def) {
        if (!raw(key)) return def;
        std::uint64_t v;
        if (!parse_uint64(*last_, v)) bad(key, "a non-negative integer");
        return v;
    }
    std::uint64_t u64(const std::string& key) {
        if (!raw(key)) missing(key);
        std::uint64_t v;
        if (!parse_uint64(*last_, v)) bad(key, "a non-negative integer");
        return v;
    }

    bool boolean(const std::string& key, bool def) {
        if (!raw(key)) return def;
        if (*last_ == "true" || *last_ == "1" || *last_ == "yes") return true;
        if (*last_ == "false" || *last_ == "0" || *last_ == "no") return false;
        bad(key, "a boolean");
        return def;
    }

    std::vector<double> nums(const std::string& key, std::vector<double> def) {
        if (!raw(key)) return def;
        std::vector<double> out;
        for (const auto& part : split(*last_, ',')) {
            double v;
            if (!parse_double(part, v)) bad(key, "a comma-separated list of numbers");
            out.push_back(v);
        }
        return out;
    }

    void finish() const {
        if (!sec_) return;
        for (const auto& e : sec_->entries)
            if (!used_.count(e.key))
                throw ConfigError(src_ + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "' in [" + name_ +
                                  "]");
    }

    [[noreturn]] void bad(const std::string& key, const std::string& what) const {
        throw ConfigError(where(key) + ": '" + key + "' must be " + what + " (got '" + (last_ ? *last_ : "") + "')");
    }

private:
    bool raw(const std::string& key) {
        used_.insert(key);
        const IniEntry* e = sec_ ? sec_->find(key) : nullptr;
        last_ = e ? &e->value : nullptr;
        line_ = e ? e->line : 0;
        return e != nullptr;
    }
    double to_double(const std::string& key) {
        double v;
        if (!parse_double(*last_, v)) bad(key, "a number");
        return v;
    }
    std::int64_t to_int(const std::string& key) {
        std::int64_t v;
        if (!parse_int64(*last_, v)) bad(key, "an integer");
        return v;
    }
    std::string where(const std::string&) const {
        return src_ + (line_ > 0 ? ":" + std::to_string(line_) : std::string());
    }
    [[noreturn]] void missing(const std::string& key) const {
        throw ConfigError(src_ + ": missing required key '" + key + "' in [" + name_ + "]");
    }

    const IniSection* sec_;
    std::string name_;
    std::string src_;
    std::set<std::string> used_;
    const std::string* last_ = nullptr;
    int line_ = 0;
};

// --- little-endian binary streams -------------------------------------------------

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        std::reverse(b, b + sizeof(T));
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

class BinaryWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    template <class T>
    void put(T v) {
        v = to_little(v);
        bytes(&v, sizeof v);
    }
    void str(const std::string& s) { bytes(s.data(), s.size()); }
    void f64_array(const double* p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(p, n * sizeof(double));
        } else {
            for (std::size_t k = 0; k < n; ++k) put(p[k]);
        }
    }
    const std::vector<char>& buffer() const { return buf_; }

private:
    std::vector<char> buf_;
};

class BinaryReader {
public:
    BinaryReader(std::vector<char> data, std::string source) : d_(std::move(data)), src_(std::move(source)) {}

    void bytes(void* p, std::size_t n) {
        if (n > d_.size() - pos_) throw IoError(src_ + ": unexpected end of file");
        std::memcpy(p, d_.data() + pos_, n);
        pos_ += n;
    }
    template <class T>
    T get() {
        T v;
        bytes(&v, sizeof v);
        return to_little(v);
    }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    void f64_array(double* p, std::size_t n) {
        if (n > remaining() / sizeof(double)) throw IoError(src_ + ": unexpected end of file");
        bytes(p, n * sizeof(double));
        if constexpr (std::endian::native == std::endian::big)
            for (std::size_t k = 0; k < n; ++k) p[k] = to_little(p[k]);
    }
    std::size_t remaining() const { return d_.size() - pos_; }
    const std::string& source() const { return src_; }

private:
    std::vector<char> d_;
    std::size_t pos_ = 0;
    std::string src_;
};

// --- files ----------------------------------------------------------------------

inline std::vector<char> read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string() + " for reading");
    std::vector<char> d((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("read failed: " + p.string());
    return d;
}

inline std::string read_text(const std::filesystem::path& p) {
    const auto d = read_file(p);
    return std::string(d.begin(), d.end());
}

/// Write to a sibling temporary file and rename over the target, so readers
/// never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& p, const void* data, std::size_t n) {
    namespace fs = std::filesystem;
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
    }
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!f) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, p, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + p.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& p, const std::vector<char>& data) {
    write_file_atomic(p, data.data(), data.size());
}

inline void write_text_atomic(const std::filesystem::path& p, const std::string& s) {
    write_file_atomic(p, s.data(), s.size());
}

inline std::uint32_t crc32_of(const void* data, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    const auto* b = static_cast<const Bytef*>(data);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, b, chunk);
        b += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

inline std::uint32_t file_crc32(const std::filesystem::path& p) {
    const auto d = read_file(p);
    return crc32_of(d.data(), d.size());
}

inline std::string hex32(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

/// Common 16-byte header: 4-byte magic, u32 version, 8 reserved zero bytes.
inline void write_header(BinaryWriter& w, const char (&magic)[5], std::uint32_t version) {
    w.bytes(magic, 4);
    w.put<std::uint32_t>(version);
    w.put<std::uint64_t>(0);
}

inline std::uint32_t read_header(BinaryReader& r, const char (&magic)[5], std::uint32_t supported) {
    char m[4];
    r.bytes(m, 4);
    if (std::memcmp(m, magic, 4) != 0) throw IoError(r.source() + ": not a " + std::string(magic) + " file");
    const auto version = r.get<std::uint32_t>();
    r.get<std::uint64_t>();
    if (version != supported)
        throw IoError(r.source() + ": unsupported " + std::string(magic) + " version " + std::to_string(version));
    return version;
}

} // namespace ssp
