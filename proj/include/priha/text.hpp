// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "priha/error.hpp"

namespace priha {

using Date = std::chrono::year_month_day;
using Timestamp = std::chrono::sys_seconds;

namespace text {

// ---------------------------------------------------------------------------
// UTF-8
// ---------------------------------------------------------------------------

/// Decodes one code point starting at `pos`, advancing `pos`. Returns
/// std::nullopt on a malformed sequence (overlongs and surrogates included).
inline std::optional<char32_t> decode_utf8(std::string_view s, std::size_t& pos)
{
    const auto lead = static_cast<unsigned char>(s[pos]);
    if (lead < 0x80) {
        ++pos;
        return lead;
    }
    int extra = 0;
    char32_t cp = 0;
    char32_t min = 0;
    if ((lead & 0xE0) == 0xC0) {
        extra = 1, cp = lead & 0x1F, min = 0x80;
    } else if ((lead & 0xF0) == 0xE0) {
        extra = 2, cp = lead & 0x0F, min = 0x800;
    } else if ((lead & 0xF8) == 0xF0) {
        extra = 3, cp = lead & 0x07, min = 0x10000;
    } else {
        return std::nullopt;
    }
    if (pos + extra >= s.size()) {
        return std::nullopt;
    }
    for (int i = 1; i <= extra; ++i) {
        const auto c = static_cast<unsigned char>(s[pos + i]);
        if ((c & 0xC0) != 0x80) {
            return std::nullopt;
        }
        cp = (cp << 6) | (c & 0x3F);
    }
    if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
        return std::nullopt;
    }
    pos += extra + 1;
    return cp;
}

inline bool is_valid_utf8(std::string_view s)
{
    std::size_t pos = 0;
    while (pos < s.size()) {
        if (!decode_utf8(s, pos)) {
            return false;
        }
    }
    return true;
}

inline void append_utf8(std::string& out, char32_t cp)
{
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

/// Number of code points; invalid bytes count as one each.
inline std::size_t utf8_length(std::string_view s)
{
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos < s.size()) {
        if (!decode_utf8(s, pos)) {
            ++pos;
        }
        ++n;
    }
    return n;
}

/// Prefix of at most `max_chars` code points, never splitting a sequence.
inline std::string utf8_prefix(std::string_view s, std::size_t max_chars)
{
    std::size_t pos = 0;
    std::size_t n = 0;
    while (pos < s.size() && n < max_chars) {
        if (!decode_utf8(s, pos)) {
            ++pos;
        }
        ++n;
    }
    return std::string(s.substr(0, pos));
}

// ---------------------------------------------------------------------------
// Character classes
// ---------------------------------------------------------------------------

inline bool is_cjk(char32_t cp)
{
    return (cp >= 0x4E00 && cp <= 0x9FFF)      // unified ideographs
        || (cp >= 0x3400 && cp <= 0x4DBF)      // extension A
        || (cp >= 0x20000 && cp <= 0x2A6DF)    // extension B
        || (cp >= 0xF900 && cp <= 0xFAFF)      // compatibility ideographs
        || (cp >= 0x3040 && cp <= 0x30FF)      // kana
        || (cp >= 0xAC00 && cp <= 0xD7AF);     // hangul syllables
}

inline bool is_space(char32_t cp)
{
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v'
        || cp == 0x00A0 || cp == 0x3000 || (cp >= 0x2000 && cp <= 0x200B);
}

inline bool is_separator(char32_t cp)
{
    if (cp < 0x80) {
        return !((cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z'));
    }
    return is_space(cp)
        || (cp >= 0x00A1 && cp <= 0x00BF)      // latin-1 punctuation and symbols
        || cp == 0x00D7 || cp == 0x00F7
        || (cp >= 0x2000 && cp <= 0x206F)      // general punctuation
        || (cp >= 0x2190 && cp <= 0x2BFF)      // arrows, math, technical, shapes
        || (cp >= 0x3000 && cp <= 0x303F)      // CJK symbols and punctuation
        || (cp >= 0xFE30 && cp <= 0xFE4F)      // CJK compatibility forms
        || (cp >= 0xFF00 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20)
        || (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65)
        || (cp >= 0x1F000 && cp <= 0x1FAFF);   // emoji and pictographs
}

/// Simple case folding for Latin, Greek and Cyrillic. Other scripts are
/// returned unchanged.
inline char32_t to_lower(char32_t cp)
{
    if (cp >= 'A' && cp <= 'Z') return cp + 32;
    if (cp < 0x80) return cp;
    if ((cp >= 0x00C0 && cp <= 0x00DE) && cp != 0x00D7) return cp + 32;
    if (cp >= 0x0100 && cp <= 0x017F && cp != 0x0130 && cp != 0x0131 && cp != 0x0138 && cp != 0x0149
        && cp != 0x017F && cp != 0x0178) {
        const bool odd_upper = (cp >= 0x0139 && cp <= 0x0148) || (cp >= 0x0179 && cp <= 0x017E);
        if (odd_upper) return (cp % 2 == 1) ? cp + 1 : cp;
        return (cp % 2 == 0) ? cp + 1 : cp;
    }
    if (cp >= 0x0391 && cp <= 0x03AB && cp != 0x03A2) return cp + 32;
    if (cp >= 0x0410 && cp <= 0x042F) return cp + 32;
    if (cp >= 0x0400 && cp <= 0x040F) return cp + 80;
    if (cp >= 0xFF21 && cp <= 0xFF3A) return cp + 32;  // fullwidth latin
    return cp;
}

inline std::string lowercase(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto start = pos;
        if (auto cp = decode_utf8(s, pos)) {
            append_utf8(out, to_lower(*cp));
        } else {
            out.push_back(s[start]);
            pos = start + 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Index/query tokenizer: lowercased words split on whitespace and
/// punctuation. Runs of CJK characters are emitted as overlapping character
/// bigrams (a lone CJK character is emitted as a unigram).
inline std::vector<std::string> tokenize(std::string_view s)
{
    std::vector<std::string> tokens;
    std::string word;
    std::vector<char32_t> cjk_run;

    const auto flush_word = [&] {
        if (!word.empty()) {
            tokens.push_back(std::move(word));
            word.clear();
        }
    };
    const auto flush_cjk = [&] {
        if (cjk_run.size() == 1) {
            std::string t;
            append_utf8(t, cjk_run[0]);
            tokens.push_back(std::move(t));
        } else {
            for (std::size_t i = 0; i + 1 < cjk_run.size(); ++i) {
                std::string t;
                append_utf8(t, cjk_run[i]);
                append_utf8(t, cjk_run[i + 1]);
                tokens.push_back(std::move(t));
            }
        }
        cjk_run.clear();
    };

    std::size_t pos = 0;
    while (pos < s.size()) {
        auto cp = decode_utf8(s, pos);
        if (!cp) {
            ++pos;
            flush_word();
            flush_cjk();
            continue;
        }
        if (is_cjk(*cp)) {
            flush_word();
            cjk_run.push_back(*cp);
        } else if (is_separator(*cp)) {
            flush_word();
            flush_cjk();
        } else {
            flush_cjk();
            append_utf8(word, to_lower(*cp));
        }
    }
    flush_word();
    flush_cjk();
    return tokens;
}

/// Byte span of one whitespace-delimited token within its source string.
struct TokenSpan {
    std::size_t begin;
    std::size_t end;
};

/// Whitespace-delimited units with their byte offsets. Used for chunk sizing.
inline std::vector<TokenSpan> whitespace_spans(std::string_view s)
{
    constexpr auto none = std::string_view::npos;
    std::vector<TokenSpan> spans;
    std::size_t pos = 0;
    std::size_t start = none;
    while (pos < s.size()) {
        const auto here = pos;
        auto cp = decode_utf8(s, pos);
        const bool space = cp && is_space(*cp);
        if (!cp) {
            pos = here + 1;
        }
        if (space) {
            if (start != none) {
                spans.push_back({start, here});
                start = none;
            }
        } else if (start == none) {
            start = here;
        }
    }
    if (start != none) {
        spans.push_back({start, s.size()});
    }
    return spans;
}

inline std::size_t word_count(std::string_view s) { return whitespace_spans(s).size(); }

/// Collapses all whitespace runs to one ASCII space and trims both ends.
inline std::string normalize_whitespace(std::string_view s)
{
    std::string out;
    for (const auto& span : whitespace_spans(s)) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out.append(s.substr(span.begin, span.end - span.begin));
    }
    return out;
}

inline std::string_view trim(std::string_view s)
{
    const auto ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline bool contains_cjk(std::string_view s)
{
    std::size_t pos = 0;
    while (pos < s.size()) {
        auto cp = decode_utf8(s, pos);
        if (!cp) {
            ++pos;
        } else if (is_cjk(*cp)) {
            return true;
        }
    }
    return false;
}

/// Lowercase ASCII slug: alphanumerics kept, every other run becomes '-'.
/// Non-ASCII bytes are kept verbatim so CJK queries still get distinct slugs.
inline std::string slugify(std::string_view s)
{
    std::string lower = lowercase(trim(s));
    std::string out;
    bool dash = false;
    for (const char ch : lower) {
        const auto c = static_cast<unsigned char>(ch);
        const bool keep = c >= 0x80 || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
        if (keep) {
            if (dash && !out.empty()) {
                out.push_back('-');
            }
            dash = false;
            out.push_back(ch);
        } else {
            dash = true;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL)
{
    std::uint64_t h = seed;
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------
// Dates
// ---------------------------------------------------------------------------

/// Strict `YYYY-MM-DD` parser. A trailing time component (`T...`) is
/// accepted and ignored so full ISO-8601 timestamps also parse.
inline std::optional<Date> parse_date(std::string_view s)
{
    s = trim(s);
    if (s.size() > 10 && (s[10] == 'T' || s[10] == ' ')) {
        s = s.substr(0, 10);
    }
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
        return std::nullopt;
    }
    int parts[3] = {0, 0, 0};
    const std::size_t offsets[3] = {0, 5, 8};
    const std::size_t widths[3] = {4, 2, 2};
    for (int i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < widths[i]; ++j) {
            const char c = s[offsets[i] + j];
            if (c < '0' || c > '9') {
                return std::nullopt;
            }
            parts[i] = parts[i] * 10 + (c - '0');
        }
    }
    const Date d{std::chrono::year{parts[0]}, std::chrono::month{static_cast<unsigned>(parts[1])},
                 std::chrono::day{static_cast<unsigned>(parts[2])}};
    if (!d.ok()) {
        return std::nullopt;
    }
    return d;
}

inline std::string format_date(const Date& d)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

inline std::string format_timestamp(Timestamp t)
{
    const auto day = std::chrono::floor<std::chrono::days>(t);
    const std::chrono::hh_mm_ss hms{t - day};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", format_date(Date{day}).c_str(),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return buf;
}

/// Parses `YYYY-MM-DDTHH:MM:SSZ` (or a bare date, meaning midnight UTC).
inline std::optional<Timestamp> parse_timestamp(std::string_view s)
{
    s = trim(s);
    auto date = parse_date(s);
    if (!date) {
        return std::nullopt;
    }
    Timestamp t = std::chrono::sys_days{*date};
    if (s.size() == 10) {
        return t;
    }
    int h = 0;
    int m = 0;
    int sec = 0;
    if (std::sscanf(std::string(s.substr(11)).c_str(), "%2d:%2d:%2d", &h, &m, &sec) != 3 || h > 23
        || m > 59 || sec > 60) {
        return std::nullopt;
    }
    return t + std::chrono::hours{h} + std::chrono::minutes{m} + std::chrono::seconds{sec};
}

}  // namespace text
}  // namespace priha
